//! Structural graph of a query's pattern tree.
//!
//! Every triple pattern becomes a `CONJ` hub with three leaves labelled by
//! position and boundness. Nested `OPTIONAL`, `UNION` and plain groups get a
//! node of their own; the top-level group is the `ROOT` node itself. Concrete
//! IRIs and literals are dropped, filters contribute nothing.
//!
//! The result is always a tree rooted at node 0, which makes isomorphism a
//! matter of comparing canonical signatures.

use std::fmt;
use std::str::FromStr;

use crate::query::{GroupElement, GroupKind, ParsedQuery, PatternGroup, TriplePattern};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeLabel {
    Root,
    Group,
    Optional,
    Union,
    Conj,
    SVar,
    SBound,
    PVar,
    PBound,
    OVar,
    OBound,
}

impl NodeLabel {
    pub const ALL: [NodeLabel; 11] = [
        NodeLabel::Root,
        NodeLabel::Group,
        NodeLabel::Optional,
        NodeLabel::Union,
        NodeLabel::Conj,
        NodeLabel::SVar,
        NodeLabel::SBound,
        NodeLabel::PVar,
        NodeLabel::PBound,
        NodeLabel::OVar,
        NodeLabel::OBound,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeLabel::Root => "ROOT",
            NodeLabel::Group => "GROUP",
            NodeLabel::Optional => "OPTIONAL",
            NodeLabel::Union => "UNION",
            NodeLabel::Conj => "CONJ",
            NodeLabel::SVar => "S_VAR",
            NodeLabel::SBound => "S_BOUND",
            NodeLabel::PVar => "P_VAR",
            NodeLabel::PBound => "P_BOUND",
            NodeLabel::OVar => "O_VAR",
            NodeLabel::OBound => "O_BOUND",
        }
    }

    pub fn is_leaf(self) -> bool {
        matches!(
            self,
            NodeLabel::SVar
                | NodeLabel::SBound
                | NodeLabel::PVar
                | NodeLabel::PBound
                | NodeLabel::OVar
                | NodeLabel::OBound
        )
    }
}

impl fmt::Display for NodeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NodeLabel {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NodeLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| GraphError::Format(format!("unknown node label '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("malformed graph text: {0}")]
    Format(String),
    #[error("invalid query graph: {0}")]
    Invariant(String),
}

/// Labelled directed graph; node ids are indices into `labels`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QueryGraph {
    labels: Vec<NodeLabel>,
    edges: Vec<(usize, usize)>,
}

impl QueryGraph {
    /// Graph with no nodes at all. Not a valid query graph; used as the
    /// neutral element in distance computations.
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_parts(labels: Vec<NodeLabel>, edges: Vec<(usize, usize)>) -> Self {
        Self { labels, edges }
    }

    pub fn from_query(q: &ParsedQuery) -> Self {
        Self::from_pattern_tree(&q.root)
    }

    pub fn from_pattern_tree(root: &PatternGroup) -> Self {
        let mut g = QueryGraph::default();
        let root_id = g.add(NodeLabel::Root, None);
        g.add_elements(root, root_id);
        g
    }

    fn add(&mut self, label: NodeLabel, parent: Option<usize>) -> usize {
        let id = self.labels.len();
        self.labels.push(label);
        if let Some(p) = parent {
            self.edges.push((p, id));
        }
        id
    }

    fn add_elements(&mut self, group: &PatternGroup, parent: usize) {
        for element in &group.elements {
            match element {
                GroupElement::Triple(t) => self.add_pattern(t, parent),
                GroupElement::Group(child) => self.add_group(child, parent),
                GroupElement::Filter(_) => {}
            }
        }
    }

    fn add_group(&mut self, group: &PatternGroup, parent: usize) {
        match group.kind {
            GroupKind::Group => {
                let id = self.add(NodeLabel::Group, Some(parent));
                self.add_elements(group, id);
            }
            GroupKind::Optional => {
                let id = self.add(NodeLabel::Optional, Some(parent));
                self.add_elements(group, id);
            }
            GroupKind::UnionBranches => {
                let id = self.add(NodeLabel::Union, Some(parent));
                for branch in group.children() {
                    let b = self.add(NodeLabel::Group, Some(id));
                    self.add_elements(branch, b);
                }
            }
        }
    }

    fn add_pattern(&mut self, t: &TriplePattern, parent: usize) {
        let conj = self.add(NodeLabel::Conj, Some(parent));
        let pick = |var: bool, v, b| if var { v } else { b };
        self.add(
            pick(t.subject.is_var(), NodeLabel::SVar, NodeLabel::SBound),
            Some(conj),
        );
        self.add(
            pick(t.predicate.is_var(), NodeLabel::PVar, NodeLabel::PBound),
            Some(conj),
        );
        self.add(
            pick(t.object.is_var(), NodeLabel::OVar, NodeLabel::OBound),
            Some(conj),
        );
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn labels(&self) -> &[NodeLabel] {
        &self.labels
    }

    pub fn label(&self, id: usize) -> NodeLabel {
        self.labels[id]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Outgoing neighbours per node, in edge order.
    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.labels.len()];
        for &(from, to) in &self.edges {
            out[from].push(to);
        }
        out
    }

    /// Undirected degree per node.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.labels.len()];
        for &(from, to) in &self.edges {
            deg[from] += 1;
            deg[to] += 1;
        }
        deg
    }

    fn roots(&self) -> Vec<usize> {
        let mut indeg = vec![0usize; self.labels.len()];
        for &(_, to) in &self.edges {
            indeg[to] += 1;
        }
        (0..self.labels.len()).filter(|&i| indeg[i] == 0).collect()
    }

    /// Canonical signature: equal iff the graphs are label-preserving
    /// isomorphic (for graphs that satisfy [`QueryGraph::validate`]).
    pub fn signature(&self) -> String {
        let children = self.children();
        let mut roots = self.roots();
        let mut sigs: Vec<String> = roots
            .drain(..)
            .map(|r| subtree_signature(r, &self.labels, &children))
            .collect();
        sigs.sort();
        sigs.join(";")
    }

    /// Same graph with nodes renumbered in pre-order, children visited in
    /// (label, subtree signature) order. Isomorphic inputs produce identical
    /// outputs.
    pub fn canonical(&self) -> QueryGraph {
        let children = self.children();
        let mut roots = self.roots();
        let sig = |n: usize| subtree_signature(n, &self.labels, &children);
        roots.sort_by_cached_key(|&r| sig(r));
        let mut out = QueryGraph::default();
        for r in roots {
            canonical_visit(r, None, self, &children, &mut out);
        }
        out
    }

    /// Checks the structural invariants of graphs produced by
    /// [`QueryGraph::from_query`].
    pub fn validate(&self) -> Result<(), GraphError> {
        let bad = |m: String| Err(GraphError::Invariant(m));
        let n = self.labels.len();
        for &(a, b) in &self.edges {
            if a >= n || b >= n {
                return bad(format!("edge ({a},{b}) out of range"));
            }
        }
        let roots: Vec<usize> = (0..n).filter(|&i| self.labels[i] == NodeLabel::Root).collect();
        if roots.len() != 1 {
            return bad(format!("expected exactly one ROOT, found {}", roots.len()));
        }
        let mut indeg = vec![0usize; n];
        for &(_, to) in &self.edges {
            indeg[to] += 1;
        }
        if indeg[roots[0]] != 0 {
            return bad("ROOT has incoming edges".into());
        }
        for (i, &d) in indeg.iter().enumerate() {
            if i != roots[0] && d != 1 {
                return bad(format!("node {i} has in-degree {d}"));
            }
        }
        let children = self.children();
        for (i, kids) in children.iter().enumerate() {
            let label = self.labels[i];
            if label.is_leaf() && !kids.is_empty() {
                return bad(format!("leaf node {i} has children"));
            }
            if label == NodeLabel::Conj {
                let mut got: Vec<char> = kids
                    .iter()
                    .map(|&k| match self.labels[k] {
                        NodeLabel::SVar | NodeLabel::SBound => 's',
                        NodeLabel::PVar | NodeLabel::PBound => 'p',
                        NodeLabel::OVar | NodeLabel::OBound => 'o',
                        _ => '?',
                    })
                    .collect();
                got.sort_unstable();
                if got != ['o', 'p', 's'] {
                    return bad(format!("CONJ node {i} must have one S, P and O child"));
                }
            }
        }
        // n-1 edges, all nodes but the root with in-degree 1: reachability
        // from the root makes it a tree.
        let mut seen = vec![false; n];
        let mut stack = vec![roots[0]];
        while let Some(v) = stack.pop() {
            if std::mem::replace(&mut seen[v], true) {
                return bad("cycle detected".into());
            }
            stack.extend(&children[v]);
        }
        if seen.iter().any(|s| !s) {
            return bad("graph is not connected".into());
        }
        Ok(())
    }

    /// Line-based text form: `node <id> <LABEL>` and `edge <from> <to>`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# querygraph v1\n");
        for (i, l) in self.labels.iter().enumerate() {
            out.push_str(&format!("node {i} {l}\n"));
        }
        for (a, b) in &self.edges {
            out.push_str(&format!("edge {a} {b}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<QueryGraph, GraphError> {
        let mut labels = Vec::new();
        let mut edges = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fmt_err = |m: &str| GraphError::Format(format!("line {}: {m}", lineno + 1));
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                ["node", id, label] => {
                    let id: usize = id.parse().map_err(|_| fmt_err("bad node id"))?;
                    if id != labels.len() {
                        return Err(fmt_err("node ids must be consecutive from 0"));
                    }
                    labels.push(label.parse()?);
                }
                ["edge", a, b] => {
                    let a: usize = a.parse().map_err(|_| fmt_err("bad edge source"))?;
                    let b: usize = b.parse().map_err(|_| fmt_err("bad edge target"))?;
                    edges.push((a, b));
                }
                _ => return Err(fmt_err("expected 'node <id> <label>' or 'edge <a> <b>'")),
            }
        }
        let g = QueryGraph { labels, edges };
        if let Some(&(a, b)) = g.edges.iter().find(|&&(a, b)| a >= g.labels.len() || b >= g.labels.len()) {
            return Err(GraphError::Format(format!("edge ({a},{b}) references unknown node")));
        }
        Ok(g)
    }
}

/// Label-preserving isomorphism test for tree-shaped query graphs.
pub fn graph_equals(a: &QueryGraph, b: &QueryGraph) -> bool {
    a.node_count() == b.node_count()
        && a.edge_count() == b.edge_count()
        && a.signature() == b.signature()
}

fn subtree_signature(node: usize, labels: &[NodeLabel], children: &[Vec<usize>]) -> String {
    let mut kids: Vec<String> = children[node]
        .iter()
        .map(|&c| subtree_signature(c, labels, children))
        .collect();
    if kids.is_empty() {
        return labels[node].as_str().to_string();
    }
    kids.sort();
    format!("{}({})", labels[node], kids.join(","))
}

fn canonical_visit(
    node: usize,
    parent: Option<usize>,
    g: &QueryGraph,
    children: &[Vec<usize>],
    out: &mut QueryGraph,
) {
    let id = out.add(g.labels[node], parent);
    let mut kids: Vec<(String, usize)> = children[node]
        .iter()
        .map(|&c| (subtree_signature(c, &g.labels, children), c))
        .collect();
    kids.sort();
    for (_, c) in kids {
        canonical_visit(c, Some(id), g, children, out);
    }
}
