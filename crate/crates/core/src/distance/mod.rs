//! Graph edit distance between query graphs.
//!
//! [`approx_ged`] is the production path: a bipartite node assignment solved
//! optimally, followed by the exact cost of the edit path that assignment
//! implies. The value is therefore always an upper bound on the true
//! distance. [`exact_ged`] is a best-first search used as a test oracle on
//! small graphs.

mod assignment;
mod exact;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::graph::{NodeLabel, QueryGraph};
use crate::Scalar;

pub use assignment::solve as solve_assignment;
pub use exact::exact_ged;

/// Default node limit for [`exact_ged`].
pub const DEFAULT_EXACT_NODE_LIMIT: usize = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GedError {
    #[error("graph has {nodes} nodes, exact search is limited to {limit}")]
    SizeExceeded { nodes: usize, limit: usize },
    #[error("invalid cost scheme: {0}")]
    InvalidCosts(String),
}

/// Edit operation costs. Unit costs by default.
///
/// `neighbour_mismatch` only shapes the assignment step of [`approx_ged`]:
/// matching two nodes whose neighbour labels differ costs this much per
/// mismatched neighbour pair (halved, as each edge has two ends). Zero
/// leaves a degree-difference-only local term. It never enters the reported
/// edit path cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EditCostScheme<F> {
    pub node_insert: F,
    pub node_delete: F,
    pub node_substitute: F,
    pub node_substitute_same: F,
    pub edge_insert: F,
    pub edge_delete: F,
    pub neighbour_mismatch: F,
}

impl<F: Scalar> Default for EditCostScheme<F> {
    fn default() -> Self {
        Self {
            node_insert: F::one(),
            node_delete: F::one(),
            node_substitute: F::one(),
            node_substitute_same: F::zero(),
            edge_insert: F::one(),
            edge_delete: F::one(),
            neighbour_mismatch: F::one(),
        }
    }
}

impl<F: Scalar> EditCostScheme<F> {
    pub fn validate(&self) -> Result<(), GedError> {
        let all = [
            self.node_insert,
            self.node_delete,
            self.node_substitute,
            self.node_substitute_same,
            self.edge_insert,
            self.edge_delete,
            self.neighbour_mismatch,
        ];
        if all.iter().any(|c| !(c.is_finite() && *c >= F::zero())) {
            return Err(GedError::InvalidCosts("costs must be finite and >= 0".into()));
        }
        if self.node_substitute > self.node_delete + self.node_insert {
            return Err(GedError::InvalidCosts(
                "substitution must not cost more than delete + insert".into(),
            ));
        }
        if self.node_substitute_same > self.node_substitute {
            return Err(GedError::InvalidCosts(
                "same-label substitution must not cost more than relabelling".into(),
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn substitute(&self, a: NodeLabel, b: NodeLabel) -> F {
        if a == b {
            self.node_substitute_same
        } else {
            self.node_substitute
        }
    }
}

/// A graph in canonical node order with the lookups the distance functions
/// need. Prepare once, compare many times.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    graph: QueryGraph,
    signature: String,
    forest: bool,
    degrees: Vec<usize>,
    neighbour_labels: Vec<[u16; NodeLabel::ALL.len()]>,
    adjacency: Vec<bool>,
}

impl PreparedGraph {
    pub fn new(graph: &QueryGraph) -> Self {
        let graph = graph.canonical_or_self();
        let n = graph.node_count();
        let mut adjacency = vec![false; n * n];
        let mut indeg = vec![0usize; n];
        let mut neighbour_labels = vec![[0u16; NodeLabel::ALL.len()]; n];
        for &(a, b) in graph.edges() {
            adjacency[a * n + b] = true;
            indeg[b] += 1;
            neighbour_labels[a][graph.label(b) as usize] += 1;
            neighbour_labels[b][graph.label(a) as usize] += 1;
        }
        Self {
            neighbour_labels,
            signature: graph.signature(),
            forest: indeg.iter().all(|&d| d <= 1),
            degrees: graph.degrees(),
            adjacency,
            graph,
        }
    }

    pub fn graph(&self) -> &QueryGraph {
        &self.graph
    }

    pub fn signature(&self) -> &str {
        &self.signature
    }

    #[inline]
    fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a * self.graph.node_count() + b]
    }
}

impl QueryGraph {
    fn canonical_or_self(&self) -> QueryGraph {
        let n = self.node_count();
        let mut indeg = vec![0usize; n];
        for &(_, b) in self.edges() {
            indeg[b] += 1;
        }
        if indeg.iter().all(|&d| d <= 1) {
            self.canonical()
        } else {
            self.clone()
        }
    }
}

/// Shared, thread-safe count of distance evaluations.
#[derive(Debug, Clone, Default)]
pub struct GedCounter(Arc<AtomicU64>);

impl GedCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.0.store(0, Ordering::Relaxed);
    }

    fn bump(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }
}

/// Approximate GED with a fixed cost scheme and an evaluation counter.
#[derive(Debug, Clone)]
pub struct GedCalculator<F> {
    costs: EditCostScheme<F>,
    counter: GedCounter,
}

impl<F: Scalar> Default for GedCalculator<F> {
    fn default() -> Self {
        Self {
            costs: EditCostScheme::default(),
            counter: GedCounter::new(),
        }
    }
}

impl<F: Scalar> GedCalculator<F> {
    pub fn new(costs: EditCostScheme<F>) -> Result<Self, GedError> {
        costs.validate()?;
        Ok(Self {
            costs,
            counter: GedCounter::new(),
        })
    }

    pub fn with_counter(mut self, counter: GedCounter) -> Self {
        self.counter = counter;
        self
    }

    pub fn costs(&self) -> &EditCostScheme<F> {
        &self.costs
    }

    pub fn counter(&self) -> &GedCounter {
        &self.counter
    }

    pub fn distance(&self, a: &PreparedGraph, b: &PreparedGraph) -> F {
        self.counter.bump();
        approx_prepared(a, b, &self.costs)
    }
}

/// Assignment-based GED upper bound.
pub fn approx_ged<F: Scalar>(a: &QueryGraph, b: &QueryGraph, costs: &EditCostScheme<F>) -> F {
    approx_prepared(&PreparedGraph::new(a), &PreparedGraph::new(b), costs)
}

pub fn approx_prepared<F: Scalar>(
    a: &PreparedGraph,
    b: &PreparedGraph,
    costs: &EditCostScheme<F>,
) -> F {
    if a.forest && b.forest && a.signature == b.signature {
        // Isomorphic trees: the identity mapping in canonical order is free.
        return induced_cost(a, b, &identity_mapping(a.graph.node_count()), costs);
    }
    // Always solve in one fixed direction so that d(a, b) == d(b, a).
    let (x, y) = if (a.signature.as_str(), a.graph.node_count())
        <= (b.signature.as_str(), b.graph.node_count())
    {
        (a, b)
    } else {
        (b, a)
    };
    let mapping = assign(x, y, costs);
    induced_cost(x, y, &mapping, costs)
}

fn identity_mapping(n: usize) -> Vec<Option<usize>> {
    (0..n).map(Some).collect()
}

fn half<F: Scalar>(x: F) -> F {
    x / (F::one() + F::one())
}

/// Node mapping of `a` onto `b` (`None` = deleted) from the optimal
/// assignment on the square deletion/insertion-padded cost matrix.
fn assign<F: Scalar>(a: &PreparedGraph, b: &PreparedGraph, c: &EditCostScheme<F>) -> Vec<Option<usize>> {
    let n = a.graph.node_count();
    let m = b.graph.node_count();
    let size = n + m;
    if n == 0 {
        return Vec::new();
    }
    let deg_term = |da: usize, db: usize| -> F {
        if da >= db {
            half(F::of_usize(da - db) * c.edge_delete)
        } else {
            half(F::of_usize(db - da) * c.edge_insert)
        }
    };
    let del = |i: usize| c.node_delete + half(F::of_usize(a.degrees[i]) * c.edge_delete);
    let ins = |j: usize| c.node_insert + half(F::of_usize(b.degrees[j]) * c.edge_insert);

    let mut finite_max = F::zero();
    let mut matrix = vec![F::zero(); size * size];
    for i in 0..n {
        for j in 0..m {
            let mut v = c.substitute(a.graph.label(i), b.graph.label(j))
                + deg_term(a.degrees[i], b.degrees[j]);
            if c.neighbour_mismatch > F::zero() {
                let common: usize = a.neighbour_labels[i]
                    .iter()
                    .zip(&b.neighbour_labels[j])
                    .map(|(x, y)| (*x.min(y)) as usize)
                    .sum();
                let pairs = a.degrees[i].min(b.degrees[j]);
                v += half(F::of_usize(pairs - common) * c.neighbour_mismatch);
            }
            matrix[i * size + j] = v;
            finite_max = finite_max.max(v);
        }
    }
    for i in 0..n {
        finite_max = finite_max.max(del(i));
    }
    for j in 0..m {
        finite_max = finite_max.max(ins(j));
    }
    // Any assignment avoiding forbidden cells costs at most size * finite_max.
    let forbidden = (F::of_usize(size) + F::one()) * (finite_max + F::one());
    for i in 0..n {
        for k in 0..n {
            matrix[i * size + m + k] = if i == k { del(i) } else { forbidden };
        }
    }
    for k in 0..m {
        for j in 0..m {
            matrix[(n + k) * size + j] = if k == j { ins(j) } else { forbidden };
        }
    }
    let assignment = solve_assignment(&matrix, size);
    (0..n)
        .map(|i| {
            let j = assignment[i];
            (j < m).then_some(j)
        })
        .collect()
}

/// Exact cost of the edit path implied by a node mapping.
fn induced_cost<F: Scalar>(
    a: &PreparedGraph,
    b: &PreparedGraph,
    mapping: &[Option<usize>],
    c: &EditCostScheme<F>,
) -> F {
    let m = b.graph.node_count();
    let mut total = F::zero();
    let mut covered = vec![false; m];
    for (i, target) in mapping.iter().enumerate() {
        match target {
            Some(j) => {
                covered[*j] = true;
                total += c.substitute(a.graph.label(i), b.graph.label(*j));
            }
            None => total += c.node_delete,
        }
    }
    total += c.node_insert * F::of_usize(covered.iter().filter(|x| !**x).count());

    let mut kept = 0usize;
    for &(u, v) in a.graph.edges() {
        match (mapping[u], mapping[v]) {
            (Some(x), Some(y)) if b.has_edge(x, y) => kept += 1,
            _ => total += c.edge_delete,
        }
    }
    total += c.edge_insert * F::of_usize(b.graph.edge_count() - kept);
    total
}
