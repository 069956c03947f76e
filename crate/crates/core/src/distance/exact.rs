//! Exact GED by best-first search over partial node mappings.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{EditCostScheme, GedError};
use crate::graph::{NodeLabel, QueryGraph};
use crate::Scalar;

struct Dense {
    labels: Vec<NodeLabel>,
    adj: Vec<bool>,
    edges: Vec<(usize, usize)>,
    n: usize,
}

impl Dense {
    fn new(g: &QueryGraph) -> Self {
        let n = g.node_count();
        let mut adj = vec![false; n * n];
        for &(a, b) in g.edges() {
            adj[a * n + b] = true;
        }
        Self {
            labels: g.labels().to_vec(),
            adj,
            edges: g.edges().to_vec(),
            n,
        }
    }

    fn edge(&self, a: usize, b: usize) -> bool {
        self.adj[a * self.n + b]
    }
}

#[derive(Clone)]
struct State<F> {
    f: F,
    g: F,
    mapping: Vec<Option<usize>>,
    used: u64,
    complete: bool,
}

impl<F: Scalar> PartialEq for State<F> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<F: Scalar> Eq for State<F> {}
impl<F: Scalar> PartialOrd for State<F> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<F: Scalar> Ord for State<F> {
    // Max-heap: smallest f first, then completed states, then deeper ones.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .cmp_total(&self.f)
            .then(self.complete.cmp(&other.complete))
            .then(self.mapping.len().cmp(&other.mapping.len()))
    }
}

/// Minimum edit path cost between `a` and `b`.
///
/// Fails with [`GedError::SizeExceeded`] when either graph has more than
/// `node_limit` nodes (at most 63).
pub fn exact_ged<F: Scalar>(
    a: &QueryGraph,
    b: &QueryGraph,
    costs: &EditCostScheme<F>,
    node_limit: usize,
) -> Result<F, GedError> {
    costs.validate()?;
    let limit = node_limit.min(63);
    for g in [a, b] {
        if g.node_count() > limit {
            return Err(GedError::SizeExceeded {
                nodes: g.node_count(),
                limit,
            });
        }
    }
    let a = Dense::new(a);
    let b = Dense::new(b);
    let c = costs;

    let mut heap = BinaryHeap::new();
    let start_h = heuristic(&a, &b, 0, 0, c);
    heap.push(State {
        f: start_h,
        g: F::zero(),
        mapping: Vec::new(),
        used: 0,
        complete: false,
    });

    while let Some(state) = heap.pop() {
        if state.complete {
            return Ok(state.g);
        }
        let i = state.mapping.len();
        if i == a.n {
            let g = state.g + completion_cost(&b, state.used, c);
            heap.push(State {
                f: g,
                g,
                mapping: state.mapping,
                used: state.used,
                complete: true,
            });
            continue;
        }
        let mut options: Vec<Option<usize>> = (0..b.n)
            .filter(|j| state.used & (1 << j) == 0)
            .map(Some)
            .collect();
        options.push(None);
        for target in options {
            let step = step_cost(&a, &b, &state.mapping, i, target, c);
            let used = match target {
                Some(j) => state.used | (1 << j),
                None => state.used,
            };
            let g = state.g + step;
            let h = heuristic(&a, &b, i + 1, used, c);
            let mut mapping = state.mapping.clone();
            mapping.push(target);
            heap.push(State {
                f: g + h,
                g,
                mapping,
                used,
                complete: false,
            });
        }
    }
    unreachable!("search space always contains a complete mapping")
}

/// Cost of mapping a-node `i` to `target`, including edges to earlier nodes.
fn step_cost<F: Scalar>(
    a: &Dense,
    b: &Dense,
    mapping: &[Option<usize>],
    i: usize,
    target: Option<usize>,
    c: &EditCostScheme<F>,
) -> F {
    let mut cost = match target {
        Some(j) => c.substitute(a.labels[i], b.labels[j]),
        None => c.node_delete,
    };
    for (k, mk) in mapping.iter().enumerate() {
        for (ea, eb) in [
            (a.edge(i, k), target.zip(*mk).is_some_and(|(x, y)| b.edge(x, y))),
            (a.edge(k, i), target.zip(*mk).is_some_and(|(x, y)| b.edge(y, x))),
        ] {
            match (ea, eb) {
                (true, false) => cost += c.edge_delete,
                (false, true) => cost += c.edge_insert,
                _ => {}
            }
        }
    }
    cost
}

/// Insert every unused b-node and every b-edge touching one.
fn completion_cost<F: Scalar>(b: &Dense, used: u64, c: &EditCostScheme<F>) -> F {
    let free = |j: usize| used & (1 << j) == 0;
    let nodes = (0..b.n).filter(|&j| free(j)).count();
    let edges = b.edges.iter().filter(|&&(x, y)| free(x) || free(y)).count();
    c.node_insert * F::of_usize(nodes) + c.edge_insert * F::of_usize(edges)
}

/// Admissible lower bound on the cost of finishing a partial mapping where
/// a-nodes `depth..` are unprocessed and `used` marks taken b-nodes.
fn heuristic<F: Scalar>(a: &Dense, b: &Dense, depth: usize, used: u64, c: &EditCostScheme<F>) -> F {
    let free = |j: usize| used & (1 << j) == 0;
    let mut count_a = [0usize; NodeLabel::ALL.len()];
    let mut count_b = [0usize; NodeLabel::ALL.len()];
    for &l in &a.labels[depth..] {
        count_a[l as usize] += 1;
    }
    let mut nb = 0;
    for j in (0..b.n).filter(|&j| free(j)) {
        count_b[b.labels[j] as usize] += 1;
        nb += 1;
    }
    let na = a.n - depth;
    let common: usize = count_a.iter().zip(&count_b).map(|(x, y)| x.min(y)).sum();
    let pairs = na.min(nb);
    let relabel = c.node_substitute.min(c.node_delete + c.node_insert);
    let node_lb = relabel * F::of_usize(pairs - common)
        + c.node_substitute_same * F::of_usize(common)
        + c.node_delete * F::of_usize(na - pairs)
        + c.node_insert * F::of_usize(nb - pairs);

    let ea = a.edges.iter().filter(|&&(x, y)| x >= depth || y >= depth).count();
    let eb = b.edges.iter().filter(|&&(x, y)| free(x) || free(y)).count();
    let edge_lb = if ea >= eb {
        c.edge_delete * F::of_usize(ea - eb)
    } else {
        c.edge_insert * F::of_usize(eb - ea)
    };
    node_lb + edge_lb
}
