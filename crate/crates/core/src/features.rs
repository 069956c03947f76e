//! Distance-vector embeddings of query graphs.
//!
//! A [`TemplateSet`] maps a graph to the vector of approximate edit distances
//! to each template graph, in template order. A [`ClusterModel`] does the same
//! against k-medoids of a training set and serves as the baseline embedding.
//! Both implement [`FeatureSpace`], which is what the suggestion model uses.

use std::fmt;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::distance::{GedCalculator, PreparedGraph};
use crate::graph::{GraphError, QueryGraph};
use crate::query::{parse, ParseError};
use crate::Scalar;

const BUNDLED_TEMPLATES: &str = include_str!("../templates/default.sparql");

/// Upper bound on swap-phase iterations in [`ClusterModel::build`].
pub const MAX_SWAP_ITERATIONS: usize = 50;

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("template set is empty")]
    EmptyTemplateSet,
    #[error("template {index} ({name}) does not parse: {source}")]
    TemplateParse {
        index: usize,
        name: String,
        #[source]
        source: ParseError,
    },
    #[error("template {index} ({name}) has an invalid graph: {source}")]
    TemplateGraph {
        index: usize,
        name: String,
        #[source]
        source: GraphError,
    },
    #[error("cannot read template file: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid cluster count {k} for {n} training queries")]
    InvalidK { k: usize, n: usize },
}

/// A fixed-length, non-negative embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector<F> {
    values: Vec<F>,
}

impl<F: Scalar> FeatureVector<F> {
    pub fn new(values: Vec<F>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn into_values(self) -> Vec<F> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn squared_distance(&self, other: &Self) -> F {
        squared_distance(&self.values, &other.values)
    }
}

pub(crate) fn squared_distance<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| {
        let d = x - y;
        acc + d * d
    })
}

/// Anything that embeds a query graph into a fixed number of dimensions.
pub trait FeatureSpace {
    fn dimension(&self) -> usize;

    /// Identifies the reference graphs; vectors from spaces with different
    /// versions are not comparable.
    fn version(&self) -> &str;

    fn reference_graphs(&self) -> Box<dyn Iterator<Item = &PreparedGraph> + '_>;

    fn featurize_prepared<F: Scalar>(
        &self,
        g: &PreparedGraph,
        calc: &GedCalculator<F>,
    ) -> FeatureVector<F> {
        FeatureVector::new(self.reference_graphs().map(|r| calc.distance(g, r)).collect())
    }

    fn featurize<F: Scalar>(&self, g: &QueryGraph, calc: &GedCalculator<F>) -> FeatureVector<F> {
        self.featurize_prepared(&PreparedGraph::new(g), calc)
    }
}

#[derive(Debug, Clone)]
pub struct Template {
    pub name: String,
    pub query_text: String,
    graph: QueryGraph,
    prepared: PreparedGraph,
}

impl Template {
    pub fn graph(&self) -> &QueryGraph {
        &self.graph
    }
}

/// Ordered reference queries. Dimension `i` of every vector refers to
/// template `i`.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: Vec<Template>,
    version: String,
}

impl TemplateSet {
    /// The 18 templates shipped with the crate, version `default-v1`.
    pub fn bundled() -> Self {
        Self::from_text(BUNDLED_TEMPLATES).expect("bundled templates are valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FeatureError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Parses a template file: queries separated by lines containing only
    /// `---`, each optionally preceded by `# name: ...`. A `# version: ...`
    /// line pins the version; otherwise it is derived from the content hash.
    pub fn from_text(text: &str) -> Result<Self, FeatureError> {
        let mut version = None;
        let mut entries = Vec::new();
        let mut chunk = String::new();
        let mut name = None;
        let mut flush = |chunk: &mut String, name: &mut Option<String>| {
            let has_query = chunk.lines().any(|l| {
                let l = l.trim();
                !l.is_empty() && !l.starts_with('#')
            });
            if has_query {
                let idx = entries.len();
                let n = name.take().unwrap_or_else(|| format!("template-{}", idx + 1));
                entries.push((n, chunk.trim().to_string()));
            }
            chunk.clear();
            *name = None;
        };
        for line in text.lines() {
            let trimmed = line.trim();
            if trimmed == "---" {
                flush(&mut chunk, &mut name);
            } else if let Some(v) = directive(trimmed, "version") {
                version.get_or_insert_with(|| v.to_string());
            } else if let Some(n) = directive(trimmed, "name") {
                name = Some(n.to_string());
            } else {
                chunk.push_str(line);
                chunk.push('\n');
            }
        }
        flush(&mut chunk, &mut name);
        let version = version.unwrap_or_else(|| content_version(text));
        Self::from_queries(entries, version)
    }

    pub fn from_queries(
        entries: impl IntoIterator<Item = (String, String)>,
        version: impl Into<String>,
    ) -> Result<Self, FeatureError> {
        let mut templates = Vec::new();
        for (index, (name, query_text)) in entries.into_iter().enumerate() {
            let parsed = parse(&query_text).map_err(|source| FeatureError::TemplateParse {
                index,
                name: name.clone(),
                source,
            })?;
            let graph = QueryGraph::from_query(&parsed);
            graph.validate().map_err(|source| FeatureError::TemplateGraph {
                index,
                name: name.clone(),
                source,
            })?;
            let prepared = PreparedGraph::new(&graph);
            templates.push(Template {
                name,
                query_text,
                graph,
                prepared,
            });
        }
        if templates.is_empty() {
            return Err(FeatureError::EmptyTemplateSet);
        }
        Ok(Self {
            templates,
            version: version.into(),
        })
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }
}

impl FeatureSpace for TemplateSet {
    fn dimension(&self) -> usize {
        self.templates.len()
    }

    fn version(&self) -> &str {
        &self.version
    }

    fn reference_graphs(&self) -> Box<dyn Iterator<Item = &PreparedGraph> + '_> {
        Box::new(self.templates.iter().map(|t| &t.prepared))
    }
}

fn directive<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let rest = line.strip_prefix('#')?.trim_start();
    let rest = rest.strip_prefix(key)?.trim_start();
    Some(rest.strip_prefix(':')?.trim())
}

fn content_version(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    format!("sha256:{}", &hex::encode(digest)[..16])
}

/// Template featurization: `values[i]` is the distance to template `i`.
pub fn featurize<F: Scalar>(
    g: &QueryGraph,
    templates: &TemplateSet,
    calc: &GedCalculator<F>,
) -> FeatureVector<F> {
    templates.featurize(g, calc)
}

#[derive(Debug, Clone)]
pub struct Medoid {
    pub query_text: String,
    pub training_index: usize,
    graph: QueryGraph,
    prepared: PreparedGraph,
}

impl Medoid {
    pub fn graph(&self) -> &QueryGraph {
        &self.graph
    }
}

/// k-medoids over pairwise approximate GED.
#[derive(Debug, Clone)]
pub struct ClusterModel {
    medoids: Vec<Medoid>,
    total_cost: f64,
    iterations: usize,
    version: String,
}

impl ClusterModel {
    /// Random initial medoids from `seed`, then best-improvement swaps until
    /// no swap lowers the total distance or [`MAX_SWAP_ITERATIONS`] is hit.
    /// Computes every pairwise distance exactly once.
    pub fn build<F: Scalar>(
        training: &[(String, QueryGraph)],
        k: usize,
        seed: u64,
        calc: &GedCalculator<F>,
    ) -> Result<Self, FeatureError> {
        let n = training.len();
        if k == 0 || k > n {
            return Err(FeatureError::InvalidK { k, n });
        }
        let prepared: Vec<PreparedGraph> =
            training.iter().map(|(_, g)| PreparedGraph::new(g)).collect();
        let mut dist = vec![F::zero(); n * n];
        for i in 0..n {
            for j in i + 1..n {
                let d = calc.distance(&prepared[i], &prepared[j]);
                dist[i * n + j] = d;
                dist[j * n + i] = d;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut medoids = sample(&mut rng, n, k).into_vec();
        medoids.sort_unstable();
        let (medoids, iterations) = swap_phase(&dist, n, medoids);
        let total_cost = Nearest::compute(&dist, n, &medoids)
            .iter()
            .map(|x| x.d1.to_f64().unwrap_or(f64::NAN))
            .sum();

        let mut hasher = Sha256::new();
        let medoids: Vec<Medoid> = medoids
            .into_iter()
            .map(|i| {
                hasher.update(training[i].0.as_bytes());
                hasher.update([0]);
                Medoid {
                    query_text: training[i].0.clone(),
                    training_index: i,
                    graph: training[i].1.clone(),
                    prepared: prepared[i].clone(),
                }
            })
            .collect();
        let version = format!("cluster-k{k}:{}", &hex::encode(hasher.finalize())[..16]);
        Ok(Self {
            medoids,
            total_cost,
            iterations,
            version,
        })
    }

    pub fn medoids(&self) -> &[Medoid] {
        &self.medoids
    }

    pub fn k(&self) -> usize {
        self.medoids.len()
    }

    /// Sum over training queries of the distance to the nearest medoid.
    pub fn total_cost(&self) -> f64 {
        self.total_cost
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// The medoids as a template set with the same version string.
    pub fn to_template_set(&self) -> TemplateSet {
        TemplateSet {
            templates: self
                .medoids
                .iter()
                .enumerate()
                .map(|(i, m)| Template {
                    name: format!("medoid-{}", i + 1),
                    query_text: m.query_text.clone(),
                    graph: m.graph.clone(),
                    prepared: m.prepared.clone(),
                })
                .collect(),
            version: self.version.clone(),
        }
    }
}

impl FeatureSpace for ClusterModel {
    fn dimension(&self) -> usize {
        self.medoids.len()
    }

    fn version(&self) -> &str {
        &self.version
    }

    fn reference_graphs(&self) -> Box<dyn Iterator<Item = &PreparedGraph> + '_> {
        Box::new(self.medoids.iter().map(|m| &m.prepared))
    }
}

/// Cluster featurization: `values[i]` is the distance to medoid `i`.
pub fn featurize_cluster<F: Scalar>(
    g: &QueryGraph,
    model: &ClusterModel,
    calc: &GedCalculator<F>,
) -> FeatureVector<F> {
    model.featurize(g, calc)
}

#[derive(Clone, Copy)]
struct Nearest<F> {
    m1: usize,
    d1: F,
    d2: F,
}

impl<F: Scalar> Nearest<F> {
    /// `m1` indexes into `medoids`; `d2` is infinite when k = 1.
    fn compute(dist: &[F], n: usize, medoids: &[usize]) -> Vec<Self> {
        (0..n)
            .map(|o| {
                let mut best = Nearest {
                    m1: 0,
                    d1: F::infinity(),
                    d2: F::infinity(),
                };
                for (slot, &m) in medoids.iter().enumerate() {
                    let d = dist[o * n + m];
                    if d < best.d1 {
                        best.d2 = best.d1;
                        best.d1 = d;
                        best.m1 = slot;
                    } else if d < best.d2 {
                        best.d2 = d;
                    }
                }
                best
            })
            .collect()
    }
}

/// Returns the final medoid indices (sorted) and the number of swaps made.
fn swap_phase<F: Scalar>(dist: &[F], n: usize, mut medoids: Vec<usize>) -> (Vec<usize>, usize) {
    let k = medoids.len();
    let mut is_medoid = vec![false; n];
    for &m in &medoids {
        is_medoid[m] = true;
    }
    let mut delta = vec![F::zero(); k];
    let mut iterations = 0;
    while iterations < MAX_SWAP_ITERATIONS {
        let near = Nearest::compute(dist, n, &medoids);
        // Best (change, slot, candidate); ties keep the earliest found.
        let mut best: Option<(F, usize, usize)> = None;
        for x in (0..n).filter(|&x| !is_medoid[x]) {
            let mut shared = F::zero();
            delta.iter_mut().for_each(|d| *d = F::zero());
            for (o, nr) in near.iter().enumerate() {
                let dx = dist[o * n + x];
                let keep = dx.min(nr.d1) - nr.d1;
                shared += keep;
                delta[nr.m1] += dx.min(nr.d2) - nr.d1 - keep;
            }
            for (slot, &d) in delta.iter().enumerate() {
                let change = shared + d;
                if best.is_none_or(|(b, _, _)| change < b) {
                    best = Some((change, slot, x));
                }
            }
        }
        match best {
            Some((change, slot, x)) if change < F::zero() => {
                is_medoid[medoids[slot]] = false;
                is_medoid[x] = true;
                medoids[slot] = x;
                iterations += 1;
            }
            _ => break,
        }
    }
    medoids.sort_unstable();
    (medoids, iterations)
}

impl fmt::Display for FeatureVector<f64> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, v) in self.values.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, "]")
    }
}
