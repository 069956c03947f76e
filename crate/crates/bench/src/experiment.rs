//! Model training, the cluster baseline, parameter sweeps and the
//! feature-modelling comparison.

use std::collections::HashSet;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;
use sparqlcache_core::distance::{GedCalculator, GedCounter};
use sparqlcache_core::features::{ClusterModel, FeatureError, FeatureSpace, TemplateSet};
use sparqlcache_core::suggest::{SuggestError, SuggestionModel, TrainReport};
use sparqlcache_core::{parse, QueryGraph};
use sparqlcache_proxy::{SuggestionEngine, Upstream};

use crate::log::QueryLog;
use crate::replay::{replay, Mode, ReplayConfig, ReplayError};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Suggest(#[from] SuggestError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug)]
pub struct TrainedModel {
    pub model: SuggestionModel<f64>,
    /// The feature space the model's vectors live in.
    pub templates: TemplateSet,
    pub report: TrainReport,
    pub ged_calls: u64,
    pub wall: Duration,
}

impl TrainedModel {
    pub fn engine(&self) -> Result<SuggestionEngine, SuggestError> {
        SuggestionEngine::new(self.model.clone(), self.templates.clone())
    }
}

fn counting_calc() -> GedCalculator<f64> {
    GedCalculator::default().with_counter(GedCounter::new())
}

/// Template-based training: one distance per (distinct query, template).
pub fn train_template(train: &QueryLog, templates: &TemplateSet) -> Result<TrainedModel, ExperimentError> {
    let calc = counting_calc();
    let start = Instant::now();
    let (model, report) = SuggestionModel::train(train.queries(), templates, &calc)?;
    Ok(TrainedModel {
        model,
        templates: templates.clone(),
        report,
        ged_calls: calc.counter().get(),
        wall: start.elapsed(),
    })
}

/// Distinct parsable queries of a log in first-occurrence order, with graphs.
pub fn distinct_graphs(log: &QueryLog) -> Vec<(String, QueryGraph)> {
    let mut seen = HashSet::new();
    log.queries()
        .filter_map(|q| parse(q).ok())
        .filter_map(|q| {
            let text = q.canonicalize().0;
            seen.insert(text.clone()).then(|| (text, QueryGraph::from_query(&q)))
        })
        .collect()
}

#[derive(Debug)]
pub struct ClusterTrained {
    pub trained: TrainedModel,
    /// Distances spent on the pairwise clustering alone.
    pub clustering_ged_calls: u64,
    pub clustering_wall: Duration,
    pub swap_iterations: usize,
}

/// Cluster-based training: k-medoids over all pairwise distances, then
/// every query is embedded by its distances to the `k` medoids.
pub fn train_cluster(train: &QueryLog, k: usize, seed: u64) -> Result<ClusterTrained, ExperimentError> {
    let calc = counting_calc();
    let start = Instant::now();
    let graphs = distinct_graphs(train);
    let clusters = ClusterModel::build(&graphs, k, seed, &calc)?;
    let clustering_ged_calls = calc.counter().get();
    let clustering_wall = start.elapsed();
    let (model, report) = SuggestionModel::train(train.queries(), &clusters, &calc)?;
    Ok(ClusterTrained {
        trained: TrainedModel {
            model,
            templates: clusters.to_template_set(),
            report,
            ged_calls: calc.counter().get(),
            wall: start.elapsed(),
        },
        clustering_ged_calls,
        clustering_wall,
        swap_iterations: clusters.iterations(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParameter {
    K,
    Clusters,
}

impl std::str::FromStr for SweepParameter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "k" => Ok(SweepParameter::K),
            "clusters" => Ok(SweepParameter::Clusters),
            other => Err(format!("unknown sweep parameter `{other}` (expected k or clusters)")),
        }
    }
}

pub const K_SWEEP: [usize; 6] = [2, 5, 10, 20, 50, 100];
pub const CLUSTER_SWEEP: [usize; 5] = [5, 10, 15, 20, 30];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: usize,
    pub hit_rate: f64,
    pub avg_query_ms: f64,
}

/// Where a sweep's suggestion models come from.
pub enum ModelSource<'a> {
    Trained(&'a TrainedModel),
    /// Train one cluster model per swept value from this log.
    Clusters { train: &'a QueryLog, seed: u64 },
}

/// Prefetch-cache replay of `test` once per value; each value starts from
/// an empty cache.
pub async fn sweep(
    test: &QueryLog,
    parameter: SweepParameter,
    values: &[usize],
    base: &ReplayConfig,
    source: ModelSource<'_>,
    upstream: Arc<dyn Upstream>,
) -> Result<Vec<SweepRow>, ExperimentError> {
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut config = ReplayConfig {
            mode: Mode::PrefetchCache,
            ..base.clone()
        };
        let engine = match (parameter, &source) {
            (SweepParameter::K, ModelSource::Trained(m)) => {
                config.k_neighbors = value;
                m.engine()?
            }
            (SweepParameter::Clusters, ModelSource::Clusters { train, seed }) => {
                train_cluster(train, value, *seed)?.trained.engine()?
            }
            (SweepParameter::Clusters, ModelSource::Trained(_)) => {
                return Err(ExperimentError::Invalid("a cluster sweep needs a training log".into()))
            }
            (SweepParameter::K, ModelSource::Clusters { .. }) => {
                return Err(ExperimentError::Invalid("a k sweep needs a trained model".into()))
            }
        };
        let out = replay(test, &config, upstream.clone(), Some(engine)).await?;
        tracing::info!(value, hit_rate = out.report.hit_rate(), "sweep point");
        rows.push(SweepRow {
            value,
            hit_rate: out.report.hit_rate(),
            avg_query_ms: out.report.measured.avg_query_ms,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureRow {
    pub approach: String,
    pub training_queries: usize,
    pub dimension: usize,
    pub ged_calls: u64,
    pub train_ms: f64,
    pub hit_rate: Option<f64>,
}

/// Training cost of both feature modellings on the same input and, when a
/// test log is given, the prefetch-cache hit rate each model achieves.
pub async fn compare_features(
    train: &QueryLog,
    test: Option<&QueryLog>,
    templates: &TemplateSet,
    clusters: usize,
    seed: u64,
    base: &ReplayConfig,
    upstream: Arc<dyn Upstream>,
) -> Result<Vec<FeatureRow>, ExperimentError> {
    let template = train_template(train, templates)?;
    let cluster = train_cluster(train, clusters, seed)?;
    let mut rows = Vec::new();
    for (name, t) in [("template", &template), ("cluster", &cluster.trained)] {
        let hit_rate = match test {
            Some(test) => {
                let config = ReplayConfig {
                    mode: Mode::PrefetchCache,
                    ..base.clone()
                };
                Some(replay(test, &config, upstream.clone(), Some(t.engine()?)).await?.report.hit_rate())
            }
            None => None,
        };
        rows.push(FeatureRow {
            approach: name.to_string(),
            training_queries: t.report.accepted,
            dimension: t.templates.dimension(),
            ged_calls: t.ged_calls,
            train_ms: t.wall.as_secs_f64() * 1000.0,
            hit_rate,
        });
    }
    Ok(rows)
}
