//! Nearest-neighbour suggestion of past queries.

mod kdtree;

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, CONTROLS};

pub use kdtree::{KdTree, Neighbour};

use crate::distance::{GedCalculator, PreparedGraph};
use crate::features::{FeatureSpace, FeatureVector};
use crate::graph::QueryGraph;
use crate::query::parse;
use crate::Scalar;

pub const MODEL_FORMAT: &str = "sparqlcache-model v1";

/// Characters escaped in the query column of a model file.
const TEXT_ESCAPE: &AsciiSet = &CONTROLS.add(b'%').add(b' ').add(b'\t');

#[derive(Debug, thiserror::Error)]
pub enum SuggestError {
    #[error("no training query could be parsed")]
    EmptyTrainingSet,
    #[error("expected a {expected}-dimensional vector, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("model was built for feature space {found}, expected {expected}")]
    VersionMismatch { expected: String, found: String },
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("model i/o failed: {0}")]
    Io(#[from] std::io::Error),
}

/// Counts from [`SuggestionModel::train`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrainReport {
    pub accepted: usize,
    pub duplicates: usize,
    pub unparseable: usize,
}

/// Immutable KNN index from feature vectors to canonical query texts.
#[derive(Debug, Clone)]
pub struct SuggestionModel<F> {
    texts: Vec<String>,
    tree: KdTree<F>,
    version: String,
}

impl<F: Scalar> SuggestionModel<F> {
    /// Canonicalizes, deduplicates (first occurrence wins) and featurizes
    /// each history entry. Entries that do not parse are counted and skipped.
    pub fn train<'a, S: FeatureSpace>(
        history: impl IntoIterator<Item = &'a str>,
        space: &S,
        calc: &GedCalculator<F>,
    ) -> Result<(Self, TrainReport), SuggestError> {
        let mut report = TrainReport::default();
        let mut seen = HashSet::new();
        let mut points = Vec::new();
        for text in history {
            let Ok(parsed) = parse(text) else {
                report.unparseable += 1;
                tracing::warn!(query = text, "skipping unparseable training query");
                continue;
            };
            let canonical = parsed.canonicalize().to_string();
            if !seen.insert(canonical.clone()) {
                report.duplicates += 1;
                continue;
            }
            let graph = PreparedGraph::new(&QueryGraph::from_query(&parsed));
            points.push((space.featurize_prepared(&graph, calc), canonical));
        }
        report.accepted = points.len();
        Ok((Self::from_points(points, space.dimension(), space.version())?, report))
    }

    /// Builds the index over precomputed vectors. Texts are assumed distinct.
    pub fn from_points(
        points: Vec<(FeatureVector<F>, String)>,
        dimension: usize,
        version: impl Into<String>,
    ) -> Result<Self, SuggestError> {
        if points.is_empty() {
            return Err(SuggestError::EmptyTrainingSet);
        }
        let mut coords = Vec::with_capacity(points.len() * dimension);
        let mut texts = Vec::with_capacity(points.len());
        for (v, text) in points {
            if v.len() != dimension {
                return Err(SuggestError::DimensionMismatch {
                    expected: dimension,
                    actual: v.len(),
                });
            }
            coords.extend(v.into_values());
            texts.push(text);
        }
        let mut by_text: Vec<usize> = (0..texts.len()).collect();
        by_text.sort_by(|&a, &b| texts[a].cmp(&texts[b]));
        let mut rank = vec![0; texts.len()];
        for (r, &i) in by_text.iter().enumerate() {
            rank[i] = r;
        }
        Ok(Self {
            tree: KdTree::build(dimension.max(1), coords, rank),
            texts,
            version: version.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.tree.dimension()
    }

    /// Version of the feature space the vectors were computed in.
    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn text(&self, index: usize) -> &str {
        &self.texts[index]
    }

    pub fn vector(&self, index: usize) -> &[F] {
        self.tree.point(index)
    }

    /// Nearest points ordered by distance, then canonical text.
    pub fn nearest(&self, probe: &[F], k: usize) -> Result<Vec<Neighbour<F>>, SuggestError> {
        if probe.len() != self.dimension() {
            return Err(SuggestError::DimensionMismatch {
                expected: self.dimension(),
                actual: probe.len(),
            });
        }
        Ok(self.tree.nearest(probe, k))
    }

    /// Canonical texts of the `min(k, len)` nearest training queries.
    pub fn suggest(&self, probe: &[F], k: usize) -> Result<Vec<&str>, SuggestError> {
        Ok(self
            .nearest(probe, k)?
            .into_iter()
            .map(|n| self.texts[n.index].as_str())
            .collect())
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<(), SuggestError> {
        writeln!(out, "{MODEL_FORMAT}")?;
        writeln!(out, "dimension {}", self.dimension())?;
        writeln!(out, "feature-space {}", self.version)?;
        writeln!(out, "points {}", self.len())?;
        for (i, text) in self.texts.iter().enumerate() {
            for (j, v) in self.vector(i).iter().enumerate() {
                if j > 0 {
                    out.write_all(b" ")?;
                }
                write!(out, "{v}")?;
            }
            writeln!(out, "\t{}", utf8_percent_encode(text, TEXT_ESCAPE))?;
        }
        writeln!(out, "end {}", self.len())?;
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SuggestError> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    /// Reads a model; fails with `VersionMismatch` when `expected_version`
    /// is given and differs from the stored feature-space version.
    pub fn read_from(input: impl BufRead, expected_version: Option<&str>) -> Result<Self, SuggestError> {
        let corrupt = |msg: &str| SuggestError::CorruptModel(msg.to_string());
        let mut lines = input.lines();
        let mut next = |what: &str| -> Result<String, SuggestError> {
            lines.next().transpose()?.ok_or_else(|| corrupt(&format!("missing {what}")))
        };
        if next("header")? != MODEL_FORMAT {
            return Err(corrupt("unknown format header"));
        }
        let dimension: usize = field(&next("dimension")?, "dimension")?;
        let version = next("feature space")?
            .strip_prefix("feature-space ")
            .ok_or_else(|| corrupt("missing feature-space line"))?
            .to_string();
        if let Some(expected) = expected_version {
            if expected != version {
                return Err(SuggestError::VersionMismatch {
                    expected: expected.to_string(),
                    found: version,
                });
            }
        }
        let count: usize = field(&next("point count")?, "points")?;
        let mut points = Vec::with_capacity(count);
        for i in 0..count {
            let line = next("point")?;
            let (values, text) = line
                .split_once('\t')
                .ok_or_else(|| corrupt(&format!("point {i} has no text column")))?;
            let values: Vec<F> = values
                .split(' ')
                .map(|v| v.parse::<F>().map_err(|_| corrupt(&format!("point {i} has a bad value"))))
                .collect::<Result<_, _>>()?;
            let text = percent_decode_str(text)
                .decode_utf8()
                .map_err(|_| corrupt(&format!("point {i} text is not UTF-8")))?;
            points.push((FeatureVector::new(values), text.into_owned()));
        }
        let end: usize = field(&next("end marker")?, "end")?;
        if end != count {
            return Err(corrupt("end marker does not match point count"));
        }
        Self::from_points(points, dimension, version).map_err(|e| match e {
            SuggestError::EmptyTrainingSet => corrupt("model has no points"),
            SuggestError::DimensionMismatch { .. } => corrupt("vector length differs from dimension"),
            other => other,
        })
    }

    pub fn load(path: impl AsRef<Path>, expected_version: Option<&str>) -> Result<Self, SuggestError> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file), expected_version)
    }
}

fn field(line: &str, key: &str) -> Result<usize, SuggestError> {
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| SuggestError::CorruptModel(format!("expected `{key} <n>`, got `{line}`")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::TemplateSet;
    use rand::{Rng, SeedableRng};

    fn random_model(n: usize, dim: usize, seed: u64) -> SuggestionModel<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let points = (0..n)
            .map(|i| {
                let v = (0..dim).map(|_| rng.random_range(0..6) as f64 * 0.5).collect();
                (FeatureVector::new(v), format!("SELECT * WHERE {{ ?s ?p {} }}", n - i))
            })
            .collect();
        SuggestionModel::from_points(points, dim, "test").unwrap()
    }

    #[test]
    fn training_deduplicates_and_skips() {
        let t = TemplateSet::bundled();
        let calc = GedCalculator::<f64>::default();
        let history = [
            "SELECT ?s WHERE { ?s ?p ?o }",
            "SELECT ?s WHERE {  ?s  ?p ?o  }",
            "ASK { ?s ?p ?o }",
            "SELECT ?o WHERE { <http://a> <http://b> ?o }",
        ];
        let (m, report) = SuggestionModel::train(history, &t, &calc).unwrap();
        assert_eq!(report, TrainReport { accepted: 2, duplicates: 1, unparseable: 1 });
        assert_eq!(m.len(), 2);
        assert_eq!(m.dimension(), 18);
        assert_eq!(m.version(), "default-v1");
        assert_eq!(calc.counter().get(), 36);

        let probe = m.vector(1).to_vec();
        assert_eq!(m.suggest(&probe, 1).unwrap(), vec![m.text(1)]);
        assert_eq!(m.suggest(&probe, 10).unwrap().len(), 2);

        let none = SuggestionModel::<f64>::train(["nonsense"], &t, &calc);
        assert!(matches!(none, Err(SuggestError::EmptyTrainingSet)));
    }

    #[test]
    fn single_point_answers_every_probe() {
        let m = SuggestionModel::from_points(vec![(FeatureVector::new(vec![1.0, 2.0]), "q".into())], 2, "v").unwrap();
        assert_eq!(m.suggest(&[100.0, -3.0], 5).unwrap(), vec!["q"]);
        assert!(matches!(
            m.suggest(&[1.0], 1),
            Err(SuggestError::DimensionMismatch { expected: 2, actual: 1 })
        ));
    }

    #[test]
    fn prefix_monotone_and_tie_ordered() {
        let m = random_model(400, 3, 5);
        let probe = [1.0, 0.5, 2.0];
        let big = m.suggest(&probe, 100).unwrap();
        for k in [1, 2, 5, 10, 50] {
            assert_eq!(m.suggest(&probe, k).unwrap(), big[..k]);
        }
        let near = m.nearest(&probe, 100).unwrap();
        for w in near.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            assert!(a.squared_distance < b.squared_distance
                || (a.squared_distance == b.squared_distance && m.text(a.index) < m.text(b.index)));
        }
        let unique: HashSet<_> = big.iter().collect();
        assert_eq!(unique.len(), big.len());
    }

    #[test]
    fn save_load_round_trip() {
        let m = random_model(250, 18, 9);
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let back = SuggestionModel::<f64>::read_from(&buf[..], Some("test")).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let probe: Vec<f64> = (0..18).map(|_| rng.random_range(0.0..3.0)).collect();
            assert_eq!(m.suggest(&probe, 7).unwrap(), back.suggest(&probe, 7).unwrap());
        }
    }

    #[test]
    fn text_with_tabs_and_newlines_survives() {
        let text = "SELECT ?s WHERE {\n\t?s ?p \"a%b c\" }".to_string();
        let m = SuggestionModel::from_points(vec![(FeatureVector::new(vec![0.1f32]), text.clone())], 1, "v").unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let back = SuggestionModel::<f32>::read_from(&buf[..], None).unwrap();
        assert_eq!(back.text(0), text);
        assert_eq!(back.vector(0), &[0.1f32]);
    }

    #[test]
    fn load_errors() {
        let m = random_model(10, 2, 3);
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert!(matches!(
            SuggestionModel::<f64>::read_from(&buf[..], Some("other")),
            Err(SuggestError::VersionMismatch { .. })
        ));
        let text = String::from_utf8(buf).unwrap();
        let cut = &text[..text.len() / 2];
        assert!(matches!(
            SuggestionModel::<f64>::read_from(cut.as_bytes(), None),
            Err(SuggestError::CorruptModel(_))
        ));
        let no_end = text.replace("end 10", "");
        assert!(matches!(
            SuggestionModel::<f64>::read_from(no_end.as_bytes(), None),
            Err(SuggestError::CorruptModel(_))
        ));
        assert!(matches!(
            SuggestionModel::<f64>::read_from(&b"garbage\n"[..], None),
            Err(SuggestError::CorruptModel(_))
        ));
    }
}
