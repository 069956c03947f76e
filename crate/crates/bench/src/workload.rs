//! Seeded synthetic workloads: Zipf-distributed template choice, slot values
//! drawn from per-slot pools, and a share of exact repeats of recent queries.
//! Fresh queries come in sessions of `session_length` consecutive queries
//! that share one template and differ in their slot values. With
//! `varied_slots` set, only that many leading slots of a template vary and
//! the rest keep the template's own constants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::Serialize;
use sparqlcache_core::features::TemplateSet;
use sparqlcache_core::{parse, Term, TermKind};

use crate::log::QueryLog;

/// Repeats are drawn uniformly from this many most recent queries.
pub const REPEAT_WINDOW: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkloadSpec {
    pub n_queries: usize,
    pub zipf_exponent: f64,
    pub value_pool_size: usize,
    pub repeat_fraction: f64,
    pub session_length: usize,
    /// `None` varies every slot.
    pub varied_slots: Option<usize>,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            n_queries: 1000,
            zipf_exponent: 1.0,
            value_pool_size: 8,
            repeat_fraction: 0.3,
            session_length: 1,
            varied_slots: None,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorkloadError {
    #[error("zipf exponent must be finite and non-negative")]
    Exponent,
    #[error("value pool size must be at least 1")]
    Pool,
    #[error("repeat fraction must lie in [0, 1)")]
    Repeat,
    #[error("session length must be at least 1")]
    Session,
    #[error("template {0} cannot be parsed")]
    Template(String),
}

/// A template whose subject/object constants are replaceable slots.
#[derive(Debug, Clone)]
pub struct SlottedTemplate {
    pub name: String,
    canonical: String,
    slots: Vec<Term>,
}

impl SlottedTemplate {
    pub fn new(name: &str, query: &str) -> Result<Self, WorkloadError> {
        let parsed = parse(query).map_err(|_| WorkloadError::Template(name.to_string()))?;
        let mut slots: Vec<Term> = Vec::new();
        for p in parsed.root.all_patterns() {
            for t in [&p.subject, &p.object] {
                if matches!(t.kind, TermKind::Iri | TermKind::Literal) && !slots.contains(t) {
                    slots.push(t.clone());
                }
            }
        }
        Ok(Self {
            name: name.to_string(),
            canonical: parsed.canonicalize().0,
            slots,
        })
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    /// The query with slot `i` set to pool value `values[i]`; value 0 is the
    /// template's own constant.
    pub fn instantiate(&self, values: &[usize]) -> String {
        let mut text = self.canonical.clone();
        for (slot, &v) in self.slots.iter().zip(values) {
            if v > 0 {
                text = text.replace(&slot.to_string(), &variant(slot, v).to_string());
            }
        }
        text
    }
}

fn variant(term: &Term, v: usize) -> Term {
    match term.kind {
        TermKind::Iri => Term::iri(format!("{}_{v}", term.lexical)),
        TermKind::Literal => {
            let lex = &term.lexical;
            match lex.rfind('"') {
                Some(end) if lex.starts_with('"') && end > 0 => {
                    Term::literal(format!("{} {v}{}", &lex[..end], &lex[end..]))
                }
                _ => Term::literal(format!("\"{lex} {v}\"")),
            }
        }
        _ => term.clone(),
    }
}

/// One generated query and the template it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedQuery {
    pub template: usize,
    pub repeat: bool,
    pub text: String,
}

pub fn slotted(templates: &TemplateSet) -> Result<Vec<SlottedTemplate>, WorkloadError> {
    templates
        .templates()
        .iter()
        .map(|t| SlottedTemplate::new(&t.name, &t.query_text))
        .collect()
}

/// Template `i` has popularity rank `i + 1`.
pub fn generate_labeled(spec: &WorkloadSpec, templates: &[SlottedTemplate]) -> Result<Vec<GeneratedQuery>, WorkloadError> {
    if !spec.zipf_exponent.is_finite() || spec.zipf_exponent < 0.0 {
        return Err(WorkloadError::Exponent);
    }
    if spec.value_pool_size == 0 {
        return Err(WorkloadError::Pool);
    }
    if !(0.0..1.0).contains(&spec.repeat_fraction) {
        return Err(WorkloadError::Repeat);
    }
    if spec.session_length == 0 {
        return Err(WorkloadError::Session);
    }
    let zipf = Zipf::new(templates.len() as f64, spec.zipf_exponent).map_err(|_| WorkloadError::Exponent)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out: Vec<GeneratedQuery> = Vec::with_capacity(spec.n_queries);
    let (mut template, mut left) = (0, 0);
    for _ in 0..spec.n_queries {
        if !out.is_empty() && rng.random_bool(spec.repeat_fraction) {
            let window = out.len().min(REPEAT_WINDOW);
            let pick = out.len() - 1 - rng.random_range(0..window);
            let q = out[pick].clone();
            out.push(GeneratedQuery { repeat: true, ..q });
            continue;
        }
        if left == 0 {
            template = zipf.sample(&mut rng) as usize - 1;
            left = spec.session_length;
        }
        left -= 1;
        let t = &templates[template];
        let varied = spec.varied_slots.unwrap_or(usize::MAX);
        let values: Vec<usize> = (0..t.slot_count())
            .map(|i| if i < varied { rng.random_range(0..spec.value_pool_size) } else { 0 })
            .collect();
        out.push(GeneratedQuery {
            template,
            repeat: false,
            text: t.instantiate(&values),
        });
    }
    Ok(out)
}

pub fn generate(spec: &WorkloadSpec, templates: &TemplateSet) -> Result<QueryLog, WorkloadError> {
    let slotted = slotted(templates)?;
    Ok(QueryLog::from_queries(
        generate_labeled(spec, &slotted)?.into_iter().map(|g| g.text),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use sparqlcache_core::graph_equals;
    use sparqlcache_core::QueryGraph;

    #[test]
    fn variants_keep_the_template_structure() {
        let set = TemplateSet::bundled();
        for (t, s) in set.templates().iter().zip(slotted(&set).unwrap()) {
            let values: Vec<usize> = (0..s.slot_count()).map(|i| i + 1).collect();
            let text = s.instantiate(&values);
            let q = parse(&text).unwrap();
            assert!(graph_equals(&QueryGraph::from_query(&q), t.graph()), "{}", t.name);
            if s.slot_count() > 0 {
                assert_ne!(text, s.instantiate(&vec![0; s.slot_count()]));
            }
        }
    }

    #[test]
    fn literal_variants_stay_valid() {
        let s = SlottedTemplate::new("l", "SELECT * WHERE { ?s <http://p> \"Lima\"@es . ?s <http://q> 42 }").unwrap();
        assert_eq!(s.slot_count(), 2);
        let text = s.instantiate(&[2, 3]);
        assert!(text.contains("\"Lima 2\"@es"), "{text}");
        assert!(parse(&text).is_ok(), "{text}");
    }

    #[test]
    fn fixed_seed_is_reproducible_and_repeats_are_recent() {
        let set = slotted(&TemplateSet::bundled()).unwrap();
        let spec = WorkloadSpec {
            n_queries: 500,
            ..WorkloadSpec::default()
        };
        let a = generate_labeled(&spec, &set).unwrap();
        assert_eq!(a, generate_labeled(&spec, &set).unwrap());
        let b = generate_labeled(&WorkloadSpec { seed: 43, ..spec.clone() }, &set).unwrap();
        assert_ne!(a, b);
        let repeats = a.iter().filter(|g| g.repeat).count();
        assert!((100..200).contains(&repeats), "{repeats}");
        for (i, g) in a.iter().enumerate().filter(|(_, g)| g.repeat) {
            let lo = i.saturating_sub(REPEAT_WINDOW);
            assert!(a[lo..i].iter().any(|p| p.text == g.text));
        }
    }

    #[test]
    fn sessions_share_a_template() {
        let set = slotted(&TemplateSet::bundled()).unwrap();
        let spec = WorkloadSpec {
            n_queries: 300,
            repeat_fraction: 0.0,
            session_length: 5,
            ..WorkloadSpec::default()
        };
        let q = generate_labeled(&spec, &set).unwrap();
        for chunk in q.chunks(5) {
            assert!(chunk.iter().all(|g| g.template == chunk[0].template));
        }
        let switches = q.windows(2).filter(|w| w[0].template != w[1].template).count();
        assert!(switches > 20, "{switches}");
    }

    #[test]
    fn only_leading_slots_vary() {
        let set = slotted(&TemplateSet::bundled()).unwrap();
        let spec = WorkloadSpec {
            n_queries: 2000,
            repeat_fraction: 0.0,
            value_pool_size: 4,
            varied_slots: Some(1),
            ..WorkloadSpec::default()
        };
        let q = generate_labeled(&spec, &set).unwrap();
        for g in &q {
            let t = &set[g.template];
            let mut values = vec![0; t.slot_count()];
            let variants: Vec<String> = (0..4)
                .map(|v| {
                    if let Some(first) = values.first_mut() {
                        *first = v;
                    }
                    t.instantiate(&values)
                })
                .collect();
            assert!(variants.contains(&g.text), "{}", g.text);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let set = slotted(&TemplateSet::bundled()).unwrap();
        for spec in [
            WorkloadSpec {
                zipf_exponent: -1.0,
                ..WorkloadSpec::default()
            },
            WorkloadSpec {
                value_pool_size: 0,
                ..WorkloadSpec::default()
            },
            WorkloadSpec {
                repeat_fraction: 1.0,
                ..WorkloadSpec::default()
            },
            WorkloadSpec {
                session_length: 0,
                ..WorkloadSpec::default()
            },
        ] {
            assert!(generate_labeled(&spec, &set).is_err());
        }
    }
}
