//! Loader and checker for `fixtures/queries.txt`.

use sparqlcache_core::query::{GroupElement, GroupKind, PatternGroup};
use sparqlcache_core::{parse, QueryGraph};

pub const CORPUS: &str = include_str!("../fixtures/queries.txt");

#[derive(Debug, Default)]
pub struct Case {
    pub name: String,
    pub query: String,
    pub error: Option<String>,
    pub canonical: Option<String>,
    pub types: Vec<u8>,
    pub optional: usize,
    pub union: usize,
    pub filters: usize,
}

pub fn load() -> Vec<Case> {
    let mut cases: Vec<Case> = Vec::new();
    let mut section = "";
    for line in CORPUS.lines() {
        if let Some(name) = line.strip_prefix("=== ") {
            cases.push(Case { name: name.trim().to_string(), ..Case::default() });
            section = "query";
            continue;
        }
        let Some(case) = cases.last_mut() else { continue };
        match (section, line) {
            (_, "--- ok") => section = "ok",
            (_, "--- error") => section = "error",
            ("query", _) => {
                case.query.push_str(line);
                case.query.push('\n');
            }
            ("error", l) if !l.trim().is_empty() => case.error = Some(l.trim().to_string()),
            ("ok", l) => {
                if let Some((key, value)) = l.split_once(':') {
                    let value = value.trim();
                    match key {
                        "canonical" => case.canonical = Some(value.to_string()),
                        "types" => case.types = value.split_whitespace().map(|t| t.parse().unwrap()).collect(),
                        "optional" => case.optional = value.parse().unwrap(),
                        "union" => case.union = value.parse().unwrap(),
                        "filters" => case.filters = value.parse().unwrap(),
                        other => panic!("unknown fixture key {other}"),
                    }
                }
            }
            _ => {}
        }
    }
    cases
}

fn count(g: &PatternGroup, counts: &mut (usize, usize, usize)) {
    match g.kind {
        GroupKind::Optional => counts.0 += 1,
        GroupKind::UnionBranches => counts.1 += 1,
        GroupKind::Group => {}
    }
    for e in &g.elements {
        match e {
            GroupElement::Group(child) => count(child, counts),
            GroupElement::Filter(_) => counts.2 += 1,
            GroupElement::Triple(_) => {}
        }
    }
}

/// Checks one case, including re-parse stability of the canonical text.
pub fn check(case: &Case) -> Result<(), String> {
    let result = parse(&case.query);
    if let Some(fragment) = &case.error {
        return match result {
            Ok(q) => Err(format!("expected an error containing `{fragment}`, parsed as `{q}`")),
            Err(e) if e.message.contains(fragment.as_str()) => Ok(()),
            Err(e) => Err(format!("error `{e}` lacks `{fragment}`")),
        };
    }
    let q = result.map_err(|e| format!("unexpected error: {e}"))?;
    let key = q.canonicalize();
    if let Some(expected) = &case.canonical {
        if key.as_str() != expected {
            return Err(format!("canonical mismatch\n  got:      {key}\n  expected: {expected}"));
        }
    }
    let types: Vec<u8> = q.root.all_patterns().iter().map(|p| p.type_id()).collect();
    if types != case.types {
        return Err(format!("types {types:?}, expected {:?}", case.types));
    }
    let mut counts = (0, 0, 0);
    count(&q.root, &mut counts);
    if counts != (case.optional, case.union, case.filters) {
        return Err(format!(
            "optional/union/filter counts {counts:?}, expected {:?}",
            (case.optional, case.union, case.filters)
        ));
    }
    let again = parse(key.as_str()).map_err(|e| format!("canonical text does not re-parse: {e}"))?;
    if !again.structurally_eq(&q) || again.canonicalize() != key {
        return Err("canonical text is not a fixed point".into());
    }
    QueryGraph::from_query(&q).validate().map_err(|e| format!("graph invalid: {e}"))?;
    Ok(())
}
