//! Parsed form of the supported SPARQL SELECT subset.
//!
//! The subset is `PREFIX` declarations, `SELECT [DISTINCT] (vars | *)`, a
//! `WHERE` group built from triple patterns, `OPTIONAL`, `UNION`, nested
//! groups and `FILTER`, followed by `ORDER BY`, `LIMIT` and `OFFSET`.
//! Everything else is rejected with a [`ParseError`] so callers can fall back
//! to identity caching.
//!
//! The `Display` impl of [`ParsedQuery`] is the canonical serialization (v1):
//! keywords upper-cased, single-space separated, prefixed names expanded to
//! full IRIs, triple patterns kept in source order and variables never
//! renamed.

mod lexer;
mod parser;

use std::collections::BTreeMap;
use std::fmt;

pub use parser::parse;

/// Version of the canonical key normalization. Bump when the `Display`
/// output of [`ParsedQuery`] changes.
pub const CANONICAL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("parse error at byte {position}: {message}")]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

impl ParseError {
    pub(crate) fn new(position: usize, message: impl Into<String>) -> Self {
        Self {
            position,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TermKind {
    Iri,
    Literal,
    Variable,
    BlankNode,
}

/// A triple pattern component.
///
/// `lexical` holds the expanded IRI, the literal in SPARQL syntax (quotes,
/// escapes, language tag or datatype included), the variable name without
/// its sigil, or the blank node label.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Term {
    pub kind: TermKind,
    pub lexical: String,
}

impl Term {
    pub fn iri(iri: impl Into<String>) -> Self {
        Self {
            kind: TermKind::Iri,
            lexical: iri.into(),
        }
    }

    pub fn var(name: impl Into<String>) -> Self {
        Self {
            kind: TermKind::Variable,
            lexical: name.into(),
        }
    }

    pub fn literal(syntax: impl Into<String>) -> Self {
        Self {
            kind: TermKind::Literal,
            lexical: syntax.into(),
        }
    }

    pub fn blank(label: impl Into<String>) -> Self {
        Self {
            kind: TermKind::BlankNode,
            lexical: label.into(),
        }
    }

    /// Blank nodes count as variables: they are non-distinguished variables
    /// in pattern position.
    pub fn is_var(&self) -> bool {
        matches!(self.kind, TermKind::Variable | TermKind::BlankNode)
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            TermKind::Iri => write!(f, "<{}>", self.lexical),
            TermKind::Literal => f.write_str(&self.lexical),
            TermKind::Variable => write!(f, "?{}", self.lexical),
            TermKind::BlankNode => write!(f, "_:{}", self.lexical),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TriplePattern {
    pub subject: Term,
    pub predicate: Term,
    pub object: Term,
}

impl TriplePattern {
    pub fn new(subject: Term, predicate: Term, object: Term) -> Self {
        Self {
            subject,
            predicate,
            object,
        }
    }

    /// Boundness class in `0..8`: `4·var(s) + 2·var(p) + var(o)`.
    pub fn type_id(&self) -> u8 {
        4 * u8::from(self.subject.is_var())
            + 2 * u8::from(self.predicate.is_var())
            + u8::from(self.object.is_var())
    }
}

impl fmt::Display for TriplePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.subject, self.predicate, self.object)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroupKind {
    Group,
    Optional,
    /// Alternatives joined by `UNION`; holds only `Group` children.
    UnionBranches,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GroupElement {
    Triple(TriplePattern),
    Group(PatternGroup),
    /// Filter expression in normalized token form, not interpreted.
    Filter(String),
}

/// One `{ ... }` group. Elements keep their source interleaving because
/// `OPTIONAL` is order-sensitive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternGroup {
    pub kind: GroupKind,
    pub elements: Vec<GroupElement>,
}

impl PatternGroup {
    pub fn new(kind: GroupKind) -> Self {
        Self {
            kind,
            elements: Vec::new(),
        }
    }

    pub fn patterns(&self) -> impl Iterator<Item = &TriplePattern> {
        self.elements.iter().filter_map(|e| match e {
            GroupElement::Triple(t) => Some(t),
            _ => None,
        })
    }

    pub fn children(&self) -> impl Iterator<Item = &PatternGroup> {
        self.elements.iter().filter_map(|e| match e {
            GroupElement::Group(g) => Some(g),
            _ => None,
        })
    }

    pub fn filters(&self) -> impl Iterator<Item = &str> {
        self.elements.iter().filter_map(|e| match e {
            GroupElement::Filter(s) => Some(s.as_str()),
            _ => None,
        })
    }

    /// All triple patterns in this group and below, depth first.
    pub fn all_patterns(&self) -> Vec<&TriplePattern> {
        let mut out = Vec::new();
        self.collect_patterns(&mut out);
        out
    }

    fn collect_patterns<'a>(&'a self, out: &mut Vec<&'a TriplePattern>) {
        for e in &self.elements {
            match e {
                GroupElement::Triple(t) => out.push(t),
                GroupElement::Group(g) => g.collect_patterns(out),
                GroupElement::Filter(_) => {}
            }
        }
    }

    fn write_body(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        let mut prev_triple = false;
        for e in &self.elements {
            let is_triple = matches!(e, GroupElement::Triple(_));
            // '.' is only required between two consecutive triple patterns.
            if prev_triple && is_triple {
                f.write_str(" .")?;
            }
            f.write_str(" ")?;
            match e {
                GroupElement::Triple(t) => write!(f, "{t}")?,
                GroupElement::Filter(expr) => write!(f, "FILTER {expr}")?,
                GroupElement::Group(g) => write!(f, "{g}")?,
            }
            prev_triple = is_triple;
        }
        f.write_str(" }")
    }
}

impl fmt::Display for PatternGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            GroupKind::Group => self.write_body(f),
            GroupKind::Optional => {
                f.write_str("OPTIONAL ")?;
                self.write_body(f)
            }
            GroupKind::UnionBranches => {
                for (i, branch) in self.children().enumerate() {
                    if i > 0 {
                        f.write_str(" UNION ")?;
                    }
                    branch.write_body(f)?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Projection {
    Star,
    Vars(Vec<String>),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Modifiers {
    pub distinct: bool,
    pub order_by: Option<String>,
    pub limit: Option<u64>,
    pub offset: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct ParsedQuery {
    pub prefixes: BTreeMap<String, String>,
    pub projection: Projection,
    pub root: PatternGroup,
    pub modifiers: Modifiers,
}

impl ParsedQuery {
    /// Structural equality: projection, pattern tree and modifiers. Prefix
    /// declarations are ignored since all names are already expanded.
    pub fn structurally_eq(&self, other: &Self) -> bool {
        self.projection == other.projection
            && self.root == other.root
            && self.modifiers == other.modifiers
    }

    pub fn canonicalize(&self) -> CanonicalKey {
        CanonicalKey(self.to_string())
    }
}

impl fmt::Display for ParsedQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SELECT ")?;
        if self.modifiers.distinct {
            f.write_str("DISTINCT ")?;
        }
        match &self.projection {
            Projection::Star => f.write_str("*")?,
            Projection::Vars(vars) => {
                for (i, v) in vars.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "?{v}")?;
                }
            }
        }
        f.write_str(" WHERE ")?;
        self.root.write_body(f)?;
        if let Some(order) = &self.modifiers.order_by {
            write!(f, " ORDER BY {order}")?;
        }
        if let Some(limit) = self.modifiers.limit {
            write!(f, " LIMIT {limit}")?;
        }
        if let Some(offset) = self.modifiers.offset {
            write!(f, " OFFSET {offset}")?;
        }
        Ok(())
    }
}

/// Cache key text. For supported queries this is the canonical serialization;
/// for queries outside the subset it is the raw request text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CanonicalKey(pub String);

impl CanonicalKey {
    pub fn identity(raw: impl Into<String>) -> Self {
        Self(raw.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CanonicalKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for CanonicalKey {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// Parse and canonicalize in one step.
pub fn canonicalize(text: &str) -> Result<CanonicalKey, ParseError> {
    parse(text).map(|q| q.canonicalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tp(s: bool, p: bool, o: bool) -> TriplePattern {
        let pick = |v: bool, name: &str| {
            if v {
                Term::var(name)
            } else {
                Term::iri(format!("http://x/{name}"))
            }
        };
        TriplePattern::new(pick(s, "s"), pick(p, "p"), pick(o, "o"))
    }

    #[test]
    fn type_ids() {
        assert_eq!(tp(false, false, false).type_id(), 0);
        assert_eq!(tp(true, false, false).type_id(), 4);
        assert_eq!(tp(true, true, true).type_id(), 7);
        let mut seen = std::collections::HashSet::new();
        for bits in 0..8u8 {
            let t = tp(bits & 4 != 0, bits & 2 != 0, bits & 1 != 0);
            assert_eq!(t.type_id(), bits);
            seen.insert(t.type_id());
        }
        assert_eq!(seen.len(), 8);
    }

    #[test]
    fn blank_nodes_count_as_variables() {
        let t = TriplePattern::new(
            Term::blank("b"),
            Term::iri("http://p"),
            Term::literal("\"x\""),
        );
        assert_eq!(t.type_id(), 4);
    }
}
