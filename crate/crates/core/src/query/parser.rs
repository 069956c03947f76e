use std::collections::BTreeMap;

use super::lexer::{tokenize, Tok, Token};
use super::{
    GroupElement, GroupKind, Modifiers, ParseError, ParsedQuery, PatternGroup, Projection, Term,
    TermKind, TriplePattern,
};

const RDF_TYPE: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type";

/// Keywords that are valid SPARQL but outside the supported subset.
const UNSUPPORTED: &[&str] = &[
    "SERVICE", "GRAPH", "VALUES", "BIND", "MINUS", "FROM", "NAMED", "GROUP", "HAVING", "BASE",
    "REDUCED", "LOAD", "INSERT", "DELETE", "EXISTS",
];

/// Parse a query of the supported SELECT subset.
pub fn parse(text: &str) -> Result<ParsedQuery, ParseError> {
    let tokens = tokenize(text)?;
    let mut p = Parser {
        tokens,
        idx: 0,
        end: text.len(),
        prefixes: BTreeMap::new(),
        anon: 0,
    };
    p.query()
}

struct Parser {
    tokens: Vec<Token>,
    idx: usize,
    end: usize,
    prefixes: BTreeMap<String, String>,
    anon: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.idx).map(|t| &t.tok)
    }

    fn peek_n(&self, n: usize) -> Option<&Tok> {
        self.tokens.get(self.idx + n).map(|t| &t.tok)
    }

    fn pos(&self) -> usize {
        self.tokens.get(self.idx).map_or(self.end, |t| t.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.tokens.get(self.idx).map(|t| t.tok.clone());
        if t.is_some() {
            self.idx += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::new(self.pos(), msg))
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Word(w)) if w.eq_ignore_ascii_case(kw))
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.is_keyword(kw) {
            self.idx += 1;
            true
        } else {
            false
        }
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Some(Tok::Punct(q)) if *q == p)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.idx += 1;
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &str) -> Result<(), ParseError> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            self.err(format!("expected '{p}'"))
        }
    }

    fn check_unsupported(&self) -> Result<(), ParseError> {
        if let Some(Tok::Word(w)) = self.peek() {
            let upper = w.to_ascii_uppercase();
            if UNSUPPORTED.contains(&upper.as_str()) {
                return self.err(format!("unsupported keyword {upper}"));
            }
        }
        Ok(())
    }

    fn expand(&self, prefix: &str, local: &str) -> Result<String, ParseError> {
        match self.prefixes.get(prefix) {
            Some(base) => Ok(format!("{base}{local}")),
            None => self.err(format!("undeclared prefix '{prefix}:'")),
        }
    }

    fn query(&mut self) -> Result<ParsedQuery, ParseError> {
        while self.is_keyword("PREFIX") {
            self.idx += 1;
            let Some(Tok::PName { prefix, local }) = self.next() else {
                return self.err("expected prefix name after PREFIX");
            };
            if !local.is_empty() {
                return self.err("prefix declaration must end with ':'");
            }
            let Some(Tok::Iri(iri)) = self.next() else {
                return self.err("expected IRI in PREFIX declaration");
            };
            self.prefixes.insert(prefix, iri);
        }
        for form in ["CONSTRUCT", "ASK", "DESCRIBE"] {
            if self.is_keyword(form) {
                return self.err(format!("only SELECT queries are supported, found {form}"));
            }
        }
        self.check_unsupported()?;
        if !self.eat_keyword("SELECT") {
            return self.err("expected SELECT");
        }
        let mut modifiers = Modifiers::default();
        if self.eat_keyword("DISTINCT") {
            modifiers.distinct = true;
        }
        self.check_unsupported()?;
        let projection = if self.eat_punct("*") {
            Projection::Star
        } else {
            let mut vars = Vec::new();
            while let Some(Tok::Var(v)) = self.peek() {
                vars.push(v.clone());
                self.idx += 1;
            }
            if self.is_punct("(") {
                return self.err("projection expressions and aggregates are not supported");
            }
            if vars.is_empty() {
                return self.err("expected projection variables or '*'");
            }
            Projection::Vars(vars)
        };
        self.check_unsupported()?;
        self.eat_keyword("WHERE");
        self.expect_punct("{")?;
        let root = self.group_body(GroupKind::Group)?;
        self.modifiers(&mut modifiers)?;
        if self.peek().is_some() {
            self.check_unsupported()?;
            return self.err("unexpected trailing input");
        }
        Ok(ParsedQuery {
            prefixes: std::mem::take(&mut self.prefixes),
            projection,
            root,
            modifiers,
        })
    }

    fn modifiers(&mut self, m: &mut Modifiers) -> Result<(), ParseError> {
        self.check_unsupported()?;
        if self.eat_keyword("ORDER") {
            if !self.eat_keyword("BY") {
                return self.err("expected BY after ORDER");
            }
            let mut toks = Vec::new();
            while let Some(t) = self.peek() {
                if self.is_keyword("LIMIT") || self.is_keyword("OFFSET") {
                    break;
                }
                self.check_unsupported()?;
                toks.push(t.clone());
                self.idx += 1;
            }
            if toks.is_empty() {
                return self.err("empty ORDER BY clause");
            }
            m.order_by = Some(self.render_tokens(&toks)?);
        }
        loop {
            if self.eat_keyword("LIMIT") {
                m.limit = Some(self.count("LIMIT")?);
            } else if self.eat_keyword("OFFSET") {
                m.offset = Some(self.count("OFFSET")?);
            } else {
                return Ok(());
            }
        }
    }

    fn count(&mut self, what: &str) -> Result<u64, ParseError> {
        match self.peek() {
            Some(Tok::Number(n)) => match n.parse::<u64>() {
                Ok(v) => {
                    self.idx += 1;
                    Ok(v)
                }
                Err(_) => self.err(format!("{what} needs a non-negative integer")),
            },
            _ => self.err(format!("{what} needs a non-negative integer")),
        }
    }

    /// Parses group contents after the opening brace, through the closing one.
    fn group_body(&mut self, kind: GroupKind) -> Result<PatternGroup, ParseError> {
        let mut group = PatternGroup::new(kind);
        loop {
            self.check_unsupported()?;
            match self.peek() {
                None => return self.err("unterminated group, expected '}'"),
                Some(Tok::Punct("}")) => {
                    self.idx += 1;
                    return Ok(group);
                }
                Some(Tok::Punct(".")) => {
                    self.idx += 1;
                }
                Some(Tok::Punct("{")) => {
                    self.idx += 1;
                    let first = self.group_body(GroupKind::Group)?;
                    let mut branches = vec![first];
                    while self.eat_keyword("UNION") {
                        self.expect_punct("{")?;
                        branches.push(self.group_body(GroupKind::Group)?);
                    }
                    let child = if branches.len() == 1 {
                        branches.pop().unwrap()
                    } else {
                        PatternGroup {
                            kind: GroupKind::UnionBranches,
                            elements: branches.into_iter().map(GroupElement::Group).collect(),
                        }
                    };
                    group.elements.push(GroupElement::Group(child));
                }
                Some(Tok::Word(w)) if w.eq_ignore_ascii_case("OPTIONAL") => {
                    self.idx += 1;
                    self.expect_punct("{")?;
                    let child = self.group_body(GroupKind::Optional)?;
                    group.elements.push(GroupElement::Group(child));
                }
                Some(Tok::Word(w)) if w.eq_ignore_ascii_case("FILTER") => {
                    self.idx += 1;
                    let expr = self.filter()?;
                    group.elements.push(GroupElement::Filter(expr));
                }
                Some(Tok::Word(w)) if w.eq_ignore_ascii_case("SELECT") => {
                    return self.err("subqueries are not supported");
                }
                Some(Tok::Word(w)) if w.eq_ignore_ascii_case("UNION") => {
                    return self.err("UNION must follow a group");
                }
                _ => self.triples(&mut group)?,
            }
        }
    }

    fn filter(&mut self) -> Result<String, ParseError> {
        let start = self.idx;
        if self.is_keyword("NOT") && matches!(self.peek_n(1), Some(Tok::Word(w)) if w.eq_ignore_ascii_case("EXISTS")) {
            self.idx += 1;
        }
        self.check_unsupported()?;
        self.idx = start;
        match self.peek() {
            Some(Tok::Punct("(")) => {}
            Some(Tok::Word(_) | Tok::PName { .. } | Tok::Iri(_))
                if matches!(self.peek_n(1), Some(Tok::Punct("("))) =>
            {
                self.idx += 1;
            }
            _ => return self.err("expected '(' or function call after FILTER"),
        }
        let mut depth = 0usize;
        loop {
            match self.next() {
                None => return self.err("unbalanced parentheses in FILTER"),
                Some(Tok::Punct("(")) => depth += 1,
                Some(Tok::Punct(")")) => {
                    depth -= 1;
                    if depth == 0 {
                        break;
                    }
                }
                Some(Tok::Word(w)) if w.eq_ignore_ascii_case("EXISTS") => {
                    self.idx -= 1;
                    return self.err("unsupported keyword EXISTS");
                }
                Some(Tok::Punct("{" | "}")) => {
                    self.idx -= 1;
                    return self.err("graph patterns inside FILTER are not supported");
                }
                Some(_) => {}
            }
        }
        let toks: Vec<Tok> = self.tokens[start..self.idx]
            .iter()
            .map(|t| t.tok.clone())
            .collect();
        self.render_tokens(&toks)
    }

    /// Opaque expression text: one space between tokens, no space inside
    /// parentheses or before a call's '(' and ',' , prefixed names expanded.
    fn render_tokens(&self, toks: &[Tok]) -> Result<String, ParseError> {
        let mut out = String::new();
        for (i, t) in toks.iter().enumerate() {
            let prev = i.checked_sub(1).map(|j| &toks[j]);
            let prev2 = i.checked_sub(2).map(|j| &toks[j]);
            let unary_sign = matches!(prev, Some(Tok::Punct("-" | "+")))
                && (prev2.is_none() || matches!(prev2, Some(Tok::Punct(p)) if *p != ")"));
            let glue = match (prev, t) {
                (None, _) => true,
                (Some(Tok::Punct("(")), _) => true,
                (_, Tok::Punct(")" | ",")) => true,
                (Some(Tok::Word(_) | Tok::PName { .. } | Tok::Iri(_)), Tok::Punct("(")) => true,
                (Some(Tok::Str(_)), Tok::LangTag(_) | Tok::DoubleCaret) => true,
                (Some(Tok::DoubleCaret), _) => true,
                (Some(Tok::Punct("!")), _) => true,
                _ if unary_sign => true,
                _ => false,
            };
            if !glue {
                out.push(' ');
            }
            match t {
                Tok::Iri(i) => {
                    out.push('<');
                    out.push_str(i);
                    out.push('>');
                }
                Tok::PName { prefix, local } => {
                    out.push('<');
                    out.push_str(&self.expand(prefix, local)?);
                    out.push('>');
                }
                Tok::Var(v) => {
                    out.push('?');
                    out.push_str(v);
                }
                Tok::BNode(b) => {
                    out.push_str("_:");
                    out.push_str(b);
                }
                Tok::Str(s) => out.push_str(&quote(s)),
                Tok::LangTag(l) => {
                    out.push('@');
                    out.push_str(l);
                }
                Tok::DoubleCaret => out.push_str("^^"),
                Tok::Number(n) => out.push_str(n),
                Tok::Word(w) => {
                    if is_expression_keyword(w) {
                        out.push_str(&w.to_ascii_uppercase());
                    } else {
                        out.push_str(w);
                    }
                }
                Tok::Punct(p) => out.push_str(p),
            }
        }
        Ok(out)
    }

    fn triples(&mut self, group: &mut PatternGroup) -> Result<(), ParseError> {
        let subject = self.term(Position::Subject)?;
        loop {
            let predicate = self.predicate()?;
            loop {
                let object = self.term(Position::Object)?;
                group.elements.push(GroupElement::Triple(TriplePattern::new(
                    subject.clone(),
                    predicate.clone(),
                    object,
                )));
                if !self.eat_punct(",") {
                    break;
                }
            }
            if !self.eat_punct(";") {
                return Ok(());
            }
            while self.eat_punct(";") {}
            // A trailing ';' before '.' or '}' is legal.
            if self.is_punct(".") || self.is_punct("}") {
                return Ok(());
            }
        }
    }

    fn predicate(&mut self) -> Result<Term, ParseError> {
        if matches!(self.peek(), Some(Tok::Punct("^" | "!" | "(")))
            || matches!(self.peek(), Some(Tok::Word(w)) if w == "a")
                && matches!(self.peek_n(1), Some(Tok::Punct("/" | "|" | "*" | "+" | "?")))
        {
            return self.err("property paths are not supported");
        }
        let pred = if matches!(self.peek(), Some(Tok::Word(w)) if w == "a") {
            self.idx += 1;
            Term::iri(RDF_TYPE)
        } else {
            self.term(Position::Predicate)?
        };
        if matches!(
            self.peek(),
            Some(Tok::Punct("/" | "|" | "*" | "+" | "?" | "^"))
        ) {
            return self.err("property paths are not supported");
        }
        if !matches!(pred.kind, TermKind::Iri | TermKind::Variable) {
            return self.err("predicate must be an IRI or a variable");
        }
        Ok(pred)
    }

    fn term(&mut self, position: Position) -> Result<Term, ParseError> {
        let pos = self.pos();
        let Some(tok) = self.next() else {
            return self.err("unexpected end of query, expected a term");
        };
        let term = match tok {
            Tok::Var(v) => Term::var(v),
            Tok::Iri(i) => Term::iri(i),
            Tok::PName { prefix, local } => {
                self.idx -= 1;
                let iri = self.expand(&prefix, &local)?;
                self.idx += 1;
                Term::iri(iri)
            }
            Tok::BNode(b) => Term::blank(b),
            Tok::Punct("[") => {
                if !self.eat_punct("]") {
                    return Err(ParseError::new(
                        pos,
                        "blank node property lists are not supported",
                    ));
                }
                let label = format!("anon{}", self.anon);
                self.anon += 1;
                Term::blank(label)
            }
            Tok::Punct("(") => {
                return Err(ParseError::new(pos, "RDF collections are not supported"));
            }
            Tok::Str(s) => Term::literal(self.literal_suffix(quote(&s))?),
            Tok::Number(n) => Term::literal(n),
            Tok::Punct(sign @ ("+" | "-")) => match self.next() {
                Some(Tok::Number(n)) => Term::literal(format!("{sign}{n}")),
                _ => return Err(ParseError::new(pos, "expected a number after sign")),
            },
            Tok::Word(w) if w == "true" || w == "false" => Term::literal(w),
            Tok::Word(w) => {
                return Err(ParseError::new(pos, format!("unexpected word '{w}'")));
            }
            other => {
                return Err(ParseError::new(pos, format!("unexpected token {other:?}")));
            }
        };
        if term.kind == TermKind::Literal && position == Position::Predicate {
            return Err(ParseError::new(pos, "literal in predicate position"));
        }
        Ok(term)
    }

    fn literal_suffix(&mut self, mut text: String) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::LangTag(l)) => {
                text.push('@');
                text.push_str(l);
                self.idx += 1;
            }
            Some(Tok::DoubleCaret) => {
                self.idx += 1;
                let dt = match self.next() {
                    Some(Tok::Iri(i)) => i,
                    Some(Tok::PName { prefix, local }) => {
                        self.idx -= 1;
                        let iri = self.expand(&prefix, &local)?;
                        self.idx += 1;
                        iri
                    }
                    _ => return self.err("expected datatype IRI after '^^'"),
                };
                text.push_str("^^<");
                text.push_str(&dt);
                text.push('>');
            }
            _ => {}
        }
        Ok(text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Position {
    Subject,
    Predicate,
    Object,
}

fn is_expression_keyword(w: &str) -> bool {
    matches!(
        w.to_ascii_uppercase().as_str(),
        "ASC" | "DESC" | "IN" | "NOT" | "AS"
    )
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}
