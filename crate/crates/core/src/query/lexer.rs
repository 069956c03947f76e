use super::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Iri(String),
    PName { prefix: String, local: String },
    Var(String),
    BNode(String),
    Str(String),
    LangTag(String),
    DoubleCaret,
    Number(String),
    Word(String),
    Punct(&'static str),
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    pub pos: usize,
}

const PUNCT: &[&str] = &[
    "&&", "||", "!=", "<=", ">=", "{", "}", "(", ")", "[", "]", ".", ";", ",", "*", "=", "<",
    ">", "!", "+", "-", "/", "|", "^", "?",
];

fn is_name_start(c: char) -> bool {
    c.is_alphabetic() || c == '_'
}

fn is_name_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '-'
}

pub(crate) fn tokenize(input: &str) -> Result<Vec<Token>, ParseError> {
    let mut lexer = Lexer { src: input, pos: 0 };
    let mut out = Vec::new();
    while let Some(t) = lexer.next_token()? {
        out.push(t);
    }
    Ok(out)
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn peek_at(&self, n: usize) -> Option<char> {
        self.rest().chars().nth(n)
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn err(&self, pos: usize, msg: impl Into<String>) -> ParseError {
        ParseError::new(pos, msg)
    }

    fn skip_trivia(&mut self) {
        loop {
            match self.peek() {
                Some(c) if c.is_whitespace() => {
                    self.bump();
                }
                Some('#') => {
                    while let Some(c) = self.bump() {
                        if c == '\n' {
                            break;
                        }
                    }
                }
                _ => return,
            }
        }
    }

    fn take_while(&mut self, f: impl Fn(char) -> bool) -> &'a str {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if !f(c) {
                break;
            }
            self.bump();
        }
        &self.src[start..self.pos]
    }

    fn next_token(&mut self) -> Result<Option<Token>, ParseError> {
        self.skip_trivia();
        let start = self.pos;
        let Some(c) = self.peek() else {
            return Ok(None);
        };
        let tok = match c {
            '<' => {
                if let Some(iri) = self.try_iri() {
                    Tok::Iri(iri)
                } else {
                    self.punct()
                }
            }
            '?' | '$' => {
                if self.peek_at(1).is_some_and(|n| is_name_char(n) && n != '-') {
                    self.bump();
                    Tok::Var(self.take_while(is_name_char).to_string())
                } else if c == '?' {
                    self.bump();
                    Tok::Punct("?")
                } else {
                    return Err(self.err(start, "'$' must start a variable name"));
                }
            }
            '"' | '\'' => Tok::Str(self.string_literal()?),
            '@' => {
                self.bump();
                let tag = self.take_while(|c| c.is_ascii_alphanumeric() || c == '-');
                if tag.is_empty() {
                    return Err(self.err(start, "empty language tag"));
                }
                Tok::LangTag(tag.to_ascii_lowercase())
            }
            '^' if self.peek_at(1) == Some('^') => {
                self.bump();
                self.bump();
                Tok::DoubleCaret
            }
            '_' if self.peek_at(1) == Some(':') => {
                self.bump();
                self.bump();
                let label = self.take_while(|c| is_name_char(c) || c == '.');
                let label = label.trim_end_matches('.');
                self.pos = start + 2 + label.len();
                if label.is_empty() {
                    return Err(self.err(start, "empty blank node label"));
                }
                Tok::BNode(label.to_string())
            }
            ':' => {
                self.bump();
                Tok::PName {
                    prefix: String::new(),
                    local: self.local_name(),
                }
            }
            c if c.is_ascii_digit()
                || (c == '.' && self.peek_at(1).is_some_and(|d| d.is_ascii_digit())) =>
            {
                Tok::Number(self.number())
            }
            c if is_name_start(c) => {
                let word = self.take_while(|c| is_name_char(c) || c == '.');
                let word = word.trim_end_matches('.');
                self.pos = start + word.len();
                if self.peek() == Some(':') {
                    self.bump();
                    Tok::PName {
                        prefix: word.to_string(),
                        local: self.local_name(),
                    }
                } else {
                    Tok::Word(word.to_string())
                }
            }
            _ => self.punct(),
        };
        if let Tok::Punct("") = tok {
            return Err(self.err(start, format!("unexpected character {c:?}")));
        }
        Ok(Some(Token { tok, pos: start }))
    }

    fn punct(&mut self) -> Tok {
        let rest = self.rest();
        for p in PUNCT {
            if rest.starts_with(p) {
                self.pos += p.len();
                return Tok::Punct(p);
            }
        }
        Tok::Punct("")
    }

    fn try_iri(&mut self) -> Option<String> {
        let rest = self.rest();
        for (i, c) in rest.char_indices().skip(1) {
            match c {
                '>' => {
                    self.pos += i + 1;
                    return Some(rest[1..i].to_string());
                }
                c if c.is_whitespace() => return None,
                '<' | '"' | '{' | '}' | '|' | '^' | '`' | '\\' => return None,
                _ => {}
            }
        }
        None
    }

    fn local_name(&mut self) -> String {
        let start = self.pos;
        let name = self.take_while(|c| is_name_char(c) || c == '.' || c == ':' || c == '%');
        let name = name.trim_end_matches('.');
        self.pos = start + name.len();
        name.to_string()
    }

    fn number(&mut self) -> String {
        let start = self.pos;
        self.take_while(|c| c.is_ascii_digit());
        if self.peek() == Some('.') && self.peek_at(1).is_some_and(|d| d.is_ascii_digit()) {
            self.bump();
            self.take_while(|c| c.is_ascii_digit());
        }
        if matches!(self.peek(), Some('e' | 'E')) {
            let save = self.pos;
            self.bump();
            if matches!(self.peek(), Some('+' | '-')) {
                self.bump();
            }
            if self.peek().is_some_and(|d| d.is_ascii_digit()) {
                self.take_while(|c| c.is_ascii_digit());
            } else {
                self.pos = save;
            }
        }
        self.src[start..self.pos].to_string()
    }

    fn string_literal(&mut self) -> Result<String, ParseError> {
        let start = self.pos;
        let quote = self.bump().unwrap();
        let triple = self.peek() == Some(quote) && self.peek_at(1) == Some(quote);
        if triple {
            self.bump();
            self.bump();
        }
        let mut value = String::new();
        loop {
            let Some(c) = self.bump() else {
                return Err(self.err(start, "unterminated string literal"));
            };
            if c == quote {
                if !triple {
                    return Ok(value);
                }
                if self.peek() == Some(quote) && self.peek_at(1) == Some(quote) {
                    self.bump();
                    self.bump();
                    return Ok(value);
                }
                value.push(c);
                continue;
            }
            if c == '\\' {
                let esc_pos = self.pos - 1;
                let e = self
                    .bump()
                    .ok_or_else(|| self.err(esc_pos, "dangling escape"))?;
                match e {
                    't' => value.push('\t'),
                    'n' => value.push('\n'),
                    'r' => value.push('\r'),
                    'b' => value.push('\u{8}'),
                    'f' => value.push('\u{c}'),
                    '"' | '\'' | '\\' => value.push(e),
                    'u' | 'U' => {
                        let len = if e == 'u' { 4 } else { 8 };
                        let hex: String = (0..len).filter_map(|_| self.bump()).collect();
                        let ch = u32::from_str_radix(&hex, 16)
                            .ok()
                            .and_then(char::from_u32)
                            .ok_or_else(|| self.err(esc_pos, "invalid unicode escape"))?;
                        value.push(ch);
                    }
                    _ => return Err(self.err(esc_pos, format!("unknown escape \\{e}"))),
                }
                continue;
            }
            if !triple && (c == '\n' || c == '\r') {
                return Err(self.err(start, "newline in short string literal"));
            }
            value.push(c);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<Tok> {
        tokenize(s).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn iri_versus_less_than() {
        assert_eq!(toks("<http://a/b>"), vec![Tok::Iri("http://a/b".into())]);
        assert_eq!(
            toks("?x < 5"),
            vec![
                Tok::Var("x".into()),
                Tok::Punct("<"),
                Tok::Number("5".into())
            ]
        );
        assert_eq!(
            toks("?x<=?y"),
            vec![Tok::Var("x".into()), Tok::Punct("<="), Tok::Var("y".into())]
        );
    }

    #[test]
    fn prefixed_names_and_trailing_dot() {
        assert_eq!(
            toks("ex:a ex:b.c ."),
            vec![
                Tok::PName {
                    prefix: "ex".into(),
                    local: "a".into()
                },
                Tok::PName {
                    prefix: "ex".into(),
                    local: "b.c".into()
                },
                Tok::Punct(".")
            ]
        );
        assert_eq!(
            toks(":x."),
            vec![
                Tok::PName {
                    prefix: "".into(),
                    local: "x".into()
                },
                Tok::Punct(".")
            ]
        );
    }

    #[test]
    fn strings_and_comments() {
        assert_eq!(
            toks("'a\\'b' # comment\n\"\"\"x\"y\"\"\"@EN"),
            vec![
                Tok::Str("a'b".into()),
                Tok::Str("x\"y".into()),
                Tok::LangTag("en".into())
            ]
        );
        assert!(tokenize("\"open").is_err());
    }
}
