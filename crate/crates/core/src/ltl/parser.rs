//! Recursive-descent parser for the safe fragment.
//!
//! ```text
//! expr    := disj ('->' expr)?          left side must be a literal
//! disj    := conj ('|' conj)*
//! conj    := until ('&' until)*
//! until   := unary ('U<=' k until)?
//! unary   := '!' atom | 'X' unary | 'G' unary | 'G<=' k unary | primary
//! primary := atom | 'true' | 'false' | '(' expr ')'
//! ```

use super::{Formula, LtlError};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    True,
    False,
    Not,
    And,
    Or,
    Arrow,
    LParen,
    RParen,
    Next,
    Globally(Option<u32>),
    Finally,
    Until(Option<u32>),
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, LtlError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'!' => {
                out.push((start, Tok::Not));
                i += 1;
            }
            b'&' => {
                i += if bytes.get(i + 1) == Some(&b'&') { 2 } else { 1 };
                out.push((start, Tok::And));
            }
            b'|' => {
                i += if bytes.get(i + 1) == Some(&b'|') { 2 } else { 1 };
                out.push((start, Tok::Or));
            }
            b'-' if bytes.get(i + 1) == Some(&b'>') => {
                out.push((start, Tok::Arrow));
                i += 2;
            }
            b'(' => {
                out.push((start, Tok::LParen));
                i += 1;
            }
            b')' => {
                out.push((start, Tok::RParen));
                i += 1;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                let word = &text[start..i];
                let tok = match word {
                    "true" => Tok::True,
                    "false" => Tok::False,
                    "X" => Tok::Next,
                    "G" | "F" | "U" => {
                        let bound = lex_bound(text, &mut i)?;
                        match word {
                            "G" => Tok::Globally(bound),
                            "U" => Tok::Until(bound),
                            _ => Tok::Finally,
                        }
                    }
                    _ => Tok::Ident(word.to_string()),
                };
                out.push((start, tok));
            }
            _ => {
                return Err(LtlError::Syntax {
                    pos: start,
                    msg: format!("unexpected character '{}'", text[start..].chars().next().unwrap()),
                })
            }
        }
    }
    Ok(out)
}

/// Optional `<=k` directly after an operator letter.
fn lex_bound(text: &str, i: &mut usize) -> Result<Option<u32>, LtlError> {
    let rest = &text[*i..];
    if !rest.starts_with("<=") {
        return Ok(None);
    }
    let pos = *i + 2;
    let digits: String = text[pos..].chars().take_while(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        return Err(LtlError::Syntax {
            pos,
            msg: "expected a step bound after '<='".into(),
        });
    }
    let k: u32 = digits.parse().map_err(|_| LtlError::Syntax {
        pos,
        msg: "step bound too large".into(),
    })?;
    if k == 0 {
        return Err(LtlError::Syntax {
            pos,
            msg: "step bound must be at least 1".into(),
        });
    }
    *i = pos + digits.len();
    Ok(Some(k))
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    at: usize,
    end: usize,
    ap: &'a [String],
}

/// Parses a safe formula whose propositions are taken from `ap`.
pub fn parse(text: &str, ap: &[String]) -> Result<Formula, LtlError> {
    let toks = lex(text)?;
    if toks.is_empty() {
        return Err(LtlError::Syntax {
            pos: 0,
            msg: "empty formula".into(),
        });
    }
    let mut p = Parser {
        toks,
        at: 0,
        end: text.len(),
        ap,
    };
    let f = p.expr()?;
    if let Some((pos, t)) = p.toks.get(p.at) {
        return Err(LtlError::Syntax {
            pos: *pos,
            msg: format!("unexpected {t:?}"),
        });
    }
    Ok(f)
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|t| &t.1)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.at).map_or(self.end, |t| t.0)
    }

    fn bump(&mut self) -> Option<(usize, Tok)> {
        let t = self.toks.get(self.at).cloned();
        self.at += 1;
        t
    }

    fn atom(&self, pos: usize, name: &str) -> Result<usize, LtlError> {
        self.ap
            .iter()
            .position(|a| a == name)
            .ok_or_else(|| LtlError::UnknownAtom {
                pos,
                name: name.to_string(),
            })
    }

    fn expr(&mut self) -> Result<Formula, LtlError> {
        let pos = self.pos();
        let lhs = self.disj()?;
        if self.peek() == Some(&Tok::Arrow) {
            self.bump();
            let rhs = self.expr()?;
            let neg = match lhs {
                Formula::Atom(p) => Formula::NotAtom(p),
                Formula::NotAtom(p) => Formula::Atom(p),
                _ => {
                    return Err(LtlError::Unsafe {
                        pos,
                        msg: "an implication with a non-atomic premise".into(),
                    })
                }
            };
            return Ok(Formula::or(vec![neg, rhs]));
        }
        Ok(lhs)
    }

    fn disj(&mut self) -> Result<Formula, LtlError> {
        let mut parts = vec![self.conj()?];
        while self.peek() == Some(&Tok::Or) {
            self.bump();
            parts.push(self.conj()?);
        }
        Ok(Formula::or(parts))
    }

    fn conj(&mut self) -> Result<Formula, LtlError> {
        let mut parts = vec![self.until()?];
        while self.peek() == Some(&Tok::And) {
            self.bump();
            parts.push(self.until()?);
        }
        Ok(Formula::and(parts))
    }

    fn until(&mut self) -> Result<Formula, LtlError> {
        let lhs = self.unary()?;
        if let Some(Tok::Until(bound)) = self.peek().cloned() {
            let pos = self.pos();
            self.bump();
            let k = bound.ok_or(LtlError::Unsafe {
                pos,
                msg: "unbounded until".into(),
            })?;
            let rhs = self.until()?;
            return Ok(Formula::until(k, lhs, rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula, LtlError> {
        let pos = self.pos();
        match self.peek().cloned() {
            Some(Tok::Not) => {
                self.bump();
                let at = self.pos();
                match self.bump() {
                    Some((_, Tok::Ident(name))) => Ok(Formula::NotAtom(self.atom(at, &name)?)),
                    Some((_, Tok::True)) => Ok(Formula::False),
                    Some((_, Tok::False)) => Ok(Formula::True),
                    Some(_) => Err(LtlError::Unsafe {
                        pos: at,
                        msg: "negation of a non-atomic formula".into(),
                    }),
                    None => Err(LtlError::Syntax {
                        pos: at,
                        msg: "expected a proposition after '!'".into(),
                    }),
                }
            }
            Some(Tok::Next) => {
                self.bump();
                Ok(Formula::next(self.unary()?))
            }
            Some(Tok::Globally(None)) => {
                self.bump();
                Ok(Formula::always(self.unary()?))
            }
            Some(Tok::Globally(Some(k))) => {
                self.bump();
                Ok(Formula::bounded_always(k, self.unary()?))
            }
            Some(Tok::Finally) => Err(LtlError::Unsafe {
                pos,
                msg: "eventually".into(),
            }),
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<Formula, LtlError> {
        let pos = self.pos();
        match self.bump() {
            Some((_, Tok::Ident(name))) => Ok(Formula::Atom(self.atom(pos, &name)?)),
            Some((_, Tok::True)) => Ok(Formula::True),
            Some((_, Tok::False)) => Ok(Formula::False),
            Some((_, Tok::LParen)) => {
                let f = self.expr()?;
                match self.bump() {
                    Some((_, Tok::RParen)) => Ok(f),
                    _ => Err(LtlError::Syntax {
                        pos: self.toks.get(self.at - 1).map_or(self.end, |t| t.0),
                        msg: "expected ')'".into(),
                    }),
                }
            }
            Some((_, t)) => Err(LtlError::Syntax {
                pos,
                msg: format!("unexpected {t:?}"),
            }),
            None => Err(LtlError::Syntax {
                pos,
                msg: "unexpected end of formula".into(),
            }),
        }
    }
}
