//! Kernel text grammar:
//!
//! ```text
//! Expr := Term ('+' Term)*
//! Term := Atom ('*' Atom)*
//! Atom := KindName | '(' Expr ')'
//! ```

use thiserror::Error;

use super::kernel::{KernelExpr, KernelKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KernelParseError {
    #[error("empty kernel expression")]
    Empty,
    #[error("unknown kernel `{name}` at col {col}")]
    UnknownKind { name: String, col: usize },
    #[error("unbalanced parenthesis at col {col}")]
    Unbalanced { col: usize },
    #[error("unexpected `{found}` at col {col}")]
    Unexpected { found: String, col: usize },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Name(String),
    Plus,
    Star,
    Open,
    Close,
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, KernelParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        match c {
            c if c.is_whitespace() => i += 1,
            '+' => {
                out.push((Tok::Plus, col));
                i += 1;
            }
            '*' | '×' => {
                out.push((Tok::Star, col));
                i += 1;
            }
            '(' => {
                out.push((Tok::Open, col));
                i += 1;
            }
            ')' => {
                out.push((Tok::Close, col));
                i += 1;
            }
            c if c.is_alphanumeric() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push((Tok::Name(chars[start..i].iter().collect()), col));
            }
            other => {
                return Err(KernelParseError::Unexpected { found: other.to_string(), col });
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    at: usize,
    end_col: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(t, _)| t)
    }

    fn col(&self) -> usize {
        self.toks.get(self.at).map_or(self.end_col, |(_, c)| *c)
    }

    fn expr(&mut self) -> Result<KernelExpr, KernelParseError> {
        let mut lhs = self.term()?;
        while self.peek() == Some(&Tok::Plus) {
            self.at += 1;
            let rhs = self.term()?;
            lhs = KernelExpr::sum(lhs, rhs);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<KernelExpr, KernelParseError> {
        let mut lhs = self.atom()?;
        while self.peek() == Some(&Tok::Star) {
            self.at += 1;
            let rhs = self.atom()?;
            lhs = KernelExpr::product(lhs, rhs);
        }
        Ok(lhs)
    }

    fn atom(&mut self) -> Result<KernelExpr, KernelParseError> {
        let col = self.col();
        match self.toks.get(self.at).cloned() {
            Some((Tok::Name(name), _)) => {
                self.at += 1;
                KernelKind::from_name(&name)
                    .map(KernelExpr::base)
                    .ok_or(KernelParseError::UnknownKind { name, col })
            }
            Some((Tok::Open, _)) => {
                self.at += 1;
                let e = self.expr()?;
                if self.peek() == Some(&Tok::Close) {
                    self.at += 1;
                    Ok(e)
                } else {
                    Err(KernelParseError::Unbalanced { col })
                }
            }
            Some((Tok::Close, c)) => Err(KernelParseError::Unbalanced { col: c }),
            Some((tok, c)) => Err(KernelParseError::Unexpected { found: tok_text(&tok), col: c }),
            None => Err(KernelParseError::Unexpected { found: "end of input".into(), col }),
        }
    }
}

fn tok_text(t: &Tok) -> String {
    match t {
        Tok::Name(s) => s.clone(),
        Tok::Plus => "+".into(),
        Tok::Star => "*".into(),
        Tok::Open => "(".into(),
        Tok::Close => ")".into(),
    }
}

/// Parses a kernel expression; every base kernel gets default parameters.
pub fn parse_kernel(text: &str) -> Result<KernelExpr, KernelParseError> {
    let toks = lex(text)?;
    if toks.is_empty() {
        return Err(KernelParseError::Empty);
    }
    let mut p = Parser { toks, at: 0, end_col: text.chars().count() + 1 };
    let e = p.expr()?;
    match p.toks.get(p.at) {
        None => Ok(e),
        Some((Tok::Close, c)) => Err(KernelParseError::Unbalanced { col: *c }),
        Some((t, c)) => Err(KernelParseError::Unexpected { found: tok_text(t), col: *c }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grouping_and_precedence() {
        let e = parse_kernel("(Linear + Periodic) * ExpQuad").unwrap();
        let want = KernelExpr::product(
            KernelExpr::sum(KernelExpr::base(KernelKind::Linear), KernelExpr::base(KernelKind::Periodic)),
            KernelExpr::base(KernelKind::ExpQuad),
        );
        assert_eq!(e, want);

        let e = parse_kernel("Linear + Periodic * ExpQuad").unwrap();
        let want = KernelExpr::sum(
            KernelExpr::base(KernelKind::Linear),
            KernelExpr::product(KernelExpr::base(KernelKind::Periodic), KernelExpr::base(KernelKind::ExpQuad)),
        );
        assert_eq!(e, want);
    }

    #[test]
    fn errors() {
        assert_eq!(
            parse_kernel("Banana"),
            Err(KernelParseError::UnknownKind { name: "Banana".into(), col: 1 })
        );
        assert_eq!(parse_kernel("   "), Err(KernelParseError::Empty));
        assert!(matches!(parse_kernel("(Linear + ExpQuad"), Err(KernelParseError::Unbalanced { col: 1 })));
        assert!(matches!(parse_kernel("Linear)"), Err(KernelParseError::Unbalanced { col: 7 })));
        assert!(matches!(parse_kernel("Linear +"), Err(KernelParseError::Unexpected { .. })));
        assert!(matches!(parse_kernel("Linear + Periodic x"), Err(KernelParseError::Unexpected { col: 19, .. })));
    }

    fn arb_kernel() -> impl Strategy<Value = KernelExpr> {
        let leaf = prop::sample::select(KernelKind::AUGMENTED.to_vec()).prop_map(KernelExpr::base);
        leaf.prop_recursive(6, 32, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| KernelExpr::sum(a, b)),
                (inner.clone(), inner).prop_map(|(a, b)| KernelExpr::product(a, b)),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(e in arb_kernel()) {
            let printed = e.to_string();
            let back = parse_kernel(&printed).unwrap();
            prop_assert!(back.same_structure(&e), "{} -> {}", printed, back);
        }
    }
}
