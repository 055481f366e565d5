//! Boolean queries over classifier scores.
//!
//! `AND`/`OR`/`NOT` (also `&`, `|`, `!`) combine operands, with precedence
//! `NOT` > `AND` > `OR`, left associative. Operands are bare identifiers or
//! double-quoted strings. A score is read as the probability that the operand
//! holds, and operands are treated as independent:
//!
//! * `NOT a` = `1 - a`
//! * `a AND b` = `a * b`
//! * `a OR b` = `a + b - a * b`
//!
//! A repeated operand is one event read twice, so `a AND a` is `a * a`.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LogicError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("syntax error at byte {position}: {message}")]
    SyntaxError { position: usize, message: String },
    #[error("unknown operand {0:?}")]
    UnknownOperand(String),
    #[error("no score for operand {0:?}")]
    MissingScore(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Operand(String),
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    And,
    Or,
    Not,
    Open,
    Close,
}

fn is_bare_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '-' | '.' | ':' | '/')
}

fn keyword(word: &str) -> Option<Token> {
    match word.to_ascii_uppercase().as_str() {
        "AND" => Some(Token::And),
        "OR" => Some(Token::Or),
        "NOT" => Some(Token::Not),
        _ => None,
    }
}

fn syntax(position: usize, message: impl Into<String>) -> LogicError {
    LogicError::SyntaxError {
        position,
        message: message.into(),
    }
}

fn tokenize(src: &str) -> Result<Vec<(usize, Token)>, LogicError> {
    let mut out = Vec::new();
    let mut chars = src.char_indices().peekable();
    while let Some(&(pos, c)) = chars.peek() {
        match c {
            c if c.is_whitespace() => {
                chars.next();
            }
            '(' | ')' | '&' | '|' | '!' => {
                chars.next();
                out.push((
                    pos,
                    match c {
                        '(' => Token::Open,
                        ')' => Token::Close,
                        '&' => Token::And,
                        '|' => Token::Or,
                        _ => Token::Not,
                    },
                ));
            }
            '"' => {
                chars.next();
                let mut s = String::new();
                loop {
                    match chars.next() {
                        None => return Err(syntax(pos, "unterminated quoted operand")),
                        Some((_, '"')) => break,
                        Some((p, '\\')) => match chars.next() {
                            Some((_, e @ ('"' | '\\'))) => s.push(e),
                            _ => return Err(syntax(p, "invalid escape in quoted operand")),
                        },
                        Some((_, ch)) => s.push(ch),
                    }
                }
                if s.is_empty() {
                    return Err(syntax(pos, "empty quoted operand"));
                }
                out.push((pos, Token::Ident(s)));
            }
            c if is_bare_char(c) => {
                let mut s = String::new();
                while let Some(&(_, ch)) = chars.peek() {
                    if !is_bare_char(ch) {
                        break;
                    }
                    s.push(ch);
                    chars.next();
                }
                out.push((pos, keyword(&s).unwrap_or(Token::Ident(s))));
            }
            other => return Err(syntax(pos, format!("unexpected character {other:?}"))),
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    at: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.at).map(|(_, t)| t)
    }

    fn pos(&self) -> usize {
        self.tokens.get(self.at).map_or(self.end, |(p, _)| *p)
    }

    fn or(&mut self) -> Result<Expr, LogicError> {
        let mut lhs = self.and()?;
        while self.peek() == Some(&Token::Or) {
            self.at += 1;
            lhs = Expr::Or(Box::new(lhs), Box::new(self.and()?));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, LogicError> {
        let mut lhs = self.not()?;
        while self.peek() == Some(&Token::And) {
            self.at += 1;
            lhs = Expr::And(Box::new(lhs), Box::new(self.not()?));
        }
        Ok(lhs)
    }

    fn not(&mut self) -> Result<Expr, LogicError> {
        if self.peek() == Some(&Token::Not) {
            self.at += 1;
            return Ok(Expr::Not(Box::new(self.not()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, LogicError> {
        let pos = self.pos();
        match self.tokens.get(self.at).map(|(_, t)| t.clone()) {
            Some(Token::Ident(name)) => {
                self.at += 1;
                Ok(Expr::Operand(name))
            }
            Some(Token::Open) => {
                self.at += 1;
                let inner = self.or()?;
                if self.peek() != Some(&Token::Close) {
                    return Err(syntax(self.pos(), "expected ')'"));
                }
                self.at += 1;
                Ok(inner)
            }
            Some(t) => Err(syntax(
                pos,
                format!("expected operand, found {}", describe(&t)),
            )),
            None => Err(syntax(pos, "expected operand, found end of query")),
        }
    }
}

fn describe(t: &Token) -> &'static str {
    match t {
        Token::Ident(_) => "operand",
        Token::And => "AND",
        Token::Or => "OR",
        Token::Not => "NOT",
        Token::Open => "'('",
        Token::Close => "')'",
    }
}

pub fn parse_query(src: &str) -> Result<Expr, LogicError> {
    let tokens = tokenize(src)?;
    if tokens.is_empty() {
        return Err(LogicError::EmptyQuery);
    }
    let mut p = Parser {
        tokens,
        at: 0,
        end: src.len(),
    };
    let expr = p.or()?;
    if p.at < p.tokens.len() {
        let t = p.tokens[p.at].1.clone();
        return Err(syntax(p.pos(), format!("unexpected {}", describe(&t))));
    }
    Ok(expr)
}

/// Parses and resolves every operand against a registry of known names.
pub fn parse_registered(src: &str, known: impl Fn(&str) -> bool) -> Result<Expr, LogicError> {
    let expr = parse_query(src)?;
    expr.check_operands(known)?;
    Ok(expr)
}

impl Expr {
    /// Distinct operand names, sorted.
    pub fn operands(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.collect(&mut out);
        out
    }

    fn collect<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            Expr::Operand(n) => {
                out.insert(n);
            }
            Expr::Not(e) => e.collect(out),
            Expr::And(a, b) | Expr::Or(a, b) => {
                a.collect(out);
                b.collect(out);
            }
        }
    }

    /// Fails on the first operand (in sorted order) that `known` rejects.
    pub fn check_operands(&self, known: impl Fn(&str) -> bool) -> Result<(), LogicError> {
        match self.operands().into_iter().find(|n| !known(n)) {
            Some(n) => Err(LogicError::UnknownOperand(n.to_string())),
            None => Ok(()),
        }
    }

    /// Truth degree given a score per operand. Scores are clamped to `[0, 1]`.
    pub fn eval_with(&self, score: &mut impl FnMut(&str) -> f64) -> f64 {
        self.eval_pair(score).0
    }

    // Carries (p, 1 - p) computed independently so negation is a swap.
    fn eval_pair(&self, score: &mut impl FnMut(&str) -> f64) -> (f64, f64) {
        match self {
            Expr::Operand(n) => {
                let s = score(n).clamp(0.0, 1.0);
                (s, 1.0 - s)
            }
            Expr::Not(e) => {
                let (p, q) = e.eval_pair(score);
                (q, p)
            }
            Expr::And(a, b) => {
                let (pa, _) = a.eval_pair(score);
                let (pb, _) = b.eval_pair(score);
                let p = (pa * pb).clamp((pa + pb - 1.0).max(0.0), pa.min(pb));
                (p, 1.0 - pa * pb)
            }
            Expr::Or(a, b) => {
                let (pa, qa) = a.eval_pair(score);
                let (pb, qb) = b.eval_pair(score);
                let p = (pa + pb - pa * pb).clamp(pa.max(pb), (pa + pb).min(1.0));
                (p, qa * qb)
            }
        }
    }

    pub fn evaluate(&self, scores: &HashMap<String, f64>) -> Result<f64, LogicError> {
        if let Some(n) = self
            .operands()
            .into_iter()
            .find(|n| !scores.contains_key(*n))
        {
            return Err(LogicError::MissingScore(n.to_string()));
        }
        Ok(self.eval_with(&mut |n| scores[n]))
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Or(..) => 1,
            Expr::And(..) => 2,
            Expr::Not(_) => 3,
            Expr::Operand(_) => 4,
        }
    }

    fn fmt_child(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        if self.precedence() < min {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

fn needs_quotes(name: &str) -> bool {
    name.is_empty() || !name.chars().all(is_bare_char) || keyword(name).is_some()
}

/// Prints with the fewest parentheses that re-parse to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Operand(n) if needs_quotes(n) => {
                write!(f, "\"{}\"", n.replace('\\', "\\\\").replace('"', "\\\""))
            }
            Expr::Operand(n) => f.write_str(n),
            Expr::Not(e) => {
                f.write_str("NOT ")?;
                e.fmt_child(f, 3)
            }
            Expr::And(a, b) => {
                a.fmt_child(f, 2)?;
                f.write_str(" AND ")?;
                b.fmt_child(f, 3)
            }
            Expr::Or(a, b) => {
                a.fmt_child(f, 1)?;
                f.write_str(" OR ")?;
                b.fmt_child(f, 2)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn op(n: &str) -> Box<Expr> {
        Box::new(Expr::Operand(n.into()))
    }

    fn scores(pairs: &[(&str, f64)]) -> HashMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(
            parse_query("a OR b AND NOT c").unwrap(),
            Expr::Or(
                op("a"),
                Box::new(Expr::And(op("b"), Box::new(Expr::Not(op("c")))))
            )
        );
        assert_eq!(
            parse_query("a & b & c").unwrap(),
            Expr::And(Box::new(Expr::And(op("a"), op("b"))), op("c"))
        );
        assert_eq!(
            parse_query("a and b").unwrap(),
            parse_query("a AND b").unwrap()
        );
        assert_eq!(
            parse_query("!!x").unwrap(),
            Expr::Not(Box::new(Expr::Not(op("x"))))
        );
    }

    #[test]
    fn quoted_operands() {
        assert_eq!(
            parse_query(r#""not spam" | "say \"hi\"""#).unwrap(),
            Expr::Or(op("not spam"), op("say \"hi\""))
        );
    }

    #[test]
    fn errors() {
        assert_eq!(parse_query("  "), Err(LogicError::EmptyQuery));
        assert!(matches!(
            parse_query("a AND"),
            Err(LogicError::SyntaxError { position: 5, .. })
        ));
        assert!(matches!(
            parse_query("(a OR b"),
            Err(LogicError::SyntaxError { position: 7, .. })
        ));
        assert!(matches!(
            parse_query("a b"),
            Err(LogicError::SyntaxError { position: 2, .. })
        ));
        assert!(matches!(
            parse_query("a # b"),
            Err(LogicError::SyntaxError { position: 2, .. })
        ));
        assert_eq!(
            parse_registered("a AND zeta", |n| n == "a"),
            Err(LogicError::UnknownOperand("zeta".into()))
        );
        let e = parse_query("a AND zeta").unwrap();
        assert_eq!(
            e.evaluate(&scores(&[("a", 0.5)])),
            Err(LogicError::MissingScore("zeta".into()))
        );
    }

    #[test]
    fn semantics() {
        let s = scores(&[("a", 0.8), ("b", 0.5)]);
        let v = |q: &str| parse_query(q).unwrap().evaluate(&s).unwrap();
        assert!((v("a AND b") - 0.4).abs() < 1e-15);
        assert!((v("a OR b") - 0.9).abs() < 1e-15);
        assert!((v("NOT a") - 0.2).abs() < 1e-15);
        assert!((v("a AND a") - 0.64).abs() < 1e-15);
        let t = scores(&[("A", 0.9), ("B", 0.8), ("C", 0.3), ("D", 0.5)]);
        let w = |q: &str| parse_query(q).unwrap().evaluate(&t).unwrap();
        assert!((w("A AND B") - 0.72).abs() < 1e-15);
        assert!((w("NOT C") - 0.7).abs() < 1e-15);
        assert!((w("D OR D") - 0.75).abs() < 1e-15);
        assert_eq!(v("NOT NOT a"), 0.8);
    }

    #[test]
    fn minimal_parentheses() {
        for (src, want) in [
            ("(a AND b) OR c", "a AND b OR c"),
            ("a AND (b OR c)", "a AND (b OR c)"),
            ("a OR (b OR c)", "a OR (b OR c)"),
            ("(a OR b) OR c", "a OR b OR c"),
            ("NOT (a AND b)", "NOT (a AND b)"),
            ("NOT NOT a", "NOT NOT a"),
            (r#""and" OR "x y""#, r#""and" OR "x y""#),
        ] {
            assert_eq!(parse_query(src).unwrap().to_string(), want);
        }
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            "[a-d]".prop_map(Expr::Operand),
            Just(Expr::Operand("two words".into())),
            Just(Expr::Operand("or".into())),
        ];
        leaf.prop_recursive(5, 32, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|e| Expr::Not(Box::new(e))),
                (inner.clone(), inner.clone())
                    .prop_map(|(a, b)| Expr::And(Box::new(a), Box::new(b))),
                (inner.clone(), inner).prop_map(|(a, b)| Expr::Or(Box::new(a), Box::new(b))),
            ]
        })
    }

    proptest! {
        #[test]
        fn display_reparses(e in arb_expr()) {
            prop_assert_eq!(parse_query(&e.to_string()).unwrap(), e);
        }

        #[test]
        fn results_stay_in_unit_interval(e in arb_expr(), vals in prop::collection::vec(0.0f64..=1.0, 6)) {
            let names = ["a", "b", "c", "d", "two words", "or"];
            let s: HashMap<String, f64> =
                names.iter().zip(&vals).map(|(k, v)| (k.to_string(), *v)).collect();
            let v = e.evaluate(&s).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
