//! Arithmetic formula language: `Divide(Add(85, Add(88, 95)), 3)`.
//!
//! Operators are case-insensitive and whitespace is ignored between tokens.
//! Constants (`const_pi`, `const_100`) may be written bare or with `()`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Nesting deeper than this is rejected as a syntax error.
pub const MAX_DEPTH: usize = 512;

/// Digits after the decimal point in rendered tool results.
pub const RESULT_DECIMALS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Operator {
    Add,
    Subtract,
    Multiply,
    Divide,
    Power,
    Sqrt,
    Log,
    Negate,
    Inverse,
    Max,
    Min,
    Floor,
    Abs,
    ConstPi,
    Const100,
}

impl Operator {
    pub const ALL: [Operator; 15] = [
        Operator::Add,
        Operator::Subtract,
        Operator::Multiply,
        Operator::Divide,
        Operator::Power,
        Operator::Sqrt,
        Operator::Log,
        Operator::Negate,
        Operator::Inverse,
        Operator::Max,
        Operator::Min,
        Operator::Floor,
        Operator::Abs,
        Operator::ConstPi,
        Operator::Const100,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Operator::Add => "add",
            Operator::Subtract => "subtract",
            Operator::Multiply => "multiply",
            Operator::Divide => "divide",
            Operator::Power => "power",
            Operator::Sqrt => "sqrt",
            Operator::Log => "log",
            Operator::Negate => "negate",
            Operator::Inverse => "inverse",
            Operator::Max => "max",
            Operator::Min => "min",
            Operator::Floor => "floor",
            Operator::Abs => "abs",
            Operator::ConstPi => "const_pi",
            Operator::Const100 => "const_100",
        }
    }

    /// Name as written in canonical formulas (`Add`, `Const_pi`).
    pub fn display_name(self) -> String {
        let name = self.name();
        let mut chars = name.chars();
        match chars.next() {
            Some(first) => first.to_ascii_uppercase().to_string() + chars.as_str(),
            None => String::new(),
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Operator::Add
            | Operator::Subtract
            | Operator::Multiply
            | Operator::Divide
            | Operator::Power
            | Operator::Max
            | Operator::Min => 2,
            Operator::Sqrt
            | Operator::Log
            | Operator::Negate
            | Operator::Inverse
            | Operator::Floor
            | Operator::Abs => 1,
            Operator::ConstPi | Operator::Const100 => 0,
        }
    }
}

impl FromStr for Operator {
    type Err = FormulaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        Operator::ALL
            .into_iter()
            .find(|op| op.name() == lower)
            .ok_or(FormulaError::UnknownOperator(lower))
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display_name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Literal(f64),
    Apply(Operator, Vec<Expr>),
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Literal(v) => write!(f, "{v}"),
            Expr::Apply(op, args) if args.is_empty() => write!(f, "{op}"),
            Expr::Apply(op, args) => {
                write!(f, "{op}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Formula {
    pub root: Expr,
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MathError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("square root of a negative number")]
    SqrtOfNegative,
    #[error("logarithm of a non-positive number")]
    LogOfNonPositive,
    #[error("result is not a finite number")]
    NonFinite,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormulaError {
    #[error("syntax error at byte {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown operator '{0}'")]
    UnknownOperator(String),
    #[error("operator '{operator}' takes {want} argument(s), got {got}")]
    Arity {
        operator: String,
        got: usize,
        want: usize,
    },
    #[error("math error: {0}")]
    Math(#[from] MathError),
}

struct Parser<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn syntax(&self, message: impl Into<String>) -> FormulaError {
        FormulaError::Syntax {
            position: self.pos,
            message: message.into(),
        }
    }

    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn skip_ws(&mut self) {
        let rest = self.rest();
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn eat(&mut self, ch: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(ch) {
            self.pos += ch.len_utf8();
            true
        } else {
            false
        }
    }

    fn expr(&mut self, depth: usize) -> Result<Expr, FormulaError> {
        self.skip_ws();
        if depth > MAX_DEPTH {
            return Err(self.syntax("formula nested too deeply"));
        }
        match self.peek() {
            None => Err(self.syntax("unexpected end of formula")),
            Some(c) if c.is_ascii_digit() || c == '.' || c == '-' || c == '+' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == '_' => self.application(depth),
            Some(c) => Err(self.syntax(format!("unexpected character {c:?}"))),
        }
    }

    fn number(&mut self) -> Result<Expr, FormulaError> {
        let start = self.pos;
        let bytes = self.text.as_bytes();
        let mut end = start;
        if matches!(bytes.get(end), Some(b'-' | b'+')) {
            end += 1;
        }
        let digits_start = end;
        while end < bytes.len() && (bytes[end].is_ascii_digit() || bytes[end] == b'.') {
            end += 1;
        }
        if end == digits_start {
            return Err(self.syntax("expected a number"));
        }
        if matches!(bytes.get(end), Some(b'e' | b'E')) {
            let mut exp = end + 1;
            if matches!(bytes.get(exp), Some(b'-' | b'+')) {
                exp += 1;
            }
            if bytes.get(exp).is_some_and(u8::is_ascii_digit) {
                while bytes.get(exp).is_some_and(u8::is_ascii_digit) {
                    exp += 1;
                }
                end = exp;
            }
        }
        let literal = &self.text[start..end];
        let value: f64 = literal
            .parse()
            .map_err(|_| self.syntax(format!("invalid number {literal:?}")))?;
        if !value.is_finite() {
            return Err(self.syntax(format!("number out of range {literal:?}")));
        }
        self.pos = end;
        Ok(Expr::Literal(value))
    }

    fn application(&mut self, depth: usize) -> Result<Expr, FormulaError> {
        let start = self.pos;
        let len = self
            .rest()
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(self.rest().len());
        let name = &self.text[start..start + len];
        self.pos += len;
        let op: Operator = name.parse()?;
        let mut args = Vec::new();
        if self.eat('(')
            && !self.eat(')') {
                loop {
                    args.push(self.expr(depth + 1)?);
                    if self.eat(')') {
                        break;
                    }
                    if !self.eat(',') {
                        self.skip_ws();
                        return Err(self.syntax("expected ',' or ')'"));
                    }
                }
            }
        if args.len() != op.arity() {
            return Err(FormulaError::Arity {
                operator: op.name().to_string(),
                got: args.len(),
                want: op.arity(),
            });
        }
        Ok(Expr::Apply(op, args))
    }
}

pub fn parse_formula(text: &str) -> Result<Formula, FormulaError> {
    let mut parser = Parser { text, pos: 0 };
    let root = parser.expr(0)?;
    parser.skip_ws();
    if parser.pos != text.len() {
        return Err(parser.syntax("unexpected trailing input"));
    }
    Ok(Formula { root })
}

fn finite(v: f64) -> Result<f64, MathError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(MathError::NonFinite)
    }
}

fn apply(op: Operator, args: &[f64]) -> Result<f64, MathError> {
    let v = match op {
        Operator::Add => args[0] + args[1],
        Operator::Subtract => args[0] - args[1],
        Operator::Multiply => args[0] * args[1],
        Operator::Divide => {
            if args[1] == 0.0 {
                return Err(MathError::DivisionByZero);
            }
            args[0] / args[1]
        }
        Operator::Power => args[0].powf(args[1]),
        Operator::Sqrt => {
            if args[0] < 0.0 {
                return Err(MathError::SqrtOfNegative);
            }
            args[0].sqrt()
        }
        Operator::Log => {
            if args[0] <= 0.0 {
                return Err(MathError::LogOfNonPositive);
            }
            args[0].ln()
        }
        Operator::Negate => -args[0],
        Operator::Inverse => {
            if args[0] == 0.0 {
                return Err(MathError::DivisionByZero);
            }
            1.0 / args[0]
        }
        Operator::Max => args[0].max(args[1]),
        Operator::Min => args[0].min(args[1]),
        Operator::Floor => args[0].floor(),
        Operator::Abs => args[0].abs(),
        Operator::ConstPi => std::f64::consts::PI,
        Operator::Const100 => 100.0,
    };
    finite(v)
}

fn eval_expr(expr: &Expr) -> Result<f64, MathError> {
    match expr {
        Expr::Literal(v) => finite(*v),
        Expr::Apply(op, args) => {
            let mut values = Vec::with_capacity(args.len());
            for a in args {
                values.push(eval_expr(a)?);
            }
            apply(*op, &values)
        }
    }
}

/// Evaluates arguments left to right, depth first, in double precision.
pub fn eval_formula(formula: &Formula) -> Result<f64, MathError> {
    eval_expr(&formula.root)
}

/// Fixed `decimals` digits, then trailing zeros and a bare point trimmed.
pub fn render_rounded(value: f64, decimals: usize) -> String {
    let mut s = format!("{value:.decimals$}");
    if s.contains('.') {
        let trimmed = s.trim_end_matches('0').trim_end_matches('.').len();
        s.truncate(trimmed);
    }
    if s == "-0" {
        s = "0".to_string();
    }
    s
}

/// Canonical text of a tool result value.
pub fn render_value(value: f64) -> String {
    render_rounded(value, RESULT_DECIMALS)
}

/// Parse, evaluate and render in one step.
pub fn solve(text: &str) -> Result<String, FormulaError> {
    let formula = parse_formula(text)?;
    Ok(render_value(eval_formula(&formula)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lit(v: f64) -> Expr {
        Expr::Literal(v)
    }

    #[test]
    fn parses_worked_example() {
        let f = parse_formula("Divide(Add(85, Add(88, 95)), 3)").unwrap();
        assert_eq!(
            f.root,
            Expr::Apply(
                Operator::Divide,
                vec![
                    Expr::Apply(
                        Operator::Add,
                        vec![lit(85.0), Expr::Apply(Operator::Add, vec![lit(88.0), lit(95.0)])]
                    ),
                    lit(3.0)
                ]
            )
        );
        assert_eq!(solve("Divide(Add(85, Add(88, 95)), 3)").unwrap(), "89.3333333333");
        assert_eq!(f.to_string(), "Divide(Add(85, Add(88, 95)), 3)");
    }

    #[test]
    fn literals_whitespace_and_case() {
        assert_eq!(parse_formula("42").unwrap().root, lit(42.0));
        assert_eq!(parse_formula("  -1.5e2 ").unwrap().root, lit(-150.0));
        assert_eq!(solve(" aDd ( 1 ,\n2 ) ").unwrap(), "3");
        assert_eq!(solve("Multiply(const_pi, 2)").unwrap(), "6.2831853072");
        assert_eq!(solve("Const_100()").unwrap(), "100");
    }

    #[test]
    fn error_kinds() {
        assert_eq!(
            parse_formula("Frobnicate(1)"),
            Err(FormulaError::UnknownOperator("frobnicate".into()))
        );
        assert_eq!(
            parse_formula("Add(1)"),
            Err(FormulaError::Arity {
                operator: "add".into(),
                got: 1,
                want: 2
            })
        );
        assert!(matches!(parse_formula("Sqrt"), Err(FormulaError::Arity { got: 0, .. })));
        assert!(matches!(
            parse_formula("Add(1, 2"),
            Err(FormulaError::Syntax { position: 8, .. })
        ));
        assert!(matches!(
            parse_formula("Add(1, 2) x"),
            Err(FormulaError::Syntax { position: 10, .. })
        ));
        assert!(matches!(parse_formula(""), Err(FormulaError::Syntax { position: 0, .. })));
        assert!(matches!(parse_formula("1e999"), Err(FormulaError::Syntax { .. })));
        assert!(matches!(parse_formula("Add(1,,2)"), Err(FormulaError::Syntax { .. })));
    }

    #[test]
    fn math_errors_are_reported() {
        let eval = |s: &str| eval_formula(&parse_formula(s).unwrap());
        assert_eq!(eval("Divide(1, 0)"), Err(MathError::DivisionByZero));
        assert_eq!(eval("Inverse(0)"), Err(MathError::DivisionByZero));
        assert_eq!(eval("Sqrt(-4)"), Err(MathError::SqrtOfNegative));
        assert_eq!(eval("Log(0)"), Err(MathError::LogOfNonPositive));
        assert_eq!(eval("Power(10, 400)"), Err(MathError::NonFinite));
        assert_eq!(eval("Power(-8, 0.5)"), Err(MathError::NonFinite));
        assert_eq!(solve("Divide(1, 0)"), Err(FormulaError::Math(MathError::DivisionByZero)));
    }

    #[test]
    fn deep_nesting_is_a_syntax_error() {
        let deep = "Negate(".repeat(MAX_DEPTH + 5) + "1" + &")".repeat(MAX_DEPTH + 5);
        assert!(matches!(parse_formula(&deep), Err(FormulaError::Syntax { .. })));
        let ok = "Negate(".repeat(100) + "1" + &")".repeat(100);
        assert_eq!(solve(&ok).unwrap(), "1");
    }

    #[test]
    fn rendering() {
        assert_eq!(render_value(4.0), "4");
        assert_eq!(render_value(-0.0), "0");
        assert_eq!(render_value(-1e-12), "0");
        assert_eq!(render_value(0.1 + 0.2), "0.3");
        assert_eq!(render_rounded(268.0 / 3.0, 2), "89.33");
        assert_eq!(render_rounded(2.5, 0), "2");
        assert_eq!(render_rounded(-3.10, 2), "-3.1");
    }
}
