//! Checks gold formulas against their recorded answers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::formula::{eval_formula, parse_formula, FormulaError};

/// A value matches an answer when `|value − answer| ≤ max(abs, rel·|answer|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidityTolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Default for ValidityTolerance {
    fn default() -> Self {
        ValidityTolerance {
            abs: 1e-2,
            rel: 0.005,
        }
    }
}

impl ValidityTolerance {
    pub fn accepts(&self, value: f64, answer: f64) -> bool {
        (value - answer).abs() <= self.abs.max(self.rel * answer.abs())
    }
}

/// Trims whitespace and drops thousands separators before parsing.
pub fn parse_answer(text: &str) -> Option<f64> {
    let cleaned: String = text.trim().chars().filter(|&c| c != ',').collect();
    cleaned.parse::<f64>().ok().filter(|v| v.is_finite())
}

pub const SYNTAX_ERROR: &str = "syntax_error";
pub const UNKNOWN_OPERATOR: &str = "unknown_operator";
pub const ARITY_ERROR: &str = "arity_error";
pub const MATH_ERROR: &str = "math_error";
pub const UNPARSEABLE_ANSWER: &str = "unparseable_answer";
pub const MISMATCH: &str = "mismatch";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub valid_count: usize,
    pub invalid_count: usize,
    /// Invalid records by reason; counts sum to `invalid_count`.
    pub error_breakdown: BTreeMap<String, usize>,
}

impl ValidityReport {
    pub fn total(&self) -> usize {
        self.valid_count + self.invalid_count
    }

    pub fn valid_fraction(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.valid_count as f64 / self.total() as f64
        }
    }

    /// One-line summary, e.g. `140/200 valid (70.0% valid)`.
    pub fn summary(&self) -> String {
        format!(
            "{}/{} valid ({:.1}% valid)",
            self.valid_count,
            self.total(),
            100.0 * self.valid_fraction()
        )
    }
}

/// Reason a record is invalid, or `None` when valid.
pub fn classify(formula: &str, answer: &str, tol: &ValidityTolerance) -> Option<&'static str> {
    let value = match parse_formula(formula) {
        Err(FormulaError::UnknownOperator(_)) => return Some(UNKNOWN_OPERATOR),
        Err(FormulaError::Arity { .. }) => return Some(ARITY_ERROR),
        Err(_) => return Some(SYNTAX_ERROR),
        Ok(f) => match eval_formula(&f) {
            Ok(v) => v,
            Err(_) => return Some(MATH_ERROR),
        },
    };
    match parse_answer(answer) {
        None => Some(UNPARSEABLE_ANSWER),
        Some(a) if tol.accepts(value, a) => None,
        Some(_) => Some(MISMATCH),
    }
}

pub fn check_validity<S: AsRef<str>>(records: &[(S, S)], tol: &ValidityTolerance) -> ValidityReport {
    let mut report = ValidityReport {
        valid_count: 0,
        invalid_count: 0,
        error_breakdown: BTreeMap::new(),
    };
    for (formula, answer) in records {
        match classify(formula.as_ref(), answer.as_ref(), tol) {
            None => report.valid_count += 1,
            Some(reason) => {
                report.invalid_count += 1;
                *report.error_breakdown.entry(reason.to_string()).or_default() += 1;
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example_is_valid() {
        let tol = ValidityTolerance::default();
        assert_eq!(classify("Divide(Add(85, Add(88, 95)), 3)", "89.33", &tol), None);
        assert_eq!(classify("Add(1,1)", "3", &tol), Some(MISMATCH));
        assert_eq!(classify("Add(1,1)", "two", &tol), Some(UNPARSEABLE_ANSWER));
        assert_eq!(classify("Foo(1)", "1", &tol), Some(UNKNOWN_OPERATOR));
        assert_eq!(classify("Add(1)", "1", &tol), Some(ARITY_ERROR));
        assert_eq!(classify("Add(1,", "1", &tol), Some(SYNTAX_ERROR));
        assert_eq!(classify("Divide(1, 0)", "1", &tol), Some(MATH_ERROR));
        assert_eq!(classify("Multiply(1000, 1000)", " 1,000,000 ", &tol), None);
    }

    #[test]
    fn tolerance_boundaries() {
        let tol = ValidityTolerance::default();
        assert!(tol.accepts(1.0, 1.009));
        assert!(!tol.accepts(1.0, 1.02));
        assert!(tol.accepts(1000.0, 1004.9));
        assert!(!tol.accepts(1000.0, 1006.0));
    }

    #[test]
    fn report_partitions_records() {
        let records = vec![
            ("Add(1, 1)", "2"),
            ("Add(1, 1)", "3"),
            ("Sqrt(-1)", "1"),
            ("Bogus(2)", "2"),
        ];
        let r = check_validity(&records, &ValidityTolerance::default());
        assert_eq!(r.valid_count, 1);
        assert_eq!(r.invalid_count, 3);
        assert_eq!(r.error_breakdown.values().sum::<usize>(), 3);
        assert_eq!(r.summary(), "1/4 valid (25.0% valid)");
    }
}
