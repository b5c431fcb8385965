use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::tools::validity::parse_answer;

/// How a sampled output is compared with the task target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MatchSpec {
    /// Both parse as numbers and `|a − b| ≤ max(abs_tol, rel_tol·|b|)`.
    NumericAbsRel { abs_tol: f64, rel_tol: f64 },
    /// Equal after [`normalize_answer`].
    NormalizedExact,
}

impl MatchSpec {
    pub fn math() -> Self {
        MatchSpec::NumericAbsRel {
            abs_tol: 1e-2,
            rel_tol: 0.005,
        }
    }

    pub fn qa() -> Self {
        MatchSpec::NormalizedExact
    }

    pub fn validate(&self) -> Result<(), String> {
        match *self {
            MatchSpec::NumericAbsRel { abs_tol, rel_tol } => {
                if abs_tol >= 0.0 && rel_tol >= 0.0 && abs_tol.is_finite() && rel_tol.is_finite() {
                    Ok(())
                } else {
                    Err(format!("tolerances must be finite and non-negative ({abs_tol}, {rel_tol})"))
                }
            }
            MatchSpec::NormalizedExact => Ok(()),
        }
    }
}

impl std::fmt::Display for MatchSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MatchSpec::NumericAbsRel { abs_tol, rel_tol } => write!(f, "numeric:{abs_tol},{rel_tol}"),
            MatchSpec::NormalizedExact => f.write_str("exact"),
        }
    }
}

/// `numeric` (default tolerances), `numeric:ABS,REL` or `exact`.
impl FromStr for MatchSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "exact" {
            return Ok(MatchSpec::NormalizedExact);
        }
        if s == "numeric" {
            return Ok(MatchSpec::math());
        }
        let rest = s
            .strip_prefix("numeric:")
            .ok_or_else(|| format!("unknown threshold {s:?}; expected numeric:ABS,REL or exact"))?;
        let (abs, rel) = rest
            .split_once(',')
            .ok_or_else(|| format!("threshold {s:?} needs two tolerances"))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| format!("bad tolerance {v:?}: {e}"))
        };
        let spec = MatchSpec::NumericAbsRel {
            abs_tol: parse(abs)?,
            rel_tol: parse(rel)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Lowercase, drop punctuation, collapse whitespace, drop a leading article.
pub fn normalize_answer(text: &str) -> String {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    let mut words: Vec<&str> = cleaned.split_whitespace().collect();
    if matches!(words.first(), Some(&("a" | "an" | "the"))) {
        words.remove(0);
    }
    words.join(" ")
}

pub fn matches(candidate: &str, target: &str, spec: &MatchSpec) -> bool {
    match *spec {
        MatchSpec::NumericAbsRel { abs_tol, rel_tol } => {
            match (parse_answer(candidate), parse_answer(target)) {
                (Some(a), Some(b)) => (a - b).abs() <= abs_tol.max(rel_tol * b.abs()),
                _ => false,
            }
        }
        MatchSpec::NormalizedExact => normalize_answer(candidate) == normalize_answer(target),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_examples() {
        assert!(matches("89.33", "89.33", &MatchSpec::math()));
        assert!(matches("89.3333333333", "89.33", &MatchSpec::math()));
        let tight = MatchSpec::NumericAbsRel {
            abs_tol: 0.01,
            rel_tol: 0.0,
        };
        assert!(!matches("89.35", "89.33", &tight));
        assert!(matches("1,000", "1000", &tight));
        assert!(!matches("many", "3", &MatchSpec::math()));
    }

    #[test]
    fn normalized_examples() {
        assert!(matches("The boiling process.", "the boiling process", &MatchSpec::qa()));
        assert!(matches("  An  Apple!", "apple", &MatchSpec::qa()));
        assert!(!matches("boiling", "the boiling process", &MatchSpec::qa()));
        assert_eq!(normalize_answer("the the end"), "the end");
    }

    #[test]
    fn parses_threshold_specs() {
        assert_eq!("exact".parse::<MatchSpec>().unwrap(), MatchSpec::NormalizedExact);
        assert_eq!("numeric".parse::<MatchSpec>().unwrap(), MatchSpec::math());
        assert_eq!(
            "numeric:0.5,0".parse::<MatchSpec>().unwrap(),
            MatchSpec::NumericAbsRel {
                abs_tol: 0.5,
                rel_tol: 0.0
            }
        );
        assert!("numeric:-1,0".parse::<MatchSpec>().is_err());
        assert!("fuzzy".parse::<MatchSpec>().is_err());
        let s = MatchSpec::math().to_string();
        assert_eq!(s.parse::<MatchSpec>().unwrap(), MatchSpec::math());
    }
}
