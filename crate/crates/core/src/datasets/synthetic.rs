//! Synthetic arithmetic word problems with known gold formulas.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetError, Provenance, TaskExample, TaskKind, TaskSetFile, ToolUseRecord};
use crate::tools::formula::{eval_formula, parse_formula, render_rounded, render_value};
use crate::tools::FormulaTool;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticOp {
    Add,
    Subtract,
    Multiply,
    Divide,
}

impl std::str::FromStr for SyntheticOp {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "add" => Ok(SyntheticOp::Add),
            "subtract" => Ok(SyntheticOp::Subtract),
            "multiply" => Ok(SyntheticOp::Multiply),
            "divide" => Ok(SyntheticOp::Divide),
            other => Err(DatasetError::Config(format!("unknown operator {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub count: usize,
    pub operand_min: i64,
    pub operand_max: i64,
    pub operators: Vec<SyntheticOp>,
    pub seed: u64,
    /// How many leading examples become bootstrap tool-use records.
    pub bootstrap: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            count: 500,
            operand_min: 2,
            operand_max: 999,
            operators: vec![
                SyntheticOp::Add,
                SyntheticOp::Subtract,
                SyntheticOp::Multiply,
                SyntheticOp::Divide,
            ],
            seed: 7,
            bootstrap: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticSet {
    pub tasks: TaskSetFile,
    pub bootstrap: Vec<ToolUseRecord>,
}

struct Template {
    /// Operators that must all be enabled.
    needs: &'static [SyntheticOp],
    operands: usize,
    /// `{a}`, `{b}`, `{c}` are operands.
    text: &'static str,
    formula: &'static str,
}

use SyntheticOp::*;

const TEMPLATES: &[Template] = &[
    Template { needs: &[Add], operands: 2, text: "A farmer has {a} sheep and buys {b} more. How many sheep does the farmer have now?", formula: "Add({a}, {b})" },
    Template { needs: &[Add], operands: 2, text: "There are {a} red marbles and {b} blue marbles in a jar. How many marbles are in the jar?", formula: "Add({a}, {b})" },
    Template { needs: &[Add], operands: 2, text: "A library lent {a} books on Monday and {b} books on Tuesday. How many books were lent in total?", formula: "Add({a}, {b})" },
    Template { needs: &[Subtract], operands: 2, text: "A tank holds {a} liters of water and {b} liters leak out. How many liters remain?", formula: "Subtract({a}, {b})" },
    Template { needs: &[Subtract], operands: 2, text: "A shop had {a} shirts and sold {b} of them. How many shirts are left?", formula: "Subtract({a}, {b})" },
    Template { needs: &[Subtract], operands: 2, text: "Tom scored {a} points fewer than Ann, who scored {b} points. How many points did Tom score?", formula: "Subtract({b}, {a})" },
    Template { needs: &[Multiply], operands: 2, text: "Each box holds {a} pens. How many pens are in {b} boxes?", formula: "Multiply({a}, {b})" },
    Template { needs: &[Multiply], operands: 2, text: "A train travels at {a} miles per hour for {b} hours. How many miles does it travel?", formula: "Multiply({a}, {b})" },
    Template { needs: &[Multiply], operands: 2, text: "A ticket costs {a} dollars. What do {b} tickets cost?", formula: "Multiply({a}, {b})" },
    Template { needs: &[Divide], operands: 2, text: "{a} candies are shared equally among {b} children. How many candies does each child get?", formula: "Divide({a}, {b})" },
    Template { needs: &[Divide], operands: 2, text: "A rope {a} meters long is cut into {b} equal pieces. How long is each piece?", formula: "Divide({a}, {b})" },
    Template { needs: &[Divide], operands: 2, text: "A car is driving {a} miles per hour, how many hours does it take to travel {b} miles?", formula: "Divide({b}, {a})" },
    Template { needs: &[Add, Divide], operands: 3, text: "If Lily's test scores are {a} , {b} and {c} out of 100 in 3 different subjects , what will be her average score?", formula: "Divide(Add({a}, Add({b}, {c})), 3)" },
];

fn fill(pattern: &str, values: &[i64]) -> String {
    let mut s = pattern.to_string();
    for (name, v) in ["{a}", "{b}", "{c}"].iter().zip(values) {
        s = s.replace(name, &v.to_string());
    }
    s
}

/// Generates a deterministic task set plus bootstrap records for the first
/// `spec.bootstrap` examples. Every target is the gold formula's value
/// rounded to two decimals.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticSet, DatasetError> {
    if spec.count == 0 {
        return Err(DatasetError::Config("count must be positive".into()));
    }
    if spec.operand_min > spec.operand_max {
        return Err(DatasetError::Config("operand_min exceeds operand_max".into()));
    }
    if spec.operators.is_empty() {
        return Err(DatasetError::Config("at least one operator is required".into()));
    }
    if spec.bootstrap > spec.count {
        return Err(DatasetError::Config("bootstrap exceeds count".into()));
    }
    if spec.operators.contains(&Divide) && spec.operand_min <= 0 && spec.operand_max >= 0 {
        return Err(DatasetError::Config(
            "operand range must exclude zero when divide is enabled".into(),
        ));
    }
    let templates: Vec<&Template> = TEMPLATES
        .iter()
        .filter(|t| t.needs.iter().all(|op| spec.operators.contains(op)))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut records = Vec::with_capacity(spec.count);
    let mut bootstrap = Vec::with_capacity(spec.bootstrap);
    for i in 0..spec.count {
        let tmpl = templates[rng.random_range(0..templates.len())];
        let values: Vec<i64> = (0..tmpl.operands)
            .map(|_| rng.random_range(spec.operand_min..=spec.operand_max))
            .collect();
        let input = fill(tmpl.text, &values);
        let formula = fill(tmpl.formula, &values);
        let value = parse_formula(&formula)
            .map_err(|e| DatasetError::Config(e.to_string()))
            .and_then(|f| eval_formula(&f).map_err(|e| DatasetError::Config(e.to_string())))?;
        let target = render_rounded(value, 2);
        let id = format!("syn-{}-{i:05}", spec.seed);
        if i < spec.bootstrap {
            bootstrap.push(ToolUseRecord {
                id: id.clone(),
                input: input.clone(),
                tool_label: FormulaTool::LABEL.to_string(),
                tool_input: formula.clone(),
                tool_output: render_value(value),
                output: target.clone(),
                round: 0,
                provenance: Provenance::Bootstrap,
            });
        }
        records.push(TaskExample {
            id,
            input,
            target,
            context: None,
            formula: Some(formula),
        });
    }
    Ok(SyntheticSet {
        tasks: TaskSetFile {
            kind: TaskKind::Synthetic,
            records,
            flagged: Vec::new(),
        },
        bootstrap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selfplay::{matches, MatchSpec};
    use crate::tools::solve;

    #[test]
    fn seeded_generation_is_deterministic() {
        let a = generate_synthetic(&SyntheticSpec::default()).unwrap();
        let b = generate_synthetic(&SyntheticSpec::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.tasks.records.len(), 500);
        assert_eq!(a.bootstrap.len(), 20);
        let c = generate_synthetic(&SyntheticSpec {
            seed: 8,
            ..Default::default()
        })
        .unwrap();
        assert_ne!(a.tasks.records, c.tasks.records);
    }

    #[test]
    fn targets_match_gold_formulas() {
        let set = generate_synthetic(&SyntheticSpec::default()).unwrap();
        for r in &set.tasks.records {
            let value = solve(r.formula.as_ref().unwrap()).unwrap();
            assert!(matches(&value, &r.target, &MatchSpec::math()), "{r:?}");
        }
        for (b, r) in set.bootstrap.iter().zip(&set.tasks.records) {
            assert_eq!(b.input, r.input);
            assert_eq!(b.tool_output, solve(&b.tool_input).unwrap());
            assert_eq!(b.output, r.target);
            assert!(b.render().is_ok());
        }
    }

    #[test]
    fn operator_subset_restricts_templates() {
        let set = generate_synthetic(&SyntheticSpec {
            operators: vec![Add],
            count: 50,
            bootstrap: 0,
            ..Default::default()
        })
        .unwrap();
        assert!(set
            .tasks
            .records
            .iter()
            .all(|r| r.formula.as_ref().unwrap().starts_with("Add(")));
    }

    #[test]
    fn large_number_split() {
        let set = generate_synthetic(&SyntheticSpec {
            operand_min: 10_000,
            operand_max: 1_000_000,
            count: 100,
            bootstrap: 0,
            seed: 11,
            ..Default::default()
        })
        .unwrap();
        for r in &set.tasks.records {
            let value = solve(r.formula.as_ref().unwrap()).unwrap();
            assert!(matches(&value, &r.target, &MatchSpec::math()));
        }
    }

    #[test]
    fn config_errors() {
        let bad = |spec: SyntheticSpec| generate_synthetic(&spec).is_err();
        assert!(bad(SyntheticSpec { count: 0, ..Default::default() }));
        assert!(bad(SyntheticSpec { operand_min: 10, operand_max: 2, ..Default::default() }));
        assert!(bad(SyntheticSpec { operators: vec![], ..Default::default() }));
        assert!(bad(SyntheticSpec { operand_min: -5, operand_max: 5, ..Default::default() }));
        assert!(bad(SyntheticSpec { bootstrap: 501, ..Default::default() }));
        assert!(!bad(SyntheticSpec { operand_min: -5, operand_max: 5, operators: vec![Add], ..Default::default() }));
    }
}
