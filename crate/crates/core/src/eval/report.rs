use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{CurvePoint, EvalError, EvalReport};
use crate::datasets::write_jsonl_to;

pub const CURVE_HEADER: [&str; 4] = ["round", "accuracy", "n", "acceptance_rate"];

/// CSV with columns `round,accuracy,n,acceptance_rate`, rows sorted by round.
/// The acceptance rate is empty for the bootstrap-only point.
pub fn write_curve_csv_to<W: Write>(out: W, points: &[CurvePoint]) -> Result<(), EvalError> {
    let mut sorted = points.to_vec();
    sorted.sort_by_key(|p| p.round);
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(CURVE_HEADER)?;
    for p in &sorted {
        writer.write_record([
            p.round.to_string(),
            p.accuracy.to_string(),
            p.n.to_string(),
            p.acceptance_rate.map(|a| a.to_string()).unwrap_or_default(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_curve_csv(path: &Path, points: &[CurvePoint]) -> Result<(), EvalError> {
    write_curve_csv_to(BufWriter::new(File::create(path)?), points)
}

pub fn read_curve_csv<R: Read>(input: R) -> Result<Vec<CurvePoint>, EvalError> {
    let mut reader = csv::Reader::from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != CURVE_HEADER {
        return Err(EvalError::Config(format!("unexpected curve header {header:?}")));
    }
    let mut points = Vec::new();
    for record in reader.records() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("").to_string();
        let bad = |name: &str, v: String| EvalError::Config(format!("bad {name} {v:?}"));
        let round = field(0).parse().map_err(|_| bad("round", field(0)))?;
        let accuracy = field(1).parse().map_err(|_| bad("accuracy", field(1)))?;
        let n = field(2).parse().map_err(|_| bad("n", field(2)))?;
        let acceptance_rate = match field(3).as_str() {
            "" => None,
            v => Some(v.parse().map_err(|_| bad("acceptance_rate", v.to_string()))?),
        };
        points.push(CurvePoint {
            round,
            accuracy,
            n,
            acceptance_rate,
        });
    }
    Ok(points)
}

pub fn curve_summary(points: &[CurvePoint]) -> String {
    let mut sorted = points.to_vec();
    sorted.sort_by_key(|p| p.round);
    let mut s = String::from("round  accuracy  n     acceptance\n");
    for p in &sorted {
        let acc = p
            .acceptance_rate
            .map(|a| format!("{:.3}", a))
            .unwrap_or_else(|| "-".into());
        s.push_str(&format!("{:<6} {:<9.4} {:<5} {}\n", p.round, p.accuracy, p.n, acc));
    }
    s
}

/// One verdict per line.
pub fn write_verdicts_jsonl(path: &Path, report: &EvalReport) -> Result<(), EvalError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_jsonl_to(&mut out, &report.verdicts)?;
    out.flush()?;
    Ok(())
}
