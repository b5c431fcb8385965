#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::Rng;
use serde_json::json;

use crate::oracles::formula::{evaluate, random_node, render};

pub const BIN: &str = env!("CARGO_BIN_EXE_talm");

pub fn talm(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .output()
        .expect("talm binary runs")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn quickstart() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/quickstart")
}

pub fn write_jsonl(path: &Path, rows: &[serde_json::Value]) {
    let text: String = rows.iter().map(|r| format!("{r}\n")).collect();
    fs::write(path, text).unwrap();
}

pub fn read_jsonl(path: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// A math task set with exactly `valid` records whose gold formula evaluates
/// to the recorded answer and `invalid` records that fail for one of six
/// reasons, shuffled together. Expected values come from the independent
/// formula oracle.
pub fn validity_corpus<R: Rng>(rng: &mut R, valid: usize, invalid: usize) -> Vec<serde_json::Value> {
    let mut rows = Vec::new();
    while rows.len() < valid {
        let node = random_node(rng, 4);
        if let Ok(v) = evaluate(&node) {
            rows.push((render(&node, rng), format!("{v:.2}")));
        }
    }
    for i in 0..invalid {
        rows.push(match i % 6 {
            0 => ("Add(1, 2".to_string(), "3".to_string()),
            1 => ("Frobnicate(4, 5)".to_string(), "9".to_string()),
            2 => ("Multiply(7)".to_string(), "7".to_string()),
            3 => loop {
                let node = random_node(rng, 4);
                if evaluate(&node).is_err() {
                    break (render(&node, rng), "1".to_string());
                }
            },
            4 => loop {
                let node = random_node(rng, 4);
                if let Ok(v) = evaluate(&node) {
                    break (render(&node, rng), format!("{:.2}", 2.0 * v.abs() + 50.0));
                }
            },
            _ => ("Add(2, 2)".to_string(), "four-ish".to_string()),
        });
    }
    for i in (1..rows.len()).rev() {
        rows.swap(i, rng.random_range(0..=i));
    }
    rows.into_iter()
        .enumerate()
        .map(|(i, (formula, target))| {
            json!({ "id": format!("m{i:04}"), "input": format!("problem {i}"), "target": target, "formula": formula })
        })
        .collect()
}

/// Relative paths under `dir` mapped to their bytes.
pub fn snapshot_dir(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}
