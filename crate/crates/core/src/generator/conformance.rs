//! Black-box checks any generator must pass before it drives the runtime.

use serde::{Deserialize, Serialize};

use super::{
    GenerateRequest, GenerateResponse, Generator, GeneratorError, GeneratorKind, SamplingSpec,
    StopReason,
};
use crate::datasets::{Provenance, ToolUseRecord};
use crate::protocol::RESULT_DELIMITER;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConformanceReport {
    pub checks: Vec<CheckResult>,
}

impl ConformanceReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn passed_names(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| c.passed)
            .map(|c| c.name.as_str())
            .collect()
    }

    fn record(&mut self, name: &str, outcome: Result<(), String>) {
        let (passed, detail) = match outcome {
            Ok(()) => (true, "ok".to_string()),
            Err(d) => (false, d),
        };
        self.checks.push(CheckResult {
            name: name.to_string(),
            passed,
            detail,
        });
    }
}

pub const PROBE_PREFIX: &str = "|question conformance probe 12 and 30 ";
const PROBE_INPUT: &str = "conformance probe 12 and 30";

fn probe_dataset() -> Vec<ToolUseRecord> {
    vec![ToolUseRecord {
        id: "probe-0".into(),
        input: PROBE_INPUT.into(),
        tool_label: "formula".into(),
        tool_input: "Add(12, 30)".into(),
        tool_output: "42".into(),
        output: "42".into(),
        round: 0,
        provenance: Provenance::Bootstrap,
    }]
}

fn request(stop: &[&str], max_chars: usize, sampling: SamplingSpec) -> GenerateRequest {
    GenerateRequest {
        prefix: PROBE_PREFIX.to_string(),
        stop_markers: stop.iter().map(|s| s.to_string()).collect(),
        max_chars,
        sampling,
    }
}

/// The text may contain a stop marker only as its final characters, and only
/// when the reported reason names that marker.
fn stop_sound(resp: &GenerateResponse, stop: &[String]) -> Result<(), String> {
    let body = match &resp.stop_reason {
        StopReason::Marker(m) => {
            if !stop.contains(m) {
                return Err(format!("reported marker {m:?} was not requested"));
            }
            resp.text
                .strip_suffix(m.as_str())
                .ok_or_else(|| format!("text {:?} does not end with marker {m:?}", resp.text))?
        }
        _ => resp.text.as_str(),
    };
    for m in stop.iter().filter(|m| !m.is_empty()) {
        if let Some(pos) = resp.text.find(m.as_str()) {
            if pos + m.len() <= body.len() {
                return Err(format!("text {:?} continues past marker {m:?}", resp.text));
            }
        }
    }
    Ok(())
}

fn run_capabilities(gen: &dyn Generator) -> Result<(), String> {
    let caps = gen.capabilities();
    if caps.concurrent_requests == 0 {
        return Err("concurrent_requests must be at least 1".into());
    }
    if gen.kind() == GeneratorKind::Scripted && caps.supports_update {
        return Err("scripted generators must not claim update support".into());
    }
    Ok(())
}

fn run_update(gen: &mut dyn Generator) -> Result<(), String> {
    if !gen.capabilities().supports_update {
        return match gen.update(&probe_dataset()) {
            Err(GeneratorError::CapabilityUnsupported(_)) => Ok(()),
            other => Err(format!("expected CapabilityUnsupported, got {other:?}")),
        };
    }
    match gen.update(&[]) {
        Err(GeneratorError::EmptyDataset) => {}
        other => return Err(format!("empty dataset: expected EmptyDataset, got {other:?}")),
    }
    let first = gen.update(&probe_dataset()).map_err(|e| e.to_string())?;
    let second = gen.update(&probe_dataset()).map_err(|e| e.to_string())?;
    if second.version <= first.version {
        return Err(format!(
            "version did not increase: {} then {}",
            first.version, second.version
        ));
    }
    if first.examples_seen != 1 {
        return Err(format!("examples_seen {} for a 1-record dataset", first.examples_seen));
    }
    Ok(())
}

fn run_max_chars(gen: &dyn Generator) -> (Result<(), String>, Result<(), String>) {
    let zero = match gen.generate(&request(&[RESULT_DELIMITER], 0, SamplingSpec::greedy())) {
        Ok(r) if r.text.is_empty() && r.stop_reason == StopReason::MaxChars => Ok(()),
        other => Err(format!("expected empty text with MaxChars, got {other:?}")),
    };
    let bound = (|| {
        for max in [1usize, 3, 7] {
            let r = gen
                .generate(&request(&[], max, SamplingSpec::greedy()))
                .map_err(|e| e.to_string())?;
            let n = r.text.chars().count();
            if n > max {
                return Err(format!("max_chars {max} but {n} chars returned"));
            }
            if r.stop_reason == StopReason::MaxChars && n != max {
                return Err(format!("MaxChars reported after {n} of {max} chars"));
            }
        }
        Ok(())
    })();
    (zero, bound)
}

fn run_stop_markers(gen: &dyn Generator) -> Result<(), String> {
    let sets: [&[&str]; 4] = [&[RESULT_DELIMITER], &[" "], &["|"], &["|output", RESULT_DELIMITER]];
    for set in sets {
        let req = request(set, 256, SamplingSpec::greedy());
        let r = gen.generate(&req).map_err(|e| e.to_string())?;
        stop_sound(&r, &req.stop_markers).map_err(|e| format!("stop {set:?}: {e}"))?;
    }
    Ok(())
}

fn deterministic(gen: &dyn Generator, sampling: SamplingSpec) -> Result<(), String> {
    let req = request(&[RESULT_DELIMITER], 256, sampling);
    let a = gen.generate(&req).map_err(|e| e.to_string())?;
    let b = gen.generate(&req).map_err(|e| e.to_string())?;
    if a != b {
        return Err(format!("{a:?} != {b:?}"));
    }
    Ok(())
}

fn run_beam(gen: &dyn Generator) -> Result<(), String> {
    let sampling = SamplingSpec::beam(4);
    if gen.capabilities().supports_beam {
        deterministic(gen, sampling)
    } else {
        match gen.generate(&request(&[RESULT_DELIMITER], 256, sampling)) {
            Err(GeneratorError::CapabilityUnsupported(_)) => Ok(()),
            other => Err(format!("expected CapabilityUnsupported, got {other:?}")),
        }
    }
}

/// Runs every check and reports each one; never fails itself. Generators that
/// support update are trained on a one-record probe dataset first, so the
/// remaining checks see non-trivial output.
pub fn conformance_check(gen: &mut dyn Generator) -> ConformanceReport {
    let mut report = ConformanceReport::default();
    report.record("capabilities", run_capabilities(gen));
    report.record("update_versioning", run_update(gen));
    let (zero, bound) = run_max_chars(gen);
    report.record("max_chars_zero", zero);
    report.record("max_chars_bound", bound);
    report.record("stop_markers", run_stop_markers(gen));
    report.record("greedy_determinism", deterministic(gen, SamplingSpec::greedy()));
    report.record("seed_determinism", deterministic(gen, SamplingSpec::random(17)));
    report.record("beam", run_beam(gen));
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{
        finish_continuation, Capabilities, ScriptRule, ScriptedGenerator, TrainableGenerator,
        UpdateReport,
    };

    /// Ignores stop markers entirely.
    struct Overrun;

    impl Generator for Overrun {
        fn kind(&self) -> GeneratorKind {
            GeneratorKind::External
        }
        fn capabilities(&self) -> Capabilities {
            Capabilities {
                supports_update: false,
                supports_beam: true,
                concurrent_requests: 1,
            }
        }
        fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, GeneratorError> {
            let mut r = finish_continuation("|formula Add(12, 30) |result 42 |output 42", &[], req.max_chars);
            if r.stop_reason == StopReason::EndOfText {
                if let Some(m) = req.stop_markers.first() {
                    r.stop_reason = StopReason::Marker(m.clone());
                }
            }
            Ok(r)
        }
        fn update(&mut self, _: &[ToolUseRecord]) -> Result<UpdateReport, GeneratorError> {
            Err(GeneratorError::CapabilityUnsupported("no".into()))
        }
    }

    #[test]
    fn trainable_passes_everything() {
        let mut gen = TrainableGenerator::default();
        let report = conformance_check(&mut gen);
        assert!(report.all_passed(), "{report:#?}");
        assert_eq!(report.checks.len(), 8);
    }

    #[test]
    fn scripted_passes_everything() {
        let mut gen = ScriptedGenerator::new(vec![ScriptRule::choose(
            None,
            0,
            vec![("|formula Add(12, 30) |result", 2.0), ("|output 42", 1.0)],
        )]);
        let report = conformance_check(&mut gen);
        assert!(report.all_passed(), "{report:#?}");
    }

    #[test]
    fn overrunning_stub_fails_stop_check() {
        let report = conformance_check(&mut Overrun);
        assert!(!report.get("stop_markers").unwrap().passed);
        assert!(report.get("max_chars_zero").unwrap().passed);
        assert!(!report.all_passed());
    }
}
