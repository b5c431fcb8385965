use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use proptest::prelude::*;
use talm::datasets::{Provenance, ToolUseRecord};
use talm::generator::{Generator, SamplingSpec, ScriptRule, ScriptedGenerator, TrainableGenerator};
use talm::protocol::{drive_generation, DriveConfig, StopKind};
use talm::tools::{Bm25Index, Bm25Params, RetrievalTool, Tool, ToolDescriptor, ToolError, ToolRegistry};

const WEATHER: &str = "|question how hot will it get in NYC today? |weather lookup region=NYC |result precipitation chance: 10, high temp: 20c, low-temp: 12c |output today's high will be 20C";
const FORECAST: &str = "precipitation chance: 10, high temp: 20c, low-temp: 12c";

struct StubWeather {
    descriptor: ToolDescriptor,
    calls: AtomicUsize,
}

impl Tool for StubWeather {
    fn descriptor(&self) -> &ToolDescriptor {
        &self.descriptor
    }

    fn call(&self, input: &str) -> Result<String, ToolError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        assert_eq!(input, "lookup region=NYC");
        Ok(FORECAST.to_string())
    }
}

fn weather() -> (Arc<StubWeather>, ToolRegistry) {
    let stub = Arc::new(StubWeather {
        descriptor: ToolDescriptor::new("weather"),
        calls: AtomicUsize::new(0),
    });
    let registry = ToolRegistry::new().with(stub.clone()).unwrap();
    (stub, registry)
}

fn weather_script(first_leg: &str) -> ScriptedGenerator {
    ScriptedGenerator::new(vec![
        ScriptRule::emit(None, 0, first_leg),
        ScriptRule::emit(None, 1, "|output today's high will be 20C"),
    ])
}

#[test]
fn weather_golden_text() {
    let (stub, registry) = weather();
    let gen = weather_script("|weather lookup region=NYC |result");
    let traj = drive_generation(&gen, &registry, "how hot will it get in NYC today?", &DriveConfig::default()).unwrap();
    assert_eq!(traj.text(), WEATHER);
    assert_eq!(stub.calls.load(Ordering::SeqCst), 1);
    let kinds: Vec<StopKind> = traj.events.iter().map(|e| e.reason).collect();
    assert_eq!(kinds, [StopKind::ToolCallBoundary, StopKind::OutputComplete]);
}

#[test]
fn trainable_reproduces_a_learned_interception() {
    let (_, registry) = weather();
    let mut gen = TrainableGenerator::default();
    gen.update(&[ToolUseRecord {
        id: "w".into(),
        input: "how hot will it get in NYC today?".into(),
        tool_label: "weather".into(),
        tool_input: "lookup region=NYC".into(),
        tool_output: FORECAST.into(),
        output: "today's high will be 20C".into(),
        round: 0,
        provenance: Provenance::Bootstrap,
    }])
    .unwrap();
    let cfg = DriveConfig {
        sampling: SamplingSpec::greedy(),
        ..Default::default()
    };
    let traj = drive_generation(&gen, &registry, "how hot will it get in NYC today?", &cfg).unwrap();
    assert_eq!(traj.text(), WEATHER);
}

#[test]
fn brewing_question_through_real_retrieval() {
    let passage = "The boiling process is where chemical reactions take place, including sterilization of the wort and isomerization of hop compounds.";
    let index = Bm25Index::build(
        vec![
            ("boil".into(), passage.into()),
            ("mash".into(), "Mashing converts malt starches into sugars.".into()),
            ("tower".into(), "The Eiffel Tower is a landmark in Paris.".into()),
        ],
        Bm25Params::default(),
    )
    .unwrap();
    let registry = ToolRegistry::new()
        .with(Arc::new(RetrievalTool::new(Arc::new(index))))
        .unwrap();
    let gen = ScriptedGenerator::new(vec![
        ScriptRule::emit(None, 0, "|search brewing process |result"),
        ScriptRule::emit(None, 1, "|output The boiling process."),
    ]);
    let traj = drive_generation(&gen, &registry, "when are hops added in brewing process?", &DriveConfig::default()).unwrap();
    assert_eq!(
        traj.text(),
        format!("|question when are hops added in brewing process? |search brewing process |result {passage} |output The boiling process.")
    );
}

proptest! {
    #[test]
    fn generator_text_after_result_never_reaches_the_sequence(junk in "[ a-zA-Z0-9:,.]{0,30}") {
        let (stub, registry) = weather();
        let gen = weather_script(&format!("|weather lookup region=NYC |result{junk}"));
        let traj = drive_generation(&gen, &registry, "how hot will it get in NYC today?", &DriveConfig::default()).unwrap();
        prop_assert_eq!(traj.text(), WEATHER);
        prop_assert_eq!(stub.calls.load(Ordering::SeqCst), 1);
    }
}
