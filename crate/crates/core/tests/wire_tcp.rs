use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::Arc;
use std::thread::JoinHandle;

use talm::datasets::{generate_synthetic, SyntheticSpec};
use talm::generator::wire::serve_tcp;
use talm::generator::{
    conformance_check, ExternalGenerator, GenerateRequest, Generator, SamplingSpec, ScriptRule,
    ScriptedGenerator, TrainableGenerator,
};
use talm::selfplay::{run_round, SelfPlayConfig};
use talm::tools::{FormulaTool, ToolRegistry};

fn spawn_server(mut gen: Box<dyn Generator>) -> (SocketAddr, JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        serve_tcp(gen.as_mut(), stream).unwrap();
    });
    (addr, handle)
}

fn connect(gen: Box<dyn Generator>, scratch: &tempfile::TempDir) -> (ExternalGenerator, JoinHandle<()>) {
    let (addr, handle) = spawn_server(gen);
    let client = ExternalGenerator::connect(addr)
        .unwrap()
        .with_scratch_dir(scratch.path().to_path_buf());
    (client, handle)
}

#[test]
fn trainable_over_tcp_passes_conformance() {
    let scratch = tempfile::tempdir().unwrap();
    let (mut client, handle) = connect(Box::new(TrainableGenerator::default()), &scratch);
    let report = conformance_check(&mut client);
    assert!(report.all_passed(), "{report:?}");
    drop(client);
    handle.join().unwrap();
}

#[test]
fn scripted_over_tcp_passes_conformance() {
    let scratch = tempfile::tempdir().unwrap();
    let script = ScriptedGenerator::new(vec![
        ScriptRule::choose(None, 0, vec![("|formula Add(12, 30) |result", 2.0), ("|formula Multiply(6, 7) |result", 1.0)]),
        ScriptRule::emit(None, 1, "|output {result}"),
    ]);
    let (mut client, handle) = connect(Box::new(script), &scratch);
    let report = conformance_check(&mut client);
    assert!(report.all_passed(), "{report:?}");
    drop(client);
    handle.join().unwrap();
}

#[test]
fn remote_self_play_round_equals_local() {
    let set = generate_synthetic(&SyntheticSpec {
        count: 30,
        bootstrap: 4,
        ..Default::default()
    })
    .unwrap();
    let tasks = set.tasks.records;
    let registry = ToolRegistry::new().with(Arc::new(FormulaTool::new())).unwrap();
    let cfg = SelfPlayConfig {
        samples_per_example: 6,
        jobs: 1,
        ..Default::default()
    };

    let mut local = TrainableGenerator::default();
    let (d_local, r_local) = run_round(&mut local, &registry, &tasks, &set.bootstrap, &cfg, 1).unwrap();

    let scratch = tempfile::tempdir().unwrap();
    let (mut remote, handle) = connect(Box::new(TrainableGenerator::default()), &scratch);
    let (d_remote, r_remote) = run_round(&mut remote, &registry, &tasks, &set.bootstrap, &cfg, 1).unwrap();
    assert_eq!(d_local, d_remote);
    assert_eq!(r_local, r_remote);

    let request = GenerateRequest {
        prefix: format!("|question {} ", tasks[7].input),
        stop_markers: vec!["|result".into()],
        max_chars: 200,
        sampling: SamplingSpec::beam(4),
    };
    assert_eq!(local.generate(&request).unwrap(), remote.generate(&request).unwrap());
    drop(remote);
    handle.join().unwrap();
}

#[test]
fn raw_ndjson_session() {
    let script = ScriptedGenerator::new(vec![ScriptRule::emit(None, 0, "|formula Add(1, 2) |result 3 |output 3")]);
    let (addr, handle) = spawn_server(Box::new(script));
    let stream = TcpStream::connect(addr).unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut writer = stream;
    let mut ask = |line: &str| -> serde_json::Value {
        writer.write_all(line.as_bytes()).unwrap();
        writer.write_all(b"\n").unwrap();
        let mut reply = String::new();
        reader.read_line(&mut reply).unwrap();
        serde_json::from_str(&reply).unwrap()
    };
    let hello = ask(r#"{"op":"hello"}"#);
    assert_eq!(hello["op"], "hello");
    assert_eq!(hello["supports_update"], false);
    let result = ask(
        r#"{"op":"generate","prefix":"|question q ","stop":["|result"],"max_chars":100,"mode":"greedy","temperature":1.0,"top_k":40,"beam_width":4,"seed":0}"#,
    );
    assert_eq!(result["text"], "|formula Add(1, 2) |result");
    assert_eq!(result["stop_reason"], "marker:|result");
    let capped = ask(
        r#"{"op":"generate","prefix":"|question q ","stop":[],"max_chars":8,"mode":"random","temperature":1.0,"top_k":40,"beam_width":4,"seed":5}"#,
    );
    assert_eq!(capped["text"], "|formula");
    assert_eq!(capped["stop_reason"], "max_chars");
    assert_eq!(ask(r#"{"op":"update","dataset_path":"/nonexistent"}"#)["op"], "error");
    assert_eq!(ask("garbage")["op"], "error");
    drop(writer);
    drop(reader);
    handle.join().unwrap();
}
