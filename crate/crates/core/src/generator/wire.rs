//! Newline-delimited JSON protocol for out-of-process generators.
//!
//! ```text
//! {"op":"hello"}
//!   -> {"op":"hello","supports_update":bool,"supports_beam":bool,"concurrent":int}
//! {"op":"generate","prefix":..,"stop":[..],"max_chars":..,"mode":"random|greedy|beam",
//!  "temperature":..,"top_k":..,"beam_width":..,"seed":..}
//!   -> {"op":"result","text":..,"stop_reason":"marker:<m>|max_chars|end_of_text"}
//! {"op":"update","dataset_path":..}
//!   -> {"op":"updated","version":int}
//! any failure
//!   -> {"op":"error","message":..}
//! ```
//!
//! [`ExternalGenerator`] is the client side; [`serve`] exposes any
//! [`Generator`] over the same protocol.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{
    Capabilities, GenerateRequest, GenerateResponse, Generator, GeneratorError, GeneratorKind,
    SamplingMode, SamplingSpec, StopReason, UpdateReport,
};
use crate::datasets::{load_tool_use_set, save_tool_use_set, ToolUseRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum WireRequest {
    Hello,
    Generate {
        prefix: String,
        stop: Vec<String>,
        max_chars: usize,
        mode: SamplingMode,
        temperature: f64,
        top_k: usize,
        beam_width: usize,
        seed: u64,
    },
    Update {
        dataset_path: String,
    },
}

impl WireRequest {
    pub fn generate(request: &GenerateRequest) -> Self {
        let s = &request.sampling;
        WireRequest::Generate {
            prefix: request.prefix.clone(),
            stop: request.stop_markers.clone(),
            max_chars: request.max_chars,
            mode: s.mode,
            temperature: s.temperature,
            top_k: s.top_k,
            beam_width: s.beam_width,
            seed: s.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum WireResponse {
    Hello {
        supports_update: bool,
        supports_beam: bool,
        concurrent: usize,
    },
    Result {
        text: String,
        stop_reason: String,
    },
    Updated {
        version: u64,
    },
    Error {
        message: String,
    },
}

pub fn encode_stop_reason(reason: &StopReason) -> String {
    match reason {
        StopReason::Marker(m) => format!("marker:{m}"),
        StopReason::MaxChars => "max_chars".to_string(),
        StopReason::EndOfText => "end_of_text".to_string(),
    }
}

/// Inverse of [`encode_stop_reason`]. A bare `marker` names whichever stop
/// marker the text ends with.
pub fn decode_stop_reason(encoded: &str, text: &str, stop: &[String]) -> Result<StopReason, GeneratorError> {
    match encoded {
        "max_chars" => Ok(StopReason::MaxChars),
        "end_of_text" => Ok(StopReason::EndOfText),
        "marker" => stop
            .iter()
            .find(|m| !m.is_empty() && text.ends_with(m.as_str()))
            .map(|m| StopReason::Marker(m.clone()))
            .ok_or_else(|| GeneratorError::Protocol("stop_reason 'marker' but text ends with no stop marker".into())),
        other => other
            .strip_prefix("marker:")
            .map(|m| StopReason::Marker(m.to_string()))
            .ok_or_else(|| GeneratorError::Protocol(format!("unknown stop_reason {other:?}"))),
    }
}

fn error_from_message(message: String) -> GeneratorError {
    if let Some(rest) = message.strip_prefix("capability unsupported: ") {
        GeneratorError::CapabilityUnsupported(rest.to_string())
    } else if message == GeneratorError::EmptyDataset.to_string() {
        GeneratorError::EmptyDataset
    } else {
        GeneratorError::Failed(message)
    }
}

struct Connection {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
}

impl Connection {
    fn round_trip(&mut self, request: &WireRequest) -> Result<WireResponse, GeneratorError> {
        let line = serde_json::to_string(request)
            .map_err(|e| GeneratorError::Protocol(e.to_string()))?;
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        let mut reply = String::new();
        if self.reader.read_line(&mut reply)? == 0 {
            return Err(GeneratorError::Protocol("generator closed the connection".into()));
        }
        serde_json::from_str(reply.trim_end())
            .map_err(|e| GeneratorError::Protocol(format!("bad response {:?}: {e}", reply.trim_end())))
    }
}

static UPDATE_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Client for a generator process reachable over stdio or TCP. Requests are
/// serialized over the one connection.
pub struct ExternalGenerator {
    connection: Mutex<Connection>,
    capabilities: Capabilities,
    child: Option<Child>,
    scratch_dir: PathBuf,
}

impl std::fmt::Debug for ExternalGenerator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalGenerator")
            .field("capabilities", &self.capabilities)
            .finish()
    }
}

impl ExternalGenerator {
    /// Runs `command` through `sh -c` and talks to it over stdin/stdout.
    pub fn spawn(command: &str) -> Result<Self, GeneratorError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let connection = Connection {
            reader: Box::new(BufReader::new(stdout)),
            writer: Box::new(BufWriter::new(stdin)),
        };
        match Self::handshake(connection) {
            Ok((connection, capabilities)) => Ok(ExternalGenerator {
                connection: Mutex::new(connection),
                capabilities,
                child: Some(child),
                scratch_dir: std::env::temp_dir(),
            }),
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(e)
            }
        }
    }

    /// Connects to a generator listening on `addr` (`host:port`). Update
    /// datasets are passed by path, so both ends must share a filesystem.
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, GeneratorError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let connection = Connection {
            reader: Box::new(BufReader::new(stream.try_clone()?)),
            writer: Box::new(BufWriter::new(stream)),
        };
        let (connection, capabilities) = Self::handshake(connection)?;
        Ok(ExternalGenerator {
            connection: Mutex::new(connection),
            capabilities,
            child: None,
            scratch_dir: std::env::temp_dir(),
        })
    }

    /// Directory for the dataset files sent with `update`.
    pub fn with_scratch_dir(mut self, dir: PathBuf) -> Self {
        self.scratch_dir = dir;
        self
    }

    fn handshake(mut connection: Connection) -> Result<(Connection, Capabilities), GeneratorError> {
        match connection.round_trip(&WireRequest::Hello)? {
            WireResponse::Hello {
                supports_update,
                supports_beam,
                concurrent,
            } => Ok((
                connection,
                Capabilities {
                    supports_update,
                    supports_beam,
                    concurrent_requests: concurrent.max(1),
                },
            )),
            WireResponse::Error { message } => Err(GeneratorError::Protocol(message)),
            other => Err(GeneratorError::Protocol(format!("unexpected handshake reply {other:?}"))),
        }
    }

    fn send(&self, request: &WireRequest) -> Result<WireResponse, GeneratorError> {
        let mut conn = self.connection.lock().unwrap_or_else(|e| e.into_inner());
        conn.round_trip(request)
    }
}

impl Drop for ExternalGenerator {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl Generator for ExternalGenerator {
    fn kind(&self) -> GeneratorKind {
        GeneratorKind::External
    }

    fn capabilities(&self) -> Capabilities {
        self.capabilities
    }

    fn generate(&self, request: &GenerateRequest) -> Result<GenerateResponse, GeneratorError> {
        request.sampling.validate()?;
        if request.sampling.mode == SamplingMode::Beam && !self.capabilities.supports_beam {
            return Err(GeneratorError::CapabilityUnsupported(
                "external generator does not support beam decoding".into(),
            ));
        }
        match self.send(&WireRequest::generate(request))? {
            WireResponse::Result { text, stop_reason } => {
                let stop_reason = decode_stop_reason(&stop_reason, &text, &request.stop_markers)?;
                Ok(GenerateResponse { text, stop_reason })
            }
            WireResponse::Error { message } => Err(error_from_message(message)),
            other => Err(GeneratorError::Protocol(format!("unexpected reply {other:?}"))),
        }
    }

    fn update(&mut self, dataset: &[ToolUseRecord]) -> Result<UpdateReport, GeneratorError> {
        if !self.capabilities.supports_update {
            return Err(GeneratorError::CapabilityUnsupported(
                "external generator does not support update".into(),
            ));
        }
        if dataset.is_empty() {
            return Err(GeneratorError::EmptyDataset);
        }
        let path = self.scratch_dir.join(format!(
            "talm-update-{}-{}.jsonl",
            std::process::id(),
            UPDATE_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        save_tool_use_set(&path, dataset).map_err(|e| GeneratorError::Failed(e.to_string()))?;
        let reply = self.send(&WireRequest::Update {
            dataset_path: path.to_string_lossy().into_owned(),
        });
        let _ = std::fs::remove_file(&path);
        match reply? {
            WireResponse::Updated { version } => Ok(UpdateReport {
                examples_seen: dataset.len(),
                version,
            }),
            WireResponse::Error { message } => Err(error_from_message(message)),
            other => Err(GeneratorError::Protocol(format!("unexpected reply {other:?}"))),
        }
    }
}

fn handle(generator: &mut dyn Generator, line: &str) -> WireResponse {
    let request: WireRequest = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => {
            return WireResponse::Error {
                message: format!("bad request: {e}"),
            }
        }
    };
    let outcome = match request {
        WireRequest::Hello => {
            let caps = generator.capabilities();
            Ok(WireResponse::Hello {
                supports_update: caps.supports_update,
                supports_beam: caps.supports_beam,
                concurrent: caps.concurrent_requests,
            })
        }
        WireRequest::Generate {
            prefix,
            stop,
            max_chars,
            mode,
            temperature,
            top_k,
            beam_width,
            seed,
        } => generator
            .generate(&GenerateRequest {
                prefix,
                stop_markers: stop,
                max_chars,
                sampling: SamplingSpec {
                    mode,
                    temperature,
                    top_k,
                    beam_width,
                    seed,
                },
            })
            .map(|r| WireResponse::Result {
                text: r.text,
                stop_reason: encode_stop_reason(&r.stop_reason),
            }),
        WireRequest::Update { dataset_path } => load_tool_use_set(dataset_path.as_ref())
            .map_err(|e| GeneratorError::Failed(e.to_string()))
            .and_then(|records| generator.update(&records))
            .map(|r| WireResponse::Updated { version: r.version }),
    };
    outcome.unwrap_or_else(|e| WireResponse::Error {
        message: e.to_string(),
    })
}

/// Answers requests from `reader` on `writer` until end of input. Bad
/// requests get an error reply; only I/O failures end the loop early.
pub fn serve<R: BufRead, W: Write>(
    generator: &mut dyn Generator,
    reader: R,
    mut writer: W,
) -> std::io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = handle(generator, &line);
        serde_json::to_writer(&mut writer, &response)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

/// Serves one TCP connection.
pub fn serve_tcp(generator: &mut dyn Generator, stream: TcpStream) -> std::io::Result<()> {
    let reader = BufReader::new(stream.try_clone()?);
    serve(generator, reader, BufWriter::new(stream))
}
