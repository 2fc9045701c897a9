//! Out-of-process shepherds speaking line-delimited JSON over a child
//! process's stdin/stdout or a TCP socket. Only file paths cross the wire.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{Shutdown, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::identity::IdentitySet;
use crate::io::{decode_image, encode_png16};
use crate::matrix::SimilarityMatrix;
use crate::shepherd::{Matcher, Shepherd};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Where a peer lives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "transport", rename_all = "kebab-case")]
pub enum Endpoint {
    /// Spawned child; messages over its stdin/stdout.
    Command { program: String, args: Vec<String> },
    /// `host:port` of a listening peer.
    Tcp { address: String },
}

impl Endpoint {
    /// Splits a whitespace-separated command line into program and args.
    pub fn command_line(line: &str) -> Result<Self> {
        let mut parts = line.split_whitespace().map(str::to_string);
        let program = parts
            .next()
            .ok_or_else(|| Error::Config("external command is empty".into()))?;
        Ok(Endpoint::Command {
            program,
            args: parts.collect(),
        })
    }
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Endpoint::Command { program, args } if args.is_empty() => write!(f, "{program}"),
            Endpoint::Command { program, args } => write!(f, "{program} {}", args.join(" ")),
            Endpoint::Tcp { address } => write!(f, "tcp://{address}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerInfo {
    pub name: String,
    pub version: u32,
}

enum Link {
    Child(Child),
    Tcp(TcpStream),
    Streams,
}

/// One handshaken connection to a peer. One request in flight at a time.
pub struct ShepherdSession {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    link: Link,
    peer: PeerInfo,
    timeout: Duration,
}

fn spawn_reader(reader: impl Read + Send + 'static) -> Receiver<std::io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for line in BufReader::new(reader).lines() {
            let failed = line.is_err();
            if tx.send(line).is_err() || failed {
                break;
            }
        }
    });
    rx
}

impl ShepherdSession {
    /// Opens the endpoint and completes the handshake.
    pub fn connect(endpoint: &Endpoint, timeout: Duration) -> Result<Self> {
        let opened = match endpoint {
            Endpoint::Command { program, args } => {
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| Error::Protocol(format!("cannot start external shepherd '{endpoint}': {e}")))?;
                let stdin = child.stdin.take().expect("stdin is piped");
                let stdout = child.stdout.take().expect("stdout is piped");
                Self::open(Box::new(stdin), spawn_reader(stdout), Link::Child(child), timeout)
            }
            Endpoint::Tcp { address } => {
                let stream = TcpStream::connect(address)
                    .map_err(|e| Error::Protocol(format!("cannot connect to external shepherd at {address}: {e}")))?;
                let reader = stream.try_clone()?;
                let writer = stream.try_clone()?;
                Self::open(Box::new(writer), spawn_reader(reader), Link::Tcp(stream), timeout)
            }
        };
        opened.map_err(|e| e.context(format!("external shepherd '{endpoint}'")))
    }

    /// Handshakes over arbitrary streams.
    pub fn from_streams(
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
        timeout: Duration,
    ) -> Result<Self> {
        Self::open(Box::new(writer), spawn_reader(reader), Link::Streams, timeout)
    }

    fn open(
        writer: Box<dyn Write + Send>,
        lines: Receiver<std::io::Result<String>>,
        link: Link,
        timeout: Duration,
    ) -> Result<Self> {
        let mut session = Self {
            writer,
            lines,
            link,
            peer: PeerInfo {
                name: String::new(),
                version: 0,
            },
            timeout,
        };
        session.peer = session.handshake()?;
        Ok(session)
    }

    pub fn peer(&self) -> &PeerInfo {
        &self.peer
    }

    fn send(&mut self, message: &Value) -> Result<()> {
        let mut line = serde_json::to_string(message)?;
        line.push('\n');
        self.writer
            .write_all(line.as_bytes())
            .and_then(|()| self.writer.flush())
            .map_err(|e| Error::Protocol(format!("cannot write to peer: {e}")))
    }

    /// Next message, or `None` if the peer closed the stream.
    fn receive(&mut self) -> Result<Option<Value>> {
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => serde_json::from_str(&line)
                .map(Some)
                .map_err(|e| Error::Protocol(format!("malformed reply {line:?}: {e}"))),
            Ok(Err(e)) => Err(Error::Protocol(format!("cannot read from peer: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(Error::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => Ok(None),
        }
    }

    fn handshake(&mut self) -> Result<PeerInfo> {
        self.send(&json!({"op": "hello", "version": PROTOCOL_VERSION}))?;
        let reply = self
            .receive()
            .map_err(|e| e.context("handshake"))?
            .ok_or_else(|| Error::Protocol("peer closed the stream during handshake".into()))?;
        let op = reply.get("op").and_then(Value::as_str);
        if op == Some("error") {
            return Err(Error::Protocol(format!("peer refused handshake: {}", detail(&reply))));
        }
        if op != Some("hello") {
            return Err(Error::Protocol(format!("malformed hello reply: {reply}")));
        }
        let version = reply
            .get("version")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::Protocol(format!("hello reply without integer version: {reply}")))?;
        if version != u64::from(PROTOCOL_VERSION) {
            return Err(Error::VersionMismatch {
                expected: PROTOCOL_VERSION,
                actual: version,
            });
        }
        let name = reply
            .get("name")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Protocol(format!("hello reply without name: {reply}")))?;
        Ok(PeerInfo {
            name: name.to_string(),
            version: PROTOCOL_VERSION,
        })
    }

    /// Requests the probe x gallery matrix for files the peer can read.
    pub fn remote_similarity(&mut self, probes: &[PathBuf], gallery: &[PathBuf]) -> Result<SimilarityMatrix> {
        if probes.is_empty() || gallery.is_empty() {
            return Err(Error::Input("probe and gallery lists must be non-empty".into()));
        }
        let as_strings = |paths: &[PathBuf]| -> Vec<String> { paths.iter().map(|p| p.display().to_string()).collect() };
        self.send(&json!({
            "op": "similarity",
            "probes": as_strings(probes),
            "gallery": as_strings(gallery),
        }))?;

        let (rows, cols) = (probes.len(), gallery.len());
        let mut assembled: Vec<Option<Vec<f64>>> = vec![None; rows];
        loop {
            let received = assembled.iter().filter(|r| r.is_some()).count();
            let message = match self.receive() {
                Ok(Some(m)) => m,
                Ok(None) => {
                    return Err(Error::Protocol(format!(
                        "peer closed the stream after {received} of {rows} rows; row {} missing",
                        first_missing(&assembled)
                    )))
                }
                Err(e) => return Err(e.context(format!("waiting for row {}", first_missing(&assembled)))),
            };
            match message.get("op").and_then(Value::as_str) {
                Some("done") => break,
                Some("error") => return Err(Error::Protocol(format!("peer reported: {}", detail(&message)))),
                Some(other) => return Err(Error::Protocol(format!("unexpected op '{other}' in similarity reply"))),
                None => {}
            }
            let row = message
                .get("row")
                .and_then(Value::as_u64)
                .ok_or_else(|| Error::Protocol(format!("malformed row message: {message}")))?
                as usize;
            if row >= rows {
                return Err(Error::Protocol(format!("row {row} out of range for {rows} probes")));
            }
            if assembled[row].is_some() {
                return Err(Error::Protocol(format!("duplicate row {row}")));
            }
            let values = message
                .get("values")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Protocol(format!("row {row} has no values array")))?;
            if values.len() != cols {
                return Err(Error::Protocol(format!(
                    "row {row} has {} values, expected {cols}",
                    values.len()
                )));
            }
            let parsed = values
                .iter()
                .enumerate()
                .map(|(col, v)| match v.as_f64() {
                    Some(x) if (0.0..=1.0).contains(&x) => Ok(x),
                    _ => Err(Error::Protocol(format!(
                        "row {row}, col {col}: value {v} outside [0, 1]"
                    ))),
                })
                .collect::<Result<Vec<_>>>()?;
            assembled[row] = Some(parsed);
        }
        if assembled.iter().any(Option::is_none) {
            return Err(Error::Protocol(format!(
                "done received but row {} missing",
                first_missing(&assembled)
            )));
        }
        SimilarityMatrix::new(rows, cols, assembled.into_iter().flatten().flatten().collect())
    }
}

fn first_missing(rows: &[Option<Vec<f64>>]) -> usize {
    rows.iter().position(Option::is_none).unwrap_or(rows.len())
}

fn detail(message: &Value) -> String {
    message
        .get("detail")
        .and_then(Value::as_str)
        .unwrap_or("no detail")
        .to_string()
}

impl Drop for ShepherdSession {
    fn drop(&mut self) {
        match &mut self.link {
            Link::Child(child) => {
                let _ = child.kill();
                let _ = child.wait();
            }
            Link::Tcp(stream) => {
                let _ = stream.shutdown(Shutdown::Both);
            }
            Link::Streams => {}
        }
    }
}

/// A [`Shepherd`] backed by a peer program. Sessions are pooled so parallel
/// callers each get their own connection.
pub struct ExternalShepherd {
    endpoint: Endpoint,
    timeout: Duration,
    name: String,
    pool: Mutex<Vec<ShepherdSession>>,
}

impl ExternalShepherd {
    /// Connects once to learn the peer's name and fail early.
    pub fn connect(endpoint: Endpoint, timeout: Duration) -> Result<Self> {
        let session = ShepherdSession::connect(&endpoint, timeout)?;
        Ok(Self {
            name: session.peer().name.clone(),
            endpoint,
            timeout,
            pool: Mutex::new(vec![session]),
        })
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    fn checkout(&self) -> Result<ShepherdSession> {
        let pooled = self.pool.lock().expect("session pool poisoned").pop();
        match pooled {
            Some(s) => Ok(s),
            None => ShepherdSession::connect(&self.endpoint, self.timeout),
        }
    }
}

/// Paths for every identity, writing images without a source file to `dir`.
fn materialize(set: &IdentitySet, dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    set.iter()
        .enumerate()
        .map(|(i, ident)| match ident.source() {
            Some(p) => Ok(p.to_path_buf()),
            None => {
                let path = dir.join(format!("{prefix}{i}.png"));
                encode_png16(ident.image(), &path)?;
                Ok(path)
            }
        })
        .collect()
}

impl Shepherd for ExternalShepherd {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn similarity(&self, probes: &IdentitySet, gallery: &IdentitySet) -> Result<SimilarityMatrix> {
        let dir = tempfile::tempdir()?;
        let probe_paths = materialize(probes, dir.path(), "probe")?;
        let gallery_paths = materialize(gallery, dir.path(), "gallery")?;
        let mut session = self.checkout()?;
        let matrix = session
            .remote_similarity(&probe_paths, &gallery_paths)
            .map_err(|e| e.context(format!("external shepherd '{}'", self.endpoint)))?;
        self.pool.lock().expect("session pool poisoned").push(session);
        Ok(matrix)
    }
}

/// Answers the protocol with a built-in matcher until the input ends.
pub fn serve(reader: impl BufRead, mut writer: impl Write, matcher: &Matcher) -> Result<()> {
    let emit = |w: &mut dyn Write, v: Value| -> Result<()> {
        writeln!(w, "{v}")?;
        w.flush()?;
        Ok(())
    };
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let request: Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                let detail = format!("malformed request: {e}");
                emit(&mut writer, json!({"op": "error", "detail": detail}))?;
                return Err(Error::Protocol(detail));
            }
        };
        match request.get("op").and_then(Value::as_str) {
            Some("hello") if request.get("version").and_then(Value::as_u64) != Some(u64::from(PROTOCOL_VERSION)) => {
                let detail = format!("unsupported protocol version in {line}; this peer speaks {PROTOCOL_VERSION}");
                emit(&mut writer, json!({"op": "error", "detail": detail}))?;
                return Err(Error::Protocol(detail));
            }
            Some("hello") => emit(
                &mut writer,
                json!({"op": "hello", "version": PROTOCOL_VERSION, "name": format!("psyphy-{}", matcher.kind())}),
            )?,
            Some("similarity") => match answer_similarity(&request, matcher) {
                Ok(matrix) => {
                    for i in 0..matrix.rows() {
                        emit(&mut writer, json!({"row": i, "values": matrix.row(i)}))?;
                    }
                    emit(&mut writer, json!({"op": "done"}))?;
                }
                Err(e) => {
                    emit(&mut writer, json!({"op": "error", "detail": e.to_string()}))?;
                    return Err(e);
                }
            },
            _ => {
                let detail = format!("unknown request: {line}");
                emit(&mut writer, json!({"op": "error", "detail": detail}))?;
                return Err(Error::Protocol(detail));
            }
        }
    }
    Ok(())
}

fn answer_similarity(request: &Value, matcher: &Matcher) -> Result<SimilarityMatrix> {
    let load = |key: &str| -> Result<IdentitySet> {
        let paths = request
            .get(key)
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Protocol(format!("similarity request without '{key}' list")))?;
        let members = paths
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let p = p
                    .as_str()
                    .ok_or_else(|| Error::Protocol(format!("{key}[{i}] is not a path string")))?;
                let image = decode_image(Path::new(p))?;
                Ok(crate::identity::Identity::with_source(format!("{key}{i}"), image, p))
            })
            .collect::<Result<Vec<_>>>()?;
        IdentitySet::new(members)
    };
    let probes = load("probes")?;
    let gallery = load("gallery")?;
    matcher.similarity(&probes, &gallery)
}
