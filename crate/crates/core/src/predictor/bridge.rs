//! Newline-delimited JSON bridge to an external model process.
//!
//! The child writes a handshake line on start-up, then answers each request
//! line with exactly one response line carrying the same id:
//!
//! ```text
//! <- {"proto":1,"name":"cnn","is_classifier":true,"raw_logit":false}
//! -> {"id":0,"images":[{"w":128,"h":128,"pix_b64":"..."}]}
//! <- {"id":0,"values":[0.93]}
//! ```
//!
//! A failed request may be answered with `{"id":N,"error":"..."}`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{PredictError, Predictor, PredictorMeta};
use crate::scene::Image;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("failed to launch bridge process: {0}")]
    Spawn(std::io::Error),
    #[error("bad handshake: {0}")]
    Handshake(String),
    #[error("bridge process exited (status {0:?})")]
    Exited(Option<i32>),
    #[error("malformed response `{line}`: {reason}")]
    Malformed { line: String, reason: String },
    #[error("response id {got} does not match request id {expected}")]
    IdMismatch { expected: u64, got: u64 },
    #[error("request {id} sent {expected} images but got {got} values")]
    CountMismatch { id: u64, expected: usize, got: usize },
    #[error("no response within {0:?}")]
    Timeout(Duration),
    #[error("bridge reported an error for request {id}: {message}")]
    Remote { id: u64, message: String },
    #[error("bridge I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("bridge is unusable after an earlier protocol failure")]
    Poisoned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub proto: u32,
    pub name: String,
    pub is_classifier: bool,
    pub raw_logit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePayload {
    pub w: usize,
    pub h: usize,
    pub pix_b64: String,
}

impl ImagePayload {
    pub fn encode(image: &Image) -> Self {
        Self { w: image.width, h: image.height, pix_b64: B64.encode(&image.pixels) }
    }

    pub fn decode(&self) -> Result<Image, String> {
        let pixels = B64.decode(&self.pix_b64).map_err(|e| e.to_string())?;
        if pixels.len() != self.w * self.h {
            return Err(format!("{} bytes for a {}x{} image", pixels.len(), self.w, self.h));
        }
        Ok(Image { width: self.w, height: self.h, pixels })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub images: Vec<ImagePayload>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct BridgeOptions {
    pub timeout: Duration,
    pub batch_size: usize,
}

impl Default for BridgeOptions {
    fn default() -> Self {
        Self { timeout: Duration::from_secs(60), batch_size: 64 }
    }
}

struct Channel {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    poisoned: bool,
}

impl Channel {
    fn read_line(&mut self, timeout: Duration) -> Result<String, BridgeError> {
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(BridgeError::Io(e)),
            Err(RecvTimeoutError::Timeout) => Err(BridgeError::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                let status = self.child.wait().ok().and_then(|s| s.code());
                Err(BridgeError::Exited(status))
            }
        }
    }

    fn round_trip(&mut self, images: &[Image], timeout: Duration) -> Result<Vec<f64>, BridgeError> {
        let id = self.next_id;
        self.next_id += 1;
        let req = Request { id, images: images.iter().map(ImagePayload::encode).collect() };
        let mut line = serde_json::to_string(&req).expect("request serializes");
        line.push('\n');
        let stdin = self.stdin.as_mut().ok_or(BridgeError::Poisoned)?;
        if let Err(e) = stdin.write_all(line.as_bytes()).and_then(|_| stdin.flush()) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                let status = self.child.wait().ok().and_then(|s| s.code());
                return Err(BridgeError::Exited(status));
            }
            return Err(BridgeError::Io(e));
        }
        let reply = self.read_line(timeout)?;
        let resp: Response = serde_json::from_str(&reply)
            .map_err(|e| BridgeError::Malformed { line: reply.clone(), reason: e.to_string() })?;
        if resp.id != id {
            return Err(BridgeError::IdMismatch { expected: id, got: resp.id });
        }
        if let Some(message) = resp.error {
            return Err(BridgeError::Remote { id, message });
        }
        let values = resp
            .values
            .ok_or_else(|| BridgeError::Malformed { line: reply, reason: "missing `values`".into() })?;
        if values.len() != images.len() {
            return Err(BridgeError::CountMismatch { id, expected: images.len(), got: values.len() });
        }
        Ok(values)
    }
}

/// Predictor backed by a child process speaking the bridge protocol.
/// Concurrent callers are serialized; requests never interleave.
pub struct ExternalPredictor {
    channel: Mutex<Channel>,
    options: BridgeOptions,
    handshake: Handshake,
    meta: PredictorMeta,
}

impl ExternalPredictor {
    /// Launches `command_line` through `sh -c` and waits for the handshake.
    pub fn spawn(command_line: &str, options: BridgeOptions) -> Result<Self, BridgeError> {
        let mut cmd = Command::new("sh");
        cmd.arg("-c").arg(command_line);
        Self::spawn_command(cmd, options)
    }

    pub fn spawn_command(mut cmd: Command, options: BridgeOptions) -> Result<Self, BridgeError> {
        let mut child = cmd
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(BridgeError::Spawn)?;
        let stdout = child.stdout.take().expect("piped stdout");
        let stdin = child.stdin.take();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let mut channel = Channel { child, stdin, lines: rx, next_id: 0, poisoned: false };
        let first = match channel.read_line(options.timeout) {
            Ok(line) => line,
            Err(e) => {
                let _ = channel.child.kill();
                return Err(e);
            }
        };
        let handshake: Handshake = serde_json::from_str(&first).map_err(|e| {
            let _ = channel.child.kill();
            BridgeError::Handshake(format!("{e}: `{first}`"))
        })?;
        if handshake.proto != PROTOCOL_VERSION {
            let _ = channel.child.kill();
            return Err(BridgeError::Handshake(format!("unsupported protocol version {}", handshake.proto)));
        }
        let meta = PredictorMeta {
            name: handshake.name.clone(),
            output_range: if handshake.raw_logit { (f64::NEG_INFINITY, f64::INFINITY) } else { (0.0, 1.0) },
            is_classifier: handshake.is_classifier,
            raw_logit: handshake.raw_logit,
        };
        Ok(Self { channel: Mutex::new(channel), options, handshake, meta })
    }

    pub fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    fn call(&self, images: &[Image]) -> Result<Vec<f64>, BridgeError> {
        let mut ch = self.channel.lock().unwrap_or_else(|p| p.into_inner());
        if ch.poisoned {
            return Err(BridgeError::Poisoned);
        }
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(self.options.batch_size.max(1)) {
            match ch.round_trip(chunk, self.options.timeout) {
                Ok(values) => out.extend(values),
                Err(e) => {
                    // stream position is unknown after a failure
                    ch.poisoned = !matches!(e, BridgeError::Remote { .. });
                    return Err(e);
                }
            }
        }
        Ok(out)
    }
}

impl Drop for ExternalPredictor {
    fn drop(&mut self) {
        let ch = self.channel.get_mut().unwrap_or_else(|p| p.into_inner());
        ch.stdin.take();
        if ch.poisoned {
            let _ = ch.child.kill();
        }
        let _ = ch.child.wait();
    }
}

impl Predictor for ExternalPredictor {
    fn meta(&self) -> &PredictorMeta {
        &self.meta
    }

    fn predict(&self, image: &Image) -> Result<f64, PredictError> {
        Ok(self.call(std::slice::from_ref(image))?[0])
    }

    fn predict_batch(&self, images: &[Image]) -> Result<Vec<f64>, PredictError> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        Ok(self.call(images)?)
    }
}

/// Server side of the protocol: writes the handshake, then answers requests
/// from `input` until EOF. Undecodable requests get an error response
/// carrying whatever id could be recovered.
pub fn serve<R, W, F>(input: R, mut output: W, handshake: &Handshake, mut handler: F) -> std::io::Result<()>
where
    R: BufRead,
    W: Write,
    F: FnMut(&[Image]) -> Result<Vec<f64>, String>,
{
    serde_json::to_writer(&mut output, handshake)?;
    output.write_all(b"\n")?;
    output.flush()?;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = match serde_json::from_str::<Request>(&line) {
            Ok(req) => {
                let decoded: Result<Vec<Image>, String> = req.images.iter().map(ImagePayload::decode).collect();
                match decoded.and_then(|imgs| handler(&imgs)) {
                    Ok(values) => Response { id: req.id, values: Some(values), error: None },
                    Err(message) => Response { id: req.id, values: None, error: Some(message) },
                }
            }
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|id| id.as_u64()))
                    .unwrap_or(u64::MAX);
                Response { id, values: None, error: Some(format!("malformed request: {e}")) }
            }
        };
        serde_json::to_writer(&mut output, &resp)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payload_round_trip() {
        let img = Image { width: 3, height: 2, pixels: vec![0, 1, 2, 250, 255, 7] };
        let p = ImagePayload::encode(&img);
        assert_eq!(p.decode().unwrap(), img);
        let bad = ImagePayload { w: 4, ..p };
        assert!(bad.decode().is_err());
    }

    #[test]
    fn serve_answers_in_order() {
        let hs = Handshake { proto: 1, name: "count".into(), is_classifier: false, raw_logit: false };
        let img = Image { width: 2, height: 1, pixels: vec![0, 9] };
        let mut input = String::new();
        for id in 0..3 {
            let req = Request { id, images: vec![ImagePayload::encode(&img); id as usize + 1] };
            input.push_str(&serde_json::to_string(&req).unwrap());
            input.push('\n');
        }
        input.push_str("{\"id\":7,\"images\":5}\n");
        let mut out = Vec::new();
        serve(input.as_bytes(), &mut out, &hs, |imgs| {
            Ok(imgs.iter().map(|i| i.nonzero_count() as f64).collect())
        })
        .unwrap();
        let lines: Vec<&str> = std::str::from_utf8(&out).unwrap().lines().collect();
        assert_eq!(serde_json::from_str::<Handshake>(lines[0]).unwrap(), hs);
        for id in 0..3u64 {
            let r: Response = serde_json::from_str(lines[id as usize + 1]).unwrap();
            assert_eq!(r.id, id);
            assert_eq!(r.values.unwrap(), vec![1.0; id as usize + 1]);
        }
        let r: Response = serde_json::from_str(lines[4]).unwrap();
        assert_eq!(r.id, 7);
        assert!(r.error.unwrap().contains("malformed"));
    }
}
