//! Subprocess extractor protocol.
//!
//! For each image the extractor process is spawned once and receives the
//! image on stdin, either as an 8-bit RGB PNG or as a raw tensor (a JSON line
//! `{"dims":[3,H,W]}` followed by `3*H*W` little-endian `f32` values). It
//! answers on stdout with a one-line JSON header followed by the payload:
//!
//! ```text
//! {"kind":"map","dims":[H,W]}            H*W values (spatial map)
//! {"kind":"labels","dims":[H,W],"classes":K}   H*W label indices
//! {"kind":"vector","dims":[D]}           D values (global embedding)
//! {"kind":"faces","dims":[N,1+D]}        N rows of [bbox_area, embedding...]
//! ```
//!
//! The payload is little-endian `f32` unless the header carries
//! `"encoding":"ascii"`, in which case it is whitespace-separated decimal
//! text. A non-zero exit status, a malformed header or payload, or a run
//! longer than the timeout is an error for that image only.

use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use super::face::FaceDetection;
use super::{Comparison, ConditionMap, Projector, ProjectorKind};
use crate::data::ImageTensor;
use crate::error::{Error, Result};
use crate::imgproc::min_max_normalize;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadEncoding {
    #[default]
    F32le,
    Ascii,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputHeader {
    pub kind: String,
    pub dims: Vec<usize>,
    #[serde(default)]
    pub encoding: PayloadEncoding,
    #[serde(default)]
    pub classes: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExtractorOutput {
    Map { height: usize, width: usize, values: Vec<f64> },
    Labels { height: usize, width: usize, classes: usize, values: Vec<f64> },
    Vector(Vec<f64>),
    Faces(Vec<FaceDetection>),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    #[default]
    Png,
    RawF32,
}

/// Counting gate bounding concurrent invocations.
#[derive(Debug)]
struct Gate {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl Gate {
    fn acquire(&self) -> GateGuard<'_> {
        let mut slots = self.slots.lock().unwrap_or_else(|p| p.into_inner());
        while *slots == 0 {
            slots = self.freed.wait(slots).unwrap_or_else(|p| p.into_inner());
        }
        *slots -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.slots.lock().unwrap_or_else(|p| p.into_inner()) += 1;
        self.0.freed.notify_one();
    }
}

/// A subprocess extractor.
#[derive(Clone, Debug)]
pub struct ExtractorProcess {
    pub name: String,
    pub program: String,
    pub args: Vec<String>,
    pub timeout: Duration,
    pub input: InputFormat,
    gate: Arc<Gate>,
}

impl ExtractorProcess {
    /// `max_concurrent` bounds simultaneous invocations; use 1 for
    /// extractors that are not reentrant.
    pub fn new(
        name: impl Into<String>,
        program: impl Into<String>,
        args: Vec<String>,
        timeout: Duration,
        max_concurrent: usize,
    ) -> Self {
        Self {
            name: name.into(),
            program: program.into(),
            args,
            timeout,
            input: InputFormat::Png,
            gate: Arc::new(Gate {
                slots: Mutex::new(max_concurrent.max(1)),
                freed: Condvar::new(),
            }),
        }
    }

    pub fn with_input(mut self, input: InputFormat) -> Self {
        self.input = input;
        self
    }

    fn encode_input(&self, image: &ImageTensor) -> Result<Vec<u8>> {
        match self.input {
            InputFormat::Png => {
                let mut buf = std::io::Cursor::new(Vec::new());
                image
                    .to_rgb8()
                    .write_to(&mut buf, image::ImageFormat::Png)
                    .map_err(|e| Error::adapter(&self.name, e))?;
                Ok(buf.into_inner())
            }
            InputFormat::RawF32 => {
                let (c, h, w) = image.shape();
                let mut buf = format!("{{\"dims\":[{c},{h},{w}]}}\n").into_bytes();
                for &v in image.data() {
                    buf.extend_from_slice(&(v as f32).to_le_bytes());
                }
                Ok(buf)
            }
        }
    }

    /// Runs the extractor on one image.
    pub fn run(&self, image: &ImageTensor) -> Result<ExtractorOutput> {
        let input = self.encode_input(image)?;
        let _slot = self.gate.acquire();
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::adapter(&self.name, format!("cannot spawn `{}`: {e}", self.program)))?;

        let mut stdin = child.stdin.take().expect("stdin piped");
        let writer = std::thread::spawn(move || {
            // the child may exit without reading; a broken pipe is not our error
            let _ = stdin.write_all(&input);
        });
        let mut stdout = child.stdout.take().expect("stdout piped");
        let reader = std::thread::spawn(move || {
            let mut out = Vec::new();
            stdout.read_to_end(&mut out).map(|_| out)
        });
        let mut stderr = child.stderr.take().expect("stderr piped");
        let err_reader = std::thread::spawn(move || {
            let mut out = String::new();
            let _ = stderr.read_to_string(&mut out);
            out
        });

        let status = match child
            .wait_timeout(self.timeout)
            .map_err(|e| Error::adapter(&self.name, e))?
        {
            Some(status) => status,
            None => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::Timeout {
                    name: self.name.clone(),
                    seconds: self.timeout.as_secs_f64(),
                });
            }
        };
        let _ = writer.join();
        let stdout = reader
            .join()
            .map_err(|_| Error::adapter(&self.name, "stdout reader panicked"))?
            .map_err(|e| Error::adapter(&self.name, e))?;
        let stderr = err_reader.join().unwrap_or_default();
        if !status.success() {
            let tail: String = stderr.lines().last().unwrap_or("").chars().take(200).collect();
            return Err(Error::adapter(&self.name, format!("exited with {status}: {tail}")));
        }
        parse_output(&self.name, &stdout)
    }
}

fn malformed(name: &str, message: impl Into<String>) -> Error {
    Error::MalformedOutput {
        name: name.to_string(),
        message: message.into(),
    }
}

/// Parses an extractor response (header line plus payload).
pub fn parse_output(name: &str, bytes: &[u8]) -> Result<ExtractorOutput> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| malformed(name, "missing header line"))?;
    let header: OutputHeader = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| malformed(name, format!("bad header: {e}")))?;
    let payload = &bytes[newline + 1..];
    let count: usize = header.dims.iter().product();
    let values: Vec<f64> = match header.encoding {
        PayloadEncoding::F32le => {
            if payload.len() != 4 * count {
                return Err(malformed(
                    name,
                    format!("expected {} payload bytes, got {}", 4 * count, payload.len()),
                ));
            }
            payload
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect()
        }
        PayloadEncoding::Ascii => {
            let text = std::str::from_utf8(payload).map_err(|e| malformed(name, e.to_string()))?;
            let vals: std::result::Result<Vec<f64>, _> = text.split_whitespace().map(str::parse::<f64>).collect();
            let vals = vals.map_err(|e| malformed(name, e.to_string()))?;
            if vals.len() != count {
                return Err(malformed(name, format!("expected {count} values, got {}", vals.len())));
            }
            vals
        }
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(malformed(name, "non-finite value in payload"));
    }
    match (header.kind.as_str(), header.dims.as_slice()) {
        ("map", &[height, width]) => Ok(ExtractorOutput::Map { height, width, values }),
        ("labels", &[height, width]) => {
            let classes = header
                .classes
                .filter(|&k| k >= 2)
                .ok_or_else(|| malformed(name, "labels need `classes` >= 2"))?;
            if values.iter().any(|&v| v < 0.0 || v >= classes as f64 || v.fract() != 0.0) {
                return Err(malformed(name, "label outside 0..classes"));
            }
            Ok(ExtractorOutput::Labels { height, width, classes, values })
        }
        ("vector", &[_]) => Ok(ExtractorOutput::Vector(values)),
        ("faces", &[n, row]) => {
            if n > 0 && row < 2 {
                return Err(malformed(name, "face rows need an area and an embedding"));
            }
            let faces = values
                .chunks_exact(row.max(1))
                .take(n)
                .map(|r| FaceDetection {
                    bbox_area: r[0],
                    embedding: r[1..].to_vec(),
                })
                .collect();
            Ok(ExtractorOutput::Faces(faces))
        }
        (kind, dims) => Err(malformed(name, format!("unsupported kind `{kind}` with dims {dims:?}"))),
    }
}

/// How an external spatial map is brought into `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapNormalization {
    /// Per-image min-max (scale and shift invariant; relative depth).
    MinMax,
    /// Clamp into `[0, 1]`.
    Clamp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectedOutput {
    Map(MapNormalization),
    Labels,
}

/// A spatial projector backed by an [`ExtractorProcess`].
#[derive(Clone, Debug)]
pub struct ExternalProjector {
    pub name: String,
    pub process: ExtractorProcess,
    pub expected: ExpectedOutput,
}

impl ExternalProjector {
    pub fn new(name: impl Into<String>, process: ExtractorProcess, expected: ExpectedOutput) -> Self {
        Self {
            name: name.into(),
            process,
            expected,
        }
    }
}

impl Projector for ExternalProjector {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> ProjectorKind {
        ProjectorKind::SpatialMap
    }

    fn comparison(&self) -> Comparison {
        match self.expected {
            ExpectedOutput::Map(_) => Comparison::L1Mean,
            ExpectedOutput::Labels => Comparison::LabelMismatch,
        }
    }

    fn stamp(&self) -> String {
        format!(
            "external({} {},{:?})",
            self.process.program,
            self.process.args.join(" "),
            self.expected
        )
    }

    fn apply(&self, image: &ImageTensor) -> Result<ConditionMap> {
        match (self.process.run(image)?, self.expected) {
            (ExtractorOutput::Map { height, width, mut values }, ExpectedOutput::Map(norm)) => {
                match norm {
                    MapNormalization::MinMax => min_max_normalize(&mut values),
                    MapNormalization::Clamp => values.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0)),
                }
                ConditionMap::spatial(&self.name, height, width, values)
            }
            (ExtractorOutput::Labels { height, width, classes, values }, ExpectedOutput::Labels) => {
                let top = (classes - 1) as f64;
                ConditionMap::spatial(&self.name, height, width, values.into_iter().map(|v| v / top).collect())
            }
            (other, expected) => Err(malformed(
                &self.name,
                format!("expected {expected:?}, got {}", output_kind(&other)),
            )),
        }
    }
}

pub(crate) fn output_kind(o: &ExtractorOutput) -> &'static str {
    match o {
        ExtractorOutput::Map { .. } => "map",
        ExtractorOutput::Labels { .. } => "labels",
        ExtractorOutput::Vector(_) => "vector",
        ExtractorOutput::Faces(_) => "faces",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_binary_map() {
        let mut bytes = b"{\"kind\":\"map\",\"dims\":[1,2]}\n".to_vec();
        bytes.extend_from_slice(&0.25f32.to_le_bytes());
        bytes.extend_from_slice(&2.0f32.to_le_bytes());
        assert_eq!(
            parse_output("t", &bytes).unwrap(),
            ExtractorOutput::Map { height: 1, width: 2, values: vec![0.25, 2.0] }
        );
    }

    #[test]
    fn parses_ascii_faces() {
        let bytes = b"{\"kind\":\"faces\",\"dims\":[2,3],\"encoding\":\"ascii\"}\n10 1 0\n40 0 1\n";
        let ExtractorOutput::Faces(f) = parse_output("t", bytes).unwrap() else {
            panic!("expected faces")
        };
        assert_eq!(f.len(), 2);
        assert_eq!(f[1].bbox_area, 40.0);
        assert_eq!(f[1].embedding, vec![0.0, 1.0]);
    }

    #[test]
    fn rejects_truncated_payload_and_bad_header() {
        let bytes = b"{\"kind\":\"vector\",\"dims\":[4]}\n\x00\x00";
        assert!(matches!(parse_output("t", bytes), Err(Error::MalformedOutput { .. })));
        assert!(parse_output("t", b"not json\n").is_err());
        assert!(parse_output("t", b"no newline").is_err());
        let labels = b"{\"kind\":\"labels\",\"dims\":[1,1],\"classes\":3,\"encoding\":\"ascii\"}\n7";
        assert!(parse_output("t", labels).is_err());
    }
}
