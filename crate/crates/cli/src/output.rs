//! Deterministic artifacts: fixed field order (struct declaration order),
//! every float as `{:.16e}`, and a header with the config hash and version.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Pretty printer that writes floats with 17 significant digits, `-0` as
/// `0` and non-finite values as `null`.
struct FixedFloat<'a>(PrettyFormatter<'a>);

impl FixedFloat<'_> {
    fn float<W: ?Sized + Write>(writer: &mut W, v: f64) -> io::Result<()> {
        if v.is_finite() {
            writer.write_all(scqa::scqa::fmt_f64(v).as_bytes())
        } else {
            writer.write_all(b"null")
        }
    }
}

impl Formatter for FixedFloat<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, v: f64) -> io::Result<()> {
        Self::float(writer, v)
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, v: f32) -> io::Result<()> {
        Self::float(writer, v as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedFloat(PrettyFormatter::new()));
    value.serialize(&mut ser).expect("report types serialize");
    buf.push(b'\n');
    String::from_utf8(buf).expect("JSON is UTF-8")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorReport {
    pub kind: String,
    pub message: String,
    /// Simulation time at which a drift check tripped, when known.
    pub t: Option<f64>,
    /// Field path for configuration errors.
    pub path: Option<String>,
}

/// Common envelope of every JSON artifact.
#[derive(Debug, Clone, Serialize)]
pub struct Report<T: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config_sha256: String,
    /// `ok`, `fail` (ran, but missed a configured tolerance) or `error`.
    pub status: &'static str,
    pub result: Option<T>,
    pub error: Option<ErrorReport>,
}

impl<T: Serialize> Report<T> {
    pub fn new(command: &'static str, config_sha256: &str) -> Self {
        Report {
            tool: "scqa",
            version: VERSION,
            command,
            config_sha256: config_sha256.to_string(),
            status: "ok",
            result: None,
            error: None,
        }
    }
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), text)
}

/// Writes rows of pre-formatted fields with a header.
pub fn write_csv(dir: &Path, name: &str, header: &[&str], rows: &[Vec<String>]) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(name))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()
}
