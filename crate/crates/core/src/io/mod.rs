//! Artifact files, run manifests and metric tables.
//!
//! Every artifact is a line-oriented text container:
//!
//! ```text
//! lsr-<kind> 1
//! key=value            (header, any number of lines)
//! @<section> <count>   (followed by exactly <count> record lines)
//! ```
//!
//! Real numbers are written in scientific notation with 9 significant digits.

mod formats;
mod report;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use sha2::{Digest, Sha256};

use crate::error::{LsrError, Result};

pub use formats::{
    read_apn, read_dataset, read_latent, read_model, read_plans, read_roadmap, write_apn, write_dataset, write_latent,
    write_model, write_plans, write_roadmap, DatasetFile, LatentFile, PlanFile, RoadmapFile, StoredPlan,
};
pub use report::{summarize, write_metrics, write_summary, FileHash, Manifest, MetricRow, SummaryRow};

pub const FORMAT_VERSION: u32 = 1;

/// 9 significant digits, round-trippable through `f64::from_str`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.8e}")
}

pub fn fmt_vec(xs: &[f64]) -> String {
    let mut s = String::with_capacity(xs.len() * 16);
    for (k, x) in xs.iter().enumerate() {
        if k > 0 {
            s.push(',');
        }
        let _ = write!(s, "{x:.8e}");
    }
    s
}

/// Rounds through the file representation.
pub fn quantize(x: f64) -> f64 {
    fmt_f64(x).parse().expect("formatted floats parse")
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_bytes(&std::fs::read(path)?))
}

pub fn load_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| format_err(path, e))?;
    toml::from_str(&text).map_err(|e| format_err(path, e))
}

fn format_err(path: &Path, e: impl std::fmt::Display) -> LsrError {
    LsrError::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    }
}

/// Builds a container in memory.
#[derive(Debug, Default)]
pub(crate) struct Writer {
    out: String,
}

impl Writer {
    pub fn new(kind: &str) -> Self {
        Writer {
            out: format!("lsr-{kind} {FORMAT_VERSION}\n"),
        }
    }

    pub fn header(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        let _ = writeln!(self.out, "{key}={value}");
        self
    }

    pub fn section<I, S>(&mut self, name: &str, records: I) -> &mut Self
    where
        I: IntoIterator<Item = S>,
        I::IntoIter: ExactSizeIterator,
        S: AsRef<str>,
    {
        let records = records.into_iter();
        let _ = writeln!(self.out, "@{name} {}", records.len());
        for r in records {
            self.out.push_str(r.as_ref());
            self.out.push('\n');
        }
        self
    }

    pub fn finish(&mut self) -> String {
        std::mem::take(&mut self.out)
    }
}

/// One record line with its 1-based line number.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Record<'a> {
    pub line: usize,
    pub text: &'a str,
}

impl<'a> Record<'a> {
    pub fn err(&self, detail: impl Into<String>) -> LsrError {
        LsrError::parse(self.line, detail)
    }

    /// Tab-separated fields, exactly `n` of them.
    pub fn fields(&self, n: usize) -> Result<Vec<&'a str>> {
        let f: Vec<&str> = self.text.split('\t').collect();
        if f.len() != n {
            return Err(self.err(format!("expected {n} tab-separated fields, found {}", f.len())));
        }
        Ok(f)
    }

    pub fn parse<T: FromStr>(&self, s: &str, what: &str) -> Result<T> {
        s.trim().parse().map_err(|_| self.err(format!("invalid {what} '{s}'")))
    }

    pub fn floats(&self, s: &str) -> Result<Vec<f64>> {
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(',').map(|x| self.parse(x, "number")).collect()
    }

    pub fn indices(&self, s: &str) -> Result<Vec<usize>> {
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(',').map(|x| self.parse(x, "index")).collect()
    }

    /// `-` for absent.
    pub fn opt<T: FromStr>(&self, s: &str, what: &str) -> Result<Option<T>> {
        if s == "-" {
            Ok(None)
        } else {
            self.parse(s, what).map(Some)
        }
    }
}

pub(crate) fn fmt_opt(x: Option<impl ToString>) -> String {
    x.map_or_else(|| "-".to_string(), |v| v.to_string())
}

pub(crate) fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Parsed container.
#[derive(Debug)]
pub(crate) struct Container<'a> {
    header: BTreeMap<&'a str, (usize, &'a str)>,
    sections: Vec<(&'a str, usize, Vec<Record<'a>>)>,
}

impl<'a> Container<'a> {
    pub fn parse(text: &'a str, kind: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let magic = format!("lsr-{kind}");
        match lines.next() {
            Some((_, first)) => {
                let (m, v) = first.split_once(' ').unwrap_or((first, ""));
                if m != magic {
                    return Err(LsrError::parse(1, format!("not an lsr {kind} file (expected '{magic}')")));
                }
                if v.parse::<u32>().ok() != Some(FORMAT_VERSION) {
                    return Err(LsrError::parse(1, format!("unsupported format version '{v}'")));
                }
            }
            None => return Err(LsrError::parse(1, "empty file")),
        }
        let mut header = BTreeMap::new();
        let mut sections = Vec::new();
        while let Some((n, line)) = lines.next() {
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('@') {
                let (name, count) = rest
                    .split_once(' ')
                    .and_then(|(a, b)| Some((a, b.parse::<usize>().ok()?)))
                    .ok_or_else(|| LsrError::parse(n, format!("malformed section line '{line}'")))?;
                let mut records = Vec::with_capacity(count);
                for _ in 0..count {
                    let (line, text) = lines
                        .next()
                        .ok_or_else(|| LsrError::parse(n, format!("section '{name}' truncated: expected {count} records")))?;
                    records.push(Record { line, text });
                }
                sections.push((name, n, records));
            } else if sections.is_empty() {
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| LsrError::parse(n, format!("expected key=value, found '{line}'")))?;
                header.insert(k, (n, v));
            } else {
                return Err(LsrError::parse(n, "unexpected line after the last section"));
            }
        }
        Ok(Container { header, sections })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let (n, v) = self
            .header
            .get(key)
            .ok_or_else(|| LsrError::parse(1, format!("missing header field '{key}'")))?;
        v.parse().map_err(|_| LsrError::parse(*n, format!("invalid value '{v}' for '{key}'")))
    }

    pub fn raw(&self, key: &str) -> Option<&'a str> {
        self.header.get(key).map(|(_, v)| *v)
    }

    pub fn section(&self, name: &str) -> Result<&[Record<'a>]> {
        self.section_opt(name)
            .ok_or_else(|| LsrError::parse(1, format!("missing section '@{name}'")))
    }

    pub fn section_opt(&self, name: &str) -> Option<&[Record<'a>]> {
        self.sections.iter().find(|s| s.0 == name).map(|s| s.2.as_slice())
    }

    pub fn section_line(&self, name: &str) -> usize {
        self.sections.iter().find(|s| s.0 == name).map_or(1, |s| s.1)
    }
}

/// Reads `path` and parses it with `f`, attributing failures to the file.
pub(crate) fn read_with<T>(path: &Path, f: impl FnOnce(&str) -> Result<T>) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| format_err(path, e))?;
    f(&text).map_err(|e| match e {
        LsrError::Format { .. } => e,
        other => format_err(path, other),
    })
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text).map_err(|e| format_err(path, e))
}

/// Path with `suffix` appended to the file name.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}
