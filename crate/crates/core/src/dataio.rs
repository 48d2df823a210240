//! File formats shared across the pipeline.
//!
//! Binary blobs are little-endian `f32` (`.f32le`) or raw bytes (`.u8`);
//! structured metadata is JSON; tabular outputs are plain CSV written with
//! Rust's shortest-round-trip float formatting, so numeric round trips are
//! exact and reruns are byte-identical.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};
use sha2::{Digest, Sha256};

use crate::cnn::Tensor3;
use crate::error::{Error, Result};

/// Class encoding used everywhere: noise, signal, glitch.
pub const CLASS_NOISE: u8 = 0;
/// Gravitational-wave signal class.
pub const CLASS_SIGNAL: u8 = 1;
/// Single-detector transient class.
pub const CLASS_GLITCH: u8 = 2;

/// Class names in label order.
pub const CLASS_NAMES: [&str; 3] = ["noise", "signal", "glitch"];

pub fn write_f32le(path: &Path, values: &[f32]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_f32le(path: &Path) -> Result<Vec<f32>> {
    if !path.exists() {
        return Err(Error::missing(path));
    }
    let mut r = BufReader::new(File::open(path)?);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!(
            "{} has {} bytes, not a multiple of 4",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_u8(path: &Path, values: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(values)?;
    w.flush()?;
    Ok(())
}

pub fn read_u8(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::missing(path));
    }
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    Ok(bytes)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("json encode: {e}")))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::missing(path));
    }
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Write CSV rows; every row must have the header's arity.
pub fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{header}")?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Read a CSV written by [`write_csv`]; returns (header, rows).
pub fn read_csv(path: &Path) -> Result<(String, Vec<Vec<String>>)> {
    if !path.exists() {
        return Err(Error::missing(path));
    }
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{} is empty", path.display())))?
        .to_string();
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(|s| s.to_string()).collect())
        .collect();
    Ok((header, rows))
}

pub fn parse_f64(field: &str, ctx: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| Error::Format(format!("{ctx}: cannot parse `{field}` as a number")))
}

/// Hex SHA-256 of a file, for manifests and determinism checks.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut r = BufReader::new(File::open(path)?);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = r.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

/// A set of fixed-length training windows: `[sample][detector][time]`
/// little-endian `f32` on disk, plus one label byte per sample.
#[derive(Debug, Clone)]
pub struct WindowSet {
    pub n: usize,
    pub detectors: usize,
    pub window_len: usize,
    pub data: Vec<f32>,
    pub labels: Vec<u8>,
}

impl WindowSet {
    pub fn empty(detectors: usize, window_len: usize) -> Self {
        Self { n: 0, detectors, window_len, data: Vec::new(), labels: Vec::new() }
    }

    pub fn push(&mut self, window: &[f32], label: u8) -> Result<()> {
        if window.len() != self.detectors * self.window_len {
            return Err(Error::Shape(format!(
                "window has {} values, expected {}",
                window.len(),
                self.detectors * self.window_len
            )));
        }
        self.data.extend_from_slice(window);
        self.labels.push(label);
        self.n += 1;
        Ok(())
    }

    /// Copy window `i` into a `(1, detectors, window_len)` network input.
    pub fn window_tensor(&self, i: usize) -> Result<Tensor3<f32>> {
        let stride = self.detectors * self.window_len;
        if i >= self.n {
            return Err(Error::Parameter(format!("window {i} out of range ({})", self.n)));
        }
        Tensor3::from_vec(
            self.data[i * stride..(i + 1) * stride].to_vec(),
            (1, self.detectors, self.window_len),
        )
    }

    /// Load `samples.f32le` + `labels.u8` from a dataset directory.
    pub fn load(dir: &Path, detectors: usize, window_len: usize) -> Result<Self> {
        let data = read_f32le(&dir.join("samples.f32le"))?;
        let labels = read_u8(&dir.join("labels.u8"))?;
        let stride = detectors * window_len;
        if data.len() != labels.len() * stride {
            return Err(Error::Format(format!(
                "{}: {} values inconsistent with {} labels of {} values each",
                dir.display(),
                data.len(),
                labels.len(),
                stride
            )));
        }
        Ok(Self { n: labels.len(), detectors, window_len, data, labels })
    }

    /// Write `samples.f32le` + `labels.u8` into a dataset directory.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_f32le(&dir.join("samples.f32le"), &self.data)?;
        write_u8(&dir.join("labels.u8"), &self.labels)?;
        Ok(())
    }
}
