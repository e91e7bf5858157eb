//! Binary datasets: packed storage, MNIST IDX ingestion with binarization,
//! the ASCII `amat` format and a small synthetic manifold generator.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_binary, check_len, DgaError, Result};
use crate::numerics::{Matrix, RngState};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Where a dataset came from and how it was turned into bits.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub binarization: String,
    pub split: String,
    /// SHA-256 of the packed bits, hex encoded.
    #[serde(default)]
    pub content_hash: String,
}

/// Immutable table of fixed-width binary rows, packed 64 bits per word.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryDataset {
    rows: usize,
    width: usize,
    words_per_row: usize,
    bits: Vec<u64>,
    provenance: Provenance,
}

impl BinaryDataset {
    fn empty(rows: usize, width: usize) -> Self {
        let words_per_row = width.div_ceil(64);
        Self { rows, width, words_per_row, bits: vec![0; rows * words_per_row], provenance: Provenance::default() }
    }

    pub fn from_rows(rows: Vec<Vec<u8>>, width: usize) -> Result<Self> {
        let mut ds = Self::empty(rows.len(), width);
        for (r, row) in rows.iter().enumerate() {
            check_len("dataset row", row.len(), width)?;
            check_binary("dataset row", row)?;
            for (c, &b) in row.iter().enumerate() {
                if b == 1 {
                    ds.set_bit(r, c);
                }
            }
        }
        ds.refresh_hash();
        Ok(ds)
    }

    /// Rows of a 0.0/1.0 matrix; any other value is rejected.
    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        let mut ds = Self::empty(m.rows(), m.cols());
        for r in 0..m.rows() {
            for (c, &v) in m.row(r).iter().enumerate() {
                if v == 1.0 {
                    ds.set_bit(r, c);
                } else if v != 0.0 {
                    return Err(DgaError::Domain(format!("value {v} at ({r}, {c}) is not binary")));
                }
            }
        }
        ds.refresh_hash();
        Ok(ds)
    }

    fn set_bit(&mut self, r: usize, c: usize) {
        self.bits[r * self.words_per_row + c / 64] |= 1u64 << (c % 64);
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn with_provenance(mut self, source: &str, binarization: &str, split: &str) -> Self {
        self.provenance.source = source.to_string();
        self.provenance.binarization = binarization.to_string();
        self.provenance.split = split.to_string();
        self
    }

    fn refresh_hash(&mut self) {
        let mut hasher = Sha256::new();
        hasher.update((self.rows as u64).to_le_bytes());
        hasher.update((self.width as u64).to_le_bytes());
        for w in &self.bits {
            hasher.update(w.to_le_bytes());
        }
        self.provenance.content_hash = hex(&hasher.finalize());
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        ((self.bits[r * self.words_per_row + c / 64] >> (c % 64)) & 1) as u8
    }

    pub fn row(&self, r: usize) -> Vec<u8> {
        (0..self.width).map(|c| self.get(r, c)).collect()
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = Vec<u8>> + '_ {
        (0..self.rows).map(|r| self.row(r))
    }

    /// Selected rows as a 0.0/1.0 matrix, in the given order.
    pub fn batch(&self, indices: &[usize]) -> Matrix {
        let mut m = Matrix::zeros(indices.len(), self.width);
        for (out_r, &r) in indices.iter().enumerate() {
            let words = &self.bits[r * self.words_per_row..(r + 1) * self.words_per_row];
            for (c, v) in m.row_mut(out_r).iter_mut().enumerate() {
                *v = ((words[c / 64] >> (c % 64)) & 1) as f64;
            }
        }
        m
    }

    pub fn to_matrix(&self) -> Matrix {
        self.batch(&(0..self.rows).collect::<Vec<_>>())
    }

    /// Rows `start..start + len` (clipped to the dataset).
    pub fn slice(&self, start: usize, len: usize) -> BinaryDataset {
        let start = start.min(self.rows);
        let end = start.saturating_add(len).min(self.rows);
        let mut ds = Self::empty(end - start, self.width);
        ds.bits.copy_from_slice(&self.bits[start * self.words_per_row..end * self.words_per_row]);
        ds.provenance = self.provenance.clone();
        ds.refresh_hash();
        ds
    }

    /// Number of distinct rows.
    pub fn distinct_rows(&self) -> usize {
        let mut seen: Vec<&[u64]> = self.bits.chunks(self.words_per_row.max(1)).take(self.rows).collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    /// Applies a row transform in chunks and collects the binary results.
    pub fn map_batches(&self, width: usize, mut f: impl FnMut(&Matrix) -> Result<Matrix>) -> Result<BinaryDataset> {
        let mut out = Self::empty(self.rows, width);
        let idx: Vec<usize> = (0..self.rows).collect();
        let mut r0 = 0;
        for chunk in idx.chunks(1000) {
            let y = f(&self.batch(chunk))?;
            check_len("mapped batch width", y.cols(), width)?;
            for r in 0..y.rows() {
                for (c, &v) in y.row(r).iter().enumerate() {
                    if v == 1.0 {
                        out.set_bit(r0 + r, c);
                    } else if v != 0.0 {
                        return Err(DgaError::Domain(format!("mapped value {v} is not binary")));
                    }
                }
            }
            r0 += y.rows();
        }
        out.refresh_hash();
        Ok(out)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// How grey pixels become bits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "rule")]
pub enum Binarization {
    /// `pixel / 255 > 0.5`.
    #[default]
    Threshold,
    /// One Bernoulli(`pixel / 255`) draw per pixel.
    Stochastic { seed: u64 },
}

impl Binarization {
    pub fn label(&self) -> String {
        match self {
            Binarization::Threshold => "threshold(p/255>0.5)".to_string(),
            Binarization::Stochastic { seed } => format!("stochastic(seed={seed})"),
        }
    }
}

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DgaError::format(path, format!("truncated header at offset {offset}")))
}

/// Raw IDX image file: `(count, rows, cols, pixels)`.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| DgaError::io(path, e))?;
    let magic = read_u32_be(&bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        let hint = if magic == IDX_LABELS_MAGIC { " (this is a label file)" } else { "" };
        return Err(DgaError::format(path, format!("bad magic 0x{magic:08x} at offset 0{hint}")));
    }
    let count = read_u32_be(&bytes, 4, path)? as usize;
    let rows = read_u32_be(&bytes, 8, path)? as usize;
    let cols = read_u32_be(&bytes, 12, path)? as usize;
    let need = 16 + count * rows * cols;
    if bytes.len() < need {
        return Err(DgaError::format(
            path,
            format!("truncated pixel data: expected {need} bytes, file ends at offset {}", bytes.len()),
        ));
    }
    Ok((count, rows, cols, bytes[16..need].to_vec()))
}

/// Reads an IDX image file and binarizes every pixel.
pub fn load_idx_and_binarize(path: &Path, rule: Binarization) -> Result<BinaryDataset> {
    let (count, rows, cols, pixels) = read_idx_images(path)?;
    let width = rows * cols;
    let mut ds = BinaryDataset::empty(count, width);
    let mut rng = match rule {
        Binarization::Stochastic { seed } => Some(RngState::new(seed)),
        Binarization::Threshold => None,
    };
    for (i, &px) in pixels.iter().enumerate() {
        let p = f64::from(px) / 255.0;
        let bit = match rng.as_mut() {
            None => p > 0.5,
            Some(rng) => rng.uniform() < p,
        };
        if bit {
            ds.set_bit(i / width, i % width);
        }
    }
    ds.refresh_hash();
    Ok(ds.with_provenance(&path.display().to_string(), &rule.label(), ""))
}

/// Parses whitespace-separated 0/1 rows; width comes from the first row.
pub fn parse_amat(text: &str, origin: &Path) -> Result<BinaryDataset> {
    let mut rows = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for tok in line.split_whitespace() {
            match tok {
                "0" => row.push(0u8),
                "1" => row.push(1u8),
                _ => {
                    return Err(DgaError::format(origin, format!("line {}: non-binary token {tok:?}", lineno + 1)));
                }
            }
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(DgaError::format(
                    origin,
                    format!("line {}: {} values, expected {w}", lineno + 1, row.len()),
                ));
            }
            _ => {}
        }
        rows.push(row);
    }
    let width = width.ok_or_else(|| DgaError::format(origin, "no data rows"))?;
    Ok(BinaryDataset::from_rows(rows, width)?.with_provenance(&origin.display().to_string(), "amat", ""))
}

pub fn load_amat(path: &Path) -> Result<BinaryDataset> {
    let text = fs::read_to_string(path).map_err(|e| DgaError::io(path, e))?;
    parse_amat(&text, path)
}

pub fn write_amat(data: &BinaryDataset, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(data.rows() * data.width() * 2);
    for r in 0..data.rows() {
        for c in 0..data.width() {
            if c > 0 {
                out.push(' ');
            }
            out.push(if data.get(r, c) == 1 { '1' } else { '0' });
        }
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| DgaError::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| DgaError::io(path, e))
}

/// Loads `.amat` text or an IDX image file (detected by magic number).
pub fn load_any(path: &Path, rule: Binarization) -> Result<BinaryDataset> {
    let head = fs::read(path).map_err(|e| DgaError::io(path, e))?;
    if head.len() >= 4 && u32::from_be_bytes([head[0], head[1], head[2], head[3]]) == IDX_IMAGES_MAGIC {
        load_idx_and_binarize(path, rule)
    } else {
        let text = String::from_utf8(head).map_err(|_| DgaError::format(path, "neither IDX nor ASCII amat"))?;
        parse_amat(&text, path)
    }
}

/// `n` rows of a `width`-bit dataset supported on at most `2^latent_bits`
/// patterns: latent fair bits go through a fixed random two-layer network
/// (seeded by `rng`) whose output is thresholded.
pub fn synth_manifold(n: usize, width: usize, latent_bits: usize, rng: &mut RngState) -> Result<BinaryDataset> {
    if latent_bits == 0 || latent_bits >= width {
        return Err(DgaError::Config(format!("need 0 < latent bits ({latent_bits}) < width ({width})")));
    }
    let hidden = 2 * width;
    let w1: Vec<f64> = (0..latent_bits * hidden).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
    let b1: Vec<f64> = (0..hidden).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let w2: Vec<f64> = (0..hidden * width).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let b2: Vec<f64> = (0..width).map(|_| rng.uniform_range(-0.5, 0.5)).collect();
    let generate = |z: &[f64]| -> Vec<u8> {
        let hid: Vec<f64> = (0..hidden)
            .map(|j| (b1[j] + (0..latent_bits).map(|i| z[i] * w1[i * hidden + j]).sum::<f64>()).tanh())
            .collect();
        (0..width)
            .map(|k| u8::from(b2[k] + (0..hidden).map(|j| hid[j] * w2[j * width + k]).sum::<f64>() > 0.0))
            .collect()
    };
    let rows = (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..latent_bits).map(|_| if rng.bernoulli(0.5) { 1.0 } else { -1.0 }).collect();
            generate(&z)
        })
        .collect();
    Ok(BinaryDataset::from_rows(rows, width)?.with_provenance(
        &format!("synth_manifold(width={width}, latent_bits={latent_bits})"),
        "native",
        "",
    ))
}
