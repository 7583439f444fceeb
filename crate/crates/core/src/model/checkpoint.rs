//! `FSC1` classifier checkpoints.
//!
//! ```text
//! magic        4 bytes "FSC1"
//! dim          u32 LE
//! base_count   u32 LE
//! novel_count  u32 LE
//! weights      (base_count + novel_count) columns x dim f64 LE, column-major
//! [affine]     optional: u32 count, count x f64 gamma, count x f64 beta
//! ```
//!
//! Class ids are not stored; a loaded classifier numbers its columns
//! `0..|C|`. Use [`LinearClassifier::relabel`] to restore source ids.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::LinearClassifier;
use crate::affine::AffineParams;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FSC1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub classifier: LinearClassifier,
    pub affine: Option<AffineParams>,
}

impl LinearClassifier {
    /// Replaces the column class ids.
    pub fn relabel(mut self, class_map: Vec<u32>) -> Result<Self> {
        if class_map.len() != self.class_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} class ids for {} columns",
                class_map.len(),
                self.class_count()
            )));
        }
        self.class_map = class_map;
        Ok(self)
    }
}

pub fn write_checkpoint(
    clf: &LinearClassifier,
    affine: Option<&AffineParams>,
    mut out: impl Write,
) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 8 * clf.weights.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(clf.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(clf.base_class_count as u32).to_le_bytes());
    buf.extend_from_slice(&(clf.novel_class_count as u32).to_le_bytes());
    for col in clf.weights.columns() {
        for v in col {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(a) = affine {
        if a.len() != clf.class_count() {
            return Err(Error::ShapeMismatch("affine parameter count".into()));
        }
        buf.extend_from_slice(&(a.len() as u32).to_le_bytes());
        for v in a.gamma.iter().chain(a.beta.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint(mut input: impl Read) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    if buf.len() < 16 || &buf[..4] != MAGIC {
        return Err(Error::MalformedHeader("bad checkpoint magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
    let dim = u32_at(4);
    let base = u32_at(8);
    let novel = u32_at(12);
    let classes = base + novel;
    let weights_end = 16 + 8 * dim * classes;
    if buf.len() < weights_end {
        return Err(Error::MalformedHeader("truncated weights".into()));
    }
    let mut weights = Array2::zeros((dim, classes));
    for c in 0..classes {
        for r in 0..dim {
            weights[[r, c]] = f64_at(16 + 8 * (c * dim + r));
        }
    }
    let classifier = LinearClassifier::with_partition(weights, base, (0..classes as u32).collect())?;

    let affine = if buf.len() == weights_end {
        None
    } else {
        if buf.len() < weights_end + 4 {
            return Err(Error::MalformedHeader("truncated affine block".into()));
        }
        let count = u32_at(weights_end);
        if count != classes || buf.len() != weights_end + 4 + 16 * count {
            return Err(Error::MalformedHeader("affine block size".into()));
        }
        let start = weights_end + 4;
        let gamma = (0..count).map(|i| f64_at(start + 8 * i)).collect();
        let beta = (0..count).map(|i| f64_at(start + 8 * (count + i))).collect();
        Some(AffineParams { gamma, beta })
    };
    Ok(Checkpoint { classifier, affine })
}

pub fn save_checkpoint(
    clf: &LinearClassifier,
    affine: Option<&AffineParams>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    write_checkpoint(clf, affine, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_checkpoint(std::io::BufReader::new(fs::File::open(path)?))
}
