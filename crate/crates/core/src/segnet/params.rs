//! Flat parameter vectors with a named-tensor layout, and the checkpoint
//! format built on them.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One named tensor inside a [`ParamVec`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered, contiguous tensor index.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    tensors: Vec<TensorSpec>,
    total: usize,
}

impl Layout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor and returns its offset.
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize]) -> usize {
        let offset = self.total;
        let spec = TensorSpec {
            name: name.into(),
            offset,
            shape: shape.to_vec(),
        };
        self.total += spec.len();
        self.tensors.push(spec);
        offset
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }

    fn check_contiguous(&self) -> Result<()> {
        let mut at = 0;
        for t in &self.tensors {
            if t.offset != at {
                return Err(Error::invalid("layout", format!("tensor {} is not contiguous", t.name)));
            }
            at += t.len();
        }
        if at != self.total {
            return Err(Error::invalid("layout", "total length disagrees with tensors"));
        }
        Ok(())
    }
}

/// Model parameters (or an update) as one flat `f64` sequence.
///
/// The layout is shared by reference; vectors built from the same
/// architecture compare layouts by value, so clients and server agree
/// whenever their configs do.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVec {
    values: Vec<f64>,
    layout: Arc<Layout>,
}

impl ParamVec {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        Self {
            values: vec![0.0; layout.total()],
            layout,
        }
    }

    pub fn from_values(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total() {
            return Err(Error::DimensionMismatch {
                expected: layout.total().to_string(),
                actual: values.len().to_string(),
            });
        }
        Ok(Self { values, layout })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout.clone())
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.get(name).map(|t| &self.values[t.range()])
    }

    /// Fails unless both vectors share one layout.
    pub fn check_same_layout(&self, other: &ParamVec) -> Result<()> {
        if Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: format!("layout of {} values", self.layout.total()),
                actual: format!("layout of {} values", other.layout.total()),
            })
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &ParamVec) -> Result<f64> {
        self.check_same_layout(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }

    /// `self += a * x`.
    pub fn axpy(&mut self, a: f64, x: &ParamVec) -> Result<()> {
        self.check_same_layout(x)?;
        for (s, v) in self.values.iter_mut().zip(&x.values) {
            *s += a * v;
        }
        Ok(())
    }

    /// `self - other`.
    pub fn sub(&self, other: &ParamVec) -> Result<ParamVec> {
        self.check_same_layout(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(ParamVec {
            values,
            layout: self.layout.clone(),
        })
    }

    /// `self + other`.
    pub fn add(&self, other: &ParamVec) -> Result<ParamVec> {
        self.check_same_layout(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(ParamVec {
            values,
            layout: self.layout.clone(),
        })
    }

    pub fn scale(&mut self, a: f64) {
        for v in &mut self.values {
            *v *= a;
        }
    }

    /// Writes the checkpoint format: a text header line with the JSON
    /// layout, then the raw little-endian values.
    pub fn write_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = Vec::with_capacity(self.values.len() * 8 + 256);
        bytes.extend_from_slice(CHECKPOINT_MAGIC.as_bytes());
        bytes.push(b'\n');
        bytes.extend_from_slice(serde_json::to_string(&*self.layout)?.as_bytes());
        bytes.push(b'\n');
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<ParamVec> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |reason: &str| Error::Format {
            kind: "checkpoint",
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let mut lines = bytes.splitn(3, |b| *b == b'\n');
        if lines.next() != Some(CHECKPOINT_MAGIC.as_bytes()) {
            return Err(bad("missing magic line"));
        }
        let header = lines.next().ok_or_else(|| bad("missing layout line"))?;
        let layout: Layout = serde_json::from_slice(header).map_err(|e| bad(&e.to_string()))?;
        layout.check_contiguous().map_err(|e| bad(&e.to_string()))?;
        let body = lines.next().unwrap_or(&[]);
        if body.len() != layout.total() * 8 {
            return Err(bad(&format!(
                "expected {} value bytes, found {}",
                layout.total() * 8,
                body.len()
            )));
        }
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(ParamVec {
            values,
            layout: Arc::new(layout),
        })
    }
}

const CHECKPOINT_MAGIC: &str = "ECGFED-CKPT v1";

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> Arc<Layout> {
        let mut l = Layout::new();
        l.push("a", &[2, 3]);
        l.push("b", &[4]);
        Arc::new(l)
    }

    #[test]
    fn offsets_are_contiguous() {
        let l = layout();
        assert_eq!(l.total(), 10);
        assert_eq!(l.get("b").unwrap().offset, 6);
        l.check_contiguous().unwrap();
    }

    #[test]
    fn arithmetic() {
        let l = layout();
        let a = ParamVec::from_values(l.clone(), (0..10).map(f64::from).collect()).unwrap();
        let mut b = a.zeros_like();
        b.axpy(2.0, &a).unwrap();
        assert_eq!(b.values()[3], 6.0);
        assert_eq!(b.sub(&a).unwrap(), a);
        assert_eq!(a.tensor("b").unwrap(), &[6.0, 7.0, 8.0, 9.0]);
        assert!(ParamVec::from_values(l, vec![0.0; 3]).is_err());
    }

    #[test]
    fn layouts_must_agree() {
        let mut other = Layout::new();
        other.push("a", &[10]);
        let a = ParamVec::zeros(layout());
        let b = ParamVec::zeros(Arc::new(other));
        assert!(a.sub(&b).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let vals: Vec<f64> = (0..10).map(|i| (i as f64 * 0.37).sin() / 3.0).collect();
        let a = ParamVec::from_values(layout(), vals).unwrap();
        a.write_checkpoint(&p).unwrap();
        let b = ParamVec::read_checkpoint(&p).unwrap();
        assert_eq!(a.values(), b.values());
        assert_eq!(**a.layout(), **b.layout());
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
        assert!(ParamVec::read_checkpoint(&p).is_err());
    }
}
