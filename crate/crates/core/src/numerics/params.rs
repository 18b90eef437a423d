//! Named, ordered parameter collections.
//!
//! A [`ParamVector`] is the single currency shared by models, the optimizer,
//! weight averaging and the gradient collectives: gradients use the same
//! layout as the parameters they belong to, and flattening walks entries in
//! insertion order so every worker built from the same spec agrees on it.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! magic  b"PVEC"   version u32 = 1   count u32
//! per entry:
//!   name_len u32, name (utf-8), trainable u8, ndim u32, dims u64 * ndim,
//!   data f64 * product(dims)
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PVEC";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    entries: Vec<(String, Tensor)>,
    trainable_mask: Vec<bool>,
}

impl ParamVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an entry and returns its index. Names must be unique.
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) -> Result<usize> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(Error::invalid(format!("duplicate parameter name {name:?}")));
        }
        self.entries.push((name, tensor));
        self.trainable_mask.push(trainable);
        Ok(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.entries[idx].0
    }

    pub fn tensor(&self, idx: usize) -> &Tensor {
        &self.entries[idx].1
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.entries[idx].1
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.entries[i].1)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn is_trainable(&self, idx: usize) -> bool {
        self.trainable_mask[idx]
    }

    pub fn trainable_mask(&self) -> &[bool] {
        &self.trainable_mask
    }

    pub fn set_trainable(&mut self, idx: usize, trainable: bool) {
        self.trainable_mask[idx] = trainable;
    }

    /// Sets the mask of every entry whose name starts with `prefix`.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for (i, (n, _)) in self.entries.iter().enumerate() {
            if n.starts_with(prefix) {
                self.trainable_mask[i] = trainable;
            }
        }
    }

    pub fn num_params(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn num_trainable(&self) -> usize {
        self.entries
            .iter()
            .zip(&self.trainable_mask)
            .filter(|(_, &m)| m)
            .map(|((_, t), _)| t.len())
            .sum()
    }

    /// Same names, shapes and mask; all values zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
                .collect(),
            trainable_mask: self.trainable_mask.clone(),
        }
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((n1, t1), (n2, t2))| n1 == n2 && t1.shape() == t2.shape())
    }

    pub(crate) fn check_layout(&self, other: &ParamVector, what: &str) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::shape(format!("{what}: parameter layouts differ")))
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, t) in &self.entries {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Overwrites values from a flat buffer produced by [`flatten`](Self::flatten).
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape(format!(
                "flat buffer of {} for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut off = 0;
        for (_, t) in &mut self.entries {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Copies every value (not the mask) from `other`.
    pub fn assign(&mut self, other: &ParamVector) -> Result<()> {
        self.check_layout(other, "assign")?;
        for ((_, dst), (_, src)) in self.entries.iter_mut().zip(&other.entries) {
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for (_, t) in &mut self.entries {
            t.scale(alpha);
        }
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> Result<f64> {
        self.check_layout(other, "max_abs_diff")?;
        Ok(self
            .entries
            .iter()
            .zip(&other.entries)
            .flat_map(|((_, a), (_, b))| a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max))
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.is_finite())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for ((name, t), &trainable) in self.entries.iter().zip(&self.trainable_mask) {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[trainable as u8])?;
            w.write_all(&(t.ndim() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format("parameter file", "bad magic"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::format("parameter file", format!("unsupported version {version}")));
        }
        let count = read_u32(&mut r)? as usize;
        let mut out = ParamVector::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|e| Error::format("parameter file", e.to_string()))?;
            let mut flag = [0u8; 1];
            r.read_exact(&mut flag)?;
            let ndim = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            out.push(name, Tensor::new(shape, data)?, flag[0] != 0)?;
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
