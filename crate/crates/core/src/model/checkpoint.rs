//! Binary tensor checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "HLORACK1"
//! count   u32      number of tensors
//! repeated `count` times:
//!   name_len u32, name (UTF-8, name_len bytes)
//!   rows u32, cols u32
//!   rows*cols f64 values, row-major
//! ```
//!
//! Values are always stored as `f64`, whatever the in-memory scalar type.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{ensure, Error, Result};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

use super::params::{FrozenBase, TrainableParams};
use super::ModelConfig;

const MAGIC: &[u8; 8] = b"HLORACK1";

pub fn encode_tensors<T: Scalar>(tensors: &[(String, Matrix<T>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, m) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
        for &v in m.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    out
}

pub fn decode_tensors<T: Scalar>(mut bytes: &[u8]) -> Result<Vec<(String, Matrix<T>)>> {
    fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
        ensure!(bytes.len() >= n, Format, "checkpoint truncated");
        let (head, rest) = bytes.split_at(n);
        *bytes = rest;
        Ok(head)
    }
    fn u32_at(bytes: &mut &[u8]) -> Result<usize> {
        let mut b = [0u8; 4];
        take(bytes, 4)?.read_exact(&mut b).expect("length checked");
        Ok(u32::from_le_bytes(b) as usize)
    }

    ensure!(
        take(&mut bytes, 8)? == MAGIC,
        Format,
        "not a checkpoint (bad magic)"
    );
    let count = u32_at(&mut bytes)?;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let len = u32_at(&mut bytes)?;
        let name = String::from_utf8(take(&mut bytes, len)?.to_vec())
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rows = u32_at(&mut bytes)?;
        let cols = u32_at(&mut bytes)?;
        let raw = take(&mut bytes, rows * cols * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        tensors.push((name, Matrix::from_vec(rows, cols, data)?));
    }
    ensure!(bytes.is_empty(), Format, "trailing bytes after last tensor");
    Ok(tensors)
}

fn row<T: Scalar>(v: &[T]) -> Matrix<T> {
    Matrix::from_vec(1, v.len(), v.to_vec()).expect("row vector")
}

impl<T: Scalar> TrainableParams<T> {
    pub fn named_tensors(&self) -> Vec<(String, Matrix<T>)> {
        let mut out = Vec::new();
        for (j, g) in self.layers().iter().enumerate() {
            for (name, t) in ["a_q", "b_q", "a_v", "b_v"].iter().zip(g.tensors()) {
                out.push((format!("lora.{j}.{name}"), t.clone()));
            }
        }
        out.push(("head.w".into(), self.head_w().clone()));
        out.push(("head.b".into(), self.head_b().clone()));
        out
    }

    pub fn from_named(cfg: &ModelConfig, tensors: &[(String, Matrix<T>)]) -> Result<Self> {
        let template = TrainableParams::<T>::zeros(cfg);
        let expected = template.named_tensors();
        ensure!(
            tensors.len() == expected.len(),
            Shape,
            "checkpoint has {} tensors, configuration expects {}",
            tensors.len(),
            expected.len()
        );
        let mut flat = Vec::with_capacity(template.num_coordinates());
        for ((name, m), (ename, em)) in tensors.iter().zip(&expected) {
            ensure!(
                name == ename && m.shape() == em.shape(),
                Shape,
                "tensor {name} {:?} does not match expected {ename} {:?}",
                m.shape(),
                em.shape()
            );
            flat.extend_from_slice(m.data());
        }
        let mut params = template;
        params.set_flat(&flat)?;
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &encode_tensors(&self.named_tensors()))
    }

    pub fn load(path: &Path, cfg: &ModelConfig) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_named(cfg, &decode_tensors(&bytes)?)
    }
}

impl<T: Scalar> FrozenBase<T> {
    pub fn named_tensors(&self) -> Vec<(String, Matrix<T>)> {
        let mut out = vec![
            ("base.embedding".to_string(), self.embedding.clone()),
            ("base.positional".to_string(), self.positional.clone()),
        ];
        for (j, l) in self.layers.iter().enumerate() {
            let mats = [
                ("wq", l.wq.clone()),
                ("wk", l.wk.clone()),
                ("wv", l.wv.clone()),
                ("wo", l.wo.clone()),
                ("ln1_gain", row(&l.ln1_gain)),
                ("ln1_bias", row(&l.ln1_bias)),
                ("ln2_gain", row(&l.ln2_gain)),
                ("ln2_bias", row(&l.ln2_bias)),
                ("w1", l.w1.clone()),
                ("b1", row(&l.b1)),
                ("w2", l.w2.clone()),
                ("b2", row(&l.b2)),
            ];
            out.extend(mats.into_iter().map(|(n, m)| (format!("base.{j}.{n}"), m)));
        }
        out.push(("base.lnf_gain".into(), row(&self.lnf_gain)));
        out.push(("base.lnf_bias".into(), row(&self.lnf_bias)));
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &encode_tensors(&self.named_tensors()))
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}
