//! Binary checkpoint of model parameters and optimizer state.
//!
//! Layout (little-endian): magic `HCKP`, version `u32`, encoder layer count
//! `u32`, then every parameter tensor as `rows u32, cols u32` followed by its
//! row-major `f64` payload (encoder layers, classifier weight, classifier
//! bias as a `1 × alpha` row). A `u32` flag follows; when 1, the Adam state
//! comes next: step `u64`, `lr, beta1, beta2, eps` as `f64`, then first and
//! second moment payloads in parameter order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::model::ModelParams;
use crate::optim::{AdamConfig, AdamState};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"HCKP";
const VERSION: u32 = 1;

pub fn checkpoint_bytes<T: Scalar>(params: &ModelParams<T>, adam: Option<&AdamState<T>>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * params.num_params() * if adam.is_some() { 3 } else { 1 });
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.layers() as u32).to_le_bytes());
    for (t, (r, c)) in params.tensors().into_iter().zip(params.shapes()) {
        out.extend_from_slice(&(r as u32).to_le_bytes());
        out.extend_from_slice(&(c as u32).to_le_bytes());
        put_payload(&mut out, t);
    }
    match adam {
        None => out.extend_from_slice(&0u32.to_le_bytes()),
        Some(s) => {
            out.extend_from_slice(&1u32.to_le_bytes());
            out.extend_from_slice(&s.step.to_le_bytes());
            for v in [s.config.lr, s.config.beta1, s.config.beta2, s.config.eps] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for t in s.first_moment.tensors().into_iter().chain(s.second_moment.tensors()) {
                put_payload(&mut out, t);
            }
        }
    }
    out
}

fn put_payload<T: Scalar>(out: &mut Vec<u8>, t: &[T]) {
    for &v in t {
        out.extend_from_slice(&v.as_f64().to_le_bytes());
    }
}

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.0.len() < n {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn payload<T: Scalar>(&mut self, len: usize) -> Result<Vec<T>> {
        (0..len).map(|_| self.f64().map(T::of)).collect()
    }
}

pub fn parse_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<(ModelParams<T>, Option<AdamState<T>>)> {
    let mut r = Reader(bytes);
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let layers = r.u32()? as usize;
    if layers == 0 {
        return Err(Error::Format("checkpoint without encoder layers".into()));
    }
    let mut mats = Vec::with_capacity(layers + 2);
    for _ in 0..layers + 2 {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let data = r.payload(rows * cols)?;
        mats.push(DenseMatrix::from_vec(rows, cols, data)?);
    }
    let bias = mats.pop().unwrap();
    let classifier_weight = mats.pop().unwrap();
    if bias.rows() != 1 || bias.cols() != classifier_weight.cols() {
        return Err(Error::Format("classifier bias shape does not match its weight".into()));
    }
    let params = ModelParams { encoder: mats, classifier_weight, classifier_bias: bias.into_vec() };
    let adam = match r.u32()? {
        0 => None,
        1 => {
            let step = r.u64()?;
            let config = AdamConfig { lr: r.f64()?, beta1: r.f64()?, beta2: r.f64()?, eps: r.f64()? };
            let mut state = AdamState::new(&params, config)?;
            state.step = step;
            for t in state.first_moment.tensors_mut().into_iter().chain(state.second_moment.tensors_mut()) {
                let data: Vec<T> = r.payload(t.len())?;
                t.copy_from_slice(&data);
            }
            Some(state)
        }
        f => return Err(Error::Format(format!("bad optimizer flag {f}"))),
    };
    if !r.0.is_empty() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok((params, adam))
}

pub fn save_checkpoint<T: Scalar>(path: &Path, params: &ModelParams<T>, adam: Option<&AdamState<T>>) -> Result<()> {
    fs::write(path, checkpoint_bytes(params, adam)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(ModelParams<T>, Option<AdamState<T>>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes)
}
