use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Result, Tensor, TensorError};

/// Named learnable arrays. Names are dotted paths such as
/// `"prior.layer0.phi_e.w1"`; iteration order is lexicographic.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    pub version: u32,
    map: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub fn new(version: u32) -> ModelParams {
        ModelParams { version, map: BTreeMap::new() }
    }

    /// Adds a parameter; a duplicate name is a programming error.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        assert!(!self.map.contains_key(&name), "duplicate parameter {name}");
        self.map.insert(name, t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.map.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.map.values().map(Tensor::len).sum()
    }

    /// Scalar count of parameters whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.map.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(_, t)| t.len()).sum()
    }

    /// Merges `other`, prefixing its names.
    pub fn extend_prefixed(&mut self, prefix: &str, other: ModelParams) {
        for (k, v) in other.map {
            self.insert(format!("{prefix}{k}"), v);
        }
    }
}

/// Gradient per parameter name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradients(pub BTreeMap<String, Tensor>);

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    /// `self += s * other`, for accumulating over a batch.
    pub fn add_scaled(&mut self, other: &Gradients, s: f64) {
        for (k, g) in &other.0 {
            match self.0.get_mut(k) {
                Some(mine) => {
                    for (a, b) in mine.data_mut().iter_mut().zip(g.data()) {
                        *a += s * b;
                    }
                }
                None => {
                    self.0.insert(k.clone(), g.map(|v| s * v));
                }
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.0.values().flat_map(|t| t.data().iter()).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.0.values_mut() {
            for v in t.data_mut() {
                *v *= s;
            }
        }
    }
}

/// Moment estimates of [`Adam`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Adam {
        Adam { lr, ..Adam::default() }
    }

    /// One bias-corrected Adam update of every parameter that has a gradient.
    pub fn step(&self, params: &mut ModelParams, grads: &Gradients, state: &mut AdamState) -> Result<()> {
        for (name, g) in &grads.0 {
            let p = params.get(name).ok_or_else(|| TensorError::UnknownParam(name.clone()))?;
            if p.shape() != g.shape() {
                return Err(TensorError::ShapeMismatch { op: "adam_step", lhs: p.shape(), rhs: g.shape() });
            }
        }
        state.step += 1;
        let t = state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, g) in &grads.0 {
            let p = params.get_mut(name).expect("checked above");
            let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *x -= self.lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

const MAGIC: &[u8; 8] = b"GGIKPRM\0";
/// Container format version written by [`save_checkpoint`].
pub const CHECKPOINT_VERSION: u32 = 1;

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn encode(params: &ModelParams) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + params.count() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&params.version.to_le_bytes());
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| TensorError::Checkpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn decode(buf: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(TensorError::Checkpoint("not a parameter file".into()));
    }
    let format = r.u32()?;
    if format != CHECKPOINT_VERSION {
        return Err(TensorError::Checkpoint(format!("unsupported container version {format}")));
    }
    let mut params = ModelParams::new(r.u32()?);
    let count = r.u32()?;
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| TensorError::Checkpoint("bad name".into()))?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let raw = r.take(rows * cols * 8)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        if params.get(&name).is_some() {
            return Err(TensorError::Checkpoint(format!("duplicate parameter {name}")));
        }
        params.insert(name, Tensor::new(rows, cols, data)?);
    }
    if r.pos != buf.len() {
        return Err(TensorError::Checkpoint("trailing bytes".into()));
    }
    Ok(params)
}

/// Writes `path` (binary parameters) and `path.json` (hyperparameters).
pub fn save_checkpoint<H: Serialize>(path: &Path, params: &ModelParams, hyper: &H) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(params))?;
    let json = serde_json::to_string_pretty(hyper).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
    std::fs::write(sidecar(path), json + "\n")?;
    Ok(())
}

/// Reads what [`save_checkpoint`] wrote.
pub fn load_checkpoint<H: for<'de> Deserialize<'de>>(path: &Path) -> Result<(ModelParams, H)> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let params = decode(&buf)?;
    let json = std::fs::read_to_string(sidecar(path))?;
    let hyper = serde_json::from_str(&json).map_err(|e| TensorError::Checkpoint(format!("sidecar: {e}")))?;
    Ok((params, hyper))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> ModelParams {
        let mut p = ModelParams::new(1);
        p.insert("w", Tensor::scalar(v));
        p
    }

    fn grad(v: f64) -> Gradients {
        Gradients([("w".to_string(), Tensor::scalar(v))].into_iter().collect())
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut p = one(0.7);
        let mut s = AdamState::default();
        Adam::with_lr(0.0).step(&mut p, &grad(3.0), &mut s).unwrap();
        assert_eq!(p, one(0.7));
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = one(1.0);
        let mut s = AdamState::default();
        Adam::with_lr(0.1).step(&mut p, &grad(1.0), &mut s).unwrap();
        let moved = 1.0 - p.get("w").unwrap().item();
        assert!((moved - 0.1).abs() < 1e-8, "{moved}");
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut p = one(1.0);
        let g = Gradients([("w".to_string(), Tensor::zeros(2, 1))].into_iter().collect());
        let err = Adam::default().step(&mut p, &g, &mut AdamState::default()).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { .. }));
    }

    #[test]
    fn container_round_trip_and_version_check() {
        let mut p = ModelParams::new(3);
        p.insert("a.w", Tensor::from_fn(2, 3, |i, j| (i as f64) - 0.1 * j as f64 + 1e-17));
        p.insert("b", Tensor::scalar(f64::MIN_POSITIVE));
        let bytes = encode(&p);
        assert_eq!(decode(&bytes).unwrap(), p);
        assert_eq!(encode(&decode(&bytes).unwrap()), bytes);
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(decode(&bad), Err(TensorError::Checkpoint(_))));
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
    }
}
