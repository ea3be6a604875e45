//! Named parameter storage, the Adam optimizer, and checkpoint I/O.
//!
//! Parameters live in a `BTreeMap` keyed by name so every iteration order —
//! optimizer steps, checkpoint layout, debug dumps — is the sorted name
//! order, independent of registration order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numkit::tensor::Tensor;

const CKPT_HEADER: &[u8] = b"DUETCKPT v1\n";

#[derive(Debug, Clone)]
struct Slot {
    value: Tensor,
    grad: Tensor,
    m: Tensor,
    v: Tensor,
    /// Bias-correction step count for this entry.
    t: u64,
}

/// All trainable parameters of a model, with per-entry Adam state.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    slots: BTreeMap<String, Slot>,
}

/// Adam hyperparameters. `Default` gives the standard
/// `lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8`.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("adam lr must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("adam {name} must be in [0,1), got {b}")));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "adam epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    /// Register a parameter. Names must be unique.
    pub fn register(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.slots.contains_key(name) {
            return Err(Error::State(format!("parameter {name:?} registered twice")));
        }
        let shape = value.shape().to_vec();
        self.slots.insert(
            name.to_string(),
            Slot {
                value,
                grad: Tensor::zeros(&shape),
                m: Tensor::zeros(&shape),
                v: Tensor::zeros(&shape),
                t: 0,
            },
        );
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.slots.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Sorted parameter names.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(|s| s.as_str())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.slots
            .get(name)
            .map(|s| &s.value)
            .ok_or_else(|| Error::Lookup(format!("parameter {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.slots
            .get_mut(name)
            .map(|s| &mut s.value)
            .ok_or_else(|| Error::Lookup(format!("parameter {name:?}")))
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        self.slots
            .get(name)
            .map(|s| &s.grad)
            .ok_or_else(|| Error::Lookup(format!("parameter {name:?}")))
    }

    pub fn grad_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.slots
            .get_mut(name)
            .map(|s| &mut s.grad)
            .ok_or_else(|| Error::Lookup(format!("parameter {name:?}")))
    }

    pub fn zero_grads(&mut self) {
        for slot in self.slots.values_mut() {
            slot.grad.data_mut().fill(0.0);
        }
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.slots.values().map(|s| s.value.len()).sum()
    }

    /// One dense Adam step on every parameter; see [`ParamStore::adam_step_where`].
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        self.adam_step_where(cfg, |_| true)
    }

    /// One dense Adam step on every parameter whose name satisfies `pred`.
    ///
    /// Stepped entries get their gradients zeroed; entries skipped by `pred`
    /// keep value, optimizer state, and gradient untouched. Each entry keeps
    /// its own step count for bias correction, so parameters stepped in
    /// different phases stay correctly corrected.
    pub fn adam_step_where<F: Fn(&str) -> bool>(&mut self, cfg: &AdamConfig, pred: F) -> Result<()> {
        cfg.validate()?;
        for (name, slot) in self.slots.iter_mut() {
            if !pred(name) {
                continue;
            }
            slot.t += 1;
            let bc1 = 1.0 - cfg.beta1.powi(slot.t as i32);
            let bc2 = 1.0 - cfg.beta2.powi(slot.t as i32);
            let value = slot.value.data_mut();
            let grad = slot.grad.data_mut();
            let m = slot.m.data_mut();
            let v = slot.v.data_mut();
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                value[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.epsilon);
            }
            grad.fill(0.0);
        }
        Ok(())
    }

    /// Scale any row of a rank-2 parameter whose L2 norm exceeds `max_norm`
    /// back onto the ball of that radius.
    pub fn l2_clip_rows(&mut self, name: &str, max_norm: f64) -> Result<()> {
        let t = self.get_mut(name)?;
        if t.rank() != 2 {
            return Err(Error::Shape {
                op: "l2_clip_rows",
                detail: format!("{name:?} has shape {:?}", t.shape()),
            });
        }
        for i in 0..t.shape()[0] {
            let row = t.row_mut(i);
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > max_norm {
                let s = max_norm / norm;
                for x in row {
                    *x *= s;
                }
            }
        }
        Ok(())
    }

    /// Write all parameter values (not optimizer state) to `path`.
    ///
    /// Layout: the ASCII header `DUETCKPT v1\n`, then for each entry in
    /// sorted name order: `u32` name length, the UTF-8 name, `u32` rank,
    /// `u64` per dimension, then the row-major data as little-endian `f64`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(CKPT_HEADER).map_err(io)?;
        for (name, slot) in &self.slots {
            w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io)?;
            w.write_all(name.as_bytes()).map_err(io)?;
            let shape = slot.value.shape();
            w.write_all(&(shape.len() as u32).to_le_bytes()).map_err(io)?;
            for &d in shape {
                w.write_all(&(d as u64).to_le_bytes()).map_err(io)?;
            }
            for &x in slot.value.data() {
                w.write_all(&x.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    /// Read a checkpoint written by [`ParamStore::save`]. Optimizer state
    /// starts fresh.
    pub fn load(path: &Path) -> Result<ParamStore> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut header = [0u8; 12];
        r.read_exact(&mut header)
            .map_err(|_| Error::Checkpoint(format!("{}: truncated header", path.display())))?;
        if header != CKPT_HEADER {
            return Err(Error::Checkpoint(format!(
                "{}: bad header {:?}, expected {:?}",
                path.display(),
                String::from_utf8_lossy(&header),
                String::from_utf8_lossy(&CKPT_HEADER)
            )));
        }
        let mut store = ParamStore::new();
        loop {
            let mut len4 = [0u8; 4];
            match r.read(&mut len4) {
                Ok(0) => break,
                Ok(4) => {}
                Ok(_) | Err(_) => {
                    return Err(Error::Checkpoint(format!(
                        "{}: truncated entry header",
                        path.display()
                    )))
                }
            }
            let name_len = u32::from_le_bytes(len4) as usize;
            if name_len == 0 || name_len > 4096 {
                return Err(Error::Checkpoint(format!(
                    "{}: implausible name length {name_len}",
                    path.display()
                )));
            }
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)
                .map_err(|_| Error::Checkpoint(format!("{}: truncated name", path.display())))?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| Error::Checkpoint(format!("{}: name is not UTF-8", path.display())))?;
            let mut rank4 = [0u8; 4];
            r.read_exact(&mut rank4)
                .map_err(|_| Error::Checkpoint(format!("{}: truncated rank", path.display())))?;
            let rank = u32::from_le_bytes(rank4) as usize;
            if rank == 0 || rank > 3 {
                return Err(Error::Checkpoint(format!(
                    "{}: entry {name:?} has rank {rank}",
                    path.display()
                )));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut dim8 = [0u8; 8];
                r.read_exact(&mut dim8)
                    .map_err(|_| Error::Checkpoint(format!("{}: truncated shape", path.display())))?;
                shape.push(u64::from_le_bytes(dim8) as usize);
            }
            let n: usize = shape.iter().product();
            if n > (1 << 31) {
                return Err(Error::Checkpoint(format!(
                    "{}: entry {name:?} has implausible size {n}",
                    path.display()
                )));
            }
            let mut data = Vec::with_capacity(n);
            let mut buf = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut buf)
                    .map_err(|_| Error::Checkpoint(format!("{}: truncated data in {name:?}", path.display())))?;
                data.push(f64::from_le_bytes(buf));
            }
            let value = Tensor::from_vec(&shape, data).map_err(|e| {
                Error::Checkpoint(format!("{}: entry {name:?}: {e}", path.display()))
            })?;
            store.register(&name, value).map_err(|_| {
                Error::Checkpoint(format!("{}: duplicate entry {name:?}", path.display()))
            })?;
        }
        Ok(store)
    }
}
