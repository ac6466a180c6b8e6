//! Named parameter arrays, the Adam optimizer, and on-disk checkpoints.
//!
//! A checkpoint is a directory holding one `.npy` file per named array and a
//! plain-text `manifest.toml` listing names, shapes and free-form metadata.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::seeding::Rng;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Array2<f64>) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Array2<f64>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.values
    }

    pub fn get(&self, idx: usize) -> &Array2<f64> {
        &self.values[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Array2<f64> {
        &mut self.values[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Records every array on `tape` as a leaf, in storage order.
    pub fn attach(&self, tape: &mut Tape, requires_grad: bool) -> Vec<Var> {
        self.values.iter().map(|v| tape.leaf(v.clone(), requires_grad)).collect()
    }

    /// Collects gradients for attached vars; missing entries become zeros.
    pub fn collect_grads(&self, grads: &Gradients, vars: &[Var]) -> Vec<Array2<f64>> {
        vars.iter().zip(&self.values).map(|(&v, p)| grads.get_or_zeros(v, p.dim())).collect()
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, v) in self.names.iter().zip(&self.values) {
            h.update(name.as_bytes());
            h.update((v.nrows() as u64).to_le_bytes());
            h.update((v.ncols() as u64).to_le_bytes());
            for x in v.iter() {
                h.update(x.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, dir: &Path, kind: &str, meta: toml::Table) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut arrays = Vec::with_capacity(self.len());
        for (name, v) in self.names.iter().zip(&self.values) {
            let file = format!("{}.npy", name.replace('/', "."));
            let path = dir.join(&file);
            ndarray_npy::write_npy(&path, v).map_err(|e| Error::Npy(format!("{}: {e}", path.display())))?;
            arrays.push(ArrayEntry { name: name.clone(), shape: vec![v.nrows(), v.ncols()], file });
        }
        let manifest = Manifest { kind: kind.to_string(), checksum: self.checksum(), arrays, meta };
        let text = toml::to_string(&manifest).map_err(|e| Error::Serde(e.to_string()))?;
        let path = dir.join("manifest.toml");
        fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: &Path) -> Result<(Self, Manifest)> {
        let path = dir.join("manifest.toml");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        let mut set = ParamSet::new();
        for entry in &manifest.arrays {
            let p = dir.join(&entry.file);
            let v: Array2<f64> =
                ndarray_npy::read_npy(&p).map_err(|e| Error::Npy(format!("{}: {e}", p.display())))?;
            if v.shape() != entry.shape.as_slice() {
                return Err(Error::Schema(format!("array {} has shape {:?}, manifest says {:?}", entry.name, v.shape(), entry.shape)));
            }
            set.push(entry.name.clone(), v);
        }
        if set.checksum() != manifest.checksum {
            return Err(Error::Schema(format!("checksum mismatch in {}", dir.display())));
        }
        Ok((set, manifest))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub checksum: String,
    pub arrays: Vec<ArrayEntry>,
    #[serde(default)]
    pub meta: toml::Table,
}

/// Glorot-style uniform initialisation.
pub fn glorot(rng: &mut Rng, rows: usize, cols: usize) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}

pub fn uniform(rng: &mut Rng, rows: usize, cols: usize, limit: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..=limit))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &ParamSet) -> Self {
        let zeros = || params.values().iter().map(|p| Array2::zeros(p.dim())).collect();
        Self { cfg, m: zeros(), v: zeros(), t: 0 }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Array2<f64>]) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for ((p, g), (m, v)) in params.values_mut().iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn adam_with_zero_gradient_leaves_params_unchanged() {
        let mut p = ParamSet::new();
        p.push("w", array![[1.0, -2.0]]);
        let before = p.clone();
        let mut opt = Adam::new(AdamConfig::default(), &p);
        opt.step(&mut p, &[Array2::zeros((1, 2))]);
        assert_eq!(p, before);
    }

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut p = ParamSet::new();
        p.push("w", array![[3.0]]);
        let mut opt = Adam::new(AdamConfig { lr: 0.1, ..Default::default() }, &p);
        for _ in 0..500 {
            let g = p.get(0) * 2.0;
            opt.step(&mut p, &[g]);
        }
        assert!(p.get(0)[[0, 0]].abs() < 1e-2);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = ParamSet::new();
        p.push("block0/filter", array![[0.1, 0.2], [0.3, 0.4]]);
        p.push("bias", array![[1.0], [2.0]]);
        let mut meta = toml::Table::new();
        meta.insert("seed".into(), toml::Value::Integer(3));
        p.save(dir.path(), "forecaster", meta).unwrap();
        let (q, manifest) = ParamSet::load(dir.path()).unwrap();
        assert_eq!(p, q);
        assert_eq!(manifest.kind, "forecaster");
        assert_eq!(manifest.meta["seed"].as_integer(), Some(3));
    }
}
