//! Named parameter storage and initialization.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// First and second moment estimates for one parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, Tensor>,
    moments: BTreeMap<String, Moments>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        self.moments.remove(&name);
        self.entries.insert(name, t.with_requires_grad(true));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, name: &str) -> Option<&Moments> {
        self.moments.get(name)
    }

    pub fn zero_grads(&mut self) {
        self.entries.values_mut().for_each(Tensor::clear_grad);
    }

    /// Serializable snapshot of the parameter values (optimizer state excluded).
    pub fn to_snapshot(&self) -> ParamSnapshot {
        ParamSnapshot(
            self.entries
                .iter()
                .map(|(k, t)| (k.clone(), Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("valid tensor")))
                .collect(),
        )
    }

    pub fn from_snapshot(s: &ParamSnapshot) -> Self {
        let mut store = ParamStore::new();
        for (k, t) in &s.0 {
            store.insert(k.clone(), t.clone());
        }
        store
    }

    /// Overwrites values from `other`, which must hold the same names and shapes.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        for (name, t) in &mut self.entries {
            let src = other
                .get(name)
                .ok_or_else(|| Error::UnknownParam(name.clone()))?;
            if src.shape() != t.shape() {
                return Err(Error::shape(
                    "load_values",
                    format!("{name}: {:?} vs {:?}", t.shape(), src.shape()),
                ));
            }
            t.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    pub(crate) fn parts_mut(
        &mut self,
    ) -> (&mut BTreeMap<String, Tensor>, &mut BTreeMap<String, Moments>, &mut u64) {
        (&mut self.entries, &mut self.moments, &mut self.step)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSnapshot(pub BTreeMap<String, Tensor>);

/// Uniform Glorot initialization over `[rows x cols]`.
pub fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
    Tensor::new(vec![rows, cols], data).expect("glorot shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn glorot_respects_bound_and_seed() {
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        let a = glorot(&mut r1, 4, 8);
        let b = glorot(&mut r2, 4, 8);
        assert_eq!(a, b);
        let bound = (6.0f64 / 12.0).sqrt();
        assert!(a.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn snapshot_round_trip() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::from_slice(&[2], &[1.0, 2.0]).unwrap());
        let back = ParamStore::from_snapshot(&s.to_snapshot());
        assert_eq!(back.get("w").unwrap().data(), &[1.0, 2.0]);
        assert!(back.get("w").unwrap().requires_grad());
    }
}
