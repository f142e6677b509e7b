use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numcore::tensor::Tensor;

/// Index of one named array inside a [`ParameterSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
struct ParamEntry {
    name: String,
    value: Tensor,
    grad: Vec<f64>,
}

/// Named, shaped trainable arrays with paired gradient storage.
///
/// Gradients accumulate across `backward` calls until [`ParameterSet::zero_grads`]
/// is invoked.
#[derive(Clone, Debug, Default)]
pub struct ParameterSet {
    entries: Vec<ParamEntry>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::config(format!("duplicate parameter name '{name}'")));
        }
        let grad = vec![0.0; value.numel()];
        self.entries.push(ParamEntry { name, value, grad });
        Ok(ParamId(self.entries.len() - 1))
    }

    /// Adds an array initialized uniformly in [-1/sqrt(fan_in), +1/sqrt(fan_in)]
    /// from a generator seeded by `(seed, name)`, so equal names and seeds give
    /// equal values regardless of creation order.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        fan_in: usize,
        seed: u64,
    ) -> Result<ParamId> {
        let name = name.into();
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut rng = named_rng(seed, &name);
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(-bound..=bound)).collect();
        self.add(name, Tensor::new(shape, data)?)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.entries[id.0].grad
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Total number of scalar parameters across all arrays.
    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }
}

/// Generator for one named array: key = SHA-256 of "<seed>:<name>".
fn named_rng(seed: u64, name: &str) -> ChaCha20Rng {
    let digest = Sha256::digest(format!("{seed}:{name}").as_bytes());
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha20Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParameterSet::new();
        p.add("w", Tensor::zeros(vec![2])).unwrap();
        assert!(p.add("w", Tensor::zeros(vec![2])).is_err());
    }

    #[test]
    fn init_depends_on_name_and_seed_only() {
        let mut a = ParameterSet::new();
        a.add_uniform("x", vec![4], 4, 7).unwrap();
        let xa = a.value(a.find("x").unwrap()).clone();

        // Same name and seed after an unrelated array: identical values.
        let mut b = ParameterSet::new();
        b.add_uniform("other", vec![10], 10, 7).unwrap();
        b.add_uniform("x", vec![4], 4, 7).unwrap();
        let xb = b.value(b.find("x").unwrap()).clone();
        assert_eq!(xa, xb);

        // Different seed: different values.
        let mut c = ParameterSet::new();
        c.add_uniform("x", vec![4], 4, 8).unwrap();
        let xc = c.value(c.find("x").unwrap()).clone();
        assert_ne!(xa, xc);
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let mut p = ParameterSet::new();
        p.add_uniform("w", vec![1000], 16, 1).unwrap();
        let bound = 1.0 / 4.0;
        assert!(p.value(ParamId(0)).data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn grads_accumulate_and_reset() {
        let mut p = ParameterSet::new();
        let id = p.add("w", Tensor::zeros(vec![3])).unwrap();
        p.grad_mut(id)[0] = 2.0;
        p.grad_mut(id)[0] += 1.0;
        assert_eq!(p.grad(id)[0], 3.0);
        p.zero_grads();
        assert_eq!(p.grad(id), &[0.0, 0.0, 0.0]);
    }
}
