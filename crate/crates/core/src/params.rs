//! Named learnable tensors and their deterministic initialization.

use std::ops::Index;

use pst_tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered, uniquely named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
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

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Registers every tensor as a trainable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound(self.values.iter().map(|v| tape.param(v.clone())).collect())
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Tensor::all_finite)
    }
}

/// Tape handles for a [`ParamSet`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    /// Wraps handles already on a tape, in [`ParamSet`] order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self(vars)
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }

    /// Gradient of every parameter after backward; zeros where none flowed.
    pub fn grads(&self, tape: &Tape) -> Vec<Tensor> {
        self.0.iter().map(|&v| tape.grad_or_zeros(v)).collect()
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

/// 64-bit FNV-1a, used to derive stable per-name RNG streams.
fn fnv1a(key: &str) -> u64 {
    key.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Independent RNG stream determined only by `(seed, key)`.
pub fn stream_rng(seed: u64, key: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(key));
    rng
}

/// Uniform in `±sqrt(1/fan_in)`, drawn from the stream for `(seed, name)`.
pub fn uniform_init(shape: &[usize], fan_in: usize, seed: u64, name: &str) -> Tensor {
    let bound = (1.0 / fan_in.max(1) as f64).sqrt();
    let mut rng = stream_rng(seed, name);
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut p = ParamSet::new();
        p.add("w", Tensor::zeros(&[2])).unwrap();
        assert!(p.add("w", Tensor::zeros(&[1])).is_err());
        assert_eq!(p.n_scalars(), 2);
    }

    #[test]
    fn init_depends_only_on_seed_and_name() {
        let a = uniform_init(&[4, 3], 3, 7, "conv1.weight");
        let b = uniform_init(&[4, 3], 3, 7, "conv1.weight");
        let c = uniform_init(&[4, 3], 3, 7, "conv2.weight");
        let d = uniform_init(&[4, 3], 3, 8, "conv1.weight");
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
        let bound = (1.0f64 / 3.0).sqrt();
        assert!(a.data().iter().all(|v| v.abs() < bound));
    }

    #[test]
    fn bound_grads_default_to_zero() {
        let mut p = ParamSet::new();
        let id = p.add("w", Tensor::ones(&[3])).unwrap();
        p.add("unused", Tensor::ones(&[2])).unwrap();
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let s = tape.sum(bound[id]);
        tape.backward(s).unwrap();
        let g = bound.grads(&tape);
        assert_eq!(g[0], Tensor::ones(&[3]));
        assert_eq!(g[1], Tensor::zeros(&[2]));
    }
}
