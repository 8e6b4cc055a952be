use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::{Tensor, TensorError, TensorResult};
use crate::seeds::mix_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum InitScheme {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    FanInUniform,
    Normal { std: f64 },
    Zeros,
    Ones,
    /// Values supplied by the caller or a checkpoint.
    Given,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitMeta {
    #[serde(flatten)]
    pub scheme: InitScheme,
    pub fan_in: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub init: InitMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameters in creation order. Shapes are fixed once created.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    seed: u64,
    params: Vec<Param>,
    index: BTreeMap<String, usize>,
}

impl ParamSet {
    pub fn new(seed: u64) -> Self {
        ParamSet { seed, params: Vec::new(), index: BTreeMap::new() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn insert(&mut self, name: &str, value: Tensor, init: InitMeta) -> TensorResult<ParamId> {
        if self.index.contains_key(name) {
            return Err(TensorError::DuplicateParam(name.to_string()));
        }
        let id = self.params.len();
        self.index.insert(name.to_string(), id);
        self.params.push(Param { name: name.to_string(), value, init });
        Ok(ParamId(id))
    }

    pub fn add(&mut self, name: &str, rows: usize, cols: usize, scheme: InitScheme) -> TensorResult<ParamId> {
        let seed = mix_seed(self.seed, self.params.len() as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rows * cols;
        let data: Vec<f64> = match scheme {
            InitScheme::FanInUniform => {
                let bound = 1.0 / (rows.max(1) as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            }
            InitScheme::Normal { std } => {
                let dist = Normal::new(0.0, std).map_err(|e| TensorError::Config(e.to_string()))?;
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            }
            InitScheme::Zeros | InitScheme::Given => vec![0.0; n],
            InitScheme::Ones => vec![1.0; n],
        };
        let value = Tensor::matrix(rows, cols, data)?;
        self.insert(name, value, InitMeta { scheme, fan_in: rows, seed })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> TensorResult<ParamId> {
        self.index.get(name).map(|i| ParamId(*i)).ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn values_mut(&mut self, id: ParamId) -> &mut [f64] {
        self.params[id.0].value.data_mut()
    }

    pub fn set_values(&mut self, id: ParamId, data: &[f64]) -> TensorResult<()> {
        let p = &mut self.params[id.0];
        if p.value.len() != data.len() {
            return Err(TensorError::Shape { op: "set_values", left: p.value.shape().to_vec(), right: vec![data.len()] });
        }
        p.value.data_mut().copy_from_slice(data);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_init_is_seeded() {
        let mut a = ParamSet::new(9);
        let w = a.add("w", 4, 3, InitScheme::FanInUniform).unwrap();
        assert!(matches!(a.add("w", 1, 1, InitScheme::Zeros), Err(TensorError::DuplicateParam(_))));
        let mut b = ParamSet::new(9);
        b.add("w", 4, 3, InitScheme::FanInUniform).unwrap();
        assert_eq!(a, b);
        assert!(a.value(w).data().iter().all(|v| v.abs() <= 0.5));
        assert_eq!(a.get(w).init.fan_in, 4);
        assert!(a.set_values(w, &[0.0; 5]).is_err());
    }
}
