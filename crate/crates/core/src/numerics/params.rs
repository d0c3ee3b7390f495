use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Standard deviation of the Gaussian used for every initial parameter.
pub const INIT_STD: f64 = 0.1;

pub const ITEM_EMBEDDINGS: &str = "item_embeddings";
pub const RELATION_VECTORS: &str = "relation_vectors";
pub const POSITION_TABLE: &str = "position_table";
pub const READOUT_W3: &str = "readout.w3";
pub const READOUT_B3: &str = "readout.b3";
pub const READOUT_W4: &str = "readout.w4";
pub const READOUT_W5: &str = "readout.w5";
pub const READOUT_Q2: &str = "readout.q2";
pub const READOUT_B4: &str = "readout.b4";

/// Names of the per-layer global-encoder parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlobalLayerNames {
    /// Attention projection, `d × (d + 1)`.
    pub w1: String,
    /// Attention query, `d`.
    pub q1: String,
    /// Output projection, `d × 2d`.
    pub w2: String,
}

impl GlobalLayerNames {
    pub fn new(layer: usize) -> Self {
        Self {
            w1: format!("ggcn.{layer}.w1"),
            q1: format!("ggcn.{layer}.q1"),
            w2: format!("ggcn.{layer}.w2"),
        }
    }
}

/// Dimensions that fix every parameter shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamShapes {
    pub n_items: usize,
    pub dim: usize,
    pub max_position: usize,
    pub global_layers: usize,
}

impl ParamShapes {
    /// Parameter names with shapes, in the order they are initialized.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.dim;
        let mut out = vec![
            (ITEM_EMBEDDINGS.to_string(), vec![self.n_items, d]),
            (RELATION_VECTORS.to_string(), vec![4, d]),
        ];
        for layer in 0..self.global_layers {
            let names = GlobalLayerNames::new(layer);
            out.push((names.w1, vec![d, d + 1]));
            out.push((names.q1, vec![d]));
            out.push((names.w2, vec![d, 2 * d]));
        }
        out.extend([
            (READOUT_W3.to_string(), vec![d, 2 * d]),
            (READOUT_B3.to_string(), vec![d]),
            (READOUT_W4.to_string(), vec![d, d]),
            (READOUT_W5.to_string(), vec![d, d]),
            (READOUT_Q2.to_string(), vec![d]),
            (READOUT_B4.to_string(), vec![d]),
            (POSITION_TABLE.to_string(), vec![self.max_position, d]),
        ]);
        out
    }
}

/// Named trainable tensors.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar entries.
    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Zero tensors with the same names and shapes.
    pub fn zeros_like(&self) -> ParamStore {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    /// Checks that `other` holds exactly the same names and shapes.
    pub fn check_same_layout(&self, other: &ParamStore) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} tensors vs {}",
                self.tensors.len(),
                other.tensors.len()
            )));
        }
        for ((ka, va), (kb, vb)) in self.tensors.iter().zip(&other.tensors) {
            if ka != kb || va.shape() != vb.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "`{ka}` {:?} vs `{kb}` {:?}",
                    va.shape(),
                    vb.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Draws every parameter i.i.d. from `N(0, 0.1²)` with a seeded generator.
pub fn init_params(shapes: &ParamShapes, seed: u64) -> Result<ParamStore> {
    if shapes.n_items == 0 || shapes.dim == 0 || shapes.max_position == 0 || shapes.global_layers == 0 {
        return Err(Error::InvalidArgument(format!(
            "parameter shapes must be positive: {shapes:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
    let mut store = ParamStore::new();
    for (name, shape) in shapes.layout() {
        let len = shape.iter().product();
        let data: Vec<f64> = (0..len).map(|_| normal.sample(&mut rng)).collect();
        store.insert(name, Tensor::from_parts(shape, data));
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shapes() -> ParamShapes {
        ParamShapes {
            n_items: 7,
            dim: 100,
            max_position: 5,
            global_layers: 2,
        }
    }

    #[test]
    fn same_seed_same_store() {
        let a = init_params(&shapes(), 9).unwrap();
        let b = init_params(&shapes(), 9).unwrap();
        assert_eq!(a, b);
        let c = init_params(&shapes(), 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn shapes_follow_dimension() {
        let p = init_params(&shapes(), 0).unwrap();
        assert_eq!(p.get(ITEM_EMBEDDINGS).unwrap().shape(), &[7, 100]);
        assert_eq!(p.get(RELATION_VECTORS).unwrap().shape(), &[4, 100]);
        assert_eq!(p.get("ggcn.1.w1").unwrap().shape(), &[100, 101]);
        assert_eq!(p.get("ggcn.0.w2").unwrap().shape(), &[100, 200]);
        assert_eq!(p.get(POSITION_TABLE).unwrap().shape(), &[5, 100]);
        assert_eq!(p.len(), 2 + 2 * 3 + 7);
    }

    #[test]
    fn sample_moments_match_generator() {
        // 10^6 draws spread across a large embedding table
        let big = ParamShapes {
            n_items: 10_000,
            dim: 100,
            max_position: 1,
            global_layers: 1,
        };
        let p = init_params(&big, 123).unwrap();
        let x = p.get(ITEM_EMBEDDINGS).unwrap().data();
        let n = x.len() as f64;
        assert_eq!(x.len(), 1_000_000);
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 3.0 * INIT_STD / n.sqrt(), "mean {mean}");
        assert!((var.sqrt() - INIT_STD).abs() < 0.02 * INIT_STD, "std {}", var.sqrt());
    }

    #[test]
    fn zero_dimension_rejected() {
        let mut s = shapes();
        s.dim = 0;
        assert!(init_params(&s, 0).is_err());
    }
}
