use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Metadata for one named parameter array inside a [`ParamSet`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
    /// Fan-in used for initialization; 0 marks a bias (zero-initialized).
    pub fan_in: usize,
}

/// Named parameter arrays stored contiguously so whole groups can be updated,
/// snapshotted and compared as flat vectors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    specs: Vec<ParamSpec>,
    values: Vec<f64>,
}

impl ParamSet {
    pub(crate) fn add(&mut self, name: &str, shape: &[usize], fan_in: usize) -> usize {
        let len = shape.iter().product();
        let offset = self.values.len();
        self.specs.push(ParamSpec {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset,
            len,
            fan_in,
        });
        self.values.resize(offset + len, 0.0);
        self.specs.len() - 1
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn find(&self, name: &str) -> Option<&ParamSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn get(&self, idx: usize) -> &[f64] {
        &self.values[self.range(idx)]
    }

    pub fn get_named(&self, name: &str) -> Option<&[f64]> {
        self.find(name).map(|s| &self.values[s.offset..s.offset + s.len])
    }

    pub fn get_named_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let s = self.find(name)?.clone();
        Some(&mut self.values[s.offset..s.offset + s.len])
    }

    pub fn range(&self, idx: usize) -> Range<usize> {
        let s = &self.specs[idx];
        s.offset..s.offset + s.len
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.values.len()]
    }

    /// He-uniform for weights, zeros for biases.
    pub(crate) fn init_random(&mut self, rng: &mut ChaCha8Rng) {
        for spec in &self.specs {
            let slot = &mut self.values[spec.offset..spec.offset + spec.len];
            if spec.fan_in == 0 {
                slot.fill(0.0);
            } else {
                let bound = (6.0 / spec.fan_in as f64).sqrt();
                for v in slot {
                    *v = rng.random_range(-bound..bound);
                }
            }
        }
    }
}
