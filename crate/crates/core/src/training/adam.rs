use serde::{Deserialize, Serialize};

/// Adaptive-moment estimation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSpec {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(format!("epsilon must be positive, got {}", self.epsilon));
        }
        Ok(())
    }
}

/// Adam with bias correction over one or more parameter slices laid end to end.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    spec: OptimizerSpec,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl Adam {
    pub fn new(spec: OptimizerSpec, len: usize) -> Self {
        Self {
            spec,
            m: vec![0.0; len],
            v: vec![0.0; len],
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    /// Applies one update. `slots` pairs each parameter slice with its gradient;
    /// their total length must equal the optimizer length.
    pub fn step(&mut self, slots: &mut [(&mut [f64], &[f64])]) {
        let total: usize = slots.iter().map(|(p, _)| p.len()).sum();
        assert_eq!(total, self.m.len(), "optimizer/parameter length mismatch");
        self.steps += 1;
        let OptimizerSpec {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.spec;
        let t = self.steps as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let mut offset = 0;
        for (params, grads) in slots.iter_mut() {
            assert_eq!(params.len(), grads.len());
            let m = &mut self.m[offset..offset + params.len()];
            let v = &mut self.v[offset..offset + params.len()];
            for i in 0..params.len() {
                let g = grads[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let update = learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + epsilon);
                params[i] -= update;
            }
            offset += params.len();
        }
    }
}
