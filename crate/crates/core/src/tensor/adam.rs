use std::collections::BTreeMap;

use super::{ParameterSet, Result, TensorError};

/// Adam over a fixed subset of parameters.
///
/// Parameters outside `names` are never touched, which is how training
/// phases freeze the rest of a network.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    names: Vec<String>,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(names: Vec<String>, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            names,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    /// Optimizer over every parameter whose name starts with one of `prefixes`.
    pub fn for_prefixes(params: &ParameterSet, prefixes: &[&str], lr: f64) -> Self {
        let names = params
            .names()
            .filter(|n| prefixes.iter().any(|p| n.starts_with(p)))
            .map(str::to_string)
            .collect();
        Self::new(names, lr)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// One Adam update; gradients of the tracked parameters are cleared.
    pub fn step(&mut self, params: &mut ParameterSet) -> Result<()> {
        for name in &self.names {
            let t = params
                .get(name)
                .ok_or_else(|| TensorError::UnknownParameter(name.clone()))?;
            if t.grad().is_none() {
                return Err(TensorError::MissingGrad(name.clone()));
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for name in &self.names {
            let t = params.get_mut(name).expect("checked above");
            let g = t.grad().expect("checked above").to_vec();
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            let v = self
                .second
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            let data = t.data_mut();
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                data[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
            t.zero_grad();
        }
        Ok(())
    }
}
