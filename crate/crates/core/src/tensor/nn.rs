//! Fully connected layers on top of the tape.

use super::{ParameterSet, Result, Rng, Tape, Tensor, Var};

/// Affine layer `x·W + b`, parameters `{prefix}.w` (`in × out`) and `{prefix}.b` (`1 × out`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Linear {
    pub prefix: String,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new(prefix: impl Into<String>, inputs: usize, outputs: usize) -> Self {
        Self {
            prefix: prefix.into(),
            inputs,
            outputs,
        }
    }

    fn w(&self) -> String {
        format!("{}.w", self.prefix)
    }

    fn b(&self) -> String {
        format!("{}.b", self.prefix)
    }

    /// Xavier-uniform weights, zero bias.
    pub fn init(&self, params: &mut ParameterSet, rng: &mut Rng) -> Result<()> {
        let a = (6.0 / (self.inputs + self.outputs) as f64).sqrt();
        let w: Vec<f64> = (0..self.inputs * self.outputs)
            .map(|_| rng.range(-a, a))
            .collect();
        params.insert(self.w(), Tensor::matrix(self.inputs, self.outputs, w)?)?;
        params.insert(self.b(), Tensor::matrix(1, self.outputs, vec![0.0; self.outputs])?)?;
        Ok(())
    }

    pub fn forward(&self, tape: &Tape, params: &ParameterSet, x: Var) -> Result<Var> {
        let w = tape.param(params, &self.w())?;
        let b = tape.param(params, &self.b())?;
        tape.add_bias(tape.matmul(x, w)?, b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    LeakyRelu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, tape: &Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::LeakyRelu => tape.leaky_relu(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

/// Stack of linear layers with leaky-ReLU between them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub output: Activation,
}

impl Mlp {
    /// `dims = [in, h1, ..., out]`; layers are named `{prefix}.l0`, `{prefix}.l1`, ...
    pub fn new(prefix: &str, dims: &[usize], output: Activation) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(format!("{prefix}.l{i}"), w[0], w[1]))
            .collect();
        Self { layers, output }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().expect("non-empty mlp").outputs
    }

    pub fn init(&self, params: &mut ParameterSet, rng: &mut Rng) -> Result<()> {
        self.layers.iter().try_for_each(|l| l.init(params, rng))
    }

    pub fn forward(&self, tape: &Tape, params: &ParameterSet, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, params, h)?;
            h = if i == last {
                self.output.apply(tape, h)
            } else {
                tape.leaky_relu(h)
            };
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_names_and_shapes() {
        let mlp = Mlp::new("net", &[4, 8, 2], Activation::Sigmoid);
        let mut p = ParameterSet::new();
        mlp.init(&mut p, &mut Rng::new(1)).unwrap();
        assert_eq!(
            p.names().collect::<Vec<_>>(),
            vec!["net.l0.b", "net.l0.w", "net.l1.b", "net.l1.w"]
        );
        let t = Tape::new();
        let x = t.constant(3, 4, vec![0.5; 12]).unwrap();
        let y = mlp.forward(&t, &p, x).unwrap();
        assert_eq!(t.shape(y), (3, 2));
        assert!(t.values(y).iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn xavier_bound() {
        let l = Linear::new("l", 10, 20);
        let mut p = ParameterSet::new();
        l.init(&mut p, &mut Rng::new(3)).unwrap();
        let a = (6.0f64 / 30.0).sqrt();
        assert!(p.get("l.w").unwrap().data().iter().all(|w| w.abs() <= a));
    }
}
