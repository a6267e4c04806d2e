use rand::Rng;

use crate::diffengine::{Bindings, ParamStore, SessionRng, Tape, Tensor, Var};
use crate::Result;

/// Fully connected network with tanh hidden activations and a linear output.
///
/// `widths` lists every layer size including input and output. Weights are
/// stored input-major (`[in, out]`) under `{prefix}/l{i}/w` and `{prefix}/l{i}/b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    prefix: String,
    widths: Vec<usize>,
}

impl Mlp {
    pub fn new(prefix: impl Into<String>, widths: Vec<usize>) -> Self {
        Mlp {
            prefix: prefix.into(),
            widths,
        }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("at least input and output widths")
    }

    fn weight_path(&self, layer: usize) -> String {
        format!("{}/l{}/w", self.prefix, layer)
    }

    fn bias_path(&self, layer: usize) -> String {
        format!("{}/l{}/b", self.prefix, layer)
    }

    /// Weights and biases uniform on `±1/sqrt(fan_in)`; the output layer is
    /// zeroed entirely when `zero_output` is set.
    pub fn init(&self, store: &mut ParamStore, rng: &mut SessionRng, zero_output: bool) -> Result<()> {
        let layers = self.widths.len() - 1;
        for l in 0..layers {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let a = 1.0 / (fan_in as f64).sqrt();
            let mut uniform = |n: usize, shape: Vec<usize>| -> Result<Tensor> {
                let data = (0..n).map(|_| rng.random_range(-a..a)).collect();
                Ok(Tensor::new(shape, data)?)
            };
            let (w, b) = if zero_output && l + 1 == layers {
                (Tensor::zeros(&[fan_in, fan_out]), Tensor::zeros(&[fan_out]))
            } else {
                (uniform(fan_in * fan_out, vec![fan_in, fan_out])?, uniform(fan_out, vec![fan_out])?)
            };
            store.insert(self.weight_path(l), w)?;
            store.insert(self.bias_path(l), b)?;
        }
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, params: &Bindings, x: Var) -> Result<Var> {
        let layers = self.widths.len() - 1;
        let mut h = x;
        for l in 0..layers {
            let w = params.get(&self.weight_path(l))?;
            let b = params.get(&self.bias_path(l))?;
            h = tape.matmul(h, w)?;
            h = tape.add(h, b)?;
            if l + 1 < layers {
                h = tape.tanh(h)?;
            }
        }
        Ok(h)
    }
}
