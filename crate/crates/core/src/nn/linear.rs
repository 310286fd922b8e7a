use rand::Rng;

use super::{Param, Parameters};

/// Fully connected layer, `y = W x + b` with `W` stored row-major `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = (1.0 / inputs as f64).sqrt();
        Self {
            weight: Param::uniform(format!("{name}.weight"), vec![outputs, inputs], bound, rng),
            bias: Param::zeros(format!("{name}.bias"), vec![outputs]),
        }
    }

    pub fn zeroed(name: &str, inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Param::zeros(format!("{name}.weight"), vec![outputs, inputs]),
            bias: Param::zeros(format!("{name}.bias"), vec![outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let n = self.inputs();
        debug_assert_eq!(x.len(), n);
        self.weight
            .data()
            .chunks_exact(n)
            .zip(self.bias.data())
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], grad_out: &[f64], grads: &mut Linear) -> Vec<f64> {
        let n = self.inputs();
        let mut grad_in = vec![0.0; n];
        let rows = self.weight.data().chunks_exact(n);
        let grad_rows = grads.weight.data_mut().chunks_exact_mut(n);
        for ((row, grow), (g, gb)) in rows
            .zip(grad_rows)
            .zip(grad_out.iter().zip(grads.bias.data_mut()))
        {
            *gb += g;
            for i in 0..n {
                grow[i] += g * x[i];
                grad_in[i] += g * row[i];
            }
        }
        grad_in
    }
}

impl Parameters for Linear {
    fn collect<'a>(&'a self, out: &mut Vec<&'a Param>) {
        out.push(&self.weight);
        out.push(&self.bias);
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}
