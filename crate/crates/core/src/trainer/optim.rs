use serde::{Deserialize, Serialize};

use super::model::{Model, ParamGrads};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

fn model_slices(m: &mut Model<f32>) -> Vec<&mut [f32]> {
    let mut out = vec![m.embedding.as_slice_mut().expect("standard layout")];
    for l in m.hidden.iter_mut().chain(std::iter::once(&mut m.head)) {
        out.push(l.weight.as_slice_mut().expect("standard layout"));
        out.push(l.bias.as_slice_mut().expect("standard layout"));
    }
    out
}

fn grad_slices(g: &ParamGrads<f32>) -> Vec<&[f32]> {
    let mut out = vec![g.embedding.as_slice().expect("standard layout")];
    for l in g.hidden.iter().chain(std::iter::once(&g.head)) {
        out.push(l.weight.as_slice().expect("standard layout"));
        out.push(l.bias.as_slice().expect("standard layout"));
    }
    out
}

pub(crate) struct OptimizerState {
    kind: Optimizer,
    t: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl OptimizerState {
    pub(crate) fn new(kind: Optimizer, model: &Model<f32>) -> Self {
        let mut probe = model.clone();
        let sizes: Vec<usize> = model_slices(&mut probe).iter().map(|s| s.len()).collect();
        let zeros = || sizes.iter().map(|&n| vec![0.0; n]).collect();
        let adam = matches!(kind, Optimizer::Adam { .. });
        OptimizerState {
            kind,
            t: 0,
            m: if adam { zeros() } else { Vec::new() },
            v: if adam { zeros() } else { Vec::new() },
        }
    }

    pub(crate) fn step(&mut self, model: &mut Model<f32>, grads: &ParamGrads<f32>, lr: f32) {
        let params = model_slices(model);
        let gs = grad_slices(grads);
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in params.into_iter().zip(gs) {
                    for (w, dw) in p.iter_mut().zip(g) {
                        *w -= lr * dw;
                    }
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                self.t += 1;
                let (b1, b2, eps) = (beta1 as f32, beta2 as f32, eps as f32);
                let c1 = 1.0 - b1.powi(self.t);
                let c2 = 1.0 - b2.powi(self.t);
                for (((p, g), m), v) in params.into_iter().zip(gs).zip(&mut self.m).zip(&mut self.v) {
                    for i in 0..p.len() {
                        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                        let mhat = m[i] / c1;
                        let vhat = v[i] / c2;
                        p[i] -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
    }
}
