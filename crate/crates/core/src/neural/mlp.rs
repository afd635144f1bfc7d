//! Fully-connected networks: tanh hidden layers, with a linear head for
//! value functions or a bound-scaled tanh head for actors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::ops;
use crate::error::{Error, Result};
use crate::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Head {
    Linear,
    /// tanh scaled to +/- the bound.
    TanhScaled(f64),
}

#[derive(Debug, Clone)]
pub struct MlpParams {
    pub dims: Vec<usize>,
    /// One [in, out] matrix per layer.
    pub weights: Vec<Tensor>,
    /// One [1, out] row per layer.
    pub biases: Vec<Tensor>,
}

impl MlpParams {
    /// Seeded Xavier-uniform initialization.
    pub fn init_xavier(dims: &[usize], seed: u64) -> Self {
        assert!(dims.len() >= 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-limit..limit))
                .collect();
            weights.push(Tensor::new(vec![fan_in, fan_out], w).expect("weight tensor"));
            biases.push(Tensor::zeros(vec![1, fan_out]));
        }
        Self {
            dims: dims.to_vec(),
            weights,
            biases,
        }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in dims.windows(2) {
            weights.push(Tensor::zeros(vec![pair[0], pair[1]]));
            biases.push(Tensor::zeros(vec![1, pair[1]]));
        }
        Self {
            dims: dims.to_vec(),
            weights,
            biases,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.dims.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    /// Row-major weights then bias, layer by layer.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            v.extend_from_slice(w.values());
            v.extend_from_slice(b.values());
        }
        v
    }

    pub fn from_flat(dims: &[usize], flat: &[f64]) -> Result<Self> {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut off = 0;
        for pair in dims.windows(2) {
            let (i, o) = (pair[0], pair[1]);
            if off + i * o + o > flat.len() {
                return Err(Error::CheckpointFormat(format!(
                    "expected {} values, found {}",
                    dims.windows(2).map(|p| p[0] * p[1] + p[1]).sum::<usize>(),
                    flat.len()
                )));
            }
            weights.push(Tensor::new(vec![i, o], flat[off..off + i * o].to_vec())?);
            off += i * o;
            biases.push(Tensor::new(vec![1, o], flat[off..off + o].to_vec())?);
            off += o;
        }
        if off != flat.len() {
            return Err(Error::CheckpointFormat(format!(
                "expected {} values, found {}",
                off,
                flat.len()
            )));
        }
        Ok(Self {
            dims: dims.to_vec(),
            weights,
            biases,
        })
    }

    /// Convex blend toward another parameter set (target-network update):
    /// self <- rho * self + (1 - rho) * other.
    pub fn blend_from(&mut self, other: &Self, rho: f64) {
        for (mine, theirs) in self
            .weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .zip(other.weights.iter().chain(other.biases.iter()))
        {
            let v: Vec<f64> = mine
                .values()
                .iter()
                .zip(theirs.values())
                .map(|(a, b)| rho * a + (1.0 - rho) * b)
                .collect();
            *mine = Tensor::new(mine.shape().to_vec(), v).expect("blend tensor");
        }
    }
}

/// Parameters registered as tape leaves for training.
pub struct MlpLeaves {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

pub fn stage_mlp(tape: &mut Tape, params: &MlpParams) -> MlpLeaves {
    MlpLeaves {
        weights: params.weights.iter().map(|w| tape.leaf(w)).collect(),
        biases: params.biases.iter().map(|b| tape.leaf(b)).collect(),
    }
}

impl MlpLeaves {
    /// Gradient of a scalar loss w.r.t. the flattened parameters, matching
    /// [`MlpParams::flatten`] order.
    pub fn flat_grad(&self, grads: &crate::GradientMap) -> Vec<f64> {
        let mut v = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            v.extend_from_slice(grads.grad(w).values());
            v.extend_from_slice(grads.grad(b).values());
        }
        v
    }
}

/// Forward pass over a batch [B, in] -> [B, out]. Hidden layers are tanh;
/// the head is applied per the network's role.
pub fn mlp_forward(
    tape: &mut Tape,
    weights: &[Tensor],
    biases: &[Tensor],
    x: &Tensor,
    head: Head,
) -> Result<Tensor> {
    if x.shape().len() != 2 || x.shape()[1] != weights[0].shape()[0] {
        return Err(Error::ShapeMismatch {
            op: "mlp-forward".into(),
            shapes: format!("input {:?} vs first layer {:?}", x.shape(), weights[0].shape()),
        });
    }
    let batch = x.shape()[0];
    let n_layers = weights.len();
    let mut h = x.clone();
    for (li, (w, b)) in weights.iter().zip(biases).enumerate() {
        let z = ops::matmul(tape, &h, w)?;
        let bt = ops::tile_rows(tape, b, batch)?;
        let z = ops::add(tape, &z, &bt)?;
        h = if li + 1 < n_layers {
            ops::tanh(tape, &z)?
        } else {
            match head {
                Head::Linear => z,
                Head::TanhScaled(bound) => {
                    let t = ops::tanh(tape, &z)?;
                    ops::scale(tape, &t, bound)?
                }
            }
        };
    }
    Ok(h)
}

/// Inference with constant parameters on a scratch tape.
pub fn mlp_eval(params: &MlpParams, x: &Tensor, head: Head) -> Result<Tensor> {
    let mut tape = Tape::no_grad();
    mlp_forward(&mut tape, &params.weights, &params.biases, x, head)
}

/// Single-vector convenience: [in] -> [out].
pub fn mlp_eval_vec(params: &MlpParams, x: &[f64], head: Head) -> Result<Vec<f64>> {
    let t = Tensor::new(vec![1, x.len()], x.to_vec())?;
    Ok(mlp_eval(params, &t, head)?.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;

    #[test]
    fn zero_weights_output_head_of_bias() {
        let mut p = MlpParams::zeros(&[4, 3, 2]);
        p.biases[1] = Tensor::new(vec![1, 2], vec![0.7, -0.4]).unwrap();
        let y = mlp_eval_vec(&p, &[1.0, 2.0, 3.0, 4.0], Head::Linear).unwrap();
        assert_eq!(y, vec![0.7, -0.4]);
        let ya = mlp_eval_vec(&p, &[1.0, 2.0, 3.0, 4.0], Head::TanhScaled(2.0)).unwrap();
        assert!((ya[0] - 2.0 * 0.7f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn identity_single_layer() {
        let mut p = MlpParams::zeros(&[3, 3]);
        p.weights[0] = Tensor::new(
            vec![3, 3],
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        let y = mlp_eval_vec(&p, &[0.3, -0.6, 0.9], Head::Linear).unwrap();
        assert_eq!(y, vec![0.3, -0.6, 0.9]);
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let params = MlpParams::init_xavier(&[5, 4, 2], 3);
        let x = Tensor::new(vec![2, 5], (0..10).map(|i| 0.1 * i as f64 - 0.4).collect()).unwrap();
        let target = Tensor::new(vec![2, 2], vec![0.2, -0.3, 0.5, 0.1]).unwrap();
        let dims = params.dims.clone();

        let f = |tape: &mut Tape, flat: &Tensor| {
            let p = MlpParams::from_flat(&dims, flat.values())?;
            // re-slice the flat leaf into layer tensors so gradients flow
            let mut weights = Vec::new();
            let mut biases = Vec::new();
            let mut off = 0;
            for pair in dims.windows(2) {
                let (i, o) = (pair[0], pair[1]);
                weights.push(ops::slice(tape, flat, off, off + i * o, vec![i, o])?);
                off += i * o;
                biases.push(ops::slice(tape, flat, off, off + o, vec![1, o])?);
                off += o;
            }
            let _ = p;
            let y = mlp_forward(tape, &weights, &biases, &x, Head::Linear)?;
            let d = ops::sub(tape, &y, &target)?;
            let sq = ops::square(tape, &d)?;
            ops::mean(tape, &sq)
        };
        let point = Tensor::vector(params.flatten()).unwrap();
        let report = grad_check(f, &point, 1e-6, 1e-5).unwrap();
        assert!(report.pass, "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn actor_outputs_stay_in_bounds() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for seed in 0..5 {
            let p = MlpParams::init_xavier(&[6, 8, 3], seed);
            for _ in 0..20 {
                let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-50.0..50.0)).collect();
                let y = mlp_eval_vec(&p, &x, Head::TanhScaled(1.0)).unwrap();
                assert!(y.iter().all(|v| v.abs() <= 1.0));
            }
        }
    }

    #[test]
    fn init_deterministic_in_seed() {
        let a = MlpParams::init_xavier(&[10, 7, 2], 42);
        let b = MlpParams::init_xavier(&[10, 7, 2], 42);
        assert_eq!(a.flatten(), b.flatten());
        let c = MlpParams::init_xavier(&[10, 7, 2], 43);
        assert_ne!(a.flatten(), c.flatten());
    }

    #[test]
    fn blend_is_exact_convex_combination() {
        let mut a = MlpParams::init_xavier(&[3, 2], 1);
        let b = MlpParams::init_xavier(&[3, 2], 2);
        let a0 = a.flatten();
        let rho = 0.995;
        a.blend_from(&b, rho);
        for ((x, x0), y) in a.flatten().iter().zip(&a0).zip(&b.flatten()) {
            assert_eq!(*x, rho * x0 + (1.0 - rho) * y);
        }
    }

    #[test]
    fn input_dim_mismatch_rejected() {
        let p = MlpParams::zeros(&[4, 2]);
        assert!(mlp_eval_vec(&p, &[1.0, 2.0], Head::Linear).is_err());
    }
}
