//! Observation featurization: rgb, normalized depth, and mask channels
//! average-pooled to 16x16 and concatenated. This pooled vector is the
//! belief proxy the actors and value functions consume.

use crate::autodiff::ops;
use crate::error::{Error, Result};
use crate::render::Observation;
use crate::{Tape, Tensor};

pub const POOLED_SIDE: usize = 16;
pub const FEATURE_CHANNELS: usize = 5;
pub const FEATURE_DIM: usize = POOLED_SIDE * POOLED_SIDE * FEATURE_CHANNELS;

/// Average-pooling matrices P_l [16, h] and P_r [w, 16].
fn pool_matrices(h: usize, w: usize) -> Result<(Tensor, Tensor)> {
    if h % POOLED_SIDE != 0 || w % POOLED_SIDE != 0 {
        return Err(Error::ShapeMismatch {
            op: "featurize".into(),
            shapes: format!("{}x{} not divisible into {0}x{0} cells", h, POOLED_SIDE),
        });
    }
    let bh = h / POOLED_SIDE;
    let bw = w / POOLED_SIDE;
    let mut left = vec![0.0; POOLED_SIDE * h];
    for i in 0..POOLED_SIDE {
        for k in 0..bh {
            left[i * h + i * bh + k] = 1.0 / bh as f64;
        }
    }
    let mut right = vec![0.0; w * POOLED_SIDE];
    for j in 0..POOLED_SIDE {
        for k in 0..bw {
            right[(j * bw + k) * POOLED_SIDE + j] = 1.0 / bw as f64;
        }
    }
    Ok((
        Tensor::new(vec![POOLED_SIDE, h], left)?,
        Tensor::new(vec![w, POOLED_SIDE], right)?,
    ))
}

/// Differentiable featurization from on-tape image tensors.
pub fn featurize_graph(
    tape: &mut Tape,
    rgb: &Tensor,
    depth: &Tensor,
    mask: &Tensor,
    d_max: f64,
) -> Result<Tensor> {
    let s = rgb.shape().to_vec();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::ShapeMismatch {
            op: "featurize".into(),
            shapes: format!("{:?}", s),
        });
    }
    let (h, w) = (s[1], s[2]);
    let (pl, pr) = pool_matrices(h, w)?;
    let cell = POOLED_SIDE * POOLED_SIDE;

    let mut parts: Vec<Tensor> = Vec::with_capacity(FEATURE_CHANNELS);
    for c in 0..3 {
        let plane = ops::slice(tape, rgb, c * h * w, (c + 1) * h * w, vec![h, w])?;
        let m = ops::matmul(tape, &pl, &plane)?;
        let m = ops::matmul(tape, &m, &pr)?;
        parts.push(ops::reshape(tape, &m, vec![cell])?);
    }
    let dn = ops::scale(tape, depth, 1.0 / d_max)?;
    let m = ops::matmul(tape, &pl, &dn)?;
    let m = ops::matmul(tape, &m, &pr)?;
    parts.push(ops::reshape(tape, &m, vec![cell])?);
    let m = ops::matmul(tape, &pl, mask)?;
    let m = ops::matmul(tape, &m, &pr)?;
    parts.push(ops::reshape(tape, &m, vec![cell])?);

    let refs: Vec<&Tensor> = parts.iter().collect();
    ops::concat(tape, &refs, vec![FEATURE_DIM])
}

/// Deterministic feature vector of an observation.
pub fn featurize(obs: &Observation, d_max: f64) -> Result<Tensor> {
    let mut tape = Tape::no_grad();
    featurize_graph(&mut tape, &obs.rgb, &obs.depth, &obs.mask, d_max)
}
