//! Render-and-compare model updating: masked image loss, exact Earth
//! Mover's Distance between segmented clouds, and the gradient update of
//! the flattened scene parameters.

mod hungarian;

pub use hungarian::min_cost_assignment;

use serde::{Deserialize, Serialize};

use crate::autodiff::ops;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::neural::{adam_step, AdamState};
use crate::render::{render_graph, Observation, RenderConfig, RenderGraph, SceneSource};
use crate::scene::{
    flatten_params, resample_indices, resample_points, unflatten_params, CameraPose, FieldKind,
    SceneModel, UpdateMask,
};
use crate::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Real2SimConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Adam learning rate for the flattened parameters.
    pub learning_rate: f64,
    pub steps: usize,
    /// Per-step multiplicative learning-rate decay; late steps shrink so
    /// Adam settles instead of orbiting the optimum.
    pub lr_decay: f64,
    /// Both clouds are resampled to this cardinality before the EMD.
    pub emd_cloud_size: usize,
    pub mask: UpdateMask,
}

impl Default for Real2SimConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            learning_rate: 0.01,
            steps: 50,
            emd_cloud_size: 64,
            mask: UpdateMask::default(),
        }
    }
}

impl Real2SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || (self.lambda1 == 0.0 && self.lambda2 == 0.0)
        {
            return Err(Error::InvalidConfig(
                "loss weights must be non-negative and not both zero".into(),
            ));
        }
        if self.steps < 1 || self.emd_cloud_size < 1 {
            return Err(Error::InvalidConfig("steps and cloud size must be positive".into()));
        }
        Ok(())
    }
}

/// Mean over pixels and channels of |G_a * rgb_a - G_b * rgb_b|, built on
/// the tape from the first observation's rendered tensors.
pub fn masked_l1_graph(
    tape: &mut Tape,
    rgb_a: &Tensor,
    mask_a: &Tensor,
    obs_b: &Observation,
) -> Result<Tensor> {
    let s = rgb_a.shape().to_vec();
    if s != obs_b.rgb.shape() {
        return Err(Error::ShapeMismatch {
            op: "masked-l1".into(),
            shapes: format!("{:?} vs {:?}", s, obs_b.rgb.shape()),
        });
    }
    let (h, w) = (s[1], s[2]);
    let mask3_a = ops::concat(tape, &[mask_a, mask_a, mask_a], vec![3, h, w])?;
    let ga = ops::mul(tape, rgb_a, &mask3_a)?;

    let mut gb = Vec::with_capacity(3 * h * w);
    for c in 0..3 {
        for p in 0..h * w {
            gb.push(obs_b.rgb.values()[c * h * w + p] * obs_b.mask.values()[p]);
        }
    }
    let gb = Tensor::new(vec![3, h, w], gb)?;
    let d = ops::sub(tape, &ga, &gb)?;
    let d = ops::abs(tape, &d)?;
    ops::mean(tape, &d)
}

/// Numeric masked L1 between two observations.
pub fn masked_l1(a: &Observation, b: &Observation) -> Result<f64> {
    let mut tape = Tape::no_grad();
    Ok(masked_l1_graph(&mut tape, &a.rgb, &a.mask, b)?.item())
}

/// Exact EMD: mean Euclidean distance under the optimal bijection.
/// Cardinalities must match (resample first).
pub fn emd(x: &[Vec3], y: &[Vec3]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::CardinalityMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Ok(0.0);
    }
    let n = x.len();
    let perm = assignment(x, y);
    // canonical summation order keeps emd(x, y) and emd(y, x) bit-equal
    let mut dists: Vec<f64> = (0..n)
        .map(|i| crate::geom::norm3(crate::geom::sub3(x[i], y[perm[i]])))
        .collect();
    dists.sort_by(|a, b| a.total_cmp(b));
    Ok(dists.iter().sum::<f64>() / n as f64)
}

fn assignment(x: &[Vec3], y: &[Vec3]) -> Vec<usize> {
    let n = x.len();
    let mut cost = Vec::with_capacity(n * n);
    for xi in x {
        for yj in y {
            cost.push(crate::geom::norm3(crate::geom::sub3(*xi, *yj)));
        }
    }
    min_cost_assignment(&cost, n)
}

/// EMD on the tape: the optimal assignment is computed from the forward
/// values and held fixed, so the gradient w.r.t. `x` is the standard
/// subgradient of the matching cost.
pub fn emd_graph(tape: &mut Tape, x: &Tensor, y: &[Vec3]) -> Result<Tensor> {
    let n = x.shape()[0];
    if n != y.len() {
        return Err(Error::CardinalityMismatch(n, y.len()));
    }
    let xs = x.rows3();
    let perm = assignment(&xs, y);
    let matched: Vec<Vec3> = perm.iter().map(|&j| y[j]).collect();
    let y_t = Tensor::from_rows3(&matched)?;
    let d = ops::sub(tape, x, &y_t)?;
    let norms = ops::row_norms(tape, &d, 1e-24)?;
    ops::mean(tape, &norms)
}

/// Resample an on-tape cloud to `n` points by farthest-point sampling of
/// its forward values (a constant selector, so gradients flow to the
/// selected points).
pub fn resample_graph(tape: &mut Tape, cloud: &Tensor, n: usize) -> Result<Tensor> {
    let m = cloud.shape()[0];
    let idx = resample_indices(&cloud.rows3(), n);
    let mut sel = vec![0.0; n * m];
    for (r, &i) in idx.iter().enumerate() {
        sel[r * m + i] = 1.0;
    }
    let sel = Tensor::new(vec![n, m], sel)?;
    ops::matmul(tape, &sel, cloud)
}

/// Combined loss L = lambda1 * L1 + lambda2 * L2 on the tape. When either
/// segmented cloud is empty the EMD term is skipped (there is nothing to
/// match), leaving the image term.
pub fn model_loss_graph(
    tape: &mut Tape,
    graph: &RenderGraph,
    obs_real: &Observation,
    cfg: &Real2SimConfig,
) -> Result<Tensor> {
    cfg.validate()?;
    let l1 = masked_l1_graph(tape, &graph.rgb, &graph.mask, obs_real)?;
    let mut total = ops::scale(tape, &l1, cfg.lambda1)?;
    if cfg.lambda2 > 0.0 {
        if let Some(cloud_sim) = &graph.cloud {
            if !obs_real.cloud.is_empty() {
                let sim = resample_graph(tape, cloud_sim, cfg.emd_cloud_size)?;
                let real = resample_points(&obs_real.cloud, cfg.emd_cloud_size);
                let l2 = emd_graph(tape, &sim, &real)?;
                let l2 = ops::scale(tape, &l2, cfg.lambda2)?;
                total = ops::add(tape, &total, &l2)?;
            }
        }
    }
    Ok(total)
}

/// Numeric combined loss between two observations.
pub fn model_loss(obs_sim: &Observation, obs_real: &Observation, cfg: &Real2SimConfig) -> Result<f64> {
    cfg.validate()?;
    let mut tape = Tape::no_grad();
    let l1 = masked_l1_graph(&mut tape, &obs_sim.rgb, &obs_sim.mask, obs_real)?.item();
    let mut total = cfg.lambda1 * l1;
    if cfg.lambda2 > 0.0 && !obs_sim.cloud.is_empty() && !obs_real.cloud.is_empty() {
        let a = resample_points(&obs_sim.cloud, cfg.emd_cloud_size);
        let b = resample_points(&obs_real.cloud, cfg.emd_cloud_size);
        total += cfg.lambda2 * emd(&a, &b)?;
    }
    Ok(total)
}

/// Gradient update of the masked scene parameters against a captured
/// observation: Adam on the flattened vector, re-rendering each step,
/// quaternions renormalized. Returns the updated scene and the per-step
/// loss trace (loss evaluated before each step).
pub fn update_model(
    scene: &SceneModel,
    obs_real: &Observation,
    pose: &CameraPose,
    cfg: &Real2SimConfig,
    render_cfg: &RenderConfig,
) -> Result<(SceneModel, Vec<f64>)> {
    cfg.validate()?;
    let (mut vec, layout) = flatten_params(scene, cfg.mask);
    if vec.is_empty() {
        return Err(Error::LayoutMismatch(
            "update mask selects no parameters for this scene".into(),
        ));
    }
    let mut adam = AdamState::new(vec.len());
    let mut lr_scale = 1.0;
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut running_min = f64::INFINITY;
    // last accepted point: (params, optimizer state, its loss)
    let mut accepted: Option<(Vec<f64>, AdamState, f64)> = None;

    for _ in 0..cfg.steps {
        let mut tape = Tape::new();
        let leaf = tape.leaf(&Tensor::vector(vec.clone())?);
        let graph = render_graph(&mut tape, SceneSource::Leaf(scene, &layout, &leaf), pose, render_cfg)?;
        let loss_t = model_loss_graph(&mut tape, &graph, obs_real, cfg)?;
        let loss = loss_t.item();

        // trust safeguard: a step that spikes the loss past 10% of the
        // running minimum is reverted and retried with a smaller rate
        if let Some((pv, pa, pl)) = &accepted {
            if loss > 1.1 * running_min {
                vec = pv.clone();
                adam = pa.clone();
                lr_scale *= 0.5;
                trace.push(*pl);
                continue;
            }
        }
        trace.push(loss);
        running_min = running_min.min(loss);
        accepted = Some((vec.clone(), adam.clone(), loss));

        let grads = tape.backward(&loss_t)?;
        let g = grads.grad(&leaf);
        adam_step(&mut vec, g.values(), &mut adam, cfg.learning_rate * lr_scale)?;
        renormalize_quats(&mut vec, &layout);
        lr_scale = (lr_scale * 1.2).min(1.0);
    }

    // hand back the last evaluated-and-accepted point, not the untested
    // trial parameters of the final step
    if let Some((pv, _, _)) = accepted {
        vec = pv;
    }
    let updated = unflatten_params(scene, &layout, &vec)?;
    Ok((updated, trace))
}

fn renormalize_quats(vec: &mut [f64], layout: &crate::scene::ParamLayout) {
    for f in &layout.fields {
        if f.field == FieldKind::Quaternion {
            let q = &mut vec[f.offset..f.offset + 4];
            let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
            if n > 0.0 {
                for x in q {
                    *x /= n;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests;
