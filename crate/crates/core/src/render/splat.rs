//! Tape-level renderer. Camera trig enters the tape as four leaves
//! (cos/sin of yaw and pitch) whose gradients are re-assembled into
//! d/d(yaw, pitch) by the exact chain rule; everything downstream is
//! polynomial in those leaves, so the whole image stays inside the op
//! catalog.

use crate::autodiff::ops;
use crate::error::Result;
use crate::scene::{
    tasks::fixture_points, CameraPose, FieldKind, ObjectKind, ParamLayout, SceneModel,
};
use crate::{GradientMap, Tape, Tensor};

use super::{Observation, RenderConfig, NEAR_PLANE};

/// Camera parameters registered on a tape.
pub struct PoseLeaves {
    pub cos_yaw: Tensor,
    pub sin_yaw: Tensor,
    pub cos_pitch: Tensor,
    pub sin_pitch: Tensor,
    pub radius: Tensor,
    yaw: f64,
    pitch: f64,
}

impl PoseLeaves {
    pub fn register(tape: &mut Tape, pose: &CameraPose) -> Self {
        Self {
            cos_yaw: tape.leaf(&Tensor::scalar(pose.yaw.cos())),
            sin_yaw: tape.leaf(&Tensor::scalar(pose.yaw.sin())),
            cos_pitch: tape.leaf(&Tensor::scalar(pose.pitch.cos())),
            sin_pitch: tape.leaf(&Tensor::scalar(pose.pitch.sin())),
            radius: tape.leaf(&Tensor::scalar(pose.radius)),
            yaw: pose.yaw,
            pitch: pose.pitch,
        }
    }

    /// Chain-rule assembly of d/d(yaw, pitch) from the four trig leaves.
    pub fn angle_grads(&self, grads: &GradientMap) -> (f64, f64) {
        let g = |t: &Tensor| grads.grad(t).item();
        let d_yaw = -self.yaw.sin() * g(&self.cos_yaw) + self.yaw.cos() * g(&self.sin_yaw);
        let d_pitch =
            -self.pitch.sin() * g(&self.cos_pitch) + self.pitch.cos() * g(&self.sin_pitch);
        (d_yaw, d_pitch)
    }

    pub fn radius_grad(&self, grads: &GradientMap) -> f64 {
        grads.grad(&self.radius).item()
    }
}

/// How scene parameters enter the tape.
pub enum SceneSource<'a> {
    /// Geometry as constants; only the camera is differentiable.
    Constant(&'a SceneModel),
    /// Masked parameters read from a flat leaf under the given layout, so
    /// the image is differentiable w.r.t. the flattened vector.
    Leaf(&'a SceneModel, &'a ParamLayout, &'a Tensor),
}

pub struct RenderGraph {
    pub rgb: Tensor,
    pub depth: Tensor,
    pub mask: Tensor,
    /// Segmented cloud [M, 3]; `None` when no pixel has mask > 0.5.
    pub cloud: Option<Tensor>,
    pub cloud_pixels: Vec<(usize, usize)>,
    pub pose_leaves: PoseLeaves,
}

impl RenderGraph {
    pub fn into_observation(self, pose: CameraPose) -> Observation {
        let cloud = self
            .cloud
            .as_ref()
            .map(|c| c.rows3())
            .unwrap_or_default();
        Observation {
            rgb: self.rgb.detach(),
            depth: self.depth.detach(),
            mask: self.mask.detach(),
            cloud,
            pose,
        }
    }
}

struct StagedScene {
    /// World-frame points of all objects then fixtures, [N, 3].
    points: Tensor,
    /// Per-point colors [N, 3].
    colors: Tensor,
    /// 1.0 on rows belonging to the manipulated object, [N, 1].
    object_sel: Tensor,
}

fn stage_scene(tape: &mut Tape, src: &SceneSource, cfg: &RenderConfig) -> Result<Option<StagedScene>> {
    let (scene, leaf_layout) = match src {
        SceneSource::Constant(s) => (*s, None),
        SceneSource::Leaf(s, layout, leaf) => (*s, Some((*layout, *leaf))),
    };

    let mut point_blocks: Vec<Tensor> = Vec::new();
    let mut color_blocks: Vec<Tensor> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();

    for (oi, obj) in scene.objects.iter().enumerate() {
        let n = obj.points.len();
        counts.push(n);
        let local = Tensor::from_rows3(
            &obj.points.iter().map(|p| [p[0], p[1], p[2]]).collect::<Vec<_>>(),
        )?;

        let field = |kind: FieldKind| {
            leaf_layout.and_then(|(layout, leaf)| {
                layout
                    .fields
                    .iter()
                    .find(|f| f.object_index == oi && f.field == kind)
                    .map(|f| (f.offset, f.len, leaf.clone()))
            })
        };

        let world = match obj.kind {
            ObjectKind::Rigid => {
                let (trans, quat) = match (field(FieldKind::Translation), field(FieldKind::Quaternion)) {
                    (Some((to, tl, leaf)), Some((qo, ql, _))) => {
                        let t = ops::slice(tape, &leaf, to, to + tl, vec![1, 3])?;
                        let q = ops::slice(tape, &leaf, qo, qo + ql, vec![4])?;
                        (t, q)
                    }
                    _ => (
                        Tensor::new(vec![1, 3], obj.pose.translation.to_vec())?,
                        Tensor::new(vec![4], obj.pose.quat.to_vec())?,
                    ),
                };
                let rt = rotation_transposed(tape, &quat)?;
                let rotated = ops::matmul(tape, &local, &rt)?;
                let t_tiled = ops::tile_rows(tape, &trans, n)?;
                ops::add(tape, &rotated, &t_tiled)?
            }
            ObjectKind::Particle => match field(FieldKind::Particles) {
                Some((off, len, leaf)) => ops::slice(tape, &leaf, off, off + len, vec![n, 3])?,
                None => local,
            },
        };
        point_blocks.push(world);

        let colors = match field(FieldKind::Colors) {
            Some((off, len, leaf)) => {
                let c = ops::slice(tape, &leaf, off, off + len, vec![n, 3])?;
                ops::clamp(tape, &c, 0.0, 1.0)?
            }
            None => Tensor::from_rows3(&obj.colors)?,
        };
        color_blocks.push(colors);
    }

    if cfg.include_fixtures {
        let (fix_pts, fix_cols) = fixture_points(&scene.fixtures);
        if !fix_pts.is_empty() {
            point_blocks.push(Tensor::from_rows3(&fix_pts)?);
            color_blocks.push(Tensor::from_rows3(&fix_cols)?);
            counts.push(fix_pts.len());
        }
    }

    let total: usize = counts.iter().sum();
    if total == 0 {
        return Ok(None);
    }
    let refs: Vec<&Tensor> = point_blocks.iter().collect();
    let points = ops::concat(tape, &refs, vec![total, 3])?;
    let refs: Vec<&Tensor> = color_blocks.iter().collect();
    let colors = ops::concat(tape, &refs, vec![total, 3])?;

    let mut sel = vec![0.0; total];
    if !scene.objects.is_empty() {
        for v in sel.iter_mut().take(counts[0]) {
            *v = 1.0;
        }
    }
    let object_sel = Tensor::new(vec![total, 1], sel)?;

    Ok(Some(StagedScene {
        points,
        colors,
        object_sel,
    }))
}

/// Row-major R^T for a (not necessarily unit) quaternion; normalization
/// happens on the tape so pose gradients stay exact.
fn rotation_transposed(tape: &mut Tape, quat: &Tensor) -> Result<Tensor> {
    let n2 = {
        let sq = ops::square(tape, quat)?;
        ops::sum(tape, &sq)?
    };
    let n = ops::sqrt(tape, &n2)?;
    let inv = ops::recip_pos(tape, &n)?;
    let inv4 = ops::scalar_broadcast(tape, &inv, vec![4])?;
    let q = ops::mul(tape, quat, &inv4)?;

    let comp = |tape: &mut Tape, i: usize| ops::slice(tape, &q, i, i + 1, vec![1]);
    let w = comp(tape, 0)?;
    let x = comp(tape, 1)?;
    let y = comp(tape, 2)?;
    let z = comp(tape, 3)?;

    let two = |tape: &mut Tape, a: &Tensor, b: &Tensor| -> Result<Tensor> {
        let p = ops::mul(tape, a, b)?;
        ops::scale(tape, &p, 2.0)
    };
    let xx2 = two(tape, &x, &x)?;
    let yy2 = two(tape, &y, &y)?;
    let zz2 = two(tape, &z, &z)?;
    let xy2 = two(tape, &x, &y)?;
    let xz2 = two(tape, &x, &z)?;
    let yz2 = two(tape, &y, &z)?;
    let wx2 = two(tape, &w, &x)?;
    let wy2 = two(tape, &w, &y)?;
    let wz2 = two(tape, &w, &z)?;

    let one = Tensor::scalar(1.0);
    let diag = |tape: &mut Tape, a: &Tensor, b: &Tensor| -> Result<Tensor> {
        let s = ops::add(tape, a, b)?;
        ops::sub(tape, &one, &s)
    };
    let r00 = diag(tape, &yy2, &zz2)?;
    let r11 = diag(tape, &xx2, &zz2)?;
    let r22 = diag(tape, &xx2, &yy2)?;
    let r01 = ops::sub(tape, &xy2, &wz2)?;
    let r02 = ops::add(tape, &xz2, &wy2)?;
    let r10 = ops::add(tape, &xy2, &wz2)?;
    let r12 = ops::sub(tape, &yz2, &wx2)?;
    let r20 = ops::sub(tape, &xz2, &wy2)?;
    let r21 = ops::add(tape, &yz2, &wx2)?;

    // transposed order: columns of R become rows
    ops::concat(
        tape,
        &[&r00, &r10, &r20, &r01, &r11, &r21, &r02, &r12, &r22],
        vec![3, 3],
    )
}

struct CameraOnTape {
    /// World -> camera rotation, transposed, for row-vector points.
    rot_t: Tensor,
    /// Camera -> world rotation (row-major R_wc), for back-projection.
    rot: Tensor,
    /// Camera center [1, 3].
    center: Tensor,
}

fn stage_camera(tape: &mut Tape, leaves: &PoseLeaves, pose: &CameraPose) -> Result<CameraOnTape> {
    let cy = &leaves.cos_yaw;
    let sy = &leaves.sin_yaw;
    let cp = &leaves.cos_pitch;
    let sp = &leaves.sin_pitch;
    let zero = Tensor::scalar(0.0);

    let ncy = ops::neg(tape, cy)?;
    let nsy = ops::neg(tape, sy)?;
    let ncp = ops::neg(tape, cp)?;
    let nsp = ops::neg(tape, sp)?;

    let spcy = ops::mul(tape, sp, cy)?;
    let spsy = ops::mul(tape, sp, sy)?;
    let ncpcy = ops::mul(tape, &ncp, cy)?;
    let ncpsy = ops::mul(tape, &ncp, sy)?;

    // rows of R_wc: right = (-sy, cy, 0), down = (sp cy, sp sy, -cp),
    // forward = (-cp cy, -cp sy, -sp)
    let rot = ops::concat(
        tape,
        &[&nsy, cy, &zero, &spcy, &spsy, &ncp, &ncpcy, &ncpsy, &nsp],
        vec![3, 3],
    )?;
    let rot_t = ops::concat(
        tape,
        &[&nsy, &spcy, &ncpcy, cy, &spsy, &ncpsy, &zero, &ncp, &nsp],
        vec![3, 3],
    )?;

    // center = target + radius * (cp cy, cp sy, sp)
    let cpcy = ops::mul(tape, cp, cy)?;
    let cpsy = ops::mul(tape, cp, sy)?;
    let dir = ops::concat(tape, &[&cpcy, &cpsy, sp], vec![1, 3])?;
    let r3 = ops::scalar_broadcast(tape, &leaves.radius, vec![1, 3])?;
    let rdir = ops::mul(tape, &dir, &r3)?;
    let target = Tensor::new(vec![1, 3], pose.target.to_vec())?;
    let center = ops::add(tape, &target, &rdir)?;

    Ok(CameraOnTape { rot_t, rot, center })
}

/// Build the full differentiable render graph on the given tape.
pub fn render_graph(
    tape: &mut Tape,
    src: SceneSource,
    pose: &CameraPose,
    cfg: &RenderConfig,
) -> Result<RenderGraph> {
    cfg.validate()?;
    pose.validate()?;
    let scene = match &src {
        SceneSource::Constant(s) => *s,
        SceneSource::Leaf(s, _, _) => *s,
    };
    for obj in &scene.objects {
        obj.validate()?;
    }
    let (h, w) = (pose.intrinsics.height, pose.intrinsics.width);
    if h != cfg.height || w != cfg.width {
        return Err(crate::error::Error::ShapeMismatch {
            op: "render".into(),
            shapes: format!("intrinsics {}x{} vs config {}x{}", h, w, cfg.height, cfg.width),
        });
    }

    let staged = match stage_scene(tape, &src, cfg)? {
        Some(s) => s,
        None => {
            // nothing to splat: background image, zero depth/mask, no cloud
            let mut rgb = Vec::with_capacity(3 * h * w);
            for k in 0..3 {
                rgb.extend(std::iter::repeat(cfg.background[k]).take(h * w));
            }
            return Ok(RenderGraph {
                rgb: Tensor::new(vec![3, h, w], rgb)?,
                depth: Tensor::zeros(vec![h, w]),
                mask: Tensor::zeros(vec![h, w]),
                cloud: None,
                cloud_pixels: Vec::new(),
                pose_leaves: PoseLeaves::register(tape, pose),
            });
        }
    };
    let leaves = PoseLeaves::register(tape, pose);
    let cam = stage_camera(tape, &leaves, pose)?;
    let n = staged.points.shape()[0];
    let p = h * w;
    let ir = &pose.intrinsics;

    // camera-frame coordinates
    let c_tiled = ops::tile_rows(tape, &cam.center, n)?;
    let centered = ops::sub(tape, &staged.points, &c_tiled)?;
    let cam_pts = ops::matmul(tape, &centered, &cam.rot_t)?;

    let col = |tape: &mut Tape, k: usize| -> Result<Tensor> {
        let mut sel = vec![0.0; 3];
        sel[k] = 1.0;
        let e = Tensor::new(vec![3, 1], sel)?;
        ops::matmul(tape, &cam_pts, &e)
    };
    let xs = col(tape, 0)?;
    let ys = col(tape, 1)?;
    let zs = col(tape, 2)?;

    // near gate: 0 below the near plane, ramps to 1 by twice the near plane
    let gate = {
        let scaled = ops::scale(tape, &zs, 1.0 / NEAR_PLANE)?;
        let shifted = ops::offset(tape, &scaled, -1.0)?;
        ops::clamp(tape, &shifted, 0.0, 1.0)?
    };
    let z_safe = ops::clamp(tape, &zs, NEAR_PLANE, 1e6)?;
    let inv_z = ops::recip_pos(tape, &z_safe)?;

    // pinhole projection
    let u = {
        let xi = ops::mul(tape, &xs, &inv_z)?;
        let s = ops::scale(tape, &xi, ir.fx)?;
        ops::offset(tape, &s, ir.cx)?
    };
    let v = {
        let yi = ops::mul(tape, &ys, &inv_z)?;
        let s = ops::scale(tape, &yi, ir.fy)?;
        ops::offset(tape, &s, ir.cy)?
    };

    // pixel-center coordinates (u = column, v = row)
    let mut pu = Vec::with_capacity(p);
    let mut pv = Vec::with_capacity(p);
    for i in 0..h {
        for j in 0..w {
            pu.push(j as f64);
            pv.push(i as f64);
        }
    }
    let pu = Tensor::new(vec![p, 1], pu)?;
    let pv = Tensor::new(vec![p, 1], pv)?;

    let pair_sq = |tape: &mut Tape, px: &Tensor, q: &Tensor| -> Result<Tensor> {
        let q_row = ops::reshape(tape, q, vec![1, n])?;
        let q_tile = ops::tile_rows(tape, &q_row, p)?;
        let px_tile = ops::tile_cols(tape, px, n)?;
        let d = ops::sub(tape, &px_tile, &q_tile)?;
        ops::square(tape, &d)
    };
    let du2 = pair_sq(tape, &pu, &u)?;
    let dv2 = pair_sq(tape, &pv, &v)?;
    let d2 = ops::add(tape, &du2, &dv2)?;
    let wmat = {
        let e = ops::scale(tape, &d2, -1.0 / (2.0 * cfg.sigma_px * cfg.sigma_px))?;
        ops::exp(tape, &e)?
    };
    let gate_row = ops::reshape(tape, &gate, vec![1, n])?;
    let gate_tile = ops::tile_rows(tape, &gate_row, p)?;
    let wg = ops::mul(tape, &wmat, &gate_tile)?;

    // softmin visibility over gated points
    let vis = {
        let e = ops::scale(tape, &z_safe, -1.0 / cfg.tau_depth)?;
        let e = ops::exp(tape, &e)?;
        let e = ops::mul(tape, &e, &gate)?;
        let total = ops::sum(tape, &e)?;
        let total = ops::offset(tape, &total, 1e-30)?;
        let inv = ops::recip_pos(tape, &total)?;
        let inv_n = ops::scalar_broadcast(tape, &inv, vec![n, 1])?;
        ops::mul(tape, &e, &inv_n)?
    };
    let vis_row = ops::reshape(tape, &vis, vec![1, n])?;
    let vis_tile = ops::tile_rows(tape, &vis_row, p)?;
    let wu = ops::mul(tape, &wg, &vis_tile)?;

    let ones_n = Tensor::full(vec![n, 1], 1.0);
    let den = {
        let s = ops::matmul(tape, &wu, &ones_n)?;
        ops::offset(tape, &s, cfg.eps_bg)?
    };
    let inv_den = ops::recip_pos(tape, &den)?;

    // color channels
    let mut channels = Vec::with_capacity(3);
    for k in 0..3 {
        let mut sel = vec![0.0; 3];
        sel[k] = 1.0;
        let e = Tensor::new(vec![3, 1], sel)?;
        let ck = ops::matmul(tape, &staged.colors, &e)?;
        let num = ops::matmul(tape, &wu, &ck)?;
        let num = ops::offset(tape, &num, cfg.eps_bg * cfg.background[k])?;
        channels.push(ops::mul(tape, &num, &inv_den)?);
    }
    let rgb = ops::concat(
        tape,
        &[&channels[0], &channels[1], &channels[2]],
        vec![3, h, w],
    )?;

    let depth = {
        let num = ops::matmul(tape, &wu, &z_safe)?;
        let d = ops::mul(tape, &num, &inv_den)?;
        ops::reshape(tape, &d, vec![h, w])?
    };

    let mask = {
        let wobj = ops::matmul(tape, &wg, &staged.object_sel)?;
        let den = ops::offset(tape, &wobj, cfg.eps_bg)?;
        let inv = ops::recip_pos(tape, &den)?;
        let m = ops::mul(tape, &wobj, &inv)?;
        ops::reshape(tape, &m, vec![h, w])?
    };

    // segmented cloud: back-project mask-supported pixels
    let mut cloud_pixels = Vec::new();
    for i in 0..h {
        for j in 0..w {
            if mask.values()[i * w + j] > 0.5 {
                cloud_pixels.push((i, j));
            }
        }
    }
    let cloud = if cloud_pixels.is_empty() {
        None
    } else {
        let m = cloud_pixels.len();
        let mut sel = vec![0.0; m * p];
        let mut rays = Vec::with_capacity(m * 3);
        for (r, &(i, j)) in cloud_pixels.iter().enumerate() {
            sel[r * p + i * w + j] = 1.0;
            rays.push((j as f64 - ir.cx) / ir.fx);
            rays.push((i as f64 - ir.cy) / ir.fy);
            rays.push(1.0);
        }
        let sel = Tensor::new(vec![m, p], sel)?;
        let rays = Tensor::new(vec![m, 3], rays)?;
        let depth_col = ops::reshape(tape, &depth, vec![p, 1])?;
        let d_sel = ops::matmul(tape, &sel, &depth_col)?;
        let d3 = ops::tile_cols(tape, &d_sel, 3)?;
        let cam_sel = ops::mul(tape, &rays, &d3)?;
        let world = ops::matmul(tape, &cam_sel, &cam.rot)?;
        let c_tiled = ops::tile_rows(tape, &cam.center, m)?;
        Some(ops::add(tape, &world, &c_tiled)?)
    };

    Ok(RenderGraph {
        rgb,
        depth,
        mask,
        cloud,
        cloud_pixels,
        pose_leaves: leaves,
    })
}
