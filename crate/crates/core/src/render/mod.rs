//! Differentiable soft point-splat renderer. Produces image, depth, soft
//! object mask, and a segmented point cloud from (scene, camera pose), with
//! gradients w.r.t. both the camera angles and the scene parameters.

mod image_io;
mod splat;

pub use image_io::{read_pgm16, write_pgm16, write_ppm, GridSidecar};
pub use splat::{render_graph, PoseLeaves, RenderGraph, SceneSource};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{sub3, Vec3};
use crate::scene::{CameraPose, SceneModel, PITCH_MARGIN};
use crate::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub height: usize,
    pub width: usize,
    /// Splat standard deviation in pixels.
    pub sigma_px: f64,
    /// Soft z-test temperature in meters; small values make occluders
    /// near-opaque.
    pub tau_depth: f64,
    pub eps_bg: f64,
    pub background: Vec3,
    /// Far plane for depth normalization.
    pub d_max: f64,
    /// Render task fixtures and the occluder (off for object-only fixtures
    /// in tests and diagnostics).
    pub include_fixtures: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            sigma_px: 1.5,
            tau_depth: 0.05,
            eps_bg: 1e-6,
            background: [0.0, 0.0, 0.0],
            d_max: 5.0,
            include_fixtures: true,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigma_px <= 0.0 || self.tau_depth <= 0.0 || self.eps_bg <= 0.0 {
            return Err(Error::InvalidConfig(
                "render sigma, tau, and eps_bg must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Near plane: points with camera z below this get zero splat weight.
pub const NEAR_PLANE: f64 = 1e-3;

/// Rendered or captured sensor data at one camera pose.
#[derive(Debug, Clone)]
pub struct Observation {
    /// Channel-plane layout [3, H, W], values in [0, 1].
    pub rgb: Tensor,
    /// [H, W] camera-frame z in meters.
    pub depth: Tensor,
    /// [H, W] soft coverage of the manipulated object, in [0, 1].
    pub mask: Tensor,
    /// World-frame points back-projected from pixels with mask > 0.5.
    pub cloud: Vec<Vec3>,
    pub pose: CameraPose,
}

impl Observation {
    pub fn resolution(&self) -> (usize, usize) {
        (self.depth.shape()[0], self.depth.shape()[1])
    }
}

/// World-to-camera rigid transform (row-major rotation, camera center).
/// Convention: camera x right, y down, z forward through the target.
pub struct Extrinsics {
    pub rotation: [f64; 9],
    pub center: Vec3,
}

impl Extrinsics {
    pub fn world_to_camera(&self, p: Vec3) -> Vec3 {
        let d = sub3(p, self.center);
        let r = &self.rotation;
        [
            r[0] * d[0] + r[1] * d[1] + r[2] * d[2],
            r[3] * d[0] + r[4] * d[1] + r[5] * d[2],
            r[6] * d[0] + r[7] * d[1] + r[8] * d[2],
        ]
    }

    pub fn camera_to_world(&self, p: Vec3) -> Vec3 {
        let r = &self.rotation;
        [
            r[0] * p[0] + r[3] * p[1] + r[6] * p[2] + self.center[0],
            r[1] * p[0] + r[4] * p[1] + r[7] * p[2] + self.center[1],
            r[2] * p[0] + r[5] * p[1] + r[8] * p[2] + self.center[2],
        ]
    }
}

/// Closed-form look-at extrinsics for the spherical camera.
pub fn camera_extrinsics(pose: &CameraPose) -> Result<Extrinsics> {
    pose.validate()?;
    if pose.pitch.abs() >= std::f64::consts::FRAC_PI_2 - PITCH_MARGIN {
        return Err(Error::DegeneratePose(
            "optical axis aligned with the up vector".into(),
        ));
    }
    let (cy, sy) = (pose.yaw.cos(), pose.yaw.sin());
    let (cp, sp) = (pose.pitch.cos(), pose.pitch.sin());
    // rows: camera x (right), y (down), z (forward)
    let rotation = [
        -sy, cy, 0.0, //
        sp * cy, sp * sy, -cp, //
        -cp * cy, -cp * sy, -sp,
    ];
    Ok(Extrinsics {
        rotation,
        center: pose.position(),
    })
}

/// Render an observation. Pure function of its inputs; identical inputs
/// produce bit-identical output.
pub fn render(scene: &SceneModel, pose: &CameraPose, cfg: &RenderConfig) -> Result<Observation> {
    let mut tape = Tape::no_grad();
    let graph = render_graph(&mut tape, SceneSource::Constant(scene), pose, cfg)?;
    Ok(graph.into_observation(*pose))
}

/// Sum of all rgb, depth, and mask pixels; scalar probe of the full image.
pub fn pixel_sum(scene: &SceneModel, pose: &CameraPose, cfg: &RenderConfig) -> Result<f64> {
    let mut tape = Tape::no_grad();
    let g = render_graph(&mut tape, SceneSource::Constant(scene), pose, cfg)?;
    let total: f64 = g.rgb.values().iter().sum::<f64>()
        + g.depth.values().iter().sum::<f64>()
        + g.mask.values().iter().sum::<f64>();
    Ok(total)
}

/// Tape gradient of [`pixel_sum`] w.r.t. (yaw, pitch).
pub fn pixel_sum_pose_grad(
    scene: &SceneModel,
    pose: &CameraPose,
    cfg: &RenderConfig,
) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let g = render_graph(&mut tape, SceneSource::Constant(scene), pose, cfg)?;
    let mut parts = Vec::new();
    for t in [&g.rgb, &g.depth, &g.mask] {
        parts.push(crate::autodiff::ops::sum(&mut tape, t)?);
    }
    let ab = crate::autodiff::ops::add(&mut tape, &parts[0], &parts[1])?;
    let total = crate::autodiff::ops::add(&mut tape, &ab, &parts[2])?;
    let grads = tape.backward(&total)?;
    Ok(g.pose_leaves.angle_grads(&grads))
}

/// Back-project the pixels with mask support > 0.5 into world-frame
/// points using the observation's pose.
pub fn obs_pointcloud(obs: &Observation, pose: &CameraPose) -> Result<Vec<Vec3>> {
    let ext = camera_extrinsics(pose)?;
    let (h, w) = obs.resolution();
    let ir = &pose.intrinsics;
    let mut cloud = Vec::new();
    for i in 0..h {
        for j in 0..w {
            if obs.mask.values()[i * w + j] > 0.5 {
                let d = obs.depth.values()[i * w + j];
                let cam = [
                    (j as f64 - ir.cx) / ir.fx * d,
                    (i as f64 - ir.cy) / ir.fy * d,
                    d,
                ];
                cloud.push(ext.camera_to_world(cam));
            }
        }
    }
    Ok(cloud)
}
