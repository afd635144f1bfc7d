//! Scene parameters: objects, task fixtures, and the camera
//! parameterization, plus their flattened view for gradient updates.

mod flatten;
mod sample;
pub mod tasks;

pub use flatten::{flatten_params, unflatten_params, FieldKind, ParamLayout, UpdateMask};
pub use sample::{resample_indices, resample_points};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{quat_norm, Quat, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskId {
    PegInsertion,
    NeedleThreading,
}

impl TaskId {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "peg-insertion" | "peg" => Ok(TaskId::PegInsertion),
            "needle-threading" | "needle" => Ok(TaskId::NeedleThreading),
            other => Err(Error::UnknownTask(other.into())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TaskId::PegInsertion => "peg-insertion",
            TaskId::NeedleThreading => "needle-threading",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectKind {
    Rigid,
    Particle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub translation: Vec3,
    /// Unit quaternion (w, x, y, z).
    pub quat: Quat,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            translation: [0.0; 3],
            quat: [1.0, 0.0, 0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysAttrs {
    pub mass_per_point: f64,
    pub k_stretch: f64,
    pub k_bend: f64,
    pub damping: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectModel {
    pub id: String,
    pub kind: ObjectKind,
    /// Object-frame points for rigid objects; world-frame for particles.
    pub points: Vec<Vec3>,
    /// Per-point colors in [0, 1].
    pub colors: Vec<Vec3>,
    pub pose: Pose,
    pub phys: PhysAttrs,
}

impl ObjectModel {
    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() || self.points.len() != self.colors.len() {
            return Err(Error::InvalidConfig(format!(
                "object {}: {} points vs {} colors",
                self.id,
                self.points.len(),
                self.colors.len()
            )));
        }
        if (quat_norm(self.pose.quat) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "object {}: quaternion norm {} not unit",
                self.id,
                quat_norm(self.pose.quat)
            )));
        }
        if self
            .colors
            .iter()
            .any(|c| c.iter().any(|&v| !(0.0..=1.0).contains(&v)))
        {
            return Err(Error::InvalidConfig(format!("object {}: color out of [0,1]", self.id)));
        }
        if self.phys.mass_per_point <= 0.0 || self.phys.k_stretch < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "object {}: non-positive mass or stiffness",
                self.id
            )));
        }
        Ok(())
    }
}

/// Rectangular patch of static geometry, used for walls, occluders, and
/// as the carrier of task fixtures in renders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slab {
    pub center: Vec3,
    pub axis_u: Vec3,
    pub axis_v: Vec3,
    pub half_u: f64,
    pub half_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "kebab-case")]
pub enum TaskSpec {
    Peg {
        /// Wall plane x = wall_x; insertion along +x.
        wall_x: f64,
        wall: Slab,
        hole_center: Vec3,
        hole_half_width: f64,
        required_depth: f64,
        /// Half-length of the peg along its axis (tip = center + L * heading).
        peg_half_len: f64,
        occluder: Slab,
    },
    Ring {
        center: Vec3,
        normal: Vec3,
        radius: f64,
        occluder: Slab,
    },
}

impl TaskSpec {
    pub fn occluder(&self) -> &Slab {
        match self {
            TaskSpec::Peg { occluder, .. } => occluder,
            TaskSpec::Ring { occluder, .. } => occluder,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneModel {
    #[serde(default = "version_one")]
    pub version: u32,
    pub task: TaskId,
    /// The first object is the manipulated one.
    pub objects: Vec<ObjectModel>,
    pub fixtures: TaskSpec,
}

fn version_one() -> u32 {
    1
}

impl SceneModel {
    pub fn validate(&self) -> Result<()> {
        if self.objects.is_empty() {
            return Err(Error::InvalidConfig("scene has no objects".into()));
        }
        let mut ids: Vec<&str> = self.objects.iter().map(|o| o.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.objects.len() {
            return Err(Error::InvalidConfig("duplicate object ids".into()));
        }
        for o in &self.objects {
            o.validate()?;
        }
        Ok(())
    }

    pub fn manipulated(&self) -> &ObjectModel {
        &self.objects[0]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let scene: SceneModel = serde_json::from_str(s)?;
        if scene.version != 1 {
            return Err(Error::InvalidConfig(format!(
                "unsupported scene version {}",
                scene.version
            )));
        }
        scene.validate()?;
        Ok(scene)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// Square image with a ~53 degree horizontal field of view.
    pub fn square(res: usize) -> Self {
        let f = res as f64;
        Self {
            fx: f,
            fy: f,
            cx: (res as f64 - 1.0) / 2.0,
            cy: (res as f64 - 1.0) / 2.0,
            width: res,
            height: res,
        }
    }
}

pub const PITCH_MARGIN: f64 = 1e-3;

/// Spherical look-at camera: position = target + radius * direction(yaw,
/// pitch), optical axis through the target, up +z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub yaw: f64,
    pub pitch: f64,
    pub radius: f64,
    pub target: Vec3,
    pub intrinsics: Intrinsics,
}

impl CameraPose {
    pub fn validate(&self) -> Result<()> {
        if self.radius <= 0.0 {
            return Err(Error::DegeneratePose("radius must be positive".into()));
        }
        if self.pitch.abs() >= std::f64::consts::FRAC_PI_2 - PITCH_MARGIN {
            return Err(Error::DegeneratePose(format!(
                "pitch {} too close to the pole",
                self.pitch
            )));
        }
        if self.intrinsics.width < 8 || self.intrinsics.height < 8 {
            return Err(Error::DegeneratePose("image smaller than 8x8".into()));
        }
        Ok(())
    }

    pub fn direction(&self) -> Vec3 {
        [
            self.pitch.cos() * self.yaw.cos(),
            self.pitch.cos() * self.yaw.sin(),
            self.pitch.sin(),
        ]
    }

    pub fn position(&self) -> Vec3 {
        let d = self.direction();
        [
            self.target[0] + self.radius * d[0],
            self.target[1] + self.radius * d[1],
            self.target[2] + self.radius * d[2],
        ]
    }

    pub fn with_angles(&self, yaw: f64, pitch: f64) -> Self {
        Self { yaw, pitch, ..*self }
    }
}
