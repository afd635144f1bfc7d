//! Flattening of scene parameters into a single vector (and back) so the
//! render-and-compare update can step all masked fields at once.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::quat_normalize;
use crate::scene::{ObjectKind, SceneModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateMask {
    pub pose: bool,
    pub particles: bool,
    pub colors: bool,
}

impl Default for UpdateMask {
    fn default() -> Self {
        Self {
            pose: true,
            particles: true,
            colors: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldKind {
    Translation,
    Quaternion,
    Particles,
    Colors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutField {
    pub object_index: usize,
    pub field: FieldKind,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub fields: Vec<LayoutField>,
    pub total: usize,
    pub mask: UpdateMask,
}

/// Flatten the masked fields of every object into one vector. Rigid
/// objects contribute pose (translation then quaternion) under the pose
/// flag; particle objects contribute positions under the particles flag;
/// colors contribute for any object under the colors flag.
pub fn flatten_params(scene: &SceneModel, mask: UpdateMask) -> (Vec<f64>, ParamLayout) {
    let mut v = Vec::new();
    let mut fields = Vec::new();
    for (oi, obj) in scene.objects.iter().enumerate() {
        match obj.kind {
            ObjectKind::Rigid if mask.pose => {
                fields.push(LayoutField {
                    object_index: oi,
                    field: FieldKind::Translation,
                    offset: v.len(),
                    len: 3,
                });
                v.extend_from_slice(&obj.pose.translation);
                fields.push(LayoutField {
                    object_index: oi,
                    field: FieldKind::Quaternion,
                    offset: v.len(),
                    len: 4,
                });
                v.extend_from_slice(&obj.pose.quat);
            }
            ObjectKind::Particle if mask.particles => {
                fields.push(LayoutField {
                    object_index: oi,
                    field: FieldKind::Particles,
                    offset: v.len(),
                    len: obj.points.len() * 3,
                });
                for p in &obj.points {
                    v.extend_from_slice(p);
                }
            }
            _ => {}
        }
        if mask.colors {
            fields.push(LayoutField {
                object_index: oi,
                field: FieldKind::Colors,
                offset: v.len(),
                len: obj.colors.len() * 3,
            });
            for c in &obj.colors {
                v.extend_from_slice(c);
            }
        }
    }
    let total = v.len();
    (v, ParamLayout { fields, total, mask })
}

/// Rebuild a scene from a flattened vector. Quaternions are re-normalized;
/// colors are clamped back into [0, 1].
pub fn unflatten_params(scene: &SceneModel, layout: &ParamLayout, v: &[f64]) -> Result<SceneModel> {
    if v.len() != layout.total {
        return Err(Error::LayoutMismatch(format!(
            "vector length {} vs layout total {}",
            v.len(),
            layout.total
        )));
    }
    let mut out = scene.clone();
    for f in &layout.fields {
        let obj = out
            .objects
            .get_mut(f.object_index)
            .ok_or_else(|| Error::LayoutMismatch(format!("object index {}", f.object_index)))?;
        let slice = &v[f.offset..f.offset + f.len];
        match f.field {
            FieldKind::Translation => {
                if f.len != 3 {
                    return Err(Error::LayoutMismatch("translation length".into()));
                }
                obj.pose.translation = [slice[0], slice[1], slice[2]];
            }
            FieldKind::Quaternion => {
                if f.len != 4 {
                    return Err(Error::LayoutMismatch("quaternion length".into()));
                }
                obj.pose.quat = quat_normalize([slice[0], slice[1], slice[2], slice[3]]);
            }
            FieldKind::Particles => {
                if f.len != obj.points.len() * 3 {
                    return Err(Error::LayoutMismatch(format!(
                        "particle count: {} values for {} points",
                        f.len,
                        obj.points.len()
                    )));
                }
                for (p, c) in obj.points.iter_mut().zip(slice.chunks_exact(3)) {
                    *p = [c[0], c[1], c[2]];
                }
            }
            FieldKind::Colors => {
                if f.len != obj.colors.len() * 3 {
                    return Err(Error::LayoutMismatch(format!(
                        "color count: {} values for {} colors",
                        f.len,
                        obj.colors.len()
                    )));
                }
                for (p, c) in obj.colors.iter_mut().zip(slice.chunks_exact(3)) {
                    *p = [
                        c[0].clamp(0.0, 1.0),
                        c[1].clamp(0.0, 1.0),
                        c[2].clamp(0.0, 1.0),
                    ];
                }
            }
        }
    }
    Ok(out)
}
