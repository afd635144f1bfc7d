//! Built-in task scenes: peg-in-hole and ring threading, both with an
//! occluder slab that blocks the default viewpoint (it affects rendering
//! only, never dynamics).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geom::{normalize3, quat_about_z, quat_from_axis_angle, quat_mul, quat_normalize, Vec3};
use crate::scene::{
    CameraPose, Intrinsics, ObjectKind, ObjectModel, PhysAttrs, Pose, SceneModel, Slab, TaskId,
    TaskSpec,
};

pub const PEG_POINTS: usize = 64;
pub const ROPE_PARTICLES: usize = 16;
pub const ROPE_REST_LEN: f64 = 0.015;

/// Canonical ground-truth scene for a task.
pub fn ground_truth_scene(task: TaskId) -> SceneModel {
    match task {
        TaskId::PegInsertion => peg_scene([-0.03, 0.0, PEG_Z], 0.0),
        TaskId::NeedleThreading => rope_scene([-0.05, 0.0, 0.52]),
    }
}

/// Fresh initial scene with the manipulated object placed uniformly inside
/// the task's start bounds; deterministic in the seed.
pub fn sample_nominal_scene(task: TaskId, seed: u64) -> SceneModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0171);
    match task {
        TaskId::PegInsertion => {
            let x = rng.gen_range(-0.06..0.0);
            let y = rng.gen_range(-0.06..0.06);
            let alpha = rng.gen_range(-0.5..0.5);
            peg_scene([x, y, PEG_Z], alpha)
        }
        TaskId::NeedleThreading => {
            let x = rng.gen_range(-0.08..-0.02);
            let y = rng.gen_range(-0.04..0.04);
            let z = rng.gen_range(0.48..0.56);
            rope_scene([x, y, z])
        }
    }
}

/// Ground-truth geometry with the manipulated object's pose perturbed:
/// rigid objects get a uniform translation in [-s, s]^3 and a rotation by
/// an angle in [-s*pi, s*pi] about a random axis; particle objects get
/// per-particle jitter in [-s, s]^3. Deterministic in the seed.
pub fn init_model(task: TaskId, perturb_seed: u64, perturb_scale: f64) -> Result<SceneModel> {
    assert!(perturb_scale >= 0.0, "perturb scale must be non-negative");
    let scene = ground_truth_scene(task);
    Ok(perturb_scene(&scene, perturb_seed, perturb_scale))
}

/// Apply the init_model perturbation to an existing scene.
pub fn perturb_scene(scene: &SceneModel, seed: u64, scale: f64) -> SceneModel {
    let mut out = scene.clone();
    if scale == 0.0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let obj = &mut out.objects[0];
    match obj.kind {
        ObjectKind::Rigid => {
            for t in obj.pose.translation.iter_mut() {
                *t += rng.gen_range(-scale..=scale);
            }
            let axis: Vec3 = loop {
                let v = [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ];
                let n = crate::geom::norm3(v);
                if n > 1e-3 {
                    break normalize3(v);
                }
            };
            let angle = rng.gen_range(-scale * std::f64::consts::PI..=scale * std::f64::consts::PI);
            obj.pose.quat = quat_normalize(quat_mul(quat_from_axis_angle(axis, angle), obj.pose.quat));
        }
        ObjectKind::Particle => {
            for p in obj.points.iter_mut() {
                for c in p.iter_mut() {
                    *c += rng.gen_range(-scale..=scale);
                }
            }
        }
    }
    out
}

/// Displace the manipulated object by a hidden rigid offset: rigid objects
/// as in [`perturb_scene`]; particle objects by one common translation in
/// [-s, s]^3 (per-particle jitter would tear a connected chain apart).
pub fn offset_scene(scene: &SceneModel, seed: u64, scale: f64) -> SceneModel {
    let mut out = scene.clone();
    if scale == 0.0 {
        return out;
    }
    match out.objects[0].kind {
        ObjectKind::Rigid => perturb_scene(scene, seed, scale),
        ObjectKind::Particle => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0ff5_e7);
            let d = [
                rng.gen_range(-scale..=scale),
                rng.gen_range(-scale..=scale),
                rng.gen_range(-scale..=scale),
            ];
            for p in out.objects[0].points.iter_mut() {
                p[0] += d[0];
                p[1] += d[1];
                p[2] += d[2];
            }
            out
        }
    }
}

/// Default camera for a task; the occluder slab sits between this viewpoint
/// and the workspace.
pub fn default_camera(task: TaskId) -> CameraPose {
    let intrinsics = Intrinsics::square(32);
    match task {
        TaskId::PegInsertion => CameraPose {
            yaw: 2.6,
            pitch: 0.5,
            radius: 0.55,
            target: [0.02, 0.0, PEG_Z],
            intrinsics,
        },
        TaskId::NeedleThreading => CameraPose {
            yaw: 1.2,
            pitch: 0.5,
            radius: 0.5,
            target: [0.04, 0.0, 0.30],
            intrinsics,
        },
    }
}

/// Training/NBV view ranges per task: (yaw_lo, yaw_hi, pitch_lo, pitch_hi).
pub fn view_ranges(task: TaskId) -> (f64, f64, f64, f64) {
    match task {
        TaskId::PegInsertion => (2.0, 4.4, 0.15, 0.75),
        TaskId::NeedleThreading => (-0.6, 2.4, 0.15, 0.75),
    }
}

const PEG_Z: f64 = 0.25;

fn peg_scene(center: Vec3, alpha: f64) -> SceneModel {
    let half_len = 0.06;
    let half_cross = 0.01;
    // 16 stations along the axis x 4 cross-section corners = 64 points
    let mut points = Vec::with_capacity(PEG_POINTS);
    for i in 0..16 {
        let x = -half_len + 2.0 * half_len * (i as f64) / 15.0;
        for (sy, sz) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
            points.push([x, sy * half_cross, sz * half_cross]);
        }
    }
    let colors = vec![[0.85, 0.25, 0.2]; points.len()];
    let peg = ObjectModel {
        id: "peg".into(),
        kind: ObjectKind::Rigid,
        points,
        colors,
        pose: Pose {
            translation: center,
            quat: quat_about_z(alpha),
        },
        phys: PhysAttrs {
            mass_per_point: 0.01,
            k_stretch: 0.0,
            k_bend: 0.0,
            damping: 0.0,
        },
    };

    let occ_dir = [(0.45f64).cos() * (2.6f64).cos(), (0.45f64).cos() * (2.6f64).sin(), (0.45f64).sin()];
    let occ_center = [
        0.02 + 0.30 * occ_dir[0],
        0.30 * occ_dir[1],
        PEG_Z + 0.30 * occ_dir[2],
    ];
    let fixtures = TaskSpec::Peg {
        wall_x: 0.12,
        wall: Slab {
            center: [0.12, 0.0, PEG_Z],
            axis_u: [0.0, 1.0, 0.0],
            axis_v: [0.0, 0.0, 1.0],
            half_u: 0.16,
            half_v: 0.12,
        },
        hole_center: [0.12, 0.0, PEG_Z],
        hole_half_width: 0.022,
        required_depth: 0.03,
        peg_half_len: half_len,
        occluder: occluder_slab(occ_center, occ_dir),
    };

    SceneModel {
        version: 1,
        task: TaskId::PegInsertion,
        objects: vec![peg],
        fixtures,
    }
}

fn rope_scene(grip: Vec3) -> SceneModel {
    let points: Vec<Vec3> = (0..ROPE_PARTICLES)
        .map(|i| [grip[0], grip[1], grip[2] - ROPE_REST_LEN * i as f64])
        .collect();
    let colors = vec![[0.9, 0.85, 0.25]; points.len()];
    let rope = ObjectModel {
        id: "rope".into(),
        kind: ObjectKind::Particle,
        points,
        colors,
        pose: Pose::identity(),
        phys: PhysAttrs {
            // stiff enough to act like thread under the substepped integrator
            mass_per_point: 0.002,
            k_stretch: 200.0,
            k_bend: 2.0,
            damping: 0.08,
        },
    };

    let occ_dir = [(0.45f64).cos() * (1.2f64).cos(), (0.45f64).cos() * (1.2f64).sin(), (0.45f64).sin()];
    let occ_center = [
        0.04 + 0.28 * occ_dir[0],
        0.28 * occ_dir[1],
        0.30 + 0.28 * occ_dir[2],
    ];
    let fixtures = TaskSpec::Ring {
        center: [0.10, 0.0, 0.27],
        normal: [1.0, 0.0, 0.0],
        radius: 0.032,
        occluder: occluder_slab(occ_center, occ_dir),
    };

    SceneModel {
        version: 1,
        task: TaskId::NeedleThreading,
        objects: vec![rope],
        fixtures,
    }
}

fn occluder_slab(center: Vec3, facing: Vec3) -> Slab {
    // rectangle perpendicular to `facing`
    let n = normalize3(facing);
    let up = if n[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
    let u = normalize3(crate::geom::cross3(up, n));
    let v = normalize3(crate::geom::cross3(n, u));
    Slab {
        center,
        axis_u: u,
        axis_v: v,
        half_u: 0.10,
        half_v: 0.10,
    }
}

/// Static fixture geometry as renderable points with colors.
pub fn fixture_points(spec: &TaskSpec) -> (Vec<Vec3>, Vec<Vec3>) {
    let mut pts = Vec::new();
    let mut cols = Vec::new();
    match spec {
        TaskSpec::Peg {
            wall,
            hole_center,
            hole_half_width,
            ..
        } => {
            // wall grid, skipping the hole slot
            let (nu, nv) = (12, 9);
            for i in 0..nu {
                for j in 0..nv {
                    let a = -wall.half_u + 2.0 * wall.half_u * (i as f64) / (nu - 1) as f64;
                    let b = -wall.half_v + 2.0 * wall.half_v * (j as f64) / (nv - 1) as f64;
                    let p = [
                        wall.center[0] + a * wall.axis_u[0] + b * wall.axis_v[0],
                        wall.center[1] + a * wall.axis_u[1] + b * wall.axis_v[1],
                        wall.center[2] + a * wall.axis_u[2] + b * wall.axis_v[2],
                    ];
                    let in_hole = (p[1] - hole_center[1]).abs() <= hole_half_width * 1.5
                        && (p[2] - hole_center[2]).abs() <= hole_half_width * 1.5;
                    if !in_hole {
                        pts.push(p);
                        cols.push([0.45, 0.45, 0.5]);
                    }
                }
            }
        }
        TaskSpec::Ring { center, normal, radius, .. } => {
            let n = normalize3(*normal);
            let up = if n[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
            let u = normalize3(crate::geom::cross3(up, n));
            let v = normalize3(crate::geom::cross3(n, u));
            for k in 0..40 {
                let a = std::f64::consts::TAU * (k as f64) / 40.0;
                let (ca, sa) = (a.cos(), a.sin());
                pts.push([
                    center[0] + radius * (ca * u[0] + sa * v[0]),
                    center[1] + radius * (ca * u[1] + sa * v[1]),
                    center[2] + radius * (ca * u[2] + sa * v[2]),
                ]);
                cols.push([0.3, 0.5, 0.9]);
            }
        }
    }
    // occluder slab points
    let occ = spec.occluder();
    let (nu, nv) = (9, 9);
    for i in 0..nu {
        for j in 0..nv {
            let a = -occ.half_u + 2.0 * occ.half_u * (i as f64) / (nu - 1) as f64;
            let b = -occ.half_v + 2.0 * occ.half_v * (j as f64) / (nv - 1) as f64;
            pts.push([
                occ.center[0] + a * occ.axis_u[0] + b * occ.axis_v[0],
                occ.center[1] + a * occ.axis_u[1] + b * occ.axis_v[1],
                occ.center[2] + a * occ.axis_u[2] + b * occ.axis_v[2],
            ]);
            cols.push([0.2, 0.6, 0.3]);
        }
    }
    (pts, cols)
}
