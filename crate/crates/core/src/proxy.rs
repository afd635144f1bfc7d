//! Black-box stand-in for the target environment: the same task dynamics
//! with hidden perturbed parameters and noisy captures, exposing no
//! gradients and no hidden state (outside an explicit white-box test hook).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{self, PhysParams, TaskState};
use crate::render::{render, Observation, RenderConfig};
use crate::scene::tasks::{default_camera, offset_scene, sample_nominal_scene};
use crate::scene::{CameraPose, SceneModel, TaskId};
use crate::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProxyConfig {
    /// Hidden pose offset scale for the manipulated object (meters).
    pub perturb_scale: f64,
    /// Pixel noise sigma on captured rgb.
    pub pixel_noise: f64,
    /// Expose the white-box test hooks.
    pub white_box: bool,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self {
            perturb_scale: 0.05,
            pixel_noise: 0.01,
            white_box: false,
        }
    }
}

/// Reference scale at which the physical-parameter factors reach the full
/// log-uniform [0.8, 1.25] range and the color shift reaches +/-0.05.
const REFERENCE_SCALE: f64 = 0.05;
/// Cap on the parameter-gap multiplier so perturbed stiffness stays inside
/// the integrator's stability margin at large pose-offset scales.
const PARAM_GAP_CAP: f64 = 1.2;

pub struct ProxyEnv {
    task: TaskId,
    cfg: ProxyConfig,
    render_cfg: RenderConfig,
    hidden_scene: SceneModel,
    hidden_params: PhysParams,
    hidden_state: TaskState,
    prev_state: TaskState,
    color_shift: [f64; 3],
    noise_rng: ChaCha8Rng,
    step_count: usize,
    done: bool,
    succeeded: bool,
}

impl ProxyEnv {
    /// Fresh episode: hidden perturbations and initial state deterministic
    /// in the seed. Returns the environment and the initial observation at
    /// the task's default camera.
    pub fn reset(
        task: TaskId,
        seed: u64,
        cfg: ProxyConfig,
        render_cfg: RenderConfig,
    ) -> Result<(Self, Observation)> {
        let nominal = sample_nominal_scene(task, seed);
        let hidden_scene = offset_scene(&nominal, seed ^ 0x0ffe7, cfg.perturb_scale);
        let gap = cfg.perturb_scale / REFERENCE_SCALE;
        let param_gap = gap.min(PARAM_GAP_CAP);

        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfac_705);
        let base = PhysParams::from_scene(&nominal);
        let mut factor = |rng: &mut ChaCha8Rng| -> f64 {
            let lo = (0.8f64).ln() * param_gap;
            let hi = (1.25f64).ln() * param_gap;
            rng.gen_range(lo..=hi).exp()
        };
        let hidden_params = PhysParams {
            particle_mass: base.particle_mass * factor(&mut rng),
            k_stretch: base.k_stretch * factor(&mut rng),
            k_bend: base.k_bend * factor(&mut rng),
            damping: base.damping * factor(&mut rng),
            action_scale: base.action_scale * factor(&mut rng),
            ..base
        };
        let color_shift = [
            rng.gen_range(-0.05..=0.05) * gap.min(4.0),
            rng.gen_range(-0.05..=0.05) * gap.min(4.0),
            rng.gen_range(-0.05..=0.05) * gap.min(4.0),
        ];

        let hidden_state = TaskState::from_scene(&hidden_scene)?;
        let mut env = Self {
            task,
            cfg,
            render_cfg,
            hidden_scene,
            hidden_params,
            prev_state: hidden_state.clone(),
            hidden_state,
            color_shift,
            noise_rng: ChaCha8Rng::seed_from_u64(seed ^ 0xca0_715e),
            step_count: 0,
            done: false,
            succeeded: false,
        };
        let obs = env.capture(&default_camera(task))?;
        Ok((env, obs))
    }

    pub fn task(&self) -> TaskId {
        self.task
    }

    pub fn default_pose(&self) -> CameraPose {
        default_camera(self.task)
    }

    /// Noisy render of the hidden scene at the requested pose. The mask is
    /// ground truth; rgb gets i.i.d. Gaussian pixel noise and a per-channel
    /// shift, clamped back to [0, 1].
    pub fn capture(&mut self, pose: &CameraPose) -> Result<Observation> {
        let mut scene = self.hidden_scene.clone();
        self.hidden_state.apply_to_scene(&mut scene);
        let mut obs = render(&scene, pose, &self.render_cfg)?;
        if self.cfg.pixel_noise > 0.0 || self.color_shift.iter().any(|&s| s != 0.0) {
            let normal = Normal::new(0.0, self.cfg.pixel_noise.max(1e-300)).unwrap();
            let shape = obs.rgb.shape().to_vec();
            let (h, w) = (shape[1], shape[2]);
            let mut vals = obs.rgb.to_vec();
            for c in 0..3 {
                for p in 0..h * w {
                    let noise = if self.cfg.pixel_noise > 0.0 {
                        normal.sample(&mut self.noise_rng)
                    } else {
                        0.0
                    };
                    let v = vals[c * h * w + p] + noise + self.color_shift[c];
                    vals[c * h * w + p] = v.clamp(0.0, 1.0);
                }
            }
            obs.rgb = Tensor::new(shape, vals)?;
        }
        Ok(obs)
    }

    /// Advance the hidden state with the hidden parameters.
    pub fn step(&mut self, action: [f64; 3]) -> Result<(f64, bool, bool)> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let (next, reward, done) = physics::step(
            &self.hidden_state,
            action,
            &self.hidden_params,
            &self.hidden_scene.fixtures,
            self.step_count,
        )?;
        self.prev_state = std::mem::replace(&mut self.hidden_state, next);
        let succ = physics::success(&self.prev_state, &self.hidden_state, &self.hidden_scene.fixtures);
        self.step_count += 1;
        self.done = done;
        self.succeeded |= succ;
        Ok((reward, self.done, self.succeeded))
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn succeeded(&self) -> bool {
        self.succeeded
    }

    pub fn steps_taken(&self) -> usize {
        self.step_count
    }

    pub fn horizon(&self) -> usize {
        self.hidden_params.horizon
    }

    /// Hidden state, only under the explicit white-box flag.
    pub fn white_box_state(&self) -> Option<(&TaskState, &TaskState)> {
        self.cfg
            .white_box
            .then_some((&self.prev_state, &self.hidden_state))
    }

    /// Hidden parameters, only under the explicit white-box flag.
    pub fn white_box_params(&self) -> Option<&PhysParams> {
        self.cfg.white_box.then_some(&self.hidden_params)
    }

    /// Hidden scene, only under the explicit white-box flag.
    pub fn white_box_scene(&self) -> Option<&SceneModel> {
        self.cfg.white_box.then_some(&self.hidden_scene)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{norm3, sub3};

    fn quiet_cfg(scale: f64, noise: f64) -> ProxyConfig {
        ProxyConfig {
            perturb_scale: scale,
            pixel_noise: noise,
            white_box: false,
        }
    }

    #[test]
    fn same_seed_identical_initial_observation() {
        let (_, a) = ProxyEnv::reset(
            TaskId::PegInsertion,
            11,
            ProxyConfig::default(),
            RenderConfig::default(),
        )
        .unwrap();
        let (_, b) = ProxyEnv::reset(
            TaskId::PegInsertion,
            11,
            ProxyConfig::default(),
            RenderConfig::default(),
        )
        .unwrap();
        assert!(a
            .rgb
            .values()
            .iter()
            .zip(b.rgb.values())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn seeds_produce_distinct_hidden_offsets() {
        let mut offsets = Vec::new();
        for seed in 0..20 {
            let cfg = ProxyConfig {
                white_box: true,
                ..ProxyConfig::default()
            };
            let (env, _) = ProxyEnv::reset(TaskId::PegInsertion, seed, cfg, RenderConfig::default()).unwrap();
            let hidden = env.white_box_scene().unwrap().objects[0].pose.translation;
            let nominal = sample_nominal_scene(TaskId::PegInsertion, seed).objects[0]
                .pose
                .translation;
            offsets.push(sub3(hidden, nominal));
        }
        let mut distinct = 0;
        for (i, a) in offsets.iter().enumerate() {
            if offsets
                .iter()
                .enumerate()
                .all(|(j, b)| i == j || norm3(sub3(*a, *b)) > 1e-12)
            {
                distinct += 1;
            }
        }
        assert!(distinct >= 19, "only {distinct} distinct offsets");
    }

    #[test]
    fn zero_perturbation_capture_matches_plain_render() {
        let (mut env, _) = ProxyEnv::reset(
            TaskId::NeedleThreading,
            5,
            quiet_cfg(0.0, 0.0),
            RenderConfig::default(),
        )
        .unwrap();
        let pose = default_camera(TaskId::NeedleThreading);
        let captured = env.capture(&pose).unwrap();
        let clean = render(
            &sample_nominal_scene(TaskId::NeedleThreading, 5),
            &pose,
            &RenderConfig::default(),
        )
        .unwrap();
        assert!(captured
            .rgb
            .values()
            .iter()
            .zip(clean.rgb.values())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(captured
            .depth
            .values()
            .iter()
            .zip(clean.depth.values())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn noiseless_captures_repeat_exactly() {
        let (mut env, _) = ProxyEnv::reset(
            TaskId::PegInsertion,
            3,
            quiet_cfg(0.05, 0.0),
            RenderConfig::default(),
        )
        .unwrap();
        let pose = default_camera(TaskId::PegInsertion);
        let a = env.capture(&pose).unwrap();
        let b = env.capture(&pose).unwrap();
        assert!(a
            .rgb
            .values()
            .iter()
            .zip(b.rgb.values())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn pixel_noise_std_is_calibrated() {
        let sigma = 0.01;
        let (mut env, _) = ProxyEnv::reset(
            TaskId::PegInsertion,
            7,
            ProxyConfig {
                perturb_scale: 0.0,
                pixel_noise: sigma,
                white_box: false,
            },
            RenderConfig::default(),
        )
        .unwrap();
        let pose = default_camera(TaskId::PegInsertion);
        let clean = render(
            &sample_nominal_scene(TaskId::PegInsertion, 7),
            &pose,
            &RenderConfig::default(),
        )
        .unwrap();
        // gather noise samples away from the clamp boundaries
        let mut diffs = Vec::new();
        for _ in 0..8 {
            let noisy = env.capture(&pose).unwrap();
            for (n, c) in noisy.rgb.values().iter().zip(clean.rgb.values()) {
                if *c > 0.05 && *c < 0.95 {
                    diffs.push(n - c);
                }
            }
        }
        assert!(diffs.len() > 1000, "not enough unclamped samples");
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / diffs.len() as f64;
        let std = var.sqrt();
        assert!(
            (std - sigma).abs() / sigma < 0.2,
            "sample std {std} vs sigma {sigma}"
        );
    }

    #[test]
    fn mask_is_ground_truth_under_noise() {
        let (mut env, _) = ProxyEnv::reset(
            TaskId::NeedleThreading,
            9,
            quiet_cfg(0.0, 0.02),
            RenderConfig::default(),
        )
        .unwrap();
        let pose = default_camera(TaskId::NeedleThreading);
        let noisy = env.capture(&pose).unwrap();
        let clean = render(
            &sample_nominal_scene(TaskId::NeedleThreading, 9),
            &pose,
            &RenderConfig::default(),
        )
        .unwrap();
        assert!(noisy
            .mask
            .values()
            .iter()
            .zip(clean.mask.values())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn zero_action_keeps_peg_still_and_not_done() {
        let (mut env, _) = ProxyEnv::reset(
            TaskId::PegInsertion,
            2,
            ProxyConfig {
                white_box: true,
                ..ProxyConfig::default()
            },
            RenderConfig::default(),
        )
        .unwrap();
        let before = match env.white_box_state().unwrap().1 {
            TaskState::Peg(p) => *p,
            _ => panic!(),
        };
        let (_, done, success) = env.step([0.0; 3]).unwrap();
        assert!(!done && !success);
        let after = match env.white_box_state().unwrap().1 {
            TaskState::Peg(p) => *p,
            _ => panic!(),
        };
        assert_eq!(before, after);
    }

    #[test]
    fn horizon_exhaustion_sets_done_without_success() {
        let (mut env, _) = ProxyEnv::reset(
            TaskId::PegInsertion,
            4,
            ProxyConfig::default(),
            RenderConfig::default(),
        )
        .unwrap();
        let mut done = false;
        let mut success = true;
        for _ in 0..env.horizon() {
            let (_, d, s) = env.step([0.0; 3]).unwrap();
            done = d;
            success = s;
        }
        assert!(done && !success);
        assert!(matches!(env.step([0.0; 3]), Err(Error::EpisodeDone)));
    }

    #[test]
    fn reward_matches_physics_recomputation() {
        let cfg = ProxyConfig {
            white_box: true,
            ..ProxyConfig::default()
        };
        let (mut env, _) =
            ProxyEnv::reset(TaskId::NeedleThreading, 6, cfg, RenderConfig::default()).unwrap();
        let params = *env.white_box_params().unwrap();
        let fixtures = env.white_box_scene().unwrap().fixtures.clone();
        let before = env.white_box_state().unwrap().1.clone();
        let action = [0.4, -0.2, 0.1];
        let (reward, _, _) = env.step(action).unwrap();
        let (_, expect, _) = physics::step(&before, action, &params, &fixtures, 0).unwrap();
        assert_eq!(reward.to_bits(), expect.to_bits());
    }

    #[test]
    fn production_surface_hides_state() {
        let (env, _) = ProxyEnv::reset(
            TaskId::PegInsertion,
            1,
            ProxyConfig::default(),
            RenderConfig::default(),
        )
        .unwrap();
        assert!(env.white_box_state().is_none());
        assert!(env.white_box_params().is_none());
        assert!(env.white_box_scene().is_none());
    }

    #[test]
    fn full_determinism_across_resets() {
        let run = || {
            let (mut env, obs0) = ProxyEnv::reset(
                TaskId::NeedleThreading,
                42,
                ProxyConfig::default(),
                RenderConfig::default(),
            )
            .unwrap();
            let mut trace = vec![obs0.rgb.values().iter().sum::<f64>()];
            let pose = env.default_pose();
            for t in 0..5 {
                let (r, _, _) = env.step([0.1 * t as f64, -0.05, 0.02]).unwrap();
                trace.push(r);
                trace.push(env.capture(&pose).unwrap().rgb.values().iter().sum::<f64>());
            }
            trace
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
