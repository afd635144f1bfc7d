use super::*;
use crate::render::render;
use crate::scene::tasks::{default_camera, ground_truth_scene, perturb_scene};
use crate::scene::TaskId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|_| {
            [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ]
        })
        .collect()
}

/// Brute-force EMD by enumerating every permutation (n <= 6).
fn emd_brute_force(x: &[Vec3], y: &[Vec3]) -> f64 {
    fn go(x: &[Vec3], y: &[Vec3], row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        if row == x.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..y.len() {
            if !used[j] {
                used[j] = true;
                let d = crate::geom::norm3(crate::geom::sub3(x[row], y[j]));
                go(x, y, row + 1, used, acc + d, best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(x, y, 0, &mut vec![false; y.len()], 0.0, &mut best);
    best / x.len() as f64
}

#[test]
fn masked_l1_of_identical_observations_is_zero() {
    let scene = ground_truth_scene(TaskId::PegInsertion);
    let pose = default_camera(TaskId::PegInsertion);
    let obs = render(&scene, &pose, &RenderConfig::default()).unwrap();
    assert_eq!(masked_l1(&obs, &obs).unwrap(), 0.0);
}

#[test]
fn masked_l1_mean_convention() {
    let pose = default_camera(TaskId::PegInsertion);
    let mk = |level: f64| Observation {
        rgb: Tensor::full(vec![3, 32, 32], level),
        depth: Tensor::zeros(vec![32, 32]),
        mask: Tensor::full(vec![32, 32], 1.0),
        cloud: Vec::new(),
        pose,
    };
    let a = mk(0.75);
    let b = mk(0.25);
    assert!((masked_l1(&a, &b).unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn masked_l1_matches_direct_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let pose = default_camera(TaskId::PegInsertion);
    let mk = |rng: &mut ChaCha8Rng| {
        let rgb: Vec<f64> = (0..3 * 32 * 32).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mask: Vec<f64> = (0..32 * 32).map(|_| rng.gen_range(0.0..1.0)).collect();
        Observation {
            rgb: Tensor::new(vec![3, 32, 32], rgb).unwrap(),
            depth: Tensor::zeros(vec![32, 32]),
            mask: Tensor::new(vec![32, 32], mask).unwrap(),
            cloud: Vec::new(),
            pose,
        }
    };
    let a = mk(&mut rng);
    let b = mk(&mut rng);
    let got = masked_l1(&a, &b).unwrap();
    // independent scalar recomputation
    let mut acc = 0.0;
    for c in 0..3 {
        for p in 0..1024 {
            let xa = a.rgb.values()[c * 1024 + p] * a.mask.values()[p];
            let xb = b.rgb.values()[c * 1024 + p] * b.mask.values()[p];
            acc += (xa - xb).abs();
        }
    }
    acc /= 3.0 * 1024.0;
    assert!((got - acc).abs() < 1e-12);
}

#[test]
fn masked_l1_rejects_resolution_mismatch() {
    let pose = default_camera(TaskId::PegInsertion);
    let a = Observation {
        rgb: Tensor::zeros(vec![3, 32, 32]),
        depth: Tensor::zeros(vec![32, 32]),
        mask: Tensor::zeros(vec![32, 32]),
        cloud: Vec::new(),
        pose,
    };
    let b = Observation {
        rgb: Tensor::zeros(vec![3, 16, 16]),
        depth: Tensor::zeros(vec![16, 16]),
        mask: Tensor::zeros(vec![16, 16]),
        cloud: Vec::new(),
        pose,
    };
    assert!(masked_l1(&a, &b).is_err());
}

#[test]
fn emd_identity_and_single_pair() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_cloud(&mut rng, 12);
    assert!(emd(&x, &x).unwrap() <= 1e-12);
    let a = vec![[0.0, 0.0, 0.0]];
    let b = vec![[1.0, 0.0, 0.0]];
    assert_eq!(emd(&a, &b).unwrap(), 1.0);
}

#[test]
fn emd_three_point_permutation_oracle() {
    let x = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
    let y = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]];
    let got = emd(&x, &y).unwrap();
    let want = emd_brute_force(&x, &y);
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

#[test]
fn emd_random_pairs_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for _ in 0..30 {
        let n = rng.gen_range(1..=6);
        let x = rand_cloud(&mut rng, n);
        let y = rand_cloud(&mut rng, n);
        let got = emd(&x, &y).unwrap();
        let want = emd_brute_force(&x, &y);
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}

#[test]
fn emd_symmetry_nonnegativity_and_upper_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..20 {
        let n = rng.gen_range(2..=24);
        let x = rand_cloud(&mut rng, n);
        let y = rand_cloud(&mut rng, n);
        let xy = emd(&x, &y).unwrap();
        let yx = emd(&y, &x).unwrap();
        assert_eq!(xy.to_bits(), yx.to_bits(), "symmetry");
        assert!(xy >= 0.0);
        // optimality: never worse than the identity pairing
        let identity: f64 = x
            .iter()
            .zip(&y)
            .map(|(a, b)| crate::geom::norm3(crate::geom::sub3(*a, *b)))
            .sum::<f64>()
            / n as f64;
        assert!(xy <= identity + 1e-12);
    }
}

#[test]
fn emd_zero_iff_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let x = rand_cloud(&mut rng, 10);
    let mut y = x.clone();
    y.rotate_left(3);
    assert!(emd(&x, &y).unwrap() <= 1e-12);
    y[0][0] += 0.01;
    assert!(emd(&x, &y).unwrap() > 1e-4);
}

#[test]
fn emd_cardinality_mismatch_rejected() {
    let x = vec![[0.0; 3]; 3];
    let y = vec![[0.0; 3]; 4];
    assert!(matches!(emd(&x, &y), Err(Error::CardinalityMismatch(3, 4))));
}

#[test]
fn model_loss_reduces_to_l1_when_lambda2_zero() {
    let scene = ground_truth_scene(TaskId::PegInsertion);
    let shifted = {
        let mut s = scene.clone();
        s.objects[0].pose.translation[1] += 0.01;
        s
    };
    let pose = default_camera(TaskId::PegInsertion);
    let rc = RenderConfig::default();
    let a = render(&scene, &pose, &rc).unwrap();
    let b = render(&shifted, &pose, &rc).unwrap();
    let cfg = Real2SimConfig {
        lambda2: 0.0,
        ..Real2SimConfig::default()
    };
    let l = model_loss(&a, &b, &cfg).unwrap();
    assert!((l - masked_l1(&a, &b).unwrap()).abs() < 1e-15);
}

#[test]
fn model_loss_linear_in_weights() {
    let scene = ground_truth_scene(TaskId::NeedleThreading);
    let shifted = perturb_scene(&scene, 4, 0.01);
    let pose = default_camera(TaskId::NeedleThreading);
    let rc = RenderConfig::default();
    let a = render(&scene, &pose, &rc).unwrap();
    let b = render(&shifted, &pose, &rc).unwrap();
    let base = Real2SimConfig::default();
    let doubled = Real2SimConfig {
        lambda1: 2.0,
        lambda2: 2.0,
        ..base
    };
    let l1 = model_loss(&a, &b, &base).unwrap();
    let l2 = model_loss(&a, &b, &doubled).unwrap();
    assert!((l2 - 2.0 * l1).abs() < 1e-12, "{l2} vs {}", 2.0 * l1);
}

#[test]
fn both_weights_zero_rejected() {
    let cfg = Real2SimConfig {
        lambda1: 0.0,
        lambda2: 0.0,
        ..Real2SimConfig::default()
    };
    assert!(cfg.validate().is_err());
}

#[test]
fn update_model_fixed_point_stays_at_zero() {
    let scene = ground_truth_scene(TaskId::PegInsertion);
    let pose = default_camera(TaskId::PegInsertion);
    let rc = RenderConfig::default();
    let obs = render(&scene, &pose, &rc).unwrap();
    let cfg = Real2SimConfig {
        steps: 5,
        ..Real2SimConfig::default()
    };
    let (_, trace) = update_model(&scene, &obs, &pose, &cfg, &rc).unwrap();
    assert_eq!(trace.len(), 5);
    assert!(trace.iter().all(|&l| l < 1e-8), "{trace:?}");
}

#[test]
fn update_model_recovers_small_translation() {
    let scene = ground_truth_scene(TaskId::PegInsertion);
    let target = {
        let mut s = scene.clone();
        s.objects[0].pose.translation[0] += 0.02;
        s.objects[0].pose.translation[1] -= 0.015;
        s
    };
    let pose = default_camera(TaskId::PegInsertion);
    let rc = RenderConfig::default();
    let obs_real = render(&target, &pose, &rc).unwrap();
    let cfg = Real2SimConfig {
        steps: 100,
        ..Real2SimConfig::default()
    };
    let (updated, trace) = update_model(&scene, &obs_real, &pose, &cfg, &rc).unwrap();
    let err = crate::geom::norm3(crate::geom::sub3(
        updated.objects[0].pose.translation,
        target.objects[0].pose.translation,
    ));
    assert!(err < 0.01, "translation error {err}, trace end {:?}", trace.last());
    assert!(trace.last().unwrap() <= &trace[0]);
}

#[test]
fn update_model_reduces_rope_jitter_loss() {
    let scene = ground_truth_scene(TaskId::NeedleThreading);
    let jittered = perturb_scene(&scene, 6, 0.02);
    let pose = default_camera(TaskId::NeedleThreading);
    let rc = RenderConfig::default();
    let obs_real = render(&scene, &pose, &rc).unwrap();
    let cfg = Real2SimConfig {
        steps: 40,
        ..Real2SimConfig::default()
    };
    let (_, trace) = update_model(&jittered, &obs_real, &pose, &cfg, &rc).unwrap();
    let initial = trace[0];
    let fin = *trace.last().unwrap();
    assert!(fin <= 0.75 * initial, "loss {initial} -> {fin}");
}

#[test]
fn update_trace_never_spikes_past_running_min() {
    let scene = ground_truth_scene(TaskId::PegInsertion);
    let target = perturb_scene(&scene, 8, 0.02);
    let pose = default_camera(TaskId::PegInsertion);
    let rc = RenderConfig::default();
    let obs_real = render(&target, &pose, &rc).unwrap();
    let cfg = Real2SimConfig {
        steps: 60,
        ..Real2SimConfig::default()
    };
    let (_, trace) = update_model(&scene, &obs_real, &pose, &cfg, &rc).unwrap();
    let mut running_min = trace[0];
    for (i, &l) in trace.iter().enumerate() {
        assert!(
            l <= running_min * 1.1 + 1e-12,
            "step {i}: {l} vs running min {running_min}"
        );
        running_min = running_min.min(l);
    }
    assert!(trace.last().unwrap() <= &trace[0]);
}
