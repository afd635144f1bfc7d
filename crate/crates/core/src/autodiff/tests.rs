use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops;
use super::{grad_check, OpKind, Tape, Tensor};
use crate::error::Error;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape, v).unwrap()
}

#[test]
fn add_elementwise() {
    let mut t = Tape::no_grad();
    let a = Tensor::vector(vec![1.0, 2.0]).unwrap();
    let b = Tensor::vector(vec![3.0, 4.0]).unwrap();
    let c = ops::add(&mut t, &a, &b).unwrap();
    assert_eq!(c.values(), &[4.0, 6.0]);
}

#[test]
fn matmul_identity() {
    let mut t = Tape::no_grad();
    let eye = Tensor::new(vec![3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = rand_tensor(&mut rng, vec![3, 3], -1.0, 1.0);
    let c = ops::matmul(&mut t, &eye, &a).unwrap();
    assert_eq!(c.values(), a.values());
}

#[test]
fn tanh_at_zero() {
    let mut t = Tape::no_grad();
    let x = Tensor::scalar(0.0);
    let y = ops::tanh(&mut t, &x).unwrap();
    assert_eq!(y.item(), 0.0);
}

#[test]
fn backward_square() {
    let mut t = Tape::new();
    let x = t.leaf(&Tensor::scalar(3.0));
    let y = ops::mul(&mut t, &x, &x).unwrap();
    let grads = t.backward(&y).unwrap();
    assert_eq!(grads.grad(&x).item(), 6.0);
}

#[test]
fn backward_masked_sum_is_other_factor() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a0 = rand_tensor(&mut rng, vec![4, 5], -2.0, 2.0);
    let b = rand_tensor(&mut rng, vec![4, 5], -2.0, 2.0);
    let mut t = Tape::new();
    let a = t.leaf(&a0);
    let p = ops::mul(&mut t, &a, &b).unwrap();
    let s = ops::sum(&mut t, &p).unwrap();
    let grads = t.backward(&s).unwrap();
    assert_eq!(grads.grad(&a).values(), b.values());
}

#[test]
fn three_layer_graph_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let w1 = rand_tensor(&mut rng, vec![4, 4], -0.8, 0.8);
    let w2 = rand_tensor(&mut rng, vec![4, 4], -0.8, 0.8);
    let w3 = rand_tensor(&mut rng, vec![1, 4], -0.8, 0.8);
    let x0 = rand_tensor(&mut rng, vec![4, 1], -1.0, 1.0);

    let f = |t: &mut Tape<f64>, x: &Tensor<f64>| {
        let h1 = ops::matmul(t, &w1, x)?;
        let h1 = ops::tanh(t, &h1)?;
        let h2 = ops::matmul(t, &w2, &h1)?;
        let h2 = ops::tanh(t, &h2)?;
        let y = ops::matmul(t, &w3, &h2)?;
        ops::sum(t, &y)
    };
    let report = grad_check(f, &x0, 1e-5, 1e-5).unwrap();
    assert!(report.pass, "max rel error {}", report.max_rel_error);

    // Same graph, differentiating the first-layer weights instead.
    let x = x0.clone();
    let g = |t: &mut Tape<f64>, w: &Tensor<f64>| {
        let h1 = ops::matmul(t, w, &x)?;
        let h1 = ops::tanh(t, &h1)?;
        let h2 = ops::matmul(t, &w2, &h1)?;
        let h2 = ops::tanh(t, &h2)?;
        let y = ops::matmul(t, &w3, &h2)?;
        ops::sum(t, &y)
    };
    let report = grad_check(g, &w1, 1e-5, 1e-5).unwrap();
    assert!(report.pass, "max rel error {}", report.max_rel_error);
}

#[test]
fn grad_check_quadratic_passes() {
    let f = |t: &mut Tape<f64>, x: &Tensor<f64>| {
        let s = ops::square(t, x)?;
        ops::sum(t, &s)
    };
    let report = grad_check(f, &Tensor::scalar(2.0), 1e-5, 1e-6).unwrap();
    assert!(report.pass);
}

#[test]
fn grad_check_doubled_gradient_fails() {
    // Forward value x^2 off-tape, but 2 x^2 when recorded: the analytic
    // gradient comes out doubled and the check must flag it.
    let f = |t: &mut Tape<f64>, x: &Tensor<f64>| {
        let s = ops::square(t, x)?;
        if t.is_recording() {
            let s2 = ops::add(t, &s, &s)?;
            ops::sum(t, &s2)
        } else {
            ops::sum(t, &s)
        }
    };
    let report = grad_check(f, &Tensor::scalar(1.5), 1e-5, 1e-3).unwrap();
    assert!(!report.pass);
}

#[test]
fn gradient_linearity() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x0 = rand_tensor(&mut rng, vec![6], -1.0, 1.0);
    let (a, b) = (2.5, -0.75);

    let grad_of = |build: &dyn Fn(&mut Tape<f64>, &Tensor<f64>) -> Tensor<f64>| -> Vec<f64> {
        let mut t = Tape::new();
        let x = t.leaf(&x0);
        let y = build(&mut t, &x);
        t.backward(&y).unwrap().grad(&x).to_vec()
    };

    let f = |t: &mut Tape<f64>, x: &Tensor<f64>| {
        let s = ops::square(t, x).unwrap();
        ops::sum(t, &s).unwrap()
    };
    let g = |t: &mut Tape<f64>, x: &Tensor<f64>| {
        let s = ops::tanh(t, x).unwrap();
        ops::sum(t, &s).unwrap()
    };
    let combined = |t: &mut Tape<f64>, x: &Tensor<f64>| {
        let fa = f(t, x);
        let fa = ops::scale(t, &fa, a).unwrap();
        let gb = g(t, x);
        let gb = ops::scale(t, &gb, b).unwrap();
        ops::add(t, &fa, &gb).unwrap()
    };

    let gf = grad_of(&f);
    let gg = grad_of(&g);
    let gc = grad_of(&combined);
    for i in 0..x0.numel() {
        let expect = a * gf[i] + b * gg[i];
        assert!((gc[i] - expect).abs() <= 1e-12, "coord {i}: {} vs {expect}", gc[i]);
    }
}

#[test]
fn forward_determinism_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = rand_tensor(&mut rng, vec![8, 8], -3.0, 3.0);
    let b = rand_tensor(&mut rng, vec![8, 8], 0.1, 3.0);
    let run = || {
        let mut t = Tape::no_grad();
        let m = ops::matmul(&mut t, &a, &b).unwrap();
        let m = ops::scale(&mut t, &m, 0.1).unwrap();
        let e = ops::exp(&mut t, &m).unwrap();
        let l = ops::log(&mut t, &b).unwrap();
        let s = ops::sub(&mut t, &e, &l).unwrap();
        ops::mean(&mut t, &s).unwrap().item()
    };
    assert_eq!(run().to_bits(), run().to_bits());
}

/// Every catalog op passes a finite-difference check at 10 random points.
/// Points are sampled away from the kinks of relu/clamp and inside the
/// domains of log/sqrt.
#[test]
fn op_catalog_grad_checks() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    type BoxedOp = Box<dyn Fn(&mut Tape<f64>, &Tensor<f64>) -> crate::error::Result<Tensor<f64>>>;

    for trial in 0..10 {
        let other = rand_tensor(&mut rng, vec![2, 3], -2.0, 2.0);
        let mat = rand_tensor(&mut rng, vec![3, 4], -2.0, 2.0);
        let cases: Vec<(&str, BoxedOp, Tensor<f64>)> = vec![
            (
                "add",
                {
                    let o = other.clone();
                    Box::new(move |t, x| {
                        let y = ops::add(t, x, &o)?;
                        ops::sum(t, &y)
                    })
                },
                rand_tensor(&mut rng, vec![2, 3], -2.0, 2.0),
            ),
            (
                "sub",
                {
                    let o = other.clone();
                    Box::new(move |t, x| {
                        let y = ops::sub(t, &o, x)?;
                        ops::sum(t, &y)
                    })
                },
                rand_tensor(&mut rng, vec![2, 3], -2.0, 2.0),
            ),
            (
                "elementwise-mul",
                {
                    let o = other.clone();
                    Box::new(move |t, x| {
                        let y = ops::mul(t, x, &o)?;
                        ops::sum(t, &y)
                    })
                },
                rand_tensor(&mut rng, vec![2, 3], -2.0, 2.0),
            ),
            (
                "matmul",
                {
                    let m = mat.clone();
                    Box::new(move |t, x| {
                        let y = ops::matmul(t, x, &m)?;
                        let y = ops::square(t, &y)?;
                        ops::sum(t, &y)
                    })
                },
                rand_tensor(&mut rng, vec![2, 3], -2.0, 2.0),
            ),
            (
                "tanh",
                Box::new(|t, x| {
                    let y = ops::tanh(t, x)?;
                    ops::sum(t, &y)
                }),
                rand_tensor(&mut rng, vec![5], -2.0, 2.0),
            ),
            (
                "relu",
                Box::new(|t, x| {
                    let y = ops::relu(t, x)?;
                    ops::sum(t, &y)
                }),
                {
                    // keep samples off the kink at zero
                    let v: Vec<f64> = (0..5)
                        .map(|_| {
                            let m = rng.gen_range(0.2..2.0);
                            if rng.gen_bool(0.5) {
                                m
                            } else {
                                -m
                            }
                        })
                        .collect();
                    Tensor::vector(v).unwrap()
                },
            ),
            (
                "exp",
                Box::new(|t, x| {
                    let y = ops::exp(t, x)?;
                    ops::sum(t, &y)
                }),
                rand_tensor(&mut rng, vec![5], -2.0, 2.0),
            ),
            (
                "log",
                Box::new(|t, x| {
                    let y = ops::log(t, x)?;
                    ops::sum(t, &y)
                }),
                rand_tensor(&mut rng, vec![5], 0.2, 3.0),
            ),
            (
                "square",
                Box::new(|t, x| {
                    let y = ops::square(t, x)?;
                    ops::sum(t, &y)
                }),
                rand_tensor(&mut rng, vec![5], -2.0, 2.0),
            ),
            (
                "sqrt",
                Box::new(|t, x| {
                    let y = ops::sqrt(t, x)?;
                    ops::sum(t, &y)
                }),
                rand_tensor(&mut rng, vec![5], 0.2, 3.0),
            ),
            (
                "sum",
                Box::new(|t, x| ops::sum(t, x)),
                rand_tensor(&mut rng, vec![7], -2.0, 2.0),
            ),
            (
                "mean",
                Box::new(|t, x| ops::mean(t, x)),
                rand_tensor(&mut rng, vec![7], -2.0, 2.0),
            ),
            (
                "concat",
                {
                    let o = other.clone();
                    Box::new(move |t, x| {
                        let y = ops::concat(t, &[x, &o], vec![12])?;
                        let y = ops::square(t, &y)?;
                        ops::sum(t, &y)
                    })
                },
                rand_tensor(&mut rng, vec![6], -2.0, 2.0),
            ),
            (
                "slice",
                Box::new(|t, x| {
                    let y = ops::slice(t, x, 2, 6, vec![2, 2])?;
                    let y = ops::square(t, &y)?;
                    ops::sum(t, &y)
                }),
                rand_tensor(&mut rng, vec![8], -2.0, 2.0),
            ),
            (
                "scalar-broadcast",
                Box::new(|t, x| {
                    let y = ops::scalar_broadcast(t, x, vec![3, 3])?;
                    let y = ops::square(t, &y)?;
                    ops::sum(t, &y)
                }),
                rand_tensor(&mut rng, vec![1], -2.0, 2.0),
            ),
            (
                "clamp",
                Box::new(|t, x| {
                    let y = ops::clamp(t, x, -1.0, 1.0)?;
                    ops::sum(t, &y)
                }),
                {
                    // keep samples off the clamp corners at +/-1
                    let v: Vec<f64> = (0..5)
                        .map(|_| {
                            let inside = rng.gen_bool(0.5);
                            let m = if inside {
                                rng.gen_range(-0.9..0.9)
                            } else {
                                rng.gen_range(1.1..2.0)
                            };
                            if rng.gen_bool(0.5) {
                                m
                            } else {
                                -m
                            }
                        })
                        .collect();
                    Tensor::vector(v).unwrap()
                },
            ),
        ];

        for (name, f, point) in cases {
            let report = grad_check(f, &point, 1e-6, 1e-5).unwrap();
            assert!(
                report.pass,
                "op {name} trial {trial}: max rel error {}",
                report.max_rel_error
            );
        }
    }
}

#[test]
fn shape_mismatch_names_kind_and_shapes() {
    let mut t = Tape::no_grad();
    let a = Tensor::vector(vec![1.0, 2.0]).unwrap();
    let b = Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap();
    let err = ops::add(&mut t, &a, &b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("add") && msg.contains("[2]") && msg.contains("[3]"), "{msg}");
}

#[test]
fn log_sqrt_domain_errors() {
    let mut t = Tape::no_grad();
    let neg = Tensor::vector(vec![-1.0]).unwrap();
    assert!(matches!(
        ops::log(&mut t, &neg),
        Err(Error::DomainViolation { op: "log" })
    ));
    assert!(matches!(
        ops::sqrt(&mut t, &neg),
        Err(Error::DomainViolation { op: "sqrt" })
    ));
}

#[test]
fn backward_rejects_non_scalar() {
    let mut t = Tape::new();
    let x = t.leaf(&Tensor::vector(vec![1.0, 2.0]).unwrap());
    let y = ops::square(&mut t, &x).unwrap();
    assert!(matches!(t.backward(&y), Err(Error::NonScalarOutput(_))));
}

#[test]
fn tensor_rejects_non_finite() {
    assert!(matches!(
        Tensor::new(vec![2], vec![1.0, f64::NAN]),
        Err(Error::NonFinite)
    ));
    assert!(matches!(
        Tensor::new(vec![1], vec![f64::INFINITY]),
        Err(Error::NonFinite)
    ));
}

#[test]
fn unused_leaf_reports_zero_gradient() {
    let mut t = Tape::new();
    let x = t.leaf(&Tensor::scalar(2.0));
    let unused = t.leaf(&Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap());
    let y = ops::square(&mut t, &x).unwrap();
    let grads = t.backward(&y).unwrap();
    assert_eq!(grads.grad(&unused).values(), &[0.0, 0.0, 0.0]);
}

#[test]
fn generic_scalar_f32_smoke() {
    let mut t: Tape<f32> = Tape::new();
    let x = t.leaf(&Tensor::scalar(2.0f32));
    let y = ops::mul(&mut t, &x, &x).unwrap();
    let grads = t.backward(&y).unwrap();
    assert!((grads.grad(&x).item() - 4.0).abs() < 1e-6);
}

#[test]
fn clamp_boundary_gradient_passes_through() {
    // inside-value convention at the exact boundary
    let mut t = Tape::new();
    let x = t.leaf(&Tensor::vector(vec![-1.0, 0.0, 1.0, 2.0]).unwrap());
    let y = ops::clamp(&mut t, &x, -1.0, 1.0).unwrap();
    let s = ops::sum(&mut t, &y).unwrap();
    let g = t.backward(&s).unwrap().grad(&x);
    assert_eq!(g.values(), &[1.0, 1.0, 1.0, 0.0]);
}

#[test]
fn apply_direct_kind() {
    let mut t = Tape::no_grad();
    let a = Tensor::vector(vec![2.0]).unwrap();
    let y = t.apply(OpKind::Square, &[&a]).unwrap();
    assert_eq!(y.item(), 4.0);
}
