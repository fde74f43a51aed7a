use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn random(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn positive(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(0.1..1.0)).collect()).unwrap()
}

#[test]
fn leaky_relu_definition() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![-1.0, 2.0]).unwrap()).unwrap();
    let y = tape.leaky_relu(x, 0.2).unwrap();
    assert_eq!(tape.value(y).data(), &[-0.2, 2.0]);
}

#[test]
fn softmax_of_constant_row() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::matrix(1, 8, vec![3.0; 8]).unwrap()).unwrap();
    let y = tape.softmax(x).unwrap();
    assert_eq!(tape.value(y).data(), &[0.125; 8]);
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = random(&mut rng, vec![4, 5]);
    let b = random(&mut rng, vec![5, 3]);
    let mut tape = Tape::new();
    let (va, vb) = (tape.leaf(a.clone()).unwrap(), tape.leaf(b.clone()).unwrap());
    let c = tape.matmul(va, vb).unwrap();
    for i in 0..4 {
        for j in 0..3 {
            let mut s = 0.0;
            for k in 0..5 {
                s += a.data()[i * 5 + k] * b.data()[k * 3 + j];
            }
            assert!((tape.value(c).data()[i * 3 + j] - s).abs() < 1e-14);
        }
    }
}

#[test]
fn shape_mismatch_is_reported() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::zeros(vec![2, 3])).unwrap();
    let b = tape.leaf(Tensor::zeros(vec![2, 3])).unwrap();
    assert!(matches!(tape.matmul(a, b), Err(Error::InvalidShape(_))));
    let c = tape.leaf(Tensor::zeros(vec![3])).unwrap();
    assert!(matches!(tape.add(a, c), Err(Error::InvalidShape(_))));
}

#[test]
fn non_finite_forward_is_rejected() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::vector(vec![1e300]).unwrap()).unwrap();
    assert!(matches!(tape.mul(a, a), Err(Error::Numeric(_))));
    assert!(Tensor::vector(vec![f64::NAN]).is_err());
}

#[test]
fn simple_backward_cases() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0, -3.0]).unwrap().with_grad()).unwrap();
    let s = tape.sum(x).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);

    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap().with_grad()).unwrap();
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn backward_errors() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap().with_grad()).unwrap();
    assert!(matches!(tape.backward(x), Err(Error::InvalidInput(_))));
    let s = tape.sum(x).unwrap();
    tape.backward(s).unwrap();
    assert!(matches!(tape.backward(s), Err(Error::TapeConsumed)));
    assert!(matches!(tape.sum(x), Err(Error::TapeConsumed)));

    let mut tape = Tape::new();
    let c = tape.constant(Tensor::vector(vec![1.0]).unwrap()).unwrap();
    let s = tape.sum(c).unwrap();
    assert!(matches!(tape.backward(s), Err(Error::InvalidInput(_))));
}

// Each differentiable op, reduced to a scalar through a fixed random
// projection, against central differences.
#[test]
fn every_op_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let h = 1e-5;
    let tol = 1e-4;

    type Builder = Box<dyn Fn(&mut Tape, &[Var]) -> crate::Result<Var>>;
    let project = |tape: &mut Tape, v: Var, w: &Tensor| -> crate::Result<Var> {
        let w = tape.constant(w.clone().reshaped(tape.shape(v).to_vec())?)?;
        let p = tape.mul(v, w)?;
        tape.sum(p)
    };

    let w12 = random(&mut rng, vec![12]);
    let w9 = random(&mut rng, vec![9]);
    let cases: Vec<(&str, Vec<Tensor>, Builder)> = vec![
        ("matmul", vec![random(&mut rng, vec![3, 4]), random(&mut rng, vec![4, 3])], {
            let w = w9.clone();
            Box::new(move |t, v| {
                let y = t.matmul(v[0], v[1])?;
                project(t, y, &w)
            })
        }),
        ("add_sub_mul_scale", vec![random(&mut rng, vec![12]), random(&mut rng, vec![12])], {
            let w = w12.clone();
            Box::new(move |t, v| {
                let a = t.add(v[0], v[1])?;
                let b = t.sub(a, v[1])?;
                let c = t.mul(b, v[1])?;
                let d = t.scale(c, -1.7)?;
                project(t, d, &w)
            })
        }),
        ("add_bias_leaky", vec![random(&mut rng, vec![4, 3]), random(&mut rng, vec![3])], {
            let w = w12.clone();
            Box::new(move |t, v| {
                let y = t.add_bias(v[0], v[1])?;
                let z = t.leaky_relu(y, 0.2)?;
                project(t, z, &w)
            })
        }),
        ("softmax", vec![random(&mut rng, vec![3, 4])], {
            let w = w12.clone();
            Box::new(move |t, v| {
                let y = t.softmax(v[0])?;
                project(t, y, &w)
            })
        }),
        ("log_row_normalize", vec![positive(&mut rng, vec![4, 3])], {
            let w = w12.clone();
            Box::new(move |t, v| {
                let p = t.row_normalize(v[0])?;
                let y = t.log_clamped(p, 1e-12)?;
                project(t, y, &w)
            })
        }),
        ("sum_mean_axis", vec![random(&mut rng, vec![3, 4])], Box::new(|t, v| {
            let a = t.sum_axis(v[0], 0)?;
            let b = t.mean_axis(v[0], 1)?;
            let aa = t.mul(a, a)?;
            let bb = t.mul(b, b)?;
            let s1 = t.sum(aa)?;
            let s2 = t.mean(bb)?;
            t.add(s1, s2)
        })),
        ("gather_concat_reshape", vec![random(&mut rng, vec![4, 3])], {
            let w = random(&mut rng, vec![30]);
            Box::new(move |t, v| {
                let g = t.gather(v[0], &[3, 0, 0, 2])?;
                let c0 = t.concat(&[g, v[0]], 0)?;
                let r = t.reshape(c0, vec![8, 3])?;
                let c1 = t.concat(&[r, r], 1)?;
                let sel = t.gather(c1, &[0, 5, 7, 1, 1])?;
                project(t, sel, &w)
            })
        }),
        ("interpolate", vec![random(&mut rng, vec![3, 3])], {
            let w = w12.clone();
            let pairs = vec![
                Lerp { from: 0, to: 1, t: 0.25 },
                Lerp { from: 1, to: 2, t: 0.5 },
                Lerp { from: 2, to: 2, t: 0.0 },
                Lerp { from: 0, to: 2, t: 0.9 },
            ];
            Box::new(move |t, v| {
                let y = t.interpolate(v[0], &pairs)?;
                project(t, y, &w)
            })
        }),
        ("pair_distances", vec![random(&mut rng, vec![4, 3]), random(&mut rng, vec![3, 3])], {
            let w = random(&mut rng, vec![5]);
            Box::new(move |t, v| {
                let d = t.pair_distances(v[0], v[1], &[(0, 0), (1, 2), (3, 1), (2, 2), (0, 1)])?;
                project(t, d, &w)
            })
        }),
    ];

    for (name, params, build) in cases {
        let report = check_tape_fn(&params, h, |t, v| build(t, v)).unwrap();
        assert!(
            report.passes(tol),
            "{name}: max relative error {} at {:?}",
            report.max_rel_error,
            report.worst
        );
    }
}

#[test]
fn checker_exact_on_quadratic() {
    let theta = vec![Tensor::vector(vec![0.3, -1.2, 2.0]).unwrap()];
    let analytic = vec![Tensor::vector(theta[0].data().iter().map(|x| 2.0 * x).collect()).unwrap()];
    let report = finite_diff_check(&theta, &analytic, 1e-5, |p| {
        Ok(p[0].data().iter().map(|x| x * x).sum())
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-9, "{report:?}");
}

#[test]
fn checker_flags_wrong_gradient() {
    let theta = vec![Tensor::vector(vec![0.5, 1.5]).unwrap()];
    let wrong = vec![Tensor::vector(vec![-1.0, -3.0]).unwrap()];
    let report = finite_diff_check(&theta, &wrong, 1e-5, |p| {
        Ok(p[0].data().iter().map(|x| x * x).sum())
    })
    .unwrap();
    assert!(report.max_rel_error > 0.9);
}

#[test]
fn adam_zero_gradient_is_noop() {
    let mut params = vec![Tensor::vector(vec![1.0, -2.0]).unwrap()];
    let mut opt = OptimizerState::new(AdamConfig::default(), &params);
    opt.step(&mut params, &[Tensor::zeros(vec![2])]).unwrap();
    assert_eq!(params[0].data(), &[1.0, -2.0]);
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut params = vec![Tensor::scalar(3.0)];
    let cfg = AdamConfig {
        lr: 0.1,
        ..AdamConfig::default()
    };
    let mut opt = OptimizerState::new(cfg, &params);
    opt.step(&mut params, &[Tensor::scalar(1.0)]).unwrap();
    // m̂ = 1, v̂ = 1 after bias correction
    assert!((params[0].data()[0] - (3.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
}

#[test]
fn adam_converges_on_parabola() {
    let mut params = vec![Tensor::scalar(5.0)];
    let cfg = AdamConfig {
        lr: 0.1,
        ..AdamConfig::default()
    };
    let mut opt = OptimizerState::new(cfg, &params);
    for _ in 0..100 {
        let g = Tensor::scalar(2.0 * params[0].data()[0]);
        opt.step(&mut params, &[g]).unwrap();
    }
    assert!(params[0].data()[0].abs() < 0.5, "{}", params[0].data()[0]);
}

#[test]
fn adam_rejects_mismatched_shapes() {
    let mut params = vec![Tensor::zeros(vec![2])];
    let mut opt = OptimizerState::new(AdamConfig::default(), &params);
    assert!(matches!(
        opt.step(&mut params, &[Tensor::zeros(vec![3])]),
        Err(Error::InvalidShape(_))
    ));
}
