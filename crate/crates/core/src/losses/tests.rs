use super::*;
use crate::autodiff::check_tape_fn;
use crate::cloud::earth_mover;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    PointCloud::new((0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect()).unwrap()
}

fn positive(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(0.05..1.0)).collect()).unwrap()
}

fn softmax_rows(rng: &mut ChaCha8Rng, rows: usize, n_f: usize) -> FeatureMatrix {
    let mut data = Vec::with_capacity(rows * n_f);
    for _ in 0..rows {
        let e: Vec<f64> = (0..n_f).map(|_| rng.gen_range(-2.0f64..2.0).exp()).collect();
        let s: f64 = e.iter().sum();
        data.extend(e.iter().map(|v| v / s));
    }
    FeatureMatrix::new(n_f, data).unwrap()
}

fn one_hot(rows: usize, n_f: usize, hot: impl Fn(usize) -> usize) -> FeatureMatrix {
    let mut data = vec![0.0; rows * n_f];
    for r in 0..rows {
        data[r * n_f + hot(r)] = 1.0;
    }
    FeatureMatrix::new(n_f, data).unwrap()
}

#[test]
fn entropy_bounds() {
    for n_f in [2, 4, 8, 16, 32] {
        let uniform = FeatureMatrix::new(n_f, vec![1.0 / n_f as f64; 64 * n_f]).unwrap();
        let log = (n_f as f64).ln();
        assert!(loss_inter(&[uniform.clone()]).unwrap().abs() < 1e-9);
        assert!((loss_intra(&[uniform.clone()]).unwrap() - log).abs() < 1e-9);
        assert!((regional_entropy(&[uniform]).unwrap() - log).abs() < 1e-9);
        let hot = one_hot(64, n_f, |_| 1);
        assert!(loss_intra(&[hot.clone()]).unwrap().abs() < 1e-9);
        assert!((loss_inter(&[hot]).unwrap() - log).abs() < 1e-9);
        let spread = one_hot(64 * n_f, n_f, |r| r % n_f);
        assert!(loss_inter(&[spread]).unwrap().abs() < 1e-9);
    }
    assert!((8f64.ln() - 2.0794).abs() < 1e-4);
}

#[test]
fn entropy_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch = [softmax_rows(&mut rng, 10, 4), softmax_rows(&mut rng, 10, 4)];
    let mut e_r = 0.0;
    let mut intra = 0.0;
    for f in &batch {
        let mut pbar = [0.0; 4];
        for k in 0..10 {
            let row = f.row(k);
            let s: f64 = row.iter().sum();
            for i in 0..4 {
                let p = row[i] / s;
                pbar[i] += p / 10.0;
                intra -= p * p.ln();
            }
        }
        e_r -= pbar.iter().map(|p| p * p.ln()).sum::<f64>();
    }
    e_r /= 2.0;
    intra /= 20.0;
    assert!((regional_entropy(&batch).unwrap() - e_r).abs() < 1e-12);
    assert!((loss_inter(&batch).unwrap() - (4f64.ln() - e_r)).abs() < 1e-12);
    assert!((loss_intra(&batch).unwrap() - intra).abs() < 1e-12);
}

#[test]
fn boundary_set_rules() {
    let sets = boundary_sets(&[0.6, 0.4], 2, 0.3).unwrap();
    assert_eq!(sets.get(0, 1), &[0]);
    assert!(sets.get(1, 0).is_empty());
    assert!(boundary_sets(one_hot(20, 4, |r| r % 4).data(), 4, 0.3).unwrap().is_empty());
    assert!(boundary_sets(&[0.5, 0.5], 2, 0.0).is_err());
    assert!(boundary_sets(&[0.5, 0.5], 2, 1.0).is_err());
}

#[test]
fn boundary_sets_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let f = softmax_rows(&mut rng, 50, 4);
    let sets = boundary_sets(f.data(), 4, 0.2).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let expect: Vec<usize> = (0..50)
                .filter(|&k| {
                    let row = f.row(k);
                    let best = (0..4).fold(0, |b, c| if row[c] > row[b] { c } else { b });
                    best == i && j != i && row[j] > 0.2
                })
                .collect();
            assert_eq!(sets.get(i, j), expect.as_slice());
        }
    }
}

#[test]
fn boundary_loss_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pts = cloud(&mut rng, 40);
    let data: Vec<f64> = (0..40)
        .flat_map(|k| if k % 2 == 0 { [0.6, 0.4] } else { [0.35, 0.65] })
        .collect();
    let f = FeatureMatrix::new(2, data).unwrap();
    let pick = |parity: usize| {
        PointCloud::new((0..40).filter(|k| k % 2 == parity).map(|k| pts.points()[k]).collect()).unwrap()
    };
    let expect = crate::cloud::chamfer(&pick(0), &pick(1)).unwrap();
    assert!((loss_boundary(&pts, &f, 0.3).unwrap() - expect).abs() < 1e-12);
    assert_eq!(loss_boundary(&pts, &one_hot(40, 2, |k| k % 2), 0.3).unwrap(), 0.0);
}

#[test]
fn preserve_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let f = positive(&mut rng, 12, 4);
    let mut tape = Tape::new();
    let a = tape.constant(f.clone()).unwrap();
    let b = tape.constant(f.clone()).unwrap();
    let v = preserve_on_tape(&mut tape, a, b, 256, 9).unwrap();
    assert_eq!(tape.value(v).item().unwrap(), 0.0);

    let zeros = tape.constant(Tensor::zeros(vec![12, 4])).unwrap();
    let shifted = tape.constant(Tensor::full(vec![12, 4], 0.5)).unwrap();
    let v = preserve_on_tape(&mut tape, zeros, shifted, 256, 9).unwrap();
    assert!((tape.value(v).item().unwrap() - 1.0).abs() < 1e-12);

    let g = positive(&mut rng, 12, 4);
    let a = tape.constant(f.clone()).unwrap();
    let b = tape.constant(g.clone()).unwrap();
    let v = preserve_on_tape(&mut tape, a, b, 256, 9).unwrap();
    let exact = earth_mover(Rows::new(f.data(), 4).unwrap(), Rows::new(g.data(), 4).unwrap()).unwrap();
    assert!((tape.value(v).item().unwrap() - exact).abs() < 1e-12);
}

#[test]
fn preserve_ignores_joint_row_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let f = softmax_rows(&mut rng, 300, 8);
    let sorted = crate::encoder::sort_features(&f);
    let fstar = crate::encoder::softpool(&sorted, 40).unwrap();
    let base = loss_preserve(&fstar, &f, 5).unwrap();
    let perm: Vec<usize> = (0..300).rev().collect();
    let g = FeatureMatrix::new(8, perm.iter().flat_map(|&i| f.row(i).to_vec()).collect()).unwrap();
    let gstar = crate::encoder::softpool(&crate::encoder::sort_features(&g), 40).unwrap();
    assert_eq!(loss_preserve(&gstar, &g, 5).unwrap(), base);
}

#[test]
fn complete_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let gt = cloud(&mut rng, 64);
    assert_eq!(loss_complete(&gt, None, &gt, 0).unwrap(), 0.0);
    assert_eq!(loss_complete(&gt, Some(&gt.shuffled(3)), &gt, 0).unwrap(), 0.0);
    let out = cloud(&mut rng, 64);
    let coarse = cloud(&mut rng, 16);
    let expect = crate::cloud::chamfer(&out, &gt).unwrap()
        + 0.5 * crate::cloud::chamfer(&coarse, &resample(&gt, 16, 7).unwrap()).unwrap();
    assert!((loss_complete(&out, Some(&coarse), &gt, 7).unwrap() - expect).abs() < 1e-12);
}

#[test]
fn total_examples() {
    let w = LossWeights::default();
    assert_eq!(w.as_array(), [1.0, 1.0, 1.0, 2.0, 1.0]);
    assert_eq!(total_loss([0.0; 5], w).unwrap().total, 0.0);
    let only = LossWeights { complete: 1.0, inter: 0.0, intra: 0.0, boundary: 0.0, preserve: 0.0 };
    assert_eq!(total_loss([0.7, 3.0, 4.0, 5.0, 6.0], only).unwrap().total, 0.7);
    let t = [0.1, 0.2, 0.3, 0.4, 0.5];
    let b = total_loss(t, w).unwrap();
    assert!((b.total - (0.1 + 0.2 + 0.3 + 0.8 + 0.5)).abs() < 1e-12);
    assert_eq!(b.csv_row(3), format!("3,0.1,0.2,0.3,0.4,0.5,{}", b.total));
    let bad = LossWeights { boundary: -1.0, ..w };
    assert!(matches!(total_loss(t, bad), Err(Error::InvalidInput(_))));
}

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

#[test]
fn gradients_chamfer_and_complete() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = Tensor::matrix(12, 3, cloud(&mut rng, 12).flat().to_vec()).unwrap();
    let b = Tensor::matrix(9, 3, cloud(&mut rng, 9).flat().to_vec()).unwrap();
    let r = check_tape_fn(&[a.clone(), b], H, |t, v| chamfer_on_tape(t, v[0], v[1])).unwrap();
    assert!(r.passes(TOL), "{r:?}");
    let gt = cloud(&mut rng, 20);
    let c = Tensor::matrix(4, 3, cloud(&mut rng, 4).flat().to_vec()).unwrap();
    let r = check_tape_fn(&[a, c], H, |t, v| complete_on_tape(t, v[0], Some(v[1]), &gt, 1)).unwrap();
    assert!(r.passes(TOL), "{r:?}");
}

#[test]
fn gradients_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let f = positive(&mut rng, 16, 8);
    let r = check_tape_fn(&[f.clone()], H, |t, v| intra_on_tape(t, v[0])).unwrap();
    assert!(r.passes(TOL), "{r:?}");
    let r = check_tape_fn(&[f], H, |t, v| inter_on_tape(t, v[0])).unwrap();
    assert!(r.passes(TOL), "{r:?}");
}

#[test]
fn gradients_boundary_and_preserve() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pts = Tensor::matrix(30, 3, cloud(&mut rng, 30).flat().to_vec()).unwrap();
    let f = softmax_rows(&mut rng, 30, 3);
    assert!(!boundary_sets(f.data(), 3, 0.3).unwrap().adjacent_pairs().is_empty());
    let r = check_tape_fn(&[pts], H, |t, v| boundary_on_tape(t, v[0], f.data(), 3, 0.3)).unwrap();
    assert!(r.passes(TOL), "{r:?}");

    let feats = positive(&mut rng, 20, 4);
    let sources: Vec<usize> = (0..20).step_by(2).chain([1, 3]).collect();
    let r = check_tape_fn(&[feats], H, |t, v| {
        let star = t.gather(v[0], &sources)?;
        preserve_on_tape(t, v[0], star, 8, 2)
    })
    .unwrap();
    assert!(r.passes(TOL), "{r:?}");
}
