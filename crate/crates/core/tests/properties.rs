use proptest::prelude::*;

use softpool_core::cloud::{chamfer, chamfer_accelerated, resample, PointCloud};
use softpool_core::config::RunConfig;
use softpool_core::encoder::{pointnet_feature, softpool, sort_features, FeatureMatrix};
use softpool_core::synth::{read_ply, read_xyz, write_ply, write_xyz};

fn cloud(max: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(prop::array::uniform3(-10.0f64..10.0), 1..max).prop_map(|p| PointCloud::new(p).unwrap())
}

fn features() -> impl Strategy<Value = FeatureMatrix> {
    (1usize..6, 2usize..30).prop_flat_map(|(n_f, rows)| {
        prop::collection::vec(0.0f64..1.0, rows * n_f).prop_map(move |d| FeatureMatrix::new(n_f, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chamfer_is_symmetric(a in cloud(40), b in cloud(40)) {
        prop_assert_eq!(chamfer(&a, &b).unwrap(), chamfer(&b, &a).unwrap());
    }

    #[test]
    fn chamfer_ignores_point_order(a in cloud(40), b in cloud(40), seed in any::<u64>()) {
        let d = chamfer(&a, &b).unwrap();
        let shuffled = chamfer(&a.shuffled(seed), &b.shuffled(seed ^ 1)).unwrap();
        prop_assert!((d - shuffled).abs() <= 1e-12);
        prop_assert!((chamfer_accelerated(&a, &b).unwrap() - d).abs() <= 1e-12);
    }

    #[test]
    fn ply_round_trip_is_exact(a in cloud(200)) {
        let mut buf = Vec::new();
        write_ply(&mut buf, &a).unwrap();
        prop_assert_eq!(read_ply(&buf[..]).unwrap(), a);
    }

    #[test]
    fn xyz_round_trip_is_exact(a in cloud(200)) {
        let mut buf = Vec::new();
        write_xyz(&mut buf, &a).unwrap();
        prop_assert_eq!(read_xyz(&buf[..]).unwrap(), a);
    }

    #[test]
    fn resample_depends_only_on_the_point_multiset(a in cloud(60), n in 1usize..100, seed in any::<u64>()) {
        let r = resample(&a, n, 9).unwrap();
        prop_assert_eq!(r.len(), n);
        prop_assert_eq!(resample(&a.shuffled(seed), n, 9).unwrap(), r);
    }

    #[test]
    fn softpool_blocks_hold_the_top_rows(f in features(), pick in 1usize..30) {
        let n_f = f.n_f();
        let n_r = pick.min(f.n_in());
        let sorted = sort_features(&f);
        let pooled = softpool(&sorted, n_r).unwrap();
        let pn = pointnet_feature(&sorted);
        for k in 0..n_f {
            let mut col: Vec<f64> = (0..f.n_in()).map(|i| f.row(i)[k]).collect();
            col.sort_by(|x, y| y.total_cmp(x));
            let block: Vec<f64> = pooled.block(k).chunks_exact(n_f).map(|r| r[k]).collect();
            prop_assert_eq!(&block[..], &col[..n_r]);
            prop_assert_eq!(block[0], pn[k]);
        }
    }

    #[test]
    fn config_round_trips(
        n_f in 1usize..16,
        n_r in 1usize..64,
        n_p in 1usize..8,
        upsample in 1usize..16,
        tau in 0.01f64..0.99,
        lr in 1e-6f64..1e-1,
        w in prop::array::uniform5(0.0f64..10.0),
        hidden in prop::collection::vec(1usize..600, 1..4),
        batch in 1usize..32,
        seed in any::<u64>(),
        final_linear in any::<bool>(),
        fine_only_loss in any::<bool>(),
    ) {
        let mut cfg = RunConfig::desk();
        cfg.n_f = n_f;
        cfg.n_r = n_r;
        cfg.n_in = n_r.max(cfg.n_in);
        cfg.n_p = n_p;
        cfg.upsample = upsample;
        cfg.tau = tau;
        cfg.lr = lr;
        cfg.weights.complete = w[0];
        cfg.weights.inter = w[1];
        cfg.weights.intra = w[2];
        cfg.weights.boundary = w[3];
        cfg.weights.preserve = w[4];
        cfg.hidden = hidden;
        cfg.batch_size = batch;
        cfg.seed = seed;
        cfg.final_linear = final_linear;
        cfg.fine_only_loss = fine_only_loss;
        cfg.checkpoint = Some("runs/a b/ckpt.spn".into());
        let text = cfg.to_text();
        prop_assert_eq!(RunConfig::parse_text(RunConfig::full(), &text).unwrap(), cfg);
    }
}
