use std::collections::BTreeMap;

use m2d_core::autodiff::{softmax_rows, Graph};
use m2d_core::detector::{
    fit_head, retrain_encoder, DetectorBundle, GaussianHead, ReconstructionLoss, RetrainConfig,
    Ridge,
};
use m2d_core::eval::{auroc, detection_accuracy, ScoredSet};
use m2d_core::nets::{self, Activation, LayerSpec, ModelSpec, Network, SurgeryPlan, Tap};
use m2d_core::Tensor;
use proptest::prelude::*;

fn scores() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-200i32..200).prop_map(f64::from), 1..40)
}

fn rows(d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0f64..5.0, d), 6..40)
}

fn head_and_rows() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>)> {
    (1usize..5, 1usize..4).prop_flat_map(|(d, k)| {
        rows(d).prop_map(move |r| {
            let labels = (0..r.len()).map(|i| i % k).collect();
            (r, labels)
        })
    })
}

fn tensor(r: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(r).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn auroc_swapping_sets_complements(a in scores(), b in scores()) {
        let fwd = auroc(&ScoredSet::new(a.clone(), b.clone()).unwrap()).unwrap();
        let rev = auroc(&ScoredSet::new(b, a).unwrap()).unwrap();
        prop_assert!((fwd + rev - 1.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_ignore_monotone_rescoring(a in scores(), b in scores()) {
        // v -> v^3 + 7 is strictly increasing and exact on these integers.
        let f = |v: &Vec<f64>| v.iter().map(|x| x * x * x + 7.0).collect::<Vec<_>>();
        let s = ScoredSet::new(a.clone(), b.clone()).unwrap();
        let t = ScoredSet::new(f(&a), f(&b)).unwrap();
        prop_assert_eq!(auroc(&s).unwrap(), auroc(&t).unwrap());
        prop_assert_eq!(detection_accuracy(&s).unwrap().0, detection_accuracy(&t).unwrap().0);
    }

    #[test]
    fn detection_accuracy_is_at_least_half(a in scores(), b in scores()) {
        let (acc, _) = detection_accuracy(&ScoredSet::new(a, b).unwrap()).unwrap();
        prop_assert!((0.5..=1.0).contains(&acc));
    }

    #[test]
    fn confidence_never_positive((r, labels) in head_and_rows(), q in prop::collection::vec(-9.0f64..9.0, 4)) {
        let head = fit_head(&tensor(&r), &labels, Ridge::Fixed(0.1)).unwrap();
        let f = &q[..head.dim()];
        prop_assert!(head.confidence(f).unwrap() <= 0.0);
        for m in head.means() {
            prop_assert!(head.confidence(m).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn confidence_is_translation_equivariant(
        (r, labels) in head_and_rows(),
        shift in prop::collection::vec(-20.0f64..20.0, 4),
        q in prop::collection::vec(-9.0f64..9.0, 4),
    ) {
        let d = r[0].len();
        let moved: Vec<Vec<f64>> = r.iter().map(|x| x.iter().zip(&shift).map(|(a, b)| a + b).collect()).collect();
        let a = fit_head(&tensor(&r), &labels, Ridge::Fixed(0.1)).unwrap();
        let b = fit_head(&tensor(&moved), &labels, Ridge::Fixed(0.1)).unwrap();
        let f = &q[..d];
        let g: Vec<f64> = f.iter().zip(&shift).map(|(x, s)| x + s).collect();
        let (ca, cb) = (a.confidence(f).unwrap(), b.confidence(&g).unwrap());
        prop_assert!((ca - cb).abs() <= 1e-8 * ca.abs().max(1.0), "{} vs {}", ca, cb);
    }

    #[test]
    fn raising_the_threshold_only_removes_inliers(
        x in prop::collection::vec(-6.0f64..6.0, 2..30),
        t1 in -30.0f64..0.0,
        dt in 0.0f64..10.0,
    ) {
        let b = identity_bundle();
        let pts = Tensor::new(vec![x.len() / 2, 2], x[..x.len() / 2 * 2].to_vec()).unwrap();
        prop_assume!(pts.rows() > 0);
        let low = b.is_in_distribution(&pts, t1).unwrap();
        let high = b.is_in_distribution(&pts, t1 + dt).unwrap();
        for (l, h) in low.iter().zip(&high) {
            prop_assert!(!h || *l);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_cross_entropy_is_non_negative(
        logits in prop::collection::vec(-50.0f64..50.0, 12),
        t in 0.1f64..100.0,
        labels in prop::collection::vec(0usize..4, 3),
    ) {
        let x = Tensor::new(vec![3, 4], logits).unwrap();
        let p = softmax_rows(&x, t);
        for r in 0..3 {
            prop_assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let mut g = Graph::new();
        let id = g.input(x).unwrap();
        let ce = g.softmax_cross_entropy(id, &labels).unwrap();
        prop_assert!(g.value(ce).item() >= 0.0);
    }

    #[test]
    fn zero_learning_rate_keeps_the_pretrained_encoder(seed in any::<u64>(), steps in 1usize..4) {
        let net = Network::build(ModelSpec::mlp(&[3, 5, 4, 2]).unwrap(), seed).unwrap();
        let plan = SurgeryPlan::mirrored(net.spec(), 2).unwrap();
        let cfg = RetrainConfig {
            steps,
            learning_rate: 0.0,
            batch_size: 4,
            sever_at: 2,
            seed,
            loss: ReconstructionLoss::Mse,
        };
        let data = Tensor::filled(&[8, 3], 0.5);
        let out = retrain_encoder(&net, &plan, &cfg, &data).unwrap();
        let kept = out.encoder.params().len();
        prop_assert_eq!(out.encoder.params(), &net.params()[..kept]);
    }

    #[test]
    fn model_files_round_trip(seed in any::<u64>(), h in 1usize..9, k in 2usize..5) {
        let net = Network::build(ModelSpec::mlp(&[4, h, k]).unwrap(), seed).unwrap();
        let bytes = nets::io::to_bytes(&net);
        let back = nets::io::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &net);
        prop_assert_eq!(nets::io::to_bytes(&back), bytes);
    }
}

fn identity_bundle() -> DetectorBundle {
    let spec = ModelSpec::new(
        vec![2],
        vec![LayerSpec::dense(2, 2, Activation::Linear)],
        vec![Tap::input("x")],
    )
    .unwrap();
    let net = Network::build(spec, 1).unwrap();
    let head = GaussianHead::from_parts(
        vec![0, 1],
        vec![vec![-1.0, 0.0], vec![2.0, 1.0]],
        vec![5, 5],
        vec![2.0, 0.3, 0.3, 1.0],
        0.0,
    )
    .unwrap();
    DetectorBundle::new(net.clone(), net, BTreeMap::from([("x".into(), head)]), None, None).unwrap()
}
