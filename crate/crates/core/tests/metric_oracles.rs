mod common;

use common::{binary, brute_mae, brute_pr, rel_close, rng, uniform};
use proptest::prelude::*;
use rand::Rng;
use salient_edge::metrics::{evaluate_maps, f_measure, mae, max_f, pr_curve, s_measure, BETA_SQUARED};
use salient_edge::Tensor;

fn quantized(rng: &mut rand_chacha::ChaCha8Rng, n: usize) -> Tensor {
    let data = (0..n * n).map(|_| rng.random_range(0..256u32) as f64 / 255.0).collect();
    Tensor::from_vec(&[1, n, n], data).unwrap()
}

#[test]
fn pr_curve_matches_counting_oracle() {
    let mut r = rng(1);
    for trial in 0..200 {
        let images = 1 + trial % 3;
        let preds: Vec<Tensor> = (0..images)
            .map(|_| if r.random_bool(0.5) { quantized(&mut r, 8) } else { uniform(&mut r, &[1, 8, 8], 0.0, 1.0) })
            .collect();
        let gts: Vec<Tensor> = (0..images).map(|_| binary(&mut r, &[1, 8, 8], 0.3)).collect();
        let oracle = brute_pr(&preds, &gts);
        match pr_curve(&preds, &gts) {
            Ok(curve) => {
                assert_eq!(curve.images, oracle.images);
                assert_eq!(curve.empty_gt_skipped, oracle.skipped);
                for k in 0..256 {
                    assert!(rel_close(curve.precision[k], oracle.precision[k], 1e-12), "trial {trial} k {k}");
                    assert!(rel_close(curve.recall[k], oracle.recall[k], 1e-12), "trial {trial} k {k}");
                }
            }
            Err(_) => assert_eq!(oracle.images, 0),
        }
    }
}

#[test]
fn pr_hand_cases() {
    let gt = Tensor::from_vec(&[1, 2, 2], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
    let ones = Tensor::full(&[1, 2, 2], 1.0);
    let curve = pr_curve(&[ones], &[gt.clone()]).unwrap();
    assert!(curve.recall.iter().all(|&r| r == 1.0));
    assert!(curve.precision.iter().all(|&p| p == 0.5));
    let curve = pr_curve(&[gt.clone()], &[gt]).unwrap();
    assert_eq!(max_f(&curve, BETA_SQUARED), 1.0);
}

#[test]
fn f_measure_spot_values() {
    assert!((f_measure(0.8, 0.4, 0.3) - 0.65).abs() < 1e-9);
    assert_eq!(f_measure(0.0, 0.0, 0.3), 0.0);
    assert!((f_measure(0.7, 0.7, 0.3) - 0.7).abs() < 1e-12);
}

#[test]
fn mae_matches_pointwise_oracle() {
    let mut r = rng(2);
    for _ in 0..200 {
        let p = uniform(&mut r, &[1, 4, 4], 0.0, 1.0);
        let g = binary(&mut r, &[1, 4, 4], 0.5);
        assert!(rel_close(mae(&p, &g).unwrap(), brute_mae(&p, &g), 1e-12));
    }
}

#[test]
fn max_f_is_invariant_under_level_preserving_affine_maps() {
    // shifting every level by j keeps the set of binarizations reachable
    // by the 256 thresholds as long as no level passes 255
    let mut r = rng(3);
    for _ in 0..50 {
        let levels: Vec<u32> = (0..64).map(|_| r.random_range(0..200u32)).collect();
        let at = |shift: u32| {
            let data = levels.iter().map(|&l| (l + shift) as f64 / 255.0).collect();
            Tensor::from_vec(&[1, 8, 8], data).unwrap()
        };
        let p = at(0);
        let g = binary(&mut r, &[1, 8, 8], 0.4);
        if g.sum() == 0.0 {
            continue;
        }
        let shifted = at(40);
        let a = max_f(&pr_curve(&[p], &[g.clone()]).unwrap(), BETA_SQUARED);
        let b = max_f(&pr_curve(&[shifted], &[g]).unwrap(), BETA_SQUARED);
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn structure_measure_cases() {
    let n = 16;
    let checker = Tensor::from_vec(&[1, n, n], (0..n * n).map(|i| ((i / n + i % n) % 2) as f64).collect()).unwrap();
    let inverted = checker.map(|v| 1.0 - v);
    assert!(s_measure(&inverted, &checker).unwrap().s <= 0.5);
    let half = Tensor::full(&[1, n, n], 0.5);
    let s = s_measure(&half, &checker).unwrap().s;
    assert!(s > 0.0 && s < 1.0);
    let empty = Tensor::zeros(&[1, n, n]);
    assert!((s_measure(&half, &empty).unwrap().s - 0.5).abs() < 1e-12);
}

#[test]
fn degenerate_reports() {
    let mut r = rng(4);
    let gts: Vec<Tensor> = (0..5).map(|_| binary(&mut r, &[1, 16, 16], 0.3)).collect();
    let report = evaluate_maps(&gts, &gts).unwrap();
    assert_eq!(report.max_f, 1.0);
    assert_eq!(report.mae, 0.0);
    assert!((report.s_measure - 1.0).abs() < 1e-9);
    let halves: Vec<Tensor> = gts.iter().map(|g| Tensor::full(g.shape(), 0.5)).collect();
    assert_eq!(evaluate_maps(&halves, &gts).unwrap().mae, 0.5);
}

fn map_strategy() -> impl Strategy<Value = Tensor> {
    prop::collection::vec(0.0f64..=1.0, 16).prop_map(|v| Tensor::from_vec(&[1, 4, 4], v).unwrap())
}

proptest! {
    #[test]
    fn mae_is_a_metric(a in map_strategy(), b in map_strategy(), c in map_strategy()) {
        let ab = mae(&a, &b).unwrap();
        prop_assert_eq!(ab, mae(&b, &a).unwrap());
        prop_assert_eq!(mae(&a, &a).unwrap(), 0.0);
        prop_assert!(mae(&a, &c).unwrap() <= ab + mae(&b, &c).unwrap() + 1e-12);
    }

    #[test]
    fn pr_values_are_probabilities(p in map_strategy(), bits in prop::collection::vec(any::<bool>(), 16)) {
        let g = Tensor::from_vec(&[1, 4, 4], bits.iter().map(|&b| b as u8 as f64).collect()).unwrap();
        prop_assume!(g.sum() > 0.0);
        let curve = pr_curve(&[p], &[g]).unwrap();
        prop_assert!(curve.precision.iter().chain(&curve.recall).all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(curve.recall.windows(2).all(|w| w[0] >= w[1]));
        prop_assert_eq!(curve.recall[0], 1.0);
    }
}
