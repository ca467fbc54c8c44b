use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symscreen_core::screen::{
    auc_fraction, auc_roc, kfold_split, logreg_grad, logreg_loss, mlp_grad, mlp_loss, MlpShape, ScreenError,
};

/// Pairwise count: wins score 2, ties 1, over 2 * P * N.
fn brute_auc(scores: &[f64], labels: &[bool]) -> (u128, u128) {
    let (mut num, mut den) = (0u128, 0u128);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                den += 2;
                if scores[i] > scores[j] {
                    num += 2;
                } else if scores[i] == scores[j] {
                    num += 1;
                }
            }
        }
    }
    (num, den)
}

fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    // coarse grid so ties are common
    prop::collection::vec((0u8..12, any::<bool>()), 2..40)
        .prop_map(|v| v.into_iter().map(|(s, l)| (f64::from(s) / 4.0 - 1.0, l)).unzip())
        .prop_filter("both classes", |(_, l): &(Vec<f64>, Vec<bool>)| l.iter().any(|&x| x) && l.iter().any(|&x| !x))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn auc_equals_pairwise_count((scores, labels) in scored_labels()) {
        prop_assert_eq!(auc_fraction(&scores, &labels).unwrap(), brute_auc(&scores, &labels));
    }
}

proptest! {
    #[test]
    fn auc_is_invariant_under_monotone_transforms(
        (scores, labels) in scored_labels(),
        a in 0.01f64..10.0,
        b in -5.0f64..5.0,
        pick in 0u8..3,
    ) {
        let f = |s: f64| match pick {
            0 => a * s + b,
            1 => (a * s).exp() + b,
            _ => (s + b).powi(3) * a + (s + b),
        };
        let mapped: Vec<f64> = scores.iter().map(|&s| f(s)).collect();
        prop_assert_eq!(auc_roc(&mapped, &labels).unwrap(), auc_roc(&scores, &labels).unwrap());
    }

    #[test]
    fn flipping_labels_complements_auc((scores, labels) in scored_labels()) {
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let (n1, d1) = auc_fraction(&scores, &labels).unwrap();
        let (n2, d2) = auc_fraction(&scores, &flipped).unwrap();
        prop_assert_eq!(d1, d2);
        prop_assert_eq!(n1 + n2, d1);
    }

    #[test]
    fn folds_partition_and_stratify(n_pos in 5usize..40, n_neg in 5usize..40, k in 2usize..6, seed in any::<u64>()) {
        let mut labels = vec![true; n_pos];
        labels.extend(vec![false; n_neg]);
        let folds = kfold_split(&labels, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for class in [true, false] {
            let per: Vec<usize> = folds.iter().map(|f| f.iter().filter(|&&i| labels[i] == class).count()).collect();
            prop_assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
            prop_assert!(per.iter().all(|&c| c >= 1));
        }
        prop_assert_eq!(folds, kfold_split(&labels, k, seed).unwrap());
    }
}

#[test]
fn kfold_rejects_small_classes() {
    assert_eq!(kfold_split(&[true, false], 1, 7), Err(ScreenError::BadK));
    assert!(matches!(kfold_split(&[true, true, false, false], 3, 7), Err(ScreenError::TooFewPerClass { .. })));
}

fn random_data(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let x = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    let y = (0..n).map(|_| f64::from(rng.gen_bool(0.5))).collect();
    (x, y)
}

fn central_difference(f: impl Fn(&[f64]) -> f64, p: &[f64]) -> Vec<f64> {
    let h = 1e-5;
    (0..p.len())
        .map(|i| {
            let mut up = p.to_vec();
            let mut down = p.to_vec();
            up[i] += h;
            down[i] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}

#[test]
fn logreg_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let (x, y) = random_data(&mut rng, 30, 5);
        let p: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let l2 = rng.gen_range(0.0..0.1);
        let numeric = central_difference(|q| logreg_loss(q, &x, &y, l2), &p);
        let err = relative_error(&logreg_grad(&p, &x, &y, l2), &numeric);
        assert!(err < 1e-5, "relative error {err}");
    }
}

#[test]
fn mlp_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let shape = MlpShape { inputs: 4, hidden: 6 };
    for _ in 0..20 {
        let (x, y) = random_data(&mut rng, 25, 4);
        let p: Vec<f64> = (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let l2 = rng.gen_range(0.0..0.1);
        let numeric = central_difference(|q| mlp_loss(shape, q, &x, &y, l2), &p);
        let err = relative_error(&mlp_grad(shape, &p, &x, &y, l2), &numeric);
        assert!(err < 1e-5, "relative error {err}");
    }
}
