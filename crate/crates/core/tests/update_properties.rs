mod common;

use common::{constrained_ref, one_step_ref};
use dst_core::linalg::Matrix;
use dst_core::ontology::Slot;
use dst_core::update::{
    build_constrained_matrix, constrained_update, decide_goal, learned_interpolation_update, one_step_update,
    rule_based_update,
};
use dst_core::{ConstrainedParams, GoalLabel};
use proptest::prelude::*;

fn probs(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.001f64..0.999, n)
}

fn distribution(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n).prop_map(|mut v| {
        v[0] += 1e-3;
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
        v
    })
}

fn pair(lo: usize, hi: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (lo..=hi).prop_flat_map(|n| (probs(n), distribution(n)))
}

fn params() -> impl Strategy<Value = ConstrainedParams> {
    prop::array::uniform4(-5.0f64..5.0).prop_map(ConstrainedParams::from_array)
}

fn square(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, n), n)
}

fn is_distribution(b: &[f64]) -> bool {
    (b.iter().sum::<f64>() - 1.0).abs() < 1e-9 && b.iter().all(|&x| x > 0.0 && x < 1.0)
}

proptest! {
    #[test]
    fn constrained_is_normalized((y, b) in pair(2, 20), p in params()) {
        prop_assert!(is_distribution(&constrained_update(&y, &b, &p).unwrap()));
    }

    #[test]
    fn one_step_is_normalized(
        (y, b, wc, wp) in (2usize..=12).prop_flat_map(|n| (probs(n), distribution(n), square(n), square(n)))
    ) {
        let out = one_step_update(&y, &b, &Matrix::from_rows(&wc).unwrap(), &Matrix::from_rows(&wp).unwrap()).unwrap();
        prop_assert!(is_distribution(&out));
        let oracle = one_step_ref(&y, &b, &wc, &wp);
        for (a, o) in out.iter().zip(&oracle) {
            prop_assert!((a - o).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_is_normalized((y, b) in pair(2, 20), theta in -5.0f64..5.0) {
        prop_assert!(is_distribution(&learned_interpolation_update(&y, &b, theta).unwrap()));
    }

    #[test]
    fn constrained_matches_explicit_matrices((y, b) in pair(2, 10), p in params()) {
        let closed = constrained_update(&y, &b, &p).unwrap();
        let n = y.len();
        let via_matrix = one_step_update(
            &y,
            &b,
            &build_constrained_matrix(p.a_curr, p.b_curr, n),
            &build_constrained_matrix(p.a_past, p.b_past, n),
        )
        .unwrap();
        let oracle = constrained_ref(&y, &b, p.a_curr, p.b_curr, p.a_past, p.b_past);
        for i in 0..n {
            prop_assert!((closed[i] - via_matrix[i]).abs() < 1e-12);
            prop_assert!((closed[i] - oracle[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn constrained_is_permutation_equivariant(
        ((y, b), perm) in (2usize..=12).prop_flat_map(|n| ((probs(n), distribution(n)), Just((0..n).collect::<Vec<_>>()).prop_shuffle())),
        p in params(),
    ) {
        let out = constrained_update(&y, &b, &p).unwrap();
        let py: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let pb: Vec<f64> = perm.iter().map(|&i| b[i]).collect();
        let pout = constrained_update(&py, &pb, &p).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            prop_assert!((pout[k] - out[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn rule_based_is_affine_in_y(
        (y1, y2, b) in (2usize..=12).prop_flat_map(|n| (probs(n), probs(n), distribution(n))),
        alpha in 0.0f64..=1.0,
        lambda in 0.0f64..=1.0,
    ) {
        let mix: Vec<f64> = y1.iter().zip(&y2).map(|(a, c)| alpha * a + (1.0 - alpha) * c).collect();
        let lhs = rule_based_update(&mix, &b, lambda).unwrap();
        let u1 = rule_based_update(&y1, &b, lambda).unwrap();
        let u2 = rule_based_update(&y2, &b, lambda).unwrap();
        for i in 0..b.len() {
            prop_assert!((lhs[i] - (alpha * u1[i] + (1.0 - alpha) * u2[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_past_gap_forgets_the_previous_belief(
        (y, b1, b2) in (2usize..=12).prop_flat_map(|n| (probs(n), distribution(n), distribution(n))),
        a_c in -5.0f64..5.0, b_c in -5.0f64..5.0, shared in -5.0f64..5.0,
    ) {
        // With a_past = b_past every b_prev contributes the same constant to all logits.
        let p = ConstrainedParams { a_curr: a_c, b_curr: b_c, a_past: shared, b_past: shared };
        let o1 = constrained_update(&y, &b1, &p).unwrap();
        let o2 = constrained_update(&y, &b2, &p).unwrap();
        for i in 0..y.len() {
            prop_assert!((o1[i] - o2[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn decide_goal_is_stable_under_scaling(
        b in prop::collection::vec(0.0f64..1.0, 5),
        scale in 0.01f64..1.0,
    ) {
        let slot = Slot::new("food", &["a", "b", "c"]).unwrap();
        let prev = GoalLabel::parse("a");
        let scaled: Vec<f64> = b.iter().map(|x| x * scale).collect();
        let detected = |v: &[f64]| (0..4).filter(|&i| v[i] >= 0.5).collect::<Vec<_>>();
        let set = detected(&b);
        prop_assume!(!set.is_empty() && set == detected(&scaled));
        prop_assert_eq!(decide_goal(&b, &prev, &slot), decide_goal(&scaled, &prev, &slot));
    }
}

#[test]
fn one_step_is_not_permutation_equivariant() {
    let n = 3;
    let wc = Matrix::from_rows(&[vec![2.0, 0.0, 0.0], vec![0.0, 0.5, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
    let wp = Matrix::scaled_identity(n, 1.0);
    let y = [0.9, 0.2, 0.1];
    let b = [0.2, 0.3, 0.5];
    let out = one_step_update(&y, &b, &wc, &wp).unwrap();
    let perm = [1, 0, 2];
    let py: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
    let pb: Vec<f64> = perm.iter().map(|&i| b[i]).collect();
    let pout = one_step_update(&py, &pb, &wc, &wp).unwrap();
    let gap = perm
        .iter()
        .enumerate()
        .map(|(k, &i)| (pout[k] - out[i]).abs())
        .fold(0.0, f64::max);
    assert!(gap > 1e-3, "expected a visible violation, got {gap}");
}

/// Independent restatement of the detection rule for an exhaustive sweep.
fn rule_oracle(b: &[f64; 4], prev: usize) -> usize {
    // indices: 0, 1 values; 2 dontcare; 3 none
    let mut best = None;
    for i in 0..3 {
        if b[i] >= 0.5 && best.is_none_or(|j: usize| b[i] > b[j]) {
            best = Some(i);
        }
    }
    best.unwrap_or(prev)
}

#[test]
fn decide_goal_exhaustive_two_value_grid() {
    let slot = Slot::new("food", &["a", "b"]).unwrap();
    let grid: Vec<f64> = (0..=20).map(|i| f64::from(i) * 0.05).collect();
    let mut checked = 0;
    for prev in 0..4 {
        let prev_label = slot.label_at(prev).unwrap();
        for &x0 in &grid {
            for &x1 in &grid {
                for &x2 in &grid {
                    for &x3 in [0.0, 0.5, 1.0].iter() {
                        let b = [x0, x1, x2, x3];
                        let got = decide_goal(&b, &prev_label, &slot);
                        assert_eq!(got, slot.label_at(rule_oracle(&b, prev)).unwrap(), "{b:?} prev {prev}");
                        checked += 1;
                    }
                }
            }
        }
    }
    assert_eq!(checked, 4 * 21 * 21 * 21 * 3);
}
