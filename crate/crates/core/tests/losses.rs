//! Loss terms: closed-form values, invariances and gradient directions.

use gated_reid::gradcheck::{grad_check, GradCheckOptions};
use gated_reid::losses::{gate_regularizer, identification_loss, total_loss, verification_loss, PairLossInputs};
use gated_reid::{Tape, Tensor};

fn vec_t(v: &[f64]) -> Tensor<f64> {
    Tensor::new([v.len()], v.to_vec()).unwrap()
}

#[test]
fn identification_is_shift_invariant() {
    // Adding a multiple of v to every row of W adds a constant to every logit.
    let v = [0.3, -1.2, 0.8, 0.5];
    let w = [0.1, 0.2, -0.3, 0.4, -0.5, 0.6, 0.7, -0.8, 0.9, 1.0, -1.1, 0.2];
    let shift = 0.37;
    let vv: f64 = v.iter().map(|x| x * x).sum();
    let w2: Vec<f64> = w.iter().enumerate().map(|(i, &x)| x + shift * v[i % 4] / vv).collect();
    let loss = |w: &[f64]| {
        let mut t = Tape::new();
        let vv = t.constant(vec_t(&v));
        let wv = t.constant(Tensor::new([3, 4], w.to_vec()).unwrap());
        let l = identification_loss(&mut t, vv, 1, wv).unwrap();
        t.value(l).item()
    };
    assert!((loss(&w) - loss(&w2)).abs() < 1e-9);
}

#[test]
fn identification_vanishes_for_dominant_true_logit() {
    let mut t = Tape::new();
    let v = t.constant(vec_t(&[1.0, 0.0]));
    let w = t.constant(Tensor::new([3, 2], vec![0.0, 0.0, 60.0, 0.0, 0.0, 0.0]).unwrap());
    let l = identification_loss(&mut t, v, 1, w).unwrap();
    assert!(t.value(l).item() < 1e-20);
    assert!(identification_loss(&mut t, v, 3, w).is_err());
}

#[test]
fn verification_is_monotone_and_flat_beyond_margin() {
    let mut prev = f64::INFINITY;
    for i in 0..40 {
        let d = i as f64 * 0.1;
        let mut t = Tape::new();
        let a = t.constant(vec_t(&[0.0, 0.0]));
        let b = t.constant(vec_t(&[d * 0.6, d * 0.8]));
        let l = verification_loss(&mut t, a, b, false, 2.0).unwrap();
        let l = t.value(l).item();
        assert!(l <= prev);
        if d >= 2.0 {
            assert_eq!(l, 0.0);
        }
        prev = l;
    }
    let mut t = Tape::<f64>::new();
    let a = t.constant(vec_t(&[1.0, 2.0]));
    let l = verification_loss(&mut t, a, a, true, 2.0).unwrap();
    assert_eq!(t.value(l).item(), 0.0);
    assert!(verification_loss(&mut t, a, a, false, 0.0).is_err());
}

#[test]
fn distance_three_is_beyond_margin() {
    let mut t = Tape::<f64>::new();
    let a = t.constant(vec_t(&[0.0, 0.0]));
    let b = t.constant(vec_t(&[3.0, 0.0]));
    let l = verification_loss(&mut t, a, b, false, 2.0).unwrap();
    assert_eq!(t.value(l).item(), 0.0);
}

#[test]
fn regularizer_values() {
    for (mean, want) in [(0.5, 0.0), (0.7, 0.0), (0.25, 0.1875), (0.0, 0.5)] {
        let mut t = Tape::<f64>::new();
        let g = t.constant(Tensor::full([3, 2, 1], mean));
        let r = gate_regularizer(&mut t, g).unwrap();
        assert!((t.value(r).item() - want).abs() < 1e-12, "mean {mean}");
    }
}

#[test]
fn regularizer_gradient_direction() {
    for (mean, sign) in [(0.3, -1.0), (0.45, -1.0), (0.6, 0.0), (0.9, 0.0)] {
        let g0 = Tensor::from_fn([4, 2, 1], |i| mean + 0.02 * (i as f64 - 3.5));
        let mut t = Tape::new();
        let g = t.param(g0.clone());
        let r = gate_regularizer(&mut t, g).unwrap();
        let grads = t.backward(r).unwrap();
        for &d in grads.get(g).unwrap().data() {
            if sign == 0.0 {
                assert_eq!(d, 0.0);
            } else {
                assert!(d < 0.0);
            }
        }
        let rep = grad_check(|t, v| gate_regularizer(t, v[0]), &[g0], &GradCheckOptions::default()).unwrap();
        assert!(rep.max_rel_error < 1e-6);
    }
}

#[test]
fn total_matches_hand_summed_components() {
    // Two identities, feature dim 2, hand-chosen values.
    let mut t = Tape::<f64>::new();
    let vi = t.constant(vec_t(&[1.0, 0.0]));
    let vj = t.constant(vec_t(&[0.0, 0.5]));
    let w = t.constant(Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let gi = [t.constant(Tensor::full([2, 2, 1], 0.25)), t.constant(Tensor::full([2, 2, 1], 0.75))];
    let gj = [t.constant(Tensor::full([2, 2, 1], 0.4))];
    let terms = total_loss(
        &mut t,
        &PairLossInputs {
            v_i: vi,
            v_j: vj,
            id_i: 0,
            id_j: 1,
            gates_i: Some(&gi),
            gates_j: Some(&gj),
            cls_weight: w,
            margin: 2.0,
        },
    )
    .unwrap();
    let b = terms.breakdown(&t);
    let id_i = (1.0f64.exp() + 1.0).ln() - 1.0;
    let id_j = (1.0 + 0.5f64.exp()).ln() - 0.5;
    let d = 1.25f64.sqrt();
    let ver = 0.5 * (2.0 - d).powi(2);
    let gate_i = (0.1875 + 0.0) / 2.0;
    let gate_j = 0.1 * 0.6;
    assert!((b.l_id_i - id_i).abs() < 1e-12);
    assert!((b.l_id_j - id_j).abs() < 1e-12);
    assert!((b.l_ver - ver).abs() < 1e-12);
    assert!((b.l_gate_i - gate_i).abs() < 1e-12);
    assert!((b.l_gate_j - gate_j).abs() < 1e-12);
    assert!((b.total - (id_i + id_j + ver + gate_i + gate_j)).abs() < 1e-12);
    assert!(b.components().iter().all(|&c| c >= 0.0));
}

#[test]
fn high_gates_contribute_nothing_and_empty_lists_fail() {
    let mut t = Tape::<f64>::new();
    let v = t.constant(vec_t(&[0.2, 0.1]));
    let w = t.constant(Tensor::zeros([2, 2]));
    let g = [t.constant(Tensor::full([2, 1, 1], 0.8))];
    let p = PairLossInputs {
        v_i: v,
        v_j: v,
        id_i: 0,
        id_j: 0,
        gates_i: Some(&g),
        gates_j: Some(&g),
        cls_weight: w,
        margin: 2.0,
    };
    let b = total_loss(&mut t, &p).unwrap().breakdown(&t);
    assert_eq!((b.l_gate_i, b.l_gate_j), (0.0, 0.0));
    let empty: [gated_reid::Var; 0] = [];
    let p = PairLossInputs { gates_i: Some(&empty), ..p };
    assert!(total_loss(&mut t, &p).is_err());
}
