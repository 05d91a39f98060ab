//! Forward values of the tape operators against direct nested-loop
//! computations.

mod common;

use common::{conv_oracle, max_abs_diff, pool_oracle, random};
use gated_reid::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn conv_matches_nested_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (h, w, cin, cout, k) in [(6, 6, 2, 3, 3), (5, 7, 3, 2, 5), (1, 1, 1, 4, 3), (4, 3, 2, 2, 1)] {
        let x = random(&[h, w, cin], &mut rng);
        let kern = random(&[k, k, cin, cout], &mut rng);
        let b = random(&[cout], &mut rng);
        let mut tape = Tape::new();
        let (xv, kv, bv) = (tape.constant(x.clone()), tape.constant(kern.clone()), tape.constant(b.clone()));
        let y = tape.conv2d_same(xv, kv, bv).unwrap();
        assert_eq!(tape.value(y).shape(), &[h, w, cout]);
        assert!(max_abs_diff(tape.value(y).data(), &conv_oracle(&x, &kern, &b)) < 1e-10);
    }
}

#[test]
fn conv_identity_and_zero_kernels() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[4, 5, 1], &mut rng);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let one = tape.constant(Tensor::full([1, 1, 1, 1], 1.0));
    let zb = tape.constant(Tensor::zeros([1]));
    let y = tape.conv2d_same(xv, one, zb).unwrap();
    assert_eq!(tape.value(y), &x);

    let zk = tape.constant(Tensor::zeros([3, 3, 1, 2]));
    let b = tape.constant(Tensor::new([2], vec![0.25, -2.0]).unwrap());
    let y = tape.conv2d_same(xv, zk, b).unwrap();
    for px in tape.value(y).data().chunks(2) {
        assert_eq!(px, &[0.25, -2.0]);
    }
}

#[test]
fn conv_rejects_channel_mismatch_and_even_kernels() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros([3, 3, 2]));
    let k = tape.constant(Tensor::zeros([3, 3, 3, 1]));
    let b = tape.constant(Tensor::zeros([1]));
    assert!(matches!(tape.conv2d_same(x, k, b), Err(gated_reid::Error::Shape { .. })));
    let k2 = tape.constant(Tensor::zeros([2, 2, 2, 1]));
    assert!(tape.conv2d_same(x, k2, b).is_err());
}

#[test]
fn pool_matches_window_maxima() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for shape in [[5, 7, 3], [4, 4, 1], [1, 1, 2], [3, 2, 2]] {
        let x = random(&shape, &mut rng);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = tape.maxpool_2x2(xv).unwrap();
        let (s, want) = pool_oracle(&x);
        assert_eq!(tape.value(y).shape(), &s[..]);
        assert!(max_abs_diff(tape.value(y).data(), &want) < 1e-10);
    }
}

#[test]
fn pool_by_inspection() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::from_fn([4, 4, 1], |i| (i + 1) as f64));
    let y = tape.maxpool_2x2(x).unwrap();
    assert_eq!(tape.value(y).data(), &[6.0, 8.0, 14.0, 16.0]);
    let c = tape.constant(Tensor::full([3, 5, 2], 1.5));
    let y = tape.maxpool_2x2(c).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 1.5));
}

#[test]
fn pool_ties_route_to_first_element() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(Tensor::full([2, 2, 1], 3.0));
    let y = tape.maxpool_2x2(x).unwrap();
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn dense_matches_dot_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&[4], &mut rng);
    let w = random(&[3, 4], &mut rng);
    let b = random(&[3], &mut rng);
    let mut tape = Tape::new();
    let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
    let y = tape.dense(xv, wv, Some(bv)).unwrap();
    let want: Vec<f64> =
        (0..3).map(|r| b.data()[r] + (0..4).map(|c| w.data()[r * 4 + c] * x.data()[c]).sum::<f64>()).collect();
    assert!(max_abs_diff(tape.value(y).data(), &want) < 1e-10);

    let eye = tape.constant(Tensor::from_fn([4, 4], |i| if i % 5 == 0 { 1.0 } else { 0.0 }));
    let zb = tape.constant(Tensor::zeros([4]));
    let y = tape.dense(xv, eye, Some(zb)).unwrap();
    assert_eq!(tape.value(y), &x);
    let zw = tape.constant(Tensor::zeros([3, 4]));
    let y = tape.dense(xv, zw, Some(bv)).unwrap();
    assert_eq!(tape.value(y), &b);
    let bad = tape.constant(Tensor::zeros([3, 5]));
    assert!(tape.dense(xv, bad, None).is_err());
}

#[test]
fn activations_at_known_points() {
    let mut tape = Tape::<f64>::new();
    let z = tape.constant(Tensor::zeros([2]));
    let t = tape.tanh(z);
    let s = tape.sigmoid(z);
    assert_eq!(tape.value(t).data(), &[0.0, 0.0]);
    assert_eq!(tape.value(s).data(), &[0.5, 0.5]);
    let big = tape.constant(Tensor::new([4], vec![-30.0, -5.0, 5.0, 30.0]).unwrap());
    let s = tape.sigmoid(big);
    assert!(tape.value(s).data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn broadcast_vector_and_gate() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cube = random(&[3, 4, 2], &mut rng);
    let vec = random(&[2], &mut rng);
    let gate = random(&[3, 4, 1], &mut rng);
    let mut tape = Tape::new();
    let (cv, vv, gv) = (tape.constant(cube.clone()), tape.constant(vec.clone()), tape.constant(gate.clone()));

    let y = tape.add_broadcast_vector(cv, vv).unwrap();
    for (i, (&o, &c)) in tape.value(y).data().iter().zip(cube.data()).enumerate() {
        assert_eq!(o, c + vec.data()[i % 2]);
    }
    let zv = tape.constant(Tensor::zeros([2]));
    let y = tape.add_broadcast_vector(cv, zv).unwrap();
    assert_eq!(tape.value(y), &cube);

    let y = tape.mul_broadcast_gate(gv, cv).unwrap();
    for (i, (&o, &c)) in tape.value(y).data().iter().zip(cube.data()).enumerate() {
        assert_eq!(o, c * gate.data()[i / 2]);
    }
    let ones = tape.constant(Tensor::full([3, 4, 1], 1.0));
    let y = tape.mul_broadcast_gate(ones, cv).unwrap();
    assert_eq!(tape.value(y), &cube);
    let zeros = tape.constant(Tensor::zeros([3, 4, 1]));
    let y = tape.mul_broadcast_gate(zeros, cv).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

    let wrong = tape.constant(Tensor::zeros([3, 5, 1]));
    assert!(tape.mul_broadcast_gate(wrong, cv).is_err());
    let wrong = tape.constant(Tensor::zeros([3]));
    assert!(tape.add_broadcast_vector(cv, wrong).is_err());
}

#[test]
fn concat_layout() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::from_fn([4, 4, 12], |i| i as f64));
    let b = tape.constant(Tensor::from_fn([4, 4, 12], |i| -(i as f64)));
    let y = tape.concat_channels(a, b).unwrap();
    assert_eq!(tape.value(y).shape(), &[4, 4, 24]);
    assert_eq!(tape.value(y).data()[24 + 12], -12.0);
    let empty = tape.constant(Tensor::zeros([4, 4, 0]));
    let y = tape.concat_channels(a, empty).unwrap();
    assert_eq!(tape.value(y), tape.value(a));
    let wrong = tape.constant(Tensor::zeros([4, 3, 2]));
    assert!(tape.concat_channels(a, wrong).is_err());
}

#[test]
fn elementwise_and_reductions() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = random(&[3, 4], &mut rng);
    let mut tape = Tape::new();
    let av = tape.constant(a.clone());
    let d = tape.sub(av, av).unwrap();
    assert!(tape.value(d).data().iter().all(|&v| v == 0.0));
    let c = tape.constant(Tensor::full([2, 3], 0.75));
    let m = tape.mean_all(c);
    assert_eq!(tape.value(m).item(), 0.75);
    let f = tape.flatten(av);
    assert_eq!(tape.value(f).shape(), &[12]);
    assert_eq!(tape.value(f).data(), a.data());
    let other = tape.constant(Tensor::zeros([4, 3]));
    assert!(tape.add(av, other).is_err());
}

#[test]
fn stop_gradient_forward_is_bitwise_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random(&[5, 3], &mut rng);
    let mut tape = Tape::new();
    let av = tape.param(a.clone());
    let s = tape.stop_gradient(av);
    assert_eq!(tape.value(s), &a);
}
