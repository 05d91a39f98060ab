//! Architecture-level behavior of the gated network.

mod common;

use common::{conv_oracle, max_abs_diff, pool_oracle, random, tanh_all};
use gated_reid::network::{
    compute_gate, frame_forward, frame_forward_with_gate, fuse_gates, sequence_forward, shared_conv, GateStream, Stream,
};
use gated_reid::{ClipInput, FusionMode, GateMode, Network, NetworkConfig, NetworkParams, Tape, Tensor};
use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn clip(cfg: &NetworkConfig, frames: usize, seed: u64) -> ClipInput<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ClipInput {
        frames: (0..frames).map(|_| random(&[cfg.height, cfg.width, 3], &mut rng)).collect(),
        flows: (0..frames).map(|_| random(&[cfg.height, cfg.width, 2], &mut rng)).collect(),
    }
}

fn params(cfg: &NetworkConfig, seed: u64) -> NetworkParams<f64> {
    NetworkParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn shared_conv_output_shape() {
    let cfg = NetworkConfig::default();
    let p = NetworkParams::<f64>::zeros(&cfg).unwrap();
    let mut tape = Tape::new();
    let bp = p.bind(&mut tape, false);
    let x = tape.constant(random(&[64, 32, 3], &mut ChaCha8Rng::seed_from_u64(0)));
    let y = shared_conv(&mut tape, Stream::Color, x, &bp, &cfg).unwrap();
    assert_eq!(tape.value(y).shape(), &[32, 16, 12]);
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    let wrong = tape.constant(Tensor::zeros([64, 32, 2]));
    assert!(shared_conv(&mut tape, Stream::Color, wrong, &bp, &cfg).is_err());
}

#[test]
fn shared_conv_matches_composed_oracles() {
    let cfg = NetworkConfig::tiny();
    let p = params(&cfg, 1);
    let x = random(&[16, 8, 2], &mut ChaCha8Rng::seed_from_u64(2));
    let mut tape = Tape::new();
    let bp = p.bind(&mut tape, false);
    let xv = tape.constant(x.clone());
    let y = shared_conv(&mut tape, Stream::Flow, xv, &bp, &cfg).unwrap();
    let conv = conv_oracle(&x, p.get("conv1_of.kernel").unwrap(), p.get("conv1_of.bias").unwrap());
    let (shape, pooled) = pool_oracle(&Tensor::new([16, 8, cfg.conv1_of_out], conv).unwrap());
    assert_eq!(tape.value(y).shape(), &shape[..]);
    assert!(max_abs_diff(tape.value(y).data(), &tanh_all(&pooled)) < 1e-10);
}

#[test]
fn zero_parameters_give_half_gates() {
    let cfg = NetworkConfig::tiny();
    let p = NetworkParams::<f64>::zeros(&cfg).unwrap();
    let mut tape = Tape::new();
    let bp = p.bind(&mut tape, false);
    let cube = tape.constant(random(&[8, 4, cfg.conv1_out], &mut ChaCha8Rng::seed_from_u64(3)));
    let h = tape.constant(random(&[cfg.state_dim], &mut ChaCha8Rng::seed_from_u64(4)));
    let g = compute_gate(&mut tape, cube, h, &bp, GateStream::Color, true).unwrap();
    assert_eq!(tape.value(g).shape(), &[8, 4, 1]);
    assert!(tape.value(g).data().iter().all(|&v| v == 0.5));
}

#[test]
fn gate_matches_composed_oracles() {
    let cfg = NetworkConfig::tiny();
    let p = params(&cfg, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cube = random(&[8, 4, cfg.conv1_of_out], &mut rng);
    let h = random(&[cfg.state_dim], &mut rng);
    let mut tape = Tape::new();
    let bp = p.bind(&mut tape, false);
    let (cv, hv) = (tape.constant(cube.clone()), tape.constant(h.clone()));
    let g = compute_gate(&mut tape, cv, hv, &bp, GateStream::Flow, true).unwrap();

    let get = |n: &str| p.get(&format!("gate_flow.{n}")).unwrap();
    let a = conv_oracle(&cube, get("conv1.kernel"), get("conv1.bias"));
    let (fw, fb) = (get("fc.weight"), get("fc.bias"));
    let hid = cfg.gate_hidden;
    let proj: Vec<f64> = (0..hid)
        .map(|r| fb.data()[r] + (0..cfg.state_dim).map(|c| fw.data()[r * cfg.state_dim + c] * h.data()[c]).sum::<f64>())
        .collect();
    let t: Vec<f64> = a.iter().enumerate().map(|(i, v)| (v + proj[i % hid]).tanh()).collect();
    let z = conv_oracle(&Tensor::new([8, 4, hid], t).unwrap(), get("conv2.kernel"), get("conv2.bias"));
    let want: Vec<f64> = z.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
    assert!(max_abs_diff(tape.value(g).data(), &want) < 1e-10);
}

#[test]
fn fusion_values() {
    let mut tape = Tape::<f64>::new();
    let one = tape.constant(Tensor::full([2, 2, 1], 1.0));
    let zero = tape.constant(Tensor::zeros([2, 2, 1]));
    let half = tape.constant(Tensor::full([2, 2, 1], 0.5));
    let cases = [
        (FusionMode::F1, 1.0, 1.0),
        (FusionMode::F2, 1.0, 0.5),
        (FusionMode::F3, 1.0, 0.75),
        (FusionMode::F4, 1.0, 0.75),
    ];
    for (mode, at_one_zero, at_halves) in cases {
        let f = fuse_gates(&mut tape, one, zero, mode).unwrap();
        assert!(tape.value(f).data().iter().all(|&v| v == at_one_zero), "{mode}");
        let f = fuse_gates(&mut tape, half, half, mode).unwrap();
        let want = if mode == FusionMode::F1 { 1.0 } else { at_halves };
        assert!(tape.value(f).data().iter().all(|&v| v == want), "{mode}");
    }
}

#[test]
fn fusion_adjoints() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let gc: Tensor<f64> = Tensor::from_fn([3, 4, 1], |_| rand::Rng::random_range(&mut rng, 0.01..0.99));
    let gof: Tensor<f64> = Tensor::from_fn([3, 4, 1], |_| rand::Rng::random_range(&mut rng, 0.01..0.99));
    let n = 12.0;
    for mode in [FusionMode::F3, FusionMode::F4] {
        let mut tape = Tape::new();
        let (a, b) = (tape.param(gc.clone()), tape.param(gof.clone()));
        let f = fuse_gates(&mut tape, a, b, mode).unwrap();
        let m = tape.mean_all(f);
        let g = tape.backward(m).unwrap();
        for i in 0..12 {
            let (da, db) = (g.get(a).unwrap().data()[i], g.get(b).unwrap().data()[i]);
            let (wa, wb) = match mode {
                FusionMode::F4 => (1.0 / n, 1.0 / n),
                _ => ((1.0 - gof.data()[i]) / n, (1.0 - gc.data()[i]) / n),
            };
            assert!((da - wa).abs() < 1e-15 && (db - wb).abs() < 1e-15);
        }
    }
}

#[test]
fn default_geometry_propagates_to_feature() {
    let cfg = NetworkConfig::default();
    assert_eq!(cfg.conv3_hw(), (8, 4));
    assert_eq!(cfg.flat_dim(), 1024);
    let p = params(&cfg, 8);
    let c = clip(&cfg, 1, 9);
    let mut tape = Tape::new();
    let bp = p.bind(&mut tape, false);
    let frames = c.bind(&mut tape);
    let h = tape.constant(Tensor::zeros([cfg.state_dim]));
    let out = frame_forward(&mut tape, frames[0].0, frames[0].1, h, &bp, &cfg).unwrap();
    assert_eq!(tape.value(out.feature).shape(), &[128]);
    assert_eq!(tape.value(out.gates.fused.unwrap()).shape(), &[32, 16, 1]);
    assert!(tape.value(out.state).data().iter().all(|v| v.abs() < 1.0));
}

#[test]
fn gate_of_one_equals_ungated_network() {
    let gated = NetworkConfig::tiny();
    let p = params(&gated, 10);
    let ungated = NetworkConfig { gate_mode: GateMode::None, ..gated.clone() };
    let keep: IndexMap<String, Tensor<f64>> =
        p.iter().filter(|(n, _)| !n.starts_with("gate_")).map(|(n, t)| (n.to_string(), t.clone())).collect();
    let p_none = NetworkParams::from_named(&ungated, keep).unwrap();
    let c = clip(&gated, 1, 11);

    let mut tape = Tape::new();
    let bp = p.bind(&mut tape, false);
    let frames = c.bind(&mut tape);
    let h = tape.constant(Tensor::zeros([gated.state_dim]));
    let one = tape.constant(Tensor::full([8, 4, 1], 1.0));
    let forced = frame_forward_with_gate(&mut tape, frames[0].0, frames[0].1, h, &bp, &gated, Some(one)).unwrap();

    let mut tape2 = Tape::new();
    let bp2 = p_none.bind(&mut tape2, false);
    let frames2 = c.bind(&mut tape2);
    let h2 = tape2.constant(Tensor::zeros([gated.state_dim]));
    let base = frame_forward(&mut tape2, frames2[0].0, frames2[0].1, h2, &bp2, &ungated).unwrap();
    assert!(base.gates.fused.is_none() && base.gates.color.is_none());
    assert_eq!(tape.value(forced.feature), tape2.value(base.feature));
}

#[test]
fn single_frame_feature_is_frame_feature() {
    let cfg = NetworkConfig::tiny();
    let p = params(&cfg, 12);
    let c = clip(&cfg, 1, 13);
    let mut tape = Tape::new();
    let bp = p.bind(&mut tape, false);
    let frames = c.bind(&mut tape);
    let s = sequence_forward(&mut tape, &frames, &bp, &cfg).unwrap();
    assert_eq!(tape.value(s.feature), tape.value(s.frames[0].feature));
    assert!(sequence_forward(&mut tape, &[], &bp, &cfg).is_err());
}

#[test]
fn frame_order_matters() {
    let cfg = NetworkConfig::tiny();
    let net = Network::new(cfg.clone(), params(&cfg, 14)).unwrap();
    let c = clip(&cfg, 3, 15);
    let mut rev = c.clone();
    rev.frames.reverse();
    rev.flows.reverse();
    let a = net.infer(&c).unwrap().feature;
    let b = net.infer(&rev).unwrap().feature;
    assert!(a.max_abs_diff(&b) > 1e-6);
}

#[test]
fn repeated_frames_still_evolve_through_the_state() {
    let cfg = NetworkConfig { use_prev_state: false, ..NetworkConfig::tiny() };
    let net = Network::new(cfg.clone(), params(&cfg, 16)).unwrap();
    let one = clip(&cfg, 1, 17);
    let c = ClipInput { frames: vec![one.frames[0].clone(); 3], flows: vec![one.flows[0].clone(); 3] };
    let inf = net.infer(&c).unwrap();
    assert!(inf.frame_features[0].max_abs_diff(&inf.frame_features[1]) > 1e-6);
    assert!(inf.feature.all_finite());
}

#[test]
fn inference_matches_recorded_forward_bitwise() {
    for mode in GateMode::ALL {
        let cfg = NetworkConfig { gate_mode: mode, ..NetworkConfig::tiny() };
        let p = params(&cfg, 18);
        let c = clip(&cfg, 4, 19);
        let mut tape = Tape::new();
        let bp = p.bind(&mut tape, true);
        let frames = c.bind(&mut tape);
        let s = sequence_forward(&mut tape, &frames, &bp, &cfg).unwrap();
        let inf = Network::new(cfg, p).unwrap().infer(&c).unwrap();
        assert_eq!(tape.value(s.feature), &inf.feature, "{mode}");
    }
}

#[test]
fn f3_and_f4_forward_are_identical() {
    let f3 = NetworkConfig { fusion: FusionMode::F3, ..NetworkConfig::tiny() };
    let f4 = NetworkConfig { fusion: FusionMode::F4, ..NetworkConfig::tiny() };
    let p = params(&f3, 20);
    let c = clip(&f3, 3, 21);
    let a = Network::new(f3, p.clone()).unwrap().infer(&c).unwrap();
    let b = Network::new(f4, p).unwrap().infer(&c).unwrap();
    assert_eq!(a.feature, b.feature);
}

#[test]
fn single_gate_modes_report_their_gate() {
    for (mode, color, flow) in
        [(GateMode::ColorOnly, true, false), (GateMode::FlowOnly, false, true), (GateMode::ConcatSingle, false, false)]
    {
        let cfg = NetworkConfig { gate_mode: mode, ..NetworkConfig::tiny() };
        let net = Network::new(cfg.clone(), params(&cfg, 22)).unwrap();
        let inf = net.infer(&clip(&cfg, 2, 23)).unwrap();
        for g in &inf.gates {
            assert_eq!(g.color.is_some(), color);
            assert_eq!(g.flow.is_some(), flow);
            let fused = g.fused.as_ref().unwrap();
            assert!(fused.values.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}

#[test]
fn config_invariants() {
    let bad = NetworkConfig { feature_dim: 64, state_dim: 32, ..NetworkConfig::tiny() };
    assert!(bad.validate().is_err());
    let even = NetworkConfig { kernel_size: 4, ..NetworkConfig::tiny() };
    assert!(even.validate().is_err());
    assert_eq!(NetworkConfig::default().fusion, FusionMode::F4);
    assert!(Network::new(NetworkConfig::tiny(), params(&NetworkConfig::default(), 0)).is_err());
}
