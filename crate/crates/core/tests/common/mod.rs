//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use gated_reid::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

pub fn conv_oracle(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let (h, w, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (ks, cout) = (k.shape()[0], k.shape()[3]);
    let pad = (ks as isize - 1) / 2;
    let mut out = vec![0.0; h * w * cout];
    for y in 0..h {
        for xx in 0..w {
            for co in 0..cout {
                let mut acc = b.data()[co];
                for ky in 0..ks {
                    for kx in 0..ks {
                        let iy = y as isize + ky as isize - pad;
                        let ix = xx as isize + kx as isize - pad;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        for ci in 0..cin {
                            let xv = x.data()[((iy as usize) * w + ix as usize) * cin + ci];
                            let kv = k.data()[((ky * ks + kx) * cin + ci) * cout + co];
                            acc += xv * kv;
                        }
                    }
                }
                out[(y * w + xx) * cout + co] = acc;
            }
        }
    }
    out
}

pub fn pool_oracle(x: &Tensor<f64>) -> (Vec<usize>, Vec<f64>) {
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Vec::new();
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut m = f64::NEG_INFINITY;
                for y in 2 * oy..(2 * oy + 2).min(h) {
                    for xx in 2 * ox..(2 * ox + 2).min(w) {
                        m = m.max(x.data()[(y * w + xx) * c + ch]);
                    }
                }
                out.push(m);
            }
        }
    }
    (vec![oh, ow, c], out)
}

pub fn tanh_all(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.tanh()).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Small geometry used by the training tests: 32x16 frames, 28x12 crops,
/// 3x3 kernels and narrow layers.
pub fn lean_network() -> gated_reid::NetworkConfig {
    gated_reid::NetworkConfig {
        height: 28,
        width: 12,
        conv1_out: 8,
        conv1_of_out: 8,
        gate_hidden: 16,
        state_dim: 32,
        feature_dim: 32,
        conv2_out: 12,
        conv3_out: 16,
        kernel_size: 3,
        ..Default::default()
    }
}

pub fn lean_train(epochs: usize, seed: u64) -> gated_reid::TrainConfig {
    gated_reid::TrainConfig {
        crop_height: 28,
        crop_width: 12,
        subseq_len: 8,
        epochs,
        rng_seed: seed,
        ..Default::default()
    }
}

pub fn lean_data(ids: usize, occluder_density: f64, seed: u64) -> gated_reid::GeneratorConfig {
    gated_reid::GeneratorConfig {
        num_identities: ids,
        height: 32,
        width: 16,
        frame_count_range: (20, 40),
        occluder_density,
        seed,
        ..Default::default()
    }
}
