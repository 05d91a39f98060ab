//! Central finite-difference verification of tape adjoints.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tape::{OpKind, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Denominator floor of the relative error, so coordinates whose true
    /// derivative is zero are judged on absolute error.
    pub scale_floor: f64,
    /// Check at most this many coordinates per input (seeded sample);
    /// `None` checks every coordinate.
    pub max_coords_per_input: Option<usize>,
    pub seed: u64,
    /// Negative-control hook forwarded to [`Tape::corrupt_adjoint`].
    pub corrupt: Option<(OpKind, f64)>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { epsilon: 1e-5, scale_floor: 1e-6, max_coords_per_input: None, seed: 0, corrupt: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordReport {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub coords_checked: usize,
    /// Worst coordinate per input.
    pub worst: Vec<Option<CoordReport>>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Relative error with a denominator floor.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the tape adjoints of scalar `f` w.r.t. each of `inputs` against
/// central differences `(f(x+e) - f(x-e)) / 2e`, returning the worst
/// relative error. Runs in 64-bit mode only.
///
/// Outputs of `stop_gradient` are held at their base-point values while
/// perturbing, so the numeric derivative treats stopped expressions as
/// constants exactly as the adjoint does.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut frozen = Vec::new();
    let eval = |values: &[Tensor<f64>], frozen: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        tape.replay_stopped(frozen.to_vec());
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    if let Some((kind, factor)) = opts.corrupt {
        tape.corrupt_adjoint(kind, factor);
    }
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let base = tape.value(out).item();
    if !base.is_finite() {
        return Err(Error::NonFinite { context: "grad_check".into(), detail: format!("f(x) = {base}") });
    }
    let grads = tape.backward(out)?;
    frozen.extend(tape.stopped_values());

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport { worst: vec![None; inputs.len()], ..Default::default() };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).expect("leaf adjoint").data().to_vec();
        let n = input.numel();
        let coords: Vec<usize> = match opts.max_coords_per_input {
            Some(m) if m < n => {
                let mut c = sample(&mut rng, n, m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for idx in coords {
            let x0 = input.data()[idx];
            work[i].data_mut()[idx] = x0 + opts.epsilon;
            let fp = eval(&work, &frozen)?;
            work[i].data_mut()[idx] = x0 - opts.epsilon;
            let fm = eval(&work, &frozen)?;
            work[i].data_mut()[idx] = x0;
            let numeric = (fp - fm) / (2.0 * opts.epsilon);
            let a = analytic[idx];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::NonFinite {
                    context: "grad_check".into(),
                    detail: format!("input {i} index {idx}: analytic {a}, numeric {numeric}"),
                });
            }
            let rel = relative_error(a, numeric, opts.scale_floor);
            report.coords_checked += 1;
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            report.max_rel_error = report.max_rel_error.max(rel);
            let worse = report.worst[i].as_ref().is_none_or(|w| rel > w.rel_error);
            if worse {
                report.worst[i] = Some(CoordReport { input: i, index: idx, analytic: a, numeric, rel_error: rel });
            }
        }
    }
    Ok(report)
}

/// Result of checking one operator in isolation.
#[derive(Clone, Debug)]
pub struct OperatorCheck {
    pub op: OpKind,
    pub report: GradCheckReport,
}

type CaseFn = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

/// Reduces `out` to a scalar with fixed, non-uniform weights so every
/// output coordinate contributes a distinct adjoint.
fn probe(tape: &mut Tape<f64>, out: Var) -> Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let w = Tensor::from_fn(shape, |i| (1.3 * i as f64 + 0.7).sin());
    let w = tape.constant(w);
    let m = tape.mul(out, w)?;
    Ok(tape.mean_all(m))
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    use rand::Rng;
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Checks every differentiable operator on small random inputs.
pub fn operator_suite(seed: u64, opts: &GradCheckOptions) -> Result<Vec<OperatorCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |s: &[usize]| uniform(s, &mut rng);
    let cases: Vec<(OpKind, Vec<Tensor<f64>>, CaseFn)> = vec![
        (
            OpKind::Conv2d,
            vec![r(&[5, 4, 2]), r(&[3, 3, 2, 3]), r(&[3])],
            Box::new(|t, v| {
                let y = t.conv2d_same(v[0], v[1], v[2])?;
                probe(t, y)
            }),
        ),
        (
            OpKind::MaxPool,
            vec![r(&[5, 7, 3])],
            Box::new(|t, v| {
                let y = t.maxpool_2x2(v[0])?;
                probe(t, y)
            }),
        ),
        (
            OpKind::Tanh,
            vec![r(&[4, 3])],
            Box::new(|t, v| {
                let y = t.tanh(v[0]);
                probe(t, y)
            }),
        ),
        (
            OpKind::Sigmoid,
            vec![r(&[4, 3])],
            Box::new(|t, v| {
                let y = t.sigmoid(v[0]);
                probe(t, y)
            }),
        ),
        (
            OpKind::Dense,
            vec![r(&[4]), r(&[3, 4]), r(&[3])],
            Box::new(|t, v| {
                let y = t.dense(v[0], v[1], Some(v[2]))?;
                probe(t, y)
            }),
        ),
        (
            OpKind::AddVector,
            vec![r(&[3, 4, 2]), r(&[2])],
            Box::new(|t, v| {
                let y = t.add_broadcast_vector(v[0], v[1])?;
                probe(t, y)
            }),
        ),
        (
            OpKind::MulGate,
            vec![r(&[3, 4, 1]), r(&[3, 4, 2])],
            Box::new(|t, v| {
                let y = t.mul_broadcast_gate(v[0], v[1])?;
                probe(t, y)
            }),
        ),
        (
            OpKind::Concat,
            vec![r(&[3, 2, 2]), r(&[3, 2, 3])],
            Box::new(|t, v| {
                let y = t.concat_channels(v[0], v[1])?;
                probe(t, y)
            }),
        ),
        (
            OpKind::StopGradient,
            vec![r(&[6])],
            Box::new(|t, v| {
                let sq = t.mul(v[0], v[0])?;
                let s = t.stop_gradient(sq);
                let y = t.add(v[0], s)?;
                probe(t, y)
            }),
        ),
        (
            OpKind::Add,
            vec![r(&[3, 4]), r(&[3, 4])],
            Box::new(|t, v| {
                let y = t.add(v[0], v[1])?;
                probe(t, y)
            }),
        ),
        (
            OpKind::Sub,
            vec![r(&[3, 4]), r(&[3, 4])],
            Box::new(|t, v| {
                let y = t.sub(v[0], v[1])?;
                probe(t, y)
            }),
        ),
        (
            OpKind::Mul,
            vec![r(&[3, 4]), r(&[3, 4])],
            Box::new(|t, v| {
                let y = t.mul(v[0], v[1])?;
                probe(t, y)
            }),
        ),
        (
            OpKind::Maximum,
            vec![r(&[3, 4]), r(&[3, 4])],
            Box::new(|t, v| {
                let y = t.maximum(v[0], v[1])?;
                probe(t, y)
            }),
        ),
        (
            OpKind::Affine,
            vec![r(&[6])],
            Box::new(|t, v| {
                let y = t.affine(v[0], 1.7, -0.3);
                probe(t, y)
            }),
        ),
        (
            OpKind::Relu,
            vec![r(&[8])],
            Box::new(|t, v| {
                let y = t.relu(v[0]);
                probe(t, y)
            }),
        ),
        (
            OpKind::Norm,
            vec![r(&[5])],
            Box::new(|t, v| {
                let y = t.norm(v[0]);
                probe(t, y)
            }),
        ),
        (
            OpKind::MeanAll,
            vec![r(&[3, 3])],
            Box::new(|t, v| {
                let y = t.mean_all(v[0]);
                probe(t, y)
            }),
        ),
        (
            OpKind::Flatten,
            vec![r(&[2, 3, 2])],
            Box::new(|t, v| {
                let y = t.flatten(v[0]);
                probe(t, y)
            }),
        ),
        (
            OpKind::AddN,
            vec![r(&[4]), r(&[4]), r(&[4])],
            Box::new(|t, v| {
                let y = t.add_n(v)?;
                probe(t, y)
            }),
        ),
        (OpKind::CrossEntropy, vec![r(&[5])], Box::new(|t, v| t.cross_entropy(v[0], 2))),
    ];
    cases.into_iter().map(|(op, inputs, f)| Ok(OperatorCheck { op, report: grad_check(f, &inputs, opts)? })).collect()
}

/// End-to-end check of the pair objective (both identification terms, the
/// verification term for a same-person pair, and both gate terms) w.r.t.
/// every network parameter and the classifier.
///
/// Gate output biases are shifted to -1.5 so the fused gates start below
/// 0.5 and the regularizer is active.
pub fn network_suite(
    cfg: &crate::network::NetworkConfig,
    frames: usize,
    seed: u64,
    opts: &GradCheckOptions,
) -> Result<(Vec<String>, GradCheckReport)> {
    use crate::losses::{total_loss, ClassifierParams, PairLossInputs};
    use crate::network::{sequence_forward, BoundParams, NetworkParams};

    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = NetworkParams::<f64>::init(cfg, &mut rng)?;
    for (name, t) in params.iter_mut() {
        if name.starts_with("gate_") && name.ends_with("conv2.bias") {
            t.data_mut().iter_mut().for_each(|b| *b = -1.5);
        }
    }
    let cls = ClassifierParams::<f64>::init(3, cfg.feature_dim, &mut rng);
    let clip = |rng: &mut ChaCha8Rng| -> Vec<(Tensor<f64>, Tensor<f64>)> {
        (0..frames)
            .map(|_| {
                (
                    uniform(&[cfg.height, cfg.width, cfg.color_channels], rng),
                    uniform(&[cfg.height, cfg.width, cfg.flow_channels], rng),
                )
            })
            .collect()
    };
    let (a, b) = (clip(&mut rng), clip(&mut rng));
    let mut names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
    let mut inputs: Vec<Tensor<f64>> = params.iter().map(|(_, t)| t.clone()).collect();
    names.push("cls.weight".into());
    inputs.push(cls.weight);
    let n_params = params.len();
    let cfg = cfg.clone();
    let param_names = names.clone();
    let f = move |tape: &mut Tape<f64>, v: &[Var]| -> Result<Var> {
        let bp = BoundParams::from_vars(param_names[..n_params].iter().cloned().zip(v[..n_params].iter().copied()));
        let mut bind = |c: &[(Tensor<f64>, Tensor<f64>)]| -> Vec<(Var, Var)> {
            c.iter().map(|(x, o)| (tape.constant(x.clone()), tape.constant(o.clone()))).collect()
        };
        let (ia, ib) = (bind(&a), bind(&b));
        let sa = sequence_forward(tape, &ia, &bp, &cfg)?;
        let sb = sequence_forward(tape, &ib, &bp, &cfg)?;
        let ga: Vec<Var> = sa.frames.iter().filter_map(|f| f.gates.fused).collect();
        let gb: Vec<Var> = sb.frames.iter().filter_map(|f| f.gates.fused).collect();
        let gated = cfg.gate_mode.is_gated();
        let terms = total_loss(
            tape,
            &PairLossInputs {
                v_i: sa.feature,
                v_j: sb.feature,
                id_i: 1,
                id_j: 1,
                gates_i: gated.then_some(&ga[..]),
                gates_j: gated.then_some(&gb[..]),
                cls_weight: v[n_params],
                margin: 2.0,
            },
        )?;
        Ok(terms.total)
    };
    Ok((names, grad_check(f, &inputs, opts)?))
}
