//! Identification, verification and gate-regularizer losses, composed from
//! tape primitives so their gradients come from the same autodiff path as
//! the network.

use rand::Rng;

use crate::error::{Error, Result};
use crate::network::glorot_uniform;
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

/// Identity classifier `W_cls: [num_identities, feature_dim]`, no bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams<T> {
    pub weight: Tensor<T>,
}

impl<T: Real> ClassifierParams<T> {
    pub fn init<R: Rng + ?Sized>(num_identities: usize, feature_dim: usize, rng: &mut R) -> Self {
        ClassifierParams { weight: glorot_uniform(&[num_identities, feature_dim], rng) }
    }

    pub fn zeros(num_identities: usize, feature_dim: usize) -> Self {
        ClassifierParams { weight: Tensor::zeros([num_identities, feature_dim]) }
    }

    pub fn num_identities(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Index of the highest-scoring identity for `feature`.
    pub fn predict(&self, feature: &Tensor<T>) -> usize {
        let n = feature.numel();
        let mut best = (0, T::neg_infinity());
        for (c, row) in self.weight.data().chunks_exact(n).enumerate() {
            let s: T = row.iter().zip(feature.data()).map(|(&w, &x)| w * x).sum();
            if s > best.1 {
                best = (c, s);
            }
        }
        best.0
    }
}

/// `-log softmax(W v)[true_id]`.
pub fn identification_loss<T: Real>(tape: &mut Tape<T>, v: Var, true_id: usize, cls_weight: Var) -> Result<Var> {
    let logits = tape.dense(v, cls_weight, None)?;
    tape.cross_entropy(logits, true_id)
}

/// Contrastive loss: `½‖vi−vj‖²` for the same person, otherwise
/// `½ max(margin − ‖vi−vj‖, 0)²`.
pub fn verification_loss<T: Real>(tape: &mut Tape<T>, vi: Var, vj: Var, same_person: bool, margin: f64) -> Result<Var> {
    if margin.is_nan() || margin <= 0.0 {
        return Err(Error::InvalidConfig(format!("margin must be positive, got {margin}")));
    }
    let d = tape.sub(vi, vj)?;
    if same_person {
        let sq = tape.mul(d, d)?;
        let mean = tape.mean_all(sq);
        let n = tape.value(d).numel() as f64;
        Ok(tape.scale(mean, 0.5 * n))
    } else {
        let dist = tape.norm(d);
        let gap = tape.affine(dist, -1.0, margin);
        let hinge = tape.relu(gap);
        let sq = tape.mul(hinge, hinge)?;
        Ok(tape.scale(sq, 0.5))
    }
}

/// `max(0.5 − mean(g), 0) · (1 − mean(g))` over every position of `g`.
pub fn gate_regularizer<T: Real>(tape: &mut Tape<T>, gate: Var) -> Result<Var> {
    let m = tape.mean_all(gate);
    let shortfall = tape.affine(m, -1.0, 0.5);
    let shortfall = tape.relu(shortfall);
    let rest = tape.affine(m, -1.0, 1.0);
    tape.mul(shortfall, rest)
}

/// One training pair's inputs to [`total_loss`].
pub struct PairLossInputs<'a> {
    pub v_i: Var,
    pub v_j: Var,
    pub id_i: usize,
    pub id_j: usize,
    /// Applied gates per frame of each clip; `None` when the network has no
    /// gate or the regularizer is disabled (the gate terms are then zero).
    pub gates_i: Option<&'a [Var]>,
    pub gates_j: Option<&'a [Var]>,
    pub cls_weight: Var,
    pub margin: f64,
}

/// Tape handles of each loss component.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub l_id_i: Var,
    pub l_id_j: Var,
    pub l_ver: Var,
    pub l_gate_i: Var,
    pub l_gate_j: Var,
    pub total: Var,
}

/// Scalar loss components of one pair.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub l_id_i: f64,
    pub l_id_j: f64,
    pub l_ver: f64,
    pub l_gate_i: f64,
    pub l_gate_j: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn breakdown<T: Real>(&self, tape: &Tape<T>) -> LossBreakdown {
        let v = |x: Var| tape.value(x).item().f64();
        LossBreakdown {
            l_id_i: v(self.l_id_i),
            l_id_j: v(self.l_id_j),
            l_ver: v(self.l_ver),
            l_gate_i: v(self.l_gate_i),
            l_gate_j: v(self.l_gate_j),
            total: v(self.total),
        }
    }
}

impl LossBreakdown {
    pub fn components(&self) -> [f64; 5] {
        [self.l_id_i, self.l_id_j, self.l_ver, self.l_gate_i, self.l_gate_j]
    }

    /// Componentwise mean of several breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut out = LossBreakdown::default();
        for b in items {
            out.l_id_i += b.l_id_i / n;
            out.l_id_j += b.l_id_j / n;
            out.l_ver += b.l_ver / n;
            out.l_gate_i += b.l_gate_i / n;
            out.l_gate_j += b.l_gate_j / n;
            out.total += b.total / n;
        }
        out
    }
}

fn mean_gate_penalty<T: Real>(tape: &mut Tape<T>, gates: Option<&[Var]>, which: &str) -> Result<Var> {
    match gates {
        None => Ok(tape.constant(Tensor::scalar(T::zero()))),
        Some([]) => Err(Error::Data(format!("empty gate list for clip {which}"))),
        Some(gs) => {
            let terms = gs.iter().map(|&g| gate_regularizer(tape, g)).collect::<Result<Vec<_>>>()?;
            let sum = tape.add_n(&terms)?;
            Ok(tape.scale(sum, 1.0 / gs.len() as f64))
        }
    }
}

/// `L_id(v_i) + L_id(v_j) + L_ver(v_i, v_j) + mean_k L_gate(g_i^k) + mean_k L_gate(g_j^k)`.
pub fn total_loss<T: Real>(tape: &mut Tape<T>, p: &PairLossInputs<'_>) -> Result<LossTerms> {
    let l_id_i = identification_loss(tape, p.v_i, p.id_i, p.cls_weight)?;
    let l_id_j = identification_loss(tape, p.v_j, p.id_j, p.cls_weight)?;
    let l_ver = verification_loss(tape, p.v_i, p.v_j, p.id_i == p.id_j, p.margin)?;
    let l_gate_i = mean_gate_penalty(tape, p.gates_i, "i")?;
    let l_gate_j = mean_gate_penalty(tape, p.gates_j, "j")?;
    let total = tape.add_n(&[l_id_i, l_id_j, l_ver, l_gate_i, l_gate_j])?;
    Ok(LossTerms { l_id_i, l_id_j, l_ver, l_gate_i, l_gate_j, total })
}
