use std::fmt::Write as _;
use std::ops::ControlFlow;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{AdamConfig, AdamState};
use super::sampling::{augment, build_batch, sample_subsequence};
use super::stats::ChannelStats;
use crate::data::{sub_seed, Dataset, VideoClip};
use crate::error::{Error, Result};
use crate::losses::{total_loss, ClassifierParams, LossBreakdown, PairLossInputs};
use crate::network::{sequence_forward, ClipInput, Network, NetworkConfig, NetworkParams};
use crate::tape::Tape;
use crate::tensor::{Real, Tensor};

/// Optimization and sampling settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub margin: f64,
    pub pos_pairs_per_batch: usize,
    pub neg_pairs_per_batch: usize,
    pub subseq_len: usize,
    pub crop_height: usize,
    pub crop_width: usize,
    pub flip_probability: f64,
    pub epochs: usize,
    pub rng_seed: u64,
    /// Adds the gate regularizer terms to the objective.
    pub use_regularizer: bool,
    /// Batches per epoch; `None` means `ceil(identities / 10)`.
    pub batches_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            margin: 2.0,
            pos_pairs_per_batch: 10,
            neg_pairs_per_batch: 10,
            subseq_len: 16,
            crop_height: 56,
            crop_width: 28,
            flip_probability: 0.5,
            epochs: 100,
            rng_seed: 0,
            use_regularizer: true,
            batches_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        for (name, v) in
            [("learning_rate", self.learning_rate), ("adam_epsilon", self.adam_epsilon), ("margin", self.margin)]
        {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return bad(format!("flip_probability must lie in [0, 1], got {}", self.flip_probability));
        }
        if self.pos_pairs_per_batch + self.neg_pairs_per_batch == 0 || self.subseq_len == 0 || self.epochs == 0 {
            return bad("pair counts, subseq_len and epochs must be positive".into());
        }
        if self.crop_height == 0
            || self.crop_width == 0
            || !self.crop_height.is_multiple_of(4)
            || !self.crop_width.is_multiple_of(4)
        {
            return bad(format!(
                "crop extents must be positive multiples of 4, got {}x{}",
                self.crop_height, self.crop_width
            ));
        }
        if self.batches_per_epoch == Some(0) {
            return bad("batches_per_epoch must be positive".into());
        }
        Ok(())
    }

    pub fn batches_for(&self, identities: usize) -> usize {
        self.batches_per_epoch.unwrap_or(identities.div_ceil(10).max(1))
    }

    pub fn to_kv(&self) -> Vec<(&'static str, String)> {
        vec![
            ("learning_rate", self.learning_rate.to_string()),
            ("adam_beta1", self.adam_beta1.to_string()),
            ("adam_beta2", self.adam_beta2.to_string()),
            ("adam_epsilon", self.adam_epsilon.to_string()),
            ("margin", self.margin.to_string()),
            ("pos_pairs_per_batch", self.pos_pairs_per_batch.to_string()),
            ("neg_pairs_per_batch", self.neg_pairs_per_batch.to_string()),
            ("subseq_len", self.subseq_len.to_string()),
            ("crop_height", self.crop_height.to_string()),
            ("crop_width", self.crop_width.to_string()),
            ("flip_probability", self.flip_probability.to_string()),
            ("epochs", self.epochs.to_string()),
            ("rng_seed", self.rng_seed.to_string()),
            ("use_regularizer", self.use_regularizer.to_string()),
            ("batches_per_epoch", self.batches_per_epoch.map_or("auto".into(), |b| b.to_string())),
        ]
    }

    /// Applies one `key = value` setting. Returns `Ok(false)` for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<N: std::str::FromStr>(key: &str, v: &str) -> Result<N> {
            v.trim().parse().map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse '{v}'")))
        }
        match key {
            "learning_rate" => self.learning_rate = num(key, value)?,
            "adam_beta1" => self.adam_beta1 = num(key, value)?,
            "adam_beta2" => self.adam_beta2 = num(key, value)?,
            "adam_epsilon" => self.adam_epsilon = num(key, value)?,
            "margin" => self.margin = num(key, value)?,
            "pos_pairs_per_batch" => self.pos_pairs_per_batch = num(key, value)?,
            "neg_pairs_per_batch" => self.neg_pairs_per_batch = num(key, value)?,
            "subseq_len" => self.subseq_len = num(key, value)?,
            "crop_height" => self.crop_height = num(key, value)?,
            "crop_width" => self.crop_width = num(key, value)?,
            "flip_probability" => self.flip_probability = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "rng_seed" => self.rng_seed = num(key, value)?,
            "use_regularizer" => self.use_regularizer = crate::network::parse_bool(key, value)?,
            "batches_per_epoch" => {
                self.batches_per_epoch = match value.trim() {
                    "auto" => None,
                    v => Some(num(key, v)?),
                }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Everything needed to continue training: parameters, classifier,
/// optimizer moments and the number of completed epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    pub network: Network<T>,
    pub classifier: ClassifierParams<T>,
    pub adam: AdamState<T>,
    pub epochs_done: usize,
    /// Training person ids; classifier row `c` scores `identities[c]`.
    pub identities: Vec<usize>,
    pub stats: ChannelStats,
}

impl<T: Real> TrainState<T> {
    /// Fresh parameters drawn from `train_cfg.rng_seed`.
    pub fn init(net_cfg: &NetworkConfig, train_cfg: &TrainConfig, train: &Dataset) -> Result<Self> {
        net_cfg.validate()?;
        train_cfg.validate()?;
        let identities = train.identities();
        if identities.len() < 2 {
            return Err(Error::Data("training needs at least 2 identities".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(train_cfg.rng_seed, &[10]));
        let params = NetworkParams::init(net_cfg, &mut rng)?;
        let classifier = ClassifierParams::init(identities.len(), net_cfg.feature_dim, &mut rng);
        Ok(TrainState {
            network: Network { config: net_cfg.clone(), params },
            classifier,
            adam: AdamState::new(),
            epochs_done: 0,
            identities,
            stats: ChannelStats::compute(train)?,
        })
    }

    pub fn class_of(&self, person: usize) -> Option<usize> {
        self.identities.binary_search(&person).ok()
    }

    /// Deterministic classification of a whole clip: center crop, no flip,
    /// first `subseq_len` frames.
    pub fn classify(&self, clip: &VideoClip, train_cfg: &TrainConfig) -> Result<usize> {
        let (ch, cw) = (train_cfg.crop_height, train_cfg.crop_width);
        if ch > clip.height || cw > clip.width {
            return Err(Error::InvalidConfig(format!("crop {ch}x{cw} exceeds frame {}x{}", clip.height, clip.width)));
        }
        let c = clip.subclip(0, train_cfg.subseq_len).crop((clip.height - ch) / 2, (clip.width - cw) / 2, ch, cw)?;
        let input: ClipInput<T> = self.stats.normalize(&c)?;
        let inf = self.network.infer(&input)?;
        Ok(self.classifier.predict(&inf.feature))
    }

    /// Fraction of `clips` classified as their own identity.
    pub fn identification_accuracy(&self, clips: &[VideoClip], train_cfg: &TrainConfig) -> Result<f64> {
        let mut hits = 0;
        for c in clips {
            if Some(self.classify(c, train_cfg)?) == self.class_of(c.person_id) {
                hits += 1;
            }
        }
        Ok(hits as f64 / clips.len().max(1) as f64)
    }
}

/// One optimizer step's record.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchRecord {
    pub epoch: usize,
    pub batch: usize,
    /// Componentwise mean over the batch's pairs.
    pub loss: LossBreakdown,
    /// Mean applied-gate value over every frame of every clip in the batch.
    pub mean_gate: Option<f64>,
    /// Share of the batch's clips whose classifier argmax was correct.
    pub accuracy: f64,
}

/// Per-batch training records; serialized as a tab-separated table.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<BatchRecord>,
}

const LOG_HEADER: &str = "epoch\tbatch\tl_id_i\tl_id_j\tl_ver\tl_gate_i\tl_gate_j\ttotal\tmean_gate\taccuracy";

impl BatchRecord {
    pub fn to_line(&self) -> String {
        let l = &self.loss;
        let gate = self.mean_gate.map_or("-".to_string(), |g| g.to_string());
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.epoch, self.batch, l.l_id_i, l.l_id_j, l.l_ver, l.l_gate_i, l.l_gate_j, l.total, gate, self.accuracy
        )
    }
}

impl TrainingLog {
    pub fn header() -> &'static str {
        LOG_HEADER
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from(LOG_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(s, "{}", r.to_line());
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |n: usize| Error::Data(format!("training log line {}: malformed record", n + 1));
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if n == 0 || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 10 {
                return Err(bad(n));
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad(n));
            records.push(BatchRecord {
                epoch: f[0].parse().map_err(|_| bad(n))?,
                batch: f[1].parse().map_err(|_| bad(n))?,
                loss: LossBreakdown {
                    l_id_i: num(2)?,
                    l_id_j: num(3)?,
                    l_ver: num(4)?,
                    l_gate_i: num(5)?,
                    l_gate_j: num(6)?,
                    total: num(7)?,
                },
                mean_gate: if f[8] == "-" { None } else { Some(num(8)?) },
                accuracy: num(9)?,
            });
        }
        Ok(TrainingLog { records })
    }

    /// Mean of `mean_gate` over the records of `epoch`.
    pub fn epoch_mean_gate(&self, epoch: usize) -> Option<f64> {
        let g: Vec<f64> = self.records.iter().filter(|r| r.epoch == epoch).filter_map(|r| r.mean_gate).collect();
        (!g.is_empty()).then(|| g.iter().sum::<f64>() / g.len() as f64)
    }
}

fn prepare<T: Real>(
    clip: &VideoClip,
    cfg: &TrainConfig,
    stats: &ChannelStats,
    rng: &mut ChaCha8Rng,
) -> Result<ClipInput<T>> {
    let sub = sample_subsequence(clip, cfg.subseq_len, rng)?;
    let aug = augment(&sub, (cfg.crop_height, cfg.crop_width), cfg.flip_probability, rng)?;
    stats.normalize(&aug)
}

struct PairResult<T> {
    grads: IndexMap<String, Tensor<T>>,
    cls_grad: Tensor<T>,
    loss: LossBreakdown,
    gate_sum: f64,
    gate_frames: usize,
    correct: usize,
}

fn run_pair<T: Real>(
    state: &TrainState<T>,
    cfg: &TrainConfig,
    a: (&ClipInput<T>, usize),
    b: (&ClipInput<T>, usize),
) -> Result<PairResult<T>> {
    let net_cfg = &state.network.config;
    let mut tape = Tape::new();
    let bp = state.network.params.bind(&mut tape, true);
    let cls = tape.param(state.classifier.weight.clone());
    let ia = a.0.bind(&mut tape);
    let ib = b.0.bind(&mut tape);
    let sa = sequence_forward(&mut tape, &ia, &bp, net_cfg)?;
    let sb = sequence_forward(&mut tape, &ib, &bp, net_cfg)?;
    let ga: Vec<_> = sa.frames.iter().filter_map(|f| f.gates.fused).collect();
    let gb: Vec<_> = sb.frames.iter().filter_map(|f| f.gates.fused).collect();
    let gated = net_cfg.gate_mode.is_gated();
    let reg = gated && cfg.use_regularizer;
    let terms = total_loss(
        &mut tape,
        &PairLossInputs {
            v_i: sa.feature,
            v_j: sb.feature,
            id_i: a.1,
            id_j: b.1,
            gates_i: reg.then_some(&ga[..]),
            gates_j: reg.then_some(&gb[..]),
            cls_weight: cls,
            margin: cfg.margin,
        },
    )?;
    let loss = terms.breakdown(&tape);
    if !loss.total.is_finite() {
        return Err(Error::NonFinite { context: "training loss".into(), detail: format!("{loss:?}") });
    }
    let mut gate_sum = 0.0;
    for &g in ga.iter().chain(&gb) {
        gate_sum += tape.value(g).mean().f64();
    }
    let correct = [(sa.feature, a.1), (sb.feature, b.1)]
        .iter()
        .filter(|(v, id)| state.classifier.predict(tape.value(*v)) == *id)
        .count();
    let mut g = tape.backward(terms.total)?;
    let grads = bp.iter().map(|(name, v)| (name.to_string(), g.take(v).expect("parameter adjoint"))).collect();
    let cls_grad = g.take(cls).expect("classifier adjoint");
    Ok(PairResult { grads, cls_grad, loss, gate_sum, gate_frames: ga.len() + gb.len(), correct })
}

/// Runs one batch: forward/backward of every pair, gradient averaging in
/// pair order, and one Adam step.
fn train_batch<T: Real>(
    state: &mut TrainState<T>,
    train: &Dataset,
    cfg: &TrainConfig,
    epoch: usize,
    batch: usize,
) -> Result<BatchRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.rng_seed, &[20, epoch as u64, batch as u64]));
    let pairs = build_batch(train, cfg.pos_pairs_per_batch, cfg.neg_pairs_per_batch, &mut rng)?;
    let n = pairs.len();
    let mut sum: IndexMap<String, Tensor<T>> = IndexMap::new();
    let mut cls_sum = Tensor::zeros(state.classifier.weight.shape().to_vec());
    let mut losses = Vec::with_capacity(n);
    let (mut gate_sum, mut gate_frames, mut correct) = (0.0, 0usize, 0usize);
    for p in &pairs {
        let (ca, cb) = (&train.clips[p.a], &train.clips[p.b]);
        let lookup = |c: &VideoClip| {
            state
                .class_of(c.person_id)
                .ok_or_else(|| Error::Data(format!("person {} is not a training identity", c.person_id)))
        };
        let (ida, idb) = (lookup(ca)?, lookup(cb)?);
        let ia = prepare::<T>(ca, cfg, &state.stats, &mut rng)?;
        let ib = prepare::<T>(cb, cfg, &state.stats, &mut rng)?;
        let r = run_pair(state, cfg, (&ia, ida), (&ib, idb)).map_err(|e| match e {
            Error::NonFinite { context, detail } => {
                Error::NonFinite { context: format!("{context} (epoch {epoch}, batch {batch})"), detail }
            }
            other => other,
        })?;
        for (name, g) in r.grads {
            match sum.get_mut(&name) {
                Some(acc) => acc.add_assign(&g),
                None => {
                    sum.insert(name, g);
                }
            }
        }
        cls_sum.add_assign(&r.cls_grad);
        losses.push(r.loss);
        gate_sum += r.gate_sum;
        gate_frames += r.gate_frames;
        correct += r.correct;
    }
    let inv = T::c(1.0 / n as f64);
    for g in sum.values_mut().chain(std::iter::once(&mut cls_sum)) {
        g.data_mut().iter_mut().for_each(|v| *v *= inv);
    }
    let adam_cfg = cfg.adam();
    let TrainState { network, classifier, adam, .. } = state;
    let items = network.params.iter_mut().map(|(name, p)| (name, p, &sum[name])).chain(std::iter::once((
        "cls.weight",
        &mut classifier.weight,
        &cls_sum,
    )));
    adam.step(&adam_cfg, items).map_err(|e| match e {
        Error::NonFinite { detail, .. } => {
            Error::NonFinite { context: format!("adam_step (epoch {epoch}, batch {batch})"), detail }
        }
        other => other,
    })?;
    Ok(BatchRecord {
        epoch,
        batch,
        loss: LossBreakdown::mean(&losses),
        mean_gate: (gate_frames > 0).then(|| gate_sum / gate_frames as f64),
        accuracy: correct as f64 / (2 * n) as f64,
    })
}

/// Trains from `state` until `cfg.epochs` epochs are complete or
/// `on_epoch` breaks. `on_epoch` sees the state after each epoch and that
/// epoch's records.
pub fn train_with<T: Real>(
    state: &mut TrainState<T>,
    train: &Dataset,
    cfg: &TrainConfig,
    log: &mut TrainingLog,
    mut on_epoch: impl FnMut(&TrainState<T>, &[BatchRecord]) -> ControlFlow<()>,
) -> Result<()> {
    cfg.validate()?;
    let (ch, cw) = (cfg.crop_height, cfg.crop_width);
    if (ch, cw) != (state.network.config.height, state.network.config.width) {
        return Err(Error::InvalidConfig(format!(
            "network expects {}x{} inputs but crops are {ch}x{cw}",
            state.network.config.height, state.network.config.width
        )));
    }
    if ch > train.height || cw > train.width {
        return Err(Error::InvalidConfig(format!("crop {ch}x{cw} exceeds frame {}x{}", train.height, train.width)));
    }
    let batches = cfg.batches_for(state.identities.len());
    while state.epochs_done < cfg.epochs {
        let epoch = state.epochs_done;
        let start = log.records.len();
        for b in 0..batches {
            let rec = train_batch(state, train, cfg, epoch, b)?;
            log.records.push(rec);
        }
        state.epochs_done += 1;
        if on_epoch(state, &log.records[start..]).is_break() {
            break;
        }
    }
    Ok(())
}

/// Trains a fresh model for `cfg.epochs` epochs.
pub fn train<T: Real>(
    train: &Dataset,
    net_cfg: &NetworkConfig,
    cfg: &TrainConfig,
) -> Result<(TrainState<T>, TrainingLog)> {
    let mut state = TrainState::init(net_cfg, cfg, train)?;
    let mut log = TrainingLog::default();
    train_with(&mut state, train, cfg, &mut log, |_, _| ControlFlow::Continue(()))?;
    Ok((state, log))
}
