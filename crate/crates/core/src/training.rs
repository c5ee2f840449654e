//! Flow-matching training: loss, Adam, length-batched epoch plans, reward-weighted fine-tuning
//! and checkpoints.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::SequenceRecord;
use crate::coupling::{chain_cost, ot_assignment, CostWeights};
use crate::data::{Provenance, StructureEntry};
use crate::error::{Error, Result};
use crate::geometry::{
    conditional_chain_field, interpolate_chain, sample_noise_chain, FrameChain, Tangent, DEFAULT_NOISE_SCALE,
    DEFAULT_T_MIN,
};
use crate::model::{Mat, Model, ModelConfig, ModelInput, Recorded};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Residues² budget per batch; a batch of length-N chains holds ⌈budget/N²⌉ items.
    pub budget: usize,
    /// Probability that an item's whole sequence is hidden.
    pub mask_prob: f64,
    pub t_min: f64,
    /// Weight on the squared rotation error (rad²) relative to the translation error (Å²).
    pub rot_weight: f64,
    pub synthetic_fraction: f64,
    pub noise_scale: f64,
    pub epochs: usize,
    /// Stop after this many optimizer steps regardless of epochs.
    pub max_steps: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            budget: 20_000,
            mask_prob: 0.5,
            t_min: DEFAULT_T_MIN,
            rot_weight: 1.0,
            synthetic_fraction: 2.0 / 3.0,
            noise_scale: DEFAULT_NOISE_SCALE,
            epochs: 1,
            max_steps: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("train.lr must be a nonnegative number");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("train.eps must be positive");
        }
        if self.budget == 0 {
            return bad("train.budget must be positive");
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return bad("train.mask_prob must lie in [0, 1]");
        }
        if !(self.t_min > 0.0 && self.t_min < 1.0) {
            return bad("train.t_min must lie in (0, 1)");
        }
        if !(self.rot_weight.is_finite() && self.rot_weight > 0.0) {
            return bad("train.rot_weight must be positive");
        }
        if !(0.0..=1.0).contains(&self.synthetic_fraction) {
            return bad("train.synthetic_fraction must lie in [0, 1]");
        }
        if !(self.noise_scale > 0.0) {
            return bad("train.noise_scale must be positive");
        }
        Ok(())
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions {
            t_min: self.t_min,
            rot_weight: self.rot_weight,
        }
    }
}

/// Parameters, Adam moments, step counter and loss history.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub losses: Vec<f64>,
}

impl TrainState {
    pub fn new(params: Vec<f64>) -> Self {
        let n = params.len();
        TrainState {
            params,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            losses: Vec::new(),
        }
    }

    pub fn reset_moments(&mut self) {
        self.m.fill(0.0);
        self.v.fill(0.0);
    }

    /// One bias-corrected Adam update; entries with `trainable[i] == false` are left alone.
    pub fn adam_update(&mut self, grad: &[f64], trainable: &[bool], cfg: &TrainConfig) {
        self.step += 1;
        let k = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(k);
        let c2 = 1.0 - cfg.beta2.powi(k);
        for i in 0..self.params.len() {
            if !trainable[i] {
                continue;
            }
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            self.params[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
}

/// A training structure: data frames, sequence, per-residue loss exclusion.
#[derive(Clone, Debug)]
pub struct TrainItem {
    pub x0: FrameChain,
    pub seq: SequenceRecord,
    /// `true` excludes the residue from the loss.
    pub residue_mask: Vec<bool>,
    pub external: Option<Mat>,
}

impl TrainItem {
    pub fn new(x0: FrameChain, seq: SequenceRecord) -> Self {
        let n = x0.len();
        TrainItem {
            x0,
            seq,
            residue_mask: vec![false; n],
            external: None,
        }
    }
}

/// One fully specified loss term: data, its coupled noise, the sequence seen and the time.
#[derive(Clone, Debug)]
pub struct LossItem<'a> {
    pub x0: &'a FrameChain,
    pub x1: &'a FrameChain,
    pub seq: &'a SequenceRecord,
    pub residue_mask: &'a [bool],
    pub external: Option<&'a Mat>,
    pub t: f64,
}

/// Loss settings: the time floor and the weight of the rotation term.
///
/// `rot_weight = 1` is the plain `‖Δrot‖² + ‖Δtrans‖²` objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossOptions {
    pub t_min: f64,
    pub rot_weight: f64,
}

impl LossOptions {
    pub fn new(t_min: f64) -> Self {
        LossOptions { t_min, rot_weight: 1.0 }
    }
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions::new(DEFAULT_T_MIN)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    /// Batch objective (plain mean, or reward-weighted mean).
    pub loss: f64,
    pub per_item: Vec<f64>,
}

fn item_loss_and_adjoint(
    model: &Model,
    params: &[f64],
    item: &LossItem,
    opts: &LossOptions,
    index: usize,
) -> Result<(f64, Vec<Tangent>, Recorded)> {
    let t_min = opts.t_min;
    let n = item.x0.len();
    for (what, len) in [
        ("noise", item.x1.len()),
        ("sequence", item.seq.len()),
        ("residue mask", item.residue_mask.len()),
    ] {
        if len != n {
            return Err(Error::LengthMismatch {
                what,
                left: len,
                right: n,
            });
        }
    }
    if !(item.t >= t_min && item.t <= 1.0) {
        return Err(Error::TimeOutOfRange {
            t: item.t,
            lo: t_min,
            hi: 1.0,
        });
    }
    let n_kept = item.residue_mask.iter().filter(|&&m| !m).count();
    if n_kept == 0 {
        return Err(Error::AllResiduesMasked(index));
    }
    let xt = interpolate_chain(item.x0, item.x1, item.t)?;
    let target = conditional_chain_field(&xt, item.x0, item.t, t_min)?;
    let input = ModelInput::new(item.t, &xt, item.seq).with_external(item.external);
    let rec = model.record(params, &input)?;
    let pred = rec.field();
    let mut loss = 0.0;
    let mut adj = Vec::with_capacity(n);
    for ((p, q), &masked) in pred.iter().zip(&target).zip(item.residue_mask) {
        if masked {
            adj.push(Tangent::zero());
            continue;
        }
        let d = Tangent {
            rot: p.rot - q.rot,
            trans: p.trans - q.trans,
        };
        loss += opts.rot_weight * d.rot.norm_squared() + d.trans.norm_squared();
        adj.push(Tangent {
            rot: d.rot * (2.0 * opts.rot_weight / n_kept as f64),
            trans: d.trans * (2.0 / n_kept as f64),
        });
    }
    Ok((loss / n_kept as f64, adj, rec))
}

fn weighted_loss(
    model: &Model,
    params: &[f64],
    items: &[LossItem],
    weights: &[f64],
    opts: &LossOptions,
    with_grad: bool,
) -> Result<(LossReport, Option<Vec<f64>>)> {
    if items.is_empty() {
        return Err(Error::Empty("loss batch".into()));
    }
    let total: f64 = weights.iter().sum();
    let per: Vec<(f64, Option<Vec<f64>>)> = items
        .par_iter()
        .enumerate()
        .map(|(i, it)| {
            let (l, adj, rec) = item_loss_and_adjoint(model, params, it, opts, i)?;
            let g = if with_grad && weights[i] != 0.0 {
                let scale = weights[i] / total;
                let adj: Vec<Tangent> = adj
                    .iter()
                    .map(|a| Tangent {
                        rot: a.rot * scale,
                        trans: a.trans * scale,
                    })
                    .collect();
                Some(rec.backward(&adj)?)
            } else {
                None
            };
            Ok((l, g))
        })
        .collect::<Result<_>>()?;
    let per_item: Vec<f64> = per.iter().map(|(l, _)| *l).collect();
    let loss = per_item.iter().zip(weights).map(|(l, w)| l * w).sum::<f64>() / total;
    if !loss.is_finite() {
        return Err(Error::NonFinite("flow-matching loss".into()));
    }
    let grad = if with_grad {
        let mut g = vec![0.0; params.len()];
        for gi in per.iter().filter_map(|(_, g)| g.as_ref()) {
            for (a, b) in g.iter_mut().zip(gi) {
                *a += b;
            }
        }
        Some(g)
    } else {
        None
    };
    Ok((LossReport { loss, per_item }, grad))
}

/// Mean over items of the per-item mean squared field error on unmasked residues.
pub fn fm_loss(model: &Model, params: &[f64], items: &[LossItem], opts: &LossOptions) -> Result<LossReport> {
    let w = vec![1.0; items.len()];
    Ok(weighted_loss(model, params, items, &w, opts, false)?.0)
}

/// [`fm_loss`] and its parameter gradient.
pub fn fm_loss_grad(
    model: &Model,
    params: &[f64],
    items: &[LossItem],
    opts: &LossOptions,
) -> Result<(LossReport, Vec<f64>)> {
    let w = vec![1.0; items.len()];
    let (r, g) = weighted_loss(model, params, items, &w, opts, true)?;
    Ok((r, g.expect("gradient requested")))
}

/// Shifts rewards to be nonnegative when any is negative.
pub fn normalize_rewards(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite("rewards".into()));
    }
    let min = rewards.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = if min < 0.0 {
        rewards.iter().map(|r| r - min).collect()
    } else {
        rewards.to_vec()
    };
    if shifted.iter().sum::<f64>() <= 0.0 {
        return Err(Error::ZeroRewards);
    }
    Ok(shifted)
}

/// Reward-weighted flow-matching loss `Σ r_i·L_i / Σ r_i` and its gradient.
pub fn reft_loss(
    model: &Model,
    params: &[f64],
    items: &[LossItem],
    rewards: &[f64],
    opts: &LossOptions,
) -> Result<(LossReport, Vec<f64>)> {
    if rewards.len() != items.len() {
        return Err(Error::LengthMismatch {
            what: "rewards",
            left: rewards.len(),
            right: items.len(),
        });
    }
    let w = normalize_rewards(rewards)?;
    let (r, g) = weighted_loss(model, params, items, &w, opts, true)?;
    Ok((r, g.expect("gradient requested")))
}

/// Indices (in input order) of the top ⌈n/4⌉ rewards; ties keep the earlier item.
pub fn reft_filter(rewards: &[f64]) -> Vec<usize> {
    let keep = rewards.len().div_ceil(4);
    let mut order: Vec<usize> = (0..rewards.len()).collect();
    order.sort_by(|&a, &b| rewards[b].total_cmp(&rewards[a]));
    let mut kept = order[..keep].to_vec();
    kept.sort_unstable();
    kept
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub loss: f64,
    /// Mean per-item interpolation cost under the OT pairing.
    pub ot_cost: f64,
    /// Same, pairing item i with noise draw i.
    pub identity_cost: f64,
    pub grad_norm: f64,
}

/// Per-item random draws made before a step: times, sequence visibility and OT-paired noise.
struct Draws {
    t: Vec<f64>,
    hide: Vec<bool>,
    noise: Vec<FrameChain>,
    ot_cost: f64,
    identity_cost: f64,
}

fn draw<R: Rng + ?Sized>(batch: &[TrainItem], cfg: &TrainConfig, rng: &mut R) -> Result<Draws> {
    let n = batch[0].x0.len();
    if let Some(b) = batch.iter().find(|b| b.x0.len() != n) {
        return Err(Error::LengthMismatch {
            what: "batch chain lengths",
            left: b.x0.len(),
            right: n,
        });
    }
    let t: Vec<f64> = batch.iter().map(|_| rng.random_range(cfg.t_min..=1.0)).collect();
    let hide: Vec<bool> = batch.iter().map(|_| rng.random_bool(cfg.mask_prob)).collect();
    let noise: Vec<FrameChain> = batch
        .iter()
        .map(|_| sample_noise_chain(n, cfg.noise_scale, rng))
        .collect();
    let data: Vec<FrameChain> = batch.iter().map(|b| b.x0.clone()).collect();
    let assignment = ot_assignment(&data, &noise)?;
    let w = CostWeights::default();
    let identity: f64 = data
        .iter()
        .zip(&noise)
        .map(|(a, b)| chain_cost(a, b, &w))
        .sum::<Result<f64>>()?;
    let paired = assignment.perm.iter().map(|&j| noise[j].clone()).collect();
    let b = batch.len() as f64;
    Ok(Draws {
        t,
        hide,
        noise: paired,
        ot_cost: assignment.cost / b,
        identity_cost: identity / b,
    })
}

fn step_with_weights<R: Rng + ?Sized>(
    model: &Model,
    state: &mut TrainState,
    batch: &[TrainItem],
    rewards: Option<&[f64]>,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch".into()));
    }
    let d = draw(batch, cfg, rng)?;
    let hidden: Vec<SequenceRecord> = batch
        .iter()
        .zip(&d.hide)
        .map(|(b, &h)| {
            if h {
                SequenceRecord::fully_masked(b.seq.len())
            } else {
                b.seq.clone()
            }
        })
        .collect();
    let items: Vec<LossItem> = batch
        .iter()
        .enumerate()
        .map(|(i, b)| LossItem {
            x0: &b.x0,
            x1: &d.noise[i],
            seq: &hidden[i],
            residue_mask: &b.residue_mask,
            external: b.external.as_ref(),
            t: d.t[i],
        })
        .collect();
    let (report, grad) = match rewards {
        Some(r) => reft_loss(model, &state.params, &items, r, &cfg.loss_options())?,
        None => fm_loss_grad(model, &state.params, &items, &cfg.loss_options())?,
    };
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if !grad_norm.is_finite() {
        return Err(Error::NonFinite(format!("gradient at step {}", state.step + 1)));
    }
    state.adam_update(&grad, &model.layout().trainable_mask(), cfg);
    state.losses.push(report.loss);
    Ok(StepReport {
        step: state.step,
        loss: report.loss,
        ot_cost: d.ot_cost,
        identity_cost: d.identity_cost,
        grad_norm,
    })
}

/// Samples times, hides sequences, OT-couples fresh noise, and takes one Adam step.
///
/// Hiding a sequence also zeroes its external embedding rows.
pub fn train_step<R: Rng + ?Sized>(
    model: &Model,
    state: &mut TrainState,
    batch: &[TrainItem],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<StepReport> {
    step_with_weights(model, state, batch, None, cfg, rng)
}

/// [`train_step`] on the reward-weighted objective.
pub fn reft_step<R: Rng + ?Sized>(
    model: &Model,
    state: &mut TrainState,
    batch: &[TrainItem],
    rewards: &[f64],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<StepReport> {
    step_with_weights(model, state, batch, Some(rewards), cfg, rng)
}

/// Runs epochs of [`train_step`] (or [`reft_step`] when `rewards` is given) over `items`.
///
/// With `cfg.max_steps` set, epochs repeat until that many steps have been taken; otherwise
/// `cfg.epochs` epochs run. Step `k` draws from substream `k` of `cfg.seed`, and epoch `e` is
/// planned with seed `cfg.seed + e`.
pub fn fit(
    model: &Model,
    state: &mut TrainState,
    items: &[TrainItem],
    provenance: &[Provenance],
    rewards: Option<&[f64]>,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepReport),
) -> Result<()> {
    cfg.validate()?;
    if provenance.len() != items.len() || rewards.is_some_and(|r| r.len() != items.len()) {
        return Err(Error::LengthMismatch {
            what: "training items and their metadata",
            left: items.len(),
            right: provenance.len(),
        });
    }
    let entries: Vec<PlanEntry> = items
        .iter()
        .zip(provenance)
        .map(|(it, &p)| PlanEntry {
            len: it.x0.len(),
            provenance: p,
        })
        .collect();
    let start = state.step;
    let mut epoch = 0u64;
    loop {
        if cfg.max_steps.is_none() && epoch >= cfg.epochs as u64 {
            return Ok(());
        }
        let plan = make_epoch_plan(
            &entries,
            cfg.budget,
            cfg.synthetic_fraction,
            cfg.seed.wrapping_add(epoch),
        )?;
        for batch_idx in plan {
            if cfg.max_steps.is_some_and(|m| state.step - start >= m as u64) {
                return Ok(());
            }
            let batch: Vec<TrainItem> = batch_idx.iter().map(|&i| items[i].clone()).collect();
            let mut rng = crate::substream(cfg.seed, state.step);
            let report = match rewards {
                Some(r) => {
                    let w: Vec<f64> = batch_idx.iter().map(|&i| r[i]).collect();
                    reft_step(model, state, &batch, &w, cfg, &mut rng)?
                }
                None => train_step(model, state, &batch, cfg, &mut rng)?,
            };
            on_step(&report);
        }
        epoch += 1;
    }
}

/// What the epoch planner needs to know about an entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlanEntry {
    pub len: usize,
    pub provenance: Provenance,
}

impl From<&StructureEntry> for PlanEntry {
    fn from(e: &StructureEntry) -> Self {
        PlanEntry {
            len: e.len(),
            provenance: e.provenance,
        }
    }
}

/// Items per batch for length-`n` chains under a residues² budget.
pub fn batch_size(n: usize, budget: usize) -> usize {
    budget.div_ceil(n * n).max(1)
}

/// Largest synthetic count keeping synthetic items at most `fraction` of the epoch.
pub fn synthetic_cap(n_experimental: usize, n_synthetic: usize, fraction: f64) -> usize {
    if fraction >= 1.0 {
        return n_synthetic;
    }
    let cap = (fraction / (1.0 - fraction) * n_experimental as f64 + 1e-9).floor() as usize;
    cap.min(n_synthetic)
}

/// One epoch's batches, each a list of dataset indices of equal chain length.
pub fn make_epoch_plan(
    entries: &[PlanEntry],
    budget: usize,
    synthetic_fraction: f64,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if entries.is_empty() {
        return Err(Error::Empty("dataset".into()));
    }
    let mut rng = crate::seeded_rng(seed);
    let experimental: Vec<usize> = (0..entries.len())
        .filter(|&i| entries[i].provenance == Provenance::Experimental)
        .collect();
    let mut synthetic: Vec<usize> = (0..entries.len())
        .filter(|&i| entries[i].provenance == Provenance::Synthetic)
        .collect();
    let cap = synthetic_cap(experimental.len(), synthetic.len(), synthetic_fraction);
    synthetic.shuffle(&mut rng);
    synthetic.truncate(cap);
    let mut chosen: Vec<usize> = experimental.into_iter().chain(synthetic).collect();
    if chosen.is_empty() {
        return Err(Error::Empty(
            "epoch plan (no experimental entries and synthetic fraction < 1)".into(),
        ));
    }
    chosen.sort_unstable();
    let mut by_len: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in chosen {
        by_len.entry(entries[i].len).or_default().push(i);
    }
    let mut batches = Vec::new();
    for (n, mut idx) in by_len {
        if n == 0 {
            return Err(Error::Empty("zero-length structure".into()));
        }
        idx.shuffle(&mut rng);
        for chunk in idx.chunks(batch_size(n, budget)) {
            batches.push(chunk.to_vec());
        }
    }
    batches.shuffle(&mut rng);
    Ok(batches)
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"SE3FMCKP";
const CHECKPOINT_VERSION: u32 = 1;

/// Model configuration plus training state, serialized bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let config = toml::to_string(&self.model).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let n = self.state.params.len();
        let mut out = Vec::with_capacity(64 + config.len() + 24 * n);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(config.len() as u64).to_le_bytes());
        out.extend_from_slice(config.as_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        for v in [&self.state.params, &self.state.m, &self.state.v] {
            for x in v.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.state.step.to_le_bytes());
        out.extend_from_slice(&(self.state.losses.len() as u64).to_le_bytes());
        for x in &self.state.losses {
            out.extend_from_slice(&x.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let clen = r.u64()? as usize;
        let text = std::str::from_utf8(r.take(clen)?).map_err(|_| Error::Checkpoint("config is not UTF-8".into()))?;
        let model: ModelConfig = toml::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let n = r.u64()? as usize;
        let params = r.f64s(n)?;
        let m = r.f64s(n)?;
        let v = r.f64s(n)?;
        let step = r.u64()?;
        let nl = r.u64()? as usize;
        let losses = r.f64s(nl)?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        let expected = Model::new(model.clone())?.n_params();
        if expected != n {
            return Err(Error::Checkpoint(format!(
                "{n} parameters stored, config implies {expected}"
            )));
        }
        Ok(Checkpoint {
            model,
            state: TrainState {
                params,
                m,
                v,
                step,
                losses,
            },
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("size overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
