//! Euler integration from noise (t = 1) toward data (t = t_min) for the three task modes:
//! unconditional generation, folding and in-painting (motif scaffolding).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::{SequenceRecord, MASK_TOKEN};
use crate::error::{Error, Result};
use crate::geometry::{
    conditional_chain_field, remove_com, sample_noise_chain, so3_exp_at, FrameChain, RigidFrame, TangentField, Vec3,
    DEFAULT_NOISE_SCALE, DEFAULT_T_MIN,
};
use crate::model::{Mat, Model, ModelInput};

/// Anything that can play the role of `v(t, x, ā)` during integration.
pub trait VectorField: Sync {
    fn eval(&self, t: f64, x: &FrameChain, seq: &SequenceRecord) -> Result<TangentField>;
}

/// The trained network.
pub struct ModelField<'a> {
    pub model: &'a Model,
    pub params: &'a [f64],
    pub external: Option<&'a Mat>,
}

impl<'a> ModelField<'a> {
    pub fn new(model: &'a Model, params: &'a [f64]) -> Self {
        ModelField {
            model,
            params,
            external: None,
        }
    }
}

impl VectorField for ModelField<'_> {
    fn eval(&self, t: f64, x: &FrameChain, seq: &SequenceRecord) -> Result<TangentField> {
        let input = ModelInput::new(t, x, seq).with_external(self.external);
        self.model.forward(self.params, &input)
    }
}

/// The conditional target field toward a known data chain.
pub struct AnalyticField {
    pub x0: FrameChain,
    pub t_min: f64,
}

impl VectorField for AnalyticField {
    fn eval(&self, t: f64, x: &FrameChain, _seq: &SequenceRecord) -> Result<TangentField> {
        conditional_chain_field(x, &self.x0, t, self.t_min)
    }
}

/// Always zero.
pub struct ZeroField;

impl VectorField for ZeroField {
    fn eval(&self, _t: f64, x: &FrameChain, _seq: &SequenceRecord) -> Result<TangentField> {
        Ok(vec![Default::default(); x.len()])
    }
}

/// Multiplier `i(t)` applied to rotation updates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Annealing {
    /// `i(t) = 1`.
    Constant,
    /// `i(t) = c·t`.
    Linear(f64),
}

impl Annealing {
    pub fn factor(&self, t: f64) -> f64 {
        match *self {
            Annealing::Constant => 1.0,
            Annealing::Linear(c) => c * t,
        }
    }
}

impl Default for Annealing {
    fn default() -> Self {
        Annealing::Linear(10.0)
    }
}

impl fmt::Display for Annealing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Annealing::Constant => write!(f, "none"),
            Annealing::Linear(c) => write!(f, "{c}"),
        }
    }
}

impl FromStr for Annealing {
    type Err = Error;

    /// `none` or a positive scale `c`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("none") {
            return Ok(Annealing::Constant);
        }
        match s.parse::<f64>() {
            Ok(c) if c.is_finite() && c > 0.0 => Ok(Annealing::Linear(c)),
            _ => Err(Error::Config(format!(
                "annealing must be `none` or a positive number, got {s:?}"
            ))),
        }
    }
}

impl TryFrom<String> for Annealing {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Annealing> for String {
    fn from(a: Annealing) -> String {
        a.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleConfig {
    pub n_steps: usize,
    pub anneal: Annealing,
    pub t_min: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            n_steps: 50,
            anneal: Annealing::default(),
            t_min: DEFAULT_T_MIN,
            noise_scale: DEFAULT_NOISE_SCALE,
            seed: 0,
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::Config("sample.n_steps must be at least 1".into()));
        }
        if !(self.t_min > 0.0 && self.t_min < 1.0) {
            return Err(Error::Config("sample.t_min must lie in (0, 1)".into()));
        }
        if !(self.noise_scale > 0.0) {
            return Err(Error::Config("sample.noise_scale must be positive".into()));
        }
        if let Annealing::Linear(c) = self.anneal {
            if !(c > 0.0) {
                return Err(Error::Config("annealing scale must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn step_size(&self) -> f64 {
        (1.0 - self.t_min) / self.n_steps as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    Unconditional,
    Folding,
    Inpaint,
}

impl TaskMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskMode::Unconditional => "unconditional",
            TaskMode::Folding => "folding",
            TaskMode::Inpaint => "inpaint",
        }
    }
}

/// What to generate: length, visible sequence, and for in-painting the frames held fixed.
#[derive(Clone, Debug)]
pub struct TaskSpec {
    pub mode: TaskMode,
    pub seq: SequenceRecord,
    /// `true` at residues whose frames are held fixed (in-painting only).
    pub fixed_mask: Vec<bool>,
    /// Frames used at fixed residues; other entries are ignored.
    pub fixed_frames: FrameChain,
}

impl TaskSpec {
    pub fn unconditional(length: usize) -> Self {
        TaskSpec {
            mode: TaskMode::Unconditional,
            seq: SequenceRecord::fully_masked(length),
            fixed_mask: vec![false; length],
            fixed_frames: FrameChain::new(vec![RigidFrame::identity(); length]),
        }
    }

    pub fn folding(seq: SequenceRecord) -> Self {
        let n = seq.len();
        TaskSpec {
            mode: TaskMode::Folding,
            seq,
            fixed_mask: vec![false; n],
            fixed_frames: FrameChain::new(vec![RigidFrame::identity(); n]),
        }
    }

    pub fn len(&self) -> usize {
        self.seq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seq.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.seq.len();
        if n == 0 {
            return Err(Error::Task("target length must be positive".into()));
        }
        self.seq.validate()?;
        if self.fixed_mask.len() != n || self.fixed_frames.len() != n {
            return Err(Error::Task(
                "fixed mask and frames must match the sequence length".into(),
            ));
        }
        let any_fixed = self.fixed_mask.iter().any(|&f| f);
        match self.mode {
            TaskMode::Unconditional if !self.seq.is_fully_masked() => Err(Error::Task(
                "unconditional generation needs a fully masked sequence".into(),
            )),
            TaskMode::Folding if !self.seq.is_fully_observed() => {
                Err(Error::Task("folding needs a fully observed sequence".into()))
            }
            TaskMode::Inpaint if !any_fixed => Err(Error::Task("in-painting needs at least one fixed residue".into())),
            TaskMode::Unconditional | TaskMode::Folding if any_fixed => {
                Err(Error::Task(format!("{} mode cannot fix residues", self.mode.as_str())))
            }
            _ => Ok(()),
        }
    }
}

/// Overwrites fixed residues, then shifts the free ones so the chain CoM is zero.
fn apply_constraints(x: &mut FrameChain, task: &TaskSpec) {
    if task.mode != TaskMode::Inpaint {
        *x = remove_com(x);
        return;
    }
    let mut n_free = 0usize;
    for (i, f) in x.frames.iter_mut().enumerate() {
        if task.fixed_mask[i] {
            *f = task.fixed_frames.frames[i];
        } else {
            n_free += 1;
        }
    }
    if n_free == 0 {
        *x = remove_com(x);
        return;
    }
    let total: Vec3 = x.frames.iter().map(|f| f.trans).sum();
    let shift = total / n_free as f64;
    for (i, f) in x.frames.iter_mut().enumerate() {
        if !task.fixed_mask[i] {
            f.trans -= shift;
        }
    }
}

/// Integrates from `start` at t = 1 to t_min, calling `observe(step, t, x)` after each step.
pub fn integrate_with<F: VectorField + ?Sized>(
    field: &F,
    start: &FrameChain,
    task: &TaskSpec,
    cfg: &SampleConfig,
    mut observe: impl FnMut(usize, f64, &FrameChain),
) -> Result<FrameChain> {
    cfg.validate()?;
    task.validate()?;
    if start.len() != task.len() {
        return Err(Error::LengthMismatch {
            what: "start chain vs task",
            left: start.len(),
            right: task.len(),
        });
    }
    let dt = cfg.step_size();
    let mut x = start.clone();
    apply_constraints(&mut x, task);
    for k in 0..cfg.n_steps {
        let t = 1.0 - k as f64 * dt;
        let v = field.eval(t, &x, &task.seq)?;
        if v.len() != x.len() || v.iter().any(|u| !u.is_finite()) {
            return Err(Error::NonFinite(format!("vector field at step {k} (t = {t:.4})")));
        }
        let a = dt * cfg.anneal.factor(t);
        for (f, u) in x.frames.iter_mut().zip(&v) {
            f.rot = so3_exp_at(&f.rot, &(u.rot * a));
            f.trans -= u.trans * dt;
        }
        apply_constraints(&mut x, task);
        observe(k + 1, 1.0 - (k + 1) as f64 * dt, &x);
    }
    Ok(x)
}

pub fn integrate<F: VectorField + ?Sized>(
    field: &F,
    start: &FrameChain,
    task: &TaskSpec,
    cfg: &SampleConfig,
) -> Result<FrameChain> {
    integrate_with(field, start, task, cfg, |_, _, _| {})
}

/// Draws a noise chain and integrates it.
pub fn euler_sample<F: VectorField + ?Sized, R: Rng + ?Sized>(
    field: &F,
    task: &TaskSpec,
    cfg: &SampleConfig,
    rng: &mut R,
) -> Result<FrameChain> {
    task.validate()?;
    let start = sample_noise_chain(task.len(), cfg.noise_scale, rng);
    integrate(field, &start, task, cfg)
}

/// `count` independent samples; sample `i` uses the substream `i` of `cfg.seed`.
pub fn sample_many<F: VectorField + ?Sized>(
    field: &F,
    task: &TaskSpec,
    cfg: &SampleConfig,
    count: usize,
) -> Result<Vec<FrameChain>> {
    (0..count)
        .into_par_iter()
        .map(|i| euler_sample(field, task, cfg, &mut crate::substream(cfg.seed, i as u64)))
        .collect()
}

/// Folding: the whole sequence is visible.
pub fn fold<F: VectorField + ?Sized, R: Rng + ?Sized>(
    field: &F,
    seq: &SequenceRecord,
    cfg: &SampleConfig,
    rng: &mut R,
) -> Result<FrameChain> {
    if !seq.is_fully_observed() {
        return Err(Error::Task(
            "folding needs a fully observed sequence (no X / MASK)".into(),
        ));
    }
    euler_sample(field, &TaskSpec::folding(seq.clone()), cfg, rng)
}

/// A motif to hold fixed: its frames, tokens and target positions.
#[derive(Clone, Debug)]
pub struct Motif {
    pub frames: Vec<RigidFrame>,
    pub tokens: Vec<u8>,
    pub indices: Vec<usize>,
}

/// In-painting task with the motif recentered at the origin and the scaffold sequence masked.
pub fn scaffold_task(motif: &Motif, total_length: usize) -> Result<TaskSpec> {
    let k = motif.indices.len();
    if k == 0 {
        return Err(Error::Task("motif is empty".into()));
    }
    if motif.frames.len() != k || motif.tokens.len() != k {
        return Err(Error::Task(
            "motif frames, tokens and indices must have equal length".into(),
        ));
    }
    let mut fixed_mask = vec![false; total_length];
    for &i in &motif.indices {
        if i >= total_length {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: total_length,
            });
        }
        if fixed_mask[i] {
            return Err(Error::Task(format!("motif index {i} appears twice")));
        }
        fixed_mask[i] = true;
    }
    let centred = remove_com(&FrameChain::new(motif.frames.clone()));
    let mut frames = vec![RigidFrame::identity(); total_length];
    let mut seq = SequenceRecord::fully_masked(total_length);
    for (j, &i) in motif.indices.iter().enumerate() {
        frames[i] = centred.frames[j];
        seq.tokens[i] = motif.tokens[j];
        seq.observed[i] = motif.tokens[j] != MASK_TOKEN;
    }
    let task = TaskSpec {
        mode: TaskMode::Inpaint,
        seq,
        fixed_mask,
        fixed_frames: FrameChain::new(frames),
    };
    task.validate()?;
    Ok(task)
}

/// Motif scaffolding: fixed motif frames and tokens, masked scaffold.
pub fn scaffold<F: VectorField + ?Sized, R: Rng + ?Sized>(
    field: &F,
    motif: &Motif,
    total_length: usize,
    cfg: &SampleConfig,
    rng: &mut R,
) -> Result<FrameChain> {
    let task = scaffold_task(motif, total_length)?;
    euler_sample(field, &task, cfg, rng)
}

/// Uniform draw from `[median − spread, median + spread]` (clamped at zero).
pub fn sample_segment_length<R: Rng + ?Sized>(median: usize, spread: usize, rng: &mut R) -> usize {
    rng.random_range(median.saturating_sub(spread)..=median + spread)
}

/// Interleaves scaffold segments around motif segments.
///
/// `scaffold` has one more entry than `motif_segments`: leading, between, trailing.
/// Returns the total length and the motif residue indices.
pub fn layout_segments(scaffold: &[usize], motif_segments: &[usize]) -> Result<(usize, Vec<usize>)> {
    if scaffold.len() != motif_segments.len() + 1 {
        return Err(Error::Task("need one more scaffold segment than motif segments".into()));
    }
    let mut pos = scaffold[0];
    let mut indices = Vec::new();
    for (m, s) in motif_segments.iter().zip(&scaffold[1..]) {
        indices.extend(pos..pos + m);
        pos += m + s;
    }
    Ok((pos, indices))
}
