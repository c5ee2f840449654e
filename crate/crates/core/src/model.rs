//! The vector-field network `v_θ(t, x_t, ā)`.
//!
//! Four stages, each a small MLP over per-residue rows:
//!
//! 1. structure encoder: rotation entries, scaled translations, time and position embeddings;
//! 2. sequence encoder: token embedding table (or external per-residue embeddings);
//! 3. fusion trunk: project each modality, concatenate, residual blocks, the last of which
//!    sees a mean-pooled context row;
//! 4. decoder: fused rows concatenated with the structure-encoder skip features, mapped to six
//!    outputs per residue.
//!
//! Parameters live in one flat `f64` vector addressed through a [`ParamLayout`].

mod tape;

pub use tape::{Mat, NodeId, Tape, LAYER_NORM_EPS};

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::backbone::{SequenceRecord, VOCAB_SIZE};
use crate::error::{Error, Result};
use crate::geometry::{FrameChain, Tangent, TangentField};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub depth: usize,
    pub seq_embed_dim: usize,
    pub time_embed_dim: usize,
    pub pos_embed_dim: usize,
    pub max_residues: usize,
    /// Translation features are divided by this and translation outputs multiplied by it.
    pub translation_scale: f64,
    pub use_positional: bool,
    pub skip_connection: bool,
    pub freeze_seq_embedding: bool,
    /// Width of external per-residue sequence embeddings, replacing the token table when set.
    pub external_dim: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 128,
            depth: 2,
            seq_embed_dim: 32,
            time_embed_dim: 16,
            pos_embed_dim: 16,
            max_residues: 512,
            translation_scale: 10.0,
            use_positional: true,
            skip_connection: true,
            freeze_seq_embedding: false,
            external_dim: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("hidden", self.hidden),
            ("depth", self.depth),
            ("seq_embed_dim", self.seq_embed_dim),
            ("time_embed_dim", self.time_embed_dim),
            ("pos_embed_dim", self.pos_embed_dim),
            ("max_residues", self.max_residues),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if !self.time_embed_dim.is_multiple_of(2) || !self.pos_embed_dim.is_multiple_of(2) {
            return Err(Error::Config("embedding dims must be even".into()));
        }
        if !(self.translation_scale.is_finite() && self.translation_scale > 0.0) {
            return Err(Error::Config("model.translation_scale must be positive".into()));
        }
        if self.external_dim == Some(0) {
            return Err(Error::Config("model.external_dim must be positive".into()));
        }
        Ok(())
    }

    fn structure_input_dim(&self) -> usize {
        12 + self.time_embed_dim + self.pos_embed_dim
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Gain,
    Embedding,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub kind: ParamKind,
    pub trainable: bool,
}

impl ParamSpec {
    pub fn size(&self) -> usize {
        self.rows * self.cols
    }
}

/// Name → slice table over the flat parameter vector.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamLayout {
    specs: Vec<ParamSpec>,
    index: BTreeMap<String, usize>,
    total: usize,
}

impl ParamLayout {
    fn push(&mut self, name: String, rows: usize, cols: usize, kind: ParamKind, trainable: bool) {
        self.index.insert(name.clone(), self.specs.len());
        self.specs.push(ParamSpec {
            name,
            offset: self.total,
            rows,
            cols,
            kind,
            trainable,
        });
        self.total += rows * cols;
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) {
        self.push(format!("{name}.w"), fan_in, fan_out, ParamKind::Weight, true);
        self.push(format!("{name}.b"), 1, fan_out, ParamKind::Bias, true);
    }

    fn norm(&mut self, name: &str, width: usize) {
        self.push(format!("{name}.g"), 1, width, ParamKind::Gain, true);
        self.push(format!("{name}.b"), 1, width, ParamKind::Bias, true);
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn get(&self, name: &str) -> Option<&ParamSpec> {
        self.index.get(name).map(|&i| &self.specs[i])
    }

    fn spec(&self, name: &str) -> &ParamSpec {
        self.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    /// Mask of entries the optimizer may update.
    pub fn trainable_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.total];
        for s in &self.specs {
            m[s.offset..s.offset + s.size()].fill(s.trainable);
        }
        m
    }
}

/// One network evaluation's inputs.
#[derive(Clone, Copy, Debug)]
pub struct ModelInput<'a> {
    pub t: f64,
    pub chain: &'a FrameChain,
    pub seq: &'a SequenceRecord,
    pub external: Option<&'a Mat>,
}

impl<'a> ModelInput<'a> {
    pub fn new(t: f64, chain: &'a FrameChain, seq: &'a SequenceRecord) -> Self {
        ModelInput {
            t,
            chain,
            seq,
            external: None,
        }
    }

    pub fn with_external(mut self, external: Option<&'a Mat>) -> Self {
        self.external = external;
        self
    }
}

/// A forward pass kept on its tape so it can be differentiated.
#[derive(Debug, Default)]
pub struct Recorded {
    tape: Tape,
    output: NodeId,
    n_params: usize,
}

impl Recorded {
    pub fn output(&self) -> &Mat {
        self.tape.value(self.output)
    }

    pub fn field(&self) -> TangentField {
        mat_to_field(self.output())
    }

    /// Gradient of `Σ_i ⟨adjoint_i, v_i⟩` with respect to every parameter.
    pub fn backward(&self, adjoint: &[Tangent]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.n_params];
        self.backward_into(adjoint, &mut grad)?;
        Ok(grad)
    }

    /// As [`Recorded::backward`], accumulating into `grad`.
    pub fn backward_into(&self, adjoint: &[Tangent], grad: &mut [f64]) -> Result<()> {
        if self.tape.is_empty() {
            return Err(Error::NoTape);
        }
        let rows = self.output().rows;
        if adjoint.len() != rows {
            return Err(Error::LengthMismatch {
                what: "adjoint",
                left: adjoint.len(),
                right: rows,
            });
        }
        let data = adjoint.iter().flat_map(|a| a.to_array()).collect();
        self.tape.backward(self.output, &Mat::from_vec(rows, 6, data), grad)
    }
}

fn mat_to_field(m: &Mat) -> TangentField {
    (0..m.rows).map(|i| Tangent::from_slice(m.row(i))).collect()
}

/// Sinusoidal embedding of `t ∈ [0, 1]`.
///
/// Frequencies run geometrically from 1 to 100; the lowest pair alone is injective on `[0, 1]`.
pub fn time_embedding(t: f64, dim: usize) -> Vec<f64> {
    let k = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for j in 0..k {
        let w = if k > 1 {
            100f64.powf(j as f64 / (k - 1) as f64)
        } else {
            1.0
        };
        out.push((w * t).sin());
        out.push((w * t).cos());
    }
    out
}

/// Transformer-style sinusoidal embedding of residue index `i`.
pub fn positional_embedding(i: usize, dim: usize) -> Vec<f64> {
    let k = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for j in 0..k {
        let w = 1.0 / 10000f64.powf(2.0 * j as f64 / dim as f64);
        out.push((w * i as f64).sin());
        out.push((w * i as f64).cos());
    }
    out
}

/// Network architecture: configuration plus the parameter layout it induces.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    layout: ParamLayout,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let mut l = ParamLayout::default();
        l.linear("struct.l1", config.structure_input_dim(), h);
        l.norm("struct.n1", h);
        l.linear("struct.l2", h, h);
        l.norm("struct.n2", h);
        match config.external_dim {
            Some(d) => l.linear("seq.ext", d, h),
            None => {
                l.push(
                    "seq.table".into(),
                    VOCAB_SIZE,
                    config.seq_embed_dim,
                    ParamKind::Embedding,
                    !config.freeze_seq_embedding,
                );
                l.linear("seq.l1", config.seq_embed_dim, h);
            }
        }
        l.linear("fuse.ps", h, h);
        l.linear("fuse.pq", h, h);
        l.norm("fuse.n", 2 * h);
        l.linear("fuse.l", 2 * h, h);
        for b in 0..config.depth {
            let width = if b + 1 == config.depth { 2 * h } else { h };
            l.norm(&format!("trunk{b}.n"), width);
            l.linear(&format!("trunk{b}.l1"), width, h);
            l.linear(&format!("trunk{b}.l2"), h, h);
        }
        l.linear("dec.l1", 2 * h, h);
        l.linear("dec.l2", h, 6);
        Ok(Model { config, layout: l })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn n_params(&self) -> usize {
        self.layout.len()
    }

    /// LeCun-normal weights, unit gains, zero biases, standard-normal embedding rows.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut p = vec![0.0; self.layout.len()];
        for s in self.layout.specs() {
            let slot = &mut p[s.offset..s.offset + s.size()];
            match s.kind {
                ParamKind::Weight => {
                    let std = 1.0 / (s.rows as f64).sqrt();
                    for v in slot {
                        let z: f64 = StandardNormal.sample(rng);
                        *v = std * z;
                    }
                }
                ParamKind::Embedding => {
                    for v in slot {
                        *v = StandardNormal.sample(rng);
                    }
                }
                ParamKind::Gain => slot.fill(1.0),
                ParamKind::Bias => {}
            }
        }
        p
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.layout.len() {
            return Err(Error::LengthMismatch {
                what: "parameter vector",
                left: params.len(),
                right: self.layout.len(),
            });
        }
        Ok(())
    }

    fn param(&self, tape: &mut Tape, params: &[f64], name: &str) -> NodeId {
        let s = self.layout.spec(name);
        tape.param(params, s.offset, s.rows, s.cols, s.trainable)
    }

    fn linear(&self, tape: &mut Tape, params: &[f64], name: &str, x: NodeId) -> NodeId {
        let w = self.param(tape, params, &format!("{name}.w"));
        let b = self.param(tape, params, &format!("{name}.b"));
        let y = tape.matmul(x, w);
        tape.add_bias(y, b)
    }

    fn norm(&self, tape: &mut Tape, params: &[f64], name: &str, x: NodeId) -> NodeId {
        let g = self.param(tape, params, &format!("{name}.g"));
        let b = self.param(tape, params, &format!("{name}.b"));
        tape.layer_norm(x, g, b)
    }

    /// Raw per-residue structure features before the encoder MLP.
    pub fn structure_features(&self, chain: &FrameChain, t: f64) -> Mat {
        let c = &self.config;
        let com = chain.com();
        let time = time_embedding(t, c.time_embed_dim);
        let width = c.structure_input_dim();
        let mut m = Mat::zeros(chain.len(), width);
        for (i, f) in chain.frames.iter().enumerate() {
            let row = m.row_mut(i);
            let r = f.rot.matrix();
            for a in 0..3 {
                for b in 0..3 {
                    row[3 * a + b] = r[(a, b)];
                }
            }
            let s = (f.trans - com) / c.translation_scale;
            row[9..12].copy_from_slice(s.as_slice());
            row[12..12 + c.time_embed_dim].copy_from_slice(&time);
            if c.use_positional {
                row[12 + c.time_embed_dim..].copy_from_slice(&positional_embedding(i, c.pos_embed_dim));
            }
        }
        m
    }

    fn encode_structure_on(&self, tape: &mut Tape, params: &[f64], chain: &FrameChain, t: f64) -> Result<NodeId> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::TimeOutOfRange { t, lo: 0.0, hi: 1.0 });
        }
        let x = tape.input(self.structure_features(chain, t));
        let h = self.linear(tape, params, "struct.l1", x);
        let h = self.norm(tape, params, "struct.n1", h);
        let h = tape.gelu(h);
        let h = self.linear(tape, params, "struct.l2", h);
        Ok(self.norm(tape, params, "struct.n2", h))
    }

    fn encode_sequence_on(
        &self,
        tape: &mut Tape,
        params: &[f64],
        seq: &SequenceRecord,
        external: Option<&Mat>,
    ) -> Result<NodeId> {
        seq.validate()?;
        match (self.config.external_dim, external) {
            (Some(d), Some(e)) => {
                if e.cols != d {
                    return Err(Error::DimMismatch {
                        expected: d,
                        got: e.cols,
                    });
                }
                if e.rows != seq.len() {
                    return Err(Error::LengthMismatch {
                        what: "external embeddings",
                        left: e.rows,
                        right: seq.len(),
                    });
                }
                let mut e = e.clone();
                for (i, &obs) in seq.observed.iter().enumerate() {
                    if !obs {
                        e.row_mut(i).fill(0.0);
                    }
                }
                let x = tape.input(e);
                let h = self.linear(tape, params, "seq.ext", x);
                Ok(tape.gelu(h))
            }
            (Some(_), None) => Err(Error::Config(
                "model expects external sequence embeddings but none were supplied".into(),
            )),
            (None, Some(_)) => Err(Error::Config(
                "external sequence embeddings supplied to a model built without them".into(),
            )),
            (None, None) => {
                let table = self.param(tape, params, "seq.table");
                let idx: Vec<usize> = seq.tokens.iter().map(|&t| t as usize).collect();
                let e = tape.gather(table, &idx);
                let h = self.linear(tape, params, "seq.l1", e);
                Ok(tape.gelu(h))
            }
        }
    }

    fn fuse_on(&self, tape: &mut Tape, params: &[f64], s: NodeId, q: NodeId) -> Result<NodeId> {
        let (ns, nq) = (tape.value(s).rows, tape.value(q).rows);
        if ns != nq {
            return Err(Error::LengthMismatch {
                what: "fuse",
                left: ns,
                right: nq,
            });
        }
        let ps = self.linear(tape, params, "fuse.ps", s);
        let pq = self.linear(tape, params, "fuse.pq", q);
        let c = tape.concat(ps, pq);
        let c = self.norm(tape, params, "fuse.n", c);
        let h = self.linear(tape, params, "fuse.l", c);
        let mut h = tape.gelu(h);
        for b in 0..self.config.depth {
            let input = if b + 1 == self.config.depth {
                let m = tape.mean_rows(h);
                let m = tape.broadcast_rows(m, ns);
                tape.concat(h, m)
            } else {
                h
            };
            let u = self.norm(tape, params, &format!("trunk{b}.n"), input);
            let u = self.linear(tape, params, &format!("trunk{b}.l1"), u);
            let u = tape.gelu(u);
            let u = self.linear(tape, params, &format!("trunk{b}.l2"), u);
            h = tape.add(h, u);
        }
        Ok(h)
    }

    fn decode_on(&self, tape: &mut Tape, params: &[f64], fused: NodeId, skip: NodeId) -> Result<NodeId> {
        let (nf, ns) = (tape.value(fused).rows, tape.value(skip).rows);
        if nf != ns {
            return Err(Error::LengthMismatch {
                what: "decode",
                left: nf,
                right: ns,
            });
        }
        let skip = if self.config.skip_connection {
            skip
        } else {
            tape.input(Mat::zeros(ns, self.config.hidden))
        };
        let c = tape.concat(fused, skip);
        let h = self.linear(tape, params, "dec.l1", c);
        let h = tape.gelu(h);
        let out = self.linear(tape, params, "dec.l2", h);
        let s = self.config.translation_scale;
        Ok(tape.scale_cols(out, &[1.0, 1.0, 1.0, s, s, s]))
    }

    fn forward_on(&self, tape: &mut Tape, params: &[f64], input: &ModelInput) -> Result<NodeId> {
        self.check_params(params)?;
        let n = input.chain.len();
        if n == 0 {
            return Err(Error::Empty("chain".into()));
        }
        if n != input.seq.len() {
            return Err(Error::LengthMismatch {
                what: "chain vs sequence",
                left: n,
                right: input.seq.len(),
            });
        }
        if n > self.config.max_residues {
            return Err(Error::IndexOutOfRange {
                index: n,
                len: self.config.max_residues,
            });
        }
        let s = self.encode_structure_on(tape, params, input.chain, input.t)?;
        let q = self.encode_sequence_on(tape, params, input.seq, input.external)?;
        let h = self.fuse_on(tape, params, s, q)?;
        self.decode_on(tape, params, h, s)
    }

    /// Predicted tangent field.
    pub fn forward(&self, params: &[f64], input: &ModelInput) -> Result<TangentField> {
        Ok(self.record(params, input)?.field())
    }

    /// Forward pass that keeps its tape for [`Recorded::backward`].
    pub fn record(&self, params: &[f64], input: &ModelInput) -> Result<Recorded> {
        let mut tape = Tape::new();
        let output = self.forward_on(&mut tape, params, input)?;
        let rec = Recorded {
            tape,
            output,
            n_params: self.n_params(),
        };
        if !rec.output().is_finite() {
            return Err(Error::NonFinite("model output".into()));
        }
        Ok(rec)
    }

    pub fn encode_structure(&self, params: &[f64], chain: &FrameChain, t: f64) -> Result<Mat> {
        self.check_params(params)?;
        let mut tape = Tape::new();
        let id = self.encode_structure_on(&mut tape, params, chain, t)?;
        Ok(tape.value(id).clone())
    }

    pub fn encode_sequence(&self, params: &[f64], seq: &SequenceRecord, external: Option<&Mat>) -> Result<Mat> {
        self.check_params(params)?;
        let mut tape = Tape::new();
        let id = self.encode_sequence_on(&mut tape, params, seq, external)?;
        Ok(tape.value(id).clone())
    }

    pub fn fuse(&self, params: &[f64], structure: &Mat, sequence: &Mat) -> Result<Mat> {
        self.check_params(params)?;
        let mut tape = Tape::new();
        let s = tape.input(structure.clone());
        let q = tape.input(sequence.clone());
        let id = self.fuse_on(&mut tape, params, s, q)?;
        Ok(tape.value(id).clone())
    }

    pub fn decode(&self, params: &[f64], fused: &Mat, skip: &Mat) -> Result<TangentField> {
        self.check_params(params)?;
        let mut tape = Tape::new();
        let f = tape.input(fused.clone());
        let s = tape.input(skip.clone());
        let id = self.decode_on(&mut tape, params, f, s)?;
        Ok(mat_to_field(tape.value(id)))
    }
}

const EMBEDDING_MAGIC: &[u8; 8] = b"SE3FMEMB";

/// Reads a per-residue embedding matrix.
///
/// Text form: a header line `N DIM`, then `N` lines of `DIM` whitespace-separated numbers.
/// Binary form: the 8 bytes `SE3FMEMB`, a little-endian `u32` element width (4 or 8),
/// little-endian `u64` N and DIM, then `N·DIM` little-endian floats in row-major order.
pub fn read_embeddings(path: &Path) -> Result<Mat> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_embeddings(&bytes)
}

pub fn parse_embeddings(bytes: &[u8]) -> Result<Mat> {
    let bad = |msg: &str| Error::Config(format!("embedding file: {msg}"));
    if bytes.starts_with(EMBEDDING_MAGIC) {
        let header = bytes.get(8..28).ok_or_else(|| bad("truncated header"))?;
        let width = u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize;
        let n = u64::from_le_bytes(header[4..12].try_into().unwrap()) as usize;
        let dim = u64::from_le_bytes(header[12..20].try_into().unwrap()) as usize;
        if width != 4 && width != 8 {
            return Err(bad("element width must be 4 or 8"));
        }
        let body = &bytes[28..];
        let count = n.checked_mul(dim).ok_or_else(|| bad("size overflow"))?;
        if body.len() != count * width {
            return Err(bad("body length does not match header"));
        }
        let data: Vec<f64> = body
            .chunks_exact(width)
            .map(|c| match width {
                4 => f32::from_le_bytes(c.try_into().unwrap()) as f64,
                _ => f64::from_le_bytes(c.try_into().unwrap()),
            })
            .collect();
        let m = Mat::from_vec(n, dim, data);
        if !m.is_finite() {
            return Err(Error::NonFinite("embedding file".into()));
        }
        return Ok(m);
    }
    let text = std::str::from_utf8(bytes).map_err(|_| bad("neither binary header nor UTF-8 text"))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<usize> = lines
        .next()
        .ok_or_else(|| bad("missing header"))?
        .split_whitespace()
        .map(|s| s.parse().map_err(|_| bad("header must be `N DIM`")))
        .collect::<Result<_>>()?;
    let [n, dim] = header[..] else {
        return Err(bad("header must be `N DIM`"));
    };
    let mut data = Vec::with_capacity(n * dim);
    for (i, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| bad(&format!("row {i}: bad number {s:?}"))))
            .collect::<Result<_>>()?;
        if row.len() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                got: row.len(),
            });
        }
        data.extend(row);
    }
    if data.len() != n * dim {
        return Err(bad(&format!("expected {n} rows, got {}", data.len() / dim.max(1))));
    }
    let m = Mat::from_vec(n, dim, data);
    if !m.is_finite() {
        return Err(Error::NonFinite("embedding file".into()));
    }
    Ok(m)
}

/// Serializes embeddings in the binary form read by [`parse_embeddings`] (f64 elements).
pub fn write_embeddings_binary(m: &Mat) -> Vec<u8> {
    let mut out = Vec::with_capacity(28 + 8 * m.data.len());
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&8u32.to_le_bytes());
    out.extend_from_slice(&(m.rows as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols as u64).to_le_bytes());
    for v in &m.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}
