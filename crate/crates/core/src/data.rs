//! PDB I/O, dataset manifests, the filtering pipeline and a toy backbone generator.
//!
//! # PDB layout
//!
//! Only `ATOM` records are read; columns are 1-based and inclusive:
//!
//! | columns | field          |
//! |---------|----------------|
//! | 1–6     | record name    |
//! | 7–11    | serial         |
//! | 13–16   | atom name      |
//! | 17      | alternate location |
//! | 18–20   | residue name   |
//! | 22      | chain id       |
//! | 23–26   | residue number |
//! | 27      | insertion code |
//! | 31–38, 39–46, 47–54 | x, y, z (8.3) |
//! | 55–60   | occupancy (6.2) |
//! | 61–66   | B-factor (6.2), read as pLDDT for synthetic entries |
//! | 77–78   | element        |
//!
//! Reading stops at the first `ENDMDL`; only the chain of the first `ATOM` record is kept,
//! and for alternate locations the first occurrence of each atom name wins.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::{
    atoms_to_frames, frames_to_atoms, three_letter, token_from_three_letter, AtomCoords, IdealResidue, ResidueAtoms,
    SequenceRecord, ATOM_NAMES, MASK_TOKEN,
};
use crate::error::{Error, Result};
use crate::geometry::{RigidFrame, Rotation, Vec3};
use crate::metrics::{assign_secondary_with, SsConfig, SsLabel};
use crate::seeded_rng;

/// Parsed single-chain backbone.
#[derive(Clone, Debug, PartialEq)]
pub struct PdbChain {
    pub atoms: AtomCoords,
    pub seq: SequenceRecord,
    /// B-factor of each residue's Cα.
    pub bfactor: Vec<f64>,
}

fn column(line: &str, from: usize, to: usize) -> &str {
    let end = to.min(line.len());
    if from > end {
        return "";
    }
    line.get(from - 1..end).unwrap_or("")
}

fn parse_f64(line: &str, from: usize, to: usize, lineno: usize, what: &str) -> Result<f64> {
    let field = column(line, from, to).trim();
    field.parse::<f64>().map_err(|_| Error::Pdb {
        line: lineno,
        msg: format!("bad {what} field {field:?}"),
    })
}

#[derive(Default)]
struct PartialResidue {
    key: (String, char),
    name: String,
    atoms: [Option<Vec3>; 4],
    ca_b: Option<f64>,
}

pub fn parse_pdb(text: &str) -> Result<PdbChain> {
    let mut residues: Vec<PartialResidue> = Vec::new();
    let mut chain: Option<char> = None;
    for (k, line) in text.lines().enumerate() {
        let lineno = k + 1;
        if line.starts_with("ENDMDL") {
            break;
        }
        if !line.starts_with("ATOM  ") {
            continue;
        }
        if line.len() < 54 {
            return Err(Error::Pdb {
                line: lineno,
                msg: "ATOM record shorter than the coordinate columns".into(),
            });
        }
        let chain_id = column(line, 22, 22).chars().next().unwrap_or(' ');
        match chain {
            None => chain = Some(chain_id),
            Some(c) if c != chain_id => continue,
            _ => {}
        }
        let name = column(line, 13, 16).trim();
        let Some(slot) = ATOM_NAMES.iter().position(|&a| a == name) else {
            continue;
        };
        let key = (
            column(line, 23, 26).trim().to_string(),
            column(line, 27, 27).chars().next().unwrap_or(' '),
        );
        let res_name = column(line, 18, 20).trim().to_string();
        let x = parse_f64(line, 31, 38, lineno, "x")?;
        let y = parse_f64(line, 39, 46, lineno, "y")?;
        let z = parse_f64(line, 47, 54, lineno, "z")?;
        let b = if line.len() >= 66 {
            parse_f64(line, 61, 66, lineno, "B-factor")?
        } else {
            0.0
        };
        if residues.last().map(|r| r.key != key).unwrap_or(true) {
            residues.push(PartialResidue {
                key,
                name: res_name,
                ..Default::default()
            });
        }
        let res = residues.last_mut().expect("pushed above");
        if res.atoms[slot].is_none() {
            res.atoms[slot] = Some(Vec3::new(x, y, z));
            if slot == 1 {
                res.ca_b = Some(b);
            }
        }
    }
    if residues.is_empty() {
        return Err(Error::Empty("no ATOM records".into()));
    }
    let complete = |r: &PartialResidue| r.atoms.iter().all(|a| a.is_some());
    let first = residues.iter().position(complete);
    let last = residues.iter().rposition(complete);
    let (Some(first), Some(last)) = (first, last) else {
        return Err(Error::MissingAtom {
            index: 0,
            atom: missing_name(&residues[0]),
        });
    };
    let mut coords = Vec::with_capacity(last - first + 1);
    let mut tokens = Vec::with_capacity(last - first + 1);
    let mut bfactor = Vec::with_capacity(last - first + 1);
    for (i, r) in residues[first..=last].iter().enumerate() {
        if !complete(r) {
            return Err(Error::MissingAtom {
                index: first + i,
                atom: missing_name(r),
            });
        }
        let atoms: ResidueAtoms = r.atoms.map(|a| a.expect("checked complete"));
        coords.push(atoms);
        tokens.push(token_from_three_letter(&r.name).unwrap_or(MASK_TOKEN));
        bfactor.push(r.ca_b.unwrap_or(0.0));
    }
    Ok(PdbChain {
        atoms: AtomCoords::new(coords),
        seq: SequenceRecord::from_tokens(tokens)?,
        bfactor,
    })
}

fn missing_name(r: &PartialResidue) -> &'static str {
    r.atoms
        .iter()
        .position(|a| a.is_none())
        .map(|i| ATOM_NAMES[i])
        .unwrap_or("?")
}

fn fixed(value: f64, width: usize, decimals: usize) -> Result<String> {
    if !value.is_finite() {
        return Err(Error::NonFinite("PDB output value".into()));
    }
    let s = format!("{value:>width$.decimals$}");
    if s.len() > width {
        return Err(Error::CoordinateOverflow { value });
    }
    Ok(s)
}

/// Renders a backbone as PDB text: a `HEADER` line, one `ATOM` record per atom, `TER`, `END`.
///
/// `scalar`, when given, fills the B-factor column per residue; otherwise it is zero.
pub fn write_pdb(atoms: &AtomCoords, seq: &SequenceRecord, scalar: Option<&[f64]>) -> Result<String> {
    if seq.len() != atoms.len() {
        return Err(Error::LengthMismatch {
            what: "atoms and sequence",
            left: atoms.len(),
            right: seq.len(),
        });
    }
    if let Some(s) = scalar {
        if s.len() != atoms.len() {
            return Err(Error::LengthMismatch {
                what: "atoms and per-residue scalar",
                left: atoms.len(),
                right: s.len(),
            });
        }
    }
    let mut out = String::new();
    out.push_str("HEADER    SE3FM BACKBONE\n");
    let mut serial = 1usize;
    for (i, res) in atoms.residues.iter().enumerate() {
        let b = fixed(scalar.map(|s| s[i]).unwrap_or(0.0), 6, 2)?;
        for (slot, p) in res.iter().enumerate() {
            let name = format!(" {:<3}", ATOM_NAMES[slot]);
            let element = &ATOM_NAMES[slot][..1];
            writeln!(
                out,
                "ATOM  {:>5} {} {:>3} A{:>4}    {}{}{}  1.00{}          {:>2}",
                serial,
                name,
                three_letter(seq.tokens[i]),
                i + 1,
                fixed(p.x, 8, 3)?,
                fixed(p.y, 8, 3)?,
                fixed(p.z, 8, 3)?,
                b,
                element
            )
            .expect("write to string");
            serial += 1;
        }
    }
    if let Some(&last) = seq.tokens.last() {
        writeln!(
            out,
            "TER   {:>5}      {:>3} A{:>4}",
            serial,
            three_letter(last),
            atoms.len()
        )
        .expect("write to string");
    }
    out.push_str("END\n");
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Experimental,
    Synthetic,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Experimental => "experimental",
            Provenance::Synthetic => "synthetic",
        }
    }
}

impl std::str::FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "experimental" | "exp" => Ok(Provenance::Experimental),
            "synthetic" | "syn" => Ok(Provenance::Synthetic),
            other => Err(Error::Config(format!("unknown provenance {other:?}"))),
        }
    }
}

/// One manifest line: `id <TAB> path <TAB> provenance <TAB> cluster [<TAB> embeddings]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub provenance: Provenance,
    pub cluster: String,
    pub embeddings: Option<PathBuf>,
}

/// Parses a manifest; blank lines and lines starting with `#` are skipped.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() < 4 || fields.len() > 5 {
            return Err(Error::Config(format!(
                "manifest line {}: expected 4 or 5 tab-separated fields, got {}",
                k + 1,
                fields.len()
            )));
        }
        out.push(ManifestEntry {
            id: fields[0].to_string(),
            path: PathBuf::from(fields[1]),
            provenance: fields[2].parse()?,
            cluster: fields[3].to_string(),
            embeddings: fields.get(4).filter(|s| !s.is_empty()).map(PathBuf::from),
        });
    }
    Ok(out)
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    let mut out = String::from("# id\tpath\tprovenance\tcluster\n");
    for e in entries {
        let _ = write!(
            out,
            "{}\t{}\t{}\t{}",
            e.id,
            e.path.display(),
            e.provenance.as_str(),
            e.cluster
        );
        if let Some(p) = &e.embeddings {
            let _ = write!(out, "\t{}", p.display());
        }
        out.push('\n');
    }
    out
}

/// A structure with its provenance metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct StructureEntry {
    pub id: String,
    pub atoms: AtomCoords,
    pub seq: SequenceRecord,
    /// Per-residue confidence; present exactly for synthetic entries.
    pub plddt: Option<Vec<f64>>,
    pub provenance: Provenance,
    pub cluster: String,
}

impl StructureEntry {
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.seq.len() != self.atoms.len() {
            return Err(Error::LengthMismatch {
                what: "entry atoms and sequence",
                left: self.atoms.len(),
                right: self.seq.len(),
            });
        }
        match (&self.plddt, self.provenance) {
            (Some(p), Provenance::Synthetic) if p.len() == self.atoms.len() => Ok(()),
            (Some(p), Provenance::Synthetic) => Err(Error::LengthMismatch {
                what: "entry atoms and pLDDT",
                left: self.atoms.len(),
                right: p.len(),
            }),
            (None, Provenance::Experimental) => Ok(()),
            _ => Err(Error::Config(format!(
                "entry {}: pLDDT must be present exactly for synthetic entries",
                self.id
            ))),
        }
    }
}

/// Reads one manifest entry; relative paths resolve against `base`.
pub fn load_entry(entry: &ManifestEntry, base: &Path) -> Result<StructureEntry> {
    let path = if entry.path.is_absolute() {
        entry.path.clone()
    } else {
        base.join(&entry.path)
    };
    let text = std::fs::read_to_string(&path)?;
    let parsed = parse_pdb(&text)?;
    let plddt = match entry.provenance {
        Provenance::Synthetic => Some(parsed.bfactor),
        Provenance::Experimental => None,
    };
    Ok(StructureEntry {
        id: entry.id.clone(),
        atoms: parsed.atoms,
        seq: parsed.seq,
        plddt,
        provenance: entry.provenance,
        cluster: entry.cluster.clone(),
    })
}

/// Loads every entry in parallel. Failures are returned per entry, in manifest order.
pub fn load_entries(entries: &[ManifestEntry], base: &Path) -> Vec<(String, Result<StructureEntry>)> {
    entries
        .par_iter()
        .map(|e| (e.id.clone(), load_entry(e, base)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub min_mean_plddt: f64,
    pub max_std_plddt: f64,
    pub max_loop_fraction: f64,
    pub min_length: usize,
    pub max_length: usize,
    pub residue_plddt_threshold: f64,
    pub rg_coefficient: f64,
    pub rg_exponent: f64,
    pub secondary: SsConfig,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_mean_plddt: 85.0,
            max_std_plddt: 15.0,
            max_loop_fraction: 0.5,
            min_length: 60,
            max_length: 384,
            residue_plddt_threshold: 70.0,
            rg_coefficient: 2.5,
            rg_exponent: 0.4,
            secondary: SsConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Unreadable,
    TooShort,
    TooLong,
    MissingPlddt,
    LowMeanPlddt,
    HighPlddtSpread,
    TooManyLoops,
    NotCompact,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::Unreadable => "unreadable",
            RejectReason::TooShort => "too_short",
            RejectReason::TooLong => "too_long",
            RejectReason::MissingPlddt => "missing_plddt",
            RejectReason::LowMeanPlddt => "low_mean_plddt",
            RejectReason::HighPlddtSpread => "high_plddt_spread",
            RejectReason::TooManyLoops => "too_many_loops",
            RejectReason::NotCompact => "not_compact",
        }
    }
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Confidence gate for synthetic entries: mean > min and (population) std < max.
pub fn plddt_gate(plddt: &[f64], cfg: &FilterConfig) -> Option<RejectReason> {
    if plddt.is_empty() {
        return Some(RejectReason::MissingPlddt);
    }
    let (mean, std) = mean_std(plddt);
    if !(mean > cfg.min_mean_plddt) {
        Some(RejectReason::LowMeanPlddt)
    } else if !(std < cfg.max_std_plddt) {
        Some(RejectReason::HighPlddtSpread)
    } else {
        None
    }
}

pub fn loop_fraction(atoms: &AtomCoords, ss: &SsConfig) -> f64 {
    let labels = assign_secondary_with(atoms, ss);
    if labels.is_empty() {
        return 1.0;
    }
    labels.iter().filter(|&&l| l == SsLabel::C).count() as f64 / labels.len() as f64
}

/// Length bounds, confidence gate (synthetic only) and loop-content limit.
pub fn filter_global(entry: &StructureEntry, cfg: &FilterConfig) -> Option<RejectReason> {
    let n = entry.len();
    if n < cfg.min_length {
        return Some(RejectReason::TooShort);
    }
    if n > cfg.max_length {
        return Some(RejectReason::TooLong);
    }
    if entry.provenance == Provenance::Synthetic {
        match &entry.plddt {
            None => return Some(RejectReason::MissingPlddt),
            Some(p) => {
                if let Some(r) = plddt_gate(p, cfg) {
                    return Some(r);
                }
            }
        }
    }
    if loop_fraction(&entry.atoms, &cfg.secondary) > cfg.max_loop_fraction {
        return Some(RejectReason::TooManyLoops);
    }
    None
}

/// `true` where the residue should be left out of the loss (pLDDT strictly below threshold).
pub fn mask_low_plddt(entry: &StructureEntry, cfg: &FilterConfig) -> Vec<bool> {
    match &entry.plddt {
        Some(p) => p.iter().map(|&v| v < cfg.residue_plddt_threshold).collect(),
        None => vec![false; entry.len()],
    }
}

/// Radius of gyration of a point set, Å.
pub fn radius_of_gyration(points: &[Vec3]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let c = points.iter().sum::<Vec3>() / points.len() as f64;
    (points.iter().map(|p| (p - c).norm_squared()).sum::<f64>() / points.len() as f64).sqrt()
}

/// Globularity rule: Cα radius of gyration ≤ coefficient · N^exponent.
pub fn compactness_proxy(entry: &StructureEntry, cfg: &FilterConfig) -> bool {
    let n = entry.len();
    if n == 0 {
        return false;
    }
    radius_of_gyration(&entry.atoms.ca()) <= cfg.rg_coefficient * (n as f64).powf(cfg.rg_exponent)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterStage {
    Global,
    ResidueMask,
    Compactness,
}

pub const DEFAULT_STAGES: [FilterStage; 3] = [FilterStage::Global, FilterStage::ResidueMask, FilterStage::Compactness];

/// An accepted entry with its loss mask.
#[derive(Clone, Debug, PartialEq)]
pub struct FilteredEntry {
    pub entry: StructureEntry,
    pub residue_mask: Vec<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FilterReport {
    pub n_input: usize,
    pub n_accepted: usize,
    pub rejected: BTreeMap<RejectReason, usize>,
    /// `(id, reason)` per input entry, `None` for accepted.
    pub decisions: Vec<(String, Option<RejectReason>)>,
    pub masked_residues: usize,
}

impl FilterReport {
    pub fn n_rejected(&self) -> usize {
        self.rejected.values().sum()
    }

    pub fn record(&mut self, id: &str, reason: Option<RejectReason>) {
        self.n_input += 1;
        match reason {
            None => self.n_accepted += 1,
            Some(r) => *self.rejected.entry(r).or_default() += 1,
        }
        self.decisions.push((id.to_string(), reason));
    }
}

fn run_stages(entry: &StructureEntry, cfg: &FilterConfig, stages: &[FilterStage]) -> (Option<RejectReason>, Vec<bool>) {
    let mut mask = vec![false; entry.len()];
    for stage in stages {
        match stage {
            FilterStage::Global => {
                if let Some(r) = filter_global(entry, cfg) {
                    return (Some(r), mask);
                }
            }
            FilterStage::ResidueMask => mask = mask_low_plddt(entry, cfg),
            FilterStage::Compactness => {
                if !compactness_proxy(entry, cfg) {
                    return (Some(RejectReason::NotCompact), mask);
                }
            }
        }
    }
    (None, mask)
}

/// Runs the filtering pipeline with the default stage order.
pub fn filter_dataset(entries: &[StructureEntry], cfg: &FilterConfig) -> (Vec<FilteredEntry>, FilterReport) {
    filter_dataset_staged(entries, cfg, &DEFAULT_STAGES)
}

pub fn filter_dataset_staged(
    entries: &[StructureEntry],
    cfg: &FilterConfig,
    stages: &[FilterStage],
) -> (Vec<FilteredEntry>, FilterReport) {
    let decisions: Vec<(Option<RejectReason>, Vec<bool>)> =
        entries.par_iter().map(|e| run_stages(e, cfg, stages)).collect();
    let mut report = FilterReport::default();
    let mut kept = Vec::new();
    for (e, (reason, mask)) in entries.iter().zip(decisions) {
        report.record(&e.id, reason);
        if reason.is_none() {
            report.masked_residues += mask.iter().filter(|&&m| m).count();
            kept.push(FilteredEntry {
                entry: e.clone(),
                residue_mask: mask,
            });
        }
    }
    (kept, report)
}

// Toy backbone generator.

const BOND_N_CA: f64 = 1.458;
const BOND_CA_C: f64 = 1.5233;
const BOND_C_N: f64 = 1.329;
const ANGLE_N_CA_C: f64 = 111.2;
const ANGLE_CA_C_N: f64 = 116.2;
const ANGLE_C_N_CA: f64 = 121.7;

pub const HELIX_PHI_PSI: (f64, f64) = (-57.0, -47.0);
pub const STRAND_PHI_PSI: (f64, f64) = (-120.0, 130.0);
// type I' turn, two residues
const TURN: [(f64, f64); 2] = [(60.0, 30.0), (90.0, 0.0)];

/// Backbone torsions of one residue, degrees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Torsions {
    pub phi: f64,
    pub psi: f64,
    pub omega: f64,
}

impl Torsions {
    pub fn new(phi: f64, psi: f64) -> Self {
        Torsions { phi, psi, omega: 180.0 }
    }
}

// Places d so that |cd| = bond, ∠bcd = angle and torsion(a, b, c, d) = torsion (degrees).
fn place(a: &Vec3, b: &Vec3, c: &Vec3, bond: f64, angle: f64, torsion: f64) -> Vec3 {
    let (angle, torsion) = (angle.to_radians(), torsion.to_radians());
    let bc = (c - b).normalize();
    let n = (b - a).cross(&bc).normalize();
    let m = n.cross(&bc);
    let d2 = Vec3::new(
        -bond * angle.cos(),
        bond * angle.sin() * torsion.cos(),
        bond * angle.sin() * torsion.sin(),
    );
    c + bc * d2.x + m * d2.y + n * d2.z
}

/// Builds a backbone from per-residue torsions with ideal bond geometry.
///
/// The first residue sits in the ideal local frame, so identical torsion lists give
/// identical coordinates. φ of the first and ψ of the last residue are unused.
/// O is placed from the residue frame at its fixed ideal position.
pub fn build_backbone(torsions: &[Torsions]) -> AtomCoords {
    let ideal = IdealResidue::default();
    let mut residues: Vec<ResidueAtoms> = Vec::with_capacity(torsions.len());
    if torsions.is_empty() {
        return AtomCoords::new(residues);
    }
    let (mut n, mut ca, mut c) = (Vec3::from(ideal.n), Vec3::zeros(), Vec3::from(ideal.c));
    let mut backbone = vec![(n, ca, c)];
    for i in 1..torsions.len() {
        let n_next = place(&n, &ca, &c, BOND_C_N, ANGLE_CA_C_N, torsions[i - 1].psi);
        let ca_next = place(&ca, &c, &n_next, BOND_N_CA, ANGLE_C_N_CA, torsions[i - 1].omega);
        let c_next = place(&c, &n_next, &ca_next, BOND_CA_C, ANGLE_N_CA_C, torsions[i].phi);
        n = n_next;
        ca = ca_next;
        c = c_next;
        backbone.push((n, ca, c));
    }
    for (i, &(n, ca, c)) in backbone.iter().enumerate() {
        let mut atoms = [n, ca, c, Vec3::zeros()];
        let frame =
            crate::backbone::residue_frame(&atoms, i).unwrap_or_else(|_| RigidFrame::new(Rotation::identity(), ca));
        atoms[3] = frame.apply(&Vec3::from(ideal.o));
        residues.push(atoms);
    }
    AtomCoords::new(residues)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyKind {
    Helix,
    /// A single extended strand.
    Sheet,
    /// Strand, two-residue turn, strand.
    Hairpin,
    /// Helix, turn, strand.
    Mixed,
}

impl ToyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ToyKind::Helix => "helix",
            ToyKind::Sheet => "sheet",
            ToyKind::Hairpin => "hairpin",
            ToyKind::Mixed => "mixed",
        }
    }
}

impl std::str::FromStr for ToyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "helix" => Ok(ToyKind::Helix),
            "sheet" | "strand" => Ok(ToyKind::Sheet),
            "hairpin" => Ok(ToyKind::Hairpin),
            "mixed" => Ok(ToyKind::Mixed),
            other => Err(Error::Config(format!("unknown toy kind {other:?}"))),
        }
    }
}

/// Which residues toy sequences are drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SequenceStyle {
    /// Uniform over the 20 amino acids.
    Uniform,
    /// Helix formers for helical positions, β-branched/aromatic residues for strands,
    /// G/N/D/P/S in turns.
    Propensity,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyOptions {
    /// Standard deviation of the torsion jitter, degrees.
    pub jitter_deg: f64,
    pub sequence: SequenceStyle,
}

impl Default for ToyOptions {
    fn default() -> Self {
        ToyOptions {
            jitter_deg: 3.0,
            sequence: SequenceStyle::Uniform,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Segment {
    Helix,
    Strand,
    Turn(usize),
}

fn layout(kind: ToyKind, n: usize) -> Vec<Segment> {
    let two_parts = |first: Segment, second: Segment| -> Vec<Segment> {
        let a = (n.saturating_sub(2)) / 2;
        let mut v = vec![first; a];
        v.extend([Segment::Turn(0), Segment::Turn(1)].iter().take(n - a).copied());
        v.extend(std::iter::repeat_n(second, n.saturating_sub(a + 2)));
        v
    };
    match kind {
        ToyKind::Helix => vec![Segment::Helix; n],
        ToyKind::Sheet => vec![Segment::Strand; n],
        ToyKind::Hairpin => two_parts(Segment::Strand, Segment::Strand),
        ToyKind::Mixed => two_parts(Segment::Helix, Segment::Strand),
    }
}

const HELIX_FORMERS: &str = "AELMKQR";
const STRAND_FORMERS: &str = "VITYFW";
const TURN_FORMERS: &str = "GNDPS";

fn draw_token<R: Rng + ?Sized>(pool: &str, rng: &mut R) -> u8 {
    let chars: Vec<char> = pool.chars().collect();
    let c = chars[rng.random_range(0..chars.len())];
    crate::backbone::token_from_one_letter(c).expect("pool letters are amino acids")
}

/// Generates a toy backbone and sequence from canonical torsions plus seeded jitter.
pub fn toy_generate(kind: ToyKind, length: usize, seed: u64) -> Result<(AtomCoords, SequenceRecord)> {
    toy_generate_with(kind, length, seed, &ToyOptions::default())
}

pub fn toy_generate_with(
    kind: ToyKind,
    length: usize,
    seed: u64,
    opts: &ToyOptions,
) -> Result<(AtomCoords, SequenceRecord)> {
    if length < 4 {
        return Err(Error::TooFewPoints { need: 4, got: length });
    }
    let mut rng = seeded_rng(seed);
    let jitter = Normal::new(0.0, opts.jitter_deg.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let segments = layout(kind, length);
    let mut torsions = Vec::with_capacity(length);
    let mut tokens = Vec::with_capacity(length);
    for seg in &segments {
        let (phi, psi) = match seg {
            Segment::Helix => HELIX_PHI_PSI,
            Segment::Strand => STRAND_PHI_PSI,
            Segment::Turn(k) => TURN[*k],
        };
        torsions.push(Torsions::new(
            phi + jitter.sample(&mut rng),
            psi + jitter.sample(&mut rng),
        ));
    }
    for seg in &segments {
        let token = match opts.sequence {
            SequenceStyle::Uniform => rng.random_range(0..20u8),
            SequenceStyle::Propensity => match seg {
                Segment::Helix => draw_token(HELIX_FORMERS, &mut rng),
                Segment::Strand => draw_token(STRAND_FORMERS, &mut rng),
                Segment::Turn(_) => draw_token(TURN_FORMERS, &mut rng),
            },
        };
        tokens.push(token);
    }
    Ok((build_backbone(&torsions), SequenceRecord::from_tokens(tokens)?))
}

/// `n_helices` parallel/antiparallel helices on a square lattice of side `spacing` Å.
///
/// The helices are not joined by loops; the result is only meant for compactness checks.
pub fn helix_bundle(n_helices: usize, helix_length: usize, spacing: f64, seed: u64) -> Result<AtomCoords> {
    let side = (n_helices as f64).sqrt().ceil() as usize;
    let mut residues = Vec::new();
    for h in 0..n_helices {
        let (atoms, _) = toy_generate(ToyKind::Helix, helix_length, seed.wrapping_add(h as u64))?;
        let frames = atoms_to_frames(&atoms)?;
        let ca = atoms.ca();
        let axis = (ca[ca.len() - 1] - ca[0]).normalize();
        // Rotate the helix axis onto ±z, then shift it to its lattice site.
        let target = if h % 2 == 0 { Vec3::z() } else { -Vec3::z() };
        let rot = nalgebra::Rotation3::rotation_between(&axis, &target)
            .unwrap_or_else(|| nalgebra::Rotation3::from_axis_angle(&Vec3::x_axis(), std::f64::consts::PI));
        let g = RigidFrame::new(
            Rotation::from_matrix_unchecked(*rot.matrix()),
            Vec3::new((h % side) as f64 * spacing, (h / side) as f64 * spacing, 0.0),
        );
        residues.extend(frames_to_atoms(&frames.transformed(&g)).residues);
    }
    Ok(AtomCoords::new(residues))
}

/// A toy corpus: how many chains of each kind, and their length.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyCorpusSpec {
    pub kinds: Vec<(ToyKind, usize)>,
    pub length: usize,
    pub options: ToyOptions,
    /// Fraction of entries labelled synthetic, with pLDDT written as a per-residue score.
    pub synthetic_fraction: f64,
}

/// Builds a corpus of toy entries. Each kind forms one cluster; ids are `<kind>_<k>`.
pub fn toy_corpus(spec: &ToyCorpusSpec, seed: u64) -> Result<Vec<StructureEntry>> {
    let mut out = Vec::new();
    let mut rng = seeded_rng(seed ^ 0x746f_7963);
    let mut index = 0u64;
    for &(kind, count) in &spec.kinds {
        for k in 0..count {
            let (atoms, seq) = toy_generate_with(
                kind,
                spec.length,
                seed.wrapping_mul(1_000_003).wrapping_add(index),
                &spec.options,
            )?;
            index += 1;
            let synthetic = rng.random::<f64>() < spec.synthetic_fraction;
            let plddt = synthetic.then(|| (0..spec.length).map(|_| rng.random_range(86.0..96.0)).collect());
            out.push(StructureEntry {
                id: format!("{}_{k:03}", kind.as_str()),
                atoms,
                seq,
                plddt,
                provenance: if synthetic {
                    Provenance::Synthetic
                } else {
                    Provenance::Experimental
                },
                cluster: kind.as_str().to_string(),
            });
        }
    }
    Ok(out)
}
