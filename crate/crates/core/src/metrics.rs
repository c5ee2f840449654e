//! Structure comparison and evaluation metrics.

use nalgebra::{DMatrix, Matrix3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::{backbone_dihedrals_lenient, AtomCoords};
use crate::coupling::{solve_assignment, CostMatrix};
use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Rigid motion `p ↦ rot·p + trans` that superposes one point set onto another.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Superposition {
    pub rmsd: f64,
    pub rot: Matrix3<f64>,
    pub trans: Vec3,
}

impl Superposition {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rot * p + self.trans
    }
}

fn centroid(p: &[Vec3]) -> Vec3 {
    p.iter().sum::<Vec3>() / p.len() as f64
}

/// Optimal superposition of `mobile` onto `target` (Kabsch, with reflection correction).
pub fn kabsch(mobile: &[Vec3], target: &[Vec3]) -> Result<Superposition> {
    if mobile.len() != target.len() {
        return Err(Error::LengthMismatch {
            what: "superposed point sets",
            left: mobile.len(),
            right: target.len(),
        });
    }
    if mobile.len() < 3 {
        return Err(Error::TooFewPoints {
            need: 3,
            got: mobile.len(),
        });
    }
    let ca = centroid(mobile);
    let cb = centroid(target);
    let mut h = Matrix3::zeros();
    for (a, b) in mobile.iter().zip(target) {
        h += (a - ca) * (b - cb).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::NonFinite("superposition SVD".into())),
    };
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let d = if d == 0.0 { 1.0 } else { d };
    let rot = v * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    let trans = cb - rot * ca;
    let msd = mobile
        .iter()
        .zip(target)
        .map(|(a, b)| (rot * a + trans - b).norm_squared())
        .sum::<f64>()
        / mobile.len() as f64;
    Ok(Superposition {
        rmsd: msd.sqrt(),
        rot,
        trans,
    })
}

pub fn kabsch_rmsd(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    kabsch(a, b).map(|s| s.rmsd)
}

/// Cα RMSD after optimal superposition.
pub fn ca_rmsd(a: &AtomCoords, b: &AtomCoords) -> Result<f64> {
    kabsch_rmsd(&a.ca(), &b.ca())
}

/// TM-score distance scale for a chain of `l` residues.
pub fn tm_d0(l: usize) -> f64 {
    (1.24 * (l as f64 - 15.0).cbrt() - 1.8).max(0.5)
}

fn tm_sum(a: &[Vec3], b: &[Vec3], s: &Superposition, d0: f64) -> (f64, Vec<f64>) {
    let d: Vec<f64> = a.iter().zip(b).map(|(p, q)| (s.apply(p) - q).norm()).collect();
    let sum = d.iter().map(|di| 1.0 / (1.0 + (di / d0).powi(2))).sum();
    (sum, d)
}

/// Fixed-correspondence TM-score of two equal-length Cα traces.
///
/// The superposition is refined by iterating Kabsch over residues closer than `2·d0`,
/// started from the full set and from each half; the best score is kept.
pub fn tm_score(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            what: "TM-score inputs",
            left: a.len(),
            right: b.len(),
        });
    }
    let l = a.len();
    if l < 3 {
        return Err(Error::TooFewPoints { need: 3, got: l });
    }
    let d0 = tm_d0(l);
    let cutoff = 2.0 * d0;
    let half = l / 2;
    let seeds: Vec<Vec<usize>> = vec![(0..l).collect(), (0..half).collect(), (half..l).collect()];
    let mut best = 0.0f64;
    for seed in seeds {
        if seed.len() < 3 {
            continue;
        }
        let mut subset = seed;
        for _ in 0..30 {
            let pa: Vec<Vec3> = subset.iter().map(|&i| a[i]).collect();
            let pb: Vec<Vec3> = subset.iter().map(|&i| b[i]).collect();
            let s = kabsch(&pa, &pb)?;
            let (sum, d) = tm_sum(a, b, &s, d0);
            best = best.max(sum / l as f64);
            let next: Vec<usize> = (0..l).filter(|&i| d[i] < cutoff).collect();
            if next.len() < 3 || next == subset {
                break;
            }
            subset = next;
        }
    }
    Ok(best.min(1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SsLabel {
    H,
    E,
    C,
}

impl SsLabel {
    pub fn as_char(self) -> char {
        match self {
            SsLabel::H => 'H',
            SsLabel::E => 'E',
            SsLabel::C => 'C',
        }
    }
}

pub fn ss_string(labels: &[SsLabel]) -> String {
    labels.iter().map(|l| l.as_char()).collect()
}

/// Dihedral windows (degrees, open intervals) for secondary-structure assignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsConfig {
    pub helix_phi: (f64, f64),
    pub helix_psi: (f64, f64),
    pub helix_min_run: usize,
    pub strand_phi: (f64, f64),
    /// ψ above this, or below `strand_psi_low`, counts as extended.
    pub strand_psi_high: f64,
    pub strand_psi_low: f64,
    pub strand_min_run: usize,
}

impl Default for SsConfig {
    fn default() -> Self {
        SsConfig {
            helix_phi: (-100.0, -30.0),
            helix_psi: (-80.0, -5.0),
            helix_min_run: 4,
            strand_phi: (-170.0, -70.0),
            strand_psi_high: 80.0,
            strand_psi_low: -170.0,
            strand_min_run: 3,
        }
    }
}

fn inside(x: f64, w: (f64, f64)) -> bool {
    x > w.0 && x < w.1
}

fn keep_runs(cand: &[bool], min_run: usize) -> Vec<bool> {
    let mut out = vec![false; cand.len()];
    let mut i = 0;
    while i < cand.len() {
        if !cand[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < cand.len() && cand[i] {
            i += 1;
        }
        if i - start >= min_run {
            out[start..i].iter_mut().for_each(|x| *x = true);
        }
    }
    out
}

/// Per-residue H/E/C labels from backbone dihedrals. Termini and undefined torsions are coil.
pub fn assign_secondary(atoms: &AtomCoords) -> Vec<SsLabel> {
    assign_secondary_with(atoms, &SsConfig::default())
}

pub fn assign_secondary_with(atoms: &AtomCoords, cfg: &SsConfig) -> Vec<SsLabel> {
    let dihedrals = backbone_dihedrals_lenient(atoms);
    let n = dihedrals.len();
    let mut h = vec![false; n];
    let mut e = vec![false; n];
    for (i, d) in dihedrals.iter().enumerate() {
        if let (Some(phi), Some(psi)) = (d.phi, d.psi) {
            let (phi, psi) = (phi.to_degrees(), psi.to_degrees());
            h[i] = inside(phi, cfg.helix_phi) && inside(psi, cfg.helix_psi);
            e[i] = inside(phi, cfg.strand_phi) && (psi > cfg.strand_psi_high || psi < cfg.strand_psi_low);
        }
    }
    let h = keep_runs(&h, cfg.helix_min_run);
    let e = keep_runs(&e, cfg.strand_min_run);
    (0..n)
        .map(|i| {
            if h[i] {
                SsLabel::H
            } else if e[i] {
                SsLabel::E
            } else {
                SsLabel::C
            }
        })
        .collect()
}

/// Label fractions `(p_H, p_E, p_C)`.
pub fn ss_fractions(labels: &[SsLabel]) -> (f64, f64, f64) {
    if labels.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let n = labels.len() as f64;
    let count = |l: SsLabel| labels.iter().filter(|&&x| x == l).count() as f64 / n;
    (count(SsLabel::H), count(SsLabel::E), count(SsLabel::C))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub w_helix: f64,
    pub w_strand: f64,
    pub w_coil: f64,
    /// Sign in front of `Σ p ln p`; `+1` is the published form.
    pub entropy_sign: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            w_helix: 1.0,
            w_strand: 2.0,
            w_coil: 0.5,
            entropy_sign: 1.0,
        }
    }
}

/// `(Σ p_s w_s)(1 + sign · Σ p_s ln p_s)` over the label fractions.
pub fn diversity_reward(labels: &[SsLabel]) -> f64 {
    diversity_reward_with(labels, &RewardConfig::default())
}

pub fn diversity_reward_with(labels: &[SsLabel], cfg: &RewardConfig) -> f64 {
    let (ph, pe, pc) = ss_fractions(labels);
    reward_from_fractions(ph, pe, pc, cfg)
}

pub fn reward_from_fractions(ph: f64, pe: f64, pc: f64, cfg: &RewardConfig) -> f64 {
    let plogp = |p: f64| if p > 0.0 { p * p.ln() } else { 0.0 };
    let weighted = ph * cfg.w_helix + pe * cfg.w_strand + pc * cfg.w_coil;
    weighted * (1.0 + cfg.entropy_sign * (plogp(ph) + plogp(pe) + plogp(pc)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clustering {
    pub n_clusters: usize,
    /// Cluster index of each input; clusters are numbered in order of their leaders.
    pub assignments: Vec<usize>,
    pub leaders: Vec<usize>,
}

// Structures of different lengths are never similar.
fn tm_or_zero(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.len() != b.len() {
        return Ok(0.0);
    }
    tm_score(a, b)
}

/// Leader clustering in input order at TM ≥ `threshold`.
pub fn greedy_cluster(structures: &[Vec<Vec3>], threshold: f64) -> Result<Clustering> {
    let mut leaders: Vec<usize> = Vec::new();
    let mut assignments = Vec::with_capacity(structures.len());
    for (i, s) in structures.iter().enumerate() {
        let mut found = None;
        for (k, &l) in leaders.iter().enumerate() {
            if tm_or_zero(s, &structures[l])? >= threshold {
                found = Some(k);
                break;
            }
        }
        match found {
            Some(k) => assignments.push(k),
            None => {
                assignments.push(leaders.len());
                leaders.push(i);
            }
        }
    }
    Ok(Clustering {
        n_clusters: leaders.len(),
        assignments,
        leaders,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoveltyStats {
    /// Fraction of samples whose closest reference has TM < 0.3.
    pub novel_fraction: f64,
    pub mean_max_tm: f64,
    pub max_tm: Vec<f64>,
}

/// Closest-reference TM statistics. References of a different length count as TM 0.
pub fn novelty_stats(samples: &[Vec<Vec3>], reference: &[Vec<Vec3>]) -> Result<NoveltyStats> {
    if samples.is_empty() {
        return Err(Error::Empty("novelty samples".into()));
    }
    if reference.is_empty() {
        return Err(Error::Empty("novelty reference set".into()));
    }
    let max_tm = samples
        .par_iter()
        .map(|s| {
            reference
                .iter()
                .map(|r| tm_or_zero(s, r))
                .try_fold(0.0f64, |m, x| x.map(|x| m.max(x)))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = max_tm.len() as f64;
    Ok(NoveltyStats {
        novel_fraction: max_tm.iter().filter(|&&m| m < 0.3).count() as f64 / n,
        mean_max_tm: max_tm.iter().sum::<f64>() / n,
        max_tm,
    })
}

/// Mean TM-score over unordered pairs of equal-length samples.
pub fn diversity_stats(samples: &[Vec<Vec3>]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::TooFewPoints {
            need: 2,
            got: samples.len(),
        });
    }
    let pairs: Vec<(usize, usize)> = (0..samples.len())
        .flat_map(|i| (i + 1..samples.len()).map(move |j| (i, j)))
        .collect();
    let scores = pairs
        .par_iter()
        .map(|&(i, j)| tm_score(&samples[i], &samples[j]))
        .collect::<Result<Vec<_>>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Designability threshold on scRMSD, Å (strict).
pub const DESIGNABLE_RMSD: f64 = 2.0;
pub const MOTIF_RMSD: f64 = 1.0;
pub const SCAFFOLD_RMSD: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MotifVerdict {
    pub global_rmsd: f64,
    pub motif_rmsd: f64,
    pub scaffold_rmsd: f64,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DesignVerdict {
    /// Minimum Cα RMSD over refolds.
    pub sc_rmsd: f64,
    pub designable: bool,
    pub per_refold: Vec<f64>,
    pub motif: Option<MotifVerdict>,
}

/// Motif and scaffold residue indices for motif-aware evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct MotifRegions {
    pub motif: Vec<usize>,
    pub scaffold: Vec<usize>,
}

impl MotifRegions {
    /// Motif indices plus every other residue as scaffold.
    pub fn from_motif(motif: &[usize], n: usize) -> Self {
        MotifRegions {
            motif: motif.to_vec(),
            scaffold: (0..n).filter(|i| !motif.contains(i)).collect(),
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.motif.iter().chain(&self.scaffold) {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, len: n });
            }
            if seen[i] {
                return Err(Error::Task(format!("residue {i} listed twice in motif/scaffold sets")));
            }
            seen[i] = true;
        }
        Ok(())
    }
}

// RMSD over N, Cα, C of the chosen residues, aligned on those atoms alone.
fn region_rmsd(a: &AtomCoords, b: &AtomCoords, idx: &[usize]) -> Result<f64> {
    let pick = |x: &AtomCoords| -> Vec<Vec3> { idx.iter().flat_map(|&i| x.residues[i][..3].to_vec()).collect() };
    kabsch_rmsd(&pick(a), &pick(b))
}

/// Self-consistency evaluation of a generated backbone against externally refolded structures.
///
/// With motif regions, a refold succeeds when its global Cα RMSD, its motif RMSD and its
/// scaffold RMSD (each region superposed on its own N/Cα/C atoms) are all under threshold;
/// the design succeeds if any refold does. The reported motif numbers belong to the refold
/// with the lowest global RMSD among the successful ones, or overall if none succeeds.
pub fn sc_rmsd_eval(
    generated: &AtomCoords,
    refolds: &[AtomCoords],
    regions: Option<&MotifRegions>,
) -> Result<DesignVerdict> {
    if refolds.is_empty() {
        return Err(Error::Empty("refold set".into()));
    }
    if let Some(r) = regions {
        r.validate(generated.len())?;
    }
    let per_refold = refolds
        .iter()
        .map(|r| ca_rmsd(generated, r))
        .collect::<Result<Vec<_>>>()?;
    let sc_rmsd = per_refold.iter().copied().fold(f64::INFINITY, f64::min);
    let motif = match regions {
        None => None,
        Some(reg) => {
            let mut verdicts = Vec::with_capacity(refolds.len());
            for (r, &global) in refolds.iter().zip(&per_refold) {
                let motif_rmsd = region_rmsd(generated, r, &reg.motif)?;
                let scaffold_rmsd = if reg.scaffold.is_empty() {
                    0.0
                } else {
                    region_rmsd(generated, r, &reg.scaffold)?
                };
                verdicts.push(MotifVerdict {
                    global_rmsd: global,
                    motif_rmsd,
                    scaffold_rmsd,
                    success: global < DESIGNABLE_RMSD && motif_rmsd < MOTIF_RMSD && scaffold_rmsd < SCAFFOLD_RMSD,
                });
            }
            let any = verdicts.iter().any(|v| v.success);
            verdicts
                .into_iter()
                .filter(|v| v.success == any)
                .min_by(|a, b| a.global_rmsd.total_cmp(&b.global_rmsd))
        }
    };
    Ok(DesignVerdict {
        sc_rmsd,
        designable: sc_rmsd < DESIGNABLE_RMSD,
        per_refold,
        motif,
    })
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            what: "correlated series",
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::TooFewPoints { need: 2, got: x.len() });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::NonFinite("correlation of a constant series".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// A conformational ensemble of one chain, as Cα traces.
pub type Ensemble = [Vec<Vec3>];

fn check_ensemble(e: &Ensemble, what: &str) -> Result<usize> {
    if e.len() < 2 {
        return Err(Error::TooFewPoints { need: 2, got: e.len() });
    }
    let l = e[0].len();
    if let Some(bad) = e.iter().find(|c| c.len() != l) {
        return Err(Error::LengthMismatch {
            what: if what == "a" {
                "ensemble A members"
            } else {
                "ensemble B members"
            },
            left: bad.len(),
            right: l,
        });
    }
    Ok(l)
}

/// Mean Kabsch Cα RMSD over all unordered pairs of conformations.
pub fn mean_pairwise_rmsd(e: &Ensemble) -> Result<f64> {
    check_ensemble(e, "a")?;
    let pairs: Vec<(usize, usize)> = (0..e.len())
        .flat_map(|i| (i + 1..e.len()).map(move |j| (i, j)))
        .collect();
    let r = pairs
        .par_iter()
        .map(|&(i, j)| kabsch_rmsd(&e[i], &e[j]))
        .collect::<Result<Vec<_>>>()?;
    Ok(r.iter().sum::<f64>() / r.len() as f64)
}

fn align_all(e: &Ensemble, reference: &[Vec3]) -> Result<Vec<Vec<Vec3>>> {
    e.iter()
        .map(|c| {
            let s = kabsch(c, reference)?;
            Ok(c.iter().map(|p| s.apply(p)).collect())
        })
        .collect()
}

fn mean_structure(e: &[Vec<Vec3>]) -> Vec<Vec3> {
    let l = e[0].len();
    (0..l)
        .map(|i| e.iter().map(|c| c[i]).sum::<Vec3>() / e.len() as f64)
        .collect()
}

/// Per-residue fluctuation about the ensemble mean after superposing every member on the first.
pub fn rmsf(e: &Ensemble) -> Result<Vec<f64>> {
    check_ensemble(e, "a")?;
    let aligned = align_all(e, &e[0])?;
    let mean = mean_structure(&aligned);
    Ok((0..mean.len())
        .map(|i| (aligned.iter().map(|c| (c[i] - mean[i]).norm_squared()).sum::<f64>() / aligned.len() as f64).sqrt())
        .collect())
}

/// Exact 2-Wasserstein distance between two equal-size point clouds in the plane.
pub fn w2_2d(a: &[[f64; 2]], b: &[[f64; 2]]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            what: "W2 point sets",
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::Empty("W2 point sets".into()));
    }
    let c = CostMatrix::from_fn(a.len(), |i, j| {
        (a[i][0] - b[j][0]).powi(2) + (a[i][1] - b[j][1]).powi(2)
    });
    let assignment = solve_assignment(&c)?;
    Ok((assignment.cost / a.len() as f64).max(0.0).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub pairwise_rmsd_a: f64,
    pub pairwise_rmsd_b: f64,
    pub rmsf_a: Vec<f64>,
    pub rmsf_b: Vec<f64>,
    /// Pearson correlation of the two RMSF profiles; `None` when either profile is constant.
    pub rmsf_pearson: Option<f64>,
    pub pca_a: Vec<[f64; 2]>,
    pub pca_b: Vec<[f64; 2]>,
    pub pca_w2: f64,
}

/// Compares a generated ensemble `a` with a reference ensemble `b` of the same chain.
///
/// PCA is fitted on `b` superposed onto its own mean; both ensembles are projected on
/// the first two components. W2 uses the first `min(|a|, |b|)` members of each.
pub fn ensemble_stats(a: &Ensemble, b: &Ensemble) -> Result<EnsembleStats> {
    let la = check_ensemble(a, "a")?;
    let lb = check_ensemble(b, "b")?;
    if la != lb {
        return Err(Error::LengthMismatch {
            what: "ensemble residue counts",
            left: la,
            right: lb,
        });
    }
    let rmsf_a = rmsf(a)?;
    let rmsf_b = rmsf(b)?;
    let rmsf_pearson = pearson(&rmsf_a, &rmsf_b).ok();

    let mut reference = mean_structure(&align_all(b, &b[0])?);
    for _ in 0..3 {
        reference = mean_structure(&align_all(b, &reference)?);
    }
    let flatten = |e: &[Vec<Vec3>]| -> DMatrix<f64> { DMatrix::from_fn(e.len(), 3 * la, |r, c| e[r][c / 3][c % 3]) };
    let xb = flatten(&align_all(b, &reference)?);
    let xa = flatten(&align_all(a, &reference)?);
    let mean = xb.row_mean();
    let center = |x: &DMatrix<f64>| {
        let mut y = x.clone();
        for mut row in y.row_iter_mut() {
            row -= &mean;
        }
        y
    };
    let cb = center(&xb);
    let ca = center(&xa);
    let svd = cb.clone().svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::NonFinite("PCA SVD".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let components: Vec<_> = order.iter().take(2).map(|&k| v_t.row(k).transpose()).collect();
    let project = |x: &DMatrix<f64>| -> Vec<[f64; 2]> {
        (0..x.nrows())
            .map(|r| {
                let row = x.row(r);
                let mut p = [0.0; 2];
                for (k, comp) in components.iter().enumerate() {
                    p[k] = row.dot(&comp.transpose());
                }
                p
            })
            .collect()
    };
    let pca_a = project(&ca);
    let pca_b = project(&cb);
    let m = pca_a.len().min(pca_b.len());
    let pca_w2 = w2_2d(&pca_a[..m], &pca_b[..m])?;
    Ok(EnsembleStats {
        pairwise_rmsd_a: mean_pairwise_rmsd(a)?,
        pairwise_rmsd_b: mean_pairwise_rmsd(b)?,
        rmsf_a,
        rmsf_b,
        rmsf_pearson,
        pca_a,
        pca_b,
        pca_w2,
    })
}

/// Cross-target summary: correlation of per-target mean pairwise RMSD, plus per-target stats.
pub fn ensemble_comparison(targets: &[(Vec<Vec<Vec3>>, Vec<Vec<Vec3>>)]) -> Result<(Option<f64>, Vec<EnsembleStats>)> {
    let stats = targets
        .iter()
        .map(|(a, b)| ensemble_stats(a, b))
        .collect::<Result<Vec<_>>>()?;
    let xa: Vec<f64> = stats.iter().map(|s| s.pairwise_rmsd_a).collect();
    let xb: Vec<f64> = stats.iter().map(|s| s.pairwise_rmsd_b).collect();
    Ok((pearson(&xa, &xb).ok(), stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sample_haar_rotation, RigidFrame};
    use crate::seeded_rng;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn random_cloud(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<Vec3> {
        (0..n)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()) * scale)
            .collect()
    }

    fn moved(p: &[Vec3], g: &RigidFrame) -> Vec<Vec3> {
        p.iter().map(|x| g.apply(x)).collect()
    }

    #[test]
    fn kabsch_identity_and_rigid_motion() {
        let mut rng = seeded_rng(41);
        let a = random_cloud(&mut rng, 20, 10.0);
        assert!(kabsch_rmsd(&a, &a).unwrap() < 1e-12);
        for _ in 0..50 {
            let g = RigidFrame::new(sample_haar_rotation(&mut rng), Vec3::new(5.0, -3.0, 8.0));
            let b = moved(&a, &g);
            assert!(kabsch_rmsd(&a, &b).unwrap() < 1e-9);
            assert!(kabsch_rmsd(&b, &a).unwrap() < 1e-9);
        }
        assert!(matches!(kabsch_rmsd(&a[..2], &a[..2]), Err(Error::TooFewPoints { .. })));
    }

    #[test]
    fn kabsch_never_reflects() {
        let a = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ];
        let mirror: Vec<Vec3> = a.iter().map(|p| Vec3::new(p.x, p.y, -p.z)).collect();
        let s = kabsch(&a, &mirror).unwrap();
        assert!((s.rot.determinant() - 1.0).abs() < 1e-12);
        assert!(s.rmsd > 0.1);
    }

    #[test]
    fn kabsch_symmetric_and_noise_level() {
        let mut rng = seeded_rng(42);
        // 0.5 Å RMS displacement per point, split over three coordinates
        let noise = Normal::new(0.0, 0.5 / 3.0f64.sqrt()).unwrap();
        let n = 50;
        let mut total = 0.0;
        for _ in 0..1000 {
            let a = random_cloud(&mut rng, n, 20.0);
            let b: Vec<Vec3> = a
                .iter()
                .map(|p| p + Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng)))
                .collect();
            let r = kabsch_rmsd(&a, &b).unwrap();
            assert!((r - kabsch_rmsd(&b, &a).unwrap()).abs() < 1e-9);
            assert!((0.35..=0.65).contains(&r), "{r}");
            total += r * r;
        }
        // E[rmsd²] = σ²(1 − 6/(3n)) once the six rigid degrees of freedom are fitted out.
        let expected = 0.25 * (1.0 - 6.0 / (3.0 * n as f64));
        assert!((total / 1000.0 - expected).abs() < 0.02);
    }

    #[test]
    fn tm_basics() {
        assert!((tm_d0(100) - 3.6517).abs() < 1e-3);
        assert_eq!(tm_d0(10), 0.5);
        let mut rng = seeded_rng(43);
        let a = random_cloud(&mut rng, 40, 15.0);
        assert!((tm_score(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let g = RigidFrame::new(sample_haar_rotation(&mut rng), Vec3::new(1.0, 2.0, 3.0));
        assert!((tm_score(&moved(&a, &g), &a).unwrap() - 1.0).abs() < 1e-9);
        let b = random_cloud(&mut rng, 40, 15.0);
        let s = tm_score(&a, &b).unwrap();
        assert!(s > 0.0 && s < 0.5);
        let s2 = tm_score(&moved(&a, &g), &b).unwrap();
        assert!((s - s2).abs() < 1e-9);
        assert!(tm_score(&a, &b[..39]).is_err());
    }

    #[test]
    fn tm_finds_the_shared_half() {
        // Second half displaced rigidly: the best superposition recovers half the residues.
        let mut rng = seeded_rng(44);
        let a = random_cloud(&mut rng, 60, 20.0);
        let g = RigidFrame::new(sample_haar_rotation(&mut rng), Vec3::new(30.0, 0.0, 0.0));
        let mut b = a.clone();
        for p in b.iter_mut().skip(30) {
            *p = g.apply(p);
        }
        let s = tm_score(&a, &b).unwrap();
        assert!(s >= 0.5, "{s}");
    }

    #[test]
    fn reward_examples() {
        use SsLabel::*;
        assert!((diversity_reward(&[H; 10]) - 1.0).abs() < 1e-12);
        assert!((diversity_reward(&[E; 10]) - 2.0).abs() < 1e-12);
        let thirds = [H, E, C, H, E, C];
        let direct = (1.0 + 2.0 + 0.5) / 3.0 * (1.0 - 3.0f64.ln());
        assert!((diversity_reward(&thirds) - direct).abs() < 1e-12);
        assert!((diversity_reward(&thirds) + 0.1150477).abs() < 1e-6);
        let flipped = RewardConfig {
            entropy_sign: -1.0,
            ..Default::default()
        };
        assert!(diversity_reward_with(&thirds, &flipped) > diversity_reward_with(&[H; 6], &flipped));
        let mut shuffled = thirds;
        shuffled.reverse();
        assert_eq!(diversity_reward(&shuffled), diversity_reward(&thirds));
    }

    #[test]
    fn keep_runs_enforces_minimum() {
        let c = [true, true, true, false, true, true, true, true, false, true];
        assert_eq!(
            keep_runs(&c, 4),
            vec![false, false, false, false, true, true, true, true, false, false]
        );
        assert_eq!(keep_runs(&c, 1), c.to_vec());
    }

    #[test]
    fn clustering_cases() {
        let mut rng = seeded_rng(45);
        let a = random_cloud(&mut rng, 30, 15.0);
        let copies = vec![a.clone(); 4];
        let c = greedy_cluster(&copies, 0.5).unwrap();
        assert_eq!(c.n_clusters, 1);
        assert_eq!(c.assignments, vec![0; 4]);
        let distinct: Vec<Vec<Vec3>> = (0..4).map(|_| random_cloud(&mut rng, 30, 15.0)).collect();
        let c = greedy_cluster(&distinct, 0.5).unwrap();
        assert_eq!(c.n_clusters, 4);
        assert_eq!(c.leaders, vec![0, 1, 2, 3]);
    }

    #[test]
    fn novelty_and_diversity() {
        let mut rng = seeded_rng(46);
        let refs: Vec<Vec<Vec3>> = (0..5).map(|_| random_cloud(&mut rng, 25, 12.0)).collect();
        let samples: Vec<Vec<Vec3>> = (0..5)
            .map(|k| {
                if k == 0 {
                    refs[2].clone()
                } else {
                    random_cloud(&mut rng, 25, 12.0)
                }
            })
            .collect();
        let stats = novelty_stats(&samples, &refs).unwrap();
        assert!((stats.max_tm[0] - 1.0).abs() < 1e-12);
        let mut direct = Vec::new();
        for s in &samples {
            let mut m: f64 = 0.0;
            for r in &refs {
                m = m.max(tm_score(s, r).unwrap());
            }
            direct.push(m);
        }
        assert_eq!(stats.max_tm, direct);
        let below = direct.iter().filter(|&&m| m < 0.3).count() as f64 / 5.0;
        assert_eq!(stats.novel_fraction, below);
        assert!(novelty_stats(&[], &refs).is_err());

        let two = vec![refs[0].clone(), refs[0].clone()];
        assert!((diversity_stats(&two).unwrap() - 1.0).abs() < 1e-12);
        let three = &refs[..3];
        let hand = (tm_score(&three[0], &three[1]).unwrap()
            + tm_score(&three[0], &three[2]).unwrap()
            + tm_score(&three[1], &three[2]).unwrap())
            / 3.0;
        assert!((diversity_stats(three).unwrap() - hand).abs() < 1e-12);
        let reordered = vec![three[2].clone(), three[0].clone(), three[1].clone()];
        assert!((diversity_stats(&reordered).unwrap() - hand).abs() < 1e-9);
        assert!(diversity_stats(&refs[..1]).is_err());
    }

    fn coords_from_ca(ca: &[Vec3]) -> AtomCoords {
        AtomCoords::new(
            ca.iter()
                .map(|&p| {
                    [
                        p + Vec3::new(-0.5, 1.4, 0.0),
                        p,
                        p + Vec3::new(1.5, 0.0, 0.0),
                        p + Vec3::new(2.1, -1.1, 0.0),
                    ]
                })
                .collect(),
        )
    }

    #[test]
    fn sc_rmsd_rules() {
        let mut rng = seeded_rng(47);
        let ca = random_cloud(&mut rng, 20, 10.0);
        let gen = coords_from_ca(&ca);
        let v = sc_rmsd_eval(&gen, std::slice::from_ref(&gen), None).unwrap();
        assert!(v.sc_rmsd < 1e-12 && v.designable);

        // uniform scaling gives a controllable RMSD
        let scaled_to = |target: f64| -> AtomCoords {
            let c = centroid(&ca);
            let base = kabsch_rmsd(&ca, &ca.iter().map(|p| c + (p - c) * 2.0).collect::<Vec<_>>()).unwrap();
            let f = 1.0 + target / base;
            coords_from_ca(&ca.iter().map(|p| c + (p - c) * f).collect::<Vec<_>>())
        };
        let r2 = scaled_to(2.0);
        let v = sc_rmsd_eval(&gen, &[r2], None).unwrap();
        assert!((v.sc_rmsd - 2.0).abs() < 1e-9);
        let refolds = vec![scaled_to(3.1), scaled_to(1.9), scaled_to(2.5)];
        let v = sc_rmsd_eval(&gen, &refolds, None).unwrap();
        assert!((v.sc_rmsd - 1.9).abs() < 1e-9);
        assert!(v.designable);
        let fewer = sc_rmsd_eval(&gen, &refolds[..1], None).unwrap();
        assert!(fewer.sc_rmsd >= v.sc_rmsd);

        let regions = MotifRegions::from_motif(&[3, 4, 5], 20);
        let v = sc_rmsd_eval(&gen, std::slice::from_ref(&gen), Some(&regions)).unwrap();
        assert!(v.motif.unwrap().success);
        let bad = MotifRegions {
            motif: vec![1, 2],
            scaffold: vec![2, 3],
        };
        assert!(sc_rmsd_eval(&gen, std::slice::from_ref(&gen), Some(&bad)).is_err());
        let oob = MotifRegions::from_motif(&[25], 20);
        assert!(sc_rmsd_eval(&gen, std::slice::from_ref(&gen), Some(&oob)).is_err());
    }

    #[test]
    fn w2_matches_brute_force() {
        let mut rng = seeded_rng(48);
        for n in 1..=6 {
            for _ in 0..20 {
                let a: Vec<[f64; 2]> = (0..n).map(|_| [rng.random(), rng.random()]).collect();
                let b: Vec<[f64; 2]> = (0..n).map(|_| [rng.random(), rng.random()]).collect();
                let mut perm: Vec<usize> = (0..n).collect();
                let mut best = f64::INFINITY;
                permute(&mut perm, 0, &mut |p| {
                    let c: f64 = p
                        .iter()
                        .enumerate()
                        .map(|(i, &j)| (a[i][0] - b[j][0]).powi(2) + (a[i][1] - b[j][1]).powi(2))
                        .sum();
                    best = best.min(c);
                });
                let expected = (best / n as f64).sqrt();
                assert!((w2_2d(&a, &b).unwrap() - expected).abs() < 1e-9);
            }
        }
    }

    fn permute(p: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == p.len() {
            f(p);
            return;
        }
        for i in k..p.len() {
            p.swap(k, i);
            permute(p, k + 1, f);
            p.swap(k, i);
        }
    }

    fn jittered_ensemble(rng: &mut impl Rng, base: &[Vec3], m: usize, sigma: &[f64]) -> Vec<Vec<Vec3>> {
        (0..m)
            .map(|_| {
                let g = RigidFrame::new(sample_haar_rotation(rng), Vec3::new(rng.random(), 0.0, 0.0));
                base.iter()
                    .zip(sigma)
                    .map(|(p, &s)| {
                        let n = Normal::new(0.0, s).unwrap();
                        g.apply(&(p + Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng))))
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn ensemble_self_comparison() {
        let mut rng = seeded_rng(49);
        let base = random_cloud(&mut rng, 15, 12.0);
        let sigma: Vec<f64> = (0..15).map(|i| 0.2 + 0.1 * i as f64).collect();
        let e = jittered_ensemble(&mut rng, &base, 10, &sigma);
        let s = ensemble_stats(&e, &e).unwrap();
        assert!((s.rmsf_pearson.unwrap() - 1.0).abs() < 1e-12);
        assert!(s.pca_w2 < 1e-9);
        assert_eq!(s.pairwise_rmsd_a, s.pairwise_rmsd_b);

        let identical = vec![base.clone(); 5];
        assert!(rmsf(&identical).unwrap().iter().all(|&x| x < 1e-9));
        assert!(ensemble_stats(&e[..1], &e).is_err());

        let e2 = jittered_ensemble(&mut rng, &base, 12, &sigma);
        let s2 = ensemble_stats(&e2, &e).unwrap();
        assert!(s2.rmsf_pearson.unwrap() > 0.5);
    }

    #[test]
    fn pearson_basics() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }
}
