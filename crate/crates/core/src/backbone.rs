//! Frames ↔ backbone atoms, amino-acid tokens and dihedral angles.

use nalgebra::Matrix3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{remove_com, FrameChain, RigidFrame, Rotation, Vec3};

/// One-letter amino-acid codes in token order.
pub const AMINO_ACIDS: [char; 20] = [
    'A', 'C', 'D', 'E', 'F', 'G', 'H', 'I', 'K', 'L', 'M', 'N', 'P', 'Q', 'R', 'S', 'T', 'V', 'W', 'Y',
];

const THREE_LETTER: [&str; 20] = [
    "ALA", "CYS", "ASP", "GLU", "PHE", "GLY", "HIS", "ILE", "LYS", "LEU", "MET", "ASN", "PRO", "GLN", "ARG", "SER",
    "THR", "VAL", "TRP", "TYR",
];

pub const MASK_TOKEN: u8 = 20;
pub const VOCAB_SIZE: usize = 21;

pub fn token_from_one_letter(c: char) -> Option<u8> {
    let c = c.to_ascii_uppercase();
    AMINO_ACIDS.iter().position(|&a| a == c).map(|i| i as u8)
}

pub fn token_from_three_letter(code: &str) -> Option<u8> {
    let code = code.trim().to_ascii_uppercase();
    THREE_LETTER.iter().position(|&a| a == code).map(|i| i as u8)
}

/// One-letter code, `X` for the mask token.
pub fn one_letter(token: u8) -> char {
    AMINO_ACIDS.get(token as usize).copied().unwrap_or('X')
}

/// Three-letter code, `UNK` for the mask token.
pub fn three_letter(token: u8) -> &'static str {
    THREE_LETTER.get(token as usize).copied().unwrap_or("UNK")
}

/// Backbone heavy atoms of one residue, in the order N, Cα, C, O.
pub type ResidueAtoms = [Vec3; 4];

pub const ATOM_NAMES: [&str; 4] = ["N", "CA", "C", "O"];

/// Backbone coordinates of a chain, Å.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomCoords {
    pub residues: Vec<ResidueAtoms>,
}

impl AtomCoords {
    pub fn new(residues: Vec<ResidueAtoms>) -> Self {
        AtomCoords { residues }
    }

    pub fn len(&self) -> usize {
        self.residues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residues.is_empty()
    }

    pub fn ca(&self) -> Vec<Vec3> {
        self.residues.iter().map(|r| r[1]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.residues
            .iter()
            .all(|r| r.iter().all(|p| p.iter().all(|x| x.is_finite())))
    }

    /// Indices `i` whose Cα(i)–Cα(i+1) distance falls outside `[2.0, 4.5]` Å.
    pub fn implausible_ca_gaps(&self) -> Vec<usize> {
        self.residues
            .windows(2)
            .enumerate()
            .filter(|(_, w)| {
                let d = (w[1][1] - w[0][1]).norm();
                !(2.0..=4.5).contains(&d)
            })
            .map(|(i, _)| i)
            .collect()
    }
}

/// Local backbone coordinates of an idealized residue, Cα at the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdealResidue {
    pub n: [f64; 3],
    pub c: [f64; 3],
    pub o: [f64; 3],
}

impl Default for IdealResidue {
    fn default() -> Self {
        IdealResidue {
            n: [-0.5272, 1.3593, 0.0],
            c: [1.5233, 0.0, 0.0],
            o: [2.1421, -1.0620, 0.0],
        }
    }
}

impl IdealResidue {
    pub fn atoms(&self) -> ResidueAtoms {
        [
            Vec3::from(self.n),
            Vec3::zeros(),
            Vec3::from(self.c),
            Vec3::from(self.o),
        ]
    }
}

/// Places the default ideal residue in every frame.
pub fn frames_to_atoms(chain: &FrameChain) -> AtomCoords {
    frames_to_atoms_with(chain, &IdealResidue::default())
}

pub fn frames_to_atoms_with(chain: &FrameChain, ideal: &IdealResidue) -> AtomCoords {
    let local = ideal.atoms();
    AtomCoords::new(chain.frames.iter().map(|f| local.map(|p| f.apply(&p))).collect())
}

/// Gram–Schmidt frame of one residue: origin at Cα, x along Cα→C, N in the xy-plane.
pub fn residue_frame(atoms: &ResidueAtoms, index: usize) -> Result<RigidFrame> {
    let [n, ca, c, _] = *atoms;
    let u = c - ca;
    let w = n - ca;
    if u.cross(&w).norm() < 1e-8 {
        return Err(Error::DegenerateResidue {
            index,
            reason: "collinear N, CA, C",
        });
    }
    let e1 = u.normalize();
    let e2 = (w - e1 * e1.dot(&w)).normalize();
    let e3 = e1.cross(&e2);
    let rot = Rotation::from_matrix_unchecked(Matrix3::from_columns(&[e1, e2, e3]));
    Ok(RigidFrame::new(rot, ca))
}

/// Inverse of [`frames_to_atoms`]; the result is recentered.
pub fn atoms_to_frames(atoms: &AtomCoords) -> Result<FrameChain> {
    let frames = atoms
        .residues
        .iter()
        .enumerate()
        .map(|(i, r)| residue_frame(r, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(remove_com(&FrameChain::new(frames)))
}

/// Amino-acid tokens with an observation mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceRecord {
    pub tokens: Vec<u8>,
    pub observed: Vec<bool>,
}

impl SequenceRecord {
    /// Builds a record from tokens; `observed` follows from the mask token.
    pub fn from_tokens(tokens: Vec<u8>) -> Result<Self> {
        if let Some(&bad) = tokens.iter().find(|&&t| t > MASK_TOKEN) {
            return Err(Error::InvalidSequence(format!("token {bad} outside vocabulary")));
        }
        let observed = tokens.iter().map(|&t| t != MASK_TOKEN).collect();
        Ok(SequenceRecord { tokens, observed })
    }

    /// Parses one-letter codes; `X` (or `-`) becomes the mask token. Whitespace is ignored.
    pub fn from_one_letter(s: &str) -> Result<Self> {
        let tokens = s
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| match c {
                'X' | 'x' | '-' => Ok(MASK_TOKEN),
                _ => token_from_one_letter(c)
                    .ok_or_else(|| Error::InvalidSequence(format!("unknown residue code {c:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        SequenceRecord::from_tokens(tokens)
    }

    pub fn fully_masked(n: usize) -> Self {
        SequenceRecord {
            tokens: vec![MASK_TOKEN; n],
            observed: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn to_one_letter(&self) -> String {
        self.tokens.iter().map(|&t| one_letter(t)).collect()
    }

    pub fn is_fully_observed(&self) -> bool {
        self.observed.iter().all(|&o| o)
    }

    pub fn is_fully_masked(&self) -> bool {
        self.observed.iter().all(|&o| !o)
    }

    /// Checks the token/observed consistency invariant.
    pub fn validate(&self) -> Result<()> {
        if self.tokens.len() != self.observed.len() {
            return Err(Error::LengthMismatch {
                what: "sequence tokens and mask",
                left: self.tokens.len(),
                right: self.observed.len(),
            });
        }
        for (i, (&t, &o)) in self.tokens.iter().zip(&self.observed).enumerate() {
            if t > MASK_TOKEN || (t == MASK_TOKEN) == o {
                return Err(Error::InvalidSequence(format!("position {i}: token {t}, observed {o}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MaskMode {
    Full,
    None,
    /// The whole sequence is masked with probability `p`, otherwise left untouched.
    Bernoulli(f64),
    Indices(Vec<usize>),
}

pub fn mask_sequence<R: Rng + ?Sized>(seq: &SequenceRecord, mode: &MaskMode, rng: &mut R) -> Result<SequenceRecord> {
    let n = seq.len();
    let mask_all = match mode {
        MaskMode::Full => true,
        MaskMode::None => false,
        MaskMode::Bernoulli(p) => {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::Config(format!("masking probability {p} outside [0, 1]")));
            }
            rng.random::<f64>() < *p
        }
        MaskMode::Indices(idx) => {
            let mut out = seq.clone();
            for &i in idx {
                if i >= n {
                    return Err(Error::IndexOutOfRange { index: i, len: n });
                }
                out.tokens[i] = MASK_TOKEN;
                out.observed[i] = false;
            }
            return Ok(out);
        }
    };
    Ok(if mask_all {
        SequenceRecord::fully_masked(n)
    } else {
        seq.clone()
    })
}

/// Torsion angle of four points in radians, `None` when either plane is undefined.
pub fn dihedral(p0: &Vec3, p1: &Vec3, p2: &Vec3, p3: &Vec3) -> Option<f64> {
    let b0 = p0 - p1;
    let b1 = p2 - p1;
    let b2 = p3 - p2;
    let b1n = b1.norm();
    if b1n < 1e-12 {
        return None;
    }
    let b1u = b1 / b1n;
    let v = b0 - b1u * b0.dot(&b1u);
    let w = b2 - b1u * b2.dot(&b1u);
    if v.norm() < 1e-8 || w.norm() < 1e-8 {
        return None;
    }
    let x = v.dot(&w);
    let y = b1u.cross(&v).dot(&w);
    Some(y.atan2(x))
}

/// Backbone φ/ψ of one residue. Terminal residues lack φ (first) or ψ (last).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhiPsi {
    pub phi: Option<f64>,
    pub psi: Option<f64>,
}

/// φ/ψ per residue, degenerate torsions reported as `None`.
pub fn backbone_dihedrals_lenient(atoms: &AtomCoords) -> Vec<PhiPsi> {
    let r = &atoms.residues;
    (0..r.len())
        .map(|i| PhiPsi {
            phi: (i > 0)
                .then(|| dihedral(&r[i - 1][2], &r[i][0], &r[i][1], &r[i][2]))
                .flatten(),
            psi: (i + 1 < r.len())
                .then(|| dihedral(&r[i][0], &r[i][1], &r[i][2], &r[i + 1][0]))
                .flatten(),
        })
        .collect()
}

/// φ/ψ per residue; any degenerate interior torsion is an error.
pub fn backbone_dihedrals(atoms: &AtomCoords) -> Result<Vec<PhiPsi>> {
    let n = atoms.len();
    if n < 2 {
        return Err(Error::TooFewPoints { need: 2, got: n });
    }
    let out = backbone_dihedrals_lenient(atoms);
    for (i, d) in out.iter().enumerate() {
        if (i > 0 && d.phi.is_none()) || (i + 1 < n && d.psi.is_none()) {
            return Err(Error::DegenerateResidue {
                index: i,
                reason: "undefined backbone torsion",
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sample_haar_rotation, sample_noise_chain};
    use crate::seeded_rng;

    #[test]
    fn identity_frame_gives_ideal_atoms() {
        let chain = FrameChain::new(vec![RigidFrame::identity()]);
        let atoms = frames_to_atoms(&chain);
        assert_eq!(atoms.residues[0], IdealResidue::default().atoms());
    }

    #[test]
    fn translation_frame_shifts_atoms() {
        let t = Vec3::new(1.0, -2.0, 0.5);
        let chain = FrameChain::new(vec![RigidFrame::new(Rotation::identity(), t)]);
        let atoms = frames_to_atoms(&chain);
        for (a, b) in atoms.residues[0].iter().zip(IdealResidue::default().atoms()) {
            assert!((a - (b + t)).norm() < 1e-15);
        }
    }

    #[test]
    fn ideal_atoms_give_identity_frame() {
        let atoms = AtomCoords::new(vec![IdealResidue::default().atoms()]);
        let chain = atoms_to_frames(&atoms).unwrap();
        assert!((chain.frames[0].rot.matrix() - Matrix3::identity()).amax() < 1e-15);
        assert_eq!(chain.frames[0].trans, Vec3::zeros());
    }

    #[test]
    fn frame_atom_roundtrip() {
        let mut rng = seeded_rng(21);
        for n in [1, 5, 40] {
            let chain = sample_noise_chain(n, 10.0, &mut rng);
            let back = atoms_to_frames(&frames_to_atoms(&chain)).unwrap();
            for (a, b) in chain.frames.iter().zip(&back.frames) {
                assert!((a.rot.matrix() - b.rot.matrix()).norm() < 1e-6);
                assert!((a.trans - b.trans).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn frames_to_atoms_is_equivariant() {
        let mut rng = seeded_rng(22);
        let chain = sample_noise_chain(8, 10.0, &mut rng);
        let g = RigidFrame::new(sample_haar_rotation(&mut rng), Vec3::new(3.0, 1.0, -7.0));
        let lhs = frames_to_atoms(&chain.transformed(&g));
        let rhs = frames_to_atoms(&chain);
        for (ra, rb) in lhs.residues.iter().zip(&rhs.residues) {
            for (a, b) in ra.iter().zip(rb) {
                assert!((a - g.apply(b)).norm() < 1e-12);
            }
        }
        // and atoms_to_frames commutes with the rotation part
        let back = atoms_to_frames(&lhs).unwrap();
        let base = atoms_to_frames(&rhs).unwrap();
        for (a, b) in back.frames.iter().zip(&base.frames) {
            assert!(((g.rot * b.rot).matrix() - a.rot.matrix()).amax() < 1e-9);
        }
    }

    #[test]
    fn collinear_residue_is_rejected() {
        let mut atoms = AtomCoords::new(vec![IdealResidue::default().atoms(); 3]);
        atoms.residues[1][0] = Vec3::new(-1.0, 0.0, 0.0);
        match atoms_to_frames(&atoms) {
            Err(Error::DegenerateResidue { index, .. }) => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mask_modes() {
        let seq = SequenceRecord::from_one_letter("ACDE").unwrap();
        let mut rng = seeded_rng(0);
        let full = mask_sequence(&seq, &MaskMode::Full, &mut rng).unwrap();
        assert!(full.tokens.iter().all(|&t| t == MASK_TOKEN));
        full.validate().unwrap();
        assert_eq!(mask_sequence(&seq, &MaskMode::None, &mut rng).unwrap(), seq);
        let part = mask_sequence(&seq, &MaskMode::Indices(vec![0, 2]), &mut rng).unwrap();
        assert_eq!(part.tokens, vec![MASK_TOKEN, 1, MASK_TOKEN, 3]);
        assert_eq!(part.observed, vec![false, true, false, true]);
        part.validate().unwrap();
        assert!(matches!(
            mask_sequence(&seq, &MaskMode::Indices(vec![4]), &mut rng),
            Err(Error::IndexOutOfRange { index: 4, len: 4 })
        ));
    }

    #[test]
    fn bernoulli_masking_is_all_or_nothing() {
        let seq = SequenceRecord::from_one_letter("MKTAYIAKQR").unwrap();
        let mut rng = seeded_rng(5);
        let trials = 10_000;
        let mut masked = 0;
        for _ in 0..trials {
            let out = mask_sequence(&seq, &MaskMode::Bernoulli(0.5), &mut rng).unwrap();
            if out.is_fully_masked() {
                masked += 1;
            } else {
                assert_eq!(out, seq);
            }
        }
        let frac = masked as f64 / trials as f64;
        assert!((0.48..=0.52).contains(&frac), "{frac}");
    }

    #[test]
    fn vocabulary_is_alphabetical() {
        assert_eq!(token_from_one_letter('A'), Some(0));
        assert_eq!(token_from_one_letter('Y'), Some(19));
        assert_eq!(token_from_three_letter("TRP"), Some(18));
        assert_eq!(three_letter(MASK_TOKEN), "UNK");
        let s = SequenceRecord::from_one_letter("AXY").unwrap();
        assert_eq!(s.tokens, vec![0, MASK_TOKEN, 19]);
        assert_eq!(s.to_one_letter(), "AXY");
        assert!(SequenceRecord::from_one_letter("AB1").is_err());
    }

    #[test]
    fn planar_cis_torsion_is_zero() {
        let p = [
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
        ];
        assert!(dihedral(&p[0], &p[1], &p[2], &p[3]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn known_torsion_values() {
        let a = Vec3::new(0.0, 1.0, 0.0);
        let b = Vec3::zeros();
        let c = Vec3::new(1.0, 0.0, 0.0);
        let trans = Vec3::new(1.0, -1.0, 0.0);
        assert!((dihedral(&a, &b, &c, &trans).unwrap().abs() - std::f64::consts::PI).abs() < 1e-12);
        let plus = Vec3::new(1.0, 0.0, 1.0);
        assert!((dihedral(&a, &b, &c, &plus).unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn torsion_reversal_and_mirror() {
        let mut rng = seeded_rng(23);
        for _ in 0..500 {
            let p: Vec<Vec3> = (0..4)
                .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()) * 4.0)
                .collect();
            let d = dihedral(&p[0], &p[1], &p[2], &p[3]).unwrap();
            let rev = dihedral(&p[3], &p[2], &p[1], &p[0]).unwrap();
            assert!((d - rev).abs() < 1e-9);
            let m: Vec<Vec3> = p.iter().map(|v| Vec3::new(v.x, v.y, -v.z)).collect();
            let mirrored = dihedral(&m[0], &m[1], &m[2], &m[3]).unwrap();
            assert!((d + mirrored).abs() < 1e-9);
        }
    }

    #[test]
    fn dihedrals_reject_short_chain() {
        let atoms = AtomCoords::new(vec![IdealResidue::default().atoms()]);
        assert!(backbone_dihedrals(&atoms).is_err());
    }
}
