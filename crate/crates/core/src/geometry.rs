//! SO(3) and SE(3)^N_0 primitives.
//!
//! Rotations are stored as 3×3 matrices in `f64`. Tangent vectors are
//! axis-angle coordinates in the Lie algebra, always *left-trivialized*:
//! a tangent `v` at base `r` refers to the curve `r · exp(s v)`.
//!
//! Time convention for the flow: `t = 0` is data, `t = 1` is noise.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Axis-angle coordinates of an element of so(3), in radians.
pub type RotVec = Vector3<f64>;

/// Below this angle exp/log switch to their Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Maximum tolerated deviation of `RᵀR` from identity before `so3_log` refuses the input.
pub const ORTHONORMALITY_TOL: f64 = 1e-6;

/// Default lower clamp on flow time.
pub const DEFAULT_T_MIN: f64 = 0.01;

/// Default standard deviation of noise translations, in Å.
pub const DEFAULT_NOISE_SCALE: f64 = 10.0;

/// A 3-D rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps `m` after checking that it is orthonormal with determinant +1.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let r = Rotation(m);
        let deviation = r.orthonormality_error();
        if !deviation.is_finite() || deviation > ORTHONORMALITY_TOL || m.determinant() < 0.0 {
            return Err(Error::NotOrthonormal { deviation });
        }
        Ok(r)
    }

    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    /// Rotation from a (not necessarily normalized) quaternion `w + xi + yj + zk`.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        let (w, x, y, z) = (w / n, x / n, y / n, z / n);
        Rotation(Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ))
    }

    /// Rotation by `angle` about the coordinate axis `axis` (0 = x, 1 = y, 2 = z).
    pub fn about_axis(axis: usize, angle: f64) -> Self {
        let mut v = RotVec::zeros();
        v[axis] = angle;
        so3_exp(&v)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Largest absolute entry of `RᵀR − I`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).amax()
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let w = vee_antisym(&self.0);
        let s = 0.5 * w.norm();
        let c = 0.5 * (self.0.trace() - 1.0);
        s.atan2(c)
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl std::ops::Mul<&Rotation> for &Rotation {
    type Output = Rotation;

    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

/// Skew-symmetric matrix `[v]ₓ`.
pub fn hat(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`] on skew-symmetric input.
pub fn vee(m: &Matrix3<f64>) -> Vec3 {
    Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

// vee(m - mᵀ), i.e. 2 sinθ · axis for a rotation.
fn vee_antisym(m: &Matrix3<f64>) -> Vec3 {
    Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)])
}

/// Exponential map so(3) → SO(3) (Rodrigues).
pub fn so3_exp(v: &RotVec) -> Rotation {
    let theta2 = v.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let half = 0.5 * theta;
        let sh = half.sin();
        (theta.sin() / theta, 2.0 * sh * sh / theta2)
    };
    let k = hat(v);
    Rotation(Matrix3::identity() + k * a + k * k * b)
}

/// Logarithm map SO(3) → so(3), returning the canonical representative with `‖v‖ ≤ π`.
///
/// At exactly π the axis sign is fixed so that its first nonzero component is positive.
pub fn so3_log(r: &Rotation) -> Result<RotVec> {
    let deviation = r.orthonormality_error();
    if !deviation.is_finite() || deviation > ORTHONORMALITY_TOL {
        return Err(Error::NotOrthonormal { deviation });
    }
    let m = &r.0;
    let w = vee_antisym(m);
    let s = 0.5 * w.norm();
    let c = (0.5 * (m.trace() - 1.0)).clamp(-1.0, 1.0);
    let theta = s.atan2(c);

    if theta < SMALL_ANGLE {
        return Ok(w * (0.5 + theta * theta / 12.0));
    }
    if c > -0.99 {
        return Ok(w * (0.5 * theta / s));
    }

    // Near π the antisymmetric part vanishes; read the axis from (R + Rᵀ)/2 - cI = (1 - c) a aᵀ.
    let b = (m + m.transpose()) * 0.5 - Matrix3::identity() * c;
    let k = (0..3).max_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)])).unwrap_or(0);
    let mut axis: Vec3 = b.column(k).into_owned();
    axis /= axis.norm();
    let along = axis.dot(&w);
    if along.abs() > 1e-14 {
        if along < 0.0 {
            axis = -axis;
        }
    } else {
        canonicalize_sign(&mut axis);
    }
    Ok(axis * theta)
}

fn canonicalize_sign(axis: &mut Vec3) {
    if let Some(first) = axis.iter().copied().find(|x| x.abs() > 1e-12) {
        if first < 0.0 {
            *axis = -*axis;
        }
    }
}

/// Left-trivialized logarithm of `target` seen from `base`: `vee(log(baseᵀ · target))`.
pub fn so3_log_at(base: &Rotation, target: &Rotation) -> Result<RotVec> {
    so3_log(&(base.transpose() * *target))
}

/// `base · exp(v)`.
pub fn so3_exp_at(base: &Rotation, v: &RotVec) -> Rotation {
    *base * so3_exp(v)
}

/// Geodesic distance on SO(3) under the bi-invariant metric (the relative rotation angle).
pub fn so3_distance(a: &Rotation, b: &Rotation) -> f64 {
    (a.transpose() * *b).angle()
}

/// A rigid frame `x = (r, s)` acting on points as `p ↦ r p + s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidFrame {
    pub rot: Rotation,
    pub trans: Vec3,
}

impl RigidFrame {
    pub fn new(rot: Rotation, trans: Vec3) -> Self {
        RigidFrame { rot, trans }
    }

    pub fn identity() -> Self {
        RigidFrame::new(Rotation::identity(), Vec3::zeros())
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rot.apply(p) + self.trans
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &RigidFrame) -> RigidFrame {
        RigidFrame::new(self.rot * other.rot, self.rot.apply(&other.trans) + self.trans)
    }

    pub fn inverse(&self) -> RigidFrame {
        let rt = self.rot.transpose();
        RigidFrame::new(rt, -rt.apply(&self.trans))
    }
}

/// An ordered chain of residue frames; a point on SE(3)^N.
///
/// Chains produced by this crate have zero translational center of mass
/// (a point on SE(3)^N_0); [`remove_com`] restores that after edits.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameChain {
    pub frames: Vec<RigidFrame>,
}

impl FrameChain {
    pub fn new(frames: Vec<RigidFrame>) -> Self {
        FrameChain { frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Mean translation.
    pub fn com(&self) -> Vec3 {
        if self.frames.is_empty() {
            return Vec3::zeros();
        }
        let sum: Vec3 = self.frames.iter().map(|f| f.trans).sum();
        sum / self.frames.len() as f64
    }

    pub fn translations(&self) -> Vec<Vec3> {
        self.frames.iter().map(|f| f.trans).collect()
    }

    /// Left-multiplies every frame by `g`.
    pub fn transformed(&self, g: &RigidFrame) -> FrameChain {
        FrameChain::new(self.frames.iter().map(|f| g.compose(f)).collect())
    }
}

/// Shifts all translations so that their mean is zero. Rotations are untouched.
pub fn remove_com(chain: &FrameChain) -> FrameChain {
    let com = chain.com();
    FrameChain::new(
        chain
            .frames
            .iter()
            .map(|f| RigidFrame::new(f.rot, f.trans - com))
            .collect(),
    )
}

fn check_unit_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::TimeOutOfRange { t, lo: 0.0, hi: 1.0 });
    }
    Ok(())
}

/// Point at fraction `t` along the geodesic from `x0` (data, t = 0) to `x1` (noise, t = 1).
pub fn geodesic_interpolant(x0: &RigidFrame, x1: &RigidFrame, t: f64) -> Result<RigidFrame> {
    check_unit_time(t)?;
    if t == 0.0 {
        return Ok(*x0);
    }
    if t == 1.0 {
        return Ok(*x1);
    }
    let v = so3_log_at(&x0.rot, &x1.rot)?;
    let rot = so3_exp_at(&x0.rot, &(v * t));
    let trans = x0.trans * (1.0 - t) + x1.trans * t;
    Ok(RigidFrame::new(rot, trans))
}

/// Residue-wise [`geodesic_interpolant`] over two chains of equal length.
pub fn interpolate_chain(x0: &FrameChain, x1: &FrameChain, t: f64) -> Result<FrameChain> {
    if x0.len() != x1.len() {
        return Err(Error::LengthMismatch {
            what: "interpolated chains",
            left: x0.len(),
            right: x1.len(),
        });
    }
    let frames = x0
        .frames
        .iter()
        .zip(&x1.frames)
        .map(|(a, b)| geodesic_interpolant(a, b, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(FrameChain::new(frames))
}

/// One residue's tangent vector: left-trivialized rotation coordinates and a translation velocity.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Tangent {
    pub rot: RotVec,
    pub trans: Vec3,
}

impl Tangent {
    pub fn zero() -> Self {
        Tangent::default()
    }

    pub fn norm_squared(&self) -> f64 {
        self.rot.norm_squared() + self.trans.norm_squared()
    }

    pub fn is_finite(&self) -> bool {
        self.rot.iter().chain(self.trans.iter()).all(|x| x.is_finite())
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.rot.x,
            self.rot.y,
            self.rot.z,
            self.trans.x,
            self.trans.y,
            self.trans.z,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Tangent {
            rot: Vec3::new(v[0], v[1], v[2]),
            trans: Vec3::new(v[3], v[4], v[5]),
        }
    }
}

/// Per-residue tangent vectors over a chain.
pub type TangentField = Vec<Tangent>;

/// Regression target at `x_t` for the pair ending at data frame `x0`.
///
/// The rotation part `log_{r_t}(r_0)/t` points toward the data; the translation
/// part `(s_t - s_0)/t` points toward the noise. Samplers pair them with
/// opposite-signed steps.
pub fn conditional_field(xt: &RigidFrame, x0: &RigidFrame, t: f64, t_min: f64) -> Result<Tangent> {
    if !(t >= t_min && t <= 1.0) {
        return Err(Error::TimeOutOfRange { t, lo: t_min, hi: 1.0 });
    }
    let rot = so3_log_at(&xt.rot, &x0.rot)? / t;
    let trans = (xt.trans - x0.trans) / t;
    Ok(Tangent { rot, trans })
}

/// Residue-wise [`conditional_field`].
pub fn conditional_chain_field(xt: &FrameChain, x0: &FrameChain, t: f64, t_min: f64) -> Result<TangentField> {
    if xt.len() != x0.len() {
        return Err(Error::LengthMismatch {
            what: "conditional field chains",
            left: xt.len(),
            right: x0.len(),
        });
    }
    xt.frames
        .iter()
        .zip(&x0.frames)
        .map(|(a, b)| conditional_field(a, b, t, t_min))
        .collect()
}

/// Haar-uniform rotation drawn through a normalized Gaussian quaternion.
pub fn sample_haar_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    loop {
        let q: [f64; 4] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let n2: f64 = q.iter().map(|x| x * x).sum();
        if n2 > 1e-12 {
            return Rotation::from_quaternion(q[0], q[1], q[2], q[3]);
        }
    }
}

/// Source-distribution sample: Haar rotations and isotropic Gaussian translations
/// with standard deviation `trans_scale` Å, recentered.
pub fn sample_noise_chain<R: Rng + ?Sized>(n_residues: usize, trans_scale: f64, rng: &mut R) -> FrameChain {
    let frames = (0..n_residues)
        .map(|_| {
            let rot = sample_haar_rotation(rng);
            let trans = Vec3::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            ) * trans_scale;
            RigidFrame::new(rot, trans)
        })
        .collect();
    remove_com(&FrameChain::new(frames))
}
