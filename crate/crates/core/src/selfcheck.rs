//! Fast invariant checks behind the `selfcheck` command.

use rand::Rng;

use crate::backbone::SequenceRecord;
use crate::coupling::{chain_cost, ot_assignment, solve_assignment, CostMatrix, CostWeights};
use crate::geometry::{
    conditional_field, geodesic_interpolant, sample_haar_rotation, sample_noise_chain, so3_distance, so3_exp, so3_log,
    so3_log_at, RigidFrame, Tangent, Vec3,
};
use crate::metrics::{kabsch_rmsd, tm_score};
use crate::model::{Model, ModelConfig, ModelInput};
use crate::{seeded_rng, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed value against its tolerance.
    pub detail: String,
}

fn check(name: &'static str, worst: f64, tol: f64) -> Check {
    Check {
        name,
        passed: worst.is_finite() && worst < tol,
        detail: format!("worst {worst:.3e} (tolerance {tol:.0e})"),
    }
}

fn random_rotvec(rng: &mut impl Rng, max_angle: f64) -> Vec3 {
    let axis = loop {
        let a = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if a.norm() > 1e-3 && a.norm() <= 1.0 {
            break a.normalize();
        }
    };
    axis * rng.random_range(0.0..max_angle)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..n {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

/// Runs every check; output depends only on `seed`.
pub fn run_all(seed: u64) -> Result<Vec<Check>> {
    let mut rng = seeded_rng(seed);
    let mut out = Vec::new();

    let mut worst = 0.0f64;
    for _ in 0..2000 {
        let v = random_rotvec(&mut rng, std::f64::consts::PI - 1e-6);
        worst = worst.max((so3_log(&so3_exp(&v))? - v).norm());
    }
    out.push(check("so3 exp/log roundtrip", worst, 1e-9));

    let mut worst = 0.0f64;
    for _ in 0..200 {
        let a = RigidFrame::new(sample_haar_rotation(&mut rng), Vec3::zeros());
        let b = RigidFrame::new(sample_haar_rotation(&mut rng), Vec3::zeros());
        let d = so3_distance(&a.rot, &b.rot);
        for k in 0..=10 {
            let t = k as f64 / 10.0;
            let xt = geodesic_interpolant(&a, &b, t)?;
            worst = worst.max((so3_distance(&a.rot, &xt.rot) - t * d).abs());
        }
    }
    out.push(check("geodesic distance linearity", worst, 1e-9));

    let mut worst = 0.0f64;
    for _ in 0..200 {
        let x0 = RigidFrame::new(sample_haar_rotation(&mut rng), Vec3::zeros());
        let x1 = RigidFrame::new(sample_haar_rotation(&mut rng), Vec3::zeros());
        let d = so3_distance(&x0.rot, &x1.rot);
        for k in 1..=20 {
            let t = 0.05 * k as f64;
            let xt = geodesic_interpolant(&x0, &x1, t)?;
            let u = conditional_field(&xt, &x0, t, 0.01)?;
            worst = worst.max((u.rot.norm() - d).abs());
        }
    }
    out.push(check("conditional field norm constancy", worst, 1e-8));

    let mut worst = 0.0f64;
    for _ in 0..500 {
        let g = sample_haar_rotation(&mut rng);
        let a = sample_haar_rotation(&mut rng);
        let b = so3_exp(&random_rotvec(&mut rng, 3.0)) * a;
        worst = worst.max((so3_log_at(&(g * a), &(g * b))? - so3_log_at(&a, &b)?).norm());
    }
    out.push(check("left invariance of log_at", worst, 1e-9));

    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(1..=6);
        let c = CostMatrix::from_fn(n, |_, _| rng.random_range(0.0..10.0));
        let best = permutations(n)
            .iter()
            .map(|p| c.permutation_cost(p))
            .fold(f64::INFINITY, f64::min);
        worst = worst.max((solve_assignment(&c)?.cost - best).abs());
    }
    out.push(check("assignment equals exhaustive search", worst, 1e-9));

    let mut worst = f64::NEG_INFINITY;
    for _ in 0..10 {
        let data: Vec<_> = (0..6).map(|_| sample_noise_chain(8, 3.0, &mut rng)).collect();
        let noise: Vec<_> = (0..6).map(|_| sample_noise_chain(8, 10.0, &mut rng)).collect();
        let ot = ot_assignment(&data, &noise)?.cost;
        let id: f64 = data
            .iter()
            .zip(&noise)
            .map(|(a, b)| chain_cost(a, b, &CostWeights::default()))
            .sum::<Result<f64>>()?;
        worst = worst.max(ot - id);
    }
    out.push(check("OT cost never exceeds identity pairing", worst.max(0.0), 1e-9));

    let model = Model::new(ModelConfig {
        hidden: 8,
        depth: 2,
        seq_embed_dim: 4,
        time_embed_dim: 4,
        pos_embed_dim: 4,
        ..ModelConfig::default()
    })?;
    let params = model.init_params(&mut rng);
    let chain = sample_noise_chain(4, 10.0, &mut rng);
    let seq = SequenceRecord::from_one_letter("MKVX")?;
    let input = ModelInput::new(0.3, &chain, &seq);
    let adj: Vec<Tangent> = (0..4)
        .map(|_| Tangent {
            rot: random_rotvec(&mut rng, 1.0),
            trans: random_rotvec(&mut rng, 1.0),
        })
        .collect();
    let grad = model.record(&params, &input)?.backward(&adj)?;
    let loss = |p: &[f64]| -> Result<f64> {
        Ok(model
            .forward(p, &input)?
            .iter()
            .zip(&adj)
            .map(|(v, a)| v.rot.dot(&a.rot) + v.trans.dot(&a.trans))
            .sum())
    };
    let mut worst = 0.0f64;
    let h = 1e-5;
    for k in 0..params.len() {
        let mut p = params.clone();
        p[k] += h;
        let up = loss(&p)?;
        p[k] -= 2.0 * h;
        let down = loss(&p)?;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-6));
    }
    out.push(check("model gradient vs finite differences", worst, 1e-4));

    let pts: Vec<Vec3> = (0..20).map(|_| random_rotvec(&mut rng, 10.0)).collect();
    let g = RigidFrame::new(sample_haar_rotation(&mut rng), Vec3::new(3.0, -1.0, 2.0));
    let moved: Vec<Vec3> = pts.iter().map(|p| g.apply(p)).collect();
    out.push(check(
        "Kabsch RMSD rigid-motion invariance",
        kabsch_rmsd(&pts, &moved)?,
        1e-9,
    ));
    out.push(check(
        "TM-score self similarity",
        (tm_score(&pts, &moved)? - 1.0).abs(),
        1e-9,
    ));

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass_and_are_deterministic() {
        let a = run_all(0).unwrap();
        assert!(a.iter().all(|c| c.passed), "{a:#?}");
        assert_eq!(a, run_all(0).unwrap());
    }

    #[test]
    fn permutations_enumerate_all() {
        assert_eq!(permutations(4).len(), 24);
    }
}
