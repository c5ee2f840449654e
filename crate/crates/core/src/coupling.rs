//! Minibatch optimal-transport coupling between noise and data chains.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{so3_distance, FrameChain};

/// Relative weights of the rotation (rad²) and translation (Å²) terms of the cost.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub rot: f64,
    pub trans: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights { rot: 1.0, trans: 1.0 }
    }
}

/// Dense square cost matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    n: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::LengthMismatch {
                what: "cost matrix row",
                left: r.len(),
                right: n,
            });
        }
        Ok(CostMatrix {
            n,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        CostMatrix { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn transpose(&self) -> CostMatrix {
        CostMatrix::from_fn(self.n, |i, j| self.get(j, i))
    }

    /// Cost of assigning row `i` to column `perm[i]` for every row.
    pub fn permutation_cost(&self, perm: &[usize]) -> f64 {
        perm.iter().enumerate().map(|(i, &j)| self.get(i, j)).sum()
    }
}

/// A perfect matching: row `i` is assigned to column `perm[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub perm: Vec<usize>,
    pub cost: f64,
}

/// Transport cost between two chains of equal length.
pub fn chain_cost(a: &FrameChain, b: &FrameChain, w: &CostWeights) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            what: "chains in cost",
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(a.frames
        .iter()
        .zip(&b.frames)
        .map(|(x, y)| {
            let d = so3_distance(&x.rot, &y.rot);
            w.rot * d * d + w.trans * (x.trans - y.trans).norm_squared()
        })
        .sum())
}

/// `C[i][j]` is the cost of pairing `data[i]` with `noise[j]`.
pub fn pairwise_cost(data: &[FrameChain], noise: &[FrameChain]) -> Result<CostMatrix> {
    pairwise_cost_weighted(data, noise, &CostWeights::default())
}

pub fn pairwise_cost_weighted(data: &[FrameChain], noise: &[FrameChain], w: &CostWeights) -> Result<CostMatrix> {
    if data.len() != noise.len() {
        return Err(Error::LengthMismatch {
            what: "coupled batches",
            left: data.len(),
            right: noise.len(),
        });
    }
    let n = data.len();
    let rows = data
        .par_iter()
        .map(|a| noise.iter().map(|b| chain_cost(a, b, w)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(CostMatrix {
        n,
        data: rows.into_iter().flatten().collect(),
    })
}

/// Minimum-cost perfect matching.
///
/// Among all optimal matchings the lexicographically smallest permutation is returned,
/// so equal-cost ties resolve deterministically.
pub fn solve_assignment(c: &CostMatrix) -> Result<Assignment> {
    let n = c.n;
    if let Some(bad) = c.data.iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("cost matrix entry {bad}")));
    }
    if n == 0 {
        return Ok(Assignment {
            perm: vec![],
            cost: 0.0,
        });
    }
    let (u, v, perm) = hungarian(c);
    let scale = c.data.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let tol = 1e-9 * (1.0 + scale);
    let perm = lexicographic_min(c, &u, &v, perm, tol);
    let cost = c.permutation_cost(&perm);
    Ok(Assignment { perm, cost })
}

// Shortest augmenting path Hungarian method with row/column potentials.
// Returns (u, v, perm) with c[i][j] - u[i] - v[j] >= 0 and equality on the matching.
fn hungarian(c: &CostMatrix) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    let n = c.n;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1]; // p[j]: row (1-based) matched to column j
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = c.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[p[j] - 1] = j - 1;
    }
    (u[1..].to_vec(), v[1..].to_vec(), perm)
}

// Every optimal matching is a perfect matching on the tight edges of an optimal dual.
// Walk rows in order, giving each the smallest tight column that still admits a
// completion, and repair the rest of the matching by an alternating path.
fn lexicographic_min(c: &CostMatrix, u: &[f64], v: &[f64], mut perm: Vec<usize>, tol: f64) -> Vec<usize> {
    let n = c.n;
    let tight: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| c.get(i, j) - u[i] - v[j] <= tol).collect())
        .collect();
    let mut owner = vec![0usize; n];
    for (i, &j) in perm.iter().enumerate() {
        owner[j] = i;
    }
    for i in 0..n {
        for j in 0..perm[i] {
            if !tight[i][j] || owner[j] < i {
                continue;
            }
            let k = owner[j];
            let freed = perm[i];
            // Tentatively give j to i; k must reach `freed` by an alternating path over rows > i.
            let mut trial_perm = perm.clone();
            let mut trial_owner = owner.clone();
            trial_perm[i] = j;
            trial_owner[j] = i;
            let mut seen = vec![false; n];
            if augment(k, freed, i, &tight, &mut trial_perm, &mut trial_owner, &mut seen) {
                perm = trial_perm;
                owner = trial_owner;
                break;
            }
        }
    }
    perm
}

// Finds an alternating path from unmatched row `row` to free column `target`,
// using only rows strictly after `fixed`, and flips it.
fn augment(
    row: usize,
    target: usize,
    fixed: usize,
    tight: &[Vec<bool>],
    perm: &mut [usize],
    owner: &mut [usize],
    seen: &mut [bool],
) -> bool {
    let n = perm.len();
    for col in 0..n {
        if !tight[row][col] || seen[col] {
            continue;
        }
        seen[col] = true;
        let next = if col == target {
            None
        } else {
            let o = owner[col];
            if o <= fixed {
                continue;
            }
            Some(o)
        };
        let ok = match next {
            None => true,
            Some(o) => augment(o, target, fixed, tight, perm, owner, seen),
        };
        if ok {
            perm[row] = col;
            owner[col] = row;
            return true;
        }
    }
    false
}

/// Optimal assignment of noise chains to data chains.
pub fn ot_assignment(data: &[FrameChain], noise: &[FrameChain]) -> Result<Assignment> {
    solve_assignment(&pairwise_cost(data, noise)?)
}

/// Pairs every data chain with its optimally assigned noise chain.
///
/// The coupling is deterministic; randomness enters only through how the noise batch was drawn.
pub fn couple(data: &[FrameChain], noise: &[FrameChain]) -> Result<Vec<(FrameChain, FrameChain)>> {
    let a = ot_assignment(data, noise)?;
    Ok(a.perm
        .iter()
        .enumerate()
        .map(|(i, &j)| (data[i].clone(), noise[j].clone()))
        .collect())
}
