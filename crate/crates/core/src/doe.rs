//! Latin hypercube designs and nested multi-fidelity designs.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Latin hypercube on the unit cube drawn from `rng`.
pub(crate) fn lhs_unit<R: Rng>(n: usize, d: usize, rng: &mut R) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n, d);
    let mut perm: Vec<usize> = (0..n).collect();
    for c in 0..d {
        perm.shuffle(rng);
        for (i, &stratum) in perm.iter().enumerate() {
            let u: f64 = rng.random();
            out[(i, c)] = (stratum as f64 + u) / n as f64;
        }
    }
    out
}

fn check_bounds(bounds: &[(f64, f64)], d: usize) -> Result<()> {
    if bounds.len() != d {
        return Err(contract(format!("expected {d} bound pairs, got {}", bounds.len())));
    }
    if let Some((i, _)) = bounds.iter().enumerate().find(|(_, (lo, hi))| !(lo < hi)) {
        return Err(contract(format!("bounds of dimension {i} are empty")));
    }
    Ok(())
}

/// `n` points in `bounds`, one per stratum in each column.
pub fn lhs_sample(n: usize, d: usize, bounds: &[(f64, f64)], seed: u64) -> Result<DMatrix<f64>> {
    if n == 0 || d == 0 {
        return Err(contract("LHS needs n >= 1 and d >= 1"));
    }
    check_bounds(bounds, d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = lhs_unit(n, d, &mut rng);
    for (c, (lo, hi)) in bounds.iter().enumerate() {
        x.column_mut(c).apply(|v| *v = lo + (hi - lo) * *v);
    }
    Ok(x)
}

/// Inserts every HF point into the LF design, each replacing the nearest LF point
/// not already replaced (ties go to the lowest index). The size is unchanged.
pub fn make_nested(lf: &DMatrix<f64>, hf: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if hf.nrows() > lf.nrows() {
        return Err(contract(format!(
            "cannot nest {} HF points into {} LF points",
            hf.nrows(),
            lf.nrows()
        )));
    }
    if hf.nrows() > 0 && hf.ncols() != lf.ncols() {
        return Err(contract("LF and HF designs have different dimensions"));
    }
    let mut out = lf.clone();
    let mut replaced = vec![false; lf.nrows()];
    for h in hf.row_iter() {
        let mut best = None;
        let mut best_d = f64::INFINITY;
        for (j, l) in lf.row_iter().enumerate() {
            if replaced[j] {
                continue;
            }
            let d = (l - h).norm_squared();
            if d < best_d {
                best_d = d;
                best = Some(j);
            }
        }
        let j = best.expect("fewer HF than LF points");
        replaced[j] = true;
        out.row_mut(j).copy_from(&h);
    }
    Ok(out)
}

/// Row indices `i` of `hi` paired with a row of `lo` equal within `tol`; `None`
/// when some row of `hi` has no match.
pub fn subset_rows(lo: &DMatrix<f64>, hi: &DMatrix<f64>, tol: f64) -> std::result::Result<Vec<usize>, Vec<usize>> {
    let mut idx = Vec::with_capacity(hi.nrows());
    let mut missing = Vec::new();
    for (i, h) in hi.row_iter().enumerate() {
        match lo.row_iter().position(|l| (l - h).amax() <= tol) {
            Some(j) => idx.push(j),
            None => missing.push(i),
        }
    }
    if missing.is_empty() {
        Ok(idx)
    } else {
        Err(missing)
    }
}

/// Two-level design request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoESpec {
    pub n_lf: usize,
    pub n_hf: usize,
    pub d: usize,
    pub bounds: Vec<(f64, f64)>,
    pub seed: u64,
    pub nested: bool,
}

impl DoESpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_hf == 0 || self.n_lf == 0 {
            return Err(contract("design sizes must be positive"));
        }
        if self.n_hf > self.n_lf {
            return Err(contract("n_hf must not exceed n_lf"));
        }
        check_bounds(&self.bounds, self.d)
    }

    /// Independent LF and HF hypercubes (HF seeded from `seed + 1`), with the LF
    /// design made nested when requested.
    pub fn sample(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.validate()?;
        let lf = lhs_sample(self.n_lf, self.d, &self.bounds, self.seed)?;
        let hf = lhs_sample(self.n_hf, self.d, &self.bounds, self.seed.wrapping_add(1))?;
        let lf = if self.nested { make_nested(&lf, &hf)? } else { lf };
        Ok((lf, hf))
    }
}
