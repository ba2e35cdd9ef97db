//! Co-kriging with a linear model of coregionalization.
//!
//! The joint covariance between level `t` at `x` and level `t'` at `x'` is
//! `sum_r B_r[t, t'] k_r(x, x')` with `B_r = A_r A_r^T`. Each `k_r` has unit
//! variance; the scale of every level lives in the `A_r` entries.

use nalgebra::{DMatrix, DVector};

use crate::covariance::{Covariance, ParamBound};
use crate::error::{contract, Result};
use crate::exact::{ExactPosterior, ExactProblem};
use crate::gp::PosteriorPrediction;
use crate::kernels::KernelSpec;
use crate::mf::dataset::MultiFidelityDataset;
use crate::optim::OptConfig;
use crate::scaling::{InputScaling, OutputScaling};

/// Covariance over inputs `[x..., level]` where `level` is the 0-based fidelity index.
#[derive(Debug, Clone, PartialEq)]
pub struct LmcCovariance {
    pub n_levels: usize,
    /// One latent kernel and rank per group.
    pub groups: Vec<(KernelSpec, usize)>,
}

impl LmcCovariance {
    pub fn new(n_levels: usize, groups: Vec<(KernelSpec, usize)>) -> Result<Self> {
        if groups.is_empty() {
            return Err(contract("LMC needs at least one latent group"));
        }
        if groups.iter().any(|(_, c)| *c == 0) {
            return Err(contract("LMC group ranks must be positive"));
        }
        let d = groups[0].0.input_dim;
        if groups.iter().any(|(k, _)| k.input_dim != d) {
            return Err(contract("LMC latent kernels must share the input dimension"));
        }
        Ok(Self { n_levels, groups })
    }

    pub fn input_dim(&self) -> usize {
        self.groups[0].0.input_dim
    }

    fn group_len(&self, r: usize) -> usize {
        let (k, c) = &self.groups[r];
        k.n_shape_params() + self.n_levels * c
    }

    fn offsets(&self) -> Vec<usize> {
        let mut o = vec![0];
        for r in 0..self.groups.len() {
            o.push(o[r] + self.group_len(r));
        }
        o
    }

    /// Flat parameters from per-group shape parameters and `A_r` factors.
    pub fn params(&self, shapes: &[Vec<f64>], factors: &[DMatrix<f64>]) -> Vec<f64> {
        let mut p = Vec::new();
        for (r, (shape, a)) in shapes.iter().zip(factors).enumerate() {
            debug_assert_eq!(a.shape(), (self.n_levels, self.groups[r].1));
            p.extend_from_slice(shape);
            for i in 0..a.nrows() {
                p.extend(a.row(i).iter());
            }
        }
        p
    }

    /// `A_r` of group `r` from flat parameters.
    pub fn factor(&self, p: &[f64], r: usize) -> DMatrix<f64> {
        let o = self.offsets()[r] + self.groups[r].0.n_shape_params();
        let c = self.groups[r].1;
        DMatrix::from_row_slice(self.n_levels, c, &p[o..o + self.n_levels * c])
    }

    /// `B_r = A_r A_r^T` for every group.
    pub fn coregionalization(&self, p: &[f64]) -> Vec<DMatrix<f64>> {
        (0..self.groups.len())
            .map(|r| {
                let a = self.factor(p, r);
                &a * a.transpose()
            })
            .collect()
    }

    fn shape_params<'p>(&self, p: &'p [f64], r: usize) -> &'p [f64] {
        let o = self.offsets()[r];
        &p[o..o + self.groups[r].0.n_shape_params()]
    }

    fn unit_params(&self, p: &[f64], r: usize) -> Vec<f64> {
        let mut q = vec![0.0];
        q.extend_from_slice(self.shape_params(p, r));
        q
    }

    fn levels(&self, a: &DMatrix<f64>) -> Vec<usize> {
        let d = self.input_dim();
        a.column(d).iter().map(|v| *v as usize).collect()
    }

    fn x_part(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        a.columns(0, self.input_dim()).into_owned()
    }
}

impl Covariance for LmcCovariance {
    fn n_params(&self) -> usize {
        (0..self.groups.len()).map(|r| self.group_len(r)).sum()
    }

    fn n_cols(&self) -> usize {
        self.input_dim() + 1
    }

    fn bounds(&self) -> Vec<ParamBound> {
        let mut b = Vec::new();
        for (k, c) in &self.groups {
            b.extend(k.shape_bounds());
            b.extend(std::iter::repeat_n(ParamBound::with_init(-30.0, 30.0, -2.0, 2.0), self.n_levels * c));
        }
        b
    }

    fn cross(&self, p: &[f64], a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let (la, lb) = (self.levels(a), self.levels(b));
        let (xa, xb) = (self.x_part(a), self.x_part(b));
        let mut out = DMatrix::zeros(a.nrows(), b.nrows());
        for (r, bm) in self.coregionalization(p).iter().enumerate() {
            let k = self.groups[r].0.cross(&self.unit_params(p, r), &xa, &xb);
            for j in 0..b.nrows() {
                for i in 0..a.nrows() {
                    out[(i, j)] += bm[(la[i], lb[j])] * k[(i, j)];
                }
            }
        }
        out
    }

    fn diag(&self, p: &[f64], a: &DMatrix<f64>) -> DVector<f64> {
        let la = self.levels(a);
        let bs = self.coregionalization(p);
        DVector::from_fn(a.nrows(), |i, _| bs.iter().map(|b| b[(la[i], la[i])]).sum())
    }

    fn cross_grad(&self, p: &[f64], a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let (la, lb) = (self.levels(a), self.levels(b));
        let (xa, xb) = (self.x_part(a), self.x_part(b));
        let mut out = Vec::with_capacity(self.n_params());
        for r in 0..self.groups.len() {
            let (spec, c) = &self.groups[r];
            let fac = self.factor(p, r);
            let bm = &fac * fac.transpose();
            let up = self.unit_params(p, r);
            let kg = spec.cross_grad(&up, &xa, &xb);
            let k = &kg[0];
            for g in &kg[1..] {
                out.push(DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| bm[(la[i], lb[j])] * g[(i, j)]));
            }
            // dB[t, t'] / dA[l, q] = [t == l] A[t', q] + [t' == l] A[t, q]
            for l in 0..self.n_levels {
                for q in 0..*c {
                    out.push(DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
                        let (t, u) = (la[i], lb[j]);
                        let mut db = 0.0;
                        if t == l {
                            db += fac[(u, q)];
                        }
                        if u == l {
                            db += fac[(t, q)];
                        }
                        db * k[(i, j)]
                    }));
                }
            }
        }
        out
    }

    fn diag_grad(&self, p: &[f64], a: &DMatrix<f64>) -> Vec<DVector<f64>> {
        let la = self.levels(a);
        let mut out = Vec::with_capacity(self.n_params());
        for r in 0..self.groups.len() {
            let (spec, c) = &self.groups[r];
            let fac = self.factor(p, r);
            out.extend(std::iter::repeat_n(DVector::zeros(a.nrows()), spec.n_shape_params()));
            for l in 0..self.n_levels {
                for q in 0..*c {
                    out.push(DVector::from_fn(a.nrows(), |i, _| if la[i] == l { 2.0 * fac[(l, q)] } else { 0.0 }));
                }
            }
        }
        out
    }

    fn noise_groups(&self) -> usize {
        self.n_levels
    }

    fn noise_group(&self, a: &DMatrix<f64>, row: usize) -> usize {
        a[(row, self.input_dim())] as usize
    }
}

/// Stacked inputs `[x, level]`, outputs and per-level indicator mean basis.
pub fn stack_levels(
    mfdata: &MultiFidelityDataset,
    input: &InputScaling,
    outputs: &[OutputScaling],
) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let d = mfdata.dim();
    let s = mfdata.n_levels();
    let n: usize = mfdata.levels.iter().map(|l| l.len()).sum();
    let mut x = DMatrix::zeros(n, d + 1);
    let mut y = DVector::zeros(n);
    let mut h = DMatrix::zeros(n, s);
    let mut row = 0;
    for (t, level) in mfdata.levels.iter().enumerate() {
        let xs = input.apply(&level.x);
        let ys = outputs[t].apply(&level.y);
        for i in 0..level.len() {
            x.view_mut((row, 0), (1, d)).copy_from(&xs.row(i));
            x[(row, d)] = t as f64;
            y[row] = ys[i];
            h[(row, t)] = 1.0;
            row += 1;
        }
    }
    (x, y, h)
}

/// Query rows `[x, level]` for a single level.
pub(crate) fn augment_level(xq: &DMatrix<f64>, level: usize) -> DMatrix<f64> {
    let d = xq.ncols();
    let mut a = DMatrix::zeros(xq.nrows(), d + 1);
    a.columns_mut(0, d).copy_from(xq);
    a.column_mut(d).fill(level as f64);
    a
}

pub(crate) fn indicator(n: usize, s: usize, level: usize) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(n, s);
    h.column_mut(level).fill(1.0);
    h
}

pub(crate) fn level_scalings(
    mfdata: &MultiFidelityDataset,
    opt: &OptConfig,
) -> (InputScaling, Vec<OutputScaling>) {
    if !opt.standardize {
        return (InputScaling::identity(mfdata.dim()), vec![OutputScaling::identity(); mfdata.n_levels()]);
    }
    let all = DMatrix::from_fn(mfdata.levels.iter().map(|l| l.len()).sum(), mfdata.dim(), {
        let rows: Vec<_> = mfdata.levels.iter().flat_map(|l| l.x.row_iter().map(|r| r.into_owned())).collect();
        move |i, j| rows[i][j]
    });
    (
        InputScaling::unit_box(&all),
        mfdata.levels.iter().map(|l| OutputScaling::standardize(&l.y)).collect(),
    )
}

/// A trained LMC co-kriging model.
#[derive(Debug, Clone)]
pub struct CoregionalizationModel {
    pub cov: LmcCovariance,
    pub input_scaling: InputScaling,
    pub output_scalings: Vec<OutputScaling>,
    pub nlml_value: f64,
    posterior: ExactPosterior<LmcCovariance>,
}

impl CoregionalizationModel {
    /// Conditions the joint GP on `mfdata` at fixed flat parameters
    /// `[covariance..., log_noise per level..., mean per level...]`.
    pub fn from_params(
        cov: LmcCovariance,
        mfdata: &MultiFidelityDataset,
        params: &[f64],
        input_scaling: InputScaling,
        output_scalings: Vec<OutputScaling>,
    ) -> Result<Self> {
        let (x, y, h) = stack_levels(mfdata, &input_scaling, &output_scalings);
        let posterior = ExactProblem::new(&cov, &x, &y, &h)?.condition(params)?;
        Ok(Self { nlml_value: posterior.nlml, cov, input_scaling, output_scalings, posterior })
    }

    /// `B_r` matrices in standardized output units.
    pub fn coregionalization_matrices(&self) -> Vec<DMatrix<f64>> {
        self.cov.coregionalization(&self.posterior.cov_params)
    }

    /// Correlation between levels `t` and `u` of the joint prior at zero distance.
    pub fn level_correlation(&self, t: usize, u: usize) -> f64 {
        let b: DMatrix<f64> = self.coregionalization_matrices().iter().sum();
        b[(t, u)] / (b[(t, t)] * b[(u, u)]).sqrt()
    }

    pub fn params(&self) -> Vec<f64> {
        self.posterior.params()
    }

    pub fn n_hyperparams(&self) -> usize {
        self.cov.n_params() + 2 * self.cov.n_levels
    }

    /// Observation-noise variance of level `t` (0-based) in original units.
    pub fn noise_variance(&self, t: usize) -> f64 {
        self.posterior.noise(t) * self.output_scalings[t].std.powi(2)
    }

    /// Latent prediction of level `target_level` (0-based).
    pub fn predict(&self, xq: &DMatrix<f64>, target_level: usize) -> Result<PosteriorPrediction> {
        if target_level >= self.cov.n_levels {
            return Err(contract(format!("level {target_level} out of range")));
        }
        if xq.ncols() != self.cov.input_dim() {
            return Err(contract("query dimension does not match the model"));
        }
        let a = augment_level(&self.input_scaling.apply(xq), target_level);
        let hq = indicator(xq.nrows(), self.cov.n_levels, target_level);
        let (m, v) = self.posterior.predict(&a, &hq)?;
        let os = &self.output_scalings[target_level];
        Ok(PosteriorPrediction::gaussian(os.invert_mean(&m), os.invert_var(&v)))
    }
}

/// Default LMC covariance: `r` squared-exponential ARD groups with the given ranks.
pub fn default_lmc_covariance(d: usize, n_levels: usize, r: usize, ranks: &[usize]) -> Result<LmcCovariance> {
    if ranks.len() != r {
        return Err(contract(format!("{r} groups but {} ranks", ranks.len())));
    }
    LmcCovariance::new(n_levels, ranks.iter().map(|&c| (KernelSpec::squared_exponential(d), c)).collect())
}

/// Maximum joint-likelihood LMC fit.
pub fn lmc_fit(mfdata: &MultiFidelityDataset, r: usize, ranks: &[usize], opt: &OptConfig) -> Result<CoregionalizationModel> {
    if r == 0 {
        return Err(contract("LMC needs R >= 1"));
    }
    let cov = default_lmc_covariance(mfdata.dim(), mfdata.n_levels(), r, ranks)?;
    lmc_fit_with(cov, mfdata, opt)
}

pub fn lmc_fit_with(cov: LmcCovariance, mfdata: &MultiFidelityDataset, opt: &OptConfig) -> Result<CoregionalizationModel> {
    if cov.n_levels != mfdata.n_levels() || cov.input_dim() != mfdata.dim() {
        return Err(contract("LMC covariance does not match the dataset"));
    }
    let (is, os) = level_scalings(mfdata, opt);
    let (x, y, h) = stack_levels(mfdata, &is, &os);
    let problem = ExactProblem::new(&cov, &x, &y, &h)?;
    let (posterior, res) = problem.fit(opt, &[])?;
    Ok(CoregionalizationModel {
        nlml_value: res.f,
        cov,
        input_scaling: is,
        output_scalings: os,
        posterior,
    })
}

pub fn lmc_predict(model: &CoregionalizationModel, xq: &DMatrix<f64>, target_level: usize) -> Result<PosteriorPrediction> {
    model.predict(xq, target_level)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_util::{fd_check, random_matrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn covariance_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cov = default_lmc_covariance(2, 3, 2, &[1, 2]).unwrap();
        let mut a = random_matrix(&mut rng, 7, 3, 0.0, 1.0);
        let mut b = random_matrix(&mut rng, 5, 3, 0.0, 1.0);
        for i in 0..7 {
            a[(i, 2)] = (i % 3) as f64;
        }
        for i in 0..5 {
            b[(i, 2)] = ((i + 1) % 3) as f64;
        }
        let p: Vec<f64> = (0..cov.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        for (j, g) in cov.cross_grad(&p, &a, &b).iter().enumerate() {
            fd_check(&p, j, |q| cov.cross(q, &a, &b), g, 1e-5);
        }
        let dg = cov.diag_grad(&p, &a);
        for (j, g) in dg.iter().enumerate() {
            let gm = DMatrix::from_column_slice(g.len(), 1, g.as_slice());
            fd_check(&p, j, |q| DMatrix::from_column_slice(7, 1, cov.diag(q, &a).as_slice()), &gm, 1e-5);
        }
    }
}
