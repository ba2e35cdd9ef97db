//! Repetition sweeps: draw designs, fit every method, score on a shared test set.

use mfgp::doe::{lhs_sample, make_nested, DoESpec};
use mfgp::metrics::{metric_mnll, metric_r2, metric_rmse};
use mfgp::mf::MultiFidelityDataset;
use mfgp::{Dataset, PosteriorPrediction};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Method};
use crate::error::{BenchError, Result};
use crate::methods::fit_predict;
use crate::problem::Problem;
use crate::report::{aggregate, ExperimentReport, RepRecord};
use crate::seed::{rep_seed, test_set_seed};

/// Predictive standard deviations are floored at this fraction of the test-set
/// standard deviation so MNLL stays defined when a model reports zero variance.
const STD_FLOOR: f64 = 1e-12;

/// Training data of one repetition, with its nested variant and test set.
struct RepData {
    plain: MultiFidelityDataset,
    nested: MultiFidelityDataset,
    test: Dataset,
}

fn run_err(e: impl std::fmt::Display) -> BenchError {
    BenchError::Run(e.to_string())
}

fn analytic_rep(p: &mfgp::bench::BenchmarkProblem, n_lf: usize, n_hf: usize, seed: u64, test: &Dataset) -> Result<RepData> {
    let spec = DoESpec { n_lf, n_hf, d: p.d, bounds: p.bounds.clone(), seed, nested: false };
    let (x_lf, x_hf) = spec.sample().map_err(run_err)?;
    let x_nested = make_nested(&x_lf, &x_hf).map_err(run_err)?;
    let build = |x_lf: DMatrix<f64>| {
        MultiFidelityDataset::two_level(x_lf.clone(), p.eval_lf(&x_lf), x_hf.clone(), p.eval_hf(&x_hf)).map_err(run_err)
    };
    Ok(RepData { plain: build(x_lf)?, nested: build(x_nested)?, test: test.clone() })
}

fn external_rep(data: &MultiFidelityDataset, test: Option<&Dataset>, n_lf: usize, n_hf: usize, seed: u64) -> Result<RepData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |level: &Dataset, n: usize| {
        let mut idx: Vec<usize> = (0..level.len()).collect();
        idx.shuffle(&mut rng);
        let (take, rest) = idx.split_at(n);
        let sub = |rows: &[usize]| Dataset::new(level.x.select_rows(rows), level.y.select_rows(rows)).map_err(run_err);
        Ok::<_, BenchError>((sub(take)?, if rest.is_empty() { None } else { Some(sub(rest)?) }))
    };
    let s = data.n_levels();
    let (lf, _) = pick(&data.levels[0], n_lf)?;
    let (hf, held_out) = pick(&data.levels[s - 1], n_hf)?;
    let mut levels = vec![lf];
    levels.extend(data.levels[1..s - 1].iter().cloned());
    levels.push(hf);
    let test = match test {
        Some(t) => t.clone(),
        None => held_out.ok_or_else(|| BenchError::Config("no top-fidelity rows left for testing".into()))?,
    };
    let plain = MultiFidelityDataset::new(levels).map_err(run_err)?;
    Ok(RepData { nested: plain.clone(), plain, test })
}

/// R2, RMSE and MNLL of `pred` on `test`.
pub fn score(test: &Dataset, pred: &PosteriorPrediction, normalize: bool) -> mfgp::Result<(f64, f64, f64)> {
    if pred.mean.iter().chain(pred.variance.iter()).any(|v| !v.is_finite()) {
        return Err(mfgp::Error::Contract("prediction contains non-finite values".into()));
    }
    let n = test.len() as f64;
    let t_mean = test.y.mean();
    let t_std = (test.y.iter().map(|v| (v - t_mean).powi(2)).sum::<f64>() / n).sqrt();
    let (shift, scale) = if normalize && t_std > 0.0 { (t_mean, t_std) } else { (0.0, 1.0) };
    let y = test.y.map(|v| (v - shift) / scale);
    let m = pred.mean.map(|v| (v - shift) / scale);
    let floor = STD_FLOOR * if t_std > 0.0 { t_std / scale } else { 1.0 };
    let s: DVector<f64> = pred.variance.map(|v| (v.max(0.0).sqrt() / scale).max(floor));
    Ok((metric_r2(&y, &m)?, metric_rmse(&y, &m)?, metric_mnll(&y, &m, &s)?))
}

fn run_rep(config: &ExperimentConfig, data: &RepData, n_lf: usize, n_hf: usize, rep: usize, seed: u64) -> Vec<RepRecord> {
    let eval = |method: Method| {
        let train = if method == Method::NargpNested { &data.nested } else { &data.plain };
        fit_predict(method, train, &data.test.x, config, seed).and_then(|f| {
            let (r2, rmse, mnll) = score(&data.test, &f.prediction, config.normalize)?;
            Ok((r2, rmse, mnll, f.n_hyperparams))
        })
    };
    let baseline = eval(Method::GpHf);
    let base_rmse = baseline.as_ref().ok().map(|b| b.1);
    config
        .methods
        .iter()
        .map(|&method| {
            let res = if method == Method::GpHf { baseline.as_ref().map(|b| *b).map_err(|e| e.to_string()) } else { eval(method).map_err(|e| e.to_string()) };
            match res {
                Ok((r2, rmse, mnll, k)) => RepRecord {
                    method,
                    n_lf,
                    n_hf,
                    rep,
                    seed,
                    r2: Some(r2),
                    rmse: Some(rmse),
                    mnll: Some(mnll),
                    rmse_evolution_pct: base_rmse.filter(|&b| b > 0.0).map(|b| 100.0 * (rmse - b) / b),
                    n_hyperparams: Some(k),
                    error: None,
                },
                Err(e) => {
                    log::warn!("{method} failed at ({n_lf}, {n_hf}) rep {rep}: {e}");
                    RepRecord {
                        method,
                        n_lf,
                        n_hf,
                        rep,
                        seed,
                        r2: None,
                        rmse: None,
                        mnll: None,
                        rmse_evolution_pct: None,
                        n_hyperparams: None,
                        error: Some(e),
                    }
                }
            }
        })
        .collect()
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let problem = Problem::resolve(config)?;
    let name = config.problem.clone();
    let analytic_test = match &problem {
        Problem::Analytic(p) => {
            let n = config.test_set_size.unwrap_or(p.test_set_size);
            let x = lhs_sample(n, p.d, &p.bounds, test_set_seed(config.seed, &name)).map_err(run_err)?;
            let y = p.eval_hf(&x);
            Some(Dataset::new(x, y).map_err(run_err)?)
        }
        Problem::External { .. } => None,
    };
    let tasks: Vec<(usize, usize, usize)> = config
        .doe_sizes
        .iter()
        .flat_map(|&(n_lf, n_hf)| (0..config.reps).map(move |r| (n_lf, n_hf, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(config.workers).build().map_err(run_err)?;
    let results: Vec<Result<Vec<RepRecord>>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(n_lf, n_hf, rep)| {
                let seed = rep_seed(config.seed, &name, rep);
                let data = match &problem {
                    Problem::Analytic(p) => analytic_rep(p, n_lf, n_hf, seed, analytic_test.as_ref().expect("analytic test set"))?,
                    Problem::External { data, test } => external_rep(data, test.as_ref(), n_lf, n_hf, seed)?,
                };
                let recs = run_rep(config, &data, n_lf, n_hf, rep, seed);
                log::info!("{name} ({n_lf}, {n_hf}) rep {rep} done");
                Ok(recs)
            })
            .collect()
    });
    let mut records = Vec::with_capacity(tasks.len() * config.methods.len());
    for r in results {
        records.extend(r?);
    }
    if !records.is_empty() && records.iter().all(RepRecord::failed) {
        return Err(BenchError::Run(format!("every fit failed; first error: {}", records[0].error.as_deref().unwrap_or(""))));
    }
    Ok(ExperimentReport {
        aggregates: aggregate(&name, &config.methods, &config.doe_sizes, &records),
        problem: name,
        config: config.clone(),
        records,
    })
}
