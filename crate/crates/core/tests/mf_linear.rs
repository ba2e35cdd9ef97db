use mfgp::covariance::Covariance;
use mfgp::bench::bench_vardim;
use mfgp::doe::{lhs_sample, DoESpec};
use mfgp::metrics::metric_r2;
use mfgp::gp::{fit_gp, nlml, Dataset, TrainedGP};
use mfgp::kernels::{kernel_eval, log_noise_floor, HyperParams, KernelSpec};
use mfgp::mf::ar1::{ar1_fit_recursive_with, Ar1Config, AR1CoupledModel, AR1Model, Ar1CoupledCovariance};
use mfgp::mf::lmc::{default_lmc_covariance, lmc_fit, LmcCovariance};
use mfgp::mf::{ar1_fit_coupled, ar1_fit_recursive, CoregionalizationModel, MultiFidelityDataset};
use mfgp::scaling::{InputScaling, OutputScaling};
use mfgp::{Error, OptConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn raw() -> OptConfig {
    OptConfig { standardize: false, ..OptConfig::default() }
}

fn col(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v)
}

fn rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    x.select_rows(idx)
}

fn random_hp(rng: &mut ChaCha8Rng, spec: &KernelSpec, log_noise: f64) -> HyperParams {
    let mut hp = HyperParams::new(spec);
    hp.log_variance = rng.random_range(-1.0..1.0);
    hp.log_inv_lengthscales = (0..spec.input_dim).map(|_| rng.random_range(0.0..2.0)).collect();
    hp.log_noise = log_noise;
    hp.mean_const = rng.random_range(-1.0..1.0);
    hp
}

/// Two disjoint single-level problems plus an identity-coregionalized LMC over both.
fn identity_lmc(seed: u64) -> (KernelSpec, [HyperParams; 2], MultiFidelityDataset, CoregionalizationModel) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 2;
    let spec = KernelSpec::squared_exponential(d);
    let shape: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.5)).collect();
    let hps = [0, 1].map(|_| {
        let mut hp = HyperParams::new(&spec);
        hp.log_inv_lengthscales = shape.clone();
        hp.log_noise = rng.random_range(-6.0..-2.0);
        hp.mean_const = rng.random_range(-1.0..1.0);
        hp
    });
    let n1 = rng.random_range(3..8);
    let n2 = rng.random_range(2..6);
    let x1 = DMatrix::from_fn(n1, d, |_, _| rng.random_range(0.0..1.0));
    let x2 = DMatrix::from_fn(n2, d, |_, _| rng.random_range(0.0..1.0));
    let y1 = DVector::from_fn(n1, |_, _| rng.random_range(-2.0..2.0));
    let y2 = DVector::from_fn(n2, |_, _| rng.random_range(-2.0..2.0));
    let mf = MultiFidelityDataset::two_level(x1, y1, x2, y2).unwrap();
    let cov = LmcCovariance::new(2, vec![(spec.clone(), 2)]).unwrap();
    let mut p = cov.params(&[shape], &[DMatrix::identity(2, 2)]);
    p.extend([hps[0].log_noise, hps[1].log_noise, hps[0].mean_const, hps[1].mean_const]);
    let model =
        CoregionalizationModel::from_params(cov, &mf, &p, InputScaling::identity(d), vec![OutputScaling::identity(); 2])
            .unwrap();
    (spec, hps, mf, model)
}

#[test]
fn identity_coregionalization_nlml_is_sum_of_independent_nlmls() {
    for seed in 0..20 {
        let (spec, hps, mf, model) = identity_lmc(seed);
        let sum: f64 = (0..2).map(|t| nlml(&spec, &hps[t], &mf.levels[t]).unwrap()).sum();
        assert!((model.nlml_value - sum).abs() <= 1e-8, "seed {seed}: {} vs {sum}", model.nlml_value);
    }
}

#[test]
fn identity_coregionalization_predicts_like_independent_gps() {
    let xq = DMatrix::from_fn(15, 2, |i, j| ((i * 7 + j * 3) % 15) as f64 / 10.0 - 0.2);
    for seed in 0..20 {
        let (spec, hps, mf, model) = identity_lmc(seed);
        for t in 0..2 {
            let gp = TrainedGP::from_hyperparams(
                &spec,
                &hps[t],
                &mf.levels[t],
                InputScaling::identity(2),
                OutputScaling::identity(),
            )
            .unwrap();
            let a = model.predict(&xq, t).unwrap();
            let b = gp.predict(&xq).unwrap();
            assert!((&a.mean - &b.mean).amax() <= 1e-8, "seed {seed} level {t}");
            assert!((&a.variance - &b.variance).amax() <= 1e-8, "seed {seed} level {t}");
        }
    }
}

#[test]
fn lmc_matches_dense_joint_conditioning() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = 2;
    let spec = KernelSpec::squared_exponential(d);
    let cov = default_lmc_covariance(d, 2, 2, &[1, 1]).unwrap();
    let shapes: Vec<Vec<f64>> = (0..2).map(|_| (0..d).map(|_| rng.random_range(0.0..1.5)).collect()).collect();
    let factors: Vec<DMatrix<f64>> = (0..2).map(|_| DMatrix::from_fn(2, 1, |_, _| rng.random_range(-2.0..2.0))).collect();
    let noise: [f64; 2] = [1e-3, 1e-2];
    let means = [0.3, -0.5];
    let mut p = cov.params(&shapes, &factors);
    p.extend([noise[0].ln(), noise[1].ln(), means[0], means[1]]);

    let x1 = DMatrix::from_fn(6, d, |_, _| rng.random_range(0.0..1.0));
    let x2 = rows(&x1, &[0, 2, 4]);
    let y1 = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
    let y2 = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
    let mf = MultiFidelityDataset::two_level(x1.clone(), y1.clone(), x2.clone(), y2.clone()).unwrap();
    let model =
        CoregionalizationModel::from_params(cov, &mf, &p, InputScaling::identity(d), vec![OutputScaling::identity(); 2])
            .unwrap();

    // dense oracle: explicit block covariance and matrix inverse
    let pts: Vec<(DMatrix<f64>, usize)> = (0..6)
        .map(|i| (x1.rows(i, 1).into_owned(), 0))
        .chain((0..3).map(|i| (x2.rows(i, 1).into_owned(), 1)))
        .collect();
    let kern = |a: &DMatrix<f64>, la: usize, b: &DMatrix<f64>, lb: usize| -> f64 {
        (0..2)
            .map(|r| {
                let mut hp = HyperParams::new(&spec);
                hp.log_inv_lengthscales = shapes[r].clone();
                factors[r][(la, 0)] * factors[r][(lb, 0)] * kernel_eval(&spec, &hp, a, b).unwrap()[(0, 0)]
            })
            .sum()
    };
    let n = pts.len();
    let mut k = DMatrix::from_fn(n, n, |i, j| kern(&pts[i].0, pts[i].1, &pts[j].0, pts[j].1));
    let jitter = 1e-10 * k.diagonal().max();
    for i in 0..n {
        k[(i, i)] += noise[pts[i].1] + jitter;
    }
    let kinv = k.try_inverse().unwrap();
    let r = DVector::from_fn(n, |i, _| if i < 6 { y1[i] - means[0] } else { y2[i - 6] - means[1] });
    let xq = DMatrix::from_fn(8, d, |_, _| rng.random_range(-0.2..1.2));
    for t in 0..2 {
        let pred = model.predict(&xq, t).unwrap();
        for q in 0..8 {
            let xr = xq.rows(q, 1).into_owned();
            let kq = DVector::from_fn(n, |i, _| kern(&pts[i].0, pts[i].1, &xr, t));
            let mean = means[t] + (kq.transpose() * &kinv * &r)[(0, 0)];
            let var = kern(&xr, t, &xr, t) - (kq.transpose() * &kinv * &kq)[(0, 0)];
            assert!((pred.mean[q] - mean).abs() <= 1e-8, "level {t} point {q}: {} vs {mean}", pred.mean[q]);
            assert!((pred.variance[q] - var).abs() <= 1e-8, "level {t} point {q}: {} vs {var}", pred.variance[q]);
        }
    }
}

#[test]
fn lmc_interpolates_hf_training_points_at_noise_floor() {
    let x1 = col(&[0.0, 0.2, 0.4, 0.6, 0.8, 1.0]);
    let x2 = col(&[0.1, 0.5, 0.9]);
    let y1 = x1.column(0).map(|v| (6.0 * v).sin());
    let y2 = x2.column(0).map(|v| 1.5 * (6.0 * v).sin() + v);
    let mf = MultiFidelityDataset::two_level(x1, y1, x2.clone(), y2.clone()).unwrap();
    let cov = default_lmc_covariance(1, 2, 2, &[1, 1]).unwrap();
    let mut p = cov.params(&[vec![1.0], vec![0.5]], &[col(&[1.0, 1.5]), col(&[0.1, 0.8])]);
    p.extend([log_noise_floor(), log_noise_floor(), 0.0, 0.0]);
    let model =
        CoregionalizationModel::from_params(cov, &mf, &p, InputScaling::identity(1), vec![OutputScaling::identity(); 2])
            .unwrap();
    let pred = model.predict(&x2, 1).unwrap();
    assert!((&pred.mean - &y2).amax() <= 1e-6, "{} vs {}", pred.mean, y2);
}

#[test]
fn perfectly_correlated_levels_are_learned() {
    let x = lhs_sample(12, 1, &[(0.0, 1.0)], 3).unwrap();
    let y1 = x.column(0).map(|v| (8.0 * v).sin() + v);
    let y2 = &y1 * 2.0;
    let mf = MultiFidelityDataset::two_level(x.clone(), y1, x, y2).unwrap();
    let model = lmc_fit(&mf, 2, &[1, 1], &OptConfig::default()).unwrap();
    let rho = model.level_correlation(0, 1);
    assert!(rho >= 0.99, "learned correlation {rho}");
}

#[test]
fn default_lmc_has_two_rank_one_groups() {
    let cov = default_lmc_covariance(3, 2, 2, &[1, 1]).unwrap();
    assert_eq!(cov.groups.len(), 2);
    assert!(cov.groups.iter().all(|(_, c)| *c == 1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn lmc_joint_covariance_factorizes(seed in 0u64..1_000_000, n in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cov = default_lmc_covariance(2, 3, 2, &[1, 2]).unwrap();
        let bounds = cov.bounds();
        let p: Vec<f64> = bounds.iter().map(|b| rng.random_range(b.lower..b.upper)).collect();
        let mut a = DMatrix::from_fn(n, 3, |_, _| rng.random_range(0.0..1.0));
        for i in 0..n {
            a[(i, 2)] = (i % 3) as f64;
        }
        let k = cov.cross(&p, &a, &a);
        let scale = cov.diag(&p, &a).max();
        prop_assert!(mfgp::linalg::jittered_cholesky(&k, scale, &p).is_ok());
        prop_assert!((&k - k.transpose()).amax() <= 1e-12 * (1.0 + k.amax()));
    }
}

/// Nested two-level instance with M1 <= 10, M2 <= 5 and smooth outputs.
fn nested_instance(rng: &mut ChaCha8Rng, d: usize) -> MultiFidelityDataset {
    let m1 = rng.random_range(4..=10);
    let m2 = rng.random_range(2..=5.min(m1));
    let x1 = DMatrix::from_fn(m1, d, |_, _| rng.random_range(0.0..1.0));
    let x2 = rows(&x1, &(0..m2).collect::<Vec<_>>());
    let (a, b, c) = (rng.random_range(2.0..8.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    let f1 = |r: nalgebra::DMatrixView<f64>| (a * r.sum()).sin();
    let y1 = DVector::from_fn(m1, |i, _| f1(x1.rows(i, 1)));
    let y2 = DVector::from_fn(m2, |i, _| b * f1(x2.rows(i, 1)) + c * x2.row(i).sum().powi(2));
    MultiFidelityDataset::two_level(x1, y1, x2, y2).unwrap()
}

#[test]
fn recursive_and_coupled_ar1_agree_at_shared_hyperparameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for inst in 0..20 {
        let d = 1 + inst % 2;
        let spec = KernelSpec::squared_exponential(d);
        let mf = nested_instance(&mut rng, d);
        // short lengthscales keep the noiseless joint covariance well conditioned
        let mut hp1 = random_hp(&mut rng, &spec, log_noise_floor());
        let mut hpg = random_hp(&mut rng, &spec, log_noise_floor());
        for hp in [&mut hp1, &mut hpg] {
            hp.log_inv_lengthscales = (0..d).map(|_| rng.random_range(4.0..5.5)).collect();
        }
        let rho = rng.random_range(-2.0..2.0);
        let rec = AR1Model::from_hyperparams(&spec, &mf, &[hp1.clone(), hpg.clone()], &[rho]).unwrap();
        let cpl = AR1CoupledModel::from_hyperparams(&spec, &mf, &hp1, &hpg, rho).unwrap();
        let xq = DMatrix::from_fn(25, d, |_, _| rng.random_range(-0.5..1.5));
        for level in 0..2 {
            let a = rec.predict_level(&xq, level).unwrap();
            let b = cpl.predict_level(&xq, level).unwrap();
            let dm = (&a.mean - &b.mean).amax();
            let dv = (&a.variance - &b.variance).amax();
            assert!(dm <= 1e-6 && dv <= 1e-6, "instance {inst} level {level}: dmean {dm:e}, dvar {dv:e}");
        }
    }
}

#[test]
fn coupled_covariance_has_no_cross_terms_at_zero_rho() {
    let spec = KernelSpec::squared_exponential(2);
    let cov = Ar1CoupledCovariance::new(&spec);
    let hp = HyperParams::new(&spec);
    let p = cov.params(&hp, &hp, 0.0);
    let a = DMatrix::from_row_slice(4, 3, &[0.1, 0.2, 0.0, 0.5, 0.5, 0.0, 0.1, 0.2, 1.0, 0.9, 0.3, 1.0]);
    let k = cov.cross(&p, &a, &a);
    for i in 0..2 {
        for j in 2..4 {
            assert_eq!(k[(i, j)], 0.0);
            assert_eq!(k[(j, i)], 0.0);
        }
    }
}

#[test]
fn ar1_interpolates_hf_training_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let spec = KernelSpec::squared_exponential(1);
    let x1 = col(&[0.0, 0.15, 0.3, 0.45, 0.6, 0.75, 0.9]);
    let x2 = rows(&x1, &[1, 3, 5]);
    let y1 = x1.column(0).map(|v| (6.0 * v).sin());
    let y2 = x2.column(0).map(|v| 2.0 * (6.0 * v).sin() + v - 0.5);
    let mf = MultiFidelityDataset::two_level(x1, y1, x2.clone(), y2.clone()).unwrap();
    let hp1 = random_hp(&mut rng, &spec, log_noise_floor());
    let hpg = random_hp(&mut rng, &spec, log_noise_floor());
    let model = AR1Model::from_hyperparams(&spec, &mf, &[hp1, hpg], &[1.7]).unwrap();
    let pred = model.predict(&x2).unwrap();
    assert!((&pred.mean - &y2).amax() <= 1e-6, "{} vs {}", pred.mean, y2);
    assert!(pred.variance.max() <= 1e-6, "{}", pred.variance);
}

#[test]
fn ar1_variance_reverts_to_scaled_prior_far_from_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let spec = KernelSpec::squared_exponential(2);
    let mf = nested_instance(&mut rng, 2);
    let hp1 = random_hp(&mut rng, &spec, -4.0);
    let hpg = random_hp(&mut rng, &spec, -5.0);
    let rho = -1.3;
    let model = AR1Model::from_hyperparams(&spec, &mf, &[hp1.clone(), hpg.clone()], &[rho]).unwrap();
    let far = DMatrix::from_row_slice(1, 2, &[100.0, -100.0]);
    let v = model.predict(&far).unwrap().variance[0];
    let prior = rho * rho * hp1.variance() + hpg.variance();
    assert!((v - prior).abs() <= 1e-6, "{v} vs {prior}");
}

#[test]
fn ar1_variance_does_not_grow_when_a_point_is_added_at_the_query() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let spec = KernelSpec::squared_exponential(1);
    for case in 0..20 {
        let mf = nested_instance(&mut rng, 1);
        let hp1 = random_hp(&mut rng, &spec, -6.0);
        let hpg = random_hp(&mut rng, &spec, -6.0);
        let rho = rng.random_range(-2.0..2.0);
        let xq = col(&[rng.random_range(0.0..1.0)]);
        let before = AR1Model::from_hyperparams(&spec, &mf, &[hp1.clone(), hpg.clone()], &[rho])
            .unwrap()
            .predict(&xq)
            .unwrap()
            .variance[0];
        let mut levels = mf.levels.clone();
        for (t, level) in levels.iter_mut().enumerate() {
            let x = level.x.clone().insert_row(level.len(), xq[(0, 0)]);
            let y = level.y.clone().push(t as f64 - 0.3);
            *level = Dataset::new(x, y).unwrap();
        }
        let grown = MultiFidelityDataset::new(levels).unwrap();
        let after = AR1Model::from_hyperparams(&spec, &grown, &[hp1, hpg], &[rho])
            .unwrap()
            .predict(&xq)
            .unwrap()
            .variance[0];
        assert!(after <= before + 1e-12, "case {case}: {after} > {before}");
    }
}

#[test]
fn identical_fidelities_give_unit_rho_and_no_discrepancy() {
    let x1 = lhs_sample(20, 1, &[(0.0, 1.0)], 21).unwrap();
    let x2 = rows(&x1, &[0, 3, 6, 9, 12, 15, 18]);
    let f = |v: f64| (6.0 * v - 2.0).powi(2) * (12.0 * v - 4.0).sin();
    let y1 = x1.column(0).map(f);
    let y2 = x2.column(0).map(f);
    let scale = OutputScaling::standardize(&y2).std;
    let mf = MultiFidelityDataset::two_level(x1, y1, x2, y2).unwrap();
    let model = ar1_fit_recursive(&mf, &OptConfig::default()).unwrap();
    let rho = model.rhos()[0];
    assert!((rho - 1.0).abs() <= 0.05, "rho = {rho}");
    // discrepancy: top-level mean minus the scaled level-1 mean
    let grid = mfgp::bench::grid_1d(200, 0.0, 1.0);
    let top = model.predict(&grid).unwrap().mean;
    let low = model.predict_level(&grid, 0).unwrap().mean;
    let disc = (&top - &low * rho).amax();
    assert!(disc <= 1e-3 * scale, "discrepancy {disc} vs output scale {scale}");
}

#[test]
fn zero_rho_reduces_to_single_level_gp() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let spec = KernelSpec::squared_exponential(2);
    let x1 = lhs_sample(15, 2, &[(0.0, 1.0), (0.0, 1.0)], 1).unwrap();
    let x2 = rows(&x1, &[1, 4, 7, 10, 13]);
    let y1 = DVector::from_fn(15, |_, _| rng.random_range(-1.0..1.0));
    let y2 = x2.row_iter().map(|r| r[0].sin() + r[1] * r[1]).collect::<Vec<_>>();
    let y2 = DVector::from_vec(y2);
    let mf = MultiFidelityDataset::two_level(x1, y1, x2.clone(), y2.clone()).unwrap();
    let opt = OptConfig::default();
    let config = Ar1Config { fixed_rho: Some(vec![0.0]) };
    let model = ar1_fit_recursive_with(&spec, &mf, &opt, &config, None).unwrap();
    let direct = fit_gp(&spec, &Dataset::new(x2, y2).unwrap(), &opt).unwrap();
    let xq = DMatrix::from_fn(30, 2, |_, _| rng.random_range(0.0..1.0));
    let a = model.predict(&xq).unwrap();
    let b = direct.predict(&xq).unwrap();
    assert!((&a.mean - &b.mean).amax() <= 1e-8);
    assert!((&a.variance - &b.variance).amax() <= 1e-8);
}

#[test]
fn coupled_fit_recovers_linear_scale_factor() {
    let rho_true = 1.8;
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let x1 = lhs_sample(15, 1, &[(0.0, 1.0)], seed).unwrap();
        let x2 = lhs_sample(6, 1, &[(0.0, 1.0)], seed + 100).unwrap();
        let f = |v: f64| (8.0 * v).sin() + 0.5 * v;
        let y1 = x1.column(0).map(f);
        let y2 = x2.column(0).map(|v| rho_true * f(v));
        let mf = MultiFidelityDataset::two_level(x1, y1, x2, y2).unwrap();
        let model = ar1_fit_coupled(&mf, &OptConfig::default().with_seed(seed)).unwrap();
        worst = worst.max((model.rho() - rho_true).abs());
    }
    assert!(worst <= 0.05, "worst |rho - rho_true| = {worst}");
}

#[test]
fn coupled_fit_escapes_poor_optima_on_the_rosenbrock_pair() {
    // hf - lf / 0.9 is a quadratic in x1 alone, so rho = 1 / 0.9 explains the data
    let p = bench_vardim(2).unwrap();
    let xq = lhs_sample(500, 2, &p.bounds, 7).unwrap();
    let truth = p.eval_hf(&xq);
    for seed in [14982712913386380586u64, 12791975586884050955, 11146577850431485925, 14941545132491145027] {
        let spec = DoESpec { n_lf: 40, n_hf: 8, d: 2, bounds: p.bounds.clone(), seed, nested: false };
        let (x1, x2) = spec.sample().unwrap();
        let mf = MultiFidelityDataset::two_level(x1.clone(), p.eval_lf(&x1), x2.clone(), p.eval_hf(&x2)).unwrap();
        let model = ar1_fit_coupled(&mf, &OptConfig::default().with_seed(seed)).unwrap();
        let r2 = metric_r2(&truth, &model.predict(&xq).unwrap().mean).unwrap();
        assert!(r2 >= 0.9999, "seed {seed}: R2 {r2}");
    }
}

#[test]
fn recursive_ar1_rejects_non_nested_designs() {
    let x1 = col(&[0.0, 0.5, 1.0]);
    let x2 = col(&[0.5, 0.25]);
    let mf = MultiFidelityDataset::two_level(x1, DVector::zeros(3), x2, DVector::zeros(2)).unwrap();
    match ar1_fit_recursive(&mf, &raw()) {
        Err(Error::Contract(msg)) => assert!(msg.contains("[1]"), "{msg}"),
        other => panic!("expected a contract violation, got {other:?}"),
    }
}
