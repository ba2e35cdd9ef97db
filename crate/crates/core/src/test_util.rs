use nalgebra::DMatrix;
use rand::Rng;

pub fn random_matrix<R: Rng>(rng: &mut R, n: usize, d: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| rng.random_range(lo..hi))
}

/// Central-difference check of `an` against `d f / d p_j` with step 1e-6.
pub fn fd_check<F>(p: &[f64], j: usize, f: F, an: &DMatrix<f64>, rel: f64)
where
    F: Fn(&[f64]) -> DMatrix<f64>,
{
    let h = 1e-6;
    let mut pp = p.to_vec();
    pp[j] += h;
    let mut pm = p.to_vec();
    pm[j] -= h;
    let fp = f(&pp);
    let fm = f(&pm);
    let floor = 1e-8 * (1.0 + fp.amax());
    for ((a, b), c) in fp.iter().zip(fm.iter()).zip(an.iter()) {
        let fd = (a - b) / (2.0 * h);
        assert!(
            (fd - c).abs() <= rel * fd.abs().max(c.abs()) + floor,
            "param {j}: fd {fd} analytic {c}"
        );
    }
}
