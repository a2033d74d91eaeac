//! Measurement and sensor-parameter covariances and seedable sampling.
//!
//! Randomness is organized as one master seed split into ChaCha streams keyed
//! by trial index and purpose, so a trial draws the same numbers no matter how
//! many other trials run or in which order.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{psd_sqrt, relative_min_eigenvalue};
use crate::model::{SensorArray, SensorSet};

/// Per-sensor weights of the sensor-parameter covariance for the ten-sensor
/// reference deployment.
pub const BASELINE_B: [f64; 10] = [1.0, 20.0, 10.0, 30.0, 20.0, 3.0, 2.0, 10.0, 1.0, 2.0];

/// Off-diagonal correlation of the TDOA and FDOA noise blocks.
pub const NOISE_CORRELATION: f64 = 0.5;
/// Variance ratio of the FDOA block to the TDOA block.
pub const FDOA_SCALE: f64 = 0.1;

/// Noise amplitude from a variance in dB: `10^(db/20)`.
pub fn db_to_sigma(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// `10·log₁₀(v)`.
pub fn to_db(v: f64) -> f64 {
    10.0 * v.log10()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub q_alpha: DMatrix<f64>,
    pub q_beta: DMatrix<f64>,
    pub sigma_d: Option<f64>,
    pub sigma_s: Option<f64>,
}

impl NoiseModel {
    /// Validates symmetry and positive semidefiniteness of both matrices.
    pub fn new(q_alpha: DMatrix<f64>, q_beta: DMatrix<f64>) -> Result<Self> {
        check_covariance(&q_alpha, "measurement")?;
        check_covariance(&q_beta, "sensor parameter")?;
        if !q_alpha.nrows().is_multiple_of(2) || !q_beta.nrows().is_multiple_of(6) {
            return Err(Error::DimensionMismatch(format!(
                "covariance sizes {} and {} do not describe an array",
                q_alpha.nrows(),
                q_beta.nrows()
            )));
        }
        if q_alpha.nrows() / 2 + 1 != q_beta.nrows() / 6 {
            return Err(Error::DimensionMismatch(format!(
                "measurement covariance is {0}x{0} but sensor covariance is {1}x{1}",
                q_alpha.nrows(),
                q_beta.nrows()
            )));
        }
        Ok(NoiseModel {
            q_alpha,
            q_beta,
            sigma_d: None,
            sigma_s: None,
        })
    }

    /// Structured model for `b.len()` sensors at propagation speed `c`.
    pub fn standard(b: &[f64], sigma_d: f64, sigma_s: f64, c: f64) -> Result<Self> {
        let mut model = NoiseModel::new(
            standard_q_alpha(b.len(), sigma_d, c)?,
            standard_q_beta(b, sigma_s)?,
        )?;
        model.sigma_d = Some(sigma_d);
        model.sigma_s = Some(sigma_s);
        Ok(model)
    }

    pub fn sensor_count(&self) -> usize {
        self.q_beta.nrows() / 6
    }

    /// Same sensor covariance with a measurement covariance rebuilt at
    /// speed `c`. Only meaningful for structured models.
    pub fn at_speed(&self, c: f64) -> Result<Self> {
        let sigma_d = self.sigma_d.ok_or_else(|| {
            Error::InvalidParameter("rescaling by speed needs a structured noise model".into())
        })?;
        Ok(NoiseModel {
            q_alpha: standard_q_alpha(self.sensor_count(), sigma_d, c)?,
            ..self.clone()
        })
    }
}

fn check_covariance(q: &DMatrix<f64>, what: &str) -> Result<()> {
    if !q.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "{what} covariance is not square"
        )));
    }
    if !q.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "{what} covariance is not finite"
        )));
    }
    let scale = q.amax();
    if scale == 0.0 {
        return Ok(());
    }
    if (q - q.transpose()).amax() > 1e-12 * scale {
        return Err(Error::InvalidParameter(format!(
            "{what} covariance is not symmetric"
        )));
    }
    let rel = relative_min_eigenvalue(q);
    if rel < -1e-10 {
        return Err(Error::NotPsd {
            index: 0,
            pivot: rel * scale,
        });
    }
    Ok(())
}

/// `σ_d²/c² · blkdiag(R, 0.1R)` for `M` sensors, `R` with unit diagonal and
/// 0.5 elsewhere.
pub fn standard_q_alpha(m: usize, sigma_d: f64, c: f64) -> Result<DMatrix<f64>> {
    if m < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least two sensors, got {m}"
        )));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "propagation speed must be positive, got {c}"
        )));
    }
    if !(sigma_d >= 0.0) || !sigma_d.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "sigma_d must be nonnegative, got {sigma_d}"
        )));
    }
    let n = m - 1;
    let k = sigma_d * sigma_d / (c * c);
    Ok(DMatrix::from_fn(2 * n, 2 * n, |i, j| {
        let (bi, bj) = (i / n, j / n);
        if bi != bj {
            return 0.0;
        }
        let r = if i == j { 1.0 } else { NOISE_CORRELATION };
        let block = if bi == 0 { 1.0 } else { FDOA_SCALE };
        k * r * block
    }))
}

/// `σ_s² · diag(b ⊗ 1₃, 0.5 · b ⊗ 1₃)`.
pub fn standard_q_beta(b: &[f64], sigma_s: f64) -> Result<DMatrix<f64>> {
    if let Some(bad) = b.iter().find(|&&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "b entries must be positive, got {bad}"
        )));
    }
    if !(sigma_s >= 0.0) || !sigma_s.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "sigma_s must be nonnegative, got {sigma_s}"
        )));
    }
    let m = b.len();
    let s2 = sigma_s * sigma_s;
    let diag = DVector::from_fn(6 * m, |k, _| {
        let half = if k >= 3 * m { 0.5 } else { 1.0 };
        s2 * half * b[(k % (3 * m)) / 3]
    });
    Ok(DMatrix::from_diagonal(&diag))
}

/// Draws from `N(mean, cov)` through a fixed square-root factor.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn new(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || !cov.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "mean has {} entries, covariance is {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        let factor = psd_sqrt(cov).map_err(|(index, pivot)| Error::NotPsd { index, pivot })?;
        Ok(GaussianSampler { mean, factor })
    }

    pub fn zero_mean(cov: &DMatrix<f64>) -> Result<Self> {
        GaussianSampler::new(DVector::zeros(cov.nrows()), cov)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.factor * z
    }
}

pub fn sample_gaussian<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    Ok(GaussianSampler::new(mean.clone(), cov)?.sample(rng))
}

/// Array with nominal parameters drawn around the truth.
pub fn perturb_array<R: Rng + ?Sized>(
    array: &SensorArray,
    q_beta: &DMatrix<f64>,
    rng: &mut R,
) -> Result<SensorArray> {
    let sampler = GaussianSampler::new(array.truth().beta(), q_beta)?;
    array.with_nominal(SensorSet::from_beta(&sampler.sample(rng))?)
}

/// What a random stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Speed = 0,
    Measurement = 1,
    Sensors = 2,
}

/// Independent stream for one trial and purpose.
pub fn stream(seed: u64, trial: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial.wrapping_mul(4).wrapping_add(purpose as u64));
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn q_alpha_small_case() {
        let q = standard_q_alpha(3, 1.0, 1.0).unwrap();
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 0.5, 0.0, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 0.0, 0.1, 0.05, 0.0, 0.0, 0.05, 0.1,
            ],
        );
        assert!((q - expected).amax() < 1e-15);
    }

    #[test]
    fn q_alpha_trace_and_limits() {
        let q = standard_q_alpha(10, 1.0, 1500.0).unwrap();
        assert_relative_eq!(
            q.trace(),
            9.0 * 1.1 / 1500.0f64.powi(2),
            max_relative = 1e-12
        );
        assert_relative_eq!(q.trace(), 4.4e-6, max_relative = 1e-12);
        assert_eq!(standard_q_alpha(10, 0.0, 1500.0).unwrap().amax(), 0.0);
        assert!(standard_q_alpha(10, 1.0, 0.0).is_err());
        assert_eq!(q, q.transpose());
    }

    #[test]
    fn q_beta_entries() {
        let q = standard_q_beta(&BASELINE_B, 1.0).unwrap();
        assert_eq!(q[(0, 0)], 1.0);
        assert_eq!(q[(3, 3)], 20.0);
        assert_eq!(q[(30, 30)], 0.5);
        assert_relative_eq!(q.trace(), 445.5);
        assert_relative_eq!(
            standard_q_beta(&BASELINE_B, 2.0).unwrap().trace(),
            4.0 * 445.5
        );
        assert_eq!(standard_q_beta(&BASELINE_B, 0.0).unwrap().amax(), 0.0);
        assert!(standard_q_beta(&[1.0, 0.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn db_conversion() {
        assert_relative_eq!(db_to_sigma(0.0), 1.0);
        assert_relative_eq!(db_to_sigma(20.0), 10.0);
        assert_relative_eq!(db_to_sigma(-5.0).powi(2), 10f64.powf(-0.5));
    }

    #[test]
    fn zero_covariance_returns_mean() {
        let mean = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let mut rng = stream(1, 0, Purpose::Measurement);
        let x = sample_gaussian(&mean, &DMatrix::zeros(3, 3), &mut rng).unwrap();
        assert_eq!(x, mean);
    }

    fn sample_cov(cov: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
        let s = GaussianSampler::zero_mean(cov).unwrap();
        let mut rng = stream(7, 0, Purpose::Measurement);
        let mut acc = DMatrix::zeros(cov.nrows(), cov.nrows());
        for _ in 0..n {
            let x = s.sample(&mut rng);
            acc += &x * x.transpose();
        }
        acc / n as f64
    }

    #[test]
    fn sample_covariance_identity() {
        let target = DMatrix::identity(5, 5);
        let est = sample_cov(&target, 100_000);
        assert!((est - &target).norm() / target.norm() < 0.05);
    }

    #[test]
    fn sample_covariance_structured() {
        let target = standard_q_alpha(10, 1.0, 1500.0).unwrap();
        let est = sample_cov(&target, 100_000);
        assert!((est - &target).norm() / target.norm() < 0.05);
    }

    #[test]
    fn rejects_indefinite() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 3.0, 1.0]);
        assert!(matches!(
            GaussianSampler::zero_mean(&cov),
            Err(Error::NotPsd { .. })
        ));
        assert!(NoiseModel::new(cov, DMatrix::zeros(12, 12)).is_err());
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<f64> = (0..4)
            .map(|_| stream(3, 5, Purpose::Sensors).random())
            .collect();
        let mut r = stream(3, 5, Purpose::Sensors);
        let b: f64 = r.random();
        assert_eq!(a[0], b);
        let mut other = stream(3, 5, Purpose::Measurement);
        assert_ne!(b, other.random::<f64>());
        let mut next_trial = stream(3, 6, Purpose::Sensors);
        assert_ne!(b, next_trial.random::<f64>());
    }

    #[test]
    fn independent_streams_are_uncorrelated() {
        let n = 20_000;
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for trial in 0..n as u64 {
            xs.push(stream(11, trial, Purpose::Measurement).sample::<f64, _>(StandardNormal));
            ys.push(stream(11, trial, Purpose::Sensors).sample::<f64, _>(StandardNormal));
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (mx, my) = (mean(&xs), mean(&ys));
        let cov: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - mx) * (y - my))
            .sum::<f64>();
        let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        let rho = cov / (vx * vy).sqrt();
        assert!(rho.abs() < 4.0 / (n as f64).sqrt(), "rho = {rho}");
    }
}
