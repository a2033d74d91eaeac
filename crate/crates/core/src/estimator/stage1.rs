//! First stage: pseudo-linear equations in `φ₁ = [u, u̇, c·r₁, c², c·ṙ₁]`,
//! where `r₁`, `ṙ₁` are the range and range rate to the reference sensor.

use nalgebra::{DMatrix, DVector};

use super::{wls, DdotVariant, Weighting, WeightingMode, WlsSolution};
use crate::error::{Error, Result};
use crate::linalg::{LinalgError, SpdFactor};
use crate::model::{range, range_rate, MeasurementSet, SensorSet, Vec3};
use crate::noise::NoiseModel;

/// Column count of `G₁`.
pub const PHI1_LEN: usize = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1System {
    pub h1: DVector<f64>,
    pub g1: DMatrix<f64>,
}

pub(crate) fn check_sizes(meas: &MeasurementSet, sensors: &SensorSet) -> Result<()> {
    if meas.sensor_count() != sensors.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} measurement pairs for {} sensors",
            meas.tdoa.len(),
            sensors.len()
        )));
    }
    Ok(())
}

/// `h₁` and `G₁` from measurements and nominal sensor parameters.
pub fn build_stage1(meas: &MeasurementSet, sensors: &SensorSet) -> Result<Stage1System> {
    check_sizes(meas, sensors)?;
    let m = sensors.len();
    let n = m - 1;
    let s = &sensors.positions;
    let sd = &sensors.velocities;
    let big_r = |i: usize| s[i].dot(&s[i]);
    let big_rd = |i: usize| sd[i].dot(&s[i]);

    let mut h1 = DVector::zeros(2 * n);
    let mut g1 = DMatrix::zeros(2 * n, PHI1_LEN);
    for i in 1..m {
        let t = meas.tdoa[i - 1];
        let td = meas.fdoa[i - 1];
        let ds = s[i] - s[0];
        let dsd = sd[i] - sd[0];
        let (rt, rf) = (i - 1, n + i - 1);

        h1[rt] = big_r(0) - big_r(i);
        h1[rf] = 2.0 * (big_rd(0) - big_rd(i));
        for k in 0..3 {
            g1[(rt, k)] = -2.0 * ds[k];
            g1[(rf, k)] = -2.0 * dsd[k];
            g1[(rf, 3 + k)] = -2.0 * ds[k];
        }
        g1[(rt, 6)] = -2.0 * t;
        g1[(rt, 7)] = -t * t;
        g1[(rf, 6)] = -2.0 * td;
        g1[(rf, 7)] = -2.0 * t * td;
        g1[(rf, 8)] = -2.0 * t;
    }
    Ok(Stage1System { h1, g1 })
}

/// `B₁` and `D₁` linearized at `(u, u̇, c)`.
///
/// `B₁ = [[B, 0], [Ḃ, B]]` maps measurement noise into the stage-one error,
/// `D₁ = [[D, 0], [Ḋ, D]]` maps sensor-parameter errors (columns ordered as
/// positions then velocities).
pub fn b1_d1(
    meas: &MeasurementSet,
    sensors: &SensorSet,
    u: &Vec3,
    ud: &Vec3,
    c: f64,
    ddot: DdotVariant,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_sizes(meas, sensors)?;
    let m = sensors.len();
    let n = m - 1;
    let s = &sensors.positions;
    let sd = &sensors.velocities;

    let r1 = range(u, &s[0]);
    let rd1 = range_rate(u, ud, &s[0], &sd[0])?;
    let rho = (u - s[0]) / r1;
    let lambda = (ud - sd[0]) / r1 - rho * (rd1 / r1);

    let mut b1 = DMatrix::zeros(2 * n, 2 * n);
    let mut d1 = DMatrix::zeros(2 * n, 6 * m);
    let vel = 3 * m;
    for i in 1..m {
        let t = meas.tdoa[i - 1];
        let td = meas.fdoa[i - 1];
        let ri = range(u, &s[i]);
        let rdi = range_rate(u, ud, &s[i], &sd[i])?;
        let (rt, rf) = (i - 1, n + i - 1);

        b1[(rt, rt)] = 2.0 * c * ri;
        b1[(rf, rf)] = 2.0 * c * ri;
        b1[(rf, rt)] = 2.0 * c * rdi;

        let d = u - s[0] + rho * (c * t);
        let second = match ddot {
            DdotVariant::Rate => td,
            DdotVariant::Delay => t,
        };
        let dd = ud - sd[0] + lambda * (c * t) + rho * (c * second);
        let a = u - s[i];
        let ad = ud - sd[i];
        for k in 0..3 {
            d1[(rt, k)] = -2.0 * d[k];
            d1[(rt, 3 * i + k)] = 2.0 * a[k];
            d1[(rf, k)] = -2.0 * dd[k];
            d1[(rf, 3 * i + k)] = 2.0 * ad[k];
            d1[(rf, vel + k)] = -2.0 * d[k];
            d1[(rf, vel + 3 * i + k)] = 2.0 * a[k];
        }
    }
    Ok((b1, d1))
}

/// Stage-one weighting and the linearization matrices it was built from.
#[derive(Debug, Clone)]
pub struct Stage1Weights {
    pub weighting: Weighting,
    pub b1: Option<DMatrix<f64>>,
    pub d1: Option<DMatrix<f64>>,
    /// Set when a zero covariance forced identity weighting.
    pub degenerate_covariance: bool,
}

fn weighting_from_covariance(cov: &DMatrix<f64>) -> Result<(Weighting, bool)> {
    if cov.amax() == 0.0 {
        return Ok((Weighting::Identity, true));
    }
    match SpdFactor::new(cov) {
        Ok(f) => Ok((Weighting::InverseOf(f), false)),
        Err(LinalgError::IllConditioned(c)) => {
            Err(Error::SingularWeighting(format!("condition number {c:e}")))
        }
        Err(_) => Err(Error::SingularWeighting("not positive definite".into())),
    }
}

pub(crate) fn check_noise(noise: &NoiseModel, m: usize) -> Result<()> {
    if noise.q_alpha.nrows() != 2 * (m - 1) || noise.q_beta.nrows() != 6 * m {
        return Err(Error::DimensionMismatch(format!(
            "noise model is sized for {} sensors, measurements for {m}",
            noise.sensor_count()
        )));
    }
    Ok(())
}

/// `W₁` for the given mode. Without an estimate this is the starting
/// weight (`Q_α⁻¹` or identity), with one it is
/// `(B₁ Q_α B₁ᵀ + D₁ Q_β D₁ᵀ)⁻¹` linearized at that estimate.
pub fn stage1_weights(
    meas: &MeasurementSet,
    sensors: &SensorSet,
    estimate: Option<&DVector<f64>>,
    noise: Option<&NoiseModel>,
    mode: WeightingMode,
    ddot: DdotVariant,
) -> Result<Stage1Weights> {
    check_sizes(meas, sensors)?;
    let m = sensors.len();
    let noise = match mode {
        WeightingMode::FullCovariance => {
            let noise = noise.ok_or_else(|| {
                Error::InvalidParameter("full covariance weighting needs a noise model".into())
            })?;
            check_noise(noise, m)?;
            Some(noise)
        }
        _ => None,
    };
    let identity = Stage1Weights {
        weighting: Weighting::Identity,
        b1: None,
        d1: None,
        degenerate_covariance: false,
    };
    let (phi, noise) = match (mode, estimate) {
        (WeightingMode::PlainIdentity, _) => return Ok(identity),
        (WeightingMode::StructuredIdentity, None) => return Ok(identity),
        (WeightingMode::FullCovariance, None) => {
            let (weighting, degenerate) = weighting_from_covariance(&noise.unwrap().q_alpha)?;
            return Ok(Stage1Weights {
                weighting,
                degenerate_covariance: degenerate,
                ..identity
            });
        }
        (_, Some(phi)) => (phi, noise),
    };
    if phi.len() != PHI1_LEN {
        return Err(Error::DimensionMismatch(format!(
            "stage-one estimate has {} entries, expected {PHI1_LEN}",
            phi.len()
        )));
    }
    let u = Vec3::new(phi[0], phi[1], phi[2]);
    let ud = Vec3::new(phi[3], phi[4], phi[5]);
    let c = phi[7].abs().sqrt();
    let (b1, d1) = b1_d1(meas, sensors, &u, &ud, c, ddot)?;
    let cov = match noise {
        Some(q) => &b1 * &q.q_alpha * b1.transpose() + &d1 * &q.q_beta * d1.transpose(),
        None => &b1 * b1.transpose() + &d1 * d1.transpose(),
    };
    let (weighting, degenerate) = weighting_from_covariance(&cov)?;
    Ok(Stage1Weights {
        weighting,
        b1: Some(b1),
        d1: Some(d1),
        degenerate_covariance: degenerate,
    })
}

/// `φ₁ = (G₁ᵀW₁G₁)⁻¹G₁ᵀW₁h₁` with covariance `(G₁ᵀW₁G₁)⁻¹`.
pub fn stage1_solve(sys: &Stage1System, w1: &Weighting) -> Result<WlsSolution> {
    wls(&sys.g1, &sys.h1, w1)
}

/// `φ₁` implied by a source state and the reference sensor.
pub fn phi1_at(u: &Vec3, ud: &Vec3, c: f64, sensors: &SensorSet) -> Result<DVector<f64>> {
    let r1 = range(u, &sensors.positions[0]);
    let rd1 = range_rate(u, ud, &sensors.positions[0], &sensors.velocities[0])?;
    Ok(DVector::from_vec(vec![
        u[0],
        u[1],
        u[2],
        ud[0],
        ud[1],
        ud[2],
        c * r1,
        c * c,
        c * rd1,
    ]))
}
