//! Source and sensor geometry and the noiseless TDOA/FDOA model.
//!
//! Sensor index 0 is always the reference. TDOA and FDOA vectors hold the
//! `M − 1` differences of sensors `1..M` against it, FDOA already divided by
//! the carrier frequency (a dimensionless rate).

use nalgebra::{DVector, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Smallest supported array size.
pub const MIN_SENSORS: usize = 5;

/// Floor used by [`canonicalize_reference`], as a fraction of the largest
/// hinted range.
pub const REFERENCE_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub speed: f64,
}

impl SourceState {
    pub fn new(position: Vec3, velocity: Vec3, speed: f64) -> Result<Self> {
        if !(speed > 0.0) || !speed.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "propagation speed must be positive and finite, got {speed}"
            )));
        }
        if !position
            .iter()
            .chain(velocity.iter())
            .all(|v| v.is_finite())
        {
            return Err(Error::InvalidParameter(
                "source position and velocity must be finite".into(),
            ));
        }
        Ok(SourceState {
            position,
            velocity,
            speed,
        })
    }

    /// `[u; u̇]`.
    pub fn theta(&self) -> DVector<f64> {
        DVector::from_iterator(6, self.position.iter().chain(self.velocity.iter()).copied())
    }

    pub fn translated(&self, shift: &Vec3) -> Self {
        SourceState {
            position: self.position + shift,
            ..*self
        }
    }
}

/// Positions and velocities of `M` sensors.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSet {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
}

impl SensorSet {
    pub fn new(positions: Vec<Vec3>, velocities: Vec<Vec3>) -> Result<Self> {
        if positions.len() != velocities.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} sensor positions but {} velocities",
                positions.len(),
                velocities.len()
            )));
        }
        if !positions
            .iter()
            .chain(velocities.iter())
            .all(|v| v.iter().all(|x| x.is_finite()))
        {
            return Err(Error::InvalidParameter(
                "sensor parameters must be finite".into(),
            ));
        }
        Ok(SensorSet {
            positions,
            velocities,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Stacked `[s₁ … s_M, ṡ₁ … ṡ_M]`, length `6M`.
    pub fn beta(&self) -> DVector<f64> {
        DVector::from_iterator(
            6 * self.len(),
            self.positions
                .iter()
                .chain(self.velocities.iter())
                .flat_map(|v| v.iter().copied()),
        )
    }

    /// Inverse of [`SensorSet::beta`].
    pub fn from_beta(beta: &DVector<f64>) -> Result<Self> {
        if !beta.len().is_multiple_of(6) || beta.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "sensor parameter vector length {} is not a positive multiple of 6",
                beta.len()
            )));
        }
        let m = beta.len() / 6;
        let at = |k: usize| Vec3::new(beta[3 * k], beta[3 * k + 1], beta[3 * k + 2]);
        SensorSet::new((0..m).map(at).collect(), (m..2 * m).map(at).collect())
    }

    pub fn translated(&self, shift: &Vec3) -> Self {
        SensorSet {
            positions: self.positions.iter().map(|p| p + shift).collect(),
            velocities: self.velocities.clone(),
        }
    }

    fn permuted(&self, perm: &[usize]) -> Self {
        SensorSet {
            positions: perm.iter().map(|&k| self.positions[k]).collect(),
            velocities: perm.iter().map(|&k| self.velocities[k]).collect(),
        }
    }
}

/// True and nominal sensor parameters. The estimator only ever sees
/// [`SensorArray::nominal`].
#[derive(Debug, Clone, PartialEq)]
pub struct SensorArray {
    truth: SensorSet,
    nominal: SensorSet,
    permutation: Vec<usize>,
}

impl SensorArray {
    pub fn new(truth: SensorSet, nominal: SensorSet) -> Result<Self> {
        let m = truth.len();
        if m < MIN_SENSORS {
            return Err(Error::InvalidParameter(format!(
                "at least {MIN_SENSORS} sensors are required, got {m}"
            )));
        }
        if nominal.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "{m} true sensors but {} nominal sensors",
                nominal.len()
            )));
        }
        for i in 0..m {
            for j in i + 1..m {
                if truth.positions[i] == truth.positions[j] {
                    return Err(Error::DegenerateGeometry(format!(
                        "sensors {} and {} share the same position",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(SensorArray {
            truth,
            nominal,
            permutation: (0..m).collect(),
        })
    }

    /// Array whose nominal parameters equal the truth.
    pub fn exact(truth: SensorSet) -> Result<Self> {
        SensorArray::new(truth.clone(), truth)
    }

    pub fn count(&self) -> usize {
        self.truth.len()
    }

    pub fn truth(&self) -> &SensorSet {
        &self.truth
    }

    pub fn nominal(&self) -> &SensorSet {
        &self.nominal
    }

    /// `permutation()[k]` is the input index of the sensor now in slot `k`.
    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    /// Input index of the reference sensor.
    pub fn reference_index(&self) -> usize {
        self.permutation[0]
    }

    pub fn with_nominal(&self, nominal: SensorSet) -> Result<Self> {
        if nominal.len() != self.count() {
            return Err(Error::DimensionMismatch(format!(
                "{} nominal sensors for an array of {}",
                nominal.len(),
                self.count()
            )));
        }
        Ok(SensorArray {
            nominal,
            ..self.clone()
        })
    }

    pub fn translated(&self, shift: &Vec3) -> Self {
        SensorArray {
            truth: self.truth.translated(shift),
            nominal: self.nominal.translated(shift),
            permutation: self.permutation.clone(),
        }
    }
}

/// TDOA (seconds) and carrier-normalized FDOA against sensor 0.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub tdoa: DVector<f64>,
    pub fdoa: DVector<f64>,
}

impl MeasurementSet {
    pub fn new(tdoa: DVector<f64>, fdoa: DVector<f64>) -> Result<Self> {
        if tdoa.len() != fdoa.len() || tdoa.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "tdoa has {} entries, fdoa has {}",
                tdoa.len(),
                fdoa.len()
            )));
        }
        if !tdoa.iter().chain(fdoa.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter(
                "measurements must be finite".into(),
            ));
        }
        Ok(MeasurementSet { tdoa, fdoa })
    }

    /// Number of sensors, `M`.
    pub fn sensor_count(&self) -> usize {
        self.tdoa.len() + 1
    }

    /// `[t; ṫ]`.
    pub fn alpha(&self) -> DVector<f64> {
        DVector::from_iterator(
            2 * self.tdoa.len(),
            self.tdoa.iter().chain(self.fdoa.iter()).copied(),
        )
    }

    pub fn from_alpha(alpha: &DVector<f64>) -> Result<Self> {
        if !alpha.len().is_multiple_of(2) {
            return Err(Error::DimensionMismatch(format!(
                "measurement vector length {} is odd",
                alpha.len()
            )));
        }
        let n = alpha.len() / 2;
        MeasurementSet::new(alpha.rows(0, n).into_owned(), alpha.rows(n, n).into_owned())
    }
}

/// `‖u − s‖`.
pub fn range(u: &Vec3, s: &Vec3) -> f64 {
    (u - s).norm()
}

/// `(u − s)ᵀ(u̇ − ṡ)/‖u − s‖`.
pub fn range_rate(u: &Vec3, u_dot: &Vec3, s: &Vec3, s_dot: &Vec3) -> Result<f64> {
    let d = u - s;
    let r = d.norm();
    if r == 0.0 {
        return Err(Error::DegenerateGeometry(
            "source coincides with a sensor; range rate undefined".into(),
        ));
    }
    Ok(d.dot(&(u_dot - s_dot)) / r)
}

/// Ranges and range rates from a source to every sensor of a set.
pub fn ranges_and_rates(source: &SourceState, sensors: &SensorSet) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut r = Vec::with_capacity(sensors.len());
    let mut rd = Vec::with_capacity(sensors.len());
    for (s, sd) in sensors.positions.iter().zip(&sensors.velocities) {
        r.push(range(&source.position, s));
        rd.push(range_rate(&source.position, &source.velocity, s, sd)?);
    }
    Ok((r, rd))
}

/// Noiseless measurements for an arbitrary sensor set.
pub fn measurements_from(source: &SourceState, sensors: &SensorSet) -> Result<MeasurementSet> {
    if sensors.len() < 2 {
        return Err(Error::InvalidParameter(
            "at least two sensors are needed".into(),
        ));
    }
    let (r, rd) = ranges_and_rates(source, sensors)?;
    let c = source.speed;
    let m = sensors.len();
    let tdoa = DVector::from_fn(m - 1, |i, _| (r[i + 1] - r[0]) / c);
    let fdoa = DVector::from_fn(m - 1, |i, _| (rd[i + 1] - rd[0]) / c);
    Ok(MeasurementSet { tdoa, fdoa })
}

/// Noiseless measurements at the true sensor parameters.
pub fn true_measurements(source: &SourceState, array: &SensorArray) -> Result<MeasurementSet> {
    measurements_from(source, array.truth())
}

/// Move the chosen reference sensor into slot 0.
///
/// Without a hint the order is kept. With a hint, ranges below
/// [`REFERENCE_FLOOR`] times the largest hinted range are skipped and the
/// smallest remaining one wins (ties go to the lower index).
pub fn canonicalize_reference(array: &SensorArray, ranges_hint: Option<&[f64]>) -> SensorArray {
    let Some(hint) = ranges_hint else {
        return array.clone();
    };
    let m = array.count();
    let max = hint.iter().take(m).copied().fold(0.0_f64, f64::max);
    let floor = REFERENCE_FLOOR * max;
    let pick = hint
        .iter()
        .take(m)
        .enumerate()
        .filter(|(_, &r)| r > 0.0 && r >= floor)
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap_or(0);
    let mut local: Vec<usize> = (0..m).collect();
    local.swap(0, pick);
    SensorArray {
        truth: array.truth.permuted(&local),
        nominal: array.nominal.permuted(&local),
        permutation: local.iter().map(|&k| array.permutation[k]).collect(),
    }
}
