//! Two-stage weighted least squares estimator of source position, velocity
//! and propagation speed.
//!
//! Stage one solves a pseudo-linear system in nine unknowns with the
//! products `c·r₁`, `c²` and `c·ṙ₁` as nuisance variables. Stage two exploits
//! the relations between those variables and the source state, then the
//! squared offsets are unwound. Both stages iterate their weighting matrices
//! `n_iter` times.

mod stage1;
mod stage2;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use stage1::{
    b1_d1, build_stage1, phi1_at, stage1_solve, stage1_weights, Stage1System, Stage1Weights,
    PHI1_LEN,
};
pub use stage2::{
    b2_matrix, b3_matrix, build_stage2, phi2_at, recover, stage2_solve, Recovered, Stage2System,
    CLAMP_WARN, OFFSET_FLOOR, PHI2_LEN,
};

use crate::error::{Error, Result, Stage};
use crate::linalg::{lu_solve, symmetrize, SpdFactor};
use crate::model::{MeasurementSet, SensorSet, Vec3};
use crate::noise::NoiseModel;

/// Smallest array for which the stage-one normal matrix can be full rank.
pub const MIN_ESTIMATOR_SENSORS: usize = 6;

/// How the stage-one weighting matrix is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingMode {
    /// Start from `Q_α⁻¹`, refine with the true noise covariances.
    FullCovariance,
    /// Start from identity, refine with identity covariances.
    StructuredIdentity,
    /// Identity throughout.
    PlainIdentity,
}

impl WeightingMode {
    pub const ALL: [WeightingMode; 3] = [
        WeightingMode::FullCovariance,
        WeightingMode::StructuredIdentity,
        WeightingMode::PlainIdentity,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            WeightingMode::FullCovariance => "full_covariance",
            WeightingMode::StructuredIdentity => "structured_identity",
            WeightingMode::PlainIdentity => "plain_identity",
        }
    }
}

impl std::str::FromStr for WeightingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WeightingMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown weighting mode `{s}`")))
    }
}

/// Form of the FDOA reference-sensor error term in `D₁`.
///
/// `Rate` pairs the last `ρ` term with the FDOA value `ṫ`, `Delay`
/// pairs it with the TDOA value `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DdotVariant {
    #[default]
    Rate,
    Delay,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOptions {
    /// Weighting refinements per stage, 1 to 5.
    pub n_iter: usize,
    pub mode: WeightingMode,
    pub ddot: DdotVariant,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions {
            n_iter: 2,
            mode: WeightingMode::FullCovariance,
            ddot: DdotVariant::Rate,
        }
    }
}

impl EstimatorOptions {
    pub fn with_mode(mode: WeightingMode) -> Self {
        EstimatorOptions {
            mode,
            ..Default::default()
        }
    }

    /// Identity-based refinement; needs no noise model.
    pub fn structured() -> Self {
        Self::with_mode(WeightingMode::StructuredIdentity)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.n_iter) {
            return Err(Error::InvalidParameter(format!(
                "n_iter must be between 1 and 5, got {}",
                self.n_iter
            )));
        }
        Ok(())
    }
}

/// A WLS weighting matrix, stored in whichever form is cheapest.
#[derive(Debug, Clone)]
pub enum Weighting {
    Identity,
    Matrix(DMatrix<f64>),
    /// `W = A⁻¹` with `A` factored.
    InverseOf(SpdFactor),
}

impl Weighting {
    /// `(GᵀWG, GᵀWh)`.
    pub fn normal_equations(
        &self,
        g: &DMatrix<f64>,
        h: &DVector<f64>,
    ) -> (DMatrix<f64>, DVector<f64>) {
        match self {
            Weighting::Identity => (g.transpose() * g, g.transpose() * h),
            Weighting::Matrix(w) => {
                let wg = w * g;
                (g.transpose() * &wg, wg.transpose() * h)
            }
            Weighting::InverseOf(f) => {
                let gw = f.whiten(g);
                let hw = f.whiten_vec(h);
                (gw.transpose() * &gw, gw.transpose() * hw)
            }
        }
    }

    pub fn to_matrix(&self, n: usize) -> DMatrix<f64> {
        match self {
            Weighting::Identity => DMatrix::identity(n, n),
            Weighting::Matrix(w) => w.clone(),
            Weighting::InverseOf(f) => f.inverse(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WlsSolution {
    pub phi: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// `GᵀWG`
    pub normal: DMatrix<f64>,
}

pub(crate) fn wls(g: &DMatrix<f64>, h: &DVector<f64>, w: &Weighting) -> Result<WlsSolution> {
    let (normal, rhs) = w.normal_equations(g, h);
    let normal = symmetrize(&normal);
    let f = SpdFactor::new(&normal).map_err(|e| Error::RankDeficient {
        condition: e.condition(),
    })?;
    Ok(WlsSolution {
        phi: f.solve_vec(&rhs),
        cov: f.inverse(),
        normal,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub phi1: DVector<f64>,
    pub phi2: DVector<f64>,
    pub position: Vec3,
    pub velocity: Vec3,
    pub speed: f64,
    pub cov_phi1: DMatrix<f64>,
    pub cov_phi2: DMatrix<f64>,
    /// Covariance of `[u, u̇, c]`.
    pub cov_xi: DMatrix<f64>,
    pub iterations_used: usize,
    pub weighting_mode: WeightingMode,
    pub warnings: Vec<String>,
}

impl EstimateReport {
    /// `[u, u̇, c]`.
    pub fn xi(&self) -> DVector<f64> {
        DVector::from_iterator(
            7,
            self.position
                .iter()
                .chain(self.velocity.iter())
                .copied()
                .chain([self.speed]),
        )
    }
}

/// Run both stages on one set of measurements.
///
/// Only nominal sensor parameters enter. `noise` is required for
/// [`WeightingMode::FullCovariance`] and ignored otherwise.
pub fn estimate(
    meas: &MeasurementSet,
    sensors: &SensorSet,
    noise: Option<&NoiseModel>,
    opts: &EstimatorOptions,
) -> Result<EstimateReport> {
    opts.validate()?;
    stage1::check_sizes(meas, sensors)?;
    let m = sensors.len();
    if m < MIN_ESTIMATOR_SENSORS {
        return Err(Error::RankDeficient {
            condition: f64::INFINITY,
        }
        .in_stage(Stage::Stage1Solve));
    }
    let mut warnings = Vec::new();

    let sys1 = build_stage1(meas, sensors).map_err(|e| e.in_stage(Stage::Stage1Solve))?;
    let weights = |phi: Option<&DVector<f64>>| {
        stage1_weights(meas, sensors, phi, noise, opts.mode, opts.ddot)
            .map_err(|e| e.in_stage(Stage::Stage1Weights))
    };
    let mut w1 = weights(None)?;
    let mut degenerate = w1.degenerate_covariance;
    let mut phi1 = DVector::zeros(PHI1_LEN);
    for _ in 0..opts.n_iter {
        phi1 = stage1_solve(&sys1, &w1.weighting)
            .map_err(|e| e.in_stage(Stage::Stage1Solve))?
            .phi;
        if opts.mode != WeightingMode::PlainIdentity {
            w1 = weights(Some(&phi1))?;
            degenerate |= w1.degenerate_covariance;
        }
    }
    if degenerate {
        warnings.push("zero noise covariance; identity weighting used".to_string());
    }
    let final1 = stage1_solve(&sys1, &w1.weighting).map_err(|e| e.in_stage(Stage::Stage1Solve))?;
    let n1 = final1.normal;
    let cov_phi1 = final1.cov;

    let mut lin = Recovered::from_phi1(&phi1);
    let mut phi2 = DVector::zeros(PHI2_LEN);
    let mut cov_phi2 = DMatrix::zeros(PHI2_LEN, PHI2_LEN);
    for _ in 0..opts.n_iter {
        let sys2 =
            build_stage2(&phi1, sensors, Some(&lin)).map_err(|e| e.in_stage(Stage::Stage2Build))?;
        let sol = stage2_solve(&sys2, &n1).map_err(|e| e.in_stage(Stage::Stage2Solve))?;
        phi2 = sol.phi;
        cov_phi2 = sol.cov;
        lin = recover(&phi1, &phi2, sensors).map_err(|e| e.in_stage(Stage::Recover))?;
    }
    warnings.extend(lin.warnings.iter().cloned());

    let b3 = b3_matrix(&lin, sensors);
    let b3_inv_cov = lu_solve(&b3, &cov_phi2).map_err(|e| {
        Error::DegenerateGeometry(format!("B₃ is singular (condition {:e})", e.condition()))
            .in_stage(Stage::Recover)
    })?;
    let cov_xi = lu_solve(&b3, &b3_inv_cov.transpose())
        .map_err(|_| Error::DegenerateGeometry("B₃ is singular".into()).in_stage(Stage::Recover))?;

    Ok(EstimateReport {
        phi1,
        phi2,
        position: lin.position,
        velocity: lin.velocity,
        speed: lin.speed,
        cov_phi1,
        cov_phi2,
        cov_xi: symmetrize(&cov_xi),
        iterations_used: opts.n_iter,
        weighting_mode: opts.mode,
        warnings,
    })
}
