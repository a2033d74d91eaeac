//! Monte Carlo sweeps over noise levels or propagation-speed offsets.
//!
//! Every trial owns three random streams (speed draw, measurement noise,
//! sensor errors) keyed by the master seed and the trial index. Grid points
//! and weighting modes reuse the same streams, so curves are compared on
//! common random numbers. Results are collected in trial order and summed
//! pairwise, which makes the output independent of the thread count.

use std::io::Write;

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentFile, Scenario};
use crate::crlb::{crlb_report, fim, jacobians, SpeedCaseComparison};
use crate::error::{Error, Result};
use crate::estimator::{estimate, DdotVariant, EstimatorOptions, WeightingMode};
use crate::model::true_measurements;
use crate::noise::{db_to_sigma, perturb_array, stream, to_db, GaussianSampler, Purpose};

/// Value written for an exactly zero mean squared error.
pub const DB_FLOOR: f64 = -120.0;

/// Default number of trials per grid point.
pub const DEFAULT_TRIALS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    SigmaDDb,
    SigmaSDb,
    DeltaC,
}

impl Sweep {
    pub fn as_str(&self) -> &'static str {
        match self {
            Sweep::SigmaDDb => "sigma_d_db",
            Sweep::SigmaSDb => "sigma_s_db",
            Sweep::DeltaC => "delta_c",
        }
    }
}

impl std::str::FromStr for Sweep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Sweep::SigmaDDb, Sweep::SigmaSDb, Sweep::DeltaC]
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown sweep variable `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    MonteCarlo,
    /// Deterministic bounds only, both speed cases.
    BoundsOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub name: String,
    pub scenario: Scenario,
    pub kind: ExperimentKind,
    pub sweep: Sweep,
    pub grid: Vec<f64>,
    pub trials: usize,
    /// Level of `σ_d²` in dB when not swept.
    pub sigma_d_db: f64,
    /// Level of `σ_s²` in dB when not swept.
    pub sigma_s_db: f64,
    /// Center of the `delta_c` sweep, m/s.
    pub nominal_speed: f64,
    pub modes: Vec<WeightingMode>,
    pub n_iter: usize,
    pub ddot: DdotVariant,
    /// Evaluate the bound at every trial.
    pub bounds: bool,
}

fn db_grid(lo: i32, hi: i32, step: i32) -> Vec<f64> {
    (lo..=hi).step_by(step as usize).map(f64::from).collect()
}

impl Experiment {
    fn base(name: &str, sweep: Sweep, grid: Vec<f64>) -> Self {
        Experiment {
            name: name.to_string(),
            scenario: Scenario::baseline(),
            kind: ExperimentKind::MonteCarlo,
            sweep,
            grid,
            trials: DEFAULT_TRIALS,
            sigma_d_db: 0.0,
            sigma_s_db: 0.0,
            nominal_speed: 1490.0,
            modes: vec![WeightingMode::FullCovariance],
            n_iter: 2,
            ddot: DdotVariant::Rate,
            bounds: true,
        }
    }

    pub fn from_file(file: &ExperimentFile, scenario: Scenario) -> Result<Self> {
        let exp = Experiment {
            name: file.name.clone().unwrap_or_else(|| "custom".into()),
            scenario,
            kind: ExperimentKind::MonteCarlo,
            sweep: file.sweep,
            grid: file.grid.clone(),
            trials: file.trials,
            sigma_d_db: file.sigma_d_db,
            sigma_s_db: file.sigma_s_db,
            nominal_speed: file.nominal_speed,
            modes: file.modes.clone(),
            n_iter: file.n_iter,
            ddot: file.ddot,
            bounds: file.bounds,
        };
        exp.validate()?;
        Ok(exp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 && self.kind == ExperimentKind::MonteCarlo {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.grid.is_empty() || self.grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config(
                "grid must be nonempty and strictly increasing".into(),
            ));
        }
        if self.modes.is_empty() {
            return Err(Error::Config(
                "at least one weighting mode is required".into(),
            ));
        }
        self.scenario.validate()?;
        if self.kind == ExperimentKind::MonteCarlo {
            self.scenario.require_estimator_size()?;
            EstimatorOptions {
                n_iter: self.n_iter,
                mode: self.modes[0],
                ddot: self.ddot,
            }
            .validate()?;
            if self.sweep == Sweep::DeltaC
                && self.grid.iter().any(|d| !(self.nominal_speed + d > 0.0))
            {
                return Err(Error::Config(
                    "delta_c grid drives the speed nonpositive".into(),
                ));
            }
        }
        Ok(())
    }

    /// `(σ_d, σ_s)` at a grid value.
    fn sigmas(&self, x: f64) -> (f64, f64) {
        match self.sweep {
            Sweep::SigmaDDb => (db_to_sigma(x), db_to_sigma(self.sigma_s_db)),
            Sweep::SigmaSDb => (db_to_sigma(self.sigma_d_db), db_to_sigma(x)),
            Sweep::DeltaC => (db_to_sigma(self.sigma_d_db), db_to_sigma(self.sigma_s_db)),
        }
    }
}

/// Ready-made experiments, looked up by name.
pub fn figure_presets() -> Vec<Experiment> {
    let noise_grid = db_grid(-5, 20, 5);
    let fig2 = Experiment {
        kind: ExperimentKind::BoundsOnly,
        trials: 0,
        ..Experiment::base("fig2", Sweep::SigmaSDb, db_grid(-20, 20, 5))
    };
    let fig3 = Experiment::base("fig3", Sweep::SigmaDDb, noise_grid.clone());
    let fig4 = Experiment::base("fig4", Sweep::SigmaSDb, noise_grid.clone());
    let fig5 = Experiment {
        sigma_d_db: -5.0,
        sigma_s_db: 0.0,
        ..Experiment::base("fig5", Sweep::DeltaC, db_grid(-70, 70, 10))
    };
    let fig6 = Experiment {
        modes: WeightingMode::ALL.to_vec(),
        ..Experiment::base("fig6", Sweep::SigmaDDb, noise_grid)
    };
    vec![fig2, fig3, fig4, fig5, fig6]
}

pub fn preset(name: &str) -> Option<Experiment> {
    figure_presets().into_iter().find(|e| e.name == name)
}

/// Pairwise (cascade) summation in a fixed reduction order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

fn db_or_floor(mse: f64) -> f64 {
    if mse <= 0.0 {
        DB_FLOOR
    } else {
        to_db(mse).max(DB_FLOOR)
    }
}

/// `10·log₁₀(Σ‖eᵢ‖²/N)`, floored at [`DB_FLOOR`].
pub fn mse_db(errors: &[DVector<f64>]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let sq: Vec<f64> = errors.iter().map(|e| e.norm_squared()).collect();
    Ok(db_or_floor(pairwise_sum(&sq) / errors.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Series {
    MseU,
    MseUdot,
    MseC,
    CrlbU,
    CrlbUdot,
    CrlbC,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    SquareMeters,
    SquareMetersPerSecondSquared,
}

impl Series {
    pub fn unit(&self) -> Unit {
        match self {
            Series::MseU | Series::CrlbU => Unit::SquareMeters,
            _ => Unit::SquareMetersPerSecondSquared,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesResult {
    pub grid: Vec<f64>,
    pub values_db: Vec<f64>,
    pub unit: Unit,
    pub trials_failed: Vec<usize>,
}

/// Aggregates at one grid value for one weighting mode.
#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub sweep_value: f64,
    pub mode: WeightingMode,
    pub mse_u_db: f64,
    pub mse_udot_db: f64,
    pub mse_c_db: f64,
    /// NaN when bounds were not requested.
    pub crlb_u_db: f64,
    pub crlb_udot_db: f64,
    pub crlb_c_db: f64,
    pub trials: usize,
    pub failed_trials: usize,
    /// Successful trials whose report carried a warning.
    pub warned_trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub sweep: Sweep,
    pub points: Vec<PointResult>,
}

pub const SIMULATE_HEADER: &str = "sweep_value,mse_u_db,mse_udot_db,mse_c_db,crlb_u_db,crlb_udot_db,crlb_c_db,failed_trials,weighting_mode";

fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        String::new()
    }
}

impl ExperimentResult {
    pub fn series(&self, series: Series, mode: WeightingMode) -> SeriesResult {
        let pts: Vec<&PointResult> = self.points.iter().filter(|p| p.mode == mode).collect();
        SeriesResult {
            grid: pts.iter().map(|p| p.sweep_value).collect(),
            values_db: pts
                .iter()
                .map(|p| match series {
                    Series::MseU => p.mse_u_db,
                    Series::MseUdot => p.mse_udot_db,
                    Series::MseC => p.mse_c_db,
                    Series::CrlbU => p.crlb_u_db,
                    Series::CrlbUdot => p.crlb_udot_db,
                    Series::CrlbC => p.crlb_c_db,
                })
                .collect(),
            unit: series.unit(),
            trials_failed: pts.iter().map(|p| p.failed_trials).collect(),
        }
    }

    pub fn point(&self, mode: WeightingMode, x: f64) -> Option<&PointResult> {
        self.points
            .iter()
            .find(|p| p.mode == mode && p.sweep_value == x)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{SIMULATE_HEADER}")?;
        for p in &self.points {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                fmt(p.sweep_value),
                fmt(p.mse_u_db),
                fmt(p.mse_udot_db),
                fmt(p.mse_c_db),
                fmt(p.crlb_u_db),
                fmt(p.crlb_udot_db),
                fmt(p.crlb_c_db),
                p.failed_trials,
                p.mode.as_str()
            )?;
        }
        Ok(())
    }
}

struct TrialOutcome {
    /// Squared errors of position, velocity, speed.
    errors: Option<[f64; 3]>,
    warned: bool,
    bound: Option<[f64; 3]>,
}

fn run_trial(
    exp: &Experiment,
    x: f64,
    mode: WeightingMode,
    seed: u64,
    trial: u64,
) -> Result<TrialOutcome> {
    let sc = &exp.scenario;
    let c_true = match exp.sweep {
        Sweep::DeltaC => exp.nominal_speed + x,
        _ => {
            let (lo, hi) = sc.source.speed.bounds();
            if hi > lo {
                stream(seed, trial, Purpose::Speed).random_range(lo..hi)
            } else {
                lo
            }
        }
    };
    let (sd, ss) = exp.sigmas(x);
    let source = sc.source_at_speed(c_true)?;
    let array = sc.sensor_array()?;
    let noise = sc.noise_model(sd, ss, c_true)?;

    let clean = true_measurements(&source, &array)?.alpha();
    let alpha = GaussianSampler::new(clean, &noise.q_alpha)?.sample(&mut stream(
        seed,
        trial,
        Purpose::Measurement,
    ));
    let meas = crate::model::MeasurementSet::from_alpha(&alpha)?;
    let perturbed = perturb_array(
        &array,
        &noise.q_beta,
        &mut stream(seed, trial, Purpose::Sensors),
    )?;

    // the estimator is told the nominal speed, never the true one
    let est_noise = match exp.sweep {
        Sweep::DeltaC => noise.at_speed(exp.nominal_speed)?,
        _ => noise.clone(),
    };
    let opts = EstimatorOptions {
        n_iter: exp.n_iter,
        mode,
        ddot: exp.ddot,
    };
    let (errors, warned) = match estimate(&meas, perturbed.nominal(), Some(&est_noise), &opts) {
        Ok(r) => (
            Some([
                (r.position - source.position).norm_squared(),
                (r.velocity - source.velocity).norm_squared(),
                (r.speed - c_true).powi(2),
            ]),
            !r.warnings.is_empty(),
        ),
        Err(_) => (None, false),
    };
    let bound = if exp.bounds {
        let rep = crlb_report(&fim(&source, array.truth(), &noise)?)?;
        Some([
            rep.crlb_u.powi(2),
            rep.crlb_udot.powi(2),
            rep.crlb_c.powi(2),
        ])
    } else {
        None
    };
    Ok(TrialOutcome {
        errors,
        warned,
        bound,
    })
}

/// Run a Monte Carlo experiment. Estimator failures are counted per point
/// and left out of the averages; errors in data generation abort.
pub fn run_experiment(exp: &Experiment, seed: u64) -> Result<ExperimentResult> {
    exp.validate()?;
    if exp.kind == ExperimentKind::BoundsOnly {
        return Err(Error::Config(format!(
            "experiment `{}` has no Monte Carlo part; use the bounds runner",
            exp.name
        )));
    }
    let cells: Vec<(WeightingMode, f64)> = exp
        .modes
        .iter()
        .flat_map(|&m| exp.grid.iter().map(move |&x| (m, x)))
        .collect();
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| (0..exp.trials as u64).map(move |t| (c, t)))
        .collect();
    let outcomes: Vec<TrialOutcome> = jobs
        .par_iter()
        .map(|&(c, t)| run_trial(exp, cells[c].1, cells[c].0, seed, t))
        .collect::<Result<_>>()?;

    let mut points = Vec::with_capacity(cells.len());
    for (c, chunk) in outcomes.chunks(exp.trials).enumerate() {
        let (mode, x) = cells[c];
        let ok: Vec<[f64; 3]> = chunk.iter().filter_map(|o| o.errors).collect();
        let mean_db = |k: usize, vals: &[[f64; 3]]| {
            if vals.is_empty() {
                f64::NAN
            } else {
                let v: Vec<f64> = vals.iter().map(|e| e[k]).collect();
                db_or_floor(pairwise_sum(&v) / vals.len() as f64)
            }
        };
        let bounds: Vec<[f64; 3]> = chunk.iter().filter_map(|o| o.bound).collect();
        points.push(PointResult {
            sweep_value: x,
            mode,
            mse_u_db: mean_db(0, &ok),
            mse_udot_db: mean_db(1, &ok),
            mse_c_db: mean_db(2, &ok),
            crlb_u_db: mean_db(0, &bounds),
            crlb_udot_db: mean_db(1, &bounds),
            crlb_c_db: mean_db(2, &bounds),
            trials: chunk.len(),
            failed_trials: chunk.len() - ok.len(),
            warned_trials: chunk.iter().filter(|o| o.warned).count(),
        });
    }
    Ok(ExperimentResult {
        sweep: exp.sweep,
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpeedCase {
    KnownC,
    UnknownC,
}

impl SpeedCase {
    pub fn as_str(&self) -> &'static str {
        match self {
            SpeedCase::KnownC => "known_c",
            SpeedCase::UnknownC => "unknown_c",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundPoint {
    pub sweep_value: f64,
    pub case: SpeedCase,
    pub crlb_u_db: f64,
    pub crlb_udot_db: f64,
    /// Absent when the speed is known.
    pub crlb_c_db: Option<f64>,
}

pub const CRLB_HEADER: &str = "sweep_var,crlb_u_db,crlb_udot_db,crlb_c_db,case";

/// Known- and unknown-speed bounds along the sweep, at the midpoint of the
/// scenario's speed range.
pub fn run_bounds(exp: &Experiment) -> Result<Vec<BoundPoint>> {
    exp.validate()?;
    if exp.sweep == Sweep::DeltaC {
        return Err(Error::Config(
            "bounds are swept over noise levels only".into(),
        ));
    }
    let sc = &exp.scenario;
    let c = sc.source.speed.nominal();
    let source = sc.source_at_speed(c)?;
    let array = sc.sensor_array()?;
    let jac = jacobians(&source, array.truth())?;
    let mut out = Vec::with_capacity(2 * exp.grid.len());
    for &x in &exp.grid {
        let (sd, ss) = exp.sigmas(x);
        let noise = sc.noise_model(sd, ss, c)?;
        let rep = crlb_report(&crate::crlb::fim_from_jacobians(&jac, &noise)?)?;
        let known = crate::crlb::crlb_theta_known_c(&jac, &noise)?;
        let [ku, kv] = SpeedCaseComparison::mse_db(&known);
        let [uu, uv, uc] = rep.mse_db();
        out.push(BoundPoint {
            sweep_value: x,
            case: SpeedCase::KnownC,
            crlb_u_db: ku,
            crlb_udot_db: kv,
            crlb_c_db: None,
        });
        out.push(BoundPoint {
            sweep_value: x,
            case: SpeedCase::UnknownC,
            crlb_u_db: uu,
            crlb_udot_db: uv,
            crlb_c_db: Some(uc),
        });
    }
    Ok(out)
}

pub fn write_bounds_csv<W: Write>(points: &[BoundPoint], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{CRLB_HEADER}")?;
    for p in points {
        writeln!(
            w,
            "{},{},{},{},{}",
            fmt(p.sweep_value),
            fmt(p.crlb_u_db),
            fmt(p.crlb_udot_db),
            p.crlb_c_db.map(fmt).unwrap_or_default(),
            p.case.as_str()
        )?;
    }
    Ok(())
}
