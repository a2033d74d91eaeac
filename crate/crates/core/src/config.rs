//! TOML files: scenarios, measurement sets, estimate reports and experiment
//! definitions. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{DdotVariant, EstimateReport, WeightingMode, MIN_ESTIMATOR_SENSORS};
use crate::harness::Sweep;
use crate::model::{MeasurementSet, SensorArray, SensorSet, SourceState, Vec3, MIN_SENSORS};
use crate::noise::{db_to_sigma, NoiseModel, BASELINE_B};

/// Source position of the reference deployment, meters.
pub const BASELINE_SOURCE_POSITION: [f64; 3] = [200.0, 800.0, 200.0];
/// Source velocity of the reference deployment, m/s.
pub const BASELINE_SOURCE_VELOCITY: [f64; 3] = [-2.0, 1.5, 1.0];
/// Range of propagation speeds drawn per trial, m/s.
pub const BASELINE_SPEED_RANGE: [f64; 2] = [1400.0, 1600.0];

/// Sensor positions (m) and velocities (m/s) of the reference deployment.
pub const BASELINE_SENSORS: [([f64; 3], [f64; 3]); 10] = [
    ([0.0, 1000.0, 0.0], [3.0, -2.0, 2.0]),
    ([0.0, 0.0, 0.0], [-3.0, 1.0, 2.0]),
    ([0.0, 0.0, 1000.0], [1.0, -2.0, 1.0]),
    ([0.0, 1000.0, 1000.0], [1.0, 2.0, 3.0]),
    ([1000.0, 0.0, 0.0], [-2.0, 1.0, 1.0]),
    ([1000.0, 1000.0, 0.0], [2.0, -1.0, 1.0]),
    ([1000.0, 0.0, 1000.0], [1.2, -1.5, 1.5]),
    ([1000.0, 1000.0, 1000.0], [-1.5, 1.2, -1.2]),
    ([500.0, 500.0, 1000.0], [1.3, 1.3, 1.3]),
    ([500.0, 500.0, 0.0], [2.5, 2.5, 2.5]),
];

fn parse<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config(format!("{what}: {e}")))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Config(format!("serialization failed: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpeedSpec {
    Fixed(f64),
    Range([f64; 2]),
}

impl SpeedSpec {
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            SpeedSpec::Fixed(c) => (c, c),
            SpeedSpec::Range([lo, hi]) => (lo, hi),
        }
    }

    /// Midpoint, used where a single speed is needed.
    pub fn nominal(&self) -> f64 {
        let (lo, hi) = self.bounds();
        0.5 * (lo + hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub speed: SpeedSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
}

fn sensor_set(specs: &[SensorSpec]) -> Result<SensorSet> {
    SensorSet::new(
        specs.iter().map(|s| Vec3::from(s.position)).collect(),
        specs.iter().map(|s| Vec3::from(s.velocity)).collect(),
    )
}

fn sensor_specs(set: &SensorSet) -> Vec<SensorSpec> {
    set.positions
        .iter()
        .zip(&set.velocities)
        .map(|(p, v)| SensorSpec {
            position: [p[0], p[1], p[2]],
            velocity: [v[0], v[1], v[2]],
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// `10·log₁₀ σ_d²`
    #[serde(default)]
    pub sigma_d_db: f64,
    /// `10·log₁₀ σ_s²`
    #[serde(default)]
    pub sigma_s_db: f64,
    /// Per-sensor weights of the sensor covariance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            sigma_d_db: 0.0,
            sigma_s_db: 0.0,
            b: None,
            seed: 0,
        }
    }
}

/// Source, sensors and noise levels of one deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub source: SourceSpec,
    pub sensors: Vec<SensorSpec>,
    #[serde(default)]
    pub noise: NoiseSpec,
}

impl Scenario {
    /// The ten-sensor reference deployment.
    pub fn baseline() -> Self {
        Scenario {
            source: SourceSpec {
                position: BASELINE_SOURCE_POSITION,
                velocity: BASELINE_SOURCE_VELOCITY,
                speed: SpeedSpec::Range(BASELINE_SPEED_RANGE),
            },
            sensors: BASELINE_SENSORS
                .iter()
                .map(|(p, v)| SensorSpec {
                    position: *p,
                    velocity: *v,
                })
                .collect(),
            noise: NoiseSpec {
                b: Some(BASELINE_B.to_vec()),
                ..NoiseSpec::default()
            },
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let sc: Scenario = parse(text, "scenario")?;
        sc.validate()?;
        Ok(sc)
    }

    /// `default` selects [`Scenario::baseline`].
    pub fn load(path: &Path) -> Result<Self> {
        if path == Path::new("default") {
            return Ok(Scenario::baseline());
        }
        Scenario::from_toml_str(&read(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        to_toml(self)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write(path, &self.to_toml_string()?)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.source.speed.bounds();
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Config(format!(
                "source.speed must be positive with lower <= upper, got [{lo}, {hi}]"
            )));
        }
        if let Some(b) = &self.noise.b {
            if b.len() != self.sensors.len() {
                return Err(Error::Config(format!(
                    "noise.b has {} entries for {} sensors",
                    b.len(),
                    self.sensors.len()
                )));
            }
        }
        if self.sensors.len() < MIN_SENSORS {
            return Err(Error::Config(format!(
                "scenario has {} sensors; bounds need at least {MIN_SENSORS} and the estimator at least \
                 {MIN_ESTIMATOR_SENSORS}",
                self.sensors.len()
            )));
        }
        self.sensor_array()
            .map_err(|e| Error::Config(format!("sensors: {e}")))?;
        self.source_at_speed(lo)
            .map_err(|e| Error::Config(format!("source: {e}")))?;
        Ok(())
    }

    /// Errors unless the array is large enough for the estimator.
    pub fn require_estimator_size(&self) -> Result<()> {
        if self.sensors.len() < MIN_ESTIMATOR_SENSORS {
            return Err(Error::Config(format!(
                "the estimator needs at least {MIN_ESTIMATOR_SENSORS} sensors (nine stage-one unknowns \
                 against 2(M-1) equations), scenario has {}",
                self.sensors.len()
            )));
        }
        Ok(())
    }

    pub fn source_at_speed(&self, c: f64) -> Result<SourceState> {
        SourceState::new(
            Vec3::from(self.source.position),
            Vec3::from(self.source.velocity),
            c,
        )
    }

    pub fn sensor_count(&self) -> usize {
        self.sensors.len()
    }

    pub fn sensor_set(&self) -> Result<SensorSet> {
        sensor_set(&self.sensors)
    }

    /// Array with nominal parameters equal to the truth.
    pub fn sensor_array(&self) -> Result<SensorArray> {
        SensorArray::exact(self.sensor_set()?)
    }

    /// `noise.b`, or unit weights when absent.
    pub fn b(&self) -> Vec<f64> {
        self.noise
            .b
            .clone()
            .unwrap_or_else(|| vec![1.0; self.sensors.len()])
    }

    pub fn noise_model(&self, sigma_d: f64, sigma_s: f64, c: f64) -> Result<NoiseModel> {
        NoiseModel::standard(&self.b(), sigma_d, sigma_s, c)
    }

    /// Noise model at the levels in the `noise` block.
    pub fn configured_noise(&self, c: f64) -> Result<NoiseModel> {
        self.noise_model(
            db_to_sigma(self.noise.sigma_d_db),
            db_to_sigma(self.noise.sigma_s_db),
            c,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NominalSensors {
    pub nominal: Vec<SensorSpec>,
}

fn default_speed_hint() -> f64 {
    1500.0
}

/// Noise description attached to a measurement file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementNoise {
    pub sigma_d_db: f64,
    pub sigma_s_db: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    /// Speed used to scale the measurement covariance.
    #[serde(default = "default_speed_hint")]
    pub speed_hint: f64,
}

/// One set of TDOA/FDOA measurements and the nominal sensor parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementFile {
    pub tdoa: Vec<f64>,
    pub fdoa: Vec<f64>,
    pub sensors: NominalSensors,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<MeasurementNoise>,
}

impl MeasurementFile {
    pub fn new(
        meas: &MeasurementSet,
        nominal: &SensorSet,
        noise: Option<MeasurementNoise>,
    ) -> Self {
        MeasurementFile {
            tdoa: meas.tdoa.iter().copied().collect(),
            fdoa: meas.fdoa.iter().copied().collect(),
            sensors: NominalSensors {
                nominal: sensor_specs(nominal),
            },
            noise,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let f: MeasurementFile = parse(text, "measurement file")?;
        if f.tdoa.len() + 1 != f.sensors.nominal.len() || f.fdoa.len() != f.tdoa.len() {
            return Err(Error::Config(format!(
                "measurement file has {} tdoa and {} fdoa entries for {} sensors",
                f.tdoa.len(),
                f.fdoa.len(),
                f.sensors.nominal.len()
            )));
        }
        if f.sensors.nominal.len() < MIN_ESTIMATOR_SENSORS {
            return Err(Error::Config(format!(
                "the estimator needs at least {MIN_ESTIMATOR_SENSORS} sensors, file has {}",
                f.sensors.nominal.len()
            )));
        }
        Ok(f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        MeasurementFile::from_toml_str(&read(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        to_toml(self)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write(path, &self.to_toml_string()?)
    }

    pub fn measurements(&self) -> Result<MeasurementSet> {
        MeasurementSet::new(
            DVector::from_vec(self.tdoa.clone()),
            DVector::from_vec(self.fdoa.clone()),
        )
    }

    pub fn nominal(&self) -> Result<SensorSet> {
        sensor_set(&self.sensors.nominal)
    }

    pub fn noise_model(&self) -> Result<Option<NoiseModel>> {
        let Some(n) = &self.noise else {
            return Ok(None);
        };
        let m = self.sensors.nominal.len();
        let b = n.b.clone().unwrap_or_else(|| vec![1.0; m]);
        if b.len() != m {
            return Err(Error::Config(format!(
                "noise.b has {} entries for {m} sensors",
                b.len()
            )));
        }
        NoiseModel::standard(
            &b,
            db_to_sigma(n.sigma_d_db),
            db_to_sigma(n.sigma_s_db),
            n.speed_hint,
        )
        .map(Some)
    }
}

/// Estimate written by the `estimate` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub speed: f64,
    pub weighting_mode: WeightingMode,
    pub iterations_used: usize,
    pub phi1: Vec<f64>,
    pub phi2: Vec<f64>,
    /// Row-major covariance of `[u, u̇, c]`.
    pub covariance: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl ReportFile {
    pub fn from_report(r: &EstimateReport) -> Self {
        ReportFile {
            position: [r.position[0], r.position[1], r.position[2]],
            velocity: [r.velocity[0], r.velocity[1], r.velocity[2]],
            speed: r.speed,
            weighting_mode: r.weighting_mode,
            iterations_used: r.iterations_used,
            phi1: r.phi1.iter().copied().collect(),
            phi2: r.phi2.iter().copied().collect(),
            covariance: rows(&r.cov_xi),
            warnings: r.warnings.clone(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        parse(text, "report")
    }

    pub fn to_toml_string(&self) -> Result<String> {
        to_toml(self)
    }
}

fn default_trials() -> usize {
    1000
}
fn default_n_iter() -> usize {
    2
}
fn default_modes() -> Vec<WeightingMode> {
    vec![WeightingMode::FullCovariance]
}
fn default_nominal_speed() -> f64 {
    1490.0
}
fn default_true() -> bool {
    true
}

/// User-defined Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    #[serde(default)]
    pub name: Option<String>,
    /// Scenario path, relative to the experiment file; the reference
    /// deployment when absent.
    #[serde(default)]
    pub scenario: Option<PathBuf>,
    pub sweep: Sweep,
    pub grid: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Fixed level of whichever noise is not swept.
    #[serde(default)]
    pub sigma_d_db: f64,
    #[serde(default)]
    pub sigma_s_db: f64,
    /// Speed the `delta_c` sweep is centered on.
    #[serde(default = "default_nominal_speed")]
    pub nominal_speed: f64,
    #[serde(default = "default_modes")]
    pub modes: Vec<WeightingMode>,
    #[serde(default = "default_n_iter")]
    pub n_iter: usize,
    #[serde(default)]
    pub ddot: DdotVariant,
    /// Also evaluate the bound at every trial.
    #[serde(default = "default_true")]
    pub bounds: bool,
}

impl ExperimentFile {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        parse(text, "experiment")
    }

    pub fn load(path: &Path) -> Result<(Self, Scenario)> {
        let exp = ExperimentFile::from_toml_str(&read(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let scenario = match &exp.scenario {
            None => Scenario::baseline(),
            Some(p) if p == Path::new("default") => Scenario::baseline(),
            Some(p) => {
                let base = path.parent().unwrap_or(Path::new("."));
                Scenario::load(&base.join(p))?
            }
        };
        Ok((exp, scenario))
    }
}
