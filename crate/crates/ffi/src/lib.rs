//! C interface to `uwloc`.
//!
//! Every function returns a [`UwlocStatus`]. On failure a description is
//! kept per thread and can be read with [`uwloc_last_error_message`].
//! Scenarios are opaque handles released with [`uwloc_scenario_free`].
//! Array arguments are caller-owned and must hold the documented number of
//! elements.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use nalgebra::DVector;
use uwloc::config::Scenario;
use uwloc::crlb::{crlb_report, fim_from_jacobians, jacobians, SpeedCaseComparison};
use uwloc::estimator::{estimate, EstimatorOptions, WeightingMode};
use uwloc::model::{true_measurements, MeasurementSet, SensorSet, Vec3};
use uwloc::noise::NoiseModel;
use uwloc::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UwlocStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numerical = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UwlocWeighting {
    FullCovariance = 0,
    StructuredIdentity = 1,
    PlainIdentity = 2,
}

impl From<UwlocWeighting> for WeightingMode {
    fn from(w: UwlocWeighting) -> Self {
        match w {
            UwlocWeighting::FullCovariance => WeightingMode::FullCovariance,
            UwlocWeighting::StructuredIdentity => WeightingMode::StructuredIdentity,
            UwlocWeighting::PlainIdentity => WeightingMode::PlainIdentity,
        }
    }
}

/// Opaque scenario handle.
pub struct UwlocScenario {
    inner: Scenario,
}

/// Inputs of [`uwloc_estimate`].
///
/// `tdoa`, `fdoa` hold `sensor_count - 1` values each, with sensor 0 as
/// reference. `sensor_positions`, `sensor_velocities` hold `3 * sensor_count`
/// values, xyz per sensor. Noise fields are read only in full-covariance
/// mode; `b` may be null for unit weights, otherwise it holds
/// `sensor_count` values.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct UwlocEstimateInput {
    pub sensor_count: usize,
    pub tdoa: *const f64,
    pub fdoa: *const f64,
    pub sensor_positions: *const f64,
    pub sensor_velocities: *const f64,
    pub mode: UwlocWeighting,
    pub n_iter: u32,
    pub sigma_d: f64,
    pub sigma_s: f64,
    pub b: *const f64,
    /// Speed used to scale the measurement covariance, m/s.
    pub speed_hint: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct UwlocEstimate {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub speed: f64,
    /// Row-major covariance of `[position, velocity, speed]`.
    pub covariance: [f64; 49],
    pub iterations_used: u32,
    pub warning_count: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct UwlocBound {
    /// Unknown-speed bounds on the mean squared errors (m², m²/s², m²/s²).
    pub crlb_position: f64,
    pub crlb_velocity: f64,
    pub crlb_speed: f64,
    /// Known-speed bounds on the mean squared errors.
    pub known_position: f64,
    pub known_velocity: f64,
    pub position_gap_db: f64,
    pub velocity_gap_db: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn classify(e: &Error) -> UwlocStatus {
    match e.root() {
        Error::Config(_) => UwlocStatus::Config,
        Error::InvalidParameter(_) | Error::DimensionMismatch(_) => UwlocStatus::InvalidArgument,
        _ => UwlocStatus::Numerical,
    }
}

struct Fail(UwlocStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(classify(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(UwlocStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> UwlocStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            UwlocStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            UwlocStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn handle<'a>(h: *const UwlocScenario) -> Result<&'a Scenario, Fail> {
    h.as_ref().map(|s| &s.inner).ok_or_else(|| null("scenario"))
}

fn vec3s(v: &[f64]) -> Vec<Vec3> {
    v.chunks_exact(3).map(Vec3::from_column_slice).collect()
}

fn boxed(sc: Scenario, out: *mut *mut UwlocScenario) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    unsafe { *out = Box::into_raw(Box::new(UwlocScenario { inner: sc })) };
    Ok(())
}

/// Built-in ten-sensor scenario.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn uwloc_scenario_default(out: *mut *mut UwlocScenario) -> UwlocStatus {
    guard(|| boxed(Scenario::baseline(), out))
}

/// Load a scenario file; `"default"` selects the built-in one.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn uwloc_scenario_from_file(
    path: *const c_char,
    out: *mut *mut UwlocScenario,
) -> UwlocStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail(UwlocStatus::InvalidArgument, "path is not UTF-8".into()))?;
        boxed(Scenario::load(Path::new(path))?, out)
    })
}

/// Release a scenario. Null is ignored.
///
/// # Safety
/// `scenario` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn uwloc_scenario_free(scenario: *mut UwlocScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// # Safety
/// `scenario` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn uwloc_scenario_sensor_count(
    scenario: *const UwlocScenario,
    out: *mut usize,
) -> UwlocStatus {
    guard(|| {
        let sc = handle(scenario)?;
        *out.as_mut().ok_or_else(|| null("out"))? = sc.sensor_count();
        Ok(())
    })
}

/// Noise-free TDOA/FDOA of the scenario at speed `c`, reference sensor 0.
/// `tdoa` and `fdoa` must each hold `len = sensor_count - 1` values.
///
/// # Safety
/// Pointers must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn uwloc_scenario_measurements(
    scenario: *const UwlocScenario,
    c: f64,
    tdoa: *mut f64,
    fdoa: *mut f64,
    len: usize,
) -> UwlocStatus {
    guard(|| {
        let sc = handle(scenario)?;
        if tdoa.is_null() || fdoa.is_null() {
            return Err(null("output array"));
        }
        if len + 1 != sc.sensor_count() {
            return Err(Fail(
                UwlocStatus::InvalidArgument,
                format!("len is {len}, expected {}", sc.sensor_count() - 1),
            ));
        }
        let meas = true_measurements(&sc.source_at_speed(c)?, &sc.sensor_array()?)?;
        std::slice::from_raw_parts_mut(tdoa, len).copy_from_slice(meas.tdoa.as_slice());
        std::slice::from_raw_parts_mut(fdoa, len).copy_from_slice(meas.fdoa.as_slice());
        Ok(())
    })
}

/// Nominal sensor positions and velocities of the scenario, xyz per sensor.
/// Both arrays must hold `3 * sensor_count` values.
///
/// # Safety
/// Pointers must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn uwloc_scenario_sensors(
    scenario: *const UwlocScenario,
    positions: *mut f64,
    velocities: *mut f64,
    len: usize,
) -> UwlocStatus {
    guard(|| {
        let sc = handle(scenario)?;
        if positions.is_null() || velocities.is_null() {
            return Err(null("output array"));
        }
        if len != 3 * sc.sensor_count() {
            return Err(Fail(
                UwlocStatus::InvalidArgument,
                format!("len is {len}, expected {}", 3 * sc.sensor_count()),
            ));
        }
        let p = std::slice::from_raw_parts_mut(positions, len);
        let v = std::slice::from_raw_parts_mut(velocities, len);
        for (k, s) in sc.sensors.iter().enumerate() {
            p[3 * k..3 * k + 3].copy_from_slice(&s.position);
            v[3 * k..3 * k + 3].copy_from_slice(&s.velocity);
        }
        Ok(())
    })
}

/// Unknown- and known-speed bounds of the scenario at speed `c`.
///
/// # Safety
/// `scenario` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn uwloc_scenario_crlb(
    scenario: *const UwlocScenario,
    c: f64,
    sigma_d: f64,
    sigma_s: f64,
    out: *mut UwlocBound,
) -> UwlocStatus {
    guard(|| {
        let sc = handle(scenario)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let source = sc.source_at_speed(c)?;
        let array = sc.sensor_array()?;
        let noise = sc.noise_model(sigma_d, sigma_s, c)?;
        let jac = jacobians(&source, array.truth())?;
        let rep = crlb_report(&fim_from_jacobians(&jac, &noise)?)?;
        let cmp = SpeedCaseComparison::evaluate(&source, array.truth(), &noise)?;
        let trace =
            |m: &nalgebra::DMatrix<f64>, k: usize| (k..k + 3).map(|i| m[(i, i)]).sum::<f64>();
        *out = UwlocBound {
            crlb_position: trace(&cmp.unknown_c, 0),
            crlb_velocity: trace(&cmp.unknown_c, 3),
            crlb_speed: rep.full[(6, 6)],
            known_position: trace(&cmp.known_c, 0),
            known_velocity: trace(&cmp.known_c, 3),
            position_gap_db: cmp.position_gap_db(),
            velocity_gap_db: cmp.velocity_gap_db(),
        };
        Ok(())
    })
}

/// Run the two-stage estimator.
///
/// # Safety
/// `input` must be valid and its arrays sized as documented on
/// [`UwlocEstimateInput`]; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn uwloc_estimate(
    input: *const UwlocEstimateInput,
    out: *mut UwlocEstimate,
) -> UwlocStatus {
    guard(|| {
        let inp = input.as_ref().ok_or_else(|| null("input"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let m = inp.sensor_count;
        if m < 2 {
            return Err(Fail(
                UwlocStatus::InvalidArgument,
                "sensor_count must be at least 2".into(),
            ));
        }
        let meas = MeasurementSet::new(
            DVector::from_column_slice(slice(inp.tdoa, m - 1, "tdoa")?),
            DVector::from_column_slice(slice(inp.fdoa, m - 1, "fdoa")?),
        )?;
        let sensors = SensorSet::new(
            vec3s(slice(inp.sensor_positions, 3 * m, "sensor_positions")?),
            vec3s(slice(inp.sensor_velocities, 3 * m, "sensor_velocities")?),
        )?;
        let mode = WeightingMode::from(inp.mode);
        let noise = if mode == WeightingMode::FullCovariance {
            let b = if inp.b.is_null() {
                vec![1.0; m]
            } else {
                slice(inp.b, m, "b")?.to_vec()
            };
            Some(NoiseModel::standard(
                &b,
                inp.sigma_d,
                inp.sigma_s,
                inp.speed_hint,
            )?)
        } else {
            None
        };
        let opts = EstimatorOptions {
            n_iter: inp.n_iter as usize,
            mode,
            ..EstimatorOptions::default()
        };
        let rep = estimate(&meas, &sensors, noise.as_ref(), &opts)?;
        let mut covariance = [0.0; 49];
        for i in 0..7 {
            for j in 0..7 {
                covariance[7 * i + j] = rep.cov_xi[(i, j)];
            }
        }
        *out = UwlocEstimate {
            position: rep.position.into(),
            velocity: rep.velocity.into(),
            speed: rep.speed,
            covariance,
            iterations_used: rep.iterations_used as u32,
            warning_count: rep.warnings.len() as u32,
        };
        Ok(())
    })
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn uwloc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn uwloc_status_string(status: UwlocStatus) -> *const c_char {
    let s: &'static CStr = match status {
        UwlocStatus::Ok => c"ok",
        UwlocStatus::NullPointer => c"null pointer argument",
        UwlocStatus::InvalidArgument => c"invalid argument",
        UwlocStatus::Config => c"configuration error",
        UwlocStatus::Numerical => c"numerical failure",
        UwlocStatus::Panic => c"internal error",
    };
    s.as_ptr()
}

/// Library version, NUL-terminated.
#[no_mangle]
pub extern "C" fn uwloc_version() -> *const c_char {
    static V: &CStr =
        match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
            Ok(v) => v,
            Err(_) => c"",
        };
    V.as_ptr()
}
