//! Second stage: refine `φ₂ = [(u − s₁)⊙(u − s₁), (u − s₁)⊙(u̇ − ṡ₁), c²]`
//! from the first-stage estimate, then undo the squaring.

use nalgebra::{DMatrix, DVector};

use super::{wls, Weighting, WlsSolution};
use crate::error::{Error, Result};
use crate::linalg::lu_solve;
use crate::model::{range, range_rate, SensorSet, Vec3};

pub const PHI2_LEN: usize = 7;

/// Relative floor on `|φ₁(k) − s₁(k)|` below which `B₂` is treated as
/// singular.
pub const OFFSET_FLOOR: f64 = 1e-6;

/// Relative size above which a negative squared quantity is flagged.
pub const CLAMP_WARN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2System {
    pub h2: DVector<f64>,
    pub g2: DMatrix<f64>,
    pub b2: DMatrix<f64>,
}

/// A source estimate in physical units, used as linearization point.
#[derive(Debug, Clone, PartialEq)]
pub struct Recovered {
    pub position: Vec3,
    pub velocity: Vec3,
    pub speed: f64,
    pub warnings: Vec<String>,
}

impl Recovered {
    /// Values read directly from `φ₁`, speed `√|φ₁(8)|`.
    pub fn from_phi1(phi1: &DVector<f64>) -> Self {
        Recovered {
            position: Vec3::new(phi1[0], phi1[1], phi1[2]),
            velocity: Vec3::new(phi1[3], phi1[4], phi1[5]),
            speed: phi1[7].abs().sqrt(),
            warnings: Vec::new(),
        }
    }
}

fn offsets_ok(e: &Vec3) -> Result<()> {
    let floor = OFFSET_FLOOR * e.norm();
    if e.iter().any(|v| v.abs() < floor) || e.norm() == 0.0 {
        return Err(Error::DegenerateGeometry(format!(
            "source offset from the reference sensor [{:.3e}, {:.3e}, {:.3e}] has a vanishing component",
            e[0], e[1], e[2]
        )));
    }
    Ok(())
}

/// `B₂` at a linearization point.
pub fn b2_matrix(lin: &Recovered, sensors: &SensorSet) -> Result<DMatrix<f64>> {
    let (s1, sd1) = (&sensors.positions[0], &sensors.velocities[0]);
    let e = lin.position - s1;
    let f = lin.velocity - sd1;
    let c = lin.speed;
    let r1 = range(&lin.position, s1);
    let rd1 = range_rate(&lin.position, &lin.velocity, s1, sd1)?;
    let mut b2 = DMatrix::zeros(9, 9);
    for k in 0..3 {
        b2[(k, k)] = 2.0 * e[k];
        b2[(3 + k, k)] = f[k];
        b2[(3 + k, 3 + k)] = e[k];
    }
    b2[(6, 6)] = 2.0 * c * r1;
    b2[(7, 6)] = c * rd1;
    b2[(7, 8)] = c * r1;
    b2[(8, 7)] = 1.0;
    Ok(b2)
}

/// `B₃`, the differential of `φ₂` with respect to `[u, u̇, c]`.
pub fn b3_matrix(est: &Recovered, sensors: &SensorSet) -> DMatrix<f64> {
    let e = est.position - sensors.positions[0];
    let f = est.velocity - sensors.velocities[0];
    let mut b3 = DMatrix::zeros(7, 7);
    for k in 0..3 {
        b3[(k, k)] = 2.0 * e[k];
        b3[(3 + k, k)] = f[k];
        b3[(3 + k, 3 + k)] = e[k];
    }
    b3[(6, 6)] = 2.0 * est.speed;
    b3
}

/// `h₂`, `G₂` from `φ₁`, and `B₂` at `lin` (defaults to the values in `φ₁`).
pub fn build_stage2(
    phi1: &DVector<f64>,
    sensors: &SensorSet,
    lin: Option<&Recovered>,
) -> Result<Stage2System> {
    if phi1.len() != super::PHI1_LEN {
        return Err(Error::DimensionMismatch(format!(
            "stage-one estimate has {} entries",
            phi1.len()
        )));
    }
    if !(phi1[7] > 0.0) {
        return Err(Error::NonPositiveSpeedSquare(phi1[7]));
    }
    let e = Vec3::new(phi1[0], phi1[1], phi1[2]) - sensors.positions[0];
    let f = Vec3::new(phi1[3], phi1[4], phi1[5]) - sensors.velocities[0];
    offsets_ok(&e)?;

    let mut h2 = DVector::zeros(9);
    let mut g2 = DMatrix::zeros(9, PHI2_LEN);
    for k in 0..3 {
        h2[k] = e[k] * e[k];
        h2[3 + k] = e[k] * f[k];
        g2[(k, k)] = 1.0;
        g2[(3 + k, 3 + k)] = 1.0;
        g2[(6, k)] = phi1[7];
        g2[(7, 3 + k)] = phi1[7];
    }
    h2[6] = phi1[6] * phi1[6];
    h2[7] = phi1[6] * phi1[8];
    h2[8] = phi1[7];
    g2[(8, 6)] = 1.0;

    let from_phi;
    let lin = match lin {
        Some(l) => l,
        None => {
            from_phi = Recovered::from_phi1(phi1);
            &from_phi
        }
    };
    offsets_ok(&(lin.position - sensors.positions[0]))?;
    Ok(Stage2System {
        h2,
        g2,
        b2: b2_matrix(lin, sensors)?,
    })
}

/// Solve with `W₂ = B₂⁻ᵀ N₁ B₂⁻¹`, `N₁ = G₁ᵀW₁G₁`.
pub fn stage2_solve(sys: &Stage2System, n1: &DMatrix<f64>) -> Result<WlsSolution> {
    let mut rhs = DMatrix::zeros(9, PHI2_LEN + 1);
    rhs.columns_mut(0, PHI2_LEN).copy_from(&sys.g2);
    rhs.column_mut(PHI2_LEN).copy_from(&sys.h2);
    let x = lu_solve(&sys.b2, &rhs).map_err(|e| {
        Error::DegenerateGeometry(format!(
            "stage-two noise map is singular (condition {:e})",
            e.condition()
        ))
    })?;
    let g = x.columns(0, PHI2_LEN).into_owned();
    let h = x.column(PHI2_LEN).into_owned();
    wls(&g, &h, &Weighting::Matrix(n1.clone()))
}

/// Undo the squaring in `φ₂`, resolving signs from `φ₁`.
pub fn recover(phi1: &DVector<f64>, phi2: &DVector<f64>, sensors: &SensorSet) -> Result<Recovered> {
    let s1 = sensors.positions[0];
    let sd1 = sensors.velocities[0];
    let scale = phi2.norm();
    let mut warnings = Vec::new();

    let mut position = Vec3::zeros();
    for k in 0..3 {
        let v = phi2[k];
        if v < 0.0 && -v > CLAMP_WARN * scale {
            warnings.push(format!(
                "squared offset {k} is negative ({v:.3e}); magnitude used"
            ));
        }
        let sign = if phi1[k] - s1[k] < 0.0 { -1.0 } else { 1.0 };
        position[k] = sign * v.abs().sqrt() + s1[k];
    }
    let e = position - s1;
    if e.iter().any(|v| *v == 0.0) {
        return Err(Error::DegenerateGeometry(
            "recovered position shares a coordinate with the reference sensor".into(),
        ));
    }
    let velocity = Vec3::new(phi2[3] / e[0], phi2[4] / e[1], phi2[5] / e[2]) + sd1;

    let c2 = phi2[6];
    if c2 == 0.0 || (c2 < 0.0 && -c2 > CLAMP_WARN * scale) {
        return Err(Error::NonPositiveSpeedSquare(c2));
    }
    if c2 < 0.0 {
        warnings.push(format!(
            "squared speed is negative ({c2:.3e}); magnitude used"
        ));
    }
    Ok(Recovered {
        position,
        velocity,
        speed: c2.abs().sqrt(),
        warnings,
    })
}

/// `φ₂` implied by a source state.
pub fn phi2_at(u: &Vec3, ud: &Vec3, c: f64, sensors: &SensorSet) -> DVector<f64> {
    let e = u - sensors.positions[0];
    let f = ud - sensors.velocities[0];
    DVector::from_vec(vec![
        e[0] * e[0],
        e[1] * e[1],
        e[2] * e[2],
        e[0] * f[0],
        e[1] * f[1],
        e[2] * f[2],
        c * c,
    ])
}
