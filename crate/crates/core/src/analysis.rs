//! Small-noise efficiency diagnostics for the two-stage estimator.
//!
//! To first order the estimation error of `ξ = [u, u̇, c]` is driven by `G₃`
//! (sensitivity of the stage-one residual to `ξ`) and `G₄` (sensitivity to
//! sensor-parameter errors). When `G₃ ≈ ∂α/∂ξ` and `G₄ ≈ −∂α/∂β` the
//! estimator covariance coincides with the bound. This module builds both
//! matrices in closed form and through the stage matrices, and measures how
//! far the resulting inverse covariance is from the inverse bound.

use nalgebra::{DMatrix, DVector};

use crate::crlb::jacobians;
use crate::error::{Error, Result};
use crate::estimator::{
    b1_d1, b2_matrix, b3_matrix, build_stage1, build_stage2, phi1_at, stage1_solve, stage1_weights,
    DdotVariant, Recovered, WeightingMode,
};
use crate::linalg::{lu_solve, relative_frobenius, symmetrize, LinalgError, SpdFactor};
use crate::model::{
    range, range_rate, true_measurements, MeasurementSet, SensorArray, SourceState,
};
use crate::noise::NoiseModel;

/// Thresholds of the three small-quantity conditions.
pub const REFERENCE_RATIO: f64 = 0.5;
pub const RATE_RATIO: f64 = 0.01;
pub const TDOA_RATIO: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConditionFlags {
    /// Reference sensor much closer than all others: `r₁ < 0.5·min rᵢ`.
    pub near_reference: bool,
    /// `max |ṙᵢ/rᵢ| < 0.01 s⁻¹`.
    pub slow_motion: bool,
    /// `max |tᵢ₁/rᵢ| < 0.01 s/m`.
    pub small_tdoa: bool,
}

impl ConditionFlags {
    pub fn all(&self) -> bool {
        self.near_reference && self.slow_motion && self.small_tdoa
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockDeviation {
    pub name: &'static str,
    /// `‖A − B‖_F / ‖B‖_F` over the block.
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyCheck {
    pub g3: DMatrix<f64>,
    pub g4: DMatrix<f64>,
    pub b3: DMatrix<f64>,
    pub cov_xi_inv: DMatrix<f64>,
    pub crlb_xi_inv: DMatrix<f64>,
    pub condition_flags: ConditionFlags,
    pub max_rel_gap: f64,
    pub g3_blocks: Vec<BlockDeviation>,
    pub g4_blocks: Vec<BlockDeviation>,
}

impl EfficiencyCheck {
    pub fn max_block_deviation(&self) -> f64 {
        self.g3_blocks
            .iter()
            .chain(&self.g4_blocks)
            .map(|b| b.deviation)
            .fold(0.0, f64::max)
    }
}

/// Closed-form `G₃` (`2(M−1) × 7`) and `G₄` (`2(M−1) × 6M`) at `source`,
/// with `φ₁(8)` taken from `phi1` and TDOA/FDOA values from `meas`.
pub fn build_g3_g4(
    source: &SourceState,
    array: &SensorArray,
    phi1: &DVector<f64>,
    meas: &MeasurementSet,
    ddot: DdotVariant,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let sensors = array.truth();
    let m = sensors.len();
    if meas.sensor_count() != m || phi1.len() != 9 {
        return Err(Error::DimensionMismatch(
            "measurements or stage-one vector do not match the array".into(),
        ));
    }
    let n = m - 1;
    let (s, sd) = (&sensors.positions, &sensors.velocities);
    let u = source.position;
    let ud = source.velocity;
    let c = source.speed;
    let p8 = phi1[7];

    let r1 = range(&u, &s[0]);
    let rd1 = range_rate(&u, &ud, &s[0], &sd[0])?;
    let e = u - s[0];
    let f = ud - sd[0];
    let rho = e / r1;
    let lambda = f / r1 - rho * (rd1 / r1);

    let mut g3 = DMatrix::zeros(2 * n, 7);
    let mut g4 = DMatrix::zeros(2 * n, 6 * m);
    let vel = 3 * m;
    for i in 1..m {
        let (rt, rf) = (i - 1, n + i - 1);
        let t = meas.tdoa[i - 1];
        let td = meas.fdoa[i - 1];
        let ri = range(&u, &s[i]);
        if ri == 0.0 {
            return Err(Error::DegenerateGeometry(format!(
                "source coincides with sensor {}",
                i + 1
            )));
        }
        let rdi = range_rate(&u, &ud, &s[i], &sd[i])?;
        let a = u - s[i];
        let ad = ud - sd[i];

        let pos = (a / ri - e / ri) / c - e * (t * p8 / (c * c * ri * r1));
        let fpos = ((s[i] - s[0]) * (rdi / (ri * ri)) - (sd[i] - sd[0]) / ri) / c
            + e * (p8 / (c * c * r1) * (rdi * t / (ri * ri) - td / ri))
            + e * (t * p8 * rd1 / (c * c * ri * r1 * r1))
            - f * (t * p8 / (c * c * r1 * ri));

        let d = e + rho * (c * t);
        let second = match ddot {
            DdotVariant::Rate => td,
            DdotVariant::Delay => t,
        };
        let dd = f + lambda * (c * t) + rho * (c * second);
        for k in 0..3 {
            g3[(rt, k)] = pos[k];
            g3[(rf, k)] = fpos[k];
            g3[(rf, 3 + k)] = pos[k];

            g4[(rt, k)] = -d[k] / (c * ri);
            g4[(rt, 3 * i + k)] = a[k] / (c * ri);
            g4[(rf, k)] = (d[k] * rdi / (ri * ri) - dd[k] / ri) / c;
            g4[(rf, 3 * i + k)] = (ad[k] / ri - rdi * a[k] / (ri * ri)) / c;
            g4[(rf, vel + k)] = g4[(rt, k)];
            g4[(rf, vel + 3 * i + k)] = g4[(rt, 3 * i + k)];
        }
        g3[(rt, 6)] = -t * t / ri;
        g3[(rf, 6)] = rdi * t * t / (ri * ri) - 2.0 * t * td / ri;
    }
    Ok((g3, g4))
}

fn singular(what: &str) -> impl Fn(LinalgError) -> Error + '_ {
    move |e| {
        Error::DegenerateGeometry(format!(
            "{what} is singular (condition {:e})",
            e.condition()
        ))
    }
}

fn truth_state(source: &SourceState) -> Recovered {
    Recovered {
        position: source.position,
        velocity: source.velocity,
        speed: source.speed,
        warnings: Vec::new(),
    }
}

/// `G₃ = B₁⁻¹G₁B₂⁻¹G₂B₃` and `G₄ = B₁⁻¹D₁` from the stage matrices at the
/// truth.
pub fn product_g3_g4(
    source: &SourceState,
    array: &SensorArray,
    ddot: DdotVariant,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let sensors = array.truth();
    let meas = true_measurements(source, array)?;
    let lin = truth_state(source);
    let (b1, d1) = b1_d1(
        &meas,
        sensors,
        &source.position,
        &source.velocity,
        source.speed,
        ddot,
    )?;
    let g1 = build_stage1(&meas, sensors)?.g1;
    let phi1 = phi1_at(&source.position, &source.velocity, source.speed, sensors)?;
    let sys2 = build_stage2(&phi1, sensors, Some(&lin))?;
    let b3 = b3_matrix(&lin, sensors);
    let inner = lu_solve(&sys2.b2, &(&sys2.g2 * &b3)).map_err(singular("B₂"))?;
    let g3 = lu_solve(&b1, &(g1 * inner)).map_err(singular("B₁"))?;
    let g4 = lu_solve(&b1, &d1).map_err(singular("B₁"))?;
    Ok((g3, g4))
}

/// `r₁`, rates and TDOA-to-range ratios against the three thresholds.
pub fn condition_flags(
    source: &SourceState,
    array: &SensorArray,
    meas: &MeasurementSet,
) -> Result<ConditionFlags> {
    let (r, rd) = crate::model::ranges_and_rates(source, array.truth())?;
    let min_other = r[1..].iter().copied().fold(f64::INFINITY, f64::min);
    let max_rate = r
        .iter()
        .zip(&rd)
        .map(|(a, b)| (b / a).abs())
        .fold(0.0, f64::max);
    let max_tdoa = meas
        .tdoa
        .iter()
        .zip(&r[1..])
        .map(|(t, ri)| (t / ri).abs())
        .fold(0.0, f64::max);
    Ok(ConditionFlags {
        near_reference: r[0] < REFERENCE_RATIO * min_other,
        slow_motion: max_rate < RATE_RATIO,
        small_tdoa: max_tdoa < TDOA_RATIO,
    })
}

/// `AᵀQ⁻¹A − AᵀQ⁻¹B(Q_β⁻¹ + BᵀQ⁻¹B)⁻¹BᵀQ⁻¹A` with `Q = Q_α`.
fn marginal_information(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    noise: &NoiseModel,
) -> Result<DMatrix<f64>> {
    let qa = SpdFactor::new(&noise.q_alpha)
        .map_err(|_| Error::SingularCovariance("measurement covariance".into()))?;
    let qb = SpdFactor::new(&noise.q_beta)
        .map_err(|_| Error::SingularCovariance("sensor parameter covariance".into()))?;
    let aw = qa.whiten(a);
    let bw = qa.whiten(b);
    let inner = SpdFactor::new(&symmetrize(&(bw.transpose() * &bw + qb.inverse())))
        .map_err(|e| Error::SingularFim(e.condition()))?;
    let ab = aw.transpose() * &bw;
    Ok(symmetrize(
        &(aw.transpose() * &aw - &ab * inner.solve(&ab.transpose())),
    ))
}

/// Inverse covariance of `ξ` implied by `G₃`, `G₄`.
pub fn cov_xi_inverse(
    g3: &DMatrix<f64>,
    g4: &DMatrix<f64>,
    noise: &NoiseModel,
) -> Result<DMatrix<f64>> {
    marginal_information(g3, g4, noise)
}

/// Inverse bound on `ξ`, with the sensor parameters marginalized.
pub fn crlb_xi_inverse(
    source: &SourceState,
    array: &SensorArray,
    noise: &NoiseModel,
) -> Result<DMatrix<f64>> {
    let jac = jacobians(source, array.truth())?;
    marginal_information(&jac.d_xi(), &jac.d_beta, noise)
}

/// `B₃ᵀ(G₂ᵀW₂G₂)B₃` at the truth, chaining both stages' weights.
pub fn chained_cov_xi_inverse(
    source: &SourceState,
    array: &SensorArray,
    noise: &NoiseModel,
    ddot: DdotVariant,
) -> Result<DMatrix<f64>> {
    let sensors = array.truth();
    let meas = true_measurements(source, array)?;
    let phi1 = phi1_at(&source.position, &source.velocity, source.speed, sensors)?;
    let w1 = stage1_weights(
        &meas,
        sensors,
        Some(&phi1),
        Some(noise),
        WeightingMode::FullCovariance,
        ddot,
    )?;
    let n1 = stage1_solve(&build_stage1(&meas, sensors)?, &w1.weighting)?.normal;
    let lin = truth_state(source);
    let b2 = b2_matrix(&lin, sensors)?;
    let g2 = build_stage2(&phi1, sensors, Some(&lin))?.g2;
    let x = lu_solve(&b2, &g2).map_err(singular("B₂"))?;
    let b3 = b3_matrix(&lin, sensors);
    Ok(symmetrize(&(b3.transpose() * x.transpose() * n1 * x * b3)))
}

fn block(m: &DMatrix<f64>, r: (usize, usize), c: (usize, usize)) -> DMatrix<f64> {
    m.view((r.0, c.0), (r.1, c.1)).into_owned()
}

fn deviation(name: &'static str, a: DMatrix<f64>, b: DMatrix<f64>) -> BlockDeviation {
    let deviation = if b.norm() == 0.0 && a.norm() == 0.0 {
        0.0
    } else {
        relative_frobenius(&a, &b)
    };
    BlockDeviation { name, deviation }
}

/// Full diagnostic at the truth, or at `phi1` when given.
pub fn efficiency_check(
    source: &SourceState,
    array: &SensorArray,
    noise: &NoiseModel,
    phi1: Option<&DVector<f64>>,
    ddot: DdotVariant,
) -> Result<EfficiencyCheck> {
    let meas = true_measurements(source, array)?;
    let phi1 = match phi1 {
        Some(p) => p.clone(),
        None => phi1_at(
            &source.position,
            &source.velocity,
            source.speed,
            array.truth(),
        )?,
    };
    let (g3, g4) = build_g3_g4(source, array, &phi1, &meas, ddot)?;
    let jac = jacobians(source, array.truth())?;
    let jx = jac.d_xi();
    let jb = -&jac.d_beta;
    let n = meas.tdoa.len();
    let m = array.count();

    let g3_blocks = vec![
        deviation(
            "g3 tdoa/position",
            block(&g3, (0, n), (0, 3)),
            block(&jx, (0, n), (0, 3)),
        ),
        deviation(
            "g3 tdoa/velocity",
            block(&g3, (0, n), (3, 3)),
            block(&jx, (0, n), (3, 3)),
        ),
        deviation(
            "g3 tdoa/speed",
            block(&g3, (0, n), (6, 1)),
            block(&jx, (0, n), (6, 1)),
        ),
        deviation(
            "g3 fdoa/position",
            block(&g3, (n, n), (0, 3)),
            block(&jx, (n, n), (0, 3)),
        ),
        deviation(
            "g3 fdoa/velocity",
            block(&g3, (n, n), (3, 3)),
            block(&jx, (n, n), (3, 3)),
        ),
        deviation(
            "g3 fdoa/speed",
            block(&g3, (n, n), (6, 1)),
            block(&jx, (n, n), (6, 1)),
        ),
    ];
    let h = 3 * m;
    let g4_blocks = vec![
        deviation(
            "g4 tdoa/sensor position",
            block(&g4, (0, n), (0, h)),
            block(&jb, (0, n), (0, h)),
        ),
        deviation(
            "g4 tdoa/sensor velocity",
            block(&g4, (0, n), (h, h)),
            block(&jb, (0, n), (h, h)),
        ),
        deviation(
            "g4 fdoa/sensor position",
            block(&g4, (n, n), (0, h)),
            block(&jb, (n, n), (0, h)),
        ),
        deviation(
            "g4 fdoa/sensor velocity",
            block(&g4, (n, n), (h, h)),
            block(&jb, (n, n), (h, h)),
        ),
    ];

    let cov_xi_inv = cov_xi_inverse(&g3, &g4, noise)?;
    let crlb_xi_inv = marginal_information(&jx, &jac.d_beta, noise)?;
    let max_rel_gap = relative_frobenius(&cov_xi_inv, &crlb_xi_inv);
    Ok(EfficiencyCheck {
        b3: b3_matrix(&truth_state(source), array.truth()),
        condition_flags: condition_flags(source, array, &meas)?,
        g3,
        g4,
        cov_xi_inv,
        crlb_xi_inv,
        max_rel_gap,
        g3_blocks,
        g4_blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Scenario;
    use crate::linalg::relative_min_eigenvalue;
    use crate::model::{SensorSet, Vec3};

    fn setup() -> (SourceState, SensorArray, NoiseModel) {
        let sc = Scenario::baseline();
        (
            sc.source_at_speed(1500.0).unwrap(),
            sc.sensor_array().unwrap(),
            sc.noise_model(1e-2, 1e-2, 1500.0).unwrap(),
        )
    }

    #[test]
    fn closed_form_matches_stage_products() {
        let (src, arr, _) = setup();
        for ddot in [DdotVariant::Rate, DdotVariant::Delay] {
            let meas = true_measurements(&src, &arr).unwrap();
            let phi1 = phi1_at(&src.position, &src.velocity, src.speed, arr.truth()).unwrap();
            let (g3, g4) = build_g3_g4(&src, &arr, &phi1, &meas, ddot).unwrap();
            let (p3, p4) = product_g3_g4(&src, &arr, ddot).unwrap();
            assert!(
                relative_frobenius(&g3, &p3) < 1e-8,
                "{}",
                relative_frobenius(&g3, &p3)
            );
            assert!(
                relative_frobenius(&g4, &p4) < 1e-8,
                "{}",
                relative_frobenius(&g4, &p4)
            );
        }
    }

    #[test]
    fn g4_structure() {
        let (src, arr, _) = setup();
        let meas = true_measurements(&src, &arr).unwrap();
        let phi1 = phi1_at(&src.position, &src.velocity, src.speed, arr.truth()).unwrap();
        let (_, g4) = build_g3_g4(&src, &arr, &phi1, &meas, DdotVariant::Rate).unwrap();
        let n = 9;
        assert_eq!(g4.view((0, 30), (n, 30)).amax(), 0.0);
        assert_eq!(
            g4.view((n, 30), (n, 30)).into_owned(),
            g4.view((0, 0), (n, 30)).into_owned()
        );
    }

    #[test]
    fn zero_tdoa_row_is_unit_vector_difference() {
        let (src, arr, _) = setup();
        let meas = true_measurements(&src, &arr).unwrap();
        let mut zero = meas.clone();
        zero.tdoa.fill(0.0);
        let phi1 = phi1_at(&src.position, &src.velocity, src.speed, arr.truth()).unwrap();
        let (g3, _) = build_g3_g4(&src, &arr, &phi1, &zero, DdotVariant::Rate).unwrap();
        let s = &arr.truth().positions;
        let c = src.speed;
        for i in 1..arr.count() {
            let ri = (src.position - s[i]).norm();
            let expected = ((src.position - s[i]) - (src.position - s[0])) / (c * ri);
            for k in 0..3 {
                assert!((g3[(i - 1, k)] - expected[k]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn efficiency_at_reference_scenario() {
        let (src, arr, noise) = setup();
        let chk = efficiency_check(&src, &arr, &noise, None, DdotVariant::Rate).unwrap();
        assert!(chk.max_rel_gap < 0.05, "gap {}", chk.max_rel_gap);
        // reference sensor at 346 m vs 469 m, fastest closing ratio 0.0158 s⁻¹
        assert!(!chk.condition_flags.near_reference);
        assert!(!chk.condition_flags.slow_motion);
        assert!(chk.condition_flags.small_tdoa);
        assert!(relative_min_eigenvalue(&chk.cov_xi_inv) > -1e-10);
        assert!(relative_min_eigenvalue(&chk.crlb_xi_inv) > -1e-10);
        let pos = chk
            .g3_blocks
            .iter()
            .find(|b| b.name == "g3 tdoa/position")
            .unwrap();
        assert!(pos.deviation < 1e-10);
        let g4_dev = chk
            .g4_blocks
            .iter()
            .map(|b| b.deviation)
            .fold(0.0, f64::max);
        assert!(g4_dev < 1e-8, "{g4_dev}");
        assert_eq!(chk.b3[(6, 6)], 2.0 * src.speed);
    }

    #[test]
    fn chained_route_matches_closed_form() {
        let (src, arr, noise) = setup();
        let chk = efficiency_check(&src, &arr, &noise, None, DdotVariant::Rate).unwrap();
        let chained = chained_cov_xi_inverse(&src, &arr, &noise, DdotVariant::Rate).unwrap();
        let rel = relative_frobenius(&chained, &chk.cov_xi_inv);
        assert!(rel < 1e-8, "{rel}");
    }

    #[test]
    fn pathological_geometry_still_reports() {
        let (src, arr, noise) = setup();
        // fast source, reference far away
        let fast = SourceState::new(src.position, Vec3::new(40.0, -30.0, 25.0), 1500.0).unwrap();
        let mut pos = arr.truth().positions.clone();
        pos.swap(0, 7);
        let mut vel = arr.truth().velocities.clone();
        vel.swap(0, 7);
        let far = SensorArray::exact(SensorSet::new(pos, vel).unwrap()).unwrap();
        let chk = efficiency_check(&fast, &far, &noise, None, DdotVariant::Rate).unwrap();
        assert!(!chk.condition_flags.near_reference);
        assert!(chk.max_rel_gap.is_finite());
    }
}
