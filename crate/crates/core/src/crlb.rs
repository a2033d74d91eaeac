//! Hybrid Fisher information and Cramér–Rao bounds.
//!
//! Parameters are ordered `[u, u̇, c, β]` with `β = [s₁ … s_M, ṡ₁ … ṡ_M]`.
//! The sensor parameters carry a Gaussian prior with covariance `Q_β`, the
//! measurements have covariance `Q_α`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{symmetrize, LinalgError, SpdFactor};
use crate::model::{ranges_and_rates, SensorSet, SourceState};
use crate::noise::{to_db, NoiseModel};

/// Partial derivatives of the noiseless measurement vector `α = [t; ṫ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobians {
    /// `∂α/∂θ`, `2(M−1) × 6`.
    pub d_theta: DMatrix<f64>,
    /// `∂α/∂c`, length `2(M−1)`.
    pub d_c: DVector<f64>,
    /// `∂α/∂β`, `2(M−1) × 6M`.
    pub d_beta: DMatrix<f64>,
}

impl Jacobians {
    /// `[∂α/∂θ, ∂α/∂c, ∂α/∂β]`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let rows = self.d_theta.nrows();
        let nb = self.d_beta.ncols();
        let mut j = DMatrix::zeros(rows, 7 + nb);
        j.columns_mut(0, 6).copy_from(&self.d_theta);
        j.column_mut(6).copy_from(&self.d_c);
        j.columns_mut(7, nb).copy_from(&self.d_beta);
        j
    }

    /// `[∂α/∂θ, ∂α/∂c]`.
    pub fn d_xi(&self) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.d_theta.nrows(), 7);
        j.columns_mut(0, 6).copy_from(&self.d_theta);
        j.column_mut(6).copy_from(&self.d_c);
        j
    }
}

/// Analytic Jacobians of the measurements at `source` and `sensors`.
pub fn jacobians(source: &SourceState, sensors: &SensorSet) -> Result<Jacobians> {
    let m = sensors.len();
    if m < 2 {
        return Err(Error::InvalidParameter(
            "at least two sensors are needed".into(),
        ));
    }
    let (r, rd) = ranges_and_rates(source, sensors)?;
    let c = source.speed;
    let n = m - 1;
    let u = source.position;
    let ud = source.velocity;

    // unit vectors and range-rate gradients per sensor
    let rho: Vec<_> = sensors
        .positions
        .iter()
        .zip(&r)
        .map(|(s, ri)| (u - s) / *ri)
        .collect();
    let grad_rd: Vec<_> = (0..m)
        .map(|i| {
            let d = u - sensors.positions[i];
            (ud - sensors.velocities[i]) / r[i] - d * (rd[i] / (r[i] * r[i]))
        })
        .collect();

    let mut d_theta = DMatrix::zeros(2 * n, 6);
    let mut d_c = DVector::zeros(2 * n);
    let mut d_beta = DMatrix::zeros(2 * n, 6 * m);
    let vel = 3 * m;
    for i in 1..m {
        let (t, f) = (i - 1, n + i - 1);
        let dr = (rho[i] - rho[0]) / c;
        let drd = (grad_rd[i] - grad_rd[0]) / c;
        for k in 0..3 {
            d_theta[(t, k)] = dr[k];
            d_theta[(f, k)] = drd[k];
            d_theta[(f, 3 + k)] = dr[k];

            d_beta[(t, k)] = rho[0][k] / c;
            d_beta[(t, 3 * i + k)] = -rho[i][k] / c;

            d_beta[(f, k)] = grad_rd[0][k] / c;
            d_beta[(f, 3 * i + k)] = -grad_rd[i][k] / c;
            d_beta[(f, vel + k)] = rho[0][k] / c;
            d_beta[(f, vel + 3 * i + k)] = -rho[i][k] / c;
        }
        d_c[t] = -(r[i] - r[0]) / (c * c);
        d_c[f] = -(rd[i] - rd[0]) / (c * c);
    }
    Ok(Jacobians {
        d_theta,
        d_c,
        d_beta,
    })
}

/// Submatrices of the hybrid Fisher information, index sets `θ`, `c`, `β`.
#[derive(Debug, Clone, PartialEq)]
pub struct FimBlocks {
    pub x11: DMatrix<f64>,
    pub x12: DMatrix<f64>,
    pub x13: DMatrix<f64>,
    pub x22: f64,
    pub x23: DMatrix<f64>,
    pub x33: DMatrix<f64>,
}

impl FimBlocks {
    pub fn dim(&self) -> usize {
        7 + self.x33.nrows()
    }

    pub fn assemble(&self) -> DMatrix<f64> {
        let nb = self.x33.nrows();
        let mut f = DMatrix::zeros(7 + nb, 7 + nb);
        f.view_mut((0, 0), (6, 6)).copy_from(&self.x11);
        f.view_mut((0, 6), (6, 1)).copy_from(&self.x12);
        f.view_mut((6, 0), (1, 6)).copy_from(&self.x12.transpose());
        f.view_mut((0, 7), (6, nb)).copy_from(&self.x13);
        f.view_mut((7, 0), (nb, 6)).copy_from(&self.x13.transpose());
        f[(6, 6)] = self.x22;
        f.view_mut((6, 7), (1, nb)).copy_from(&self.x23);
        f.view_mut((7, 6), (nb, 1)).copy_from(&self.x23.transpose());
        f.view_mut((7, 7), (nb, nb)).copy_from(&self.x33);
        f
    }
}

fn factor_cov(q: &DMatrix<f64>, what: &str) -> Result<SpdFactor> {
    SpdFactor::new(q).map_err(|e| {
        Error::SingularCovariance(match e {
            LinalgError::IllConditioned(c) => format!("{what} covariance condition number {c:e}"),
            _ => format!("{what} covariance is not positive definite"),
        })
    })
}

fn factor_fim(a: &DMatrix<f64>) -> Result<SpdFactor> {
    SpdFactor::new(a).map_err(|e| Error::SingularFim(e.condition()))
}

fn check_dims(jac: &Jacobians, noise: &NoiseModel) -> Result<()> {
    if noise.q_alpha.nrows() != jac.d_theta.nrows() || noise.q_beta.nrows() != jac.d_beta.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "noise model is sized for {} sensors, geometry has {}",
            noise.sensor_count(),
            jac.d_beta.ncols() / 6
        )));
    }
    Ok(())
}

/// Fisher information blocks from precomputed Jacobians.
pub fn fim_from_jacobians(jac: &Jacobians, noise: &NoiseModel) -> Result<FimBlocks> {
    check_dims(jac, noise)?;
    let qa = factor_cov(&noise.q_alpha, "measurement")?;
    let qb = factor_cov(&noise.q_beta, "sensor parameter")?;
    let w = qa.whiten(&jac.stacked());
    let f = symmetrize(&(w.transpose() * &w));
    let nb = jac.d_beta.ncols();
    Ok(FimBlocks {
        x11: f.view((0, 0), (6, 6)).into_owned(),
        x12: f.view((0, 6), (6, 1)).into_owned(),
        x13: f.view((0, 7), (6, nb)).into_owned(),
        x22: f[(6, 6)],
        x23: f.view((6, 7), (1, nb)).into_owned(),
        x33: f.view((7, 7), (nb, nb)).into_owned() + qb.inverse(),
    })
}

/// Hybrid Fisher information at the given evaluation point.
pub fn fim(source: &SourceState, sensors: &SensorSet, noise: &NoiseModel) -> Result<FimBlocks> {
    fim_from_jacobians(&jacobians(source, sensors)?, noise)
}

/// Root-trace bounds and the full inverse information.
#[derive(Debug, Clone, PartialEq)]
pub struct CrlbReport {
    /// meters
    pub crlb_u: f64,
    /// m/s
    pub crlb_udot: f64,
    /// m/s
    pub crlb_c: f64,
    pub full: DMatrix<f64>,
}

impl CrlbReport {
    /// Bounds on the mean squared errors in dB (`10·log₁₀` of the squared
    /// root-trace values).
    pub fn mse_db(&self) -> [f64; 3] {
        [
            to_db(self.crlb_u.powi(2)),
            to_db(self.crlb_udot.powi(2)),
            to_db(self.crlb_c.powi(2)),
        ]
    }

    /// Bound on the `[u, u̇, c]` covariance.
    pub fn xi(&self) -> DMatrix<f64> {
        self.full.view((0, 0), (7, 7)).into_owned()
    }
}

pub fn crlb_report(fim: &FimBlocks) -> Result<CrlbReport> {
    let full = factor_fim(&fim.assemble())?.inverse();
    let tr = |a: usize, b: usize| (a..b).map(|k| full[(k, k)]).sum::<f64>().sqrt();
    Ok(CrlbReport {
        crlb_u: tr(0, 3),
        crlb_udot: tr(3, 6),
        crlb_c: tr(6, 7),
        full,
    })
}

/// Bound on `θ` with unknown speed, by block elimination of `[c, β]`.
pub fn crlb_theta_unknown_c(fim: &FimBlocks) -> Result<DMatrix<f64>> {
    let full = fim.assemble();
    let n = full.nrows();
    let rest = full.view((6, 6), (n - 6, n - 6)).into_owned();
    let cross = full.view((0, 6), (6, n - 6)).into_owned();
    let rest_f = factor_fim(&rest)?;
    let info = &fim.x11 - &cross * rest_f.solve(&cross.transpose());
    Ok(factor_fim(&symmetrize(&info))?.inverse())
}

fn projected_info(
    jac: &Jacobians,
    noise: &NoiseModel,
    project_speed: bool,
) -> Result<DMatrix<f64>> {
    check_dims(jac, noise)?;
    let qa = factor_cov(&noise.q_alpha, "measurement")?;
    let qb = factor_cov(&noise.q_beta, "sensor parameter")?;
    let mut a = qa.whiten(&jac.d_theta);
    let mut b = qa.whiten(&jac.d_beta);
    if project_speed {
        let w = qa.whiten_vec(&jac.d_c);
        let ww = w.dot(&w);
        if ww > 0.0 {
            // (I − P₁) applied to the whitened columns
            a -= &w * (w.transpose() * &a) / ww;
            b -= &w * (w.transpose() * &b) / ww;
        }
    }
    let gamma_inv = symmetrize(&(b.transpose() * &b + qb.inverse()));
    let gamma = factor_fim(&gamma_inv)?;
    let ab = a.transpose() * &b;
    Ok(symmetrize(
        &(a.transpose() * &a - &ab * gamma.solve(&ab.transpose())),
    ))
}

/// Bound on `θ` with unknown speed through the projected covariance `Q₁`
/// and `Γ₁`. Agrees with [`crlb_theta_unknown_c`].
pub fn crlb_theta_unknown_c_projected(jac: &Jacobians, noise: &NoiseModel) -> Result<DMatrix<f64>> {
    Ok(factor_fim(&projected_info(jac, noise, true)?)?.inverse())
}

/// Bound on `θ` when the speed is known.
pub fn crlb_theta_known_c(jac: &Jacobians, noise: &NoiseModel) -> Result<DMatrix<f64>> {
    Ok(factor_fim(&projected_info(jac, noise, false)?)?.inverse())
}

/// Projector onto the whitened speed column, `w wᵀ / wᵀw` with `w = C⁻¹ ∂α/∂c`
/// and `Q_α = C Cᵀ`.
pub fn projection_p1(jac: &Jacobians, q_alpha: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let qa = factor_cov(q_alpha, "measurement")?;
    let w = qa.whiten_vec(&jac.d_c);
    let ww = w.dot(&w);
    if ww == 0.0 {
        return Err(Error::DegenerateProjection);
    }
    Ok(&w * w.transpose() / ww)
}

/// `Q₁⁻¹ = Q_α⁻¹ − Q_α⁻¹a(aᵀQ_α⁻¹a)⁻¹aᵀQ_α⁻¹`, `a = ∂α/∂c`.
pub fn q1_inv_direct(jac: &Jacobians, q_alpha: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let qa = factor_cov(q_alpha, "measurement")?;
    let qinv = qa.inverse();
    let qa_a = qa.solve_vec(&jac.d_c);
    let denom = jac.d_c.dot(&qa_a);
    if denom == 0.0 {
        return Err(Error::DegenerateProjection);
    }
    Ok(symmetrize(&(qinv - &qa_a * qa_a.transpose() / denom)))
}

/// `Q₁⁻¹ = C⁻ᵀ (I − P₁) C⁻¹`.
pub fn q1_inv_projected(jac: &Jacobians, q_alpha: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let qa = factor_cov(q_alpha, "measurement")?;
    let p1 = projection_p1(jac, q_alpha)?;
    let n = p1.nrows();
    let c_inv = qa.whiten(&DMatrix::identity(n, n));
    Ok(symmetrize(
        &(c_inv.transpose() * (DMatrix::identity(n, n) - p1) * c_inv),
    ))
}

/// Known- against unknown-speed bounds on `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedCaseComparison {
    pub unknown_c: DMatrix<f64>,
    pub known_c: DMatrix<f64>,
}

impl SpeedCaseComparison {
    pub fn evaluate(source: &SourceState, sensors: &SensorSet, noise: &NoiseModel) -> Result<Self> {
        let jac = jacobians(source, sensors)?;
        Ok(SpeedCaseComparison {
            unknown_c: crlb_theta_unknown_c(&fim_from_jacobians(&jac, noise)?)?,
            known_c: crlb_theta_known_c(&jac, noise)?,
        })
    }

    fn trace(a: &DMatrix<f64>, from: usize) -> f64 {
        (from..from + 3).map(|k| a[(k, k)]).sum()
    }

    /// Position bound of the unknown case over the known case, in dB.
    pub fn position_gap_db(&self) -> f64 {
        to_db(Self::trace(&self.unknown_c, 0) / Self::trace(&self.known_c, 0))
    }

    pub fn velocity_gap_db(&self) -> f64 {
        to_db(Self::trace(&self.unknown_c, 3) / Self::trace(&self.known_c, 3))
    }

    /// `[position, velocity]` MSE bounds in dB for one case.
    pub fn mse_db(bound: &DMatrix<f64>) -> [f64; 2] {
        [to_db(Self::trace(bound, 0)), to_db(Self::trace(bound, 3))]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{measurements_from, Vec3};
    use crate::noise::BASELINE_B;
    use approx::assert_relative_eq;

    pub(crate) fn baseline() -> (SourceState, SensorSet) {
        let p = [
            [0.0, 1000.0, 0.0],
            [0.0, 0.0, 0.0],
            [0.0, 0.0, 1000.0],
            [0.0, 1000.0, 1000.0],
            [1000.0, 0.0, 0.0],
            [1000.0, 1000.0, 0.0],
            [1000.0, 0.0, 1000.0],
            [1000.0, 1000.0, 1000.0],
            [500.0, 500.0, 1000.0],
            [500.0, 500.0, 0.0],
        ];
        let v = [
            [3.0, -2.0, 2.0],
            [-3.0, 1.0, 2.0],
            [1.0, -2.0, 1.0],
            [1.0, 2.0, 3.0],
            [-2.0, 1.0, 1.0],
            [2.0, -1.0, 1.0],
            [1.2, -1.5, 1.5],
            [-1.5, 1.2, -1.2],
            [1.3, 1.3, 1.3],
            [2.5, 2.5, 2.5],
        ];
        let to = |a: &[[f64; 3]]| a.iter().map(|x| Vec3::from(*x)).collect();
        let src = SourceState::new(
            Vec3::new(200.0, 800.0, 200.0),
            Vec3::new(-2.0, 1.5, 1.0),
            1500.0,
        )
        .unwrap();
        (src, SensorSet::new(to(&p), to(&v)).unwrap())
    }

    fn alpha_of(params: &DVector<f64>, m: usize) -> DVector<f64> {
        let src = SourceState::new(
            Vec3::new(params[0], params[1], params[2]),
            Vec3::new(params[3], params[4], params[5]),
            params[6],
        )
        .unwrap();
        let set = SensorSet::from_beta(&params.rows(7, 6 * m).into_owned()).unwrap();
        measurements_from(&src, &set).unwrap().alpha()
    }

    fn richardson(params: &DVector<f64>, m: usize, k: usize, h: f64) -> DVector<f64> {
        let cd = |h: f64| {
            let mut p = params.clone();
            p[k] += h;
            let plus = alpha_of(&p, m);
            p[k] -= 2.0 * h;
            (plus - alpha_of(&p, m)) / (2.0 * h)
        };
        (cd(h / 2.0) * 4.0 - cd(h)) / 3.0
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let (src, set) = baseline();
        let m = set.len();
        let jac = jacobians(&src, &set).unwrap().stacked();
        let params = DVector::from_iterator(
            7 + 6 * m,
            src.theta()
                .iter()
                .copied()
                .chain([src.speed])
                .chain(set.beta().iter().copied()),
        );
        let mut fd = DMatrix::zeros(jac.nrows(), jac.ncols());
        for k in 0..params.len() {
            let h = 1e-3 * params[k].abs().max(1.0);
            fd.set_column(k, &richardson(&params, m, k, h));
        }
        let rel = (&jac - &fd).amax() / jac.amax();
        assert!(rel < 1e-6, "relative error {rel}");
    }

    #[test]
    fn structural_zeros_and_copies() {
        let (src, set) = baseline();
        let jac = jacobians(&src, &set).unwrap();
        let n = set.len() - 1;
        assert_eq!(jac.d_theta.view((0, 3), (n, 3)).amax(), 0.0);
        assert_eq!(
            jac.d_theta.view((n, 3), (n, 3)).into_owned(),
            jac.d_theta.view((0, 0), (n, 3)).into_owned()
        );
        assert_relative_eq!(
            jac.d_c[0],
            -(720000f64.sqrt() - 120000f64.sqrt()) / 1500f64.powi(2)
        );
        assert_relative_eq!(jac.d_c[0], -2.2316e-4, epsilon = 1e-8);
    }

    #[test]
    fn static_scene_fdoa_position_rows_vanish() {
        let (src, set) = baseline();
        let set = SensorSet::new(set.positions.clone(), vec![Vec3::zeros(); set.len()]).unwrap();
        let src = SourceState::new(src.position, Vec3::zeros(), src.speed).unwrap();
        let jac = jacobians(&src, &set).unwrap();
        let n = set.len() - 1;
        assert_eq!(jac.d_theta.view((n, 0), (n, 3)).amax(), 0.0);
    }

    fn baseline_noise(sd: f64, ss: f64) -> NoiseModel {
        NoiseModel::standard(&BASELINE_B, sd, ss, 1500.0).unwrap()
    }

    #[test]
    fn fim_is_symmetric_psd() {
        let (src, set) = baseline();
        let f = fim(&src, &set, &baseline_noise(1.0, 1.0))
            .unwrap()
            .assemble();
        assert!((&f - f.transpose()).amax() <= 1e-12 * f.amax());
        assert!(crate::linalg::relative_min_eigenvalue(&f) > -1e-8);
    }

    #[test]
    fn unknown_c_forms_agree() {
        let (src, set) = baseline();
        let noise = baseline_noise(1.0, 1.0);
        let jac = jacobians(&src, &set).unwrap();
        let a = crlb_theta_unknown_c(&fim_from_jacobians(&jac, &noise).unwrap()).unwrap();
        let b = crlb_theta_unknown_c_projected(&jac, &noise).unwrap();
        assert!((&a - &b).amax() <= 1e-8 * a.amax());
        let report = crlb_report(&fim_from_jacobians(&jac, &noise).unwrap()).unwrap();
        assert!((report.full.view((0, 0), (6, 6)) - &a).amax() <= 1e-8 * a.amax());
    }

    #[test]
    fn q1_forms_agree_and_projector_axioms() {
        let (src, set) = baseline();
        let noise = baseline_noise(1.0, 1.0);
        let jac = jacobians(&src, &set).unwrap();
        let d = q1_inv_direct(&jac, &noise.q_alpha).unwrap();
        let p = q1_inv_projected(&jac, &noise.q_alpha).unwrap();
        assert!((&d - &p).amax() <= 1e-10 * d.norm());
        let p1 = projection_p1(&jac, &noise.q_alpha).unwrap();
        assert!((&p1 * &p1 - &p1).amax() < 1e-10);
        assert!((&p1 - p1.transpose()).amax() < 1e-10);
        assert_relative_eq!(p1.trace(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn zero_speed_column_reduces_to_known_case() {
        let (src, set) = baseline();
        let noise = baseline_noise(1.0, 1.0);
        let mut jac = jacobians(&src, &set).unwrap();
        jac.d_c.fill(0.0);
        assert!(matches!(
            projection_p1(&jac, &noise.q_alpha),
            Err(Error::DegenerateProjection)
        ));
        let a = crlb_theta_unknown_c_projected(&jac, &noise).unwrap();
        let b = crlb_theta_known_c(&jac, &noise).unwrap();
        assert!((&a - &b).amax() <= 1e-10 * b.amax());
    }

    #[test]
    fn unknown_speed_never_helps() {
        let (src, set) = baseline();
        let cmp = SpeedCaseComparison::evaluate(&src, &set, &baseline_noise(1.0, 1.0)).unwrap();
        let diff = &cmp.unknown_c - &cmp.known_c;
        assert!(crate::linalg::relative_min_eigenvalue(&diff) > -1e-8);
        assert!(cmp.position_gap_db() > 0.0);
    }

    #[test]
    fn tiny_prior_reduces_to_measurement_block() {
        let (src, set) = baseline();
        let m = set.len();
        let mut noise = baseline_noise(1.0, 1.0);
        noise.q_beta = DMatrix::identity(6 * m, 6 * m) * 1e-12;
        let jac = jacobians(&src, &set).unwrap();
        let f = fim_from_jacobians(&jac, &noise).unwrap();
        let known = crlb_theta_known_c(&jac, &noise).unwrap();
        let x11_inv = SpdFactor::new(&f.x11).unwrap().inverse();
        assert!((known.trace() - x11_inv.trace()).abs() < 1e-6 * x11_inv.trace());
    }

    #[test]
    fn report_on_block_diagonal_information() {
        let mut x11 = DMatrix::zeros(6, 6);
        for k in 0..6 {
            x11[(k, k)] = (k + 1) as f64;
        }
        let f = FimBlocks {
            x11,
            x12: DMatrix::zeros(6, 1),
            x13: DMatrix::zeros(6, 6),
            x22: 4.0,
            x23: DMatrix::zeros(1, 6),
            x33: DMatrix::identity(6, 6),
        };
        let r = crlb_report(&f).unwrap();
        assert_relative_eq!(
            r.crlb_u,
            (1.0 + 0.5 + 1.0 / 3.0f64).sqrt(),
            max_relative = 1e-12
        );
        assert_relative_eq!(
            r.crlb_udot,
            (0.25 + 0.2 + 1.0 / 6.0f64).sqrt(),
            max_relative = 1e-12
        );
        assert_relative_eq!(r.crlb_c, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn singular_information_is_reported() {
        let f = FimBlocks {
            x11: DMatrix::zeros(6, 6),
            x12: DMatrix::zeros(6, 1),
            x13: DMatrix::zeros(6, 6),
            x22: 1.0,
            x23: DMatrix::zeros(1, 6),
            x33: DMatrix::identity(6, 6),
        };
        assert!(matches!(crlb_report(&f), Err(Error::SingularFim(_))));
    }
}
