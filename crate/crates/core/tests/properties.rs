use nalgebra::DMatrix;
use proptest::prelude::*;

use uwloc::config::Scenario;
use uwloc::crlb::{
    crlb_report, crlb_theta_known_c, crlb_theta_unknown_c, fim, fim_from_jacobians, jacobians,
};
use uwloc::estimator::{estimate, EstimatorOptions, WeightingMode};
use uwloc::linalg::{relative_frobenius, relative_min_eigenvalue};
use uwloc::model::{measurements_from, range, SensorArray, SensorSet, SourceState, Vec3};
use uwloc::noise::{perturb_array, sample_gaussian, stream, NoiseModel, Purpose};

fn vec3(lo: f64, hi: f64) -> impl Strategy<Value = Vec3> {
    (lo..hi, lo..hi, lo..hi).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

prop_compose! {
    fn geometry(m_lo: usize, m_hi: usize)(
        m in m_lo..=m_hi,
    )(
        pos in prop::collection::vec(vec3(0.0, 1000.0), m),
        vel in prop::collection::vec(vec3(-3.0, 3.0), m),
        u in vec3(100.0, 900.0),
        ud in vec3(-3.0, 3.0),
        c in 1400.0..1600.0f64,
    ) -> (SourceState, SensorSet) {
        (SourceState::new(u, ud, c).unwrap(), SensorSet::new(pos, vel).unwrap())
    }
}

fn unit_noise(m: usize, sd: f64, ss: f64, c: f64) -> NoiseModel {
    NoiseModel::standard(&vec![1.0; m], sd, ss, c).unwrap()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn measurements_translation_invariant((src, set) in geometry(5, 10), shift in vec3(-500.0, 500.0)) {
        let a = measurements_from(&src, &set).unwrap().alpha();
        let b = measurements_from(&src.translated(&shift), &set.translated(&shift)).unwrap().alpha();
        prop_assert!((a - &b).amax() <= 1e-12 * b.amax().max(1e-3));
    }

    #[test]
    fn measurements_scale_with_inverse_speed((src, set) in geometry(5, 10), k in 0.5..2.0f64) {
        let a = measurements_from(&src, &set).unwrap().alpha();
        let fast = SourceState::new(src.position, src.velocity, src.speed * k).unwrap();
        let b = measurements_from(&fast, &set).unwrap().alpha();
        prop_assert!((a / k - b).amax() <= 1e-14);
    }

    #[test]
    fn tdoa_bounded_by_baseline((src, set) in geometry(5, 10)) {
        let t = measurements_from(&src, &set).unwrap().tdoa;
        for i in 1..set.len() {
            let baseline = range(&set.positions[i], &set.positions[0]);
            prop_assert!(src.speed * t[i - 1].abs() <= baseline * (1.0 + 1e-12));
        }
    }

    #[test]
    fn fim_scales_inversely_with_noise((src, set) in geometry(5, 8), k in 0.1..10.0f64) {
        let m = set.len();
        let f1 = fim(&src, &set, &unit_noise(m, 1.0, 1.0, src.speed)).unwrap().assemble();
        let fk = fim(&src, &set, &unit_noise(m, k, k, src.speed)).unwrap().assemble();
        prop_assert!(relative_frobenius(&(fk * (k * k)), &f1) <= 1e-9);
    }

    #[test]
    fn bound_grows_with_noise((src, set) in geometry(6, 8), k in 1.1..5.0f64) {
        let m = set.len();
        let jac = jacobians(&src, &set).unwrap();
        let lo = crlb_report(&fim_from_jacobians(&jac, &unit_noise(m, 1.0, 1.0, src.speed)).unwrap()).unwrap();
        let hi = crlb_report(&fim_from_jacobians(&jac, &unit_noise(m, k, 1.0, src.speed)).unwrap()).unwrap();
        prop_assert!(relative_min_eigenvalue(&(hi.full - lo.full)) >= -1e-8);
    }

    #[test]
    fn unknown_speed_never_helps((src, set) in geometry(6, 8), sd in 0.1..3.0f64, ss in 0.1..3.0f64) {
        let noise = unit_noise(set.len(), sd, ss, src.speed);
        let jac = jacobians(&src, &set).unwrap();
        let unknown = crlb_theta_unknown_c(&fim_from_jacobians(&jac, &noise).unwrap()).unwrap();
        let known = crlb_theta_known_c(&jac, &noise).unwrap();
        prop_assert!(relative_min_eigenvalue(&(unknown - known)) >= -1e-8);
    }

    #[test]
    fn noiseless_estimate_is_exact((src, set) in geometry(6, 10)) {
        let meas = measurements_from(&src, &set).unwrap();
        let r = estimate(&meas, &set, None, &EstimatorOptions::structured());
        prop_assume!(r.is_ok());
        let r = r.unwrap();
        prop_assert!((r.position - src.position).norm() <= 1e-6 * src.position.norm());
        prop_assert!((r.velocity - src.velocity).norm() <= 1e-6 * src.velocity.norm().max(1.0));
        prop_assert!(close(r.speed, src.speed, 1e-6));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn estimate_invariant_to_covariance_scale(seed in 0u64..1000, k in 0.1..10.0f64) {
        let sc = Scenario::baseline();
        let src = sc.source_at_speed(1500.0).unwrap();
        let array = sc.sensor_array().unwrap();
        let noise = sc.noise_model(0.3, 0.3, 1500.0).unwrap();
        let scaled = sc.noise_model(0.3 * k, 0.3 * k, 1500.0).unwrap();
        let clean = measurements_from(&src, array.truth()).unwrap().alpha();
        let alpha = clean + sample_gaussian(&nalgebra::DVector::zeros(18), &noise.q_alpha, &mut stream(seed, 0, Purpose::Measurement)).unwrap();
        let meas = uwloc::model::MeasurementSet::from_alpha(&alpha).unwrap();
        let nominal = perturb_array(&array, &noise.q_beta, &mut stream(seed, 0, Purpose::Sensors)).unwrap();
        let opts = EstimatorOptions::with_mode(WeightingMode::FullCovariance);
        let a = estimate(&meas, nominal.nominal(), Some(&noise), &opts).unwrap();
        let b = estimate(&meas, nominal.nominal(), Some(&scaled), &opts).unwrap();
        prop_assert!((a.xi() - b.xi()).amax() <= 1e-8 * a.xi().amax());
    }

    #[test]
    fn estimate_translation_equivariant(seed in 0u64..1000, shift in vec3(-2000.0, 2000.0)) {
        let sc = Scenario::baseline();
        let src = sc.source_at_speed(1500.0).unwrap();
        let array = sc.sensor_array().unwrap();
        let noise = sc.noise_model(0.3, 0.3, 1500.0).unwrap();
        let clean = measurements_from(&src, array.truth()).unwrap().alpha();
        let alpha = clean + sample_gaussian(&nalgebra::DVector::zeros(18), &noise.q_alpha, &mut stream(seed, 0, Purpose::Measurement)).unwrap();
        let meas = uwloc::model::MeasurementSet::from_alpha(&alpha).unwrap();
        let nominal = perturb_array(&array, &noise.q_beta, &mut stream(seed, 0, Purpose::Sensors)).unwrap();
        let opts = EstimatorOptions::default();
        let a = estimate(&meas, nominal.nominal(), Some(&noise), &opts).unwrap();
        let moved: SensorArray = nominal.translated(&shift);
        let b = estimate(&meas, moved.nominal(), Some(&noise), &opts).unwrap();
        prop_assert!((b.position - shift - a.position).norm() <= 1e-6 * (1.0 + a.position.norm()));
        prop_assert!((b.velocity - a.velocity).norm() <= 1e-6);
        prop_assert!(close(a.speed, b.speed, 1e-9));
    }
}

#[test]
fn perturbed_sensors_have_prescribed_moments() {
    let sc = Scenario::baseline();
    let array = sc.sensor_array().unwrap();
    let q = sc.noise_model(1.0, 2.0, 1500.0).unwrap().q_beta;
    let n = 20_000;
    let mut rng = stream(11, 0, Purpose::Sensors);
    let truth = array.truth().beta();
    let dim = truth.len();
    let mut mean = nalgebra::DVector::zeros(dim);
    let mut cov = DMatrix::zeros(dim, dim);
    for _ in 0..n {
        let d = perturb_array(&array, &q, &mut rng)
            .unwrap()
            .nominal()
            .beta()
            - &truth;
        cov += &d * d.transpose();
        mean += d;
    }
    mean /= n as f64;
    cov /= n as f64;
    for k in 0..dim {
        // five standard errors
        assert!(
            mean[k].abs() <= 5.0 * (q[(k, k)] / n as f64).sqrt(),
            "mean {k}: {}",
            mean[k]
        );
        assert!((cov[(k, k)] - q[(k, k)]).abs() <= 5.0 * q[(k, k)] * (2.0 / n as f64).sqrt());
    }
    assert!(relative_frobenius(&cov, &q) < 0.05);
}
