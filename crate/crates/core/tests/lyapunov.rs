use std::f64::consts::PI;

use proptest::prelude::*;
use runtumble::fields::{self, ChemoField, FieldEval};
use runtumble::kernels::{AngleShape, Kernel, KernelSpec};
use runtumble::lyapunov::*;
use runtumble::pdmp::{InitialLaw, Model, VelocityLaw};
use runtumble::rates::{self, PsiSpec, RateSpec};
use runtumble::vector::Vector;
use runtumble::Error;

fn bounded_model() -> Model {
    Model::new(
        ChemoField::sqrt_radial(2, 0.0, 1.0),
        RateSpec::new(0.5, PsiSpec::sign()).unwrap(),
        Kernel::new(KernelSpec::angle_dependent(2, 1.0, PI / 3.0, AngleShape::BoxcarInAngle)).unwrap(),
    )
    .unwrap()
}

fn maxwellian_model(psi: PsiSpec) -> Model {
    Model::new(
        ChemoField::sqrt_radial(2, 0.0, 1.0),
        RateSpec::new(0.5, psi).unwrap(),
        Kernel::new(KernelSpec::maxwellian(2)).unwrap(),
    )
    .unwrap()
}

fn select_with(case: LyapunovCase, model: &Model, opts: &SelectOptions) -> Selection {
    let report = fields::check_hypotheses(&model.field, 100.0, 64).unwrap();
    let (b, c) = rates::check_h2(&model.rate.psi, 10.0, &[1, 2, 3]).unwrap();
    select_constants(case, &report, model, b, c, opts).unwrap()
}

fn select(case: LyapunovCase, model: &Model) -> Selection {
    select_with(case, model, &SelectOptions::default())
}

fn v(xs: &[f64]) -> Vector {
    Vector::from_slice(xs).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

#[test]
fn exp_minus_gamma_m_has_the_transport_only_adjoint() {
    let model = bounded_model();
    let gamma = 0.1;
    let phi = FnPhi(move |fe: &FieldEval, _v: &Vector| (-gamma * fe.m).exp());
    for (x, th) in [([3.0, -1.0], 0.3), ([0.2, 0.1], 2.0), ([-20.0, 7.0], -1.2)] {
        let x = v(&x);
        let vel = Vector::polar(1.0, th);
        let fe = model.field.eval(&x).unwrap();
        let expect = -gamma * vel.dot(&fe.grad) * (-gamma * fe.m).exp();
        let got = apply_adjoint(&phi, &model, &x, &vel, &QuadratureConfig::default()).unwrap();
        assert!(rel(got, expect) < 1e-7, "{got} vs {expect}");
    }
}

#[test]
fn adjoint_of_m_squared() {
    let model = maxwellian_model(PsiSpec::sign());
    let phi = FnPhi(|fe: &FieldEval, _v: &Vector| fe.m * fe.m);
    for (x, vel) in [([1.0, 2.0], [0.5, -0.3]), ([-4.0, 0.5], [2.0, 1.0])] {
        let (x, vel) = (v(&x), v(&vel));
        let fe = model.field.eval(&x).unwrap();
        let expect = 2.0 * vel.dot(&fe.grad) * fe.m;
        let got = apply_adjoint(&phi, &model, &x, &vel, &QuadratureConfig::default()).unwrap();
        assert!(rel(got, expect) < 1e-7, "{got} vs {expect}");
    }
}

#[test]
fn bounded_phi_at_a_critical_point_is_the_exponential() {
    let sel = select(LyapunovCase::BoundedAngle, &bounded_model());
    let field = ChemoField::sqrt_radial(2, 0.0, 1.0);
    let got = sel.spec.phi(&field, &v(&[0.0, 0.0]), &v(&[0.6, 0.8])).unwrap();
    assert!((got - (sel.spec.gamma).exp()).abs() < 1e-15);
}

#[test]
fn bounded_phi_lower_bound_at_the_cap() {
    let model = bounded_model();
    // read the cap, then rerun with gamma pinned to it
    let cap = select(LyapunovCase::BoundedAngle, &model).gamma_cap.unwrap();
    let opts = SelectOptions { gamma_override: Some(cap), ..Default::default() };
    let sel = select_with(LyapunovCase::BoundedAngle, &model, &opts);
    for i in 0..400 {
        let x = Vector::polar(0.5 + i as f64, 0.37 * i as f64);
        for j in 0..32 {
            let vel = Vector::polar(1.0, 2.0 * PI * j as f64 / 32.0);
            let fe = model.field.eval(&x).unwrap();
            let p = sel.spec.value(&fe, &vel);
            assert!(p >= 0.5 * (-cap * fe.m).exp());
        }
    }
}

#[test]
fn maxwellian_phi_at_rest_is_m_squared() {
    let sel = select(LyapunovCase::UnboundedMaxwellian, &maxwellian_model(PsiSpec::sign()));
    let field = ChemoField::sqrt_radial(2, 0.0, 1.0);
    let x = v(&[3.0, 4.0]);
    let m = field.eval(&x).unwrap().m;
    assert!((sel.spec.phi(&field, &x, &v(&[0.0, 0.0])).unwrap() - m * m).abs() < 1e-12);
}

#[test]
fn maxwellian_phi_is_coercive_on_the_probe_grid() {
    let model = maxwellian_model(PsiSpec::sign());
    let sel = select(LyapunovCase::UnboundedMaxwellian, &model);
    let mut eps = f64::INFINITY;
    for i in 0..200 {
        let x = Vector::polar(i as f64 * 5.0, 0.61 * i as f64);
        let fe = model.field.eval(&x).unwrap();
        for j in 0..24 {
            for s in [0.0, 0.5, 1.0, 3.0, 6.0] {
                let vel = Vector::polar(s, 2.0 * PI * j as f64 / 24.0);
                let p = sel.spec.value(&fe, &vel);
                eps = eps.min(p / (fe.m * fe.m + vel.norm_sq()));
            }
        }
    }
    assert!(eps > 0.0, "{eps}");
}

#[test]
fn gamma_cap_example() {
    let model = Model::new(
        ChemoField::sqrt_radial(2, 0.0, 1.0),
        RateSpec::new(0.5, PsiSpec::sign()).unwrap(),
        Kernel::new(KernelSpec::uniform_sphere(2, 1.0)).unwrap(),
    )
    .unwrap();
    let sel = select(LyapunovCase::BoundedAngle, &model);
    // the sampled sup of |grad M| sits just below 1
    assert!((sel.gamma_cap.unwrap() - 0.1875).abs() < 1e-4);
    assert!((sel.a_cap.unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert!(sel.spec.gamma <= sel.gamma_cap.unwrap());
}

#[test]
fn unbounded_a_from_report_values() {
    let model = maxwellian_model(PsiSpec::sign());
    let report = fields::check_hypotheses(&model.field, 100.0, 64).unwrap();
    let sel = select(LyapunovCase::UnboundedMaxwellian, &model);
    let expect = 1.0 + 2.0 * ((2.0 + 2.0 / 3.0) * report.sup_m_hess + (2.0 + 2.0 / 3.0) * report.sup_grad.powi(2));
    assert!((sel.spec.a - expect).abs() < 1e-9 * expect, "{} {}", sel.spec.a, expect);
}

#[test]
fn zeta_positive_and_d_nonnegative() {
    let sel = select(LyapunovCase::BoundedAngle, &bounded_model());
    let DriftConstants::Geometric { zeta, d } = sel.constants else { panic!() };
    assert!(zeta > 0.0 && d >= 0.0);
    let s = &sel.spec;
    assert!((zeta - s.gamma * s.a * (1.0 - s.chi) * s.m_star.powi(s.b as i32)).abs() < 1e-15);
}

#[test]
fn flat_field_cannot_be_certified() {
    let model = Model::new(
        ChemoField::constant(2, 0.0),
        RateSpec::new(0.5, PsiSpec::sign()).unwrap(),
        Kernel::new(KernelSpec::uniform_sphere(2, 1.0)).unwrap(),
    )
    .unwrap();
    let report = fields::check_hypotheses(&model.field, 100.0, 16).unwrap();
    let err = select_constants(LyapunovCase::BoundedAngle, &report, &model, 1, 1.0, &SelectOptions::default()).unwrap_err();
    assert!(matches!(err, Error::ConstantSelection(_)));
}

#[test]
fn bounded_drift_holds_and_ablation_breaks_it() {
    let model = bounded_model();
    let sel = select(LyapunovCase::BoundedAngle, &model);
    let plan = ProbePlan { n: 20_000, seed: 3, v_max: 6.0 };
    let rep = verify_drift(&sel.spec, &model, &sel.constants, sel.r_star, &plan).unwrap();
    assert_eq!(rep.violations, 0, "{rep:?}");
    assert_eq!(rep.positivity_failures, 0);
    assert_eq!(rep.probe_counts.core + rep.probe_counts.far, 20_000);
    let mut ablated = sel.spec.clone();
    ablated.ablate_psi_term = true;
    let rep = verify_drift(&ablated, &model, &sel.constants, sel.r_star, &plan).unwrap();
    assert!(rep.violations > 0);
    let x = v(&rep.worst_probe.x);
    assert!(x.norm() > 2.0 * sel.r_star, "ablation failure should sit in the far field");
}

#[test]
fn report_m_star_overstates_the_bounded_rate() {
    // with the raw (H3) constant the geometric rate is too large for the far field
    let model = bounded_model();
    let opts = SelectOptions { m_star_rule: MStarRule::Report, ..Default::default() };
    let sel = select_with(LyapunovCase::BoundedAngle, &model, &opts);
    let plan = ProbePlan { n: 20_000, seed: 3, v_max: 6.0 };
    let rep = verify_drift(&sel.spec, &model, &sel.constants, sel.r_star, &plan).unwrap();
    assert!(rep.violations > 0);
}

#[test]
fn maxwellian_drift_holds() {
    let model = maxwellian_model(PsiSpec::sign());
    let sel = select(LyapunovCase::UnboundedMaxwellian, &model);
    let plan = ProbePlan { n: 20_000, seed: 4, v_max: 6.0 };
    let rep = verify_drift(&sel.spec, &model, &sel.constants, sel.r_star, &plan).unwrap();
    assert_eq!(rep.violations, 0, "{rep:?}");
}

#[test]
fn drift_report_json_fields() {
    let model = maxwellian_model(PsiSpec::sign());
    let sel = select(LyapunovCase::UnboundedMaxwellian, &model);
    let plan = ProbePlan { n: 100, seed: 4, v_max: 6.0 };
    let rep = verify_drift(&sel.spec, &model, &sel.constants, sel.r_star, &plan).unwrap();
    let js = serde_json::to_value(&rep).unwrap();
    for key in ["case", "constants", "probe_counts", "violations", "worst_margin", "worst_probe"] {
        assert!(js.get(key).is_some(), "{key}");
    }
    let back: DriftReport = serde_json::from_value(js).unwrap();
    assert_eq!(back, rep);
}

#[test]
fn integral_form_roundtrip() {
    for (zeta, d, tau) in [(0.3, 2.0, 1.0), (1e-3, 0.5, 10.0), (2.0, 0.0, 0.25)] {
        let (alpha, c) = integral_form(zeta, d, tau);
        assert!(alpha > 0.0 && alpha < 1.0 && c >= 0.0);
        assert!((zeta_from_integral(alpha, tau) - zeta).abs() < 0.1 * zeta);
    }
}

#[test]
fn martingale_link_small() {
    let model = bounded_model();
    let sel = select(LyapunovCase::BoundedAngle, &model);
    let mut spec = sel.spec.clone();
    spec.gamma = sel.gamma_cap.unwrap();
    let init = InitialLaw::Gaussian { centre: vec![4.0, -2.0], std: 2.0, velocity: VelocityLaw::UniformSphere { speed: 1.0 } };
    let rep = martingale_check(&spec, &model, &init, 20_000, &[0.5, 1.5], 0.05, 11).unwrap();
    assert!(rep.pass, "{rep:?}");
}

/// `c1 e^{-M/10} (1 + 0.3 m) + c2 (M^2 + v_0 dM/dx_1)` with its transport term in closed form.
struct Combo(f64, f64);

impl PhiEval for Combo {
    fn value(&self, fe: &FieldEval, w: &Vector) -> f64 {
        let m = w.dot(&fe.grad);
        self.0 * (-0.1 * fe.m).exp() * (1.0 + 0.3 * m) + self.1 * (fe.m * fe.m + w[0] * fe.grad[1])
    }

    fn transport(&self, fe: &FieldEval, w: &Vector) -> Option<f64> {
        let m = w.dot(&fe.grad);
        let hv = fe.hess.mul_vec(w);
        let t1 = (-0.1 * fe.m).exp() * (-0.1 * m * (1.0 + 0.3 * m) + 0.3 * w.dot(&hv));
        let t2 = 2.0 * fe.m * m + w[0] * hv[1];
        Some(self.0 * t1 + self.1 * t2)
    }
}

#[test]
fn combo_transport_matches_finite_differences() {
    let model = bounded_model();
    let q = QuadratureConfig::default();
    let fd = QuadratureConfig { force_finite_differences: true, ..q };
    let x = v(&[2.0, -3.0]);
    let vel = Vector::polar(1.0, 0.4);
    let a = apply_adjoint(&Combo(1.0, 0.5), &model, &x, &vel, &q).unwrap();
    let b = apply_adjoint(&Combo(1.0, 0.5), &model, &x, &vel, &fd).unwrap();
    assert!(rel(a, b) < 1e-6, "{a} {b}");
}

fn bounded_spec_for_props() -> (Model, LyapunovSpec) {
    let model = bounded_model();
    let sel = select(LyapunovCase::BoundedAngle, &model);
    let mut spec = sel.spec;
    spec.gamma = sel.gamma_cap.unwrap();
    (model, spec)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn analytic_transport_matches_finite_differences_bounded(r in 0.5f64..300.0, a in -PI..PI, th in -PI..PI) {
        let (model, spec) = bounded_spec_for_props();
        let x = Vector::polar(r, a);
        let vel = Vector::polar(1.0, th);
        let q = QuadratureConfig::default();
        let fd = QuadratureConfig { force_finite_differences: true, ..q };
        let l1 = apply_adjoint(&spec, &model, &x, &vel, &q).unwrap();
        let l2 = apply_adjoint(&spec, &model, &x, &vel, &fd).unwrap();
        let scale = spec.phi(&model.field, &x, &vel).unwrap();
        prop_assert!((l1 - l2).abs() <= 1e-5 * l1.abs().max(scale * 1e-3), "{} {}", l1, l2);
    }

    #[test]
    fn analytic_paths_match_generic_paths_maxwellian(r in 0.0f64..400.0, a in -PI..PI, s in 0.0f64..6.0, th in -PI..PI, tanh in any::<bool>()) {
        let psi = if tanh { PsiSpec::tanh(2.0) } else { PsiSpec::sign() };
        let model = maxwellian_model(psi);
        let spec = LyapunovSpec {
            case: LyapunovCase::UnboundedMaxwellian, gamma: 0.0, a: 11.0, c_kappa: 0.0, b: 1,
            m_star: 0.8, chi: 0.5, psi, ablate_psi_term: false,
        };
        let x = Vector::polar(r, a);
        let vel = Vector::polar(s, th);
        let q = QuadratureConfig::default();
        let generic = QuadratureConfig { force_finite_differences: true, force_quadrature: true, ..q };
        let l1 = apply_adjoint(&spec, &model, &x, &vel, &q).unwrap();
        let l2 = apply_adjoint(&spec, &model, &x, &vel, &generic).unwrap();
        let scale = spec.phi(&model.field, &x, &vel).unwrap();
        prop_assert!((l1 - l2).abs() <= 1e-5 * l1.abs().max(scale * 1e-3), "{} {}", l1, l2);
    }

    #[test]
    fn adjoint_is_linear(r in 0.0f64..50.0, a in -PI..PI, th in -PI..PI, c1 in -3.0f64..3.0, c2 in -3.0f64..3.0) {
        let model = bounded_model();
        let x = Vector::polar(r, a);
        let vel = Vector::polar(1.0, th);
        let q = QuadratureConfig::default();
        let l1 = apply_adjoint(&Combo(1.0, 0.0), &model, &x, &vel, &q).unwrap();
        let l2 = apply_adjoint(&Combo(0.0, 1.0), &model, &x, &vel, &q).unwrap();
        let l12 = apply_adjoint(&Combo(c1, c2), &model, &x, &vel, &q).unwrap();
        let scale = 1.0 + (c1 * l1).abs() + (c2 * l2).abs();
        prop_assert!((l12 - c1 * l1 - c2 * l2).abs() <= 1e-10 * scale, "{} {}", l12, c1 * l1 + c2 * l2);
    }

    #[test]
    fn bounded_phi_stays_within_its_envelope(r in 0.0f64..5000.0, a in -PI..PI, th in -PI..PI) {
        let (model, spec) = bounded_spec_for_props();
        let x = Vector::polar(r, a);
        let fe = model.field.eval(&x).unwrap();
        let p = spec.value(&fe, &Vector::polar(1.0, th));
        let e = (-spec.gamma * fe.m).exp();
        prop_assert!(p >= 0.5 * e && p <= 1.5 * e);
    }
}
