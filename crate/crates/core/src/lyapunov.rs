//! Lyapunov functionals, the generator adjoint `L*`, constant selection and
//! numerical certification of the drift inequalities.
//!
//! Bounded speeds: `phi = (1 - g/(1-C_k) m - g A m psi(m)) e^{-g M}` with
//! `m = v . grad M`, certified against `L* phi <= D - zeta phi`.
//! Maxwellian kernel: `phi = M^2 + 2 m M (1 + chi/(1+chi) psi(m)) + A |v|^2`,
//! certified against `L* phi <= C - Lambda sqrt(phi)`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{self, ChemoField, FieldEval, HypothesisReport};
use crate::kernels::{Kernel, KernelKind};
use crate::pdmp::{self, InitialLaw, Model, ParticleState, PathObserver};
use crate::quadrature;
use crate::rates::{self, PsiKind, PsiSpec};
use crate::rng::{self, Purpose};
use crate::vector::Vector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LyapunovCase {
    BoundedAngle,
    UnboundedMaxwellian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSpec {
    pub case: LyapunovCase,
    pub gamma: f64,
    #[serde(rename = "A")]
    pub a: f64,
    pub c_kappa: f64,
    pub b: u32,
    pub m_star: f64,
    pub chi: f64,
    pub psi: PsiSpec,
    /// Drops the `-gamma A m psi(m)` term of the bounded functional (ablation runs).
    #[serde(default)]
    pub ablate_psi_term: bool,
}

/// A function `phi(x, v)` evaluated from the field data at `x`.
pub trait PhiEval: Sync {
    fn value(&self, fe: &FieldEval, v: &Vector) -> f64;

    /// `v . grad_x phi` in closed form, when available.
    fn transport(&self, _fe: &FieldEval, _v: &Vector) -> Option<f64> {
        None
    }

    /// `int kappa(v, v') phi(x, v') dv'` in closed form, when available.
    fn kernel_mean(&self, _fe: &FieldEval, _v: &Vector, _kernel: &Kernel) -> Option<f64> {
        None
    }
}

/// A closure-backed `phi` with no closed forms; `L*` falls back to finite
/// differences and quadrature.
pub struct FnPhi<F>(pub F);

impl<F: Fn(&FieldEval, &Vector) -> f64 + Sync> PhiEval for FnPhi<F> {
    fn value(&self, fe: &FieldEval, v: &Vector) -> f64 {
        (self.0)(fe, v)
    }
}

/// `E[(g Z) psi(g Z)]` for `Z ~ N(0, 1)`.
pub fn gaussian_m_psi_mean(psi: &PsiSpec, g: f64) -> f64 {
    use std::sync::OnceLock;
    static RULE: OnceLock<quadrature::Rule> = OnceLock::new();
    let rule = RULE.get_or_init(|| quadrature::gauss_legendre(16));
    if g == 0.0 {
        return 0.0;
    }
    if psi.kind == PsiKind::Sign {
        return g.abs() * (2.0 / PI).sqrt();
    }
    // the integrand is even; integrate over z > 0 and double
    let dens = |z: f64| (-0.5 * z * z).exp() / (2.0 * PI).sqrt();
    2.0 * quadrature::composite(0.0, 12.0, 24, rule, |z| dens(z) * g * z * psi.eval(g * z))
}

impl LyapunovSpec {
    fn k(&self) -> f64 {
        self.chi / (1.0 + self.chi)
    }

    /// Bounded functional: `s(m)` and `s'(m)` with `phi = s(m) e^{-gamma M}`.
    fn s_parts(&self, m: f64) -> (f64, f64) {
        let a = self.gamma / (1.0 - self.c_kappa);
        let ap = if self.ablate_psi_term { 0.0 } else { self.a };
        let s = 1.0 - a * m - self.gamma * ap * m * self.psi.eval(m);
        let ds = -a - self.gamma * ap * self.psi.d_m_psi(m);
        (s, ds)
    }

    pub fn phi(&self, field: &ChemoField, x: &Vector, v: &Vector) -> Result<f64> {
        let fe = field.eval(x)?;
        let val = self.value(&fe, v);
        if !(val > 0.0) {
            return Err(Error::ConstantSelection(format!(
                "phi = {val} is not positive at x = {:?}, v = {:?}",
                x.as_slice(),
                v.as_slice()
            )));
        }
        Ok(val)
    }
}

impl PhiEval for LyapunovSpec {
    fn value(&self, fe: &FieldEval, v: &Vector) -> f64 {
        let m = v.dot(&fe.grad);
        match self.case {
            LyapunovCase::BoundedAngle => self.s_parts(m).0 * (-self.gamma * fe.m).exp(),
            LyapunovCase::UnboundedMaxwellian => {
                fe.m * fe.m + 2.0 * m * fe.m * (1.0 + self.k() * self.psi.eval(m)) + self.a * v.norm_sq()
            }
        }
    }

    fn transport(&self, fe: &FieldEval, v: &Vector) -> Option<f64> {
        let m = v.dot(&fe.grad);
        let vhv = fe.hess.quad_form(v);
        Some(match self.case {
            LyapunovCase::BoundedAngle => {
                let (s, ds) = self.s_parts(m);
                (-self.gamma * fe.m).exp() * (ds * vhv - self.gamma * s * m)
            }
            LyapunovCase::UnboundedMaxwellian => {
                let k = self.k();
                2.0 * fe.m * m
                    + 2.0 * m * m * (1.0 + k * self.psi.eval(m))
                    + 2.0 * fe.m * (1.0 + k * self.psi.d_m_psi(m)) * vhv
            }
        })
    }

    fn kernel_mean(&self, fe: &FieldEval, _v: &Vector, kernel: &Kernel) -> Option<f64> {
        match (self.case, kernel.spec().kind) {
            (LyapunovCase::UnboundedMaxwellian, KernelKind::Maxwellian) => {
                let g = fe.grad.norm();
                let d = kernel.dim() as f64;
                Some(fe.m * fe.m + 2.0 * fe.m * self.k() * gaussian_m_psi_mean(&self.psi, g) + self.a * d)
            }
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub tol: f64,
    /// Relative step for the finite-difference transport term.
    pub fd_step: f64,
    pub force_finite_differences: bool,
    pub force_quadrature: bool,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { tol: 1e-10, fd_step: 1e-5, force_finite_differences: false, force_quadrature: false }
    }
}

fn wrap(a: f64) -> f64 {
    let t = (a + PI).rem_euclid(2.0 * PI) - PI;
    if t == -PI {
        PI
    } else {
        t
    }
}

/// `int kappa(v, v') phi(x, v') dv'` by the kernel quadrature, with breaks at
/// the directions where `v' . grad M = 0`.
fn kernel_integral<P: PhiEval + ?Sized>(phi: &P, model: &Model, fe: &FieldEval, v: &Vector, tol: f64) -> Result<f64> {
    let g = &fe.grad;
    let mut breaks = Vec::new();
    if model.dim() == 2 && g.norm() > 0.0 && model.kernel.spec().is_sphere() {
        let base = g.angle() - v.angle();
        breaks.push(wrap(base + 0.5 * PI));
        breaks.push(wrap(base - 0.5 * PI));
    }
    let axis = if g.norm() > 0.0 { Some(g) } else { None };
    // relative to the size of phi, which grows like e^{gamma |x|} in the bounded case
    let scale = 1.0 + phi.value(fe, v).abs();
    model.kernel.integrate(v, |w| phi.value(fe, w), &breaks, axis, tol * scale)
}

fn adjoint_with_eval<P: PhiEval + ?Sized>(
    phi: &P,
    model: &Model,
    x: &Vector,
    fe: &FieldEval,
    v: &Vector,
    q: &QuadratureConfig,
) -> Result<f64> {
    let m = v.dot(&fe.grad);
    let lam = model.rate.lambda(m);
    let tr = match (q.force_finite_differences, phi.transport(fe, v)) {
        (false, Some(t)) => t,
        _ => {
            let speed = v.norm();
            if speed == 0.0 {
                0.0
            } else {
                let h = q.fd_step * (1.0 + x.norm()) / speed;
                let fp = model.field.eval(&x.axpy(h, v))?;
                let fm = model.field.eval(&x.axpy(-h, v))?;
                (phi.value(&fp, v) - phi.value(&fm, v)) / (2.0 * h)
            }
        }
    };
    let mean = match (q.force_quadrature, phi.kernel_mean(fe, v, &model.kernel)) {
        (false, Some(k)) => k,
        _ => kernel_integral(phi, model, fe, v, q.tol)?,
    };
    Ok(tr + lam * (mean - phi.value(fe, v)))
}

/// `L* phi (x, v) = v . grad_x phi + lambda(v . grad M) (int kappa phi - phi)`.
pub fn apply_adjoint<P: PhiEval + ?Sized>(
    phi: &P,
    model: &Model,
    x: &Vector,
    v: &Vector,
    q: &QuadratureConfig,
) -> Result<f64> {
    let fe = model.field.eval(x)?;
    if v.dim() != model.dim() {
        return Err(Error::Input("velocity dimension mismatch".into()));
    }
    adjoint_with_eval(phi, model, x, &fe, v, q)
}

/// Right-hand side of the certified inequality.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftConstants {
    /// `L* phi <= D - zeta phi`.
    Geometric { zeta: f64, #[serde(rename = "D")] d: f64 },
    /// `L* phi <= C - Lambda sqrt(phi)`.
    Subgeometric { #[serde(rename = "C")] c: f64, #[serde(rename = "Lambda")] lambda: f64 },
}

impl DriftConstants {
    /// `rhs - L* phi`; non-negative where the inequality holds.
    pub fn margin(&self, phi: f64, lphi: f64) -> f64 {
        match *self {
            DriftConstants::Geometric { zeta, d } => d - zeta * phi - lphi,
            DriftConstants::Subgeometric { c, lambda } => c - lambda * phi.max(0.0).sqrt() - lphi,
        }
    }
}

/// Which (H3) constant enters `zeta = gamma A (1-chi) m_*^b` in the bounded case.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MStarRule {
    /// The value from the hypothesis report as is.
    Report,
    /// Shrinks `m_*^b` to `lambda_tilde m_*^b / 3`: the far-field drift is carried by
    /// `E[m' psi(m')] >= lambda_tilde |grad M|^b`, and half of it survives against `phi <= 3/2 e^{-gamma M}`.
    #[default]
    AbsorbKernelConstant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectOptions {
    pub m_star_rule: MStarRule,
    /// Use this `gamma` instead of the selected one (bounded case).
    pub gamma_override: Option<f64>,
    /// Relative allowance added to grid maxima for off-grid points.
    pub grid_inflation: f64,
    /// Radial, position-angle and velocity-direction counts of the compact grid.
    pub grid_radii: usize,
    pub grid_angles: usize,
    pub grid_velocities: usize,
    /// Velocity magnitude cap for the Maxwellian case.
    pub v_max: f64,
    pub grid_speeds: usize,
    pub quadrature: QuadratureConfig,
}

impl Default for SelectOptions {
    fn default() -> Self {
        Self {
            m_star_rule: MStarRule::default(),
            gamma_override: None,
            grid_inflation: 0.02,
            grid_radii: 120,
            grid_angles: 48,
            grid_velocities: 48,
            v_max: 6.0,
            grid_speeds: 12,
            quadrature: QuadratureConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub spec: LyapunovSpec,
    pub constants: DriftConstants,
    /// Radius of the compact region of the drift inequality.
    pub r_star: f64,
    pub gamma_cap: Option<f64>,
    pub a_cap: Option<f64>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub lambda_tilde: f64,
    /// The (H3) constant from the hypothesis report, before any `MStarRule` shrinking.
    pub m_star_report: f64,
    pub sup_z_psi_prime: f64,
    pub lip_z_psi: f64,
    /// Grid maximum before inflation (`D` or `C`).
    pub grid_max: f64,
    /// `min (-L* phi / sqrt(phi))` over the far-field grid (Maxwellian case).
    pub far_field_min_ratio: Option<f64>,
}

/// Smallest sampled radius from which `cond(shell)` holds on every sampled shell out to `r_max`.
fn tail_radius<F: Fn(&fields::ShellStats) -> bool>(field: &ChemoField, r0: f64, r_max: f64, cond: F) -> Option<f64> {
    let mut radii = Vec::new();
    let mut r = r0.max(1e-3);
    while r < r_max {
        radii.push(r);
        r *= 1.01;
    }
    radii.push(r_max);
    let ok: Vec<bool> = radii
        .iter()
        .enumerate()
        .map(|(j, &r)| cond(&fields::shell_stats(field, r, 64, (j as f64 * 0.618_033_988_749_894_9).fract())))
        .collect();
    if !ok.last().copied().unwrap_or(false) {
        return None;
    }
    let mut start = radii.len() - 1;
    while start > 0 && ok[start - 1] {
        start -= 1;
    }
    Some(radii[start])
}

fn sample_positions(d: usize, r_lo: f64, r_hi: f64, n_r: usize, n_a: usize, quadratic: bool) -> Vec<Vector> {
    let dirs = fields::sphere_directions(d, if d == 1 { 2 } else { n_a }, 0.5);
    let mut out = Vec::new();
    for i in 0..=n_r {
        let u = i as f64 / n_r as f64;
        let r = r_lo + (r_hi - r_lo) * if quadratic { u * u } else { u };
        if r == 0.0 {
            out.push(Vector::zeros(d));
            continue;
        }
        for dir in &dirs {
            out.push(*dir * r);
        }
    }
    out
}

fn sample_velocities(model: &Model, opts: &SelectOptions) -> Vec<Vector> {
    let d = model.dim();
    let dirs = fields::sphere_directions(d, opts.grid_velocities, 0.0);
    if model.kernel.spec().is_sphere() {
        dirs.into_iter().map(|u| u * model.kernel.v0()).collect()
    } else {
        let mut out = vec![Vector::zeros(d)];
        for i in 1..=opts.grid_speeds {
            let u = i as f64 / opts.grid_speeds as f64;
            // clustered at small speeds, where lambda jumps across m = 0
            let s = opts.v_max * u * u;
            out.extend(dirs.iter().map(|u| *u * s));
        }
        out
    }
}

/// Applies `f(phi, L* phi)` over a product grid and reduces by max.
fn grid_extreme<P: PhiEval, F: Fn(f64, f64) -> f64 + Sync>(
    phi: &P,
    model: &Model,
    xs: &[Vector],
    vs: &[Vector],
    q: &QuadratureConfig,
    f: F,
) -> Result<f64> {
    let vals: Vec<Result<f64>> = xs
        .par_iter()
        .map(|x| {
            let fe = model.field.eval(x)?;
            let mut best = f64::NEG_INFINITY;
            for v in vs {
                let p = phi.value(&fe, v);
                let l = adjoint_with_eval(phi, model, x, &fe, v, q)?;
                best = best.max(f(p, l));
            }
            Ok(best)
        })
        .collect();
    let mut best = f64::NEG_INFINITY;
    for v in vals {
        best = best.max(v?);
    }
    Ok(best)
}

/// Chooses admissible constants for the drift inequality.
///
/// `(b, c)` are the (H2) exponent and constant from [`rates::check_h2`].
pub fn select_constants(
    case: LyapunovCase,
    report: &HypothesisReport,
    model: &Model,
    b: u32,
    c: f64,
    opts: &SelectOptions,
) -> Result<Selection> {
    if !(report.m_star > 0.0) {
        return Err(Error::ConstantSelection("m_star = 0: the field gives no drift to certify".into()));
    }
    let chi = model.rate.chi;
    let psi = model.rate.psi;
    let (sup_zpp, lip) = rates::psi_derived_constants(&psi);
    let g_sup = report.sup_grad;
    let m_star = report.m_star;
    let d = model.dim();
    match case {
        LyapunovCase::BoundedAngle => {
            if !model.kernel.spec().is_sphere() {
                return Err(Error::ConstantSelection("the bounded functional needs a sphere kernel".into()));
            }
            let v0 = model.kernel.v0();
            let c_kappa = model.kernel.c_kappa()?;
            let lambda_tilde = model.kernel.lambda_tilde(b, c)?;
            let k = chi / (1.0 + chi);
            let m_star = match opts.m_star_rule {
                MStarRule::Report => m_star,
                MStarRule::AbsorbKernelConstant => m_star * (lambda_tilde / 3.0).powf(1.0 / b.max(1) as f64),
            };
            let gamma_cap = 1.0 / (4.0 * v0 * g_sup) / (1.0 / (1.0 - c_kappa) + k);
            let a = k;
            let c1 = 1.0 / (1.0 - c_kappa) + a * (1.0 + sup_zpp);
            let c2 = 1.0 / (1.0 - c_kappa) + a;
            let target = a * (1.0 - chi) * m_star.powi(b as i32);
            let gamma = match opts.gamma_override {
                Some(g) => g,
                None => gamma_cap.min(target / (4.0 * c2 * v0 * v0)),
            };
            let zeta = gamma * target;
            let spec = LyapunovSpec {
                case,
                gamma,
                a,
                c_kappa,
                b,
                m_star,
                chi,
                psi,
                ablate_psi_term: false,
            };
            let r_star = tail_radius(&model.field, report.r, 1e7, |s| {
                s.min_grad >= report.m_star && c1 * v0 * v0 * s.max_hess <= target / 4.0
            })
            .ok_or_else(|| Error::ConstantSelection("no radius satisfies the far-field conditions".into()))?;
            let xs = sample_positions(d, 0.0, r_star, opts.grid_radii, opts.grid_angles, true);
            let vs = sample_velocities(model, opts);
            let grid_max = grid_extreme(&spec, model, &xs, &vs, &opts.quadrature, |p, l| l + zeta * p)?;
            let dd = (grid_max * (1.0 + opts.grid_inflation)).max(0.0);
            Ok(Selection {
                spec,
                constants: DriftConstants::Geometric { zeta, d: dd },
                r_star,
                gamma_cap: Some(gamma_cap),
                a_cap: Some(k),
                c1: Some(c1),
                c2: Some(c2),
                lambda_tilde,
                m_star_report: report.m_star,
                sup_z_psi_prime: sup_zpp,
                lip_z_psi: lip,
                grid_max,
                far_field_min_ratio: None,
            })
        }
        LyapunovCase::UnboundedMaxwellian => {
            if model.kernel.spec().kind != KernelKind::Maxwellian {
                return Err(Error::ConstantSelection("the unbounded functional needs the Maxwellian kernel".into()));
            }
            let k = chi / (1.0 + chi);
            let a = 1.0
                + (1.0 / (1.0 - chi))
                    * ((2.0 + 2.0 * k * lip) * report.sup_m_hess + (2.0 + 2.0 * k) * g_sup * g_sup);
            // drift constant of the Maxwellian kernel: inf over |g| in [m_star, sup] of E[m' psi(m')]
            let lambda_tilde = (0..=64)
                .map(|i| gaussian_m_psi_mean(&psi, m_star + (g_sup - m_star).max(0.0) * i as f64 / 64.0))
                .fold(f64::INFINITY, f64::min);
            let spec = LyapunovSpec {
                case,
                gamma: 0.0,
                a,
                c_kappa: 0.0,
                b,
                m_star,
                chi,
                psi,
                ablate_psi_term: false,
            };
            let need = a * (1.0 + chi) * d as f64;
            let r_star = tail_radius(&model.field, report.r, 1e7, |s| {
                s.min_grad >= m_star && k * (1.0 - chi) * lambda_tilde * (-s.max_m).max(0.0) >= need
            })
            .ok_or_else(|| Error::ConstantSelection("no radius where the Maxwellian drift dominates".into()))?;
            let vs = sample_velocities(model, opts);
            let far = sample_positions(d, r_star, 10.0 * r_star, opts.grid_radii, opts.grid_angles, false);
            let ratio = -grid_extreme(&spec, model, &far, &vs, &opts.quadrature, |p, l| l / p.max(1e-300).sqrt())?;
            if !(ratio > 0.0) {
                return Err(Error::ConstantSelection(format!(
                    "L* phi / sqrt(phi) is not negative in the far field (min ratio {ratio})"
                )));
            }
            let lambda = 0.5 * ratio;
            let core = sample_positions(d, 0.0, r_star, opts.grid_radii, opts.grid_angles, true);
            let grid_max = grid_extreme(&spec, model, &core, &vs, &opts.quadrature, |p, l| l + lambda * p.max(0.0).sqrt())?;
            let cc = (grid_max * (1.0 + opts.grid_inflation)).max(0.0);
            Ok(Selection {
                spec,
                constants: DriftConstants::Subgeometric { c: cc, lambda },
                r_star,
                gamma_cap: None,
                a_cap: None,
                c1: None,
                c2: None,
                lambda_tilde,
                m_star_report: report.m_star,
                sup_z_psi_prime: sup_zpp,
                lip_z_psi: lip,
                grid_max,
                far_field_min_ratio: Some(ratio),
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeCounts {
    pub core: u64,
    pub far: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorstProbe {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub phi: f64,
    pub adjoint: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub case: LyapunovCase,
    pub constants: DriftConstants,
    pub r_star: f64,
    pub probe_counts: ProbeCounts,
    pub violations: u64,
    pub worst_margin: f64,
    pub worst_probe: WorstProbe,
    /// Smallest `phi` over the probes.
    pub min_phi: f64,
    /// Probes where `phi` fell below the positivity bound of the functional.
    pub positivity_failures: u64,
}

/// Probe plan: half the probes in `|x| <= 2 R_*`, half in `2 R_* < |x| <= 10 R_*`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbePlan {
    pub n: u64,
    pub seed: u64,
    pub v_max: f64,
}

fn random_unit<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vector {
    loop {
        let mut g = Vector::zeros(d);
        for i in 0..d {
            g[i] = rng.sample(StandardNormal);
        }
        let n = g.norm();
        if n > 1e-12 {
            return g * (1.0 / n);
        }
    }
}

fn probe(i: u64, plan: &ProbePlan, model: &Model, r_star: f64) -> (Vector, Vector, bool) {
    let mut rng = rng::stream(plan.seed, Purpose::Probes, i);
    let d = model.dim();
    let core = i % 2 == 0;
    let u: f64 = rng.random();
    let r = if core { 2.0 * r_star * u } else { r_star * (2.0 + 8.0 * u) };
    let x = random_unit(d, &mut rng) * r;
    let v = if model.kernel.spec().is_sphere() {
        random_unit(d, &mut rng) * model.kernel.v0()
    } else {
        let s: f64 = rng.random::<f64>() * plan.v_max;
        random_unit(d, &mut rng) * s
    };
    (x, v, core)
}

/// Evaluates the drift inequality at every probe.
pub fn verify_drift(spec: &LyapunovSpec, model: &Model, constants: &DriftConstants, r_star: f64, plan: &ProbePlan) -> Result<DriftReport> {
    const CHUNK: u64 = 4096;
    let q = QuadratureConfig::default();
    #[derive(Clone)]
    struct Acc {
        core: u64,
        far: u64,
        violations: u64,
        worst: (f64, u64, f64, f64),
        min_phi: f64,
        positivity: u64,
    }
    let chunks = plan.n.div_ceil(CHUNK);
    let parts: Vec<Result<Acc>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = Acc {
                core: 0,
                far: 0,
                violations: 0,
                worst: (f64::INFINITY, 0, 0.0, 0.0),
                min_phi: f64::INFINITY,
                positivity: 0,
            };
            for i in c * CHUNK..((c + 1) * CHUNK).min(plan.n) {
                let (x, v, core) = probe(i, plan, model, r_star);
                let fe = model.field.eval(&x)?;
                let p = spec.value(&fe, &v);
                let l = adjoint_with_eval(spec, model, &x, &fe, &v, &q)?;
                let margin = constants.margin(p, l);
                if core {
                    acc.core += 1;
                } else {
                    acc.far += 1;
                }
                if !(margin >= 0.0) {
                    acc.violations += 1;
                }
                if margin < acc.worst.0 {
                    acc.worst = (margin, i, p, l);
                }
                acc.min_phi = acc.min_phi.min(p);
                let floor = match spec.case {
                    LyapunovCase::BoundedAngle => 0.5 * (-spec.gamma * fe.m).exp(),
                    LyapunovCase::UnboundedMaxwellian => 0.0,
                };
                if !(p > floor) {
                    acc.positivity += 1;
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total: Option<Acc> = None;
    for p in parts {
        let p = p?;
        total = Some(match total {
            None => p,
            Some(mut t) => {
                t.core += p.core;
                t.far += p.far;
                t.violations += p.violations;
                if p.worst.0 < t.worst.0 {
                    t.worst = p.worst;
                }
                t.min_phi = t.min_phi.min(p.min_phi);
                t.positivity += p.positivity;
                t
            }
        });
    }
    let t = total.ok_or_else(|| Error::Input("probe plan has no probes".into()))?;
    let (x, v, _) = probe(t.worst.1, plan, model, r_star);
    Ok(DriftReport {
        case: spec.case,
        constants: *constants,
        r_star,
        probe_counts: ProbeCounts { core: t.core, far: t.far },
        violations: t.violations,
        worst_margin: t.worst.0,
        worst_probe: WorstProbe { x: x.as_slice().to_vec(), v: v.as_slice().to_vec(), phi: t.worst.2, adjoint: t.worst.3 },
        min_phi: t.min_phi,
        positivity_failures: t.positivity,
    })
}

/// Integral form of a geometric drift over a horizon `tau`:
/// `S_tau phi <= alpha phi + C_int` with `alpha = e^{-zeta tau}`.
pub fn integral_form(zeta: f64, d: f64, tau: f64) -> (f64, f64) {
    let alpha = (-zeta * tau).exp();
    let c_int = if zeta > 0.0 { d * (1.0 - alpha) / zeta } else { d * tau };
    (alpha, c_int)
}

/// `zeta = |log alpha| / tau`.
pub fn zeta_from_integral(alpha: f64, tau: f64) -> f64 {
    alpha.ln().abs() / tau
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MartingalePoint {
    pub t: f64,
    /// Mean of the central difference of `phi` along paths.
    pub d_mean: f64,
    /// Mean of `L* phi` at time `t`.
    pub l_mean: f64,
    /// Mean and standard error of the per-path difference.
    pub diff_mean: f64,
    pub diff_se: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub n: u64,
    pub h: f64,
    pub points: Vec<MartingalePoint>,
    pub pass: bool,
}

struct MartAcc<'a, P: PhiEval> {
    phi: &'a P,
    model: &'a Model,
    n_t: usize,
    /// Per time point: sums of `D`, `L`, `D - L`, `(D - L)^2`.
    sums: Vec<[f64; 4]>,
    err: Option<Error>,
}

impl<P: PhiEval> PathObserver for MartAcc<'_, P> {
    fn observe(&mut self, _index: u64, states: &[ParticleState]) {
        if self.err.is_some() {
            return;
        }
        let q = QuadratureConfig::default();
        for j in 0..self.n_t {
            let (lo, mid, hi) = (&states[3 * j], &states[3 * j + 1], &states[3 * j + 2]);
            let val = |s: &ParticleState| self.model.field.eval(&s.x).map(|fe| self.phi.value(&fe, &s.v));
            let res = (|| -> Result<(f64, f64)> {
                let h2 = hi.t - lo.t;
                let dphi = (val(hi)? - val(lo)?) / h2;
                let fe = self.model.field.eval(&mid.x)?;
                let l = adjoint_with_eval(self.phi, self.model, &mid.x, &fe, &mid.v, &q)?;
                Ok((dphi, l))
            })();
            match res {
                Ok((dd, l)) => {
                    let s = &mut self.sums[j];
                    s[0] += dd;
                    s[1] += l;
                    s[2] += dd - l;
                    s[3] += (dd - l) * (dd - l);
                }
                Err(e) => {
                    self.err = Some(e);
                    return;
                }
            }
        }
    }

    fn merge(&mut self, other: Self) {
        if self.err.is_none() {
            self.err = other.err;
        }
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            for k in 0..4 {
                a[k] += b[k];
            }
        }
    }
}

/// Compares `d/dt E[phi(Z_t)]` (central differences with half-width `h`)
/// with `E[L* phi(Z_t)]` along `n` simulated paths.
pub fn martingale_check<P: PhiEval>(
    phi: &P,
    model: &Model,
    init: &InitialLaw,
    n: u64,
    times: &[f64],
    h: f64,
    seed: u64,
) -> Result<MartingaleReport> {
    if times.iter().any(|&t| t < h) {
        return Err(Error::Input("every check time must be at least h".into()));
    }
    let mut all = Vec::with_capacity(3 * times.len());
    for &t in times {
        all.extend([t - h, t, t + h]);
    }
    if all.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Input("check times must be sorted and at least 2h apart".into()));
    }
    let (acc, _) = pdmp::run_ensemble(model, init, n, &all, seed, || MartAcc {
        phi,
        model,
        n_t: times.len(),
        sums: vec![[0.0; 4]; times.len()],
        err: None,
    })?;
    if let Some(e) = acc.err {
        return Err(e);
    }
    let nf = n as f64;
    let points: Vec<MartingalePoint> = times
        .iter()
        .zip(&acc.sums)
        .map(|(&t, s)| {
            let mean = s[2] / nf;
            let var = (s[3] / nf - mean * mean).max(0.0) * nf / (nf - 1.0).max(1.0);
            let se = (var / nf).sqrt();
            MartingalePoint {
                t,
                d_mean: s[0] / nf,
                l_mean: s[1] / nf,
                diff_mean: mean,
                diff_se: se,
                pass: mean.abs() <= 3.0 * se,
            }
        })
        .collect();
    let pass = points.iter().all(|p| p.pass);
    Ok(MartingaleReport { n, h, points, pass })
}
