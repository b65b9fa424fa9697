//! Tumbling kernels `kappa(v, v')`: densities, exact samplers, and the drift
//! constants `C_kappa` and `lambda_tilde`.
//!
//! Sphere kernels live on `V0 S^{d-1}` (`d = 2, 3`) and depend on `v, v'`
//! only through the turning angle `theta`. The angular profile `kappa1` is
//! normalised against the surface measure of the unit sphere, so in `d = 2`
//! `int_{-pi}^{pi} kappa1 = 1` and the density w.r.t. arc length on the
//! circle of radius `V0` is `kappa1(theta) / V0`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{self, Rule};
use crate::vector::Vector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    UniformSphere,
    AngleDependent,
    Maxwellian,
}

/// Angular profiles for [`KernelKind::AngleDependent`], all even and
/// non-increasing in `|theta|`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleShape {
    /// Constant on `|theta| < alpha`.
    BoxcarInAngle,
    /// `1 + cos(pi theta / (2 alpha))` on `|theta| < 2 alpha`.
    RaisedCosine,
    /// `exp(cos theta)` on the whole sphere.
    ExpCosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    #[serde(default = "unit", rename = "v0")]
    pub v0: f64,
    pub dim: usize,
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Lower bound on `kappa1` inside the cone; derived from the profile when absent.
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub shape: Option<AngleShape>,
}

fn unit() -> f64 {
    1.0
}

impl KernelSpec {
    pub fn uniform_sphere(dim: usize, v0: f64) -> Self {
        Self { kind: KernelKind::UniformSphere, v0, dim, alpha: None, beta: None, shape: None }
    }

    pub fn angle_dependent(dim: usize, v0: f64, alpha: f64, shape: AngleShape) -> Self {
        Self {
            kind: KernelKind::AngleDependent,
            v0,
            dim,
            alpha: Some(alpha),
            beta: None,
            shape: Some(shape),
        }
    }

    pub fn maxwellian(dim: usize) -> Self {
        Self { kind: KernelKind::Maxwellian, v0: 1.0, dim, alpha: None, beta: None, shape: None }
    }

    pub fn is_sphere(&self) -> bool {
        self.kind != KernelKind::Maxwellian
    }
}

const TABLE_INTERVALS: usize = 2048;

/// A validated kernel with its normalisation and sampling table.
#[derive(Clone, Debug)]
pub struct Kernel {
    spec: KernelSpec,
    /// `kappa1 = profile / norm`.
    norm: f64,
    /// Angular support `[0, support]` of the profile.
    support: f64,
    /// Cumulative mass of `profile * jacobian` at the table nodes.
    cdf: Vec<f64>,
    rule: Rule,
    beta: f64,
}

/// `|S^{k}|`, surface area of the unit `k`-sphere (`|S^0| = 2`).
pub fn sphere_area(k: usize) -> f64 {
    match k {
        0 => 2.0,
        1 => 2.0 * PI,
        2 => 4.0 * PI,
        _ => 2.0 * PI / (k as f64 - 1.0) * sphere_area(k - 2),
    }
}

impl Kernel {
    pub fn new(spec: KernelSpec) -> Result<Self> {
        if !(1..=crate::vector::MAX_DIM).contains(&spec.dim) {
            return Err(Error::Config(format!("kernel dimension {} not in 1..=3", spec.dim)));
        }
        let rule = quadrature::gauss_legendre(16);
        let mut k = Kernel { spec: spec.clone(), norm: 1.0, support: PI, cdf: Vec::new(), rule, beta: 0.0 };
        match spec.kind {
            KernelKind::Maxwellian => {
                // kappa2 >= (2 pi)^{-d/2} e^{-V0^2/2} on the ball of radius V0
                k.beta = (2.0 * PI).powf(-(spec.dim as f64) / 2.0) * (-0.5 * spec.v0 * spec.v0).exp();
                return Ok(k);
            }
            KernelKind::UniformSphere | KernelKind::AngleDependent => {
                if !(spec.dim == 2 || spec.dim == 3) {
                    return Err(Error::Config("sphere kernels need dim 2 or 3".into()));
                }
                if !(spec.v0 > 0.0) {
                    return Err(Error::Config("V0 must be positive".into()));
                }
            }
        }
        if spec.kind == KernelKind::AngleDependent {
            let alpha = spec
                .alpha
                .ok_or_else(|| Error::Config("angle-dependent kernel needs alpha".into()))?;
            if !(alpha > 0.0 && alpha < PI / 2.0) {
                return Err(Error::Config(format!("alpha = {alpha} must lie in (0, pi/2)")));
            }
            let shape = spec
                .shape
                .ok_or_else(|| Error::Config("angle-dependent kernel needs a shape".into()))?;
            k.support = match shape {
                AngleShape::BoxcarInAngle => alpha,
                AngleShape::RaisedCosine => 2.0 * alpha,
                AngleShape::ExpCosine => PI,
            };
        }
        // normalise profile * jacobian over the sphere
        let jac_mass = quadrature::adaptive(|t| k.profile(t) * k.jacobian(t), 0.0, k.support, 1e-13)?;
        k.norm = k.orbit_factor() * jac_mass;
        k.build_table();
        let inside = match spec.kind {
            KernelKind::AngleDependent => {
                let alpha = spec.alpha.unwrap();
                // non-increasing profile: the infimum on |theta| < alpha is the left limit at alpha
                k.kappa1(alpha * (1.0 - 1e-12))
            }
            _ => k.kappa1(0.0),
        };
        if let Some(beta) = spec.beta {
            if !(beta > 0.0) || beta > inside * (1.0 + 1e-12) {
                return Err(Error::Config(format!(
                    "beta = {beta} is not a lower bound of kappa1 on the cone (inf = {inside})"
                )));
            }
            k.beta = beta;
        } else {
            k.beta = inside;
        }
        Ok(k)
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn v0(&self) -> f64 {
        self.spec.v0
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Largest turning angle with positive density.
    pub fn support(&self) -> f64 {
        self.support
    }

    /// Measure of the orbit of one turning angle (d=2: the two signs; d=3: the azimuth circle).
    fn orbit_factor(&self) -> f64 {
        sphere_area(self.spec.dim - 2)
    }

    fn jacobian(&self, theta: f64) -> f64 {
        if self.spec.dim == 2 {
            1.0
        } else {
            theta.sin()
        }
    }

    /// Unnormalised angular profile for `theta in [0, pi]`.
    fn profile(&self, theta: f64) -> f64 {
        let t = theta.abs();
        match self.spec.kind {
            KernelKind::UniformSphere => 1.0,
            KernelKind::Maxwellian => 0.0,
            KernelKind::AngleDependent => {
                let alpha = self.spec.alpha.unwrap();
                match self.spec.shape.unwrap() {
                    AngleShape::BoxcarInAngle => {
                        if t < alpha {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    AngleShape::RaisedCosine => {
                        if t < 2.0 * alpha {
                            1.0 + (PI * t / (2.0 * alpha)).cos()
                        } else {
                            0.0
                        }
                    }
                    AngleShape::ExpCosine => t.cos().exp(),
                }
            }
        }
    }

    /// Normalised angular profile `kappa1(theta)`.
    #[inline]
    pub fn kappa1(&self, theta: f64) -> f64 {
        self.profile(theta) / self.norm
    }

    fn build_table(&mut self) {
        let h = self.support / TABLE_INTERVALS as f64;
        let mut cdf = Vec::with_capacity(TABLE_INTERVALS + 1);
        cdf.push(0.0);
        let mut acc = 0.0;
        for i in 0..TABLE_INTERVALS {
            let a = i as f64 * h;
            acc += self.rule.integrate(a, a + h, |t| self.profile(t) * self.jacobian(t));
            cdf.push(acc);
        }
        self.cdf = cdf;
    }

    fn check_on_sphere(&self, v: &Vector) -> Result<()> {
        if v.dim() != self.spec.dim {
            return Err(Error::Input(format!("velocity dimension {} != {}", v.dim(), self.spec.dim)));
        }
        if self.spec.is_sphere() && (v.norm() - self.spec.v0).abs() > 1e-12 * self.spec.v0.max(1.0) {
            return Err(Error::Input(format!("|v| = {} is off the sphere of radius {}", v.norm(), self.spec.v0)));
        }
        Ok(())
    }

    /// Density of `v'` given `v` w.r.t. the kind's reference measure.
    pub fn density(&self, v: &Vector, v_prime: &Vector) -> Result<f64> {
        self.check_on_sphere(v)?;
        self.check_on_sphere(v_prime)?;
        Ok(self.density_unchecked(v, v_prime))
    }

    pub fn density_unchecked(&self, v: &Vector, v_prime: &Vector) -> f64 {
        match self.spec.kind {
            KernelKind::Maxwellian => {
                (2.0 * PI).powf(-(self.spec.dim as f64) / 2.0) * (-0.5 * v_prime.norm_sq()).exp()
            }
            _ => {
                let v02 = self.spec.v0 * self.spec.v0;
                let c = (v.dot(v_prime) / v02).clamp(-1.0, 1.0);
                self.kappa1(c.acos()) / self.spec.v0.powi(self.spec.dim as i32 - 1)
            }
        }
    }

    /// Draws `|theta|` by exact inversion of the tabulated angular CDF.
    fn sample_turn_angle<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.spec.kind == KernelKind::AngleDependent && self.spec.shape == Some(AngleShape::BoxcarInAngle) && self.spec.dim == 2 {
            return rng.random::<f64>() * self.support;
        }
        let total = *self.cdf.last().unwrap();
        let target = rng.random::<f64>() * total;
        let k = match self.cdf.binary_search_by(|c| c.total_cmp(&target)) {
            Ok(i) => i.min(TABLE_INTERVALS - 1),
            Err(i) => i.saturating_sub(1).min(TABLE_INTERVALS - 1),
        };
        let h = self.support / TABLE_INTERVALS as f64;
        let (mut lo, mut hi) = (k as f64 * h, (k + 1) as f64 * h);
        let base = self.cdf[k];
        let g = |t: f64| self.profile(t) * self.jacobian(t);
        let partial = |t: f64| base + self.rule.integrate(k as f64 * h, t, g);
        let mut t = 0.5 * (lo + hi);
        for _ in 0..60 {
            let f = partial(t) - target;
            if f > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let dg = g(t);
            let newton = if dg > 0.0 { t - f / dg } else { f64::NAN };
            t = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if (hi - lo) < 1e-15 || f.abs() < 1e-16 * total {
                break;
            }
        }
        t
    }

    /// Post-tumble velocity with law `kappa(v, .)`.
    pub fn sample_post_velocity<R: Rng + ?Sized>(&self, v: &Vector, rng: &mut R) -> Vector {
        let d = self.spec.dim;
        match self.spec.kind {
            KernelKind::Maxwellian => {
                let mut out = Vector::zeros(d);
                for i in 0..d {
                    out[i] = rng.sample(StandardNormal);
                }
                out
            }
            KernelKind::UniformSphere if d == 2 => {
                Vector::polar(self.spec.v0, PI * (2.0 * rng.random::<f64>() - 1.0))
            }
            _ => {
                let theta = self.sample_turn_angle(rng);
                if d == 2 {
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    Vector::polar(self.spec.v0, v.angle() + sign * theta)
                } else {
                    let phi = 2.0 * PI * rng.random::<f64>();
                    rotate_3d(v, self.spec.v0, theta, phi)
                }
            }
        }
    }

    /// `C_kappa = |S^{d-2}| int_0^pi kappa1 cos(theta) sin^{d-2}(theta)`; zero for the Maxwellian.
    pub fn c_kappa(&self) -> Result<f64> {
        if !self.spec.is_sphere() {
            return Ok(0.0);
        }
        let val = quadrature::adaptive(
            |t| self.kappa1(t) * t.cos() * self.jacobian(t),
            0.0,
            self.support,
            1e-13,
        )?;
        Ok(self.orbit_factor() * val)
    }

    /// Lower bound `lambda_tilde` with `int kappa m' psi(m') >= lambda_tilde |grad M|^b`
    /// (unit speed), given `m psi(m) >= c |m|^b`.
    pub fn lambda_tilde(&self, b: u32, c: f64) -> Result<f64> {
        if !self.spec.is_sphere() {
            return Err(Error::NotApplicable(
                "lambda_tilde is defined for sphere kernels only; the Maxwellian case uses a different drift".into(),
            ));
        }
        let bf = b as f64;
        let d = self.spec.dim;
        if d == 2 {
            let v = quadrature::adaptive(|t| self.kappa1(t) * t.sin().abs().powf(bf), 0.0, self.support, 1e-13)?;
            return Ok(c * 2.0 * v);
        }
        let azim = quadrature::adaptive(
            |p| p.cos().abs().powf(bf) * p.sin().powi(d as i32 - 3),
            0.0,
            PI,
            1e-13,
        )?;
        let polar = quadrature::adaptive(
            |t| self.kappa1(t) * t.sin().abs().powf(d as f64 - 2.0 + bf),
            0.0,
            self.support,
            1e-13,
        )?;
        Ok(c * sphere_area(d - 3) * azim * polar)
    }

    /// `int kappa(v, v') f(v') dv'` by quadrature.
    ///
    /// `breaks` are extra turning angles (signed, d=2) where `f` has kinks;
    /// `axis` orients the Maxwellian rule (integrands with a kink across the
    /// hyperplane orthogonal to `axis`).
    pub fn integrate<F: FnMut(&Vector) -> f64>(
        &self,
        v: &Vector,
        mut f: F,
        breaks: &[f64],
        axis: Option<&Vector>,
        tol: f64,
    ) -> Result<f64> {
        let d = self.spec.dim;
        match self.spec.kind {
            KernelKind::Maxwellian => Ok(maxwellian_integrate(d, axis, f)),
            _ if d == 2 => {
                let base = v.angle();
                let s = self.support;
                let mut br: Vec<f64> = breaks.to_vec();
                br.push(0.0);
                if self.spec.kind == KernelKind::AngleDependent {
                    br.push(-self.spec.alpha.unwrap());
                    br.push(self.spec.alpha.unwrap());
                }
                quadrature::adaptive_with_breaks(
                    |t| self.kappa1(t) * f(&Vector::polar(self.spec.v0, base + t)),
                    -s,
                    s,
                    &br,
                    tol,
                )
            }
            _ => {
                // polar angle adaptively, azimuth by a periodic trapezoid rule
                let n_az = 64;
                quadrature::adaptive(
                    |t| {
                        let mut acc = 0.0;
                        for j in 0..n_az {
                            let phi = 2.0 * PI * (j as f64 + 0.5) / n_az as f64;
                            acc += f(&rotate_3d(v, self.spec.v0, t, phi));
                        }
                        self.kappa1(t) * t.sin() * acc * 2.0 * PI / n_az as f64
                    },
                    0.0,
                    self.support,
                    tol,
                )
            }
        }
    }
}

/// `speed * (cos theta * v_hat + sin theta * (cos phi e1 + sin phi e2))`.
fn rotate_3d(v: &Vector, speed: f64, theta: f64, phi: f64) -> Vector {
    let n = v.norm();
    let vh = if n > 0.0 { *v * (1.0 / n) } else { Vector::from_slice(&[0.0, 0.0, 1.0]).unwrap() };
    let helper = if vh[0].abs() < 0.9 {
        Vector::from_slice(&[1.0, 0.0, 0.0]).unwrap()
    } else {
        Vector::from_slice(&[0.0, 1.0, 0.0]).unwrap()
    };
    let e1 = {
        let w = helper.axpy(-helper.dot(&vh), &vh);
        w * (1.0 / w.norm())
    };
    let e2 = Vector::from_slice(&[
        vh[1] * e1[2] - vh[2] * e1[1],
        vh[2] * e1[0] - vh[0] * e1[2],
        vh[0] * e1[1] - vh[1] * e1[0],
    ])
    .unwrap();
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    (vh * ct + e1 * (st * cp) + e2 * (st * sp)) * speed
}

/// Expectation of `f(V)` for `V ~ N(0, I_d)`.
///
/// Along `axis` a composite Gauss–Legendre rule split at 0 (kinks of
/// `psi(v . grad M)` sit on that hyperplane); across it Gauss–Hermite.
fn maxwellian_integrate<F: FnMut(&Vector) -> f64>(d: usize, axis: Option<&Vector>, mut f: F) -> f64 {
    use std::sync::OnceLock;
    static GL: OnceLock<Rule> = OnceLock::new();
    static GH: OnceLock<Rule> = OnceLock::new();
    let gl = GL.get_or_init(|| quadrature::gauss_legendre(12));
    let gh = GH.get_or_init(|| quadrature::gauss_hermite(24));

    let e0 = match axis {
        Some(a) if a.norm() > 1e-300 => *a * (1.0 / a.norm()),
        _ => {
            let mut e = Vector::zeros(d);
            e[0] = 1.0;
            e
        }
    };
    // orthonormal complement
    let mut perp: Vec<Vector> = Vec::new();
    for i in 0..d {
        let mut c = Vector::zeros(d);
        c[i] = 1.0;
        let mut w = c.axpy(-c.dot(&e0), &e0);
        for p in &perp {
            w = w.axpy(-w.dot(p), p);
        }
        if w.norm() > 1e-8 && perp.len() < d - 1 {
            perp.push(w * (1.0 / w.norm()));
        }
    }
    let norm_pdf = |u: f64| (-0.5 * u * u).exp() / (2.0 * PI).sqrt();
    let cut = 12.0;
    let panels = 4;
    let axial = |g: &mut dyn FnMut(f64) -> f64| {
        quadrature::composite(-cut, 0.0, panels, gl, |u| norm_pdf(u) * g(u))
            + quadrature::composite(0.0, cut, panels, gl, |u| norm_pdf(u) * g(u))
    };
    match perp.len() {
        0 => axial(&mut |u| f(&(e0 * u))),
        1 => axial(&mut |u| {
            let mut acc = 0.0;
            for (z, w) in gh.nodes.iter().zip(&gh.weights) {
                acc += w * f(&(e0 * u).axpy(*z, &perp[0]));
            }
            acc
        }),
        _ => axial(&mut |u| {
            let mut acc = 0.0;
            for (z1, w1) in gh.nodes.iter().zip(&gh.weights) {
                for (z2, w2) in gh.nodes.iter().zip(&gh.weights) {
                    acc += w1 * w2 * f(&(e0 * u).axpy(*z1, &perp[0]).axpy(*z2, &perp[1]));
                }
            }
            acc
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    fn boxcar(alpha: f64) -> Kernel {
        Kernel::new(KernelSpec::angle_dependent(2, 1.0, alpha, AngleShape::BoxcarInAngle)).unwrap()
    }

    #[test]
    fn densities() {
        let u = Kernel::new(KernelSpec::uniform_sphere(2, 2.0)).unwrap();
        let v = Vector::polar(2.0, 0.3);
        let w = Vector::polar(2.0, -2.0);
        assert!((u.density(&v, &w).unwrap() - 1.0 / (2.0 * PI * 2.0)).abs() < 1e-14);
        let m = Kernel::new(KernelSpec::maxwellian(2)).unwrap();
        let z = Vector::zeros(2);
        assert!((m.density(&v, &z).unwrap() - 1.0 / (2.0 * PI)).abs() < 1e-15);
        let b = boxcar(1.2);
        let inside = Vector::polar(1.0, 1.1);
        let outside = Vector::polar(1.0, 1.3);
        let v1 = Vector::polar(1.0, 0.0);
        assert!((b.density(&v1, &inside).unwrap() - 1.0 / 2.4).abs() < 1e-12);
        assert_eq!(b.density(&v1, &outside).unwrap(), 0.0);
    }

    #[test]
    fn off_sphere_velocity_is_rejected() {
        let b = boxcar(1.0);
        let v = Vector::polar(1.0, 0.0);
        let bad = Vector::polar(1.0 + 1e-9, 0.0);
        assert!(matches!(b.density(&v, &bad), Err(Error::Input(_))));
    }

    #[test]
    fn densities_integrate_to_one() {
        // boxcar with alpha close to pi/2 plus the smooth shapes, by quadrature over the circle
        for spec in [
            KernelSpec::angle_dependent(2, 1.5, PI / 2.0 - 1e-9, AngleShape::BoxcarInAngle),
            KernelSpec::angle_dependent(2, 1.5, 0.7, AngleShape::RaisedCosine),
            KernelSpec::angle_dependent(2, 1.5, 0.7, AngleShape::ExpCosine),
            KernelSpec::uniform_sphere(2, 1.5),
        ] {
            let k = Kernel::new(spec).unwrap();
            let v = Vector::polar(1.5, 0.4);
            let total = quadrature::adaptive_with_breaks(
                |t| k.density_unchecked(&v, &Vector::polar(1.5, t)) * 1.5,
                -PI,
                PI,
                &[0.4 - 1.4, 0.4 + 1.4, 0.4 - PI / 2.0, 0.4 + PI / 2.0],
                1e-12,
            )
            .unwrap();
            assert!((total - 1.0).abs() < 1e-8, "{total}");
        }
        // d = 3 sphere: int over S^2 of kappa1 dS = 1
        let k = Kernel::new(KernelSpec::angle_dependent(3, 1.0, 1.0, AngleShape::RaisedCosine)).unwrap();
        let v = Vector::from_slice(&[0.0, 0.0, 1.0]).unwrap();
        let total = k.integrate(&v, |_| 1.0, &[], None, 1e-12).unwrap();
        assert!((total - 1.0).abs() < 1e-8);
    }

    #[test]
    fn c_kappa_values() {
        let u = Kernel::new(KernelSpec::uniform_sphere(2, 1.0)).unwrap();
        assert!(u.c_kappa().unwrap().abs() < 1e-13);
        // alpha -> pi/2 from below: sin(alpha)/alpha -> 2/pi
        let b = boxcar(PI / 2.0 - 1e-12);
        assert!((b.c_kappa().unwrap() - 2.0 / PI).abs() < 1e-10);
        let a = 1.0;
        assert!((boxcar(a).c_kappa().unwrap() - a.sin() / a).abs() < 1e-12);
        let e = Kernel::new(KernelSpec::angle_dependent(2, 1.0, 0.5, AngleShape::ExpCosine)).unwrap();
        assert!((e.c_kappa().unwrap() - 0.446_389_965_896_534_5).abs() < 1e-10);
        let m = Kernel::new(KernelSpec::maxwellian(2)).unwrap();
        assert_eq!(m.c_kappa().unwrap(), 0.0);
    }

    #[test]
    fn lambda_tilde_values() {
        let b = boxcar(PI / 2.0 - 1e-12);
        assert!((b.lambda_tilde(1, 1.0).unwrap() - 2.0 / PI).abs() < 1e-10);
        let a = PI / 3.0;
        let expected = 0.5 - (2.0 * a).sin() / (4.0 * a);
        assert!((boxcar(a).lambda_tilde(2, 1.0).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.293_25).abs() < 1e-5);
        let m = Kernel::new(KernelSpec::maxwellian(2)).unwrap();
        assert!(matches!(m.lambda_tilde(1, 1.0), Err(Error::NotApplicable(_))));
        for shape in [AngleShape::BoxcarInAngle, AngleShape::RaisedCosine, AngleShape::ExpCosine] {
            let k = Kernel::new(KernelSpec::angle_dependent(2, 1.0, 0.3, shape)).unwrap();
            assert!(k.lambda_tilde(2, 0.5).unwrap() > 0.0);
        }
    }

    #[test]
    fn profiles_are_even_decreasing_and_bounded_below() {
        for shape in [AngleShape::BoxcarInAngle, AngleShape::RaisedCosine, AngleShape::ExpCosine] {
            let alpha = 0.9;
            let k = Kernel::new(KernelSpec::angle_dependent(2, 1.0, alpha, shape)).unwrap();
            let mut last = f64::INFINITY;
            for i in 0..=1000 {
                let t = PI * i as f64 / 1000.0;
                let val = k.kappa1(t);
                assert_eq!(val, k.kappa1(-t));
                assert!(val <= last + 1e-15);
                if t < alpha {
                    assert!(val >= k.beta());
                }
                last = val;
            }
        }
    }

    #[test]
    fn sampled_velocities_stay_on_sphere() {
        let mut rng = stream(3, Purpose::Dynamics, 0);
        for spec in [
            KernelSpec::angle_dependent(2, 2.5, 1.0, AngleShape::ExpCosine),
            KernelSpec::angle_dependent(3, 2.5, 1.0, AngleShape::RaisedCosine),
            KernelSpec::uniform_sphere(3, 2.5),
        ] {
            let k = Kernel::new(spec.clone()).unwrap();
            let mut v = if spec.dim == 2 { Vector::polar(2.5, 0.0) } else { Vector::from_slice(&[2.5, 0.0, 0.0]).unwrap() };
            for _ in 0..10_000 {
                v = k.sample_post_velocity(&v, &mut rng);
                assert!((v.norm() - 2.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn boxcar_turns_stay_inside_cone() {
        let k = boxcar(0.4);
        let mut rng = stream(5, Purpose::Dynamics, 0);
        let v = Vector::polar(1.0, 3.0);
        for _ in 0..10_000 {
            let w = k.sample_post_velocity(&v, &mut rng);
            assert!(v.dot(&w).clamp(-1.0, 1.0).acos() < 0.4);
        }
    }

    #[test]
    fn density_depends_only_on_inner_product() {
        let k = Kernel::new(KernelSpec::angle_dependent(2, 1.0, 1.0, AngleShape::ExpCosine)).unwrap();
        let mut rng = stream(9, Purpose::Probes, 0);
        for _ in 0..100 {
            let (a, b, rot): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
            let (a, b, rot) = (a * 6.0, b * 6.0, rot * 6.0);
            let d1 = k.density(&Vector::polar(1.0, a), &Vector::polar(1.0, b)).unwrap();
            let d2 = k.density(&Vector::polar(1.0, a + rot), &Vector::polar(1.0, b + rot)).unwrap();
            assert!((d1 - d2).abs() < 1e-10 * d1.max(1.0));
        }
    }

    #[test]
    fn maxwellian_integration_moments() {
        let m = Kernel::new(KernelSpec::maxwellian(2)).unwrap();
        let v = Vector::zeros(2);
        let axis = Vector::from_slice(&[0.6, 0.8]).unwrap();
        let e_abs = m.integrate(&v, |w| w.dot(&axis).abs(), &[], Some(&axis), 1e-10).unwrap();
        assert!((e_abs - (2.0 / PI).sqrt()).abs() < 1e-12);
        let e_sq = m.integrate(&v, |w| w.norm_sq(), &[], None, 1e-10).unwrap();
        assert!((e_sq - 2.0).abs() < 1e-12);
    }
}
