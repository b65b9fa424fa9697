//! Minorisation geometry in `d = 2`: crescent and ball constants, the
//! centre map `F`, step counts, Duhamel prefactors, and Monte Carlo lower
//! bounds for the bounded (forced chains) and Maxwellian (plain paths) cases.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelKind;
use crate::pdmp::{self, InitialLaw, Model, ParticleState, PathObserver, CHUNK};
use crate::rng::{self, Purpose};
use crate::vector::Vector;

/// One-sided 99% normal quantile used for the Wilson lower bounds.
pub const Z99: f64 = 2.326_347_874_040_841;

/// Which arctangent defines the heading increment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaThetaFormula {
    /// `arctan(r2 sin(a/2) / (r3 + r2 cos(a/2)))`: the angle between the two-leg
    /// displacement and the last leg, i.e. the heading increment.
    #[default]
    Statement,
    /// `arctan(r3 sin(a/2) / (r2 + r3 cos(a/2)))`: the rotation of the first leg.
    Proof,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crescent {
    pub x_star: f64,
    pub y_star: f64,
    /// Inscribed radius `r2 r3 (1 - cos(alpha/2))`.
    pub r: f64,
    pub delta_theta: f64,
    /// Two-leg reach `sqrt(r2^2 + r3^2 + 2 r2 r3 cos(alpha/2))`.
    #[serde(rename = "R_big")]
    pub r_big: f64,
}

pub fn crescent_params(
    r1: f64,
    r2: f64,
    r3: f64,
    alpha: f64,
    x0: f64,
    y0: f64,
    theta0: f64,
    formula: DeltaThetaFormula,
) -> Result<Crescent> {
    if !(r1 > 0.0 && r2 > 0.0 && r3 > 0.0) {
        return Err(Error::Input("crescent times must be positive".into()));
    }
    if !(alpha > 0.0 && alpha < 0.5 * PI) {
        return Err(Error::Input(format!("crescent needs 0 < alpha < pi/2, got {alpha}")));
    }
    let (s, c) = (0.5 * alpha).sin_cos();
    let r_big = (r2 * r2 + r3 * r3 + 2.0 * r2 * r3 * c).sqrt();
    let delta_theta = match formula {
        DeltaThetaFormula::Statement => (r2 * s / (r3 + r2 * c)).atan(),
        DeltaThetaFormula::Proof => (r3 * s / (r2 + r3 * c)).atan(),
    };
    Ok(Crescent {
        x_star: x0 + (r1 + r_big) * theta0.cos(),
        y_star: y0 + (r1 + r_big) * theta0.sin(),
        r: r2 * r3 * (1.0 - c),
        delta_theta,
        r_big,
    })
}

/// The centre map `F(x0, y0, theta0) = (x**, y**, theta**)` as displayed:
/// `x** = x0 - (r1 + R) cos(theta0 + dtheta)`, `theta** = theta0 + dtheta`.
pub fn ball_map_f(x0: f64, y0: f64, theta0: f64, r1: f64, c: &Crescent) -> (f64, f64, f64) {
    let th = theta0 + c.delta_theta;
    (x0 - (r1 + c.r_big) * th.cos(), y0 - (r1 + c.r_big) * th.sin(), th)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnclosingCircle {
    /// `(r1 + R) / sin(dtheta / 2)`, the diameter of the circle through the `F`-iterates.
    #[serde(rename = "R_hat")]
    pub r_hat: f64,
    /// Centre of the circle through the `F`-iterates.
    pub centre: [f64; 2],
    /// Radius of that circle, `R_hat / 2`.
    pub orbit_radius: f64,
    /// The centre as displayed, `(x0, y0) - R_hat (sin(theta0 + dtheta/2), cos(theta0 + dtheta/2))`.
    pub centre_displayed: [f64; 2],
}

pub fn enclosing_circle(r1: f64, r_big: f64, delta_theta: f64, x0: f64, y0: f64, theta0: f64) -> Result<EnclosingCircle> {
    if delta_theta == 0.0 || !delta_theta.is_finite() {
        return Err(Error::DegenerateGeometry(
            "zero heading increment: the centres run along a straight line".into(),
        ));
    }
    let half = 0.5 * delta_theta;
    let signed = (r1 + r_big) / half.sin();
    let (s, c) = (theta0 + half).sin_cos();
    Ok(EnclosingCircle {
        r_hat: signed.abs(),
        centre: [x0 + 0.5 * signed * s, y0 - 0.5 * signed * c],
        orbit_radius: 0.5 * signed.abs(),
        centre_displayed: [x0 - signed.abs() * s, y0 - signed.abs() * c],
    })
}

/// `(ceil(24 R_hat / r), ceil(4 pi / alpha))`.
pub fn step_counts(r_hat: f64, r: f64, alpha: f64) -> (u64, u64) {
    ((24.0 * r_hat / r).ceil() as u64, (4.0 * PI / alpha).ceil() as u64)
}

/// `beta^n (1 - chi)^n e^{-(1 + chi) t}`.
pub fn duhamel_prefactor(n: u64, chi: f64, beta: f64, t: f64) -> f64 {
    10f64.powf(log10_duhamel_prefactor(n, chi, beta, t))
}

pub fn log10_duhamel_prefactor(n: u64, chi: f64, beta: f64, t: f64) -> f64 {
    n as f64 * (beta.log10() + (1.0 - chi).log10()) - (1.0 + chi) * t * std::f64::consts::LOG10_E
}

/// The rough per-block constant `pi r2^2 r3^2 alpha^2 / (32 (r1 + R))`.
pub fn gamma_step_estimate(r1: f64, r2: f64, r3: f64, alpha: f64, r_big: f64) -> f64 {
    PI * r2 * r2 * r3 * r3 * alpha * alpha / (32.0 * (r1 + r_big))
}

/// Inputs of the bounded-case minorisation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundedMinorisation {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    /// Half-width of the kernel's lower-bound cone.
    pub alpha: f64,
    pub chi: f64,
    /// Kernel lower bound on the cone.
    pub beta: f64,
    /// Jump-time tolerance; defaults to `min r_i / 10`.
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Time budget of the heading phase; defaults to `R_hat / 8`.
    #[serde(default)]
    pub l: Option<f64>,
    #[serde(default)]
    pub delta_theta_formula: DeltaThetaFormula,
}

impl BoundedMinorisation {
    pub fn epsilon(&self) -> f64 {
        self.epsilon.unwrap_or(self.r1.min(self.r2).min(self.r3) / 10.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub x_star: f64,
    pub y_star: f64,
    pub r: f64,
    pub delta_theta: f64,
    #[serde(rename = "R_big")]
    pub r_big: f64,
    #[serde(rename = "R_hat")]
    pub r_hat: f64,
    pub circle_centre: [f64; 2],
    pub n_tilde: u64,
    pub n_star: u64,
    /// Jumps of the position phase, `3 ceil(n_tilde / 3)`.
    pub n_position: u64,
    pub gamma_step: f64,
    /// Total time of the forced schedule.
    pub schedule_time: f64,
    pub epsilon: f64,
    pub l: f64,
    /// Duhamel prefactor for `n_position + n_star` jumps over `schedule_time`; may underflow to 0.
    pub duhamel_prefactor: f64,
    pub log10_duhamel_prefactor: f64,
}

/// Geometry for a chain started at `(x0, y0, theta0)`.
pub fn geometry_report(cfg: &BoundedMinorisation, x0: f64, y0: f64, theta0: f64) -> Result<GeometryReport> {
    let c = crescent_params(cfg.r1, cfg.r2, cfg.r3, cfg.alpha, x0, y0, theta0, cfg.delta_theta_formula)?;
    let circle = enclosing_circle(cfg.r1, c.r_big, c.delta_theta, x0, y0, theta0)?;
    let (n_tilde, n_star) = step_counts(circle.r_hat, c.r, cfg.alpha);
    let n_position = 3 * n_tilde.div_ceil(3);
    let l = cfg.l.unwrap_or(circle.r_hat / 8.0);
    let eps = cfg.epsilon();
    if !(eps > 0.0 && eps < cfg.r1.min(cfg.r2).min(cfg.r3)) {
        return Err(Error::Config(format!("epsilon = {eps} must lie in (0, min r_i)")));
    }
    if !(l > 0.0) {
        return Err(Error::Config("l must be positive".into()));
    }
    let schedule_time = (n_position / 3) as f64 * (cfg.r1 + cfg.r2 + cfg.r3) + 0.5 * eps + l;
    let n = n_position + n_star;
    let lp = log10_duhamel_prefactor(n, cfg.chi, cfg.beta, schedule_time);
    Ok(GeometryReport {
        x_star: c.x_star,
        y_star: c.y_star,
        r: c.r,
        delta_theta: c.delta_theta,
        r_big: c.r_big,
        r_hat: circle.r_hat,
        circle_centre: circle.centre,
        n_tilde,
        n_star,
        n_position,
        gamma_step: gamma_step_estimate(cfg.r1, cfg.r2, cfg.r3, cfg.alpha, c.r_big),
        schedule_time,
        epsilon: eps,
        l,
        duhamel_prefactor: 10f64.powf(lp),
        log10_duhamel_prefactor: lp,
    })
}

/// Jump windows of the forced schedule and the final time.
///
/// The position phase puts jump `k` uniformly within `eps/2` of the `k`-th
/// cumulative sum of `r1, r2, r3, r1, ...`, so every inter-jump time is within
/// `eps` of its nominal value. The heading phase splits `[T, T + l]` into
/// `n_star` equal windows.
pub fn schedule(cfg: &BoundedMinorisation, report: &GeometryReport) -> (Vec<(f64, f64)>, f64) {
    let half = 0.5 * report.epsilon;
    let nominal = [cfg.r1, cfg.r2, cfg.r3];
    let mut windows = Vec::with_capacity((report.n_position + report.n_star) as usize);
    let mut t = 0.0;
    for k in 0..report.n_position as usize {
        t += nominal[k % 3];
        windows.push((t - half, t + half));
    }
    let start = t + half;
    let w = report.l / report.n_star as f64;
    for k in 0..report.n_star as usize {
        windows.push((start + k as f64 * w, start + (k + 1) as f64 * w));
    }
    (windows, start + report.l)
}

/// Membership in the set reachable by a three-jump chain with run times
/// `s1, s2, s3` and turning angles in `(-alpha, alpha)` (positions only).
pub fn in_crescent(p: [f64; 2], x0: [f64; 2], theta0: f64, s: [f64; 3], alpha: f64) -> bool {
    let w = [p[0] - x0[0] - s[0] * theta0.cos(), p[1] - x0[1] - s[0] * theta0.sin()];
    let rho2 = w[0] * w[0] + w[1] * w[1];
    let cos2 = (rho2 - s[1] * s[1] - s[2] * s[2]) / (2.0 * s[1] * s[2]);
    // points within 1e-9 of the outer or inner arc count as inside
    if !(-1.0 - 1e-9..=1.0 + 1e-9).contains(&cos2) {
        return false;
    }
    let th2 = cos2.clamp(-1.0, 1.0).acos();
    if th2 >= alpha {
        return false;
    }
    let dir = w[1].atan2(w[0]);
    [th2, -th2].iter().any(|&t2| {
        let beta = (s[2] * t2.sin()).atan2(s[1] + s[2] * t2.cos());
        let th1 = wrap(dir - theta0 - beta);
        th1.abs() < alpha
    })
}

fn wrap(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// Fraction of the inscribed ball `B((x_*, y_*), r)` inside the crescent, by a
/// deterministic polar lattice of `n x n` points.
pub fn inscribed_ball_coverage(cfg: &BoundedMinorisation, n: usize) -> Result<f64> {
    let c = crescent_params(cfg.r1, cfg.r2, cfg.r3, cfg.alpha, 0.0, 0.0, 0.0, cfg.delta_theta_formula)?;
    let mut hit = 0usize;
    for i in 0..n {
        let rad = c.r * ((i as f64 + 0.5) / n as f64).sqrt();
        for j in 0..n {
            let a = 2.0 * PI * (j as f64 + 0.5) / n as f64;
            let p = [c.x_star + rad * a.cos(), c.y_star + rad * a.sin()];
            if in_crescent(p, [0.0, 0.0], 0.0, [cfg.r1, cfg.r2, cfg.r3], cfg.alpha) {
                hit += 1;
            }
        }
    }
    Ok(hit as f64 / (n * n) as f64)
}

/// Wilson score lower bound for `k` successes in `n` trials.
pub fn wilson_lower(k: u64, n: u64, z: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let centre = p + z2 / (2.0 * nf);
    let spread = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    ((centre - spread) / (1.0 + z2 / nf)).max(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellEstimate {
    /// Cell centre: position then heading (bounded) or position then velocity (Maxwellian).
    pub centre: Vec<f64>,
    pub count: u64,
    /// `log10` of the estimated density (with any prefactor); `-inf` for empty cells.
    pub log10_density: f64,
    /// `log10` of the 99% Wilson lower bound of the density.
    pub log10_lower: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalLowerBound {
    pub ball_radius: f64,
    pub n_paths: u64,
    pub n_cells: usize,
    /// Fraction of paths ending in the binned region.
    pub mass_fraction: f64,
    pub min_count: u64,
    pub min_log10_density: f64,
    pub min_log10_lower: f64,
    /// Every cell has a strictly positive 99% lower bound.
    pub all_positive: bool,
    /// Some cell is empty while all its neighbours are not: a sampling gap rather than a hole.
    pub inconclusive: bool,
    pub analytic_bound: Option<f64>,
    /// Margin `min lower bound - analytic bound`, per prefactor convention.
    pub margins: Vec<(String, f64)>,
    pub cells: Vec<CellEstimate>,
}

impl EmpiricalLowerBound {
    /// Minimum of `log10_density` over the cells whose position part lies within `radius`.
    pub fn min_log10_density_within(&self, radius: f64, cell_half_diag: f64) -> f64 {
        self.cells
            .iter()
            .filter(|c| (c.centre[0].hypot(c.centre[1]) + cell_half_diag) <= radius)
            .map(|c| c.log10_density)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Square `n x n` position cells fully inside `B(0, radius)`, times `n_theta` heading cells.
struct BallGrid {
    radius: f64,
    n: usize,
    n_theta: usize,
    /// Map from the square cell index to the kept cell index.
    keep: Vec<Option<usize>>,
    kept: Vec<(usize, usize)>,
}

impl BallGrid {
    fn new(radius: f64, n: usize, n_theta: usize) -> Self {
        let h = 2.0 * radius / n as f64;
        let mut keep = vec![None; n * n];
        let mut kept = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let xs = [-radius + i as f64 * h, -radius + (i + 1) as f64 * h];
                let ys = [-radius + j as f64 * h, -radius + (j + 1) as f64 * h];
                let far = xs.iter().map(|x| x * x).fold(0.0, f64::max) + ys.iter().map(|y| y * y).fold(0.0, f64::max);
                if far <= radius * radius {
                    keep[i * n + j] = Some(kept.len());
                    kept.push((i, j));
                }
            }
        }
        Self { radius, n, n_theta, keep, kept }
    }

    fn cell_width(&self) -> f64 {
        2.0 * self.radius / self.n as f64
    }

    fn n_cells(&self) -> usize {
        self.kept.len() * self.n_theta
    }

    fn index(&self, x: &Vector, heading: f64) -> Option<usize> {
        let h = self.cell_width();
        let fi = (x[0] + self.radius) / h;
        let fj = (x[1] + self.radius) / h;
        if !(fi >= 0.0 && fj >= 0.0) {
            return None;
        }
        let (i, j) = (fi as usize, fj as usize);
        if i >= self.n || j >= self.n {
            return None;
        }
        let k = self.keep[i * self.n + j]?;
        let t = ((wrap(heading) + PI) / (2.0 * PI) * self.n_theta as f64) as usize;
        Some(k * self.n_theta + t.min(self.n_theta - 1))
    }

    fn centre(&self, cell: usize) -> Vec<f64> {
        let (k, t) = (cell / self.n_theta, cell % self.n_theta);
        let (i, j) = self.kept[k];
        let h = self.cell_width();
        vec![
            -self.radius + (i as f64 + 0.5) * h,
            -self.radius + (j as f64 + 0.5) * h,
            -PI + (t as f64 + 0.5) * 2.0 * PI / self.n_theta as f64,
        ]
    }

    fn neighbours(&self, cell: usize) -> Vec<usize> {
        let (k, t) = (cell / self.n_theta, cell % self.n_theta);
        let (i, j) = self.kept[k];
        let mut out = Vec::new();
        for (di, dj) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
            let (a, b) = (i as i64 + di, j as i64 + dj);
            if a >= 0 && b >= 0 && (a as usize) < self.n && (b as usize) < self.n {
                if let Some(kk) = self.keep[a as usize * self.n + b as usize] {
                    out.push(kk * self.n_theta + t);
                }
            }
        }
        let nt = self.n_theta;
        out.push(k * nt + (t + 1) % nt);
        out.push(k * nt + (t + nt - 1) % nt);
        out
    }
}

fn summarise(
    counts: &[u64],
    n_paths: u64,
    log10_scale: f64,
    volume: f64,
    ball_radius: f64,
    centres: impl Fn(usize) -> Vec<f64>,
    neighbours: impl Fn(usize) -> Vec<usize>,
    analytic: Option<(f64, Vec<(String, f64)>)>,
) -> EmpiricalLowerBound {
    let lv = volume.log10();
    let cells: Vec<CellEstimate> = counts
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let p = k as f64 / n_paths as f64;
            CellEstimate {
                centre: centres(i),
                count: k,
                log10_density: p.log10() + log10_scale - lv,
                log10_lower: wilson_lower(k, n_paths, Z99).log10() + log10_scale - lv,
            }
        })
        .collect();
    let in_region: u64 = counts.iter().sum();
    let min_count = counts.iter().copied().min().unwrap_or(0);
    let min_log10_density = cells.iter().map(|c| c.log10_density).fold(f64::INFINITY, f64::min);
    let min_log10_lower = cells.iter().map(|c| c.log10_lower).fold(f64::INFINITY, f64::min);
    let all_positive = min_count > 0;
    let inconclusive = !all_positive
        && (0..counts.len()).filter(|&i| counts[i] == 0).all(|i| neighbours(i).iter().all(|&j| counts[j] > 0));
    let (analytic_bound, margins) = match analytic {
        Some((b, conventions)) => {
            let lower = 10f64.powf(min_log10_lower);
            (Some(b), conventions.into_iter().map(|(name, v)| (name, lower - v)).collect())
        }
        None => (None, Vec::new()),
    };
    EmpiricalLowerBound {
        ball_radius,
        n_paths,
        n_cells: counts.len(),
        mass_fraction: in_region as f64 / n_paths as f64,
        min_count,
        min_log10_density,
        min_log10_lower,
        all_positive,
        inconclusive,
        analytic_bound,
        margins,
        cells,
    }
}

/// Binning of the bounded-case check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundedBins {
    /// Target ball radius as a fraction of `R_hat`.
    pub radius_fraction: f64,
    pub n_side: usize,
    pub n_theta: usize,
}

impl Default for BoundedBins {
    fn default() -> Self {
        Self { radius_fraction: 0.25, n_side: 16, n_theta: 8 }
    }
}

fn count_chunks<F>(n: u64, n_cells: usize, f: F) -> Result<Vec<u64>>
where
    F: Fn(u64) -> Result<Option<usize>> + Sync,
{
    let parts: Vec<Result<Vec<u64>>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut counts = vec![0u64; n_cells];
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                if let Some(k) = f(i)? {
                    counts[k] += 1;
                }
            }
            Ok(counts)
        })
        .collect();
    let mut total = vec![0u64; n_cells];
    for p in parts {
        for (a, b) in total.iter_mut().zip(p?) {
            *a += b;
        }
    }
    Ok(total)
}

/// Runs `n` forced chains from `(x0, y0, theta0)` along the forced schedule and
/// bins the endpoints over `B(0, radius_fraction R_hat)` times headings.
///
/// Densities include the Duhamel prefactor, so they are lower bounds for the
/// solution at the schedule's final time.
pub fn verify_minorisation_bounded(
    cfg: &BoundedMinorisation,
    start: (f64, f64, f64),
    bins: &BoundedBins,
    n: u64,
    seed: u64,
) -> Result<(GeometryReport, EmpiricalLowerBound)> {
    let (x0, y0, theta0) = start;
    let report = geometry_report(cfg, x0, y0, theta0)?;
    if x0.hypot(y0) > 0.5 * report.r_hat {
        return Err(Error::Input(format!(
            "start ({x0}, {y0}) lies outside B(0, R_hat/2) with R_hat = {}",
            report.r_hat
        )));
    }
    if n == 0 {
        return Err(Error::Input("need at least one chain".into()));
    }
    let (windows, t_end) = schedule(cfg, &report);
    let grid = BallGrid::new(bins.radius_fraction * report.r_hat, bins.n_side, bins.n_theta);
    let s0 = ParticleState::new(Vector::from_slice(&[x0, y0])?, Vector::polar(1.0, theta0));
    let nj = windows.len();
    let counts = count_chunks(n, grid.n_cells(), |i| {
        let mut rng = rng::stream(seed, Purpose::ForcedChain, i);
        let s = pdmp::simulate_forced_chain(&s0, &windows, cfg.alpha, nj, t_end, &mut rng)?;
        Ok(grid.index(&s.x, s.v.angle()))
    })?;
    let log_w: f64 = windows.iter().map(|&(a, b)| (2.0 * cfg.alpha * (b - a)).log10()).sum();
    let h = grid.cell_width();
    let vol = h * h * 2.0 * PI / grid.n_theta as f64;
    let out = summarise(
        &counts,
        n,
        log_w + report.log10_duhamel_prefactor,
        vol,
        grid.radius,
        |c| grid.centre(c),
        |c| grid.neighbours(c),
        None,
    );
    Ok((report, out))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaStepCheck {
    /// The rough constant `pi r2^2 r3^2 alpha^2 / (32 (r1 + R))`.
    pub estimate: f64,
    /// Minimum binned density of `P^3` applied to the unit-density ball-times-cone.
    pub measured: f64,
    pub ratio: f64,
    pub input_radius: f64,
    pub target_centre: [f64; 2],
    pub target_radius: f64,
}

/// Pushes the unit density on `B(0, r_in) x {|theta| < alpha/2}` through three
/// forced jumps at the fixed run times `r1, r2, r3` and measures the minimum
/// output density on `B(c, r_in + r/4) x {|theta - dtheta| < alpha/2}` with
/// `c = (r1 + R)(cos dtheta, sin dtheta)`, the forward image of the ball centre.
pub fn gamma_step_check(cfg: &BoundedMinorisation, r_in: f64, n: u64, seed: u64) -> Result<GammaStepCheck> {
    let c = crescent_params(cfg.r1, cfg.r2, cfg.r3, cfg.alpha, 0.0, 0.0, 0.0, cfg.delta_theta_formula)?;
    let dt = c.delta_theta;
    let centre = [(cfg.r1 + c.r_big) * dt.cos(), (cfg.r1 + c.r_big) * dt.sin()];
    let radius = r_in + 0.25 * c.r;
    let (n_side, n_theta) = (8usize, 4usize);
    let h = 2.0 * radius / n_side as f64;
    let grid = BallGrid::new(radius, n_side, 1);
    let hw = 2.0 * (0.5 * cfg.alpha) / n_theta as f64;
    let n_cells = grid.kept.len() * n_theta;
    let counts = count_chunks(n, n_cells, |i| {
        let mut rng = rng::stream(seed, Purpose::ForcedChain, i);
        let rad = r_in * rng.random::<f64>().sqrt();
        let ang = 2.0 * PI * rng.random::<f64>();
        let mut x = Vector::from_slice(&[rad * ang.cos(), rad * ang.sin()])?;
        let mut th = cfg.alpha * (rng.random::<f64>() - 0.5);
        for s in [cfg.r1, cfg.r2, cfg.r3] {
            x = x.axpy(s, &Vector::polar(1.0, th));
            th += cfg.alpha * (2.0 * rng.random::<f64>() - 1.0);
        }
        let rel = Vector::from_slice(&[x[0] - centre[0], x[1] - centre[1]])?;
        let u = wrap(th - dt) + 0.5 * cfg.alpha;
        if !(u >= 0.0 && u < cfg.alpha) {
            return Ok(None);
        }
        Ok(grid.index(&rel, 0.0).map(|k| k * n_theta + ((u / hw) as usize).min(n_theta - 1)))
    })?;
    // each chain carries the input mass pi r_in^2 alpha and three factors 2 alpha
    let mass = PI * r_in * r_in * cfg.alpha * (2.0 * cfg.alpha).powi(3);
    let vol = h * h * hw;
    let measured = counts.iter().map(|&k| k as f64 / n as f64 * mass / vol).fold(f64::INFINITY, f64::min);
    let estimate = gamma_step_estimate(cfg.r1, cfg.r2, cfg.r3, cfg.alpha, c.r_big);
    Ok(GammaStepCheck {
        estimate,
        measured,
        ratio: measured / estimate,
        input_radius: r_in,
        target_centre: centre,
        target_radius: radius,
    })
}

/// Prefactor conventions of the Maxwellian-case bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnboundedPrefactor {
    /// `1 - chi^2`, as stated.
    OneMinusChiSq,
    /// `(1 - chi)^2`, as carried through the proof.
    OneMinusChiSquared,
}

fn ball_volume(d: usize, radius: f64) -> f64 {
    // |B_d(1)| = pi^{d/2} / Gamma(d/2 + 1)
    let unit = match d {
        1 => 2.0,
        2 => PI,
        3 => 4.0 / 3.0 * PI,
        _ => PI.powf(d as f64 / 2.0) / gamma_half_int(d + 2),
    };
    unit * radius.powi(d as i32)
}

/// `Gamma(k / 2)` for integer `k >= 1`.
fn gamma_half_int(k: usize) -> f64 {
    if k == 1 {
        return PI.sqrt();
    }
    if k == 2 {
        return 1.0;
    }
    (k as f64 / 2.0 - 1.0) * gamma_half_int(k - 2)
}

/// Minorisation time `3 + R_* / V0`.
pub fn unbounded_time(r_star: f64, v0: f64) -> f64 {
    3.0 + r_star / v0
}

/// `P e^{-(1 + chi) t} / (t^d |B(V0)|)` with `P` per the prefactor convention.
pub fn unbounded_analytic_bound(r_star: f64, v0: f64, chi: f64, d: usize, prefactor: UnboundedPrefactor) -> f64 {
    let t = unbounded_time(r_star, v0);
    let p = match prefactor {
        UnboundedPrefactor::OneMinusChiSq => 1.0 - chi * chi,
        UnboundedPrefactor::OneMinusChiSquared => (1.0 - chi) * (1.0 - chi),
    };
    p * (-(1.0 + chi) * t).exp() / (t.powi(d as i32) * ball_volume(d, v0))
}

/// Equal-volume polar cells of a disk: `rings x sectors`.
#[derive(Clone, Copy, Debug)]
struct DiskCells {
    radius: f64,
    rings: usize,
    sectors: usize,
}

impl DiskCells {
    fn n(&self) -> usize {
        self.rings * self.sectors
    }

    fn index(&self, p: &Vector) -> Option<usize> {
        let r2 = p.norm_sq() / (self.radius * self.radius);
        if !(r2 <= 1.0) {
            return None;
        }
        let ring = ((r2 * self.rings as f64) as usize).min(self.rings - 1);
        let a = (p[1].atan2(p[0]) + PI) / (2.0 * PI);
        let sector = ((a * self.sectors as f64) as usize).min(self.sectors - 1);
        Some(ring * self.sectors + sector)
    }

    fn centre(&self, k: usize) -> [f64; 2] {
        let (ring, sector) = (k / self.sectors, k % self.sectors);
        let r = self.radius * ((ring as f64 + 0.5) / self.rings as f64).sqrt();
        let a = -PI + (sector as f64 + 0.5) * 2.0 * PI / self.sectors as f64;
        [r * a.cos(), r * a.sin()]
    }

    fn neighbours(&self, k: usize) -> Vec<usize> {
        let (ring, sector) = (k / self.sectors, k % self.sectors);
        let s = self.sectors;
        let mut out = vec![ring * s + (sector + 1) % s, ring * s + (sector + s - 1) % s];
        if ring > 0 {
            out.push((ring - 1) * s + sector);
        }
        if ring + 1 < self.rings {
            out.push((ring + 1) * s + sector);
        }
        out
    }

    fn cell_volume(&self) -> f64 {
        PI * self.radius * self.radius / self.n() as f64
    }
}

struct DiskCounter<'a> {
    cells: &'a DiskCells,
    counts: Vec<u64>,
}

impl PathObserver for DiskCounter<'_> {
    fn observe(&mut self, _index: u64, states: &[ParticleState]) {
        let s = &states[0];
        if let (Some(a), Some(b)) = (self.cells.index(&s.x), self.cells.index(&s.v)) {
            self.counts[a * self.cells.n() + b] += 1;
        }
    }

    fn merge(&mut self, other: Self) {
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
    }
}

/// Binning of the Maxwellian-case check: equal-volume polar cells of
/// `{|x| <= V0}` and `{|v| <= V0}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnboundedBins {
    pub rings: usize,
    pub sectors: usize,
}

impl Default for UnboundedBins {
    fn default() -> Self {
        Self { rings: 2, sectors: 4 }
    }
}

/// Simulates `n` paths of `model` from `init` to `t = 3 + R_*/V0` and compares
/// the binned density on `{|x| <= V0, |v| <= V0}` with the analytic bound.
pub fn verify_minorisation_unbounded(
    model: &Model,
    init: &InitialLaw,
    r_star: f64,
    v0: f64,
    bins: &UnboundedBins,
    n: u64,
    seed: u64,
) -> Result<EmpiricalLowerBound> {
    if model.dim() != 2 {
        return Err(Error::Input("the Maxwellian minorisation check is binned in d = 2".into()));
    }
    if model.kernel.spec().kind != KernelKind::Maxwellian {
        return Err(Error::Input("the unbounded minorisation check needs the Maxwellian kernel".into()));
    }
    if !(r_star > 0.0 && v0 > 0.0) {
        return Err(Error::Input("R_* and V0 must be positive".into()));
    }
    let chi = model.rate.chi;
    let t = unbounded_time(r_star, v0);
    let cells = DiskCells { radius: v0, rings: bins.rings, sectors: bins.sectors };
    let (obs, _) = pdmp::run_ensemble(model, init, n, &[t], seed, || DiskCounter {
        cells: &cells,
        counts: vec![0; cells.n() * cells.n()],
    })?;
    let stated = unbounded_analytic_bound(r_star, v0, chi, 2, UnboundedPrefactor::OneMinusChiSq);
    let proof = unbounded_analytic_bound(r_star, v0, chi, 2, UnboundedPrefactor::OneMinusChiSquared);
    let nc = cells.n();
    Ok(summarise(
        &obs.counts,
        n,
        0.0,
        cells.cell_volume() * cells.cell_volume(),
        v0,
        |k| {
            let (a, b) = (cells.centre(k / nc), cells.centre(k % nc));
            vec![a[0], a[1], b[0], b[1]]
        },
        |k| {
            let (a, b) = (k / nc, k % nc);
            let mut out: Vec<usize> = cells.neighbours(a).into_iter().map(|x| x * nc + b).collect();
            out.extend(cells.neighbours(b).into_iter().map(|y| a * nc + y));
            out
        },
        Some((stated, vec![("one_minus_chi_sq".into(), stated), ("one_minus_chi_squared".into(), proof)])),
    ))
}

/// Every cell's 99% lower bound is at least the stated analytic bound.
pub fn unbounded_pass(e: &EmpiricalLowerBound) -> bool {
    e.analytic_bound.is_some_and(|b| e.all_positive && 10f64.powf(e.min_log10_lower) >= b)
}
