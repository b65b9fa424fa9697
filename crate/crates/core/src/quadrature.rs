//! Gauss–Legendre / Gauss–Hermite rules and an adaptive bisection integrator.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Nodes and weights of an `n`-point rule on `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    /// Map the rule to `[a, b]` and sum `f`.
    #[inline]
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }
}

/// Legendre nodes by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> Rule {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        // recompute derivative at the converged root
        let (mut p0, mut p1) = (1.0, 0.0);
        for j in 0..n {
            let p2 = p1;
            p1 = p0;
            p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
        }
        if (z * z - 1.0).abs() > 0.0 {
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    Rule { nodes, weights }
}

/// Probabilists' Gauss–Hermite rule: `sum w_i f(x_i) ~ E[f(Z)]`, `Z ~ N(0, 1)`.
pub fn gauss_hermite(n: usize) -> Rule {
    assert!(n >= 1);
    // physicists' roots of H_n, weight exp(-x^2)
    let pim4 = PI.powf(-0.25);
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * xs[0],
            3 => 1.91 * z - 0.91 * xs[1],
            _ => 2.0 * z - xs[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let (mut p1, mut p2) = (pim4, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = (j + 1) as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-14 {
                break;
            }
        }
        xs[i] = z;
        xs[n - 1 - i] = -z;
        ws[i] = 2.0 / (pp * pp);
        ws[n - 1 - i] = ws[i];
    }
    let nodes = xs.iter().rev().map(|x| x * 2f64.sqrt()).collect();
    let weights = ws.iter().rev().map(|w| w / PI.sqrt()).collect();
    Rule { nodes, weights }
}

fn gl16() -> &'static Rule {
    static RULE: OnceLock<Rule> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(16))
}

/// Composite `n`-point Gauss–Legendre with `panels` equal panels.
pub fn composite<F: FnMut(f64) -> f64>(a: f64, b: f64, panels: usize, rule: &Rule, mut f: F) -> f64 {
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|k| {
            let lo = a + k as f64 * h;
            rule.integrate(lo, lo + h, &mut f)
        })
        .sum()
}

/// Adaptive bisection with a 16-point Gauss–Legendre rule; `tol` is absolute
/// on the whole interval.
pub fn adaptive<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    adaptive_with_breaks(f, a, b, &[], tol)
}

/// As [`adaptive`], but the interval is first split at `breaks` (kinks and
/// jumps of the integrand) that fall inside `(a, b)`.
pub fn adaptive_with_breaks<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    tol: f64,
) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let mut pts: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    pts.push(a);
    pts.push(b);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let rule = gl16();
    let mut total = 0.0;
    let mut total_err = 0.0;
    let span = b - a;
    for w in pts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi - lo <= 0.0 {
            continue;
        }
        let local_tol = tol * (hi - lo) / span;
        let whole = rule.integrate(lo, hi, &mut f);
        let (val, err) = recurse(&mut f, rule, lo, hi, whole, local_tol, 0);
        total += val;
        total_err += err;
    }
    if total_err > tol {
        return Err(Error::Tolerance { tol, estimate: total, error: total_err });
    }
    Ok(total)
}

const MAX_DEPTH: u32 = 40;

fn recurse<F: FnMut(f64) -> f64>(
    f: &mut F,
    rule: &Rule,
    a: f64,
    b: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> (f64, f64) {
    let mid = 0.5 * (a + b);
    let left = rule.integrate(a, mid, &mut *f);
    let right = rule.integrate(mid, b, &mut *f);
    let err = (left + right - whole).abs();
    if err <= tol || depth >= MAX_DEPTH || (b - a) < 1e-14 * (1.0 + a.abs()) {
        return (left + right, if depth >= MAX_DEPTH { err } else { 0.0 });
    }
    let (l, el) = recurse(f, rule, a, mid, left, 0.5 * tol, depth + 1);
    let (r, er) = recurse(f, rule, mid, b, right, 0.5 * tol, depth + 1);
    (l + r, el + er)
}
