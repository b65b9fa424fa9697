//! Binned distances between measures, decay curves against a steady-state
//! reference, and log-space rate fits.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::binning::{BinSpec, Histogram};
use crate::error::{Error, Result};
use crate::fields::ChemoField;
use crate::pdmp::{self, InitialLaw, Model, ParticleState, PathObserver};
use crate::rates::PsiSpec;
use crate::vector::Vector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    /// Total variation of probability measures, `1/2 sum |p - q|`.
    PlainTv,
    /// `sum phi |p - q|` with the bounded-case Lyapunov weight.
    Norm1Weight,
    /// `sum phi |p - q|` with the unbounded-case Lyapunov weight.
    PhiUnbounded,
}

impl WeightKind {
    pub fn is_plain(self) -> bool {
        self == WeightKind::PlainTv
    }
}

/// Per-cell weights `w(centre)`; the overflow bin gets the largest cell weight.
pub fn cell_weights<F>(bins: &BinSpec, w: F) -> Result<Vec<f64>>
where
    F: Fn(&Vector, &Vector) -> Result<f64>,
{
    let mut out = Vec::with_capacity(bins.n_cells() + 1);
    for c in 0..bins.n_cells() {
        let (x, v) = bins.centre(c);
        let val = w(&x, &v)?;
        if !(val.is_finite() && val >= 0.0) {
            return Err(Error::Input(format!("weight {val} at cell {c} is not a finite non-negative number")));
        }
        out.push(val);
    }
    let top = out.iter().cloned().fold(0.0, f64::max);
    out.push(top);
    Ok(out)
}

fn check_pair(a: &Histogram, b: &Histogram, weights: Option<&[f64]>) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.mass.len() != b.mass.len() {
        return Err(Error::Input("histograms on different binnings".into()));
    }
    if let Some(w) = weights {
        if w.len() != a.mass.len() {
            return Err(Error::Input(format!("{} weights for {} bins", w.len(), a.mass.len())));
        }
    }
    Ok((a.probabilities()?, b.probabilities()?))
}

/// Binned distance between two measures, overflow bin included.
///
/// Without weights this is the total variation `1/2 sum |p - q|`; with
/// weights it is `sum w |p - q|`, not halved.
pub fn weighted_tv(a: &Histogram, b: &Histogram, weights: Option<&[f64]>) -> Result<f64> {
    let (p, q) = check_pair(a, b, weights)?;
    Ok(match weights {
        None => 0.5 * p.iter().zip(&q).map(|(x, y)| (x - y).abs()).sum::<f64>(),
        Some(w) => p.iter().zip(&q).zip(w).map(|((x, y), w)| w * (x - y).abs()).sum(),
    })
}

/// Expected distance between `reference` and an `n`-sample estimate of it:
/// `E|p_hat - p| ~ sqrt(2 p / (pi n))` per cell, halved for plain TV.
pub fn noise_floor(reference: &Histogram, weights: Option<&[f64]>, n: u64) -> Result<f64> {
    let p = reference.probabilities()?;
    let per = |p: f64| (2.0 * p / (PI * n as f64)).sqrt();
    Ok(match weights {
        None => 0.5 * p.iter().map(|&p| per(p)).sum::<f64>(),
        Some(w) => {
            if w.len() != p.len() {
                return Err(Error::Input(format!("{} weights for {} bins", w.len(), p.len())));
            }
            p.iter().zip(w).map(|(&p, w)| w * per(p)).sum()
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub times: Vec<f64>,
    pub distances: Vec<f64>,
    /// Sampling noise expected at the reference, per time.
    pub noise_floor: Vec<f64>,
    /// Largest overflow fraction of the ensemble or the reference, per time.
    pub overflow: Vec<f64>,
    pub weight_kind: WeightKind,
    pub bins: BinSpec,
    pub n: u64,
    pub seed: u64,
}

impl DecayCurve {
    pub fn new(
        times: Vec<f64>,
        distances: Vec<f64>,
        noise_floor: Vec<f64>,
        weight_kind: WeightKind,
        bins: BinSpec,
        n: u64,
    ) -> Result<Self> {
        if times.len() != distances.len() || times.len() != noise_floor.len() {
            return Err(Error::Input("decay curve columns differ in length".into()));
        }
        if times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Input("decay curve times must be sorted".into()));
        }
        if distances.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::Input("decay curve distances must be finite and non-negative".into()));
        }
        let overflow = vec![0.0; times.len()];
        Ok(Self { times, distances, noise_floor, overflow, weight_kind, bins, n, seed: 0 })
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,distance,noise_floor")?;
        for i in 0..self.times.len() {
            writeln!(out, "{:.6},{:.10e},{:.10e}", self.times[i], self.distances[i], self.noise_floor[i])?;
        }
        Ok(())
    }
}

struct MultiHist<'a> {
    bins: &'a BinSpec,
    hists: Vec<Histogram>,
}

impl PathObserver for MultiHist<'_> {
    fn observe(&mut self, _index: u64, states: &[ParticleState]) {
        for (h, s) in self.hists.iter_mut().zip(states) {
            h.add(self.bins.index(&s.x, &s.v), s.weight);
        }
    }

    fn merge(&mut self, other: Self) {
        for (a, b) in self.hists.iter_mut().zip(&other.hists) {
            a.merge(b);
        }
    }
}

/// Histograms of an ensemble at each of `times`.
pub fn ensemble_histograms(
    model: &Model,
    init: &InitialLaw,
    n: u64,
    times: &[f64],
    seed: u64,
    bins: &BinSpec,
) -> Result<Vec<Histogram>> {
    let (obs, _) = pdmp::run_ensemble(model, init, n, times, seed, || MultiHist {
        bins,
        hists: vec![bins.empty(); times.len()],
    })?;
    Ok(obs.hists)
}

/// Distances from an ensemble started at `init` to `reference` at each of `times`.
pub fn decay_curve(
    model: &Model,
    init: &InitialLaw,
    n: u64,
    times: &[f64],
    seed: u64,
    reference: &Histogram,
    bins: &BinSpec,
    weights: Option<&[f64]>,
    kind: WeightKind,
) -> Result<DecayCurve> {
    if reference.mass.len() != bins.n_cells() + 1 {
        return Err(Error::Config(format!(
            "reference has {} bins, the binning has {}",
            reference.mass.len(),
            bins.n_cells() + 1
        )));
    }
    if kind.is_plain() != weights.is_none() {
        return Err(Error::Config("plain TV takes no weights; weighted distances need them".into()));
    }
    let hists = ensemble_histograms(model, init, n, times, seed, bins)?;
    let floor = noise_floor(reference, weights, n)?;
    let mut distances = Vec::with_capacity(times.len());
    let mut overflow = Vec::with_capacity(times.len());
    for h in &hists {
        distances.push(weighted_tv(h, reference, weights)?);
        overflow.push(h.overflow_fraction().max(reference.overflow_fraction()));
    }
    let mut curve = DecayCurve::new(times.to_vec(), distances, vec![floor; times.len()], kind, bins.clone(), n)?;
    curve.overflow = overflow;
    curve.seed = seed;
    Ok(curve)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateModel {
    /// `d(t) = C e^{-sigma t}`.
    Exponential,
    /// `d(t) = C / t`.
    AlgebraicInverse,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitWindow {
    pub t_lo: f64,
    pub t_hi: f64,
    /// Points at or below `floor_factor * noise_floor` are left out.
    pub floor_factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub model: RateModel,
    /// Decay rate of the exponential model.
    pub sigma: Option<f64>,
    /// Least-squares constant `C`.
    pub constant: f64,
    /// Smallest `C` with `d(t) <= C g(t)` on the fitted points, `g` the unit-constant model.
    pub envelope_constant: f64,
    pub window: FitWindow,
    /// RMS of the log-space residuals.
    pub residual: f64,
    pub n_points: usize,
    /// Slope of `log d` against `log t` with the slope left free.
    pub free_slope: Option<f64>,
}

impl RateFit {
    /// `C g(t)` for a given constant.
    pub fn model_value(&self, c: f64, t: f64) -> f64 {
        match self.model {
            RateModel::Exponential => c * (-self.sigma.unwrap_or(0.0) * t).exp(),
            RateModel::AlgebraicInverse => c / t,
        }
    }
}

/// Ordinary least squares `y = a + b x`; returns `(a, b)`.
fn line_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let b = sxy / sxx;
    (my - b * mx, b)
}

fn rms(r: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = r.fold((0.0, 0usize), |(s, n), e| (s + e * e, n + 1));
    (s / n as f64).sqrt()
}

pub fn fit_rate(curve: &DecayCurve, model: RateModel, window: FitWindow) -> Result<RateFit> {
    if !(window.t_hi > window.t_lo) {
        return Err(Error::Fit(format!("empty fit window [{}, {}]", window.t_lo, window.t_hi)));
    }
    let pts: Vec<(f64, f64)> = (0..curve.times.len())
        .filter(|&i| {
            let t = curve.times[i];
            t >= window.t_lo
                && t <= window.t_hi
                && curve.distances[i] > window.floor_factor * curve.noise_floor[i]
                && curve.distances[i] > 0.0
                && (model == RateModel::Exponential || t > 0.0)
        })
        .map(|i| (curve.times[i], curve.distances[i]))
        .collect();
    if pts.len() < 4 {
        return Err(Error::Fit(format!("{} usable points in the fit window; need at least 4", pts.len())));
    }
    let t: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ld: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    match model {
        RateModel::Exponential => {
            let (a, b) = line_fit(&t, &ld);
            let sigma = -b;
            let residual = rms(t.iter().zip(&ld).map(|(t, y)| y - a - b * t));
            let envelope = pts.iter().map(|&(t, d)| d * (sigma * t).exp()).fold(0.0, f64::max);
            Ok(RateFit {
                model,
                sigma: Some(sigma),
                constant: a.exp(),
                envelope_constant: envelope,
                window,
                residual,
                n_points: pts.len(),
                free_slope: None,
            })
        }
        RateModel::AlgebraicInverse => {
            let lt: Vec<f64> = t.iter().map(|t| t.ln()).collect();
            // slope fixed to -1: the intercept is the mean of log d + log t
            let a = lt.iter().zip(&ld).map(|(x, y)| y + x).sum::<f64>() / lt.len() as f64;
            let residual = rms(lt.iter().zip(&ld).map(|(x, y)| y - a + x));
            let (_, free) = line_fit(&lt, &ld);
            let envelope = pts.iter().map(|&(t, d)| d * t).fold(0.0, f64::max);
            Ok(RateFit {
                model,
                sigma: None,
                constant: a.exp(),
                envelope_constant: envelope,
                window,
                residual,
                n_points: pts.len(),
                free_slope: Some(free),
            })
        }
    }
}

/// Curve points in `[t_lo, t_hi]` lying above `C g(t)`.
///
/// Points at or below `floor_factor` times the noise floor are not checked:
/// there the curve measures sampling noise, not the distance. A relative slack
/// of `1e-12` absorbs the rounding at the point that attains the envelope constant.
pub fn envelope_violations(curve: &DecayCurve, fit: &RateFit, c: f64, t_lo: f64, t_hi: f64, floor_factor: f64) -> Vec<(f64, f64)> {
    (0..curve.times.len())
        .filter(|&i| {
            let t = curve.times[i];
            t >= t_lo
                && t <= t_hi
                && (fit.model == RateModel::Exponential || t > 0.0)
                && curve.distances[i] > floor_factor * curve.noise_floor[i]
                && curve.distances[i] > fit.model_value(c, t) * (1.0 + 1e-12)
        })
        .map(|i| (curve.times[i], curve.distances[i]))
        .collect()
}

/// The bracket `1 + M^2 + 2 m M (1 + k psi(m)) + A |v|^2`, `m = v . grad M`, `k = chi / (1 + chi)`.
pub fn moment_integrand(field: &ChemoField, chi: f64, psi: &PsiSpec, a: f64, x: &Vector, v: &Vector) -> Result<f64> {
    let e = field.eval(x)?;
    let m = v.dot(&e.grad);
    let k = chi / (1.0 + chi);
    Ok(1.0 + e.m * e.m + 2.0 * m * e.m * (1.0 + k * psi.eval(m)) + a * v.norm_sq())
}

/// Weighted average of [`moment_integrand`] over a particle cloud.
pub fn moment_mf0<'a, I>(states: I, field: &ChemoField, chi: f64, psi: &PsiSpec, a: f64) -> Result<f64>
where
    I: IntoIterator<Item = &'a ParticleState>,
{
    let (mut s, mut w) = (0.0, 0.0);
    for p in states {
        s += p.weight * moment_integrand(field, chi, psi, a, &p.x, &p.v)?;
        w += p.weight;
    }
    if !(w > 0.0) {
        return Err(Error::Input("moment of an empty ensemble".into()));
    }
    let m = s / w;
    if !(m > 0.0) {
        return Err(Error::ConstantSelection(format!("M_f0 = {m} is not positive")));
    }
    Ok(m)
}

/// `H_h(u) = int_1^u ds / sqrt(s) = 2 (sqrt(u) - 1)`.
pub fn h_integral(u: f64) -> f64 {
    2.0 * (u.sqrt() - 1.0)
}

/// For `h(t) = sqrt(t)`: `(H_h^{-1}(t), h(H_h^{-1}(t))) = ((t/2 + 1)^2, t/2 + 1)`.
pub fn subgeometric_rate_calculus(t: f64) -> Result<(f64, f64)> {
    if !(t >= 0.0) {
        return Err(Error::Input(format!("t = {t} must be non-negative")));
    }
    let s = 0.5 * t + 1.0;
    Ok((s * s, s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_fit_exact() {
        let x = [0.0, 1.0, 2.0, 5.0];
        let y: Vec<f64> = x.iter().map(|x| 3.0 - 0.5 * x).collect();
        let (a, b) = line_fit(&x, &y);
        assert!((a - 3.0).abs() < 1e-14 && (b + 0.5).abs() < 1e-14);
    }

    #[test]
    fn calculus_values() {
        assert_eq!(subgeometric_rate_calculus(0.0).unwrap(), (1.0, 1.0));
        assert_eq!(subgeometric_rate_calculus(2.0).unwrap(), (4.0, 2.0));
        assert!(subgeometric_rate_calculus(-1.0).is_err());
    }
}
