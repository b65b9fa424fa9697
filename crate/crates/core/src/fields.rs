//! Chemoattractant landscapes `M(x)` with analytic gradient and Hessian.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{SymMatrix, Vector};

/// A Gaussian bump `a exp(-|x - c|^2 / (2 w^2))` added to the radial profile
/// of a [`FieldKind::Custom`] field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub amplitude: f64,
    pub centre: Vec<f64>,
    pub width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldKind {
    /// `m0 - scale * sqrt(1 + |x|^2)`.
    SqrtRadial,
    /// Log of a Gaussian signal: `m0 - |x|^2 / (2 scale^2)`. Fails (H3).
    LogGaussian,
    /// `SqrtRadial` plus Gaussian bumps.
    Custom { bumps: Vec<Bump> },
    /// `M = m0`; no chemotactic bias. Diagnostic only.
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChemoField {
    #[serde(flatten)]
    pub kind: FieldKind,
    #[serde(default)]
    pub m0: f64,
    #[serde(default = "one")]
    pub scale: f64,
    pub dim: usize,
}

fn one() -> f64 {
    1.0
}

/// Value, gradient and Hessian at one point.
#[derive(Clone, Copy, Debug)]
pub struct FieldEval {
    pub m: f64,
    pub grad: Vector,
    pub hess: SymMatrix,
}

impl ChemoField {
    pub fn sqrt_radial(dim: usize, m0: f64, scale: f64) -> Self {
        Self { kind: FieldKind::SqrtRadial, m0, scale, dim }
    }

    pub fn constant(dim: usize, m0: f64) -> Self {
        Self { kind: FieldKind::Constant, m0, scale: 1.0, dim }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=crate::vector::MAX_DIM).contains(&self.dim) {
            return Err(Error::Config(format!("field dimension {} not in 1..=3", self.dim)));
        }
        if !(self.scale > 0.0) || !self.m0.is_finite() {
            return Err(Error::Config("field scale must be > 0 and m0 finite".into()));
        }
        if let FieldKind::Custom { bumps } = &self.kind {
            for b in bumps {
                if b.centre.len() != self.dim || !(b.width > 0.0) {
                    return Err(Error::Config("bump centre length must equal dim and width > 0".into()));
                }
            }
        }
        Ok(())
    }

    /// Value, gradient and Hessian; checks the dimension of `x`.
    pub fn eval(&self, x: &Vector) -> Result<FieldEval> {
        if x.dim() != self.dim {
            return Err(Error::Input(format!(
                "position has dimension {}, field has {}",
                x.dim(),
                self.dim
            )));
        }
        if !x.is_finite() {
            return Err(Error::Input("non-finite position".into()));
        }
        Ok(self.eval_unchecked(x))
    }

    pub fn eval_unchecked(&self, x: &Vector) -> FieldEval {
        let d = self.dim;
        match &self.kind {
            FieldKind::Constant => FieldEval {
                m: self.m0,
                grad: Vector::zeros(d),
                hess: SymMatrix::zeros(d),
            },
            FieldKind::LogGaussian => {
                let s2 = self.scale * self.scale;
                FieldEval {
                    m: self.m0 - x.norm_sq() / (2.0 * s2),
                    grad: *x * (-1.0 / s2),
                    hess: SymMatrix::identity(d).scaled(-1.0 / s2),
                }
            }
            FieldKind::SqrtRadial => self.sqrt_radial_eval(x),
            FieldKind::Custom { bumps } => {
                let mut out = self.sqrt_radial_eval(x);
                for b in bumps {
                    let c = Vector::from_slice(&b.centre).expect("validated bump centre");
                    let dx = *x - c;
                    let w2 = b.width * b.width;
                    let e = b.amplitude * (-dx.norm_sq() / (2.0 * w2)).exp();
                    out.m += e;
                    out.grad = out.grad.axpy(-e / w2, &dx);
                    let mut h = SymMatrix::identity(d).scaled(-e / w2);
                    h.add_outer(&dx, e / (w2 * w2));
                    out.hess = out.hess.add(&h);
                }
                out
            }
        }
    }

    fn sqrt_radial_eval(&self, x: &Vector) -> FieldEval {
        let s = (1.0 + x.norm_sq()).sqrt();
        let mut hess = SymMatrix::identity(self.dim).scaled(-self.scale / s);
        hess.add_outer(x, self.scale / (s * s * s));
        FieldEval {
            m: self.m0 - self.scale * s,
            grad: *x * (-self.scale / s),
            hess,
        }
    }

    #[inline]
    pub fn value(&self, x: &Vector) -> f64 {
        match self.kind {
            FieldKind::SqrtRadial => self.m0 - self.scale * (1.0 + x.norm_sq()).sqrt(),
            _ => self.eval_unchecked(x).m,
        }
    }

    #[inline]
    pub fn grad(&self, x: &Vector) -> Vector {
        match self.kind {
            FieldKind::SqrtRadial => *x * (-self.scale / (1.0 + x.norm_sq()).sqrt()),
            FieldKind::Constant => Vector::zeros(self.dim),
            _ => self.eval_unchecked(x).grad,
        }
    }
}

/// Extremes of the field over one sampled sphere `|x| = radius`.
#[derive(Clone, Copy, Debug)]
pub struct ShellStats {
    pub radius: f64,
    pub min_grad: f64,
    pub max_grad: f64,
    pub max_hess: f64,
    pub max_m_hess: f64,
    pub max_m: f64,
}

/// Deterministic low-discrepancy directions on the unit sphere.
pub fn sphere_directions(dim: usize, n: usize, offset: f64) -> Vec<Vector> {
    match dim {
        1 => vec![Vector::from_slice(&[1.0]).unwrap(), Vector::from_slice(&[-1.0]).unwrap()],
        2 => (0..n)
            .map(|k| Vector::polar(1.0, 2.0 * PI * ((k as f64 + offset) / n as f64)))
            .collect(),
        _ => {
            // Fibonacci lattice
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..n)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
                    let r = (1.0 - z * z).sqrt();
                    let phi = golden * k as f64 + 2.0 * PI * offset;
                    Vector::from_slice(&[r * phi.cos(), r * phi.sin(), z]).unwrap()
                })
                .collect()
        }
    }
}

fn directions_per_shell(dim: usize, resolution: usize) -> usize {
    match dim {
        1 => 2,
        2 => resolution.max(16),
        _ => (4 * resolution).max(64),
    }
}

pub fn shell_stats(field: &ChemoField, radius: f64, resolution: usize, offset: f64) -> ShellStats {
    let dirs = sphere_directions(field.dim, directions_per_shell(field.dim, resolution), offset);
    let mut st = ShellStats {
        radius,
        min_grad: f64::INFINITY,
        max_grad: 0.0,
        max_hess: 0.0,
        max_m_hess: 0.0,
        max_m: f64::NEG_INFINITY,
    };
    for dir in &dirs {
        let e = field.eval_unchecked(&(*dir * radius));
        let g = e.grad.norm();
        let h = e.hess.operator_norm();
        st.min_grad = st.min_grad.min(g);
        st.max_grad = st.max_grad.max(g);
        st.max_hess = st.max_hess.max(h);
        st.max_m_hess = st.max_m_hess.max(e.m.abs() * h);
        st.max_m = st.max_m.max(e.m);
    }
    st
}

/// `min |grad M|` over the sampled shell `r_in <= |x| <= r_out`.
pub fn min_grad_on_shell(field: &ChemoField, r_in: f64, r_out: f64, resolution: usize) -> f64 {
    let n = resolution.max(1);
    (0..=n)
        .map(|j| {
            let r = if n == 0 { r_in } else { r_in + (r_out - r_in) * j as f64 / n as f64 };
            shell_stats(field, r, resolution, golden_offset(j)).min_grad
        })
        .fold(f64::INFINITY, f64::min)
}

fn golden_offset(j: usize) -> f64 {
    (j as f64 * 0.618_033_988_749_894_9).fract()
}

/// Sampled check of (H3) and of boundedness of `M Hess(M)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub sup_grad: f64,
    pub m_star: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub sup_hess: f64,
    pub sup_m_hess: f64,
    pub pass_h3: bool,
    pub pass_m_hess_bounded: bool,
    pub probe_radius: f64,
}

/// Samples `grid_resolution + 1` shells of radius `probe_radius * j / n`.
///
/// `R` is the smallest sampled radius beyond which `|grad M|` stays above half
/// of its value on the outermost shell; `m_star` is the minimum of `|grad M|`
/// over the shells in `[R, probe_radius]`. The tail-trend checks compare the
/// outermost shell with the shell at half the probe radius.
pub fn check_hypotheses(field: &ChemoField, probe_radius: f64, grid_resolution: usize) -> Result<HypothesisReport> {
    if !(probe_radius > 0.0) {
        return Err(Error::Input("probe_radius must be positive".into()));
    }
    field.validate()?;
    let n = grid_resolution.max(2);
    let shells: Vec<ShellStats> = (0..=n)
        .map(|j| shell_stats(field, probe_radius * j as f64 / n as f64, grid_resolution, golden_offset(j)))
        .collect();

    let sup_grad = shells.iter().map(|s| s.max_grad).fold(0.0, f64::max);
    let sup_hess = shells.iter().map(|s| s.max_hess).fold(0.0, f64::max);
    let sup_m_hess = shells.iter().map(|s| s.max_m_hess).fold(0.0, f64::max);

    let outer = shells[n];
    let half = shells[n / 2];
    let threshold = 0.5 * outer.min_grad;

    let (r, m_star) = if threshold > 0.0 {
        // walk inwards while the suffix minimum stays above the threshold
        let mut start = n;
        let mut suffix_min = outer.min_grad;
        for j in (0..n).rev() {
            let m = suffix_min.min(shells[j].min_grad);
            if m < threshold || m <= 0.0 {
                break;
            }
            suffix_min = m;
            start = j;
        }
        (shells[start].radius, suffix_min)
    } else {
        (probe_radius, 0.0)
    };

    let grad_bounded = outer.max_grad <= 1.05 * half.max_grad + 1e-12;
    let hess_decays = outer.max_hess <= 0.75 * half.max_hess || outer.max_hess < 1e-12;
    let m_decreasing = outer.max_m < half.max_m;
    let pass_h3 = m_star > 0.0 && grad_bounded && hess_decays && m_decreasing;
    let pass_m_hess_bounded = outer.max_m_hess <= 1.05 * half.max_m_hess + 1e-12;

    Ok(HypothesisReport {
        sup_grad,
        m_star,
        r,
        sup_hess,
        sup_m_hess,
        pass_h3,
        pass_m_hess_bounded,
        probe_radius,
    })
}
