//! Tumbling rate `lambda(m) = 1 - chi psi(m)` and checks of (H1)/(H2).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiKind {
    /// `sign(m)`, with `psi(0) = 0`.
    Sign,
    Tanh,
    /// `(2/pi) atan(slope m)`.
    ScaledArctan,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsiSpec {
    pub kind: PsiKind,
    #[serde(default = "unit_slope")]
    pub slope: f64,
}

fn unit_slope() -> f64 {
    1.0
}

impl PsiSpec {
    pub fn sign() -> Self {
        Self { kind: PsiKind::Sign, slope: 1.0 }
    }

    pub fn tanh(slope: f64) -> Self {
        Self { kind: PsiKind::Tanh, slope }
    }

    #[inline]
    pub fn eval(&self, m: f64) -> f64 {
        match self.kind {
            PsiKind::Sign => {
                if m > 0.0 {
                    1.0
                } else if m < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            PsiKind::Tanh => (self.slope * m).tanh(),
            PsiKind::ScaledArctan => std::f64::consts::FRAC_2_PI * (self.slope * m).atan(),
        }
    }

    /// `psi'(m)`; for `Sign` the almost-everywhere value 0, also at `m = 0`.
    #[inline]
    pub fn derivative(&self, m: f64) -> f64 {
        match self.kind {
            PsiKind::Sign => 0.0,
            PsiKind::Tanh => {
                let c = (self.slope * m).cosh();
                self.slope / (c * c)
            }
            PsiKind::ScaledArctan => {
                let u = self.slope * m;
                std::f64::consts::FRAC_2_PI * self.slope / (1.0 + u * u)
            }
        }
    }

    /// `d/dm [m psi(m)] = psi(m) + m psi'(m)`.
    #[inline]
    pub fn d_m_psi(&self, m: f64) -> f64 {
        self.eval(m) + m * self.derivative(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.slope > 0.0) || !self.slope.is_finite() {
            return Err(Error::Config("psi slope must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSpec {
    pub chi: f64,
    pub psi: PsiSpec,
}

impl RateSpec {
    pub fn new(chi: f64, psi: PsiSpec) -> Result<Self> {
        let r = Self { chi, psi };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.chi >= 0.0 && self.chi < 1.0) {
            return Err(Error::Config(format!("chi = {} must lie in [0, 1)", self.chi)));
        }
        self.psi.validate()
    }

    /// Tumbling rate at `m = v . grad M(x)`.
    #[inline]
    pub fn lambda(&self, m: f64) -> f64 {
        1.0 - self.chi * self.psi.eval(m)
    }

    /// Constant thinning majorant `1 + chi`.
    #[inline]
    pub fn majorant(&self) -> f64 {
        1.0 + self.chi
    }
}

/// Probe grid for (H2): log-spaced magnitudes from `1e-8` up to `bound`.
fn h2_grid(bound: f64) -> Vec<f64> {
    let lo = 1e-8_f64.min(bound);
    let n = 4000;
    let (la, lb) = (lo.ln(), bound.ln());
    let mut g: Vec<f64> = (0..=n).map(|i| (la + (lb - la) * i as f64 / n as f64).exp()).collect();
    g.push(bound);
    g
}

/// Smallest candidate `b` with `inf_{|m| <= bound} m psi(m) / |m|^b > 0`, and that infimum.
///
/// A candidate is rejected when the ratio collapses towards `m -> 0`: the
/// value at the smallest probe is less than half the value two decades up.
pub fn check_h2(psi: &PsiSpec, bound: f64, b_candidates: &[u32]) -> Result<(u32, f64)> {
    if !(bound > 0.0) {
        return Err(Error::Input("(H2) bound B must be positive".into()));
    }
    let grid = h2_grid(bound);
    let mut cands = b_candidates.to_vec();
    cands.sort_unstable();
    for &b in &cands {
        let ratio = |m: f64| {
            let both = [m * psi.eval(m), (-m) * psi.eval(-m)];
            both.iter().fold(f64::INFINITY, |acc, &x| acc.min(x)) / m.powi(b as i32)
        };
        let c = grid.iter().map(|&m| ratio(m)).fold(f64::INFINITY, f64::min);
        let tiny = ratio(grid[0]);
        let upstream = ratio((grid[0] * 100.0).min(bound));
        let collapsing = tiny < 0.5 * upstream;
        if c > 1e-12 && !collapsing {
            return Ok((b, c));
        }
    }
    Err(Error::H2Violated { candidates: cands })
}

/// `(sup_z z psi'(z), Lipschitz constant of z psi(z))` by grid scan.
///
/// The scan runs over `|slope z| <= 40` with step `1e-4` in the scaled
/// variable; both quantities are invariant under the slope rescaling.
pub fn psi_derived_constants(psi: &PsiSpec) -> (f64, f64) {
    let step = 1e-4;
    let n = 400_000;
    let mut sup_zpp = 0.0_f64;
    let mut lip = 0.0_f64;
    let zpsi = |z: f64| z * psi.eval(z);
    let mut prev_z = -step / psi.slope;
    let mut prev = zpsi(prev_z);
    for i in 0..=n {
        let z = i as f64 * step / psi.slope;
        sup_zpp = sup_zpp.max(z * psi.derivative(z));
        let cur = zpsi(z);
        lip = lip.max(((cur - prev) / (z - prev_z)).abs());
        prev = cur;
        prev_z = z;
    }
    (sup_zpp, lip)
}
