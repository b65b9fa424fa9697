//! Small fixed-capacity vectors and symmetric matrices for phase-space points.
//!
//! Everything in this crate lives in dimension 1, 2 or 3, so positions and
//! velocities are stored inline instead of on the heap.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported spatial / velocity dimension.
pub const MAX_DIM: usize = 3;

/// A point or direction in `R^d`, `1 <= d <= 3`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Vector {
    comps: [f64; MAX_DIM],
    dim: usize,
}

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "dimension {dim} out of range");
        Self { comps: [0.0; MAX_DIM], dim }
    }

    pub fn from_slice(xs: &[f64]) -> Result<Self> {
        if xs.is_empty() || xs.len() > MAX_DIM {
            return Err(Error::Input(format!(
                "vector length {} outside 1..={MAX_DIM}",
                xs.len()
            )));
        }
        let mut v = Self::zeros(xs.len());
        v.comps[..xs.len()].copy_from_slice(xs);
        Ok(v)
    }

    /// Unit vector at angle `theta` scaled by `speed` (d = 2).
    pub fn polar(speed: f64, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self { comps: [speed * c, speed * s, 0.0], dim: 2 }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.comps[..self.dim]
    }

    #[inline]
    pub fn dot(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        self.comps[0] * other.comps[0] + self.comps[1] * other.comps[1] + self.comps[2] * other.comps[2]
    }

    #[inline]
    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `self + t * dir`.
    #[inline]
    pub fn axpy(&self, t: f64, dir: &Self) -> Self {
        let mut out = *self;
        for i in 0..MAX_DIM {
            out.comps[i] += t * dir.comps[i];
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|c| c.is_finite())
    }

    /// Angle of a planar vector in `(-pi, pi]`.
    pub fn angle(&self) -> f64 {
        self.comps[1].atan2(self.comps[0])
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::from_slice(&v)
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.as_slice().to_vec()
    }
}

impl Index<usize> for Vector {
    type Output = f64;
    #[inline]
    fn index(&self, i: usize) -> &f64 {
        &self.as_slice()[i]
    }
}

impl IndexMut<usize> for Vector {
    #[inline]
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        let d = self.dim;
        &mut self.comps[..d][i]
    }
}

impl Add for Vector {
    type Output = Vector;
    #[inline]
    fn add(self, rhs: Vector) -> Vector {
        self.axpy(1.0, &rhs)
    }
}

impl AddAssign for Vector {
    #[inline]
    fn add_assign(&mut self, rhs: Vector) {
        *self = *self + rhs;
    }
}

impl Sub for Vector {
    type Output = Vector;
    #[inline]
    fn sub(self, rhs: Vector) -> Vector {
        self.axpy(-1.0, &rhs)
    }
}

impl Mul<f64> for Vector {
    type Output = Vector;
    #[inline]
    fn mul(self, s: f64) -> Vector {
        let mut out = self;
        for c in out.comps.iter_mut() {
            *c *= s;
        }
        out
    }
}

impl Neg for Vector {
    type Output = Vector;
    #[inline]
    fn neg(self) -> Vector {
        self * -1.0
    }
}

/// Symmetric `d x d` matrix (Hessians).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymMatrix {
    m: [[f64; MAX_DIM]; MAX_DIM],
    dim: usize,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim));
        Self { m: [[0.0; MAX_DIM]; MAX_DIM], dim }
    }

    pub fn identity(dim: usize) -> Self {
        let mut out = Self::zeros(dim);
        for i in 0..dim {
            out.m[i][i] = 1.0;
        }
        out
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[i][j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, val: f64) {
        self.m[i][j] = val;
        self.m[j][i] = val;
    }

    /// `v^T H v`.
    #[inline]
    pub fn quad_form(&self, v: &Vector) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                acc += v[i] * self.m[i][j] * v[j];
            }
        }
        acc
    }

    #[inline]
    pub fn mul_vec(&self, v: &Vector) -> Vector {
        let mut out = Vector::zeros(self.dim);
        for i in 0..self.dim {
            out[i] = (0..self.dim).map(|j| self.m[i][j] * v[j]).sum();
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = *self;
        for row in out.m.iter_mut() {
            for c in row.iter_mut() {
                *c *= s;
            }
        }
        out
    }

    pub fn add_outer(&mut self, a: &Vector, scale: f64) {
        for i in 0..self.dim {
            for j in 0..self.dim {
                self.m[i][j] += scale * a[i] * a[j];
            }
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = *self;
        for i in 0..MAX_DIM {
            for j in 0..MAX_DIM {
                out.m[i][j] += other.m[i][j];
            }
        }
        out
    }

    /// Spectral norm, via Jacobi eigenvalues for `d <= 3`.
    pub fn operator_norm(&self) -> f64 {
        self.eigenvalues()
            .into_iter()
            .fold(0.0_f64, |acc, e| acc.max(e.abs()))
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let n = self.dim;
        let mut a = self.m;
        for _sweep in 0..50 {
            let mut off = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    off += a[i][j] * a[i][j];
                }
            }
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[k][p];
                        let akq = a[k][q];
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[p][k];
                        let aqk = a[q][k];
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        (0..n).map(|i| a[i][i]).collect()
    }
}
