//! Histograms of weighted particle clouds and grid densities on a common
//! product binning, plus one overflow bin for everything outside.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pdmp::ParticleState;
use crate::vector::Vector;

/// Coordinates a state is binned in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Coords {
    /// `(x_1..x_d, v_1..v_d)`.
    PositionVelocity { dim: usize },
    /// `(x_1, x_2, angle(v))` for velocities on the circle of radius `speed`.
    PositionHeading { speed: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, n: usize) -> Self {
        Self { lo, hi, n }
    }

    pub fn heading(n: usize) -> Self {
        Self { lo: -PI, hi: PI, n }
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.n as f64
    }

    #[inline]
    fn index(&self, c: f64) -> Option<usize> {
        if !(c >= self.lo && c < self.hi) {
            return None;
        }
        let i = ((c - self.lo) / self.width()) as usize;
        Some(i.min(self.n - 1))
    }

    pub fn centre(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub coords: Coords,
    pub axes: Vec<Axis>,
}

impl BinSpec {
    pub fn new(coords: Coords, axes: Vec<Axis>) -> Result<Self> {
        let want = match coords {
            Coords::PositionVelocity { dim } => 2 * dim,
            Coords::PositionHeading { .. } => 3,
        };
        if axes.len() != want {
            return Err(Error::Config(format!("binning needs {want} axes, got {}", axes.len())));
        }
        if axes.iter().any(|a| a.n == 0 || !(a.hi > a.lo)) {
            return Err(Error::Config("every bin axis needs n >= 1 and hi > lo".into()));
        }
        Ok(Self { coords, axes })
    }

    /// Number of regular cells; the overflow bin has index `n_cells()`.
    pub fn n_cells(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    fn coordinates(&self, x: &Vector, v: &Vector) -> [f64; 6] {
        let mut c = [0.0; 6];
        match self.coords {
            Coords::PositionVelocity { dim } => {
                for i in 0..dim {
                    c[i] = x[i];
                    c[dim + i] = v[i];
                }
            }
            Coords::PositionHeading { .. } => {
                c[0] = x[0];
                c[1] = x[1];
                c[2] = v.angle();
            }
        }
        c
    }

    pub fn index(&self, x: &Vector, v: &Vector) -> usize {
        let c = self.coordinates(x, v);
        let mut idx = 0;
        for (k, a) in self.axes.iter().enumerate() {
            match a.index(c[k]) {
                Some(i) => idx = idx * a.n + i,
                None => return self.n_cells(),
            }
        }
        idx
    }

    /// Representative state at the centre of a regular cell.
    pub fn centre(&self, cell: usize) -> (Vector, Vector) {
        let mut rem = cell;
        let mut c = [0.0; 6];
        for k in (0..self.axes.len()).rev() {
            let a = &self.axes[k];
            c[k] = a.centre(rem % a.n);
            rem /= a.n;
        }
        match self.coords {
            Coords::PositionVelocity { dim } => {
                (Vector::from_slice(&c[..dim]).unwrap(), Vector::from_slice(&c[dim..2 * dim]).unwrap())
            }
            Coords::PositionHeading { speed } => {
                (Vector::from_slice(&c[..2]).unwrap(), Vector::polar(speed, c[2]))
            }
        }
    }

    pub fn empty(&self) -> Histogram {
        Histogram { mass: vec![0.0; self.n_cells() + 1], total: 0.0, count: 0 }
    }

    pub fn histogram<'a, I: IntoIterator<Item = &'a ParticleState>>(&self, particles: I) -> Histogram {
        let mut h = self.empty();
        for p in particles {
            h.add(self.index(&p.x, &p.v), p.weight);
        }
        h
    }
}

/// Binned mass; the last entry is the overflow bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub mass: Vec<f64>,
    pub total: f64,
    pub count: u64,
}

impl Histogram {
    #[inline]
    pub fn add(&mut self, cell: usize, w: f64) {
        self.mass[cell] += w;
        self.total += w;
        self.count += 1;
    }

    pub fn merge(&mut self, other: &Histogram) {
        for (a, b) in self.mass.iter_mut().zip(&other.mass) {
            *a += b;
        }
        self.total += other.total;
        self.count += other.count;
    }

    /// Cell probabilities `mass / total`.
    pub fn probabilities(&self) -> Result<Vec<f64>> {
        if !(self.total > 0.0) {
            return Err(Error::Input("histogram has no mass".into()));
        }
        Ok(self.mass.iter().map(|m| m / self.total).collect())
    }

    pub fn overflow_fraction(&self) -> f64 {
        if self.total > 0.0 {
            self.mass.last().unwrap() / self.total
        } else {
            0.0
        }
    }
}
