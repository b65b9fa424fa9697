//! Deterministic solver for the kinetic equation on small grids: `d = 1`
//! with a truncated Maxwellian velocity box, or `d = 2` with velocities on
//! the circle `V0 S^1`.
//!
//! Strang splitting of semi-Lagrangian transport (cubic Lagrange
//! interpolation along exact characteristics) and a collision step that
//! treats the loss term exactly and redistributes the lost mass through the
//! discretely normalised kernel.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binning::{BinSpec, Histogram};
use crate::error::{Error, Result};
use crate::kernels::KernelKind;
use crate::pdmp::{EnsembleSnapshot, InitialLaw, Model, ParticleState, VelocityLaw};
use crate::quadrature;
use crate::vector::Vector;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Outflow is dropped and reported.
    #[default]
    Absorbing,
    /// As `Absorbing`, but outflow above `1e-10` of the mass is an error.
    LargeBox,
    /// Periodic box; used for diagnostics with a constant field.
    Periodic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VelocityGrid {
    /// `n_theta` equally spaced headings on the circle of radius `V0`.
    Circle { n_theta: usize },
    /// Composite Gauss–Legendre nodes on `[-v_max, v_max]`.
    Box {
        #[serde(default = "default_vmax")]
        v_max: f64,
        panels: usize,
        #[serde(default = "default_order")]
        order: usize,
    },
}

fn default_vmax() -> f64 {
    6.0
}

fn default_order() -> usize {
    4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    pub nx: Vec<usize>,
    pub velocity: VelocityGrid,
    pub dt: f64,
    #[serde(default)]
    pub boundary: Boundary,
}

#[derive(Clone, Debug)]
enum DiscreteKernel {
    /// `kappa(v, v') = k[v']`, independent of `v`.
    Projection(Vec<f64>),
    /// `kappa(v_i, v_j) = k[(i - j) mod n]`.
    Circulant(Vec<f64>),
}

/// Geometry of a grid together with its discretised kernel.
#[derive(Clone, Debug)]
pub struct Grid {
    pub cfg: GridConfig,
    dim: usize,
    n: [usize; 2],
    dx: [f64; 2],
    lo: [f64; 2],
    pub velocities: Vec<Vector>,
    /// Quadrature weights of the velocity nodes (arc length or Lebesgue).
    pub v_weights: Vec<f64>,
    kernel: DiscreteKernel,
}

impl Grid {
    pub fn new(cfg: &GridConfig, model: &Model) -> Result<Self> {
        let d = cfg.nx.len();
        if !(d == 1 || d == 2) || cfg.x_lo.len() != d || cfg.x_hi.len() != d {
            return Err(Error::Config("grid needs 1 or 2 position axes with matching bounds".into()));
        }
        if d != model.dim() {
            return Err(Error::Config(format!("grid dimension {d} != model dimension {}", model.dim())));
        }
        let mut n = [1usize; 2];
        let mut dx = [1.0; 2];
        let mut lo = [0.0; 2];
        for a in 0..d {
            if cfg.nx[a] < 4 || !(cfg.x_hi[a] > cfg.x_lo[a]) {
                return Err(Error::Config("each grid axis needs nx >= 4 and x_hi > x_lo".into()));
            }
            n[a] = cfg.nx[a];
            lo[a] = cfg.x_lo[a];
            dx[a] = (cfg.x_hi[a] - cfg.x_lo[a]) / n[a] as f64;
        }
        if !(cfg.dt > 0.0) {
            return Err(Error::Config("dt must be positive".into()));
        }
        let kernel = &model.kernel;
        let (velocities, v_weights, disc, vmax) = match &cfg.velocity {
            VelocityGrid::Circle { n_theta } => {
                if d != 2 || !kernel.spec().is_sphere() {
                    return Err(Error::Config("circle velocity grids need d = 2 and a sphere kernel".into()));
                }
                let nt = *n_theta;
                if nt < 4 {
                    return Err(Error::Config("n_theta must be at least 4".into()));
                }
                let v0 = kernel.v0();
                let h = 2.0 * PI / nt as f64;
                let vel: Vec<Vector> = (0..nt).map(|k| Vector::polar(v0, -PI + (k as f64 + 0.5) * h)).collect();
                let w = vec![v0 * h; nt];
                // cell averages of kappa1 over each angular offset
                let mut k = vec![0.0; nt];
                let support = kernel.support();
                for (m, km) in k.iter_mut().enumerate() {
                    let off = if m <= nt / 2 { m as f64 } else { m as f64 - nt as f64 } * h;
                    let (a, b) = (off - 0.5 * h, off + 0.5 * h);
                    let breaks = [-support, support, -PI, PI];
                    let val = quadrature::adaptive_with_breaks(
                        |t| {
                            let t = (t + PI).rem_euclid(2.0 * PI) - PI;
                            kernel.kappa1(t)
                        },
                        a,
                        b,
                        &breaks,
                        1e-12,
                    )?;
                    *km = val / h / v0;
                }
                let s: f64 = k.iter().map(|x| x * v0 * h).sum();
                for km in k.iter_mut() {
                    *km /= s;
                }
                (vel, w, DiscreteKernel::Circulant(k), v0)
            }
            VelocityGrid::Box { v_max, panels, order } => {
                if d != 1 || kernel.spec().kind != KernelKind::Maxwellian {
                    return Err(Error::Config("velocity-box grids need d = 1 and the Maxwellian kernel".into()));
                }
                if *panels == 0 || *order == 0 || !(*v_max > 0.0) {
                    return Err(Error::Config("velocity box needs panels, order >= 1 and v_max > 0".into()));
                }
                let rule = quadrature::gauss_legendre(*order);
                let h = 2.0 * v_max / *panels as f64;
                let mut vel = Vec::new();
                let mut w = Vec::new();
                for p in 0..*panels {
                    let a = -v_max + p as f64 * h;
                    for (z, wz) in rule.nodes.iter().zip(&rule.weights) {
                        vel.push(Vector::from_slice(&[a + 0.5 * h * (z + 1.0)]).unwrap());
                        w.push(0.5 * h * wz);
                    }
                }
                let mut k: Vec<f64> = vel.iter().map(|v| (-0.5 * v.norm_sq()).exp()).collect();
                let s: f64 = k.iter().zip(&w).map(|(a, b)| a * b).sum();
                for km in k.iter_mut() {
                    *km /= s;
                }
                (vel, w, DiscreteKernel::Projection(k), *v_max)
            }
        };
        let min_dx = dx[..d].iter().cloned().fold(f64::INFINITY, f64::min);
        if cfg.dt > 0.9 * min_dx / vmax * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "CFL violated: dt = {} > 0.9 * dx / V_max = {}",
                cfg.dt,
                0.9 * min_dx / vmax
            )));
        }
        Ok(Self { cfg: cfg.clone(), dim: d, n, dx, lo, velocities, v_weights, kernel: disc })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_x(&self) -> usize {
        self.n[0] * if self.dim == 2 { self.n[1] } else { 1 }
    }

    pub fn n_v(&self) -> usize {
        self.velocities.len()
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx[..self.dim].iter().product()
    }

    pub fn dx(&self) -> &[f64] {
        &self.dx[..self.dim]
    }

    pub fn x_centre(&self, i: usize) -> Vector {
        if self.dim == 1 {
            Vector::from_slice(&[self.lo[0] + (i as f64 + 0.5) * self.dx[0]]).unwrap()
        } else {
            let (i0, i1) = (i / self.n[1], i % self.n[1]);
            Vector::from_slice(&[
                self.lo[0] + (i0 as f64 + 0.5) * self.dx[0],
                self.lo[1] + (i1 as f64 + 0.5) * self.dx[1],
            ])
            .unwrap()
        }
    }

    /// Discretised initial law, normalised to unit mass.
    pub fn initial(&self, law: &InitialLaw, model: &Model) -> Result<GridDensity> {
        law.validate(model)?;
        let d = self.dim;
        // position density, cell averages by a tensor Gauss rule
        let rule = quadrature::gauss_legendre(6);
        let pos_density = |x: &Vector| -> f64 {
            match law {
                InitialLaw::Gaussian { centre, std, .. } => {
                    let r2: f64 = (0..d).map(|a| (x[a] - centre[a]).powi(2)).sum();
                    (-0.5 * r2 / (std * std)).exp()
                }
                InitialLaw::UniformBall { centre, radius, .. } => {
                    let r2: f64 = (0..d).map(|a| (x[a] - centre[a]).powi(2)).sum();
                    if r2 <= radius * radius {
                        1.0
                    } else {
                        0.0
                    }
                }
                InitialLaw::Point { .. } => 0.0,
            }
        };
        let nx = self.n_x();
        let mut rho = vec![0.0; nx];
        if let InitialLaw::Point { x, .. } = law {
            let p = Vector::from_slice(x)?;
            let idx = self.locate(&p).ok_or_else(|| Error::Config("initial point outside the grid box".into()))?;
            rho[idx] = 1.0;
        } else {
            for (i, r) in rho.iter_mut().enumerate() {
                let c = self.x_centre(i);
                let mut acc = 0.0;
                if d == 1 {
                    for (z, w) in rule.nodes.iter().zip(&rule.weights) {
                        let x = Vector::from_slice(&[c[0] + 0.5 * self.dx[0] * z]).unwrap();
                        acc += 0.5 * w * pos_density(&x);
                    }
                } else {
                    for (z0, w0) in rule.nodes.iter().zip(&rule.weights) {
                        for (z1, w1) in rule.nodes.iter().zip(&rule.weights) {
                            let x = Vector::from_slice(&[c[0] + 0.5 * self.dx[0] * z0, c[1] + 0.5 * self.dx[1] * z1]).unwrap();
                            acc += 0.25 * w0 * w1 * pos_density(&x);
                        }
                    }
                }
                *r = acc;
            }
        }
        let nv = self.n_v();
        let g: Vec<f64> = match law.velocity() {
            VelocityLaw::Maxwellian => self.velocities.iter().map(|v| (-0.5 * v.norm_sq()).exp()).collect(),
            VelocityLaw::UniformSphere { .. } => vec![1.0; nv],
            VelocityLaw::Fixed { v } => {
                let v = Vector::from_slice(v)?;
                let k = (0..nv)
                    .min_by(|&a, &b| (self.velocities[a] - v).norm().total_cmp(&(self.velocities[b] - v).norm()))
                    .unwrap();
                let mut g = vec![0.0; nv];
                g[k] = 1.0;
                g
            }
            VelocityLaw::UniformBall { radius } => {
                self.velocities.iter().map(|v| if v.norm() <= *radius { 1.0 } else { 0.0 }).collect()
            }
        };
        let mut values = vec![0.0; nv * nx];
        for k in 0..nv {
            for i in 0..nx {
                values[k * nx + i] = g[k] * rho[i];
            }
        }
        let mut f = GridDensity { grid: self.clone(), values, time: 0.0 };
        let m = f.mass();
        if !(m > 0.0) {
            return Err(Error::Config("initial law has no mass on the grid".into()));
        }
        f.values.iter_mut().for_each(|v| *v /= m);
        Ok(f)
    }

    fn locate(&self, x: &Vector) -> Option<usize> {
        let mut idx = 0;
        for a in 0..self.dim {
            let c = (x[a] - self.lo[a]) / self.dx[a];
            if !(c >= 0.0 && c < self.n[a] as f64) {
                return None;
            }
            idx = idx * self.n[a] + c as usize;
        }
        Some(idx)
    }
}

/// Density values at (velocity node, position cell), velocity-major.
#[derive(Clone, Debug)]
pub struct GridDensity {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub time: f64,
}

impl GridDensity {
    pub fn mass(&self) -> f64 {
        let nx = self.grid.n_x();
        let vol = self.grid.cell_volume();
        self.values
            .chunks(nx)
            .zip(&self.grid.v_weights)
            .map(|(col, w)| col.iter().sum::<f64>() * w * vol)
            .sum()
    }

    /// `int |f - g| dx dv` by the grid quadrature.
    pub fn l1_distance(&self, other: &GridDensity) -> Result<f64> {
        if self.values.len() != other.values.len() {
            return Err(Error::Input("grid densities on different grids".into()));
        }
        let nx = self.grid.n_x();
        let vol = self.grid.cell_volume();
        Ok(self
            .values
            .chunks(nx)
            .zip(other.values.chunks(nx))
            .zip(&self.grid.v_weights)
            .map(|((a, b), w)| a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum::<f64>() * w * vol)
            .sum())
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Cell masses binned at the cell centres.
    pub fn histogram(&self, bins: &BinSpec) -> Histogram {
        let nx = self.grid.n_x();
        let vol = self.grid.cell_volume();
        let mut h = bins.empty();
        for (k, v) in self.grid.velocities.iter().enumerate() {
            let w = self.grid.v_weights[k] * vol;
            for i in 0..nx {
                let m = self.values[k * nx + i] * w;
                if m != 0.0 {
                    h.add(bins.index(&self.grid.x_centre(i), v), m);
                }
            }
        }
        h
    }

    /// One pseudo-particle per cell carrying the cell mass, for the snapshot writers.
    pub fn to_snapshot(&self) -> EnsembleSnapshot {
        let nx = self.grid.n_x();
        let vol = self.grid.cell_volume();
        let mut particles = Vec::with_capacity(self.values.len());
        for (k, v) in self.grid.velocities.iter().enumerate() {
            for i in 0..nx {
                particles.push(ParticleState {
                    x: self.grid.x_centre(i),
                    v: *v,
                    t: self.time,
                    weight: self.values[k * nx + i] * self.grid.v_weights[k] * vol,
                });
            }
        }
        EnsembleSnapshot { time: self.time, particles, seed: 0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveLog {
    pub steps: u64,
    /// Mass removed by clipping negative values, summed over steps.
    pub clipped_mass: f64,
    pub max_clipped_per_step: f64,
    pub clip_events: u64,
    /// Total flux moved by the transport positivity limiter.
    pub limited_flux: f64,
    /// Mass that left the box.
    pub outflow: f64,
}

/// Cubic Lagrange weights for the stencil `j-1, j, j+1, j+2` at `j + q`.
#[inline]
fn cubic_weights(q: f64) -> [f64; 4] {
    [
        -q * (q - 1.0) * (q - 2.0) / 6.0,
        (q + 1.0) * (q - 1.0) * (q - 2.0) / 2.0,
        -(q + 1.0) * q * (q - 2.0) / 2.0,
        (q + 1.0) * q * (q - 1.0) / 6.0,
    ]
}

/// Conservative shift of cell averages by `s` cells: `out[i]` is the mass of
/// the upstream interval `[i - s, i + 1 - s]`.
///
/// The mass of the left piece `[j, j + r]` of cell `j` comes from cubic
/// interpolation of the cumulative mass through the nodes `j-1..j+2`, and is
/// limited to `[0, line[j]]` so that both pieces stay non-negative. Returns
/// the total amount the limiter moved.
fn shift_line(line: &[f64], s: f64, periodic: bool, out: &mut [f64]) -> f64 {
    let n = line.len() as i64;
    let at = |idx: i64| -> f64 {
        if periodic {
            line[idx.rem_euclid(n) as usize]
        } else if idx >= 0 && idx < n {
            line[idx as usize]
        } else {
            0.0
        }
    };
    let whole = s.floor();
    let q = s - whole;
    let whole = whole as i64;
    if q == 0.0 {
        for (i, o) in out.iter_mut().enumerate() {
            *o = at(i as i64 - whole);
        }
        return 0.0;
    }
    let r = 1.0 - q;
    let w = cubic_weights(r);
    let mut limited = 0.0;
    let mut left = |j: i64| -> f64 {
        let (fm, f0, fp) = (at(j - 1), at(j), at(j + 1));
        let g = -w[0] * fm + w[2] * f0 + w[3] * (f0 + fp);
        let gl = g.clamp(0.0, f0);
        limited += (gl - g).abs();
        gl
    };
    // out[i] = right piece of cell i - whole - 1 plus left piece of cell i - whole
    let mut prev_left = left(-whole - 1);
    for (i, o) in out.iter_mut().enumerate() {
        let j = i as i64 - whole - 1;
        let next_left = left(j + 1);
        *o = (at(j) - prev_left) + next_left;
        prev_left = next_left;
    }
    limited
}

struct Stepper<'a> {
    grid: &'a Grid,
    /// Per (cell, velocity), cell-major: `exp(-lambda h)`, `1 - exp(-lambda h)`, and `c`.
    decay: Vec<f64>,
    loss: Vec<f64>,
    c: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(grid: &'a Grid, model: &Model, h: f64) -> Self {
        let nx = grid.n_x();
        let nv = grid.n_v();
        let mut decay = vec![0.0; nx * nv];
        let mut loss = vec![0.0; nx * nv];
        let mut c = vec![0.0; nx * nv];
        for i in 0..nx {
            let x = grid.x_centre(i);
            let g = model.field.grad(&x);
            for (k, v) in grid.velocities.iter().enumerate() {
                let lam = model.rate.lambda(v.dot(&g));
                let z = lam * h;
                let e = (-z).exp();
                let l = -(-z).exp_m1();
                decay[i * nv + k] = e;
                loss[i * nv + k] = l;
                c[i * nv + k] = if z > 1e-12 { l / z } else { 1.0 - 0.5 * z };
            }
        }
        Self { grid, decay, loss, c }
    }

    /// Free transport over `h`; returns the mass lost through the boundary
    /// and the flux moved by the limiter.
    fn transport(&self, values: &mut [f64], h: f64) -> (f64, f64) {
        let g = self.grid;
        let nx = g.n_x();
        let periodic = g.cfg.boundary == Boundary::Periodic;
        let before: f64 = self.column_masses(values);
        let limited: Vec<f64> = values
            .par_chunks_mut(nx)
            .enumerate()
            .map(|(k, col)| {
                let v = g.velocities[k];
                let mut lim = 0.0;
                if g.dim == 1 {
                    let mut out = vec![0.0; nx];
                    lim += shift_line(col, v[0] * h / g.dx[0], periodic, &mut out);
                    col.copy_from_slice(&out);
                } else {
                    let (n0, n1) = (g.n[0], g.n[1]);
                    let mut out = vec![0.0; n1.max(n0)];
                    let s1 = v[1] * h / g.dx[1];
                    for r in 0..n0 {
                        let row = &mut col[r * n1..(r + 1) * n1];
                        lim += shift_line(row, s1, periodic, &mut out[..n1]);
                        row.copy_from_slice(&out[..n1]);
                    }
                    let s0 = v[0] * h / g.dx[0];
                    let mut line = vec![0.0; n0];
                    for cidx in 0..n1 {
                        for r in 0..n0 {
                            line[r] = col[r * n1 + cidx];
                        }
                        lim += shift_line(&line, s0, periodic, &mut out[..n0]);
                        for r in 0..n0 {
                            col[r * n1 + cidx] = out[r];
                        }
                    }
                }
                lim * g.v_weights[k] * g.cell_volume()
            })
            .collect();
        (before - self.column_masses(values), limited.iter().sum())
    }

    fn column_masses(&self, values: &[f64]) -> f64 {
        let nx = self.grid.n_x();
        let vol = self.grid.cell_volume();
        values
            .chunks(nx)
            .zip(&self.grid.v_weights)
            .map(|(col, w)| col.iter().sum::<f64>() * w * vol)
            .sum()
    }

    /// Collision step over `h` at every cell.
    fn collide(&self, values: &mut [f64], scratch: &mut Vec<f64>) {
        let g = self.grid;
        let nx = g.n_x();
        let nv = g.n_v();
        scratch.resize(nx * nv, 0.0);
        let w = &g.v_weights;
        let vals: &[f64] = values;
        scratch.par_chunks_mut(nv).enumerate().for_each(|(i, out)| {
            let dec = &self.decay[i * nv..(i + 1) * nv];
            let loss = &self.loss[i * nv..(i + 1) * nv];
            let c = &self.c[i * nv..(i + 1) * nv];
            match &g.kernel {
                DiscreteKernel::Projection(kap) => {
                    let mut j = 0.0;
                    let mut s = 0.0;
                    for k in 0..nv {
                        j += w[k] * loss[k] * vals[k * nx + i];
                        s += w[k] * kap[k] * c[k];
                    }
                    let scale = if s > 0.0 { j / s } else { 0.0 };
                    for k in 0..nv {
                        out[k] = dec[k] * vals[k * nx + i] + kap[k] * c[k] * scale;
                    }
                }
                DiscreteKernel::Circulant(kap) => {
                    let lost: Vec<f64> = (0..nv).map(|k| w[k] * loss[k] * vals[k * nx + i]).collect();
                    let mut gsum = 0.0;
                    let mut gcsum = 0.0;
                    for a in 0..nv {
                        let mut gain = 0.0;
                        for (b, lb) in lost.iter().enumerate() {
                            gain += kap[(a + nv - b) % nv] * lb;
                        }
                        out[a] = gain;
                        gsum += w[a] * gain;
                        gcsum += w[a] * c[a] * gain;
                    }
                    let scale = if gcsum > 0.0 { gsum / gcsum } else { 0.0 };
                    for a in 0..nv {
                        out[a] = dec[a] * vals[a * nx + i] + c[a] * out[a] * scale;
                    }
                }
            }
        });
        values.par_chunks_mut(nx).enumerate().for_each(|(k, col)| {
            for (i, v) in col.iter_mut().enumerate() {
                *v = scratch[i * nv + k];
            }
        });
    }

    fn clip(&self, values: &mut [f64]) -> f64 {
        let nx = self.grid.n_x();
        let vol = self.grid.cell_volume();
        let mut clipped = 0.0;
        for (col, w) in values.chunks_mut(nx).zip(&self.grid.v_weights) {
            for v in col.iter_mut() {
                if *v < 0.0 {
                    clipped += -*v * w * vol;
                    *v = 0.0;
                }
            }
        }
        clipped
    }
}

/// Integrates from `f0` over a time span `t`.
pub fn solve(f0: &GridDensity, t: f64, model: &Model) -> Result<(GridDensity, SolveLog)> {
    if !(t >= 0.0) {
        return Err(Error::Input("integration time must be non-negative".into()));
    }
    if f0.values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Input("initial grid density must be finite and non-negative".into()));
    }
    let grid = &f0.grid;
    let mut f = f0.clone();
    let mut log = SolveLog::default();
    if t == 0.0 {
        return Ok((f, log));
    }
    let steps = (t / grid.cfg.dt * (1.0 - 1e-12)).ceil().max(1.0) as u64;
    let h = t / steps as f64;
    let st = Stepper::new(grid, model, h);
    let mut scratch = Vec::new();
    let mass0 = f.mass();
    let track_clip = |clipped: f64, log: &mut SolveLog| {
        if clipped > 0.0 {
            log.clip_events += 1;
        }
        log.clipped_mass += clipped;
        log.max_clipped_per_step = log.max_clipped_per_step.max(clipped);
    };
    let (out, lim) = st.transport(&mut f.values, 0.5 * h);
    log.outflow += out;
    log.limited_flux += lim;
    let c = st.clip(&mut f.values);
    track_clip(c, &mut log);
    for s in 0..steps {
        st.collide(&mut f.values, &mut scratch);
        let span = if s + 1 == steps { 0.5 * h } else { h };
        let (out, lim) = st.transport(&mut f.values, span);
        log.outflow += out;
        log.limited_flux += lim;
        let c = st.clip(&mut f.values);
        track_clip(c, &mut log);
        log.steps += 1;
    }
    f.time = f0.time + t;
    if grid.cfg.boundary == Boundary::LargeBox && log.outflow > 1e-10 * mass0 {
        return Err(Error::Simulation {
            time: f.time,
            message: format!("outflow {} exceeds the large-box budget", log.outflow),
            events: Vec::new(),
        });
    }
    Ok((f, log))
}

/// Late-time profile used as the steady-state reference.
#[derive(Clone, Debug)]
pub struct StationaryEstimate {
    pub density: GridDensity,
    /// `||f(k+1) - f(k)||_1` for `k = 0, 1, ...`.
    pub residuals: Vec<f64>,
    /// Relative mass change removed by the final renormalisation.
    pub mass_drift: f64,
    pub log: SolveLog,
}

/// Integrates in unit-time blocks until successive profiles differ by less than `tol` in `L^1`.
pub fn stationary_estimate(f0: &GridDensity, model: &Model, t_long: f64, tol: f64) -> Result<StationaryEstimate> {
    let mut f = f0.clone();
    let mut residuals = Vec::new();
    let mut total = SolveLog::default();
    let m0 = f0.mass();
    while f.time - f0.time < t_long {
        let (next, log) = solve(&f, 1.0, model)?;
        total.steps += log.steps;
        total.clipped_mass += log.clipped_mass;
        total.max_clipped_per_step = total.max_clipped_per_step.max(log.max_clipped_per_step);
        total.clip_events += log.clip_events;
        total.limited_flux += log.limited_flux;
        total.outflow += log.outflow;
        let r = next.l1_distance(&f)?;
        residuals.push(r);
        f = next;
        if r < tol {
            let m = f.mass();
            f.values.iter_mut().for_each(|v| *v /= m);
            return Ok(StationaryEstimate { density: f, residuals, mass_drift: (m - m0).abs() / m0, log: total });
        }
    }
    Err(Error::NonConvergence { residuals })
}
