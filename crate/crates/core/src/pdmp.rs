//! Exact event-driven simulation of the run-and-tumble process.
//!
//! Clock events arrive at the constant rate `1 + chi`; each one is accepted
//! as a tumble with probability `lambda(v . grad M(x)) / (1 + chi)`. Between
//! events the path is a straight line, so there is no time discretisation.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::ChemoField;
use crate::kernels::Kernel;
use crate::rates::RateSpec;
use crate::rng::{self, Purpose, Stream};
use crate::vector::Vector;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParticleState {
    pub x: Vector,
    pub v: Vector,
    pub t: f64,
    pub weight: f64,
}

impl ParticleState {
    pub fn new(x: Vector, v: Vector) -> Self {
        Self { x, v, t: 0.0, weight: 1.0 }
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.v.is_finite() && self.t.is_finite() && self.weight.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub t: f64,
    /// Uniform draw on `[0, 1 + chi]`.
    pub u: f64,
    pub lambda: f64,
    pub accepted: bool,
}

impl std::fmt::Display for Event {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "t={} u={} lambda={} accepted={}", self.t, self.u, self.lambda, self.accepted)
    }
}

/// Field, rate and kernel of one run.
#[derive(Clone, Debug)]
pub struct Model {
    pub field: ChemoField,
    pub rate: RateSpec,
    pub kernel: Kernel,
}

impl Model {
    pub fn new(field: ChemoField, rate: RateSpec, kernel: Kernel) -> Result<Self> {
        field.validate()?;
        rate.validate()?;
        if field.dim != kernel.dim() {
            return Err(Error::Config(format!(
                "field dimension {} differs from kernel dimension {}",
                field.dim,
                kernel.dim()
            )));
        }
        Ok(Self { field, rate, kernel })
    }

    pub fn dim(&self) -> usize {
        self.field.dim
    }

    #[inline]
    pub fn tumble_rate(&self, x: &Vector, v: &Vector) -> f64 {
        self.rate.lambda(v.dot(&self.field.grad(x)))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub clock: u64,
    pub accepted: u64,
}

impl EventCounts {
    fn add(&mut self, other: &Self) {
        self.clock += other.clock;
        self.accepted += other.accepted;
    }
}

const LOG_LEN: usize = 8;

/// Last few events of a particle, kept for error reports.
struct EventRing {
    buf: [Option<Event>; LOG_LEN],
    next: usize,
}

impl EventRing {
    fn new() -> Self {
        Self { buf: [None; LOG_LEN], next: 0 }
    }

    fn push(&mut self, e: Event) {
        self.buf[self.next % LOG_LEN] = Some(e);
        self.next += 1;
    }

    fn drain(&self) -> Vec<String> {
        let start = self.next.saturating_sub(LOG_LEN);
        (start..self.next).filter_map(|i| self.buf[i % LOG_LEN]).map(|e| e.to_string()).collect()
    }
}

fn advance_impl(
    state: &mut ParticleState,
    dt_max: f64,
    model: &Model,
    rng: &mut Stream,
    counts: &mut EventCounts,
    mut log: Option<&mut Vec<Event>>,
) -> Result<()> {
    if !(dt_max > 0.0) {
        return Err(Error::Input(format!("dt_max = {dt_max} must be positive")));
    }
    let majorant = model.rate.majorant();
    let t_end = state.t + dt_max;
    let mut ring = EventRing::new();
    loop {
        let e: f64 = rng.sample(Exp1);
        let tau = e / majorant;
        if state.t + tau >= t_end {
            let rest = t_end - state.t;
            state.x = state.x.axpy(rest, &state.v);
            state.t = t_end;
            break;
        }
        state.x = state.x.axpy(tau, &state.v);
        state.t += tau;
        let u = rng.random::<f64>() * majorant;
        let lambda = model.tumble_rate(&state.x, &state.v);
        let accepted = u <= lambda;
        counts.clock += 1;
        if accepted {
            counts.accepted += 1;
            state.v = model.kernel.sample_post_velocity(&state.v, rng);
        }
        let ev = Event { t: state.t, u, lambda, accepted };
        ring.push(ev);
        if let Some(l) = log.as_deref_mut() {
            l.push(ev);
        }
        if !state.is_finite() {
            return Err(Error::Simulation {
                time: state.t,
                message: "non-finite particle state".into(),
                events: ring.drain(),
            });
        }
    }
    if !state.is_finite() {
        return Err(Error::Simulation {
            time: state.t,
            message: "non-finite particle state".into(),
            events: ring.drain(),
        });
    }
    Ok(())
}

/// Advances one particle by `dt_max` and returns the clock events on the way.
pub fn advance_particle(
    state: &ParticleState,
    dt_max: f64,
    model: &Model,
    rng: &mut Stream,
) -> Result<(ParticleState, Vec<Event>)> {
    let mut s = *state;
    let mut log = Vec::new();
    let mut counts = EventCounts::default();
    advance_impl(&mut s, dt_max, model, rng, &mut counts, Some(&mut log))?;
    Ok((s, log))
}

/// Velocity part of an initial law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VelocityLaw {
    Fixed { v: Vec<f64> },
    /// Uniform on the sphere of radius `speed`.
    UniformSphere { speed: f64 },
    /// Standard Gaussian.
    Maxwellian,
    /// Uniform in the ball of radius `radius`.
    UniformBall { radius: f64 },
}

/// Law of `(X_0, V_0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialLaw {
    Point { x: Vec<f64>, velocity: VelocityLaw },
    Gaussian { centre: Vec<f64>, std: f64, velocity: VelocityLaw },
    UniformBall { centre: Vec<f64>, radius: f64, velocity: VelocityLaw },
}

fn sample_ball<R: Rng + ?Sized>(d: usize, radius: f64, rng: &mut R) -> Vector {
    let mut g = Vector::zeros(d);
    for i in 0..d {
        g[i] = rng.sample(StandardNormal);
    }
    let n = g.norm();
    let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
    g * (r / n)
}

impl VelocityLaw {
    fn sample<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> Vector {
        match self {
            VelocityLaw::Fixed { v } => Vector::from_slice(v).expect("validated velocity"),
            VelocityLaw::UniformSphere { speed } => {
                let mut g = Vector::zeros(d);
                loop {
                    for i in 0..d {
                        g[i] = rng.sample(StandardNormal);
                    }
                    if g.norm() > 1e-12 {
                        break;
                    }
                }
                g * (*speed / g.norm())
            }
            VelocityLaw::Maxwellian => {
                let mut g = Vector::zeros(d);
                for i in 0..d {
                    g[i] = rng.sample(StandardNormal);
                }
                g
            }
            VelocityLaw::UniformBall { radius } => sample_ball(d, *radius, rng),
        }
    }

    fn validate(&self, d: usize, kernel: &Kernel) -> Result<()> {
        match self {
            VelocityLaw::Fixed { v } => {
                if v.len() != d {
                    return Err(Error::Config(format!("initial velocity has length {} != {d}", v.len())));
                }
                if kernel.spec().is_sphere() {
                    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                    if (n - kernel.v0()).abs() > 1e-12 * kernel.v0().max(1.0) {
                        return Err(Error::Config(format!("initial speed {n} is off the sphere V0 = {}", kernel.v0())));
                    }
                }
            }
            VelocityLaw::UniformSphere { speed } => {
                if kernel.spec().is_sphere() && (speed - kernel.v0()).abs() > 1e-12 * kernel.v0().max(1.0) {
                    return Err(Error::Config(format!("initial speed {speed} differs from V0 = {}", kernel.v0())));
                }
            }
            VelocityLaw::Maxwellian | VelocityLaw::UniformBall { .. } => {
                if kernel.spec().is_sphere() {
                    return Err(Error::Config("sphere kernels need a fixed-speed initial velocity law".into()));
                }
            }
        }
        Ok(())
    }
}

impl InitialLaw {
    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::Point { x, .. } => x.len(),
            InitialLaw::Gaussian { centre, .. } | InitialLaw::UniformBall { centre, .. } => centre.len(),
        }
    }

    pub fn velocity(&self) -> &VelocityLaw {
        match self {
            InitialLaw::Point { velocity, .. }
            | InitialLaw::Gaussian { velocity, .. }
            | InitialLaw::UniformBall { velocity, .. } => velocity,
        }
    }

    pub fn validate(&self, model: &Model) -> Result<()> {
        let d = self.dim();
        if d != model.dim() {
            return Err(Error::Config(format!("initial law dimension {d} != model dimension {}", model.dim())));
        }
        self.velocity().validate(d, &model.kernel)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ParticleState {
        let d = self.dim();
        let x = match self {
            InitialLaw::Point { x, .. } => Vector::from_slice(x).expect("validated position"),
            InitialLaw::Gaussian { centre, std, .. } => {
                let mut x = Vector::from_slice(centre).expect("validated position");
                for i in 0..d {
                    let z: f64 = rng.sample(StandardNormal);
                    x[i] += std * z;
                }
                x
            }
            InitialLaw::UniformBall { centre, radius, .. } => {
                Vector::from_slice(centre).expect("validated position") + sample_ball(d, *radius, rng)
            }
        };
        let v = self.velocity().sample(d, rng);
        ParticleState::new(x, v)
    }
}

/// Empirical measure of the ensemble at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSnapshot {
    pub time: f64,
    pub particles: Vec<ParticleState>,
    pub seed: u64,
}

impl EnsembleSnapshot {
    pub fn total_weight(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum()
    }
}

/// Consumer of whole paths; one instance per chunk, merged in chunk order.
pub trait PathObserver: Send + Sized {
    /// `states[k]` is the particle at `times[k]`.
    fn observe(&mut self, index: u64, states: &[ParticleState]);
    fn merge(&mut self, other: Self);
}

/// Particles per work unit. Fixed so that reductions do not depend on the worker count.
pub const CHUNK: u64 = 8192;

fn check_times(times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Input("snapshot times must be finite, non-negative and sorted".into()));
    }
    Ok(())
}

/// Runs `n` independent paths and feeds each to an observer.
///
/// Particle `i` draws its initial condition and its dynamics from dedicated
/// substreams of `seed`, so results do not depend on scheduling.
pub fn run_ensemble<O, F>(
    model: &Model,
    init: &InitialLaw,
    n: u64,
    times: &[f64],
    seed: u64,
    make: F,
) -> Result<(O, EventCounts)>
where
    O: PathObserver,
    F: Fn() -> O + Sync,
{
    if n == 0 {
        return Err(Error::Input("ensemble size must be at least 1".into()));
    }
    check_times(times)?;
    init.validate(model)?;
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Result<(O, EventCounts)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut obs = make();
            let mut counts = EventCounts::default();
            let mut states = vec![ParticleState::new(Vector::zeros(model.dim()), Vector::zeros(model.dim())); times.len()];
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let mut init_rng = rng::stream(seed, Purpose::InitialCondition, i);
                let mut dyn_rng = rng::stream(seed, Purpose::Dynamics, i);
                let mut s = init.sample(&mut init_rng);
                for (k, &t) in times.iter().enumerate() {
                    if t > s.t {
                        let dt = t - s.t;
                        advance_impl(&mut s, dt, model, &mut dyn_rng, &mut counts, None)?;
                    }
                    states[k] = s;
                }
                obs.observe(i, &states);
            }
            Ok((obs, counts))
        })
        .collect();
    let mut iter = parts.into_iter();
    let (mut obs, mut counts) = iter.next().expect("at least one chunk")?;
    for p in iter {
        let (o, c) = p?;
        obs.merge(o);
        counts.add(&c);
    }
    Ok((obs, counts))
}

struct Collect {
    per_time: Vec<Vec<ParticleState>>,
}

impl PathObserver for Collect {
    fn observe(&mut self, _index: u64, states: &[ParticleState]) {
        for (k, s) in states.iter().enumerate() {
            self.per_time[k].push(*s);
        }
    }

    fn merge(&mut self, other: Self) {
        for (a, b) in self.per_time.iter_mut().zip(other.per_time) {
            a.extend(b);
        }
    }
}

/// Snapshots of `n` paths at the requested times, particles in index order.
pub fn simulate_ensemble(
    model: &Model,
    init: &InitialLaw,
    n: u64,
    times: &[f64],
    seed: u64,
) -> Result<Vec<EnsembleSnapshot>> {
    let (c, _) = run_ensemble(model, init, n, times, seed, || Collect { per_time: vec![Vec::new(); times.len()] })?;
    Ok(c
        .per_time
        .into_iter()
        .zip(times)
        .map(|(particles, &time)| EnsembleSnapshot { time, particles, seed })
        .collect())
}

/// One forced jump chain in `d = 2`.
///
/// Jump `k` happens at a time uniform in `windows[k]` and turns the heading by
/// a uniform angle in `(-alpha, alpha)`; the particle is then transported to
/// `t_end`. The returned weight is `prod_k 2 alpha |windows[k]|`, so the
/// weighted law of the endpoint is the restricted Duhamel term without the
/// `beta^n (1-chi)^n e^{-(1+chi) t}` prefactor.
pub fn simulate_forced_chain<R: Rng + ?Sized>(
    state0: &ParticleState,
    windows: &[(f64, f64)],
    alpha: f64,
    n_jumps: usize,
    t_end: f64,
    rng: &mut R,
) -> Result<ParticleState> {
    if state0.x.dim() != 2 || state0.v.dim() != 2 {
        return Err(Error::Input("forced chains are defined in d = 2 only".into()));
    }
    if windows.len() != n_jumps {
        return Err(Error::Input(format!("{} windows given for {n_jumps} jumps", windows.len())));
    }
    if !(alpha > 0.0) {
        return Err(Error::Input("alpha must be positive".into()));
    }
    let mut prev = state0.t;
    for &(a, b) in windows {
        if !(a >= prev && b > a) {
            return Err(Error::Input(format!("jump windows must be disjoint and increasing; got [{a}, {b}] after {prev}")));
        }
        prev = b;
    }
    if t_end < prev {
        return Err(Error::Input(format!("t_end = {t_end} precedes the last window end {prev}")));
    }
    let mut s = *state0;
    let speed = s.v.norm();
    let mut heading = s.v.angle();
    for &(a, b) in windows {
        let tj = a + (b - a) * rng.random::<f64>();
        s.x = s.x.axpy(tj - s.t, &s.v);
        s.t = tj;
        heading += alpha * (2.0 * rng.random::<f64>() - 1.0);
        s.v = Vector::polar(speed, heading);
        s.weight *= 2.0 * alpha * (b - a);
    }
    s.x = s.x.axpy(t_end - s.t, &s.v);
    s.t = t_end;
    Ok(s)
}
