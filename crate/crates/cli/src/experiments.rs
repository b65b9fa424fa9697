use std::fmt::Write as _;

use runtumble::binning::{BinSpec, Histogram};
use runtumble::convergence::{
    self, cell_weights, decay_curve, envelope_violations, fit_rate, FitWindow, RateFit, RateModel, WeightKind,
};
use runtumble::fields::{self, HypothesisReport};
use runtumble::grid_oracle::{self, Grid};
use runtumble::io;
use runtumble::kernels::Kernel;
use runtumble::lyapunov::{martingale_check, select_constants, verify_drift, LyapunovCase, ProbePlan, SelectOptions, Selection};
use runtumble::minor_geom::{self, CellEstimate, EmpiricalLowerBound};
use runtumble::pdmp::{self, EnsembleSnapshot, EventCounts, Model, ParticleState, PathObserver};
use runtumble::rates;
use serde::Serialize;

use crate::config::{require, Experiment, LyapunovSection, MinoriseMode, RunConfig};
use crate::{Artifacts, CliError};

type Res<T> = Result<T, CliError>;

pub(crate) fn dispatch(exp: Experiment, cfg: &RunConfig, seed: u64, art: &mut Artifacts) -> Res<bool> {
    match exp {
        Experiment::Simulate => simulate(cfg, seed, art),
        Experiment::DriftCheck => drift_check(cfg, seed, art),
        Experiment::MinoriseCheck => minorise_check(cfg, seed, art),
        Experiment::RateFit => rate_fit(cfg, seed, art),
        Experiment::Geometry => geometry(cfg, art),
    }
}

fn build_model(cfg: &RunConfig, exp: Experiment) -> Res<Model> {
    let field = require(&cfg.field, "field", exp)?.clone();
    let rate = *require(&cfg.rate, "rate", exp)?;
    rate.validate()?;
    let kernel = Kernel::new(require(&cfg.kernel, "kernel", exp)?.clone())?;
    Ok(Model::new(field, rate, kernel)?)
}

fn build_bins(cfg: &RunConfig, exp: Experiment) -> Res<BinSpec> {
    let b = require(&cfg.bins, "bins", exp)?;
    Ok(BinSpec::new(b.coords, b.axes.clone())?)
}

#[derive(Serialize)]
struct H2 {
    b: u32,
    c: f64,
}

#[derive(Serialize)]
struct SelectionArtifact<'a> {
    hypotheses: &'a HypothesisReport,
    h2: H2,
    selection: &'a Selection,
}

fn select(lyap: &LyapunovSection, model: &Model) -> Res<(HypothesisReport, H2, Selection)> {
    let report = fields::check_hypotheses(&model.field, lyap.probe_radius, lyap.grid_resolution)?;
    let (b, c) = rates::check_h2(&model.rate.psi, lyap.h2_bound, &lyap.b_candidates)?;
    let opts = SelectOptions { m_star_rule: lyap.m_star_rule, v_max: lyap.v_max, ..Default::default() };
    let sel = select_constants(lyap.case, &report, model, b, c, &opts)?;
    Ok((report, H2 { b, c }, sel))
}

struct SimObserver<'a> {
    keep: bool,
    per_time: Vec<Vec<ParticleState>>,
    bins: Option<&'a BinSpec>,
    hists: Vec<Histogram>,
}

impl PathObserver for SimObserver<'_> {
    fn observe(&mut self, _index: u64, states: &[ParticleState]) {
        for (k, s) in states.iter().enumerate() {
            if self.keep {
                self.per_time[k].push(*s);
            }
            if let Some(b) = self.bins {
                self.hists[k].add(b.index(&s.x, &s.v), s.weight);
            }
        }
    }

    fn merge(&mut self, other: Self) {
        for (a, b) in self.per_time.iter_mut().zip(other.per_time) {
            a.extend(b);
        }
        for (a, b) in self.hists.iter_mut().zip(&other.hists) {
            a.merge(b);
        }
    }
}

#[derive(Serialize)]
struct TvRow {
    t: f64,
    tv: f64,
    noise_floor: f64,
    grid_mass: f64,
    grid_outflow: f64,
}

#[derive(Serialize)]
struct SimulateSummary {
    n: u64,
    times: Vec<f64>,
    events: EventCounts,
    acceptance_ratio: f64,
    comparison: Option<Vec<TvRow>>,
    tv_max: Option<f64>,
    pass: bool,
}

fn simulate(cfg: &RunConfig, seed: u64, art: &mut Artifacts) -> Res<bool> {
    let exp = Experiment::Simulate;
    let model = build_model(cfg, exp)?;
    let init = require(&cfg.initial, "initial", exp)?;
    let ens = require(&cfg.ensemble, "ensemble", exp)?;
    let times = ens.times.values();
    let bins = match (&cfg.grid, &cfg.bins) {
        (Some(_), Some(_)) => Some(build_bins(cfg, exp)?),
        _ => None,
    };
    if ens.tv_max.is_some() && bins.is_none() {
        return Err(CliError::Config("`ensemble.tv_max` needs both [grid] and [bins]".into()));
    }
    let (obs, events) = pdmp::run_ensemble(&model, init, ens.n, &times, seed, || SimObserver {
        keep: ens.write_particles,
        per_time: vec![Vec::new(); times.len()],
        bins: bins.as_ref(),
        hists: bins.as_ref().map(|b| vec![b.empty(); times.len()]).unwrap_or_default(),
    })?;
    for (k, particles) in obs.per_time.into_iter().enumerate().filter(|_| ens.write_particles) {
        let snap = EnsembleSnapshot { time: times[k], particles, seed };
        let mut buf = Vec::new();
        io::write_csv(&snap, &mut buf)?;
        art.write(&format!("particles_{k:03}.csv"), &buf)?;
    }
    let comparison = match (&bins, &cfg.grid) {
        (Some(bins), Some(gcfg)) => {
            let grid = Grid::new(gcfg, &model)?;
            let mut f = grid.initial(init, &model)?;
            let (mut now, mut outflow) = (0.0, 0.0);
            let mut rows = Vec::with_capacity(times.len());
            for (k, &t) in times.iter().enumerate() {
                if t > now {
                    let (g, log) = grid_oracle::solve(&f, t - now, &model)?;
                    f = g;
                    outflow += log.outflow;
                    now = t;
                }
                let reference = f.histogram(bins);
                rows.push(TvRow {
                    t,
                    tv: convergence::weighted_tv(&obs.hists[k], &reference, None)?,
                    noise_floor: convergence::noise_floor(&reference, None, ens.n)?,
                    grid_mass: f.mass(),
                    grid_outflow: outflow,
                });
            }
            let mut csv = String::from("t,tv,noise_floor,grid_mass,grid_outflow\n");
            for r in &rows {
                writeln!(csv, "{},{:.10e},{:.10e},{:.10e},{:.10e}", r.t, r.tv, r.noise_floor, r.grid_mass, r.grid_outflow)
                    .expect("writing to a string");
            }
            art.write("tv.csv", csv.as_bytes())?;
            Some(rows)
        }
        _ => None,
    };
    let pass = match (ens.tv_max, &comparison) {
        (Some(max), Some(rows)) => rows.iter().all(|r| r.tv < max),
        _ => true,
    };
    let summary = SimulateSummary {
        n: ens.n,
        times,
        events,
        acceptance_ratio: if events.clock > 0 { events.accepted as f64 / events.clock as f64 } else { 0.0 },
        comparison,
        tv_max: ens.tv_max,
        pass,
    };
    art.json("summary.json", &summary)?;
    Ok(pass)
}

fn drift_check(cfg: &RunConfig, seed: u64, art: &mut Artifacts) -> Res<bool> {
    let exp = Experiment::DriftCheck;
    let model = build_model(cfg, exp)?;
    let lyap = require(&cfg.lyapunov, "lyapunov", exp)?;
    let (report, h2, sel) = select(lyap, &model)?;
    art.json("selection.json", &SelectionArtifact { hypotheses: &report, h2, selection: &sel })?;
    let plan = ProbePlan { n: lyap.probes, seed, v_max: lyap.v_max };
    let drift = verify_drift(&sel.spec, &model, &sel.constants, sel.r_star, &plan)?;
    art.json("report.json", &drift)?;
    let mut pass = drift.violations == 0 && drift.positivity_failures == 0;
    if let Some(m) = &lyap.martingale {
        let mut spec = sel.spec.clone();
        if let Some(g) = m.gamma {
            spec.gamma = g;
        }
        let rep = martingale_check(&spec, &model, &m.initial, m.n, &m.times.values(), m.h, seed)?;
        art.json("martingale.json", &rep)?;
        pass &= rep.pass;
    }
    Ok(pass)
}

/// `EmpiricalLowerBound` without its cell list, which goes to CSV.
#[derive(Serialize)]
struct LowerBoundSummary<'a> {
    ball_radius: f64,
    n_paths: u64,
    n_cells: usize,
    mass_fraction: f64,
    min_count: u64,
    min_log10_density: f64,
    min_log10_lower: f64,
    all_positive: bool,
    inconclusive: bool,
    analytic_bound: Option<f64>,
    margins: &'a [(String, f64)],
    pass: bool,
}

fn lower_bound_artifacts(e: &EmpiricalLowerBound, pass: bool, art: &mut Artifacts) -> Res<()> {
    art.json(
        "summary.json",
        &LowerBoundSummary {
            ball_radius: e.ball_radius,
            n_paths: e.n_paths,
            n_cells: e.n_cells,
            mass_fraction: e.mass_fraction,
            min_count: e.min_count,
            min_log10_density: e.min_log10_density,
            min_log10_lower: e.min_log10_lower,
            all_positive: e.all_positive,
            inconclusive: e.inconclusive,
            analytic_bound: e.analytic_bound,
            margins: &e.margins,
            pass,
        },
    )?;
    let k = e.cells.first().map(|c| c.centre.len()).unwrap_or(0);
    let mut csv: String = (0..k).map(|i| format!("c{i},")).collect();
    csv.push_str("count,log10_density,log10_lower\n");
    for CellEstimate { centre, count, log10_density, log10_lower } in &e.cells {
        for c in centre {
            write!(csv, "{c},").expect("writing to a string");
        }
        writeln!(csv, "{count},{log10_density:.10e},{log10_lower:.10e}").expect("writing to a string");
    }
    art.write("cells.csv", csv.as_bytes())
}

fn minorise_check(cfg: &RunConfig, seed: u64, art: &mut Artifacts) -> Res<bool> {
    let exp = Experiment::MinoriseCheck;
    let m = require(&cfg.minorise, "minorise", exp)?;
    match m.mode {
        MinoriseMode::Bounded => {
            let b = require(&m.bounded, "minorise.bounded", exp)?;
            let s = require(&m.start, "minorise.start", exp)?;
            let bins = m.bounded_bins.unwrap_or_default();
            let (geo, est) = minor_geom::verify_minorisation_bounded(b, (s[0], s[1], s[2]), &bins, m.n, seed)?;
            art.json("geometry.json", &geo)?;
            if let Some(g) = &m.gamma_step {
                let check = minor_geom::gamma_step_check(b, g.r_in, g.n, seed)?;
                art.json("gamma_step.json", &check)?;
            }
            let pass = est.all_positive;
            lower_bound_artifacts(&est, pass, art)?;
            Ok(pass)
        }
        MinoriseMode::Unbounded => {
            let model = build_model(cfg, exp)?;
            let init = require(&cfg.initial, "initial", exp)?;
            let r_star = *require(&m.r_star, "minorise.r_star", exp)?;
            let bins = m.unbounded_bins.unwrap_or_default();
            let est = minor_geom::verify_minorisation_unbounded(&model, init, r_star, m.v0, &bins, m.n, seed)?;
            let pass = minor_geom::unbounded_pass(&est);
            lower_bound_artifacts(&est, pass, art)?;
            Ok(pass)
        }
    }
}

#[derive(Serialize)]
struct ReferenceSummary {
    blocks: usize,
    final_residual: f64,
    mass_drift: f64,
    outflow: f64,
    overflow_fraction: f64,
}

#[derive(Serialize)]
struct RateFitArtifact {
    fit: Option<RateFit>,
    fit_error: Option<String>,
    /// `M_{f0}` of the initial law (algebraic model).
    m_f0: Option<f64>,
    /// Envelope constant divided by `M_{f0}` (algebraic model).
    c_fit: Option<f64>,
    envelope_violations: Vec<(f64, f64)>,
    max_overflow: f64,
    reference: ReferenceSummary,
    pass: bool,
}

fn gnuplot_script(stem: &str, fit: Option<&RateFit>) -> String {
    let mut s = format!(
        "set datafile separator ','\nset logscale y\nset xlabel 't'\nset ylabel 'distance'\n\
         plot '{stem}_curve.csv' every ::1 using 1:2 with linespoints title 'd(t)', \
         '' every ::1 using 1:3 with lines title 'noise floor'"
    );
    if let Some(f) = fit {
        match f.model {
            RateModel::Exponential => {
                write!(s, ", {:e}*exp(-{:e}*x) title 'C exp(-sigma t)'", f.envelope_constant, f.sigma.unwrap_or(0.0))
            }
            RateModel::AlgebraicInverse => write!(s, ", {:e}/x title 'C / t'", f.envelope_constant),
        }
        .expect("writing to a string");
    }
    s.push('\n');
    s
}

fn rate_fit(cfg: &RunConfig, seed: u64, art: &mut Artifacts) -> Res<bool> {
    let exp = Experiment::RateFit;
    let rf = require(&cfg.rate_fit, "rate_fit", exp)?;
    let model = build_model(cfg, exp)?;
    let init = require(&cfg.initial, "initial", exp)?;
    let gcfg = require(&cfg.grid, "grid", exp)?;
    let bins = build_bins(cfg, exp)?;

    if rf.model == RateModel::AlgebraicInverse && rf.weight == WeightKind::Norm1Weight {
        return Err(CliError::Config("the algebraic model pairs with plain_tv or phi_unbounded weights".into()));
    }
    let needed_case = match (rf.weight, rf.model) {
        (WeightKind::Norm1Weight, _) => Some(LyapunovCase::BoundedAngle),
        (WeightKind::PhiUnbounded, _) | (_, RateModel::AlgebraicInverse) => Some(LyapunovCase::UnboundedMaxwellian),
        _ => None,
    };
    let sel = match needed_case {
        Some(case) => {
            let lyap = require(&cfg.lyapunov, "lyapunov", exp)?;
            if lyap.case != case {
                return Err(CliError::Config(format!(
                    "rate-fit with weight {:?} and model {:?} needs lyapunov.case = {case:?}",
                    rf.weight, rf.model
                )));
            }
            let (report, h2, sel) = select(lyap, &model)?;
            art.json("selection.json", &SelectionArtifact { hypotheses: &report, h2, selection: &sel })?;
            Some(sel)
        }
        None => None,
    };

    let grid = Grid::new(gcfg, &model)?;
    let f0 = grid.initial(init, &model)?;
    let st = grid_oracle::stationary_estimate(&f0, &model, rf.stationary.t_long, rf.stationary.tol)?;
    let reference = st.density.histogram(&bins);

    let weights = match (rf.weight, &sel) {
        (WeightKind::PlainTv, _) => None,
        (_, Some(sel)) => Some(cell_weights(&bins, |x, v| sel.spec.phi(&model.field, x, v))?),
        (_, None) => unreachable!("weighted distances always select constants"),
    };
    let times = rf.times.values();
    let curve = decay_curve(&model, init, rf.n, &times, seed, &reference, &bins, weights.as_deref(), rf.weight)?;
    let mut buf = Vec::new();
    curve.write_csv(&mut buf)?;
    art.write("curve.csv", &buf)?;

    let m_f0 = match (rf.model, &sel) {
        (RateModel::AlgebraicInverse, Some(sel)) => {
            let snaps = pdmp::simulate_ensemble(&model, init, rf.n, &[0.0], seed)?;
            Some(convergence::moment_mf0(&snaps[0].particles, &model.field, model.rate.chi, &model.rate.psi, sel.spec.a)?)
        }
        _ => None,
    };
    let window = FitWindow { t_lo: rf.t_lo, t_hi: rf.t_hi, floor_factor: rf.floor_factor };
    let (fit, fit_error) = match fit_rate(&curve, rf.model, window) {
        Ok(f) => (Some(f), None),
        Err(e @ runtumble::Error::Fit(_)) => (None, Some(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    let violations = fit
        .as_ref()
        .map(|f| envelope_violations(&curve, f, f.envelope_constant, rf.t_lo, rf.t_hi, rf.envelope_floor_factor))
        .unwrap_or_default();
    let pass = match &fit {
        None => false,
        Some(f) => {
            let shape = match f.model {
                RateModel::Exponential => {
                    f.sigma.is_some_and(|s| s > 0.0) && rf.residual_max.is_none_or(|r| f.residual < r)
                }
                RateModel::AlgebraicInverse => {
                    rf.free_slope_max.is_none_or(|m| f.free_slope.is_some_and(|s| s <= m))
                }
            };
            shape && violations.is_empty()
        }
    };
    let artifact = RateFitArtifact {
        c_fit: match (&fit, m_f0) {
            (Some(f), Some(m)) => Some(f.envelope_constant / m),
            _ => None,
        },
        fit,
        fit_error,
        m_f0,
        envelope_violations: violations,
        max_overflow: curve.overflow.iter().cloned().fold(0.0, f64::max),
        reference: ReferenceSummary {
            blocks: st.residuals.len(),
            final_residual: st.residuals.last().copied().unwrap_or(f64::NAN),
            mass_drift: st.mass_drift,
            outflow: st.log.outflow,
            overflow_fraction: reference.overflow_fraction(),
        },
        pass,
    };
    art.json("fit.json", &artifact)?;
    art.write("plot.gp", gnuplot_script(Experiment::RateFit.stem(), artifact.fit.as_ref()).as_bytes())?;
    Ok(pass)
}

#[derive(Serialize)]
struct OrbitCheck {
    iterates: usize,
    /// Largest `| |p_k - centre| - R_hat/2 |`.
    max_orbit_deviation: f64,
    /// Largest `| |p_k - centre_displayed| - R_hat |`.
    max_displayed_circle_deviation: f64,
    /// Largest `|p_k - p_0|`; at most `R_hat` when the orbit is enclosed.
    max_excursion: f64,
    tol: f64,
}

#[derive(Serialize)]
struct GeometryArtifact {
    crescent: minor_geom::Crescent,
    circle: minor_geom::EnclosingCircle,
    n_tilde: u64,
    n_star: u64,
    gamma_step: f64,
    orbit: OrbitCheck,
    pass: bool,
}

fn geometry(cfg: &RunConfig, art: &mut Artifacts) -> Res<bool> {
    let exp = Experiment::Geometry;
    let g = require(&cfg.geometry, "geometry", exp)?;
    let [x0, y0, th0] = g.start;
    let c = minor_geom::crescent_params(g.r1, g.r2, g.r3, g.alpha, x0, y0, th0, g.delta_theta_formula)?;
    let circle = minor_geom::enclosing_circle(g.r1, c.r_big, c.delta_theta, x0, y0, th0)?;
    let (n_tilde, n_star) = minor_geom::step_counts(circle.r_hat, c.r, g.alpha);
    let dist = |p: (f64, f64), q: [f64; 2]| (p.0 - q[0]).hypot(p.1 - q[1]);
    let mut p = (x0, y0, th0);
    let mut csv = String::from("k,x,y,theta\n");
    let (mut orbit, mut displayed, mut excursion) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..=g.iterates {
        if k > 0 {
            p = minor_geom::ball_map_f(p.0, p.1, p.2, g.r1, &c);
        }
        writeln!(csv, "{k},{:.15e},{:.15e},{:.15e}", p.0, p.1, p.2).expect("writing to a string");
        orbit = orbit.max((dist((p.0, p.1), circle.centre) - circle.orbit_radius).abs());
        displayed = displayed.max((dist((p.0, p.1), circle.centre_displayed) - circle.r_hat).abs());
        excursion = excursion.max(dist((p.0, p.1), [x0, y0]));
    }
    art.write("iterates.csv", csv.as_bytes())?;
    let pass = orbit <= g.tol && excursion <= circle.r_hat * (1.0 + 1e-12);
    art.json(
        "report.json",
        &GeometryArtifact {
            gamma_step: minor_geom::gamma_step_estimate(g.r1, g.r2, g.r3, g.alpha, c.r_big),
            crescent: c,
            circle,
            n_tilde,
            n_star,
            orbit: OrbitCheck {
                iterates: g.iterates,
                max_orbit_deviation: orbit,
                max_displayed_circle_deviation: displayed,
                max_excursion: excursion,
                tol: g.tol,
            },
            pass,
        },
    )?;
    Ok(pass)
}
