use runtumble::binning::{Axis, BinSpec, Coords};
use runtumble::fields::ChemoField;
use runtumble::grid_oracle::{self, Boundary, Grid, GridConfig, VelocityGrid};
use runtumble::kernels::{Kernel, KernelSpec};
use runtumble::pdmp::{run_ensemble, InitialLaw, Model, PathObserver, ParticleState, VelocityLaw};
use runtumble::rates::{PsiSpec, RateSpec};

fn model_1d(field: ChemoField) -> Model {
    Model::new(
        field,
        RateSpec::new(0.5, PsiSpec::sign()).unwrap(),
        Kernel::new(KernelSpec::maxwellian(1)).unwrap(),
    )
    .unwrap()
}

fn cfg_1d(l: f64, nx: usize, panels: usize, boundary: Boundary) -> GridConfig {
    let dx = 2.0 * l / nx as f64;
    GridConfig {
        x_lo: vec![-l],
        x_hi: vec![l],
        nx: vec![nx],
        velocity: VelocityGrid::Box { v_max: 6.0, panels, order: 4 },
        dt: 0.9 * dx / 6.0,
        boundary,
    }
}

fn gaussian_maxwellian() -> InitialLaw {
    InitialLaw::Gaussian { centre: vec![0.0], std: 1.0, velocity: VelocityLaw::Maxwellian }
}

#[test]
fn constant_field_equilibrium_is_stationary() {
    let m = model_1d(ChemoField::constant(1, 0.0));
    let cfg = cfg_1d(5.0, 50, 12, Boundary::Periodic);
    let grid = Grid::new(&cfg, &m).unwrap();
    let law = InitialLaw::UniformBall { centre: vec![0.0], radius: 100.0, velocity: VelocityLaw::Maxwellian };
    let f0 = grid.initial(&law, &m).unwrap();
    let (f, log) = grid_oracle::solve(&f0, 10.0, &m).unwrap();
    assert!(f.l1_distance(&f0).unwrap() < 1e-6);
    assert_eq!(log.clipped_mass, 0.0);
}

#[test]
fn mass_audit_and_positivity() {
    let m = model_1d(ChemoField::sqrt_radial(1, 0.0, 1.0));
    let grid = Grid::new(&cfg_1d(40.0, 200, 12, Boundary::LargeBox), &m).unwrap();
    let f0 = grid.initial(&gaussian_maxwellian(), &m).unwrap();
    let t = 5.0;
    let (f, log) = grid_oracle::solve(&f0, t, &m).unwrap();
    let drift = (f.mass() - f0.mass()).abs() / f0.mass();
    assert!(drift < 1e-8 * t, "mass drift {drift}, clipped {}", log.clipped_mass);
    assert!(f.min_value() >= -1e-14);
    assert!(log.max_clipped_per_step < 1e-10, "{log:?}");
}

#[test]
fn cfl_violation_is_a_config_error() {
    let m = model_1d(ChemoField::sqrt_radial(1, 0.0, 1.0));
    let mut cfg = cfg_1d(10.0, 100, 12, Boundary::Absorbing);
    cfg.dt *= 1.5;
    assert!(matches!(Grid::new(&cfg, &m), Err(runtumble::Error::Config(_))));
}

#[test]
fn negative_input_is_rejected() {
    let m = model_1d(ChemoField::sqrt_radial(1, 0.0, 1.0));
    let grid = Grid::new(&cfg_1d(10.0, 100, 12, Boundary::Absorbing), &m).unwrap();
    let mut f0 = grid.initial(&gaussian_maxwellian(), &m).unwrap();
    f0.values[3] = -1.0;
    assert!(matches!(grid_oracle::solve(&f0, 1.0, &m), Err(runtumble::Error::Input(_))));
}

/// Solutions at t = 1 on grids refined by 2 and 4; the self-difference must shrink by 2.
#[test]
fn refinement_reduces_self_difference() {
    let m = model_1d(ChemoField::sqrt_radial(1, 0.0, 1.0));
    let law = gaussian_maxwellian();
    let sol = |nx: usize, panels: usize| {
        let g = Grid::new(&cfg_1d(12.0, nx, panels, Boundary::Absorbing), &m).unwrap();
        let f0 = g.initial(&law, &m).unwrap();
        grid_oracle::solve(&f0, 1.0, &m).unwrap().0
    };
    let bins = BinSpec::new(Coords::PositionVelocity { dim: 1 }, vec![Axis::new(-12.0, 12.0, 24), Axis::new(-6.0, 6.0, 12)]).unwrap();
    let coarse = sol(48, 12).histogram(&bins);
    let mid = sol(96, 24).histogram(&bins);
    let fine = sol(192, 48).histogram(&bins);
    let diff = |a: &runtumble::binning::Histogram, b: &runtumble::binning::Histogram| {
        a.mass.iter().zip(&b.mass).map(|(p, q)| (p - q).abs()).sum::<f64>()
    };
    let d1 = diff(&coarse, &mid);
    let d2 = diff(&mid, &fine);
    eprintln!("refinement ratio {}", d1 / d2);
    assert!(d1 / d2 >= 2.0, "refinement ratio {} ({d1} -> {d2})", d1 / d2);
}

struct Hist {
    bins: BinSpec,
    h: runtumble::binning::Histogram,
}

impl PathObserver for Hist {
    fn observe(&mut self, _i: u64, s: &[ParticleState]) {
        let idx = self.bins.index(&s[0].x, &s[0].v);
        self.h.add(idx, s[0].weight);
    }
    fn merge(&mut self, o: Self) {
        self.h.merge(&o.h);
    }
}

/// Small-N version of the particle/grid comparison; the full one is an acceptance criterion.
#[test]
fn particles_match_grid_at_moderate_n() {
    let m = model_1d(ChemoField::sqrt_radial(1, 0.0, 1.0));
    let grid = Grid::new(&cfg_1d(40.0, 400, 24, Boundary::Absorbing), &m).unwrap();
    let law = gaussian_maxwellian();
    let f0 = grid.initial(&law, &m).unwrap();
    let (f, _) = grid_oracle::solve(&f0, 5.0, &m).unwrap();
    let bins = BinSpec::new(Coords::PositionVelocity { dim: 1 }, vec![Axis::new(-20.0, 20.0, 40), Axis::new(-6.0, 6.0, 24)]).unwrap();
    let hg = f.histogram(&bins);
    let n = 100_000;
    let (obs, _) = run_ensemble(&m, &law, n, &[5.0], 11, || Hist { bins: bins.clone(), h: bins.empty() }).unwrap();
    let pg = hg.probabilities().unwrap();
    let pp = obs.h.probabilities().unwrap();
    let tv = 0.5 * pg.iter().zip(&pp).map(|(a, b)| (a - b).abs()).sum::<f64>();
    assert!(tv < 0.06, "tv = {tv}");
}

fn model_2d() -> Model {
    Model::new(
        ChemoField::sqrt_radial(2, 0.0, 1.0),
        RateSpec::new(0.5, PsiSpec::sign()).unwrap(),
        Kernel::new(KernelSpec::angle_dependent(2, 1.0, std::f64::consts::PI / 3.0, runtumble::kernels::AngleShape::BoxcarInAngle)).unwrap(),
    )
    .unwrap()
}

fn cfg_2d(l: f64, nx: usize, nt: usize) -> GridConfig {
    let dx = 2.0 * l / nx as f64;
    GridConfig {
        x_lo: vec![-l, -l],
        x_hi: vec![l, l],
        nx: vec![nx, nx],
        velocity: VelocityGrid::Circle { n_theta: nt },
        dt: 0.9 * dx,
        boundary: Boundary::Absorbing,
    }
}

#[test]
fn circle_grid_conserves_mass_and_refines() {
    let m = model_2d();
    let law = InitialLaw::Gaussian { centre: vec![1.0, 0.0], std: 1.0, velocity: VelocityLaw::UniformSphere { speed: 1.0 } };
    let sol = |nx: usize, nt: usize| {
        let g = Grid::new(&cfg_2d(8.0, nx, nt), &m).unwrap();
        let f0 = g.initial(&law, &m).unwrap();
        let (f, log) = grid_oracle::solve(&f0, 1.0, &m).unwrap();
        assert!((f.mass() - 1.0).abs() < 1e-8, "{}", f.mass());
        assert!(f.min_value() >= 0.0);
        assert_eq!(log.clipped_mass, 0.0);
        f
    };
    let bins = BinSpec::new(
        Coords::PositionHeading { speed: 1.0 },
        vec![Axis::new(-8.0, 8.0, 16), Axis::new(-8.0, 8.0, 16), Axis::heading(8)],
    )
    .unwrap();
    let a = sol(32, 16).histogram(&bins);
    let b = sol(64, 32).histogram(&bins);
    let c = sol(128, 64).histogram(&bins);
    let diff = |a: &runtumble::binning::Histogram, b: &runtumble::binning::Histogram| {
        a.mass.iter().zip(&b.mass).map(|(p, q)| (p - q).abs()).sum::<f64>()
    };
    let (d1, d2) = (diff(&a, &b), diff(&b, &c));
    eprintln!("circle refinement ratio {} ({d1} -> {d2})", d1 / d2);
    assert!(d1 / d2 >= 2.0);
}

#[test]
fn stationary_estimate_properties() {
    let m = model_1d(ChemoField::sqrt_radial(1, 0.0, 1.0));
    let grid = Grid::new(&cfg_1d(60.0, 300, 12, Boundary::Absorbing), &m).unwrap();
    let f0 = grid.initial(&gaussian_maxwellian(), &m).unwrap();
    let tol = 1e-5;
    let est = grid_oracle::stationary_estimate(&f0, &m, 400.0, tol).unwrap();
    eprintln!("converged after {} unit steps; first residuals {:?}", est.residuals.len(), &est.residuals[..10.min(est.residuals.len())]);
    let r = &est.residuals;
    // monotone tail: after the first quarter, residuals do not increase
    let start = r.len() / 4;
    for w in r[start..].windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-9), "{:?}", w);
    }
    let f = &est.density;
    let tail: f64 = (0..grid.n_x()).filter(|&i| grid.x_centre(i)[0].abs() > 30.0).map(|i| (0..grid.n_v()).map(|k| f.values[k * grid.n_x() + i] * grid.v_weights[k]).sum::<f64>() * grid.cell_volume()).sum();
    eprintln!("mass beyond |x| = 30: {tail:e}; drift {:e}", est.mass_drift);
    assert!(f.min_value() >= 0.0);
    assert!((f.mass() - 1.0).abs() < 1e-12);
    assert!(est.mass_drift < 1e-6, "{}", est.mass_drift);
    let (g, _) = grid_oracle::solve(f, 1.0, &m).unwrap();
    assert!(g.l1_distance(f).unwrap() < 2.0 * tol);
}
