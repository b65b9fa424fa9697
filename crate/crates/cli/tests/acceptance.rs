//! Acceptance run: one line per criterion, `ACCEPT <id> <PASS|FAIL> ...`.
//!
//! Every experiment goes through the `rtk` binary and a shipped config; the
//! checks below re-derive their quantities from the written artifacts.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use serde_json::Value;

const TV_MAX: f64 = 0.05;
const GAMMA_REGIME: f64 = 3.0 / 16.0;
const PROBES: u64 = 100_000;
const GEOMETRY_TOL: f64 = 1e-9;
const CIRCLE_TOL: f64 = 1e-10;
const ITERATES: usize = 1000;
const N_TILDE_MAX: u64 = 60;
const MINORISE_PATHS: u64 = 10_000_000;
const Z99: f64 = 2.326_347_874_040_841;
const UNBOUNDED_BOUND: f64 = 3.6985e-5;
const DECAY_PATHS: u64 = 1_000_000;
const RESIDUAL_MAX: f64 = 0.1;
const FREE_SLOPE_MAX: f64 = -1.0 + 0.3;
const MARTINGALE_PATHS: u64 = 100_000;
const MARTINGALE_SE: f64 = 3.0;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn scratch(name: &str) -> PathBuf {
    let p = std::env::temp_dir().join(format!("rtk-accept-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&p);
    p
}

/// Runs `rtk <sub> --config <cfg> --out <out> <extra>` and returns the exit code.
fn rtk(sub: &str, cfg: &str, out: &Path, extra: &[&str]) -> i32 {
    let o = Command::new(env!("CARGO_BIN_EXE_rtk"))
        .args([sub, "--config", config(cfg).to_str().unwrap(), "--out", out.to_str().unwrap()])
        .args(extra)
        .output()
        .expect("rtk runs");
    if o.status.code() == Some(1) {
        panic!("rtk {sub} {cfg} failed: {}", String::from_utf8_lossy(&o.stderr));
    }
    o.status.code().unwrap()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap_or_else(|| panic!("not a number: {v}"))
}

fn csv_rows(path: PathBuf) -> Vec<BTreeMap<String, f64>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    lines
        .map(|l| header.iter().cloned().zip(l.split(',').map(|x| x.parse::<f64>().unwrap())).collect())
        .collect()
}

fn verdict(id: &str, name: &str, pass: bool, detail: String) {
    println!("ACCEPT {id} {} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

fn drift_run(cfg: &'static str) -> &'static Path {
    static BOUNDED: OnceLock<PathBuf> = OnceLock::new();
    static UNBOUNDED: OnceLock<PathBuf> = OnceLock::new();
    let cell = if cfg == "bounded_drift.toml" { &BOUNDED } else { &UNBOUNDED };
    cell.get_or_init(|| {
        let out = scratch(cfg);
        rtk("drift-check", cfg, &out, &[]);
        out
    })
}

#[test]
fn c01_generator_consistency() {
    let out = scratch("c01");
    rtk("simulate", "simulate_1d.toml", &out, &[]);
    let s = json(out.join("simulate_summary.json"));
    let row = &s["comparison"][0];
    let tv = f(&row["tv"]);
    let ok = s["n"] == 1_000_000 && f(&row["t"]) == 5.0 && tv < TV_MAX;
    verdict(
        "1",
        "particles vs grid oracle, d=1 Maxwellian, N=1e6, t=5",
        ok,
        format!("binned TV = {tv:.5} (noise floor {:.5}) < {TV_MAX}", f(&row["noise_floor"])),
    );
}

#[test]
fn c02_bounded_drift_certified() {
    let out = drift_run("bounded_drift.toml");
    let sel = json(out.join("drift_check_selection.json"));
    let rep = json(out.join("drift_check_report.json"));
    let spec = &sel["selection"]["spec"];
    let (gamma, a, chi, m_star) = (f(&spec["gamma"]), f(&spec["A"]), f(&spec["chi"]), f(&spec["m_star"]));
    let b = spec["b"].as_i64().unwrap() as i32;
    let gamma_cap = f(&sel["selection"]["gamma_cap"]);
    let zeta = f(&rep["constants"]["zeta"]);
    let zeta_oracle = gamma * a * (1.0 - chi) * m_star.powi(b);
    let probes = rep["probe_counts"]["core"].as_u64().unwrap() + rep["probe_counts"]["far"].as_u64().unwrap();
    let violations = rep["violations"].as_u64().unwrap();
    let ok = gamma <= gamma_cap
        && gamma_cap <= GAMMA_REGIME
        && zeta > 0.0
        && (zeta - zeta_oracle).abs() <= 1e-12 * zeta_oracle
        && probes == PROBES
        && violations == 0
        && rep["positivity_failures"] == 0;
    verdict(
        "2",
        "bounded Foster-Lyapunov drift",
        ok,
        format!(
            "gamma = {gamma:.4e} <= cap {gamma_cap:.4} <= 3/16, zeta = {zeta:.4e} > 0, {violations} violations on {probes} probes"
        ),
    );
}

#[test]
fn c03_unbounded_drift_certified() {
    let out = drift_run("unbounded_drift.toml");
    let sel = json(out.join("drift_check_selection.json"));
    let rep = json(out.join("drift_check_report.json"));
    let h = &sel["hypotheses"];
    let s = &sel["selection"];
    let chi = f(&s["spec"]["chi"]);
    let k = chi / (1.0 + chi);
    let lip = f(&s["lip_z_psi"]);
    let a_oracle = 1.0
        + ((2.0 + 2.0 * k * lip) * f(&h["sup_m_hess"]) + (2.0 + 2.0 * k) * f(&h["sup_grad"]).powi(2)) / (1.0 - chi);
    let a = f(&s["spec"]["A"]);
    let probes = rep["probe_counts"]["core"].as_u64().unwrap() + rep["probe_counts"]["far"].as_u64().unwrap();
    let violations = rep["violations"].as_u64().unwrap();
    let cfg: toml::Table = toml::from_str(&std::fs::read_to_string(config("unbounded_drift.toml")).unwrap()).unwrap();
    let v_max = cfg["lyapunov"]["v_max"].as_float().unwrap();
    let ok = (a - a_oracle).abs() <= 1e-12 * a_oracle
        && rep["constants"]["kind"] == "subgeometric"
        && v_max >= 6.0
        && probes == PROBES
        && violations == 0;
    verdict(
        "3",
        "unbounded subgeometric drift",
        ok,
        format!("A = {a:.6} (displayed bound {a_oracle:.6}), |v| <= {v_max}, {violations} violations on {probes} probes"),
    );
}

fn geometry_out() -> &'static Path {
    static OUT: OnceLock<PathBuf> = OnceLock::new();
    OUT.get_or_init(|| {
        let out = scratch("c04");
        rtk("geometry", "geometry.toml", &out, &[]);
        out
    })
}

#[test]
fn c04a_geometry_closed_forms() {
    let r = json(geometry_out().join("geometry_report.json"));
    let half = PI / 6.0;
    let r_small = 1.0 - half.cos();
    let r_big = (2.0 + 2.0 * half.cos()).sqrt();
    let dtheta = PI / 12.0;
    let r_hat = (1.0 + r_big) / (dtheta / 2.0).sin();
    let got = [
        ("r", f(&r["crescent"]["r"]), r_small),
        ("R", f(&r["crescent"]["R_big"]), r_big),
        ("dtheta", f(&r["crescent"]["delta_theta"]), dtheta),
        ("R_hat", f(&r["circle"]["R_hat"]), r_hat),
    ];
    let worst = got.iter().map(|(_, a, b)| (a - b).abs()).fold(0.0, f64::max);
    let counts = (r["n_tilde"].as_u64().unwrap(), r["n_star"].as_u64().unwrap());
    let printed = [0.133975, 1.931852, 22.4607];
    let ok = worst <= GEOMETRY_TOL && counts == (4024, 12) && (got[0].1 - printed[0]).abs() < 1e-6
        && (got[1].1 - printed[1]).abs() < 1e-6;
    verdict(
        "4a",
        "crescent and enclosing-circle closed forms for (1,1,1,pi/3)",
        ok,
        format!(
            "max deviation {worst:.1e} <= {GEOMETRY_TOL:.0e}; r = {:.6}, R = {:.6}, dtheta = pi/12, R_hat = {:.6} \
             (printed {} differs by {:.1e}), n_tilde = {}, n_* = {}",
            got[0].1,
            got[1].1,
            got[3].1,
            printed[2],
            (got[3].1 - printed[2]).abs(),
            counts.0,
            counts.1
        ),
    );
}

/// Iterates of F from the CSV artifact.
fn iterates() -> Vec<(f64, f64)> {
    csv_rows(geometry_out().join("geometry_iterates.csv")).iter().map(|r| (r["x"], r["y"])).collect()
}

#[test]
fn c04b_iterates_on_circle_c_r_hat() {
    let r = json(geometry_out().join("geometry_report.json"));
    let c = &r["circle"]["centre_displayed"];
    let (cx, cy, r_hat) = (f(&c[0]), f(&c[1]), f(&r["circle"]["R_hat"]));
    let pts = iterates();
    let dev = pts.iter().map(|(x, y)| ((x - cx).hypot(y - cy) - r_hat).abs()).fold(0.0, f64::max);
    verdict(
        "4b",
        "F-iterates on the circle with centre C and radius R_hat",
        pts.len() == ITERATES + 1 && dev <= CIRCLE_TOL,
        format!("max | |p_k - C| - R_hat | = {dev:.4} over {} iterates (tol {CIRCLE_TOL:.0e})", pts.len() - 1),
    );
}

#[test]
fn c04c_iterates_on_orbit_circle() {
    // companion of 4b: the circle through the iterates has diameter R_hat
    let pts = iterates();
    let (x0, y0) = pts[0];
    let r = json(geometry_out().join("geometry_report.json"));
    let r_hat = f(&r["circle"]["R_hat"]);
    let th = f(&r["crescent"]["delta_theta"]) / 2.0;
    let (cx, cy) = (x0 + 0.5 * r_hat * th.sin(), y0 - 0.5 * r_hat * th.cos());
    let dev = pts.iter().map(|(x, y)| ((x - cx).hypot(y - cy) - 0.5 * r_hat).abs()).fold(0.0, f64::max);
    let reach = pts.iter().map(|(x, y)| (x - x0).hypot(y - y0)).fold(0.0, f64::max);
    verdict(
        "4c",
        "F-iterates on the circle of radius R_hat/2, inside B(p_0, R_hat)",
        pts.len() == ITERATES + 1 && dev <= CIRCLE_TOL && reach <= r_hat * (1.0 + 1e-12),
        format!("max deviation {dev:.2e}, max |p_k - p_0| = {reach:.6} <= R_hat = {r_hat:.6}"),
    );
}

fn wilson_lower(k: f64, n: f64, z: f64) -> f64 {
    let p = k / n;
    let z2 = z * z;
    (p + z2 / (2.0 * n) - z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt()) / (1.0 + z2 / n)
}

#[test]
fn c05_bounded_minorisation() {
    let out = scratch("c05");
    rtk("minorise-check", "minorise_bounded.toml", &out, &[]);
    let geo = json(out.join("minorise_check_geometry.json"));
    let s = json(out.join("minorise_check_summary.json"));
    let cells = csv_rows(out.join("minorise_check_cells.csv"));
    let n = s["n_paths"].as_u64().unwrap();
    let positive = cells.iter().filter(|c| wilson_lower(c["count"], n as f64, Z99) > 0.0).count();
    let min_count = cells.iter().map(|c| c["count"]).fold(f64::INFINITY, f64::min);
    let n_tilde = geo["n_tilde"].as_u64().unwrap();
    let ok = n == MINORISE_PATHS && n_tilde <= N_TILDE_MAX && positive == cells.len() && !cells.is_empty();
    verdict(
        "5",
        "bounded minorisation by forced chains",
        ok,
        format!(
            "n_tilde = {n_tilde} <= {N_TILDE_MAX}, {positive}/{} cells with 99% lower bound > 0 (min count {min_count}), N = {n}",
            cells.len()
        ),
    );
}

#[test]
fn c06_unbounded_minorisation() {
    let out = scratch("c06");
    rtk("minorise-check", "minorise_unbounded.toml", &out, &[]);
    let s = json(out.join("minorise_check_summary.json"));
    let cells = csv_rows(out.join("minorise_check_cells.csv"));
    let n = s["n_paths"].as_u64().unwrap();
    // 8 equal-area cells of the unit disk in x, times the same in v
    let vol = (PI / 8.0).powi(2);
    let lowers: Vec<f64> = cells.iter().map(|c| wilson_lower(c["count"], n as f64, Z99) / vol).collect();
    let min_lower = lowers.iter().cloned().fold(f64::INFINITY, f64::min);
    let reported = f(&s["analytic_bound"]);
    let ok = n == MINORISE_PATHS
        && (reported - UNBOUNDED_BOUND).abs() < 1e-4 * UNBOUNDED_BOUND
        && lowers.iter().all(|&l| l >= UNBOUNDED_BOUND)
        && cells.len() == 64;
    verdict(
        "6",
        "unbounded minorisation against the analytic bound",
        ok,
        format!(
            "min 99% lower density {min_lower:.4e} >= {UNBOUNDED_BOUND:e} over {} cells (bound computed {reported:.5e}), N = {n}",
            cells.len()
        ),
    );
}

#[test]
fn c07_exponential_envelope() {
    let out = scratch("c07");
    rtk("rate-fit", "decay_bounded.toml", &out, &[]);
    let fit = json(out.join("rate_fit_fit.json"));
    let manifest = json(out.join("manifest.json"));
    let rf = &manifest["config"]["rate_fit"];
    let curve = csv_rows(out.join("rate_fit_curve.csv"));
    let sigma = f(&fit["fit"]["sigma"]);
    let c = f(&fit["fit"]["envelope_constant"]);
    let residual = f(&fit["fit"]["residual"]);
    let above = curve.iter().filter(|p| p["distance"] > c * (-sigma * p["t"]).exp() * (1.0 + 1e-9)).count();
    let span = (curve.first().unwrap()["t"], curve.last().unwrap()["t"]);
    let ok = rf["weight"] == "norm1_weight"
        && rf["n"].as_u64() == Some(DECAY_PATHS)
        && span == (0.0, 30.0)
        && sigma > 0.0
        && residual < RESIDUAL_MAX
        && above == 0;
    verdict(
        "7",
        "exponential decay in the Lyapunov-weighted distance",
        ok,
        format!(
            "sigma = {sigma:.4} > 0, log residual {residual:.4} < {RESIDUAL_MAX}, {above} of {} points above {c:.4} e^(-sigma t) on [0, 30]",
            curve.len()
        ),
    );
}

#[test]
fn c08_algebraic_envelope() {
    let out = scratch("c08");
    rtk("rate-fit", "decay_unbounded.toml", &out, &[]);
    let fit = json(out.join("rate_fit_fit.json"));
    let manifest = json(out.join("manifest.json"));
    let rf = &manifest["config"]["rate_fit"];
    let curve = csv_rows(out.join("rate_fit_curve.csv"));
    let m_f0 = f(&fit["m_f0"]);
    let c_fit = f(&fit["c_fit"]);
    let slope = f(&fit["fit"]["free_slope"]);
    let window: Vec<_> = curve.iter().filter(|p| p["t"] >= 1.0 && p["t"] <= 50.0).collect();
    let above = window.iter().filter(|p| p["distance"] > c_fit * m_f0 / p["t"] * (1.0 + 1e-9)).count();
    let ok = rf["weight"] == "plain_tv"
        && rf["n"].as_u64() == Some(DECAY_PATHS)
        && window.len() == 50
        && m_f0 > 0.0
        && above == 0
        && slope <= FREE_SLOPE_MAX;
    verdict(
        "8",
        "algebraic decay in total variation",
        ok,
        format!(
            "{above} of {} points above C_fit M_f0 / t (C_fit = {c_fit:.4e}, M_f0 = {m_f0:.4}), free slope {slope:.3} <= {FREE_SLOPE_MAX}",
            window.len()
        ),
    );
}

#[test]
fn c09_martingale_link() {
    let mut lines = Vec::new();
    let mut ok = true;
    for cfg in ["bounded_drift.toml", "unbounded_drift.toml"] {
        let m = json(drift_run(cfg).join("drift_check_martingale.json"));
        let pts = m["points"].as_array().unwrap();
        let worst = pts.iter().map(|p| f(&p["diff_mean"]).abs() / f(&p["diff_se"])).fold(0.0, f64::max);
        ok &= m["n"].as_u64() == Some(MARTINGALE_PATHS) && pts.len() == 5 && worst <= MARTINGALE_SE;
        lines.push(format!("{cfg}: max |diff|/se = {worst:.2} over {} times", pts.len()));
    }
    verdict("9", "d/dt E[phi] against E[L* phi]", ok, format!("{} (<= {MARTINGALE_SE})", lines.join("; ")));
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn c10_determinism_across_threads() {
    let runs: [(&str, &str, &[&str]); 7] = [
        ("simulate", "simulate_2d.toml", &[]),
        ("simulate", "simulate_1d.toml", &["--set", "ensemble.n=50000"]),
        ("drift-check", "bounded_drift.toml", &["--set", "lyapunov.probes=10000", "--set", "lyapunov.martingale.n=20000"]),
        ("minorise-check", "minorise_bounded.toml", &["--set", "minorise.n=100000"]),
        ("minorise-check", "minorise_unbounded.toml", &["--set", "minorise.n=100000"]),
        ("rate-fit", "decay_unbounded.toml", &["--set", "rate_fit.n=50000", "--set", "rate_fit.stationary.tol=1e-4"]),
        ("geometry", "geometry.toml", &[]),
    ];
    let mut compared = 0;
    let mut differing = Vec::new();
    for (i, (sub, cfg, extra)) in runs.iter().enumerate() {
        let dirs: Vec<PathBuf> = ["1", "4"].iter().map(|t| scratch(&format!("c10-{i}-{t}"))).collect();
        for (d, t) in dirs.iter().zip(["1", "4"]) {
            let mut args = extra.to_vec();
            args.extend(["--threads", t]);
            rtk(sub, cfg, d, &args);
        }
        let (a, b) = (dir_bytes(&dirs[0]), dir_bytes(&dirs[1]));
        if a.keys().ne(b.keys()) {
            differing.push(format!("{sub}/{cfg}: file sets differ"));
        }
        for (name, bytes) in &a {
            compared += 1;
            if b.get(name) != Some(bytes) {
                differing.push(format!("{sub}/{cfg}: {name}"));
            }
        }
    }
    verdict(
        "10",
        "byte-identical artifacts under --threads 1 and 4",
        differing.is_empty() && compared > 0,
        format!("{compared} artifacts compared over 5 subcommands; differing: {differing:?}"),
    );
}
