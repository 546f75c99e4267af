//! Exit criteria. Prints one PASS/FAIL line per criterion and exits nonzero
//! if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use cause_bandits::cause::calibration::{measure_grid, rested_tolerance, tolerance};
use cause_bandits::cause::{probit_moment, sigmoid};
use cause_bandits::gittins::{
    bonus_sweep, certify, CertificationGrid, GaussHermiteRule, SolverEvaluator, SweepAxis, SweepSpec,
};
use cause_bandits::model::{kalman_gain, stationary_posterior_variance};
use cause_bandits::noise_inference::{lesion_experiment, Axis, LesionConfig, LesionProfile, ProfileKind};
use cause_bandits::policies::{PolicyRegistry, PolicySettings};
use cause_bandits::simulator::{run_regime, AggregateResult, RegimeConfig, RegimeName};

type Outcome = (bool, String);

const SEED: u64 = 0;
const RUNS: usize = 1000;

fn simulate(name: RegimeName, policies: &[&str], settings: &PolicySettings) -> BTreeMap<String, AggregateResult> {
    let regime = RegimeConfig {
        base_seed: SEED,
        runs: RUNS,
        ..RegimeConfig::named(name).unwrap()
    };
    let registry = PolicyRegistry::builtin();
    let mut ps: Vec<_> = policies.iter().map(|n| registry.create(n, settings).unwrap()).collect();
    run_regime(&regime, &mut ps)
        .unwrap()
        .into_iter()
        .map(|a| (a.policy.clone(), a))
        .collect()
}

fn combined_sem(a: &AggregateResult, b: &AggregateResult) -> f64 {
    a.final_sem.hypot(b.final_sem)
}

fn fmt_final(a: &AggregateResult) -> String {
    format!("{}={:.2}±{:.2}", a.policy, a.final_mean, a.final_sem)
}

fn rested_match(name: RegimeName, cause_target: f64, gittins_target: f64, settings: &PolicySettings) -> Outcome {
    let r = simulate(name, &["cause", "gittins"], settings);
    let (c, g) = (&r["cause"], &r["gittins"]);
    let within = |x: f64, target: f64| (x - target).abs() <= 0.15 * target;
    let tie = (c.final_mean - g.final_mean).abs() < 2.0 * combined_sem(c, g);
    let ok = within(c.final_mean, cause_target) && within(g.final_mean, gittins_target) && tie;
    (
        ok,
        format!(
            "{} {} (targets {cause_target}, {gittins_target} ±15%), |Δ|={:.2} vs 2×SEM={:.2}",
            fmt_final(c),
            fmt_final(g),
            (c.final_mean - g.final_mean).abs(),
            2.0 * combined_sem(c, g)
        ),
    )
}

const COMPARED: [&str; 6] = ["myopic", "thompson", "ucb", "ps", "gittins", "cause"];

fn regime_ordering(results: &BTreeMap<RegimeName, BTreeMap<String, AggregateResult>>) -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for (&name, r) in results {
        let c = &r["cause"];
        for q in COMPARED.iter().filter(|q| **q != "cause") {
            let other = &r[*q];
            let gap = other.final_mean - c.final_mean;
            let pass = if name == RegimeName::SDominant {
                gap > 0.0 || (*q == "gittins" && gap.abs() < 2.0 * combined_sem(c, other))
            } else {
                gap > combined_sem(c, other)
            };
            if !pass {
                ok = false;
                notes.push(format!("{}: cause vs {q} gap {gap:.2}", name.as_str()));
            }
        }
        notes.push(format!("{}: {} {}", name.as_str(), fmt_final(c), fmt_final(&r["gittins"])));
    }
    (ok, notes.join("; "))
}

fn baseline_pathology(s_dominant: &BTreeMap<String, AggregateResult>) -> Outcome {
    let m = &s_dominant["myopic"];
    let ok = s_dominant["ucb"].final_mean > m.final_mean && s_dominant["thompson"].final_mean > m.final_mean;
    (
        ok,
        format!(
            "{} {} {}",
            fmt_final(m),
            fmt_final(&s_dominant["ucb"]),
            fmt_final(&s_dominant["thompson"])
        ),
    )
}

fn monotonicity_certifications() -> Outcome {
    let grid = CertificationGrid::default();
    let report = certify(&grid, &SolverEvaluator::default()).unwrap();
    let (ws, wv, wp) = report.worst_margins();
    let (cause_s, cause_p) = report.cause_strict();
    let gittins_ok = report.passed() && grid.slack <= 5e-3;
    (
        gittins_ok && cause_s && cause_p,
        format!(
            "gittins worst margins s={ws:.2e} v={wv:.2e} p={wp:.2e} ({} violations beyond {:.0e}); \
             cause strictly decreasing in s: {cause_s}, strictly increasing in P: {cause_p}",
            report.violations().len(),
            grid.slack
        ),
    )
}

fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

fn bonus_shape() -> Outcome {
    let table = bonus_sweep(&SweepSpec::standard(SweepAxis::S, 0.95)).unwrap();
    let g = table.column(|p| p.gittins_norm);
    let c = table.column(|p| p.cause_norm);
    let ucb = table.column(|p| p.ucb);
    let diff = g.iter().zip(&c).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let flat = ucb.iter().all(|u| u.to_bits() == ucb[0].to_bits());
    let ok = table.points.len() == 14 && strictly_decreasing(&g) && strictly_decreasing(&c) && diff < 0.25 && flat;
    (
        ok,
        format!(
            "{} points, gittins decreasing {}, cause decreasing {}, max |Δ| {diff:.3} (< 0.25), ucb flat {flat}",
            table.points.len(),
            strictly_decreasing(&g),
            strictly_decreasing(&c)
        ),
    )
}

fn lesion_signs() -> Outcome {
    let cfg = LesionConfig {
        seeds: 100,
        base_seed: SEED,
        ..LesionConfig::default()
    };
    let t = lesion_experiment(&cfg, &LesionProfile::all()).unwrap();
    let sign = |profile, axis, f: fn(&cause_bandits::noise_inference::SurfaceRow) -> f64| {
        let d = t.differences(profile, axis, f);
        if d.iter().all(|x| *x > 0.0) {
            1
        } else if d.iter().all(|x| *x < 0.0) {
            -1
        } else {
            0
        }
    };
    let bonus = |p, a| sign(p, a, |r| r.bonus);
    let rate = |p, a| sign(p, a, |r| r.learning_rate);
    use ProfileKind::*;
    let checks = [
        ("healthy s", bonus(Healthy, Axis::S) == -1),
        ("healthy v", bonus(Healthy, Axis::V) == 1),
        ("stochasticity-blind s", bonus(StochasticityBlind, Axis::S) == 1),
        ("stochasticity-blind v", bonus(StochasticityBlind, Axis::V) == bonus(Healthy, Axis::V)),
        ("volatility-blind v", bonus(VolatilityBlind, Axis::V) == -1),
        ("volatility-blind s", bonus(VolatilityBlind, Axis::S) == bonus(Healthy, Axis::S)),
    ];
    let mut failed: Vec<String> = checks.iter().filter(|c| !c.1).map(|c| c.0.to_string()).collect();
    for p in [Healthy, StochasticityBlind, VolatilityBlind] {
        for a in [Axis::S, Axis::V] {
            if rate(p, a) != bonus(p, a) || rate(p, a) == 0 {
                failed.push(format!("learning rate vs bonus {} {a:?}", p.as_str()));
            }
        }
    }
    let ok = failed.is_empty();
    (
        ok,
        if ok {
            format!("all sign patterns hold over {} seeds (P_ref {:.4})", cfg.seeds, t.p_ref)
        } else {
            format!("failed: {}", failed.join(", "))
        },
    )
}

fn closed_form_consistency() -> Outcome {
    let (tol, rested_tol) = (tolerance().unwrap(), rested_tolerance().unwrap());
    let points = measure_grid().unwrap();
    let worst = points.iter().map(|p| p.rel_error).fold(0.0, f64::max);
    let worst_rested = points.iter().filter(|p| p.v == 0.0).map(|p| p.rel_error).fold(0.0, f64::max);
    let ok = points.iter().all(|p| p.rel_error <= tol) && worst_rested <= rested_tol;
    (
        ok,
        format!(
            "{} points, worst rel. error {worst:.3} (tolerance {tol:.3}), rested {worst_rested:.3} (tolerance {rested_tol:.3})",
            points.len()
        ),
    )
}

fn double_factorial(k: i32) -> f64 {
    (1..=k).rev().step_by(2).map(f64::from).product()
}

/// `E|Z|^k` for a standard normal.
fn abs_moment(k: i32) -> f64 {
    if k % 2 == 0 {
        double_factorial(k - 1)
    } else {
        double_factorial(k - 1) * (2.0 / std::f64::consts::PI).sqrt()
    }
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let mut sum = f(a) + f(b);
    for i in 1..panels {
        sum += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    sum * h / 3.0
}

fn numerical_kernels() -> Outcome {
    let mut notes = Vec::new();

    let mut gh_err = 0.0f64;
    for n in [5usize, 11, 15, 20] {
        let rule = GaussHermiteRule::new(n).unwrap();
        for k in 0..(2 * n as i32) {
            let exact = if k % 2 == 0 { double_factorial(k - 1) } else { 0.0 };
            let got = rule.expectation(|z| z.powi(k), 0.0, 1.0);
            gh_err = gh_err.max((got - exact).abs() / abs_moment(k).max(1.0));
        }
    }
    let gh_ok = gh_err < 1e-12;
    notes.push(format!("GH moments {gh_err:.1e}"));

    let mut probit_err = 0.0f64;
    for i in 0..=40 {
        let mu = -10.0 + 0.5 * i as f64;
        for j in 0..=40 {
            let var = 100.0 * (j as f64 / 40.0).powi(2);
            let approx = probit_moment(mu, var, 1.0).unwrap();
            let exact = if var == 0.0 {
                sigmoid(mu)
            } else {
                let sd = var.sqrt();
                let pdf = |x: f64| (-(x - mu).powi(2) / (2.0 * var)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
                simpson(|x| sigmoid(x) * pdf(x), mu - 10.0 * sd, mu + 10.0 * sd, 4000)
            };
            probit_err = probit_err.max((approx - exact).abs());
        }
    }
    let probit_ok = probit_err < 1e-2;
    notes.push(format!("probit {probit_err:.4} (< 1e-2)"));

    let noise = [0.01, 0.1, 1.0, 4.0, 25.0, 100.0, 1000.0];
    let mut fp_err = 0.0f64;
    let mut kalman_worst = 0.0f64;
    let mut kalman_steps = 0;
    for &v in &noise {
        for &s in &noise {
            let closed = stationary_posterior_variance(v, s);
            let mut p = closed * 2.0 + 1.0;
            for _ in 0..200_000 {
                let next = (1.0 - kalman_gain(p, v, s)) * (p + v);
                let done = next == p;
                p = next;
                if done {
                    break;
                }
            }
            fp_err = fp_err.max((p - closed).abs());
            for start in [0.0, 25.0, 1e4] {
                let mut q = start;
                let mut steps = 0;
                while (q - closed).abs() >= 1e-6 && steps < 1_000_000 {
                    q = (1.0 - kalman_gain(q, v, s)) * (q + v);
                    steps += 1;
                }
                kalman_worst = kalman_worst.max((q - closed).abs());
                kalman_steps = kalman_steps.max(steps);
            }
        }
    }
    let fp_ok = fp_err < 1e-9;
    let kalman_ok = kalman_worst < 1e-6;
    notes.push(format!("P∞ vs fixed point {fp_err:.1e}"));
    notes.push(format!("Kalman within 1e-6 of P∞ after at most {kalman_steps} steps"));
    (gh_ok && probit_ok && fp_ok && kalman_ok, notes.join(", "))
}

fn run_bin(out: &Path, threads: &str, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_cause-bandits"))
        .args(args)
        .args(["--seed", "7", "--threads", threads, "--out"])
        .arg(out)
        .env_remove("CAUSE_BANDITS_THREADS")
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

/// Everything except the metadata sidecars, which record wall time and threads.
fn outputs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| !p.to_string_lossy().ends_with(".meta.json"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

fn determinism() -> Outcome {
    let commands: [&[&str]; 6] = [
        &["regret", "--regime", "mixed", "--runs", "30"],
        &["bonus"],
        &["rested", "--runs", "30", "--horizon", "50"],
        &["lesion", "--seeds", "30"],
        &["robustness", "--kind", "ucb-c", "--values", "1", "--runs", "10", "--horizon", "30"],
        &["certify"],
    ];
    let mut failed = Vec::new();
    for args in commands {
        let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
        let ran = run_bin(dirs[0].path(), "1", args) && run_bin(dirs[1].path(), "3", args) && run_bin(dirs[2].path(), "3", args);
        let a = outputs(dirs[0].path());
        if !ran || a.is_empty() || a != outputs(dirs[1].path()) || a != outputs(dirs[2].path()) {
            failed.push(args[0]);
        }
    }
    (
        failed.is_empty(),
        if failed.is_empty() {
            "6 subcommands byte-identical across reruns and 1 vs 3 threads".to_string()
        } else {
            format!("differs: {}", failed.join(", "))
        },
    )
}

fn main() {
    let settings = PolicySettings::default();
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut record = |name, outcome: Outcome| {
        println!("{} {name}: {}", if outcome.0 { "PASS" } else { "FAIL" }, outcome.1);
        results.push((name, outcome));
    };

    record(
        "rested-optimal match",
        rested_match(RegimeName::RestedModerate, 22.61, 22.50, &settings),
    );
    record(
        "extreme rested match",
        rested_match(RegimeName::RestedExtreme, 42.71, 41.36, &settings),
    );
    let regimes: BTreeMap<RegimeName, _> = [RegimeName::Mixed, RegimeName::SDominant, RegimeName::VDominant]
        .into_iter()
        .map(|n| (n, simulate(n, &COMPARED, &settings)))
        .collect();
    record("regime ordering", regime_ordering(&regimes));
    record("baseline pathology", baseline_pathology(&regimes[&RegimeName::SDominant]));
    record("monotonicity certifications", monotonicity_certifications());
    record("bonus-shape tracking", bonus_shape());
    record("lesion reversal signs", lesion_signs());
    record("closed-form/oracle consistency", closed_form_consistency());
    record("numerical kernels", numerical_kernels());
    record("determinism", determinism());

    let failed: Vec<&str> = results.iter().filter(|r| !r.1 .0).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed",
        results.len() - failed.len(),
        failed.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
