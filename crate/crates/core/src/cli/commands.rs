use std::collections::BTreeMap;
use std::time::Instant;

use log::info;
use serde::Serialize;

use super::{AxisArg, Command, ReferenceArg, Resolved};
use crate::error::{invalid, Result};
use crate::gittins::{bonus_sweep, certify, BonusEvaluator, CertificationGrid, SolveStats, SolverEvaluator, SweepAxis, SweepSpec};
use crate::noise_inference::{lesion_experiment, LesionConfig, LesionProfile, ReferenceVariance};
use crate::output::{write_file, write_json, Metadata};
use crate::policies::{PolicyRegistry, PolicySettings};
use crate::simulator::{
    robustness_sweep, run_regime, write_regret_csv, AggregateResult, RegimeConfig, RegimeName, SweepKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    /// The certification report has margins beyond the slack.
    CertificationFailed,
}

pub(super) fn dispatch(command: &Command, r: &Resolved) -> Result<Outcome> {
    match command {
        Command::Regret { regime } => regret(r, regime),
        Command::Bonus { axis, points } => bonus(r, *axis, *points),
        Command::Rested => rested(r),
        Command::Lesion {
            seeds,
            trials,
            reference,
        } => lesion(r, *seeds, *trials, *reference),
        Command::Robustness { kind, values } => robustness(r, (*kind).into(), values),
        Command::Certify { slack } => {
            let grid = CertificationGrid {
                gamma: r.experiment.gamma,
                slack: slack.unwrap_or(crate::gittins::certify::DEFAULT_SLACK),
                ..CertificationGrid::default()
            };
            certify_with(r, &grid, &SolverEvaluator::default())
        }
    }
}

#[derive(Serialize)]
struct RunDetails<E: Serialize> {
    threads: usize,
    outputs: Vec<String>,
    #[serde(flatten)]
    extra: E,
}

fn write_metadata<E: Serialize>(r: &Resolved, command: &str, stem: &str, started: Instant, outputs: Vec<String>, extra: E) -> Result<()> {
    let details = RunDetails {
        threads: r.threads,
        outputs,
        extra,
    };
    let meta = Metadata::new(
        command,
        &r.experiment,
        r.experiment.base_seed,
        started.elapsed().as_secs_f64(),
        details,
    )?;
    write_json(&r.out.join(format!("{stem}.meta.json")), &meta)
}

fn settings(r: &Resolved) -> PolicySettings {
    PolicySettings {
        ucb_c: r.experiment.ucb_c,
        cause_scale: r.experiment.cause_c,
        table_scope: r.experiment.table_scope,
        ..PolicySettings::default()
    }
}

fn regime(r: &Resolved, name: RegimeName) -> Result<RegimeConfig> {
    let mut cfg = RegimeConfig::with_arm_count(name, r.experiment.arms)?;
    cfg.horizon = r.experiment.horizon;
    cfg.gamma = r.experiment.gamma;
    cfg.runs = r.experiment.runs;
    cfg.base_seed = r.experiment.base_seed;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct Final {
    final_mean: f64,
    final_sem: f64,
}

fn finals(results: &[AggregateResult]) -> BTreeMap<String, Final> {
    results
        .iter()
        .map(|a| {
            (
                a.policy.clone(),
                Final {
                    final_mean: a.final_mean,
                    final_sem: a.final_sem,
                },
            )
        })
        .collect()
}

#[derive(Serialize)]
struct TableInfo {
    file: String,
    v: f64,
    s: f64,
    gamma: f64,
    stats: SolveStats,
}

/// Plays every built-in policy and writes the regret CSV plus the Gittins
/// tables it used.
fn simulate(r: &Resolved, cfg: &RegimeConfig, outputs: &mut Vec<String>) -> Result<(Vec<AggregateResult>, Vec<TableInfo>)> {
    let registry = PolicyRegistry::builtin();
    let settings = settings(r);
    let mut policies = registry
        .names()
        .iter()
        .map(|n| registry.create(n, &settings))
        .collect::<Result<Vec<_>>>()?;
    info!("{}: {} runs of {} steps", cfg.name.as_str(), cfg.runs, cfg.horizon);
    let results = run_regime(cfg, &mut policies)?;
    let file = format!("regret_{}.csv", cfg.name.as_str());
    write_file(&r.out.join(&file), |w| write_regret_csv(w, &results))?;
    outputs.push(file);
    let mut tables = Vec::new();
    for (i, t) in settings.tables.tables().iter().enumerate() {
        let file = format!("gittins_{}_{i}.csv", cfg.name.as_str());
        t.save_csv(&r.out.join(&file))?;
        if t.stats.cap_hits > 0 {
            log::warn!("{file}: {} value iterations hit the sweep cap", t.stats.cap_hits);
        }
        tables.push(TableInfo {
            file: file.clone(),
            v: t.v,
            s: t.s,
            gamma: t.gamma,
            stats: t.stats,
        });
        outputs.push(file);
    }
    Ok((results, tables))
}

fn regret(r: &Resolved, name: &str) -> Result<Outcome> {
    let started = Instant::now();
    let cfg = regime(r, RegimeName::parse(name)?)?;
    let mut outputs = Vec::new();
    let (results, tables) = simulate(r, &cfg, &mut outputs)?;
    #[derive(Serialize)]
    struct Extra {
        regime: RegimeConfig,
        finals: BTreeMap<String, Final>,
        gittins_tables: Vec<TableInfo>,
    }
    let extra = Extra {
        finals: finals(&results),
        regime: cfg,
        gittins_tables: tables,
    };
    write_metadata(r, "regret", &format!("regret_{name}"), started, outputs, extra)?;
    Ok(Outcome::Done)
}

fn bonus(r: &Resolved, axis: AxisArg, points: Option<usize>) -> Result<Outcome> {
    let started = Instant::now();
    let mut outputs = Vec::new();
    let mut stats = BTreeMap::new();
    for axis in axis.axes() {
        let mut spec = SweepSpec::standard(axis, r.experiment.gamma);
        spec.ucb_c = r.experiment.ucb_c;
        spec.cause_c = r.experiment.cause_c;
        if let Some(n) = points {
            spec.points = n;
        }
        let table = bonus_sweep(&spec)?;
        let label = match axis {
            SweepAxis::S => "s",
            SweepAxis::V => "v",
        };
        let file = format!("bonus_{label}.csv");
        write_file(&r.out.join(&file), |w| table.write_csv(w))?;
        outputs.push(file);
        stats.insert(label, (spec, table.p_ref, table.stats));
    }
    write_metadata(r, "bonus", "bonus", started, outputs, stats)?;
    Ok(Outcome::Done)
}

fn rested(r: &Resolved) -> Result<Outcome> {
    let started = Instant::now();
    let mut outputs = Vec::new();
    let mut summary = BTreeMap::new();
    for name in [RegimeName::RestedModerate, RegimeName::RestedExtreme] {
        let cfg = regime(r, name)?;
        let (results, _) = simulate(r, &cfg, &mut outputs)?;
        summary.insert(name.as_str(), finals(&results));
    }
    write_json(&r.out.join("rested_summary.json"), &summary)?;
    outputs.push("rested_summary.json".into());
    write_metadata(r, "rested", "rested", started, outputs, ())?;
    Ok(Outcome::Done)
}

fn lesion(r: &Resolved, seeds: Option<usize>, trials: Option<usize>, reference: Option<ReferenceArg>) -> Result<Outcome> {
    let started = Instant::now();
    let d = LesionConfig::default();
    let cfg = LesionConfig {
        seeds: seeds.unwrap_or(d.seeds),
        trials: trials.unwrap_or(d.trials),
        base_seed: r.experiment.base_seed,
        gamma: r.experiment.gamma,
        cause_scale: r.experiment.cause_c,
        reference: match reference {
            Some(ReferenceArg::Prior) => ReferenceVariance::Prior,
            Some(ReferenceArg::Stationary) | None => ReferenceVariance::Stationary,
        },
        ..d
    };
    let surface = lesion_experiment(&cfg, &LesionProfile::all())?;
    write_file(&r.out.join("lesion_surface.csv"), |w| surface.write_csv(w))?;
    #[derive(Serialize)]
    struct Extra {
        lesion: LesionConfig,
        p_ref: f64,
    }
    let extra = Extra {
        p_ref: surface.p_ref,
        lesion: cfg,
    };
    write_metadata(r, "lesion", "lesion_surface", started, vec!["lesion_surface.csv".into()], extra)?;
    Ok(Outcome::Done)
}

fn value_label(x: f64) -> String {
    format!("{x}")
}

fn robustness(r: &Resolved, kind: SweepKind, values: &[f64]) -> Result<Outcome> {
    let started = Instant::now();
    let values = if values.is_empty() {
        kind.default_values()
    } else {
        values.to_vec()
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("sweep values must be finite"));
    }
    let template = regime(r, RegimeName::Mixed)?;
    let registry = PolicyRegistry::builtin();
    let names = registry.names();
    let blocks = robustness_sweep(kind, &values, &template, &registry, &names, &settings(r))?;
    let mut outputs = Vec::new();
    let mut summary = BTreeMap::new();
    for b in &blocks {
        let file = format!("robustness_{}_{}.csv", kind.as_str(), value_label(b.value));
        write_file(&r.out.join(&file), |w| b.write_csv(w))?;
        outputs.push(file);
        let per_regime: BTreeMap<&str, _> = b.regimes.iter().map(|(n, rs)| (n.as_str(), finals(rs))).collect();
        summary.insert(value_label(b.value), per_regime);
    }
    write_metadata(r, "robustness", &format!("robustness_{}", kind.as_str()), started, outputs, summary)?;
    Ok(Outcome::Done)
}

/// Writes `certification.csv` and reports whether every margin is within slack.
pub fn certify_with(r: &Resolved, grid: &CertificationGrid, evaluator: &dyn BonusEvaluator) -> Result<Outcome> {
    let started = Instant::now();
    let report = certify(grid, evaluator)?;
    write_file(&r.out.join("certification.csv"), |w| report.write_csv(w))?;
    let violations = report.violations();
    for v in &violations {
        eprintln!(
            "violation at v={} s={} p={}: margins s={:?} v={:?} p={:?}",
            v.v, v.s, v.p, v.s_margin, v.v_margin, v.p_margin
        );
    }
    let (worst_s, worst_v, worst_p) = report.worst_margins();
    let (cause_s, cause_p) = report.cause_strict();
    #[derive(Serialize)]
    struct Extra<'a> {
        grid: &'a CertificationGrid,
        rows: usize,
        violations: usize,
        worst_margins: [f64; 3],
        cause_strictly_decreasing_in_s: bool,
        cause_strictly_increasing_in_p: bool,
        stats: SolveStats,
    }
    let extra = Extra {
        grid,
        rows: report.rows.len(),
        violations: violations.len(),
        worst_margins: [worst_s, worst_v, worst_p],
        cause_strictly_decreasing_in_s: cause_s,
        cause_strictly_increasing_in_p: cause_p,
        stats: report.stats,
    };
    write_metadata(r, "certify", "certification", started, vec!["certification.csv".into()], extra)?;
    Ok(if violations.is_empty() {
        Outcome::Done
    } else {
        Outcome::CertificationFailed
    })
}
