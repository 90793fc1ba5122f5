use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use msgame_core::diophantine::{audit_horizon, bad_margin, dani_audit, Bands, Verdict};
use msgame_core::homogeneous::{expanding_check_with, flow_generator, FlowSegment, Projection};
use msgame_core::strategies::{
    alice_avoid, alice_intersect, alice_stay_bounded, bob_cusp_seeking, bob_random, bob_target_seeking,
    calibrate_transversality, dummy, AvoidanceTarget, BoundedConfig, RandomMover,
};
use msgame_core::trace::{read_trace, write_trace};
use msgame_core::verify::{verify_trace, VerifyReport};
use msgame_core::{play, GameSpace, GameTrace, Schedule, Strategy};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::{
    self, config_err, lattice, matrix, positive, section, AliceConfig, AliceKind, BobKind, RunConfig, Space,
};
use crate::{CliError, RunArgs, Summary};

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

fn output(out: &Path, name: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    Ok(out.join(name))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

struct Game {
    space: Space,
    arena: Arc<GameSpace>,
    schedule: Schedule,
    rounds: usize,
}

fn game(cfg: &RunConfig, args: &RunArgs) -> Result<Game, CliError> {
    let space = section(&cfg.space, "space")?.build()?;
    let schedule = section(&cfg.schedule, "schedule")?.build(&space)?;
    let rounds = config::rounds(cfg, args.rounds)?;
    let arena = GameSpace::with_horizon(space.semigroup.clone(), space.base.clone(), schedule.t_prime(rounds));
    Ok(Game { space, arena, schedule, rounds })
}

/// The avoidance target of an `avoid` entry, with the audit certificate
/// when delta had to be calibrated.
fn avoid_target(
    cfg: &RunConfig,
    entry: &AliceConfig,
    field: &str,
    g: &Game,
    period: f64,
) -> Result<(AvoidanceTarget, Option<Value>), CliError> {
    let w = &g.space.weights;
    let z = lattice(entry.target.as_ref(), w.k(), &format!("{field}.target"))?;
    let generator = flow_generator(w);
    let (delta, cert) = match entry.delta {
        Some(d) => (positive(d, &format!("{field}.delta"))?, None),
        None => {
            let audit = cfg.audit.clone().unwrap_or_default().build();
            let segment = FlowSegment::new(&z, generator.clone(), period);
            let c = calibrate_transversality(&segment, w, &audit).map_err(|e| CliError::Failed(format!("calibrate: {e}")))?;
            (c.delta, Some(serde_json::to_value(&c).expect("certificate serializes")))
        }
    };
    let target = AvoidanceTarget::new(&z, &generator, period, &g.arena, g.schedule.a, delta)
        .map_err(|e| config_err(field, e))?;
    Ok((target, cert))
}

fn alice(cfg: &RunConfig, entry: &AliceConfig, field: &str, g: &Game, seed: Option<u64>, factor: f64) -> Result<Box<dyn Strategy>, CliError> {
    let (w, basepoint) = (&g.space.weights, &g.space.basepoint);
    Ok(match entry.strategy {
        AliceKind::Avoid => {
            let (target, _) = avoid_target(cfg, entry, field, g, factor * g.schedule.period())?;
            Box::new(alice_avoid(target, w, basepoint))
        }
        AliceKind::Bounded => {
            let eps0_cap = entry.eps0_cap.map(|c| positive(c, &format!("{field}.eps0_cap"))).transpose()?;
            Box::new(alice_stay_bounded(w, basepoint, BoundedConfig { eps0_cap }))
        }
        AliceKind::Dummy => Box::new(dummy()),
        AliceKind::Random => Box::new(RandomMover::new(entry.seed.or(seed).unwrap_or(0))),
        AliceKind::Intersect => {
            if entry.components.is_empty() {
                return Err(config_err(&format!("{field}.components"), "intersect needs at least one component"));
            }
            let n = entry.components.len() as f64;
            let parts = entry
                .components
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let f = format!("{field}.components[{i}]");
                    if c.strategy == AliceKind::Intersect {
                        return Err(config_err(&f, "components cannot nest"));
                    }
                    alice(cfg, c, &f, g, seed, n)
                })
                .collect::<Result<Vec<_>, _>>()?;
            Box::new(alice_intersect(parts))
        }
    })
}

fn bob(cfg: &RunConfig, g: &Game, seed: Option<u64>) -> Result<Box<dyn Strategy>, CliError> {
    let b = section(&cfg.bob, "bob")?;
    let seed = seed.or(b.seed).unwrap_or(0);
    let (w, basepoint) = (&g.space.weights, &g.space.basepoint);
    Ok(match b.strategy {
        BobKind::Random => Box::new(bob_random(seed)),
        BobKind::Cusp => Box::new(bob_cusp_seeking(w, basepoint, seed)),
        BobKind::Target => {
            let z = lattice(b.target.as_ref(), w.k(), "bob.target")?;
            Box::new(bob_target_seeking(&z, w, basepoint, seed))
        }
        BobKind::Dummy => Box::new(dummy()),
    })
}

fn save_trace(path: &Path, trace: &GameTrace, rounds: usize, error: Option<&str>) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    write_trace(&mut w, trace, rounds, error).and_then(|_| w.flush()).map_err(|e| io_err(path, e))
}

fn annotation_min(trace: &GameTrace, key: &str) -> Option<f64> {
    trace.moves.iter().filter_map(|m| m.annotations.get(key).and_then(Value::as_f64)).reduce(f64::min)
}

/// Plays the configured game and writes the trace; a failed game still
/// leaves its partial trace, closed by an error line.
fn run_game(cfg: &RunConfig, args: &RunArgs) -> Result<(GameTrace, usize, PathBuf, Option<String>), CliError> {
    let g = game(cfg, args)?;
    let entry = section(&cfg.alice, "alice")?;
    let mut a = alice(cfg, entry, "alice", &g, args.seed, 1.0)?;
    let mut b = bob(cfg, &g, args.seed)?;
    let path = output(&args.out, "trace.jsonl")?;
    match play(a.as_mut(), b.as_mut(), &g.arena, &g.schedule, g.rounds) {
        Ok(trace) => {
            save_trace(&path, &trace, g.rounds, None)?;
            Ok((trace, g.rounds, path, None))
        }
        Err(f) => {
            let msg = f.error.to_string();
            save_trace(&path, &f.trace, g.rounds, Some(&msg))?;
            Ok((f.trace, g.rounds, path, Some(msg)))
        }
    }
}

pub fn play_cmd(cfg: &RunConfig, args: &RunArgs) -> Result<Summary, CliError> {
    let (trace, rounds, path, error) = run_game(cfg, args)?;
    if let Some(msg) = error {
        return Ok(Summary::fail(format!("play: FAILED after {} moves: {msg} (trace {})", trace.moves.len(), path.display())));
    }
    let mut line = format!(
        "play: OK rounds={rounds} alice={} bob={}",
        trace.labels.get("alice").map_or("?", |s| s.as_str()),
        trace.labels.get("bob").map_or("?", |s| s.as_str())
    );
    if let Some(c) = annotation_min(&trace, "clearance") {
        line += &format!(" min_clearance={c:.6e}");
    }
    if let Some(c) = annotation_min(&trace, "certified_bound") {
        line += &format!(" min_certified_bound={c:.6e}");
    }
    line += &format!(" trace={}", path.display());
    Ok(Summary::ok(line))
}

fn report_line(prefix: &str, report: &VerifyReport) -> Summary {
    if report.ok() {
        let mut line = format!("{prefix}: OK moves={} certificates={}", report.moves, report.certificates);
        if let Some(d) = report.min_final_distance() {
            line += &format!(" min_final_distance={d:.6e}");
        }
        for f in &report.floors {
            line += &format!(" floor={:.6e}>={:.6e}", f.observed, f.certified);
        }
        Summary::ok(line)
    } else {
        let first = &report.failures[0];
        Summary::fail(format!(
            "{prefix}: FAILED {} finding(s); first: round {} {}: {}",
            report.failures.len(),
            first.round,
            first.check,
            first.detail
        ))
    }
}

pub fn verify_cmd(path: &Path) -> Result<Summary, CliError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let parsed = read_trace(BufReader::new(file)).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let report = verify_trace(&parsed.trace);
    if let Some(msg) = parsed.error {
        return Ok(Summary::fail(format!("verify: FAILED game stopped: {msg}")));
    }
    Ok(report_line("verify", &report))
}

pub fn intersect_demo_cmd(cfg: &RunConfig, args: &RunArgs) -> Result<Summary, CliError> {
    let entry = section(&cfg.alice, "alice")?;
    if entry.strategy != AliceKind::Intersect {
        return Err(config_err("alice.strategy", "intersect-demo needs strategy = \"intersect\""));
    }
    let (trace, _, path, error) = run_game(cfg, args)?;
    if let Some(msg) = error {
        return Ok(Summary::fail(format!("intersect-demo: FAILED {msg} (trace {})", path.display())));
    }
    let report = verify_trace(&trace);
    let mut s = report_line("intersect-demo", &report);
    for a in &report.avoidance {
        // keep only the final checkpoint per component
        if report.avoidance.iter().rev().find(|b| b.component == a.component).map(|b| b.round) == Some(a.round) {
            s.line += &format!(" c{}={:.4e}", a.component.unwrap_or(0), a.final_distance);
        }
    }
    s.line += &format!(" trace={}", path.display());
    Ok(s)
}

pub fn calibrate_cmd(cfg: &RunConfig, args: &RunArgs) -> Result<Summary, CliError> {
    let g = game(cfg, args)?;
    let entry = section(&cfg.alice, "alice")?;
    let (entries, factor): (Vec<(String, &AliceConfig)>, f64) = match entry.strategy {
        AliceKind::Avoid => (vec![("alice".into(), entry)], 1.0),
        AliceKind::Intersect => (
            entry
                .components
                .iter()
                .enumerate()
                .filter(|(_, c)| c.strategy == AliceKind::Avoid)
                .map(|(i, c)| (format!("alice.components[{i}]"), c))
                .collect(),
            entry.components.len() as f64,
        ),
        _ => return Err(config_err("alice.strategy", "calibrate needs an avoid or intersect strategy")),
    };
    if entries.is_empty() {
        return Err(config_err("alice.components", "no avoid components to calibrate"));
    }
    let mut out = Vec::new();
    let mut line = String::from("calibrate: OK");
    for (field, e) in &entries {
        let mut e = (*e).clone();
        // always run the audit, even when delta is configured
        let configured = e.delta.take();
        let (target, cert) = avoid_target(cfg, &e, field, &g, factor * g.schedule.period())?;
        line += &format!(" {field}: delta={} steps={} eta={:.6e}", target.delta, target.steps, target.eta);
        out.push(json!({"field": field, "certificate": cert, "configured_delta": configured, "target": target}));
    }
    let path = output(&args.out, "calibration.json")?;
    write_text(&path, &(serde_json::to_string_pretty(&out).expect("serializes") + "\n"))?;
    line += &format!(" report={}", path.display());
    Ok(Summary::ok(line))
}

pub fn certify_bad_cmd(cfg: &RunConfig, args: &RunArgs) -> Result<Summary, CliError> {
    let sp = section(&cfg.space, "space")?;
    let w = config::weights(&sp.r, &sp.s, "space.r/space.s")?;
    let d = section(&cfg.diophantine, "diophantine")?;
    let y = matrix(d.y.as_ref().ok_or_else(|| config_err("diophantine.y", "missing"))?, "diophantine.y")?;
    let q_max = d.q_max.unwrap_or(10_000);
    let report = bad_margin(&y, &w, q_max).map_err(|e| config_err("diophantine", e))?;
    let path = output(&args.out, "bad_report.json")?;
    write_text(&path, &(serde_json::to_string_pretty(&report).expect("serializes") + "\n"))?;
    let line = format!(
        "certify-bad: {} margin={:.12e} q_max={q_max} witness_q={:?} witness_p={:?} report={}",
        if report.margin > 0.0 { "CERTIFIED" } else { "NOT CERTIFIED" },
        report.margin,
        report.witness_q,
        report.witness_p,
        path.display()
    );
    Ok(if report.margin > 0.0 { Summary::ok(line) } else { Summary::fail(line) })
}

fn join(v: impl IntoIterator<Item = String>) -> String {
    v.into_iter().collect::<Vec<_>>().join(";")
}

pub fn dani_audit_cmd(cfg: &RunConfig, args: &RunArgs) -> Result<Summary, CliError> {
    let sp = section(&cfg.space, "space")?;
    let w = config::weights(&sp.r, &sp.s, "space.r/space.s")?;
    let d = cfg.diophantine.clone().unwrap_or_default();
    let (m, n) = (w.m(), w.n());
    let count = d.count.unwrap_or(100);
    let q_max = d.q_max.unwrap_or(10f64.powf(4.0 / n as f64).floor() as u64);
    let t_step = positive(d.t_step.unwrap_or(0.05), "diophantine.t_step")?;
    let (lo, hi) = (d.band_lo.unwrap_or(1e-3), d.band_hi.unwrap_or(1e-1));
    if !(lo > 0.0 && lo < hi) {
        return Err(config_err("diophantine.band_lo", format!("need 0 < band_lo < band_hi, got ({lo}, {hi})")));
    }
    let t_max = positive(d.t_max.unwrap_or_else(|| audit_horizon(&w, q_max, hi)), "diophantine.t_max")?;
    let bands = Bands::symmetric(lo, hi);
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed.or(d.seed).unwrap_or(0));
    let path = output(&args.out, "dani_audit.csv")?;
    let mut csv = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
    csv.write_record(["index", "y", "margin", "floor", "floor_time", "verdict", "witness_p", "witness_q"])
        .map_err(|e| io_err(&path, e))?;
    let mut bad = 0;
    for i in 0..count {
        let y = DMatrix::from_fn(m, n, |_, _| rng.random_range(0.0..1.0));
        let row = dani_audit(&y, &w, q_max, t_max, t_step, &bands).map_err(|e| config_err("diophantine", e))?;
        if row.verdict == Verdict::Inconsistent {
            bad += 1;
        }
        let verdict = serde_json::to_value(row.verdict).expect("verdict serializes");
        csv.write_record([
            i.to_string(),
            join(row.y.iter().flatten().map(|v| v.to_string())),
            row.margin.to_string(),
            row.floor.to_string(),
            row.floor_time.to_string(),
            verdict.as_str().unwrap_or("").to_string(),
            join(row.witness_p.iter().map(|v| v.to_string())),
            join(row.witness_q.iter().map(|v| v.to_string())),
        ])
        .map_err(|e| io_err(&path, e))?;
    }
    csv.flush().map_err(|e| io_err(&path, e))?;
    let line = format!(
        "dani-audit: {} samples={count} inconsistent={bad} q_max={q_max} t_max={t_max:.4} report={}",
        if bad == 0 { "OK" } else { "FAILED" },
        path.display()
    );
    Ok(if bad == 0 { Summary::ok(line) } else { Summary::fail(line) })
}

pub fn expanding_check_cmd(cfg: &RunConfig, args: &RunArgs) -> Result<Summary, CliError> {
    let e = section(&cfg.expanding, "expanding")?;
    if e.weights.is_empty() {
        return Err(config_err("expanding.weights", "needs at least one entry"));
    }
    let proj = if e.control { Projection::NonExpanding } else { Projection::Expanding };
    let path = output(&args.out, "expanding.csv")?;
    let mut csv = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
    csv.write_record(["r", "s", "d", "projection", "verdict", "kernel_dim", "smallest_singular"])
        .map_err(|e| io_err(&path, e))?;
    let (mut rows, mut unexpected) = (0, 0);
    for (i, entry) in e.weights.iter().enumerate() {
        let w = config::weights(&entry.r, &entry.s, &format!("expanding.weights[{i}]"))?;
        let k = w.k();
        let degrees = e.degrees.clone().unwrap_or_else(|| (1..k).collect());
        for d in degrees {
            if d == 0 || d >= k {
                return Err(config_err("expanding.degrees", format!("degree {d} outside 1..{}", k - 1)));
            }
            let v = expanding_check_with(&w, d, proj);
            rows += 1;
            if v.expanding == e.control {
                unexpected += 1;
            }
            csv.write_record([
                join(w.r.iter().map(|x| x.to_string())),
                join(w.s.iter().map(|x| x.to_string())),
                d.to_string(),
                if e.control { "non_expanding" } else { "expanding" }.to_string(),
                v.expanding.to_string(),
                v.kernel_dim.to_string(),
                v.smallest_singular.to_string(),
            ])
            .map_err(|e| io_err(&path, e))?;
        }
    }
    csv.flush().map_err(|e| io_err(&path, e))?;
    let line = format!(
        "expanding-check: {} rows={rows} unexpected={unexpected} control={} report={}",
        if unexpected == 0 { "OK" } else { "FAILED" },
        e.control,
        path.display()
    );
    Ok(if unexpected == 0 { Summary::ok(line) } else { Summary::fail(line) })
}
