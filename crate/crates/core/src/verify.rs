//! Offline re-validation of a recorded game.
//!
//! Every move is replayed through the referee. Strategy certificates are
//! then re-derived from the recorded domains alone, with fresh orbit
//! trackers and exact integer wedge coordinates, and checked on the final
//! point of the game rather than on the per-round centers.

use rug::{Float, Integer};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::contraction::Domain;
use crate::game::{intersection_point, point_in_all, validate_move, GameTrace, Move, Player};
use crate::homogeneous::{orbit_precision, phi_projected, wedge_hp, LatticeBasis, OrbitTracker, Projection, WeightVector};
use crate::hp::Real;
use crate::strategies::{child_region, child_samples, expanding_lower_bound, AvoidanceTarget, BoundedStrategyState};

/// Relative agreement required between recorded and re-derived numbers.
pub const REDERIVE_TOL: f64 = 1e-8;
const FLOOR_STEP: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub round: usize,
    pub check: String,
    pub detail: String,
}

/// One avoidance checkpoint, recomputed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvoidanceCheck {
    pub component: Option<usize>,
    pub round: usize,
    pub checkpoint: f64,
    pub eta: f64,
    /// Candidate clearance minus the pushed diameter of the child.
    pub clearance: f64,
    /// Distance from the orbit of the final point to the segment.
    pub final_distance: f64,
}

/// Systole floor of the final point against its certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorCheck {
    pub component: Option<usize>,
    pub certified: f64,
    pub observed: f64,
    pub t_end: f64,
    pub dangerous_max: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub moves: usize,
    pub certificates: usize,
    pub failures: Vec<Finding>,
    pub avoidance: Vec<AvoidanceCheck>,
    pub floors: Vec<FloorCheck>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }

    fn fail(&mut self, round: usize, check: &str, detail: String) {
        self.failures.push(Finding { round, check: check.into(), detail });
    }

    /// Smallest recomputed distance from the final orbit to any avoided segment.
    pub fn min_final_distance(&self) -> Option<f64> {
        self.avoidance.iter().map(|a| a.final_distance).reduce(f64::min)
    }
}

fn close(found: f64, recorded: f64, scale: f64) -> bool {
    (found - recorded).abs() <= REDERIVE_TOL * recorded.abs().max(scale)
}

/// An Alice move together with the domain it was played into.
struct Owned<'a> {
    round: usize,
    /// Move count of the owning component, 1-based.
    sub: usize,
    parent: &'a Domain,
    mv: &'a Move,
}

pub fn verify_trace(trace: &GameTrace) -> VerifyReport {
    let mut report = VerifyReport::default();
    let mut replay = GameTrace::new(&trace.space, trace.schedule);
    for mv in &trace.moves {
        if let Err(v) = validate_move(&replay, mv) {
            report.fail(mv.round, "legality", format!("{} move: {v}", mv.player));
            return report;
        }
        replay.moves.push(mv.clone());
        report.moves += 1;
    }
    let Ok((point, _)) = intersection_point(trace) else {
        report.fail(0, "legality", "trace has no moves".into());
        return report;
    };
    if !point_in_all(trace, &point, 1e-10) {
        report.fail(trace.rounds(), "intersection", "final center lies outside a recorded domain".into());
    }
    let alice: Vec<(usize, &Domain, &Move)> = trace
        .moves
        .iter()
        .enumerate()
        .filter(|(_, m)| m.player == Player::Alice)
        .map(|(i, m)| (m.round, &trace.moves[i - 1].domain, m))
        .collect();
    let Some(ctx) = trace.context.get("alice") else {
        return report;
    };
    match kind(ctx) {
        Some("intersect") => {
            let parts = ctx.get("components").and_then(Value::as_array).cloned().unwrap_or_default();
            for (i, part) in parts.iter().enumerate() {
                let owned: Vec<Owned<'_>> = alice
                    .iter()
                    .filter(|(_, _, m)| m.annotations.get("component").and_then(Value::as_u64) == Some(i as u64))
                    .enumerate()
                    .map(|(j, &(round, parent, mv))| Owned { round, sub: j + 1, parent, mv })
                    .collect();
                verify_component(&mut report, part, Some(i), &owned, &point);
            }
        }
        _ => {
            let owned: Vec<Owned<'_>> = alice
                .iter()
                .map(|&(round, parent, mv)| Owned { round, sub: round, parent, mv })
                .collect();
            verify_component(&mut report, ctx, None, &owned, &point);
        }
    }
    report
}

fn kind(ctx: &Value) -> Option<&str> {
    ctx.get("kind").and_then(Value::as_str)
}

fn verify_component(report: &mut VerifyReport, ctx: &Value, component: Option<usize>, owned: &[Owned<'_>], point: &[Real]) {
    let parsed = (|| -> Result<(WeightVector, LatticeBasis), String> {
        let w = serde_json::from_value(ctx.get("weights").cloned().ok_or("missing weights")?).map_err(|e| e.to_string())?;
        let g = serde_json::from_value(ctx.get("basepoint").cloned().ok_or("missing basepoint")?)
            .map_err(|e| e.to_string())?;
        Ok((w, g))
    })();
    let round0 = owned.first().map_or(0, |o| o.round);
    match kind(ctx) {
        Some("avoid") | Some("bounded") => {}
        _ => return,
    }
    let (w, g) = match parsed {
        Ok(x) => x,
        Err(e) => return report.fail(round0, "context", e),
    };
    match kind(ctx) {
        Some("avoid") => match serde_json::from_value::<AvoidanceTarget>(ctx["target"].clone()) {
            Ok(target) => verify_avoid(report, &target, &w, &g, component, owned, point),
            Err(e) => report.fail(round0, "context", format!("avoidance target: {e}")),
        },
        _ => match serde_json::from_value::<Option<BoundedStrategyState>>(ctx["state"].clone()) {
            Ok(Some(state)) => verify_bounded(report, &state, component, owned, point),
            Ok(None) if owned.is_empty() => {}
            Ok(None) => report.fail(round0, "context", "bounded strategy moved without recorded constants".into()),
            Err(e) => report.fail(round0, "context", format!("bounded state: {e}")),
        },
    }
}

fn verify_avoid(
    report: &mut VerifyReport,
    target: &AvoidanceTarget,
    w: &WeightVector,
    g: &LatticeBasis,
    component: Option<usize>,
    owned: &[Owned<'_>],
    point: &[Real],
) {
    let Some(last) = owned.last() else { return };
    let space = &last.mv.domain.space;
    let segment = target.segment();
    let pushed = target.pushed_diameter(space);
    let prec = orbit_precision(w, last.parent.t);
    let mut sample_tracker: Option<OrbitTracker> = None;
    let mut final_tracker = OrbitTracker::new(w, g, point, prec);
    for o in owned {
        let ann = &o.mv.annotations;
        let phase = ann.get("phase").and_then(Value::as_str);
        let s = target.checkpoint(o.parent.t);
        if o.sub <= target.steps || s < 0.0 {
            if phase != Some("dummy") {
                report.fail(o.round, "avoid.phase", format!("expected a dummy move, found {phase:?}"));
            }
            continue;
        }
        report.certificates += 1;
        if phase != Some("avoid") {
            report.fail(o.round, "avoid.phase", format!("post-warmup move has phase {phase:?}"));
            continue;
        }
        let recorded = |key: &str| ann.get(key).and_then(Value::as_f64);
        if recorded("checkpoint").is_none_or(|c| !close(c, s, 1.0)) {
            report.fail(o.round, "avoid.checkpoint", format!("recorded {:?}, expected {s}", recorded("checkpoint")));
        }
        if recorded("eta").is_none_or(|e| !close(e, target.eta, 0.0)) {
            report.fail(o.round, "avoid.eta", format!("recorded {:?}, target has {:e}", recorded("eta"), target.eta));
        }
        let step = o.mv.domain.t - o.parent.t;
        let z = o.mv.domain.offset_in(o.parent);
        let mut raw = f64::INFINITY;
        let mut lower = f64::INFINITY;
        for f in child_samples(space, step, &z) {
            let p = o.parent.point_at(&f);
            let tr = match sample_tracker.as_mut() {
                Some(tr) => {
                    tr.rebase(g, &p);
                    tr
                }
                None => sample_tracker.insert(OrbitTracker::new(w, g, &p, prec)),
            };
            tr.advance_to(s);
            let lat = tr.lattice();
            let b = segment.bracket_above(&lat, target.eta + pushed);
            (lower, raw) = (lower.min(b.lower), raw.min(b.value));
        }
        match recorded("raw_clearance") {
            Some(r) if close(raw, r, 1.0) => {}
            r => report.fail(o.round, "avoid.raw_clearance", format!("recorded {r:?}, re-derived {raw:e}")),
        }
        let clearance = raw - pushed;
        if !(lower - pushed > target.eta) {
            report.fail(o.round, "avoid.clearance", format!("{clearance:e} does not exceed eta {:e}", target.eta));
        }
        final_tracker.advance_to(s);
        let final_lattice = final_tracker.lattice();
        let final_bracket = segment.bracket_above(&final_lattice, target.eta);
        let final_distance = final_bracket.value;
        if !(final_bracket.lower > target.eta) {
            report.fail(
                o.round,
                "avoid.soundness",
                format!("final orbit at t = {s} is {final_distance:e} from the segment, eta {:e}", target.eta),
            );
        }
        report.avoidance.push(AvoidanceCheck {
            component,
            round: o.round,
            checkpoint: s,
            eta: target.eta,
            clearance,
            final_distance,
        });
    }
}

fn parse_coords(v: &Value) -> Option<Vec<Integer>> {
    v.as_array()?.iter().map(|x| x.as_number().and_then(|n| Integer::from_str_radix(&n.to_string(), 10).ok())).collect()
}

/// `wedge^d(orbit) coords`, rounded to f64 after exact accumulation.
fn wedge_vector(orbit: &[Vec<Real>], d: usize, coords: &[Integer], prec: u32) -> Vec<f64> {
    wedge_hp(orbit, d)
        .iter()
        .map(|row| {
            let mut acc = Float::new(prec);
            for (x, c) in row.iter().zip(coords) {
                if *c != 0 {
                    acc += Float::with_val(prec, x * c);
                }
            }
            acc.to_f64()
        })
        .collect()
}

fn verify_bounded(
    report: &mut VerifyReport,
    st: &BoundedStrategyState,
    component: Option<usize>,
    owned: &[Owned<'_>],
    point: &[Real],
) {
    let Some(last) = owned.last() else { return };
    let round0 = owned[0].round;
    let space = &last.mv.domain.space;
    let w = &st.weights;
    let reps = st.reps();

    let kmax = st.kappa.iter().cloned().fold(0.0, f64::max);
    let imax = st.inverse_norm.iter().cloned().fold(0.0, f64::max);
    let eps1 = st.eps0 / kmax;
    let eps2 = eps1 / imax;
    let eps3 = (st.eta_poly * eps2).min(st.eps0);
    let floor = eps3.min(st.eps0 * (-st.contraction[0] * st.period).exp()).min(st.initial_floor);
    for (name, found, recorded) in
        [("eps1", eps1, st.eps1), ("eps2", eps2, st.eps2), ("eps3", eps3, st.eps3), ("floor", floor, st.floor)]
    {
        if !close(found, recorded, 0.0) {
            report.fail(round0, "bounded.cascade", format!("{name}: recorded {recorded:e}, re-derived {found:e}"));
        }
    }

    let dmax = st.degrees.iter().cloned().max().unwrap_or(1);
    let mut dangerous_max = 0;
    for o in owned {
        let ann = &o.mv.annotations;
        report.certificates += 1;
        if ann.get("eps3").and_then(Value::as_f64).is_none_or(|e| !close(e, st.eps3, 0.0)) {
            report.fail(o.round, "bounded.eps3", format!("recorded {:?}", ann.get("eps3")));
        }
        let Some(list) = ann.get("dangerous").and_then(Value::as_array) else {
            report.fail(o.round, "bounded.dangerous", "missing dangerous list".into());
            continue;
        };
        dangerous_max = dangerous_max.max(list.len());
        if list.len() > st.danger_bound {
            report.fail(o.round, "bounded.count", format!("{} dangerous vectors, bound {}", list.len(), st.danger_bound));
        }
        let recorded_bound = ann.get("certified_bound").and_then(Value::as_f64);
        if list.is_empty() {
            if recorded_bound.is_some() {
                report.fail(o.round, "bounded.certified_bound", "bound recorded without dangerous vectors".into());
            }
            continue;
        }
        let t = o.parent.t;
        let prec = orbit_precision(w, dmax as f64 * t) + 64;
        let at_center = OrbitTracker::new(w, &st.basepoint, &o.parent.center(), prec).orbit_matrix(t);
        let at_point = OrbitTracker::new(w, &st.basepoint, point, prec).orbit_matrix(t);
        let step = o.mv.domain.t - t;
        let z = o.mv.domain.offset_in(o.parent);
        let (center, rho) = child_region(space, step, &z);
        let mut bound = f64::INFINITY;
        for item in list {
            let degree = item.get("degree").and_then(Value::as_u64).unwrap_or(0) as usize;
            let Some(ri) = st.degrees.iter().position(|&d| d == degree) else {
                report.fail(o.round, "bounded.dangerous", format!("unknown degree {degree}"));
                continue;
            };
            let rep = &reps[ri];
            let coords = match item.get("coords").and_then(parse_coords) {
                Some(c) if c.len() == rep.dim() => c,
                _ => {
                    report.fail(o.round, "bounded.dangerous", "malformed coordinates".into());
                    continue;
                }
            };
            let v = wedge_vector(&at_center, degree, &coords, prec);
            let norm = v.iter().map(|x| x.abs()).fold(0.0, f64::max);
            match item.get("norm").and_then(Value::as_f64) {
                Some(r) if close(norm, r, 0.0) => {}
                r => report.fail(o.round, "bounded.norm", format!("recorded {r:?}, re-derived {norm:e}")),
            }
            let phi = phi_projected(&v, rep, Projection::Full).components;
            let b = expanding_lower_bound(&phi, rep, &center, &rho);
            bound = bound.min(b);
            // (ii) on the final point: the expanding part stays above the bound
            let at_end = wedge_vector(&at_point, degree, &coords, prec);
            let expanding = rep.expanding.iter().map(|&i| at_end[i].abs()).fold(0.0, f64::max);
            if !(expanding >= b.max(st.eps3) * (1.0 - REDERIVE_TOL)) {
                report.fail(
                    o.round,
                    "bounded.expanding",
                    format!("expanding part {expanding:e} below certified {b:e} (eps3 {:e})", st.eps3),
                );
            }
        }
        match recorded_bound {
            Some(r) if close(bound, r, st.eps3) => {}
            r => report.fail(o.round, "bounded.certified_bound", format!("recorded {r:?}, re-derived {bound:e}")),
        }
        if !(bound >= st.eps3) {
            report.fail(o.round, "bounded.certified_bound", format!("{bound:e} below eps3 {:e}", st.eps3));
        }
    }

    let t_end = last.parent.t;
    let observed = systole_floor(w, &st.basepoint, point, t_end);
    if !(observed >= st.floor) {
        report.fail(last.round, "bounded.floor", format!("systole {observed:e} below certified floor {:e}", st.floor));
    }
    report.floors.push(FloorCheck { component, certified: st.floor, observed, t_end, dangerous_max });
}

/// Minimum systole of `g_t u_h g Z^k` over `t` in `[0, t_end]` on a grid of step 0.05.
pub fn systole_floor(w: &WeightVector, g: &LatticeBasis, h: &[Real], t_end: f64) -> f64 {
    let mut tr = OrbitTracker::new(w, g, h, orbit_precision(w, t_end));
    let steps = (t_end / FLOOR_STEP).floor() as usize;
    let mut best = f64::INFINITY;
    for i in 0..=steps {
        tr.advance_to(i as f64 * FLOOR_STEP);
        best = best.min(tr.systole());
    }
    tr.advance_to(t_end);
    best.min(tr.systole())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contraction::{AdmissibleBase, ContractionSemigroup, GameSpace};
    use crate::game::{play, Schedule};
    use crate::homogeneous::flow_generator;
    use crate::hp;
    use crate::strategies::{alice_avoid, alice_stay_bounded, bob_cusp_seeking, bob_random, BoundedConfig};

    fn sl2(rounds: usize, sched: &Schedule) -> std::sync::Arc<GameSpace> {
        let w = WeightVector::equal(1, 1);
        let base = AdmissibleBase::unit(1);
        GameSpace::with_horizon(ContractionSemigroup::for_weights(&w, &base).unwrap(), base, sched.t_prime(rounds))
    }

    #[test]
    fn avoidance_trace_verifies_and_mutation_fails() {
        let w = WeightVector::equal(1, 1);
        let g = LatticeBasis::from_rows(&[vec![1.0, 0.3], vec![0.0, 1.0]]).unwrap();
        let sched = Schedule::new(2.0, 2.0, 2.0, 0.0).unwrap();
        let sp = sl2(12, &sched);
        let z = LatticeBasis::identity(2);
        let target = AvoidanceTarget::new(&z, &flow_generator(&w), sched.period(), &sp, sched.a, 0.01).unwrap();
        let mut alice = alice_avoid(target, &w, &g);
        let trace = play(&mut alice, &mut bob_random(3), &sp, &sched, 12).unwrap();
        let report = verify_trace(&trace);
        assert!(report.ok(), "{:?}", report.failures);
        assert!(!report.avoidance.is_empty());

        let mut bad = trace.clone();
        let i = bad.moves.len() - 1;
        let moved: Vec<Real> = bad.moves[i].domain.translation.iter().map(|x| Float::with_val(x.prec(), x + 1)).collect();
        bad.moves[i].domain = Domain::new(&sp, bad.moves[i].domain.t, moved);
        assert!(!verify_trace(&bad).ok());

        let mut bad = trace.clone();
        let j = bad.moves.iter().rposition(|m| m.annotations.contains_key("raw_clearance")).unwrap();
        bad.moves[j].annotations.insert("raw_clearance".into(), serde_json::json!(12.5));
        let r = verify_trace(&bad);
        assert!(r.failures.iter().any(|f| f.check == "avoid.raw_clearance"));
    }

    #[test]
    fn bounded_trace_verifies() {
        let w = WeightVector::equal(1, 1);
        let g = LatticeBasis::identity(2);
        let sched = Schedule::new(1.0, 1.0, 1.0, 0.0).unwrap();
        let sp = sl2(12, &sched);
        let mut alice = alice_stay_bounded(&w, &g, BoundedConfig::default());
        let trace = play(&mut alice, &mut bob_cusp_seeking(&w, &g, 1), &sp, &sched, 12).unwrap();
        let report = verify_trace(&trace);
        assert!(report.ok(), "{:?}", report.failures);
        assert_eq!(report.floors.len(), 1);
        assert!(report.floors[0].observed >= report.floors[0].certified);
    }

    #[test]
    fn floor_of_identity_coset() {
        let w = WeightVector::equal(1, 1);
        let h = hp::from_f64s(200, &[0.0]);
        let f = systole_floor(&w, &LatticeBasis::identity(2), &h, 3.0);
        assert!((f - (-3f64).exp()).abs() < 1e-12);
    }
}
