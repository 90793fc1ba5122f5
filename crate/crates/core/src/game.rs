//! Referee and runner for the modified Schmidt game.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::contraction::{diameter_bound, fits_inside, Domain, GameSpace, OffsetBox, CONTAINMENT_TOL};
use crate::hp::Real;

/// Free-form per-move certificate data (sorted keys, so output is stable).
pub type Annotations = Map<String, Value>;

const SCALE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Player {
    Alice,
    Bob,
}

impl fmt::Display for Player {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Player::Alice => "Alice",
            Player::Bob => "Bob",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("schedule.t1 must be positive, got {0}")]
    NonPositiveStart(f64),
    #[error("schedule.a = {a} must exceed a_star = {a_star}")]
    AliceStep { a: f64, a_star: f64 },
    #[error("schedule.b = {b} must exceed a_star = {a_star}")]
    BobStep { b: f64, a_star: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub t1: f64,
    pub a: f64,
    pub b: f64,
    pub a_star: f64,
}

impl Schedule {
    pub fn new(t1: f64, a: f64, b: f64, a_star: f64) -> Result<Self, ScheduleError> {
        if !(t1 > 0.0) {
            return Err(ScheduleError::NonPositiveStart(t1));
        }
        if !(a > a_star) {
            return Err(ScheduleError::AliceStep { a, a_star });
        }
        if !(b > a_star) {
            return Err(ScheduleError::BobStep { b, a_star });
        }
        Ok(Schedule { t1, a, b, a_star })
    }

    /// Bob's scale in round `k` (1-based).
    pub fn t(&self, k: usize) -> f64 {
        self.t1 + (k as f64 - 1.0) * (self.a + self.b)
    }

    /// Alice's scale in round `k`.
    pub fn t_prime(&self, k: usize) -> f64 {
        self.t(k) + self.a
    }

    pub fn scale_for(&self, player: Player, round: usize) -> f64 {
        match player {
            Player::Bob => self.t(round),
            Player::Alice => self.t_prime(round),
        }
    }

    pub fn period(&self) -> f64 {
        self.a + self.b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Move {
    pub player: Player,
    pub round: usize,
    pub domain: Domain,
    pub annotations: Annotations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameTrace {
    pub schedule: Schedule,
    pub space: Arc<GameSpace>,
    pub moves: Vec<Move>,
    pub seeds: BTreeMap<String, u64>,
    pub labels: BTreeMap<String, String>,
    /// Strategy data needed to re-derive certificates offline.
    pub context: Map<String, Value>,
}

impl GameTrace {
    pub fn new(space: &Arc<GameSpace>, schedule: Schedule) -> Self {
        GameTrace {
            schedule,
            space: Arc::clone(space),
            moves: Vec::new(),
            seeds: BTreeMap::new(),
            labels: BTreeMap::new(),
            context: Map::new(),
        }
    }

    /// Who moves next, in which round.
    pub fn next_turn(&self) -> (Player, usize) {
        let n = self.moves.len();
        if n % 2 == 0 {
            (Player::Bob, n / 2 + 1)
        } else {
            (Player::Alice, n / 2 + 1)
        }
    }

    /// The domain the next move must fit inside.
    pub fn current_domain(&self) -> Domain {
        self.moves.last().map_or_else(|| self.space.root(), |m| m.domain.clone())
    }

    pub fn rounds(&self) -> usize {
        self.moves.len().div_ceil(2)
    }

    pub fn alice_moves(&self) -> impl Iterator<Item = &Move> {
        self.moves.iter().filter(|m| m.player == Player::Alice)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Violation {
    #[error("expected {expected} to move")]
    WrongPlayer { expected: Player },
    #[error("expected round {expected}, found {found}")]
    WrongRound { expected: usize, found: usize },
    #[error("scale {found} differs from required {expected}")]
    WrongScale { expected: f64, found: f64 },
    #[error("domain is not contained in the previous domain")]
    NotContained,
    #[error("domain belongs to a different space")]
    MismatchedContext,
}

/// Checks turn order, scale, and containment of `candidate` against `trace`.
pub fn validate_move(trace: &GameTrace, candidate: &Move) -> Result<(), Violation> {
    let (player, round) = trace.next_turn();
    if candidate.player != player {
        return Err(Violation::WrongPlayer { expected: player });
    }
    if candidate.round != round {
        return Err(Violation::WrongRound { expected: round, found: candidate.round });
    }
    let expected = trace.schedule.scale_for(player, round);
    let found = candidate.domain.t;
    if (expected - found).abs() > SCALE_TOL * expected.abs().max(1.0) {
        return Err(Violation::WrongScale { expected, found });
    }
    match fits_inside(&candidate.domain, &trace.current_domain()) {
        Ok(true) => Ok(()),
        Ok(false) => Err(Violation::NotContained),
        Err(_) => Err(Violation::MismatchedContext),
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StrategyError {
    #[error("round {round}: calibration failure: {detail}")]
    CalibrationFailure { round: usize, detail: String },
    #[error("round {round}: {found} dangerous subspaces exceed the bound {bound}")]
    TooManyDangerous { round: usize, found: usize, bound: usize },
    #[error("round {round}: best certified bound {best:.6e} is below the required {required:.6e}")]
    NoSafeBall { round: usize, best: f64, required: f64 },
    #[error("round {round}: no legal move at scale {scale}")]
    NoLegalMove { round: usize, scale: f64 },
    #[error("no transversality scale passes the audit (last diameter {max_diameter:.6e})")]
    NoScaleFound { max_diameter: f64 },
    #[error("setup: {0}")]
    Setup(String),
    #[error("component {index}: {source}")]
    Component { index: usize, source: Box<StrategyError> },
}

impl StrategyError {
    /// Round number carried by the error, if any.
    pub fn round(&self) -> Option<usize> {
        match self {
            StrategyError::CalibrationFailure { round, .. }
            | StrategyError::TooManyDangerous { round, .. }
            | StrategyError::NoSafeBall { round, .. }
            | StrategyError::NoLegalMove { round, .. } => Some(*round),
            StrategyError::Component { source, .. } => source.round(),
            _ => None,
        }
    }
}

/// Everything a strategy sees when asked to move.
pub struct MoveContext<'a> {
    pub space: &'a Arc<GameSpace>,
    pub schedule: &'a Schedule,
    pub player: Player,
    /// 1-based round in the (sub-)game the strategy is playing.
    pub round: usize,
    /// Scale the proposed domain must have.
    pub scale: f64,
    /// Domain the proposal must fit inside.
    pub parent: &'a Domain,
    pub history: &'a [Move],
}

impl MoveContext<'_> {
    pub fn legal_box(&self) -> Result<OffsetBox, StrategyError> {
        self.parent.legal_box(self.scale).ok_or(StrategyError::NoLegalMove { round: self.round, scale: self.scale })
    }

    /// Child of the parent at renormalized offset `z`.
    pub fn place(&self, z: &[f64]) -> Domain {
        self.parent.child(self.scale, z)
    }
}

#[derive(Debug, Clone)]
pub struct Proposal {
    pub domain: Domain,
    pub annotations: Annotations,
}

impl Proposal {
    pub fn plain(domain: Domain) -> Self {
        Proposal { domain, annotations: Annotations::new() }
    }
}

pub trait Strategy {
    fn label(&self) -> String;

    fn propose(&mut self, ctx: &MoveContext<'_>) -> Result<Proposal, StrategyError>;

    fn seed(&self) -> Option<u64> {
        None
    }

    /// Bob may override the schedule's opening scale.
    fn opening_scale(&self) -> Option<f64> {
        None
    }

    /// Data a verifier needs to re-derive this strategy's certificates.
    fn context(&self) -> Option<Value> {
        None
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("invalid move by {player} in round {round}: {violation}")]
    InvalidMove { player: Player, round: usize, violation: Violation },
    #[error("{player} strategy failed in round {round}: {source}")]
    Strategy { player: Player, round: usize, source: StrategyError },
    #[error("trace is empty")]
    EmptyTrace,
    #[error("rounds must be at least 1")]
    NoRounds,
    #[error("space precision resolves scales up to {available:.1}, game needs {required:.1}")]
    InsufficientPrecision { required: f64, available: f64 },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// A failed game with everything played up to the failure.
#[derive(Debug, Error)]
#[error("{error}")]
pub struct GameFailure {
    pub trace: GameTrace,
    pub error: GameError,
}

/// Runs `rounds` rounds, Bob first, validating every move.
pub fn play(
    alice: &mut dyn Strategy,
    bob: &mut dyn Strategy,
    space: &Arc<GameSpace>,
    schedule: &Schedule,
    rounds: usize,
) -> Result<GameTrace, Box<GameFailure>> {
    let mut schedule = *schedule;
    let mut trace = GameTrace::new(space, schedule);
    let fail = |trace: GameTrace, error: GameError| Box::new(GameFailure { trace, error });
    if let Some(t1) = bob.opening_scale() {
        match Schedule::new(t1, schedule.a, schedule.b, schedule.a_star) {
            Ok(s) => schedule = s,
            Err(e) => return Err(fail(trace, e.into())),
        }
        trace.schedule = schedule;
    }
    if rounds == 0 {
        return Err(fail(trace, GameError::NoRounds));
    }
    let required = schedule.t_prime(rounds);
    if space.horizon() < required {
        return Err(fail(trace, GameError::InsufficientPrecision { required, available: space.horizon() }));
    }
    for (who, s) in [("alice", alice.seed()), ("bob", bob.seed())] {
        if let Some(s) = s {
            trace.seeds.insert(who.into(), s);
        }
    }
    trace.labels.insert("alice".into(), alice.label());
    trace.labels.insert("bob".into(), bob.label());
    let outcome = run_rounds(alice, bob, space, &schedule, rounds, &mut trace);
    // strategies may fix their constants while playing, so record them last
    for (who, strat) in [("alice", &*alice), ("bob", &*bob)] {
        if let Some(c) = strat.context() {
            trace.context.insert(who.into(), c);
        }
    }
    match outcome {
        Ok(()) => Ok(trace),
        Err(error) => Err(fail(trace, error)),
    }
}

fn run_rounds(
    alice: &mut dyn Strategy,
    bob: &mut dyn Strategy,
    space: &Arc<GameSpace>,
    schedule: &Schedule,
    rounds: usize,
    trace: &mut GameTrace,
) -> Result<(), GameError> {
    for _ in 0..2 * rounds {
        let (player, round) = trace.next_turn();
        let parent = trace.current_domain();
        let scale = schedule.scale_for(player, round);
        let ctx = MoveContext { space, schedule, player, round, scale, parent: &parent, history: &trace.moves };
        let strat: &mut dyn Strategy = match player {
            Player::Alice => &mut *alice,
            Player::Bob => &mut *bob,
        };
        let proposal = strat.propose(&ctx).map_err(|source| GameError::Strategy { player, round, source })?;
        let mv = Move { player, round, domain: proposal.domain, annotations: proposal.annotations };
        validate_move(trace, &mv).map_err(|violation| GameError::InvalidMove { player, round, violation })?;
        trace.moves.push(mv);
    }
    Ok(())
}

/// Center of the last domain and the radius guaranteed by the diameter bound.
pub fn intersection_point(trace: &GameTrace) -> Result<(Vec<Real>, f64), GameError> {
    let last = trace.moves.last().ok_or(GameError::EmptyTrace)?;
    Ok((last.domain.center(), diameter_bound(&trace.space.semigroup, last.domain.t)))
}

/// Re-checks that `point` lies in every recorded domain.
pub fn point_in_all(trace: &GameTrace, point: &[Real], tol: f64) -> bool {
    trace.moves.iter().all(|m| m.domain.contains_point(point, tol.max(CONTAINMENT_TOL)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contraction::{AdmissibleBase, ContractionSemigroup};
    use crate::hp;
    use crate::strategies::{bob_random, dummy, LowerCorner, RandomMover};
    use proptest::prelude::*;
    use super::Strategy;

    fn space(rates: Vec<f64>, rounds: usize, sched: &Schedule) -> Arc<GameSpace> {
        let base = AdmissibleBase::unit(rates.len());
        let sg = ContractionSemigroup::diagonal(rates, &base).unwrap();
        GameSpace::with_horizon(sg, base, sched.t_prime(rounds))
    }

    struct Outside;
    impl Strategy for Outside {
        fn label(&self) -> String {
            "outside".into()
        }
        fn propose(&mut self, ctx: &MoveContext<'_>) -> Result<Proposal, StrategyError> {
            let mut z = ctx.legal_box()?.upper;
            z[0] += 0.5;
            Ok(Proposal::plain(ctx.place(&z)))
        }
    }

    #[test]
    fn schedule_arithmetic() {
        let s = Schedule::new(1.0, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(s.t(5), 9.0);
        assert_eq!(s.t_prime(5), 10.0);
        assert!(matches!(Schedule::new(1.0, 0.0, 1.0, 0.0), Err(ScheduleError::AliceStep { .. })));
        assert!(Schedule::new(1.0, 1.0, 0.2, 0.3).unwrap_err().to_string().contains("schedule.b"));
    }

    #[test]
    fn dummy_game_reaches_final_scale() {
        let sched = Schedule::new(1.0, 1.0, 1.0, 0.0).unwrap();
        let sp = space(vec![1.0, 1.0], 5, &sched);
        let trace = play(&mut dummy(), &mut LowerCorner, &sp, &sched, 5).unwrap();
        assert_eq!(trace.moves.len(), 10);
        assert_eq!(trace.moves.last().unwrap().domain.t, 10.0);
        assert_eq!(trace.moves[0].player, Player::Bob);
    }

    #[test]
    fn illegal_alice_move_is_rejected_with_partial_trace() {
        let sched = Schedule::new(1.0, 1.0, 1.0, 0.0).unwrap();
        let sp = space(vec![1.0, 1.0], 3, &sched);
        let err = play(&mut Outside, &mut LowerCorner, &sp, &sched, 3).unwrap_err();
        assert_eq!(
            err.error,
            GameError::InvalidMove { player: Player::Alice, round: 1, violation: Violation::NotContained }
        );
        assert_eq!(err.trace.moves.len(), 1);
    }

    #[test]
    fn validate_move_examples() {
        let sched = Schedule::new(1.0, 1.0, 1.0, 0.0).unwrap();
        let sp = space(vec![1.0, 1.0], 3, &sched);
        let mut trace = GameTrace::new(&sp, sched);
        let root = sp.root();
        let open = Move { player: Player::Bob, round: 1, domain: root.child(1.0, &[0.0, 0.0]), annotations: Map::new() };
        assert_eq!(validate_move(&trace, &open), Ok(()));
        trace.moves.push(open);
        let parent = trace.current_domain();
        let wrong = Move { player: Player::Alice, round: 1, domain: parent.child(1.0, &[0.0, 0.0]), annotations: Map::new() };
        assert!(matches!(validate_move(&trace, &wrong), Err(Violation::WrongScale { .. })));
        // properly scaled, shifted so one vertex leaves the parent
        let shifted = parent.child(2.0, &[1.0 - (-1f64).exp() + 1e-6, 0.0]);
        assert!(!fits_inside(&shifted, &parent).unwrap());
        let mv = Move { player: Player::Alice, round: 1, domain: shifted, annotations: Map::new() };
        assert_eq!(validate_move(&trace, &mv), Err(Violation::NotContained));
    }

    #[test]
    fn intersection_point_examples() {
        let sched = Schedule::new(1.0, 1.0, 1.0, 0.0).unwrap();
        let sp = space(vec![1.0, 1.0], 50, &sched);
        let mut trace = GameTrace::new(&sp, sched);
        assert_eq!(intersection_point(&trace), Err(GameError::EmptyTrace));
        trace.moves.push(Move {
            player: Player::Bob,
            round: 1,
            domain: Domain::from_f64(&sp, 1.0, &[0.0, 0.0]),
            annotations: Map::new(),
        });
        let (c, r) = intersection_point(&trace).unwrap();
        let e = (-1f64).exp();
        for x in hp::to_f64s(&c) {
            assert!((x - e / 2.0).abs() < 1e-16);
        }
        assert!(r <= 1.0 * e * (1.0 + 1e-15));

        let trace = play(&mut RandomMover::new(3), &mut bob_random(4), &sp, &sched, 50).unwrap();
        let (p, r) = intersection_point(&trace).unwrap();
        assert!(r <= sp.semigroup.c0 * (-sp.semigroup.sigma * sched.t_prime(50)).exp() * (1.0 + 1e-12));
        assert!(point_in_all(&trace, &p, 1e-10));
    }

    #[test]
    fn replay_is_bit_identical() {
        let sched = Schedule::new(1.0, 1.0, 1.0, 0.0).unwrap();
        let sp = space(vec![2.0], 20, &sched);
        let a = play(&mut RandomMover::new(9), &mut bob_random(11), &sp, &sched, 20).unwrap();
        let b = play(&mut RandomMover::new(9), &mut bob_random(11), &sp, &sched, 20).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn random_games_nest(sa in any::<u64>(), sb in any::<u64>()) {
            let sched = Schedule::new(1.0, 1.0, 1.0, 0.0).unwrap();
            let sp = space(vec![1.0, 1.0], 50, &sched);
            let trace = play(&mut RandomMover::new(sa), &mut bob_random(sb), &sp, &sched, 50).unwrap();
            for w in trace.moves.windows(2) {
                prop_assert!(fits_inside(&w[1].domain, &w[0].domain).unwrap());
            }
            let (p, _) = intersection_point(&trace).unwrap();
            prop_assert!(point_in_all(&trace, &p, 1e-10));
        }

        #[test]
        fn radius_decays_per_round(sa in any::<u64>()) {
            let sched = Schedule::new(1.0, 1.0, 1.0, 0.0).unwrap();
            let sp = space(vec![1.0, 3.0], 12, &sched);
            let trace = play(&mut RandomMover::new(sa), &mut bob_random(sa ^ 1), &sp, &sched, 12).unwrap();
            let mut prev = None;
            for k in 1..=12 {
                let mut t = trace.clone();
                t.moves.truncate(2 * k);
                let (_, r) = intersection_point(&t).unwrap();
                if let Some(p) = prev {
                    let ratio: f64 = p / r;
                    prop_assert!(ratio >= (sp.semigroup.sigma * sched.period()).exp() * (1.0 - 1e-9));
                }
                prev = Some(r);
            }
        }
    }
}
