//! Playing several Alice strategies at once.
//!
//! With `n` components, round `j` belongs to component `(j - 1) mod n`,
//! and component `i` only starts playing from round `2^i`. Seen from one
//! component, the rounds it does not own look like a longer Bob step, so it
//! plays a game with the same `a` and `b' = n(a + b) - a`. Unowned or
//! dormant rounds get the lower-corner move.

use serde_json::{json, Value};

use crate::game::{Annotations, MoveContext, Proposal, Schedule, Strategy, StrategyError};

pub struct IntersectStrategy {
    components: Vec<Box<dyn Strategy>>,
    /// First owned round of each component once active, and moves made.
    first_round: Vec<Option<usize>>,
    moves: Vec<usize>,
}

pub fn alice_intersect(components: Vec<Box<dyn Strategy>>) -> IntersectStrategy {
    let n = components.len();
    IntersectStrategy { components, first_round: vec![None; n], moves: vec![0; n] }
}

impl IntersectStrategy {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Component that owns `round`, if it is active by then.
    pub fn owner(&self, round: usize) -> Option<usize> {
        let n = self.components.len();
        if n == 0 {
            return None;
        }
        let i = (round - 1) % n;
        (round >= 1usize << i.min(62)).then_some(i)
    }

    pub fn moves_made(&self) -> &[usize] {
        &self.moves
    }

    pub fn component(&self, i: usize) -> &dyn Strategy {
        self.components[i].as_ref()
    }

    /// Schedule of the game component `i` sees, once its first round is known.
    pub fn component_schedule(&self, outer: &Schedule, i: usize) -> Option<Schedule> {
        let n = self.components.len() as f64;
        let first = self.first_round[i]?;
        Some(Schedule {
            t1: outer.t(first),
            a: outer.a,
            b: n * outer.period() - outer.a,
            a_star: outer.a_star,
        })
    }
}

impl Strategy for IntersectStrategy {
    fn label(&self) -> String {
        let parts: Vec<String> = self.components.iter().map(|c| c.label()).collect();
        format!("intersect({})", parts.join(","))
    }

    fn propose(&mut self, ctx: &MoveContext<'_>) -> Result<Proposal, StrategyError> {
        let Some(i) = self.owner(ctx.round) else {
            return Ok(Proposal::plain(ctx.place(&ctx.legal_box()?.lower_corner())));
        };
        if self.first_round[i].is_none() {
            self.first_round[i] = Some(ctx.round);
        }
        let schedule = self.component_schedule(ctx.schedule, i).expect("first round set above");
        let sub = MoveContext {
            space: ctx.space,
            schedule: &schedule,
            player: ctx.player,
            round: self.moves[i] + 1,
            scale: ctx.scale,
            parent: ctx.parent,
            history: ctx.history,
        };
        let mut p = self.components[i]
            .propose(&sub)
            .map_err(|e| StrategyError::Component { index: i, source: Box::new(e) })?;
        self.moves[i] += 1;
        if self.components.len() > 1 {
            let mut ann = Annotations::new();
            ann.insert("component".into(), json!(i));
            ann.append(&mut p.annotations);
            p.annotations = ann;
        }
        Ok(p)
    }

    fn seed(&self) -> Option<u64> {
        self.components.iter().find_map(|c| c.seed())
    }

    fn context(&self) -> Option<Value> {
        if self.components.len() == 1 {
            return self.components[0].context();
        }
        let parts: Vec<Value> = self.components.iter().map(|c| c.context().unwrap_or(Value::Null)).collect();
        Some(json!({"kind": "intersect", "components": parts}))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contraction::{AdmissibleBase, ContractionSemigroup, GameSpace};
    use crate::game::play;
    use crate::strategies::{bob_random, dummy, RandomMover};

    #[test]
    fn single_component_matches_bare_strategy() {
        let base = AdmissibleBase::unit(1);
        let sg = ContractionSemigroup::diagonal(vec![2.0], &base).unwrap();
        let sched = Schedule::new(1.0, 1.0, 1.0, 0.0).unwrap();
        let sp = GameSpace::with_horizon(sg, base, sched.t_prime(20));
        let bare = play(&mut RandomMover::new(4), &mut bob_random(8), &sp, &sched, 20).unwrap();
        let mut combo = alice_intersect(vec![Box::new(RandomMover::new(4))]);
        let wrapped = play(&mut combo, &mut bob_random(8), &sp, &sched, 20).unwrap();
        assert_eq!(bare.moves, wrapped.moves);
    }

    #[test]
    fn ownership_and_fairness() {
        let combo = alice_intersect((0..5).map(|_| Box::new(dummy()) as Box<dyn Strategy>).collect());
        let rounds = 100;
        for i in 0..5 {
            let owned = (1..=rounds).filter(|&j| combo.owner(j) == Some(i)).count();
            let active = 5;
            let start = 1usize << i;
            assert!(owned >= (rounds - start) / (2 * active), "component {i}: {owned}");
            assert!((1..start).all(|j| combo.owner(j) != Some(i)));
        }
    }

    #[test]
    fn component_sees_inflated_bob_step() {
        let base = AdmissibleBase::unit(1);
        let sg = ContractionSemigroup::diagonal(vec![2.0], &base).unwrap();
        let sched = Schedule::new(1.0, 1.0, 1.0, 0.0).unwrap();
        let sp = GameSpace::with_horizon(sg, base, sched.t_prime(12));
        let mut combo = alice_intersect(vec![Box::new(dummy()), Box::new(dummy()), Box::new(dummy())]);
        play(&mut combo, &mut bob_random(1), &sp, &sched, 12).unwrap();
        let s = combo.component_schedule(&sched, 1).unwrap();
        assert_eq!(s.t1, sched.t(2));
        assert_eq!(s.b, 3.0 * 2.0 - 1.0);
        assert_eq!(combo.moves_made(), &[4, 4, 3]);
    }
}
