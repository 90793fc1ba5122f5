//! Bob adversaries used to stress Alice's strategies.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_space, grid_offsets, shifted_lattice, OrbitProbe, RandomMover};
use crate::game::{MoveContext, Proposal, Strategy, StrategyError};
use crate::homogeneous::{flow_distance, systole, LatticeBasis, WeightVector};

const GRID: usize = 16;

pub fn bob_random(seed: u64) -> RandomMover {
    RandomMover::new(seed)
}

pub fn bob_cusp_seeking(weights: &WeightVector, basepoint: &LatticeBasis, seed: u64) -> CuspSeeking {
    CuspSeeking { probe: OrbitProbe::new(weights, basepoint), seed, rng: ChaCha8Rng::seed_from_u64(seed) }
}

pub fn bob_target_seeking(z: &LatticeBasis, weights: &WeightVector, basepoint: &LatticeBasis, seed: u64) -> TargetSeeking {
    TargetSeeking {
        target: z.clone(),
        probe: OrbitProbe::new(weights, basepoint),
        seed,
        rng: ChaCha8Rng::seed_from_u64(seed),
    }
}

/// Scores a jittered grid of legal children by the lattice at their centers
/// (at the child's own scale) and returns the best one.
fn greedy(
    ctx: &MoveContext<'_>,
    probe: &mut OrbitProbe,
    rng: &mut ChaCha8Rng,
    score: impl Fn(&LatticeBasis) -> f64,
) -> Result<(Proposal, f64), StrategyError> {
    check_space(ctx, &probe.weights)?;
    let bx = ctx.legal_box()?;
    let per_axis = ((GRID as f64).powf(1.0 / bx.lower.len() as f64).round() as usize).max(2);
    // exact corners first, so ties go to them and rational points stay reachable
    let l = bx.lower.len();
    let mut offsets: Vec<Vec<f64>> = (0..1usize << l)
        .map(|m| bx.point(&(0..l).map(|i| ((m >> i) & 1) as f64).collect::<Vec<_>>()))
        .collect();
    offsets.extend(grid_offsets(&bx, per_axis, Some(rng)));
    let sg = &ctx.space.semigroup;
    let c0 = ctx.space.base.center();
    let parent_lattice = probe.lattice(&ctx.parent.center(), ctx.scale, ctx.space.horizon());
    let inner_center = sg.apply(ctx.scale - ctx.parent.t, &c0);
    let mut best: Option<(f64, usize)> = None;
    for (i, z) in offsets.iter().enumerate() {
        let diff: Vec<f64> = (0..z.len()).map(|j| z[j] + inner_center[j] - c0[j]).collect();
        let lat = shifted_lattice(sg, &probe.weights, &parent_lattice, ctx.parent.t, ctx.scale, &diff);
        let s = score(&lat);
        if best.is_none_or(|(b, _)| s < b) {
            best = Some((s, i));
        }
    }
    let (s, i) = best.expect("grid is nonempty");
    Ok((Proposal::plain(ctx.place(&offsets[i])), s))
}

/// Picks the child whose center lattice has the smallest systole.
#[derive(Debug, Clone)]
pub struct CuspSeeking {
    probe: OrbitProbe,
    seed: u64,
    rng: ChaCha8Rng,
}

impl Strategy for CuspSeeking {
    fn label(&self) -> String {
        "cusp-seeking".into()
    }

    fn propose(&mut self, ctx: &MoveContext<'_>) -> Result<Proposal, StrategyError> {
        let score = |l: &LatticeBasis| systole(l).map(|s| s.0).unwrap_or(f64::INFINITY);
        greedy(ctx, &mut self.probe, &mut self.rng, score).map(|p| p.0)
    }

    fn seed(&self) -> Option<u64> {
        Some(self.seed)
    }
}

/// Picks the child whose center lattice is closest to a target point.
#[derive(Debug, Clone)]
pub struct TargetSeeking {
    target: LatticeBasis,
    probe: OrbitProbe,
    seed: u64,
    rng: ChaCha8Rng,
}

impl TargetSeeking {
    /// Best candidate and its distance, exposed for diagnostics.
    pub fn propose_scored(&mut self, ctx: &MoveContext<'_>) -> Result<(Proposal, f64), StrategyError> {
        let target = self.target.clone();
        greedy(ctx, &mut self.probe, &mut self.rng, |l| flow_distance(l, &target))
    }
}

impl Strategy for TargetSeeking {
    fn label(&self) -> String {
        "target-seeking".into()
    }

    fn propose(&mut self, ctx: &MoveContext<'_>) -> Result<Proposal, StrategyError> {
        self.propose_scored(ctx).map(|p| p.0)
    }

    fn seed(&self) -> Option<u64> {
        Some(self.seed)
    }
}
