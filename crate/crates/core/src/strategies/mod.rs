//! Alice's certified strategies, Bob adversaries, and the intersection
//! combinator.

mod avoid;
mod bob;
mod bounded;
mod intersect;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use crate::contraction::{ContractionSemigroup, OffsetBox};
use crate::game::{MoveContext, Proposal, Strategy, StrategyError};
use crate::homogeneous::{orbit_precision, u_of_flat, LatticeBasis, OrbitTracker, WeightVector};
use crate::hp::{Integer, Real};

pub use avoid::{
    alice_avoid, calibrate_transversality, euclid_image_diameter, AuditConfig, AvoidStrategy, AvoidanceTarget,
    TransversalityCertificate,
};
pub use bob::{bob_cusp_seeking, bob_random, bob_target_seeking, CuspSeeking, TargetSeeking};
pub use bounded::{alice_stay_bounded, BoundedConfig, BoundedStrategy, BoundedStrategyState, DangerRecord};
pub use intersect::{alice_intersect, IntersectStrategy};

pub(crate) use avoid::child_samples;
pub(crate) use bounded::{child_region, expanding_lower_bound};

/// Number formatted with 12 significant digits, kept verbatim in JSON.
pub fn dec12(x: f64) -> Value {
    if !x.is_finite() {
        return Value::Null;
    }
    let s = format!("{x:.11e}");
    serde_json::from_str(&s).unwrap_or(Value::Null)
}

/// Canonical arbitrary move: the child fitted at the lower corner.
#[derive(Debug, Clone, Copy, Default)]
pub struct LowerCorner;

impl Strategy for LowerCorner {
    fn label(&self) -> String {
        "lower-corner".into()
    }

    fn propose(&mut self, ctx: &MoveContext<'_>) -> Result<Proposal, StrategyError> {
        Ok(Proposal::plain(ctx.place(&ctx.legal_box()?.lower_corner())))
    }
}

/// Dummy Alice.
pub fn dummy() -> LowerCorner {
    LowerCorner
}

/// Uniformly random legal translate; usable by either player.
#[derive(Debug, Clone)]
pub struct RandomMover {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomMover {
    pub fn new(seed: u64) -> Self {
        RandomMover { seed, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Strategy for RandomMover {
    fn label(&self) -> String {
        "random".into()
    }

    fn propose(&mut self, ctx: &MoveContext<'_>) -> Result<Proposal, StrategyError> {
        let bx = ctx.legal_box()?;
        let u: Vec<f64> = (0..bx.lower.len()).map(|_| self.rng.random::<f64>()).collect();
        Ok(Proposal::plain(ctx.place(&bx.point(&u))))
    }

    fn seed(&self) -> Option<u64> {
        Some(self.seed)
    }
}

/// Grid of `per_axis^l` offsets in `bx`, each axis shifted by one random
/// fraction of a cell when `rng` is given.
pub(crate) fn grid_offsets(bx: &OffsetBox, per_axis: usize, rng: Option<&mut ChaCha8Rng>) -> Vec<Vec<f64>> {
    let l = bx.lower.len();
    let n = per_axis.max(1);
    let shift: Vec<f64> = match rng {
        Some(r) => (0..l).map(|_| r.random::<f64>()).collect(),
        None => vec![0.5; l],
    };
    let total = n.pow(l as u32);
    (0..total)
        .map(|mut code| {
            let u: Vec<f64> = (0..l)
                .map(|i| {
                    let c = code % n;
                    code /= n;
                    if n == 1 { shift[i] } else { (c as f64 + shift[i]) / n as f64 }
                })
                .collect();
            bx.point(&u)
        })
        .collect()
}

/// Follows `g_t u_h g Z^k` for the successive domain centers `h`.
#[derive(Debug, Clone)]
pub(crate) struct OrbitProbe {
    pub weights: WeightVector,
    pub basepoint: LatticeBasis,
    tracker: Option<OrbitTracker>,
}

impl OrbitProbe {
    pub fn new(weights: &WeightVector, basepoint: &LatticeBasis) -> Self {
        OrbitProbe { weights: weights.clone(), basepoint: basepoint.clone(), tracker: None }
    }

    /// Reduced lattice of the orbit of `point` at time `t`.
    pub fn lattice(&mut self, point: &[Real], t: f64, horizon: f64) -> LatticeBasis {
        match &mut self.tracker {
            Some(tr) => tr.rebase(&self.basepoint, point),
            None => {
                let prec = orbit_precision(&self.weights, horizon.max(t));
                self.tracker = Some(OrbitTracker::new(&self.weights, &self.basepoint, point, prec));
            }
        }
        let tr = self.tracker.as_mut().expect("tracker initialized above");
        tr.advance_to(t);
        tr.lattice()
    }

    /// Integer transform behind the last lattice returned.
    pub fn transform(&self) -> Option<&[Vec<Integer>]> {
        self.tracker.as_ref().map(|t| t.transform())
    }
}

/// The lattice at time `t` of the point whose frame coordinates, relative to
/// a domain of scale `frame_t` centered at the tracked point, differ by `diff`.
pub(crate) fn shifted_lattice(
    sg: &ContractionSemigroup,
    w: &WeightVector,
    center_lattice: &LatticeBasis,
    frame_t: f64,
    t: f64,
    diff: &[f64],
) -> LatticeBasis {
    let y = sg.apply(frame_t - t, diff);
    center_lattice.left_mul(&u_of_flat(w, &y))
}

pub(crate) fn check_space(ctx: &MoveContext<'_>, w: &WeightVector) -> Result<(), StrategyError> {
    let rates = w.contraction_rates();
    let sg = &ctx.space.semigroup;
    let same = sg.dim == rates.len() && {
        let probe: Vec<f64> = vec![1.0; rates.len()];
        let img = sg.apply(1.0, &probe);
        img.iter().zip(&rates).all(|(v, r)| (v - (-r).exp()).abs() < 1e-12)
    };
    if same {
        Ok(())
    } else {
        Err(StrategyError::Setup("semigroup is not the conjugation action of the flow weights".into()))
    }
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

pub(crate) fn rows_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(n, m, |i, j| rows[i][j])
}
