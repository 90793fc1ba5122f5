//! Keeping the orbit away from a flow segment `Z_T = {exp(tau X) z}`.
//!
//! After `N` dummy rounds Alice looks back `N` periods: the two separated
//! candidate children, pushed to the checkpoint time, are small sets a
//! definite distance apart, so at most one of them can come close to `Z_T`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{check_space, dec12, matrix_rows, rows_matrix, shifted_lattice, OrbitProbe};
use crate::contraction::{two_separated_translates, AdmissibleBase, ContractionSemigroup, GameSpace};
use crate::game::{Annotations, MoveContext, Proposal, Strategy, StrategyError};
use crate::homogeneous::{u_of_flat, FlowSegment, LatticeBasis, WeightVector};
use crate::linalg::expm;

const MAX_DUMMY_ROUNDS: usize = 10_000;

/// Euclidean diameter of `Phi_t(base)`.
pub fn euclid_image_diameter(sg: &ContractionSemigroup, base: &AdmissibleBase, t: f64) -> f64 {
    let m = sg.matrix(t);
    let verts = base.vertices();
    let mut best: f64 = 0.0;
    for (i, v) in verts.iter().enumerate() {
        for u in &verts[i + 1..] {
            let d = nalgebra::DVector::from_iterator(v.len(), v.iter().zip(u).map(|(a, b)| a - b));
            best = best.max((&m * d).norm());
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvoidanceTarget {
    pub z: LatticeBasis,
    pub generator: Vec<Vec<f64>>,
    /// Segment length `T`, also the period of the game the target is used in.
    pub length: f64,
    pub alice_step: f64,
    pub delta: f64,
    /// Dummy rounds `N` before the first checkpoint.
    pub steps: usize,
    /// Euclidean gap between the two candidate children.
    pub separation: f64,
    /// Co-Lipschitz constant of `Phi_{NT}`.
    pub lambda: f64,
    pub epsilon: f64,
    pub eta: f64,
    /// Renormalized offsets of the two candidates inside their parent.
    pub offsets: Vec<Vec<f64>>,
}

impl AvoidanceTarget {
    pub fn new(
        z: &LatticeBasis,
        generator: &DMatrix<f64>,
        length: f64,
        space: &Arc<GameSpace>,
        alice_step: f64,
        delta: f64,
    ) -> Result<Self, StrategyError> {
        if !(length > 0.0) {
            return Err(StrategyError::Setup(format!("segment length must be positive, got {length}")));
        }
        if !(delta > 0.0) {
            return Err(StrategyError::Setup(format!("delta must be positive, got {delta}")));
        }
        let (d1, d2, separation) =
            two_separated_translates(space, alice_step).map_err(|e| StrategyError::Setup(e.to_string()))?;
        let root = space.root();
        let offsets = vec![d1.offset_in(&root), d2.offset_in(&root)];
        let sg = &space.semigroup;
        let mut steps = 1;
        while euclid_image_diameter(sg, &space.base, steps as f64 * length) >= delta {
            steps += 1;
            if steps > MAX_DUMMY_ROUNDS {
                return Err(StrategyError::Setup("semigroup too weak to shrink the base below delta".into()));
            }
        }
        let sv = sg.matrix(steps as f64 * length).svd(false, false).singular_values;
        let lambda = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        let epsilon = (0.5 * lambda * separation).min(delta);
        Ok(AvoidanceTarget {
            z: z.clone(),
            generator: matrix_rows(generator),
            length,
            alice_step,
            delta,
            steps,
            separation,
            lambda,
            epsilon,
            eta: epsilon / 8.0,
            offsets,
        })
    }

    pub fn segment(&self) -> FlowSegment {
        FlowSegment::new(&self.z, rows_matrix(&self.generator), self.length)
    }

    /// Look-back from a parent at scale `t` to its checkpoint.
    pub fn checkpoint(&self, parent_t: f64) -> f64 {
        parent_t - self.steps as f64 * self.length
    }

    /// Euclidean diameter of a candidate child pushed to its checkpoint.
    pub fn pushed_diameter(&self, space: &GameSpace) -> f64 {
        euclid_image_diameter(&space.semigroup, &space.base, self.steps as f64 * self.length + self.alice_step)
    }
}

/// Sample points of the child at offset `z`: its vertices and center, in
/// the parent's frame.
pub(crate) fn child_samples(space: &GameSpace, step: f64, z: &[f64]) -> Vec<Vec<f64>> {
    let base = &space.base;
    let mut pts = base.vertices();
    pts.push(base.center());
    pts.iter()
        .map(|v| space.semigroup.apply(step, v).iter().zip(z).map(|(a, b)| a + b).collect())
        .collect()
}

#[derive(Debug, Clone)]
pub struct AvoidStrategy {
    pub target: AvoidanceTarget,
    segment: FlowSegment,
    probe: OrbitProbe,
}

pub fn alice_avoid(target: AvoidanceTarget, weights: &WeightVector, basepoint: &LatticeBasis) -> AvoidStrategy {
    AvoidStrategy { segment: target.segment(), probe: OrbitProbe::new(weights, basepoint), target }
}

impl AvoidStrategy {
    fn dummy(ctx: &MoveContext<'_>) -> Result<Proposal, StrategyError> {
        let mut ann = Annotations::new();
        ann.insert("phase".into(), json!("dummy"));
        Ok(Proposal { domain: ctx.place(&ctx.legal_box()?.lower_corner()), annotations: ann })
    }
}

impl Strategy for AvoidStrategy {
    fn label(&self) -> String {
        "avoid".into()
    }

    fn propose(&mut self, ctx: &MoveContext<'_>) -> Result<Proposal, StrategyError> {
        check_space(ctx, &self.probe.weights)?;
        let step = ctx.scale - ctx.parent.t;
        if (step - self.target.alice_step).abs() > 1e-9 {
            return Err(StrategyError::Setup(format!(
                "target built for Alice step {}, game uses {step}",
                self.target.alice_step
            )));
        }
        let s = self.target.checkpoint(ctx.parent.t);
        if ctx.round <= self.target.steps || s < 0.0 {
            return Self::dummy(ctx);
        }
        let sg = &ctx.space.semigroup;
        let c0 = ctx.space.base.center();
        let center_lattice = self.probe.lattice(&ctx.parent.center(), s, ctx.space.horizon());
        let pushed = self.target.pushed_diameter(ctx.space);
        let mut tried = Vec::new();
        for (i, z) in self.target.offsets.iter().enumerate() {
            let lats: Vec<LatticeBasis> = child_samples(ctx.space, step, z)
                .iter()
                .map(|f| {
                    let diff: Vec<f64> = f.iter().zip(&c0).map(|(a, b)| a - b).collect();
                    shifted_lattice(sg, &self.probe.weights, &center_lattice, ctx.parent.t, s, &diff)
                })
                .collect();
            let (mut lower, mut raw) = (f64::INFINITY, f64::INFINITY);
            for l in &lats {
                let b = self.segment.bracket_above(l, self.target.eta + pushed);
                (lower, raw) = (lower.min(b.lower), raw.min(b.value));
            }
            let clearance = raw - pushed;
            // acceptance rests on the proven bound; the recorded value is the search estimate
            if lower - pushed > self.target.eta {
                let mut ann = Annotations::new();
                ann.insert("phase".into(), json!("avoid"));
                ann.insert("checkpoint".into(), json!(s));
                ann.insert("candidate".into(), json!(i + 1));
                ann.insert("raw_clearance".into(), dec12(raw));
                ann.insert("clearance".into(), dec12(clearance));
                ann.insert("eta".into(), dec12(self.target.eta));
                return Ok(Proposal { domain: ctx.place(z), annotations: ann });
            }
            tried.push(clearance);
        }
        Err(StrategyError::CalibrationFailure {
            round: ctx.round,
            detail: format!("candidate clearances {:?} do not exceed eta = {:e}", tried, self.target.eta),
        })
    }

    fn context(&self) -> Option<Value> {
        Some(json!({
            "kind": "avoid",
            "target": self.target,
            "weights": self.probe.weights,
            "basepoint": self.probe.basepoint,
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditConfig {
    pub samples: usize,
    pub seed: u64,
    /// Last rung of the ladder is `2^-max_level`.
    pub max_level: u32,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig { samples: 10_000, seed: 0, max_level: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransversalityCertificate {
    pub delta: f64,
    /// Largest near-set diameter seen at the accepted scale.
    pub max_diameter: f64,
    pub samples: usize,
    pub levels_tried: u32,
}

fn random_traceless(rng: &mut ChaCha8Rng, k: usize, frob: f64) -> DMatrix<f64> {
    let mut m = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
    let tr = m.trace() / k as f64;
    for i in 0..k {
        m[(i, i)] -= tr;
    }
    let n = m.norm();
    if n > 0.0 { m * (frob / n) } else { m }
}

/// Largest `delta = 2^-j` for which no sampled point `x` near the segment
/// has a near set `{Y in [-delta, delta]^{mn} : d(u_Y x, Z_T) < delta/8}` of
/// diameter above `delta`.
pub fn calibrate_transversality(
    segment: &FlowSegment,
    w: &WeightVector,
    cfg: &AuditConfig,
) -> Result<TransversalityCertificate, StrategyError> {
    let dim = w.h_dim();
    let k = w.k();
    let mut last = f64::NAN;
    for level in 1..=cfg.max_level {
        let delta = 0.5f64.powi(level as i32);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ u64::from(level).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut grid: Vec<Vec<f64>> = (0..3usize.pow(dim as u32))
            .map(|mut code| {
                (0..dim)
                    .map(|_| {
                        let c = code % 3;
                        code /= 3;
                        (c as f64 - 1.0) * delta
                    })
                    .collect()
            })
            .collect();
        grid.push(vec![0.0; dim]);
        let mut worst: f64 = 0.0;
        let mut failed = false;
        for _ in 0..cfg.samples {
            let tau = if segment.length > 0.0 { rng.random_range(0.0..=segment.length) } else { 0.0 };
            let y0: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.5 * delta..=0.5 * delta)).collect();
            let xi = random_traceless(&mut rng, k, delta / 32.0);
            let neg: Vec<f64> = y0.iter().map(|v| -v).collect();
            let x = segment.point(tau).left_mul(&(u_of_flat(w, &neg) * expm(&xi)));
            *grid.last_mut().unwrap() = y0.clone();
            let near: Vec<&Vec<f64>> = grid
                .iter()
                .filter(|y| !segment.exceeds(&x.left_mul(&u_of_flat(w, y)), delta / 8.0))
                .collect();
            let mut diam: f64 = 0.0;
            for (i, a) in near.iter().enumerate() {
                for b in &near[i + 1..] {
                    diam = diam.max(a.iter().zip(b.iter()).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt());
                }
            }
            worst = worst.max(diam);
            if diam > delta {
                failed = true;
                break;
            }
        }
        last = worst;
        if !failed {
            return Ok(TransversalityCertificate { delta, max_diameter: worst, samples: cfg.samples, levels_tried: level });
        }
    }
    Err(StrategyError::NoScaleFound { max_diameter: last })
}
