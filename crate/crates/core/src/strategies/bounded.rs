//! Keeping the orbit `g_t u_h g Z^k` out of the cusp.
//!
//! At each checkpoint the short primitive wedge vectors at the current
//! center are the dangerous ones. A vector whose expanding part is already
//! large stays safe forever; otherwise Alice moves into a region where the
//! expanding part of `wedge^d(u_Y) v` is certified large, and the flow can
//! only grow it from there.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Number, Value};

use super::{check_space, dec12, OrbitProbe};
use crate::game::{Annotations, MoveContext, Proposal, Strategy, StrategyError};
use crate::homogeneous::{
    expanding_check, phi_projected, primitive_short, systole, wedge_basis, wedge_int, LatticeBasis, Polynomial,
    Projection, RepresentationData, WeightVector, MAX_DANGER_DIM,
};
use crate::hp::Integer;

const FLOOR_GRID: f64 = 0.05;
const SAMPLED_MAPS: usize = 64;

/// Lower bound on `|p|` over the box `|x_i - center_i| <= rho_i`; exact for
/// affine `p`.
pub fn min_abs_on_box(p: &Polynomial, center: &[f64], rho: &[f64]) -> f64 {
    let slope: f64 = (0..p.nvars).map(|i| rho[i] * p.partial(i).abs_bound(center, rho)).sum();
    (p.eval(center).abs() - slope).max(0.0)
}

/// Constants of one bounded-orbit game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundedStrategyState {
    pub basepoint: LatticeBasis,
    pub weights: WeightVector,
    pub degrees: Vec<usize>,
    /// Per degree: bound on `|wedge^d(u_Y)|` for `Y` in the renormalized base.
    pub kappa: Vec<f64>,
    /// Per degree: norm of the inverse of `v -> coefficients of P o phi^v`.
    pub inverse_norm: Vec<f64>,
    /// Per degree: largest contraction exponent of the flow on `wedge^d`.
    pub contraction: Vec<f64>,
    pub eps0: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
    /// Sampled `inf_phi max_x |P phi(x)| / |phi|` over the base.
    pub eta_sampled: f64,
    pub eta_poly: f64,
    pub gradient_bound: f64,
    pub c_ball: f64,
    /// Smallest Alice step whose children fit in a ball of diameter `c_ball / 2`.
    pub a_prime: f64,
    pub danger_bound: usize,
    pub alice_step: f64,
    pub period: f64,
    pub t1: f64,
    /// Lower bound for the systole on `[0, t1]` over the opening domain.
    pub initial_floor: f64,
    /// Certified lower bound for the systole of the final point for all
    /// times up to the last checkpoint.
    pub floor: f64,
}

impl BoundedStrategyState {
    pub fn reps(&self) -> Vec<RepresentationData> {
        self.degrees.iter().map(|&d| RepresentationData::new(&self.weights, d)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoundedConfig {
    /// Upper cap on `eps0`; derived from the period when absent.
    pub eps0_cap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DangerRecord {
    pub degree: usize,
    /// Coordinates in the wedge basis of the starting lattice `g Z^k`.
    pub coords: Vec<Integer>,
    pub norm: f64,
}

/// The degree-independent part of the constants, plus the per-degree maps.
struct Geometry {
    kappa: Vec<f64>,
    inverse_norm: Vec<f64>,
    eta_sampled: f64,
    gradient_bound: f64,
}

fn box_grid(half: &[f64], per_axis: usize) -> Vec<Vec<f64>> {
    let l = half.len();
    let total = per_axis.pow(l as u32);
    (0..total)
        .map(|mut code| {
            (0..l)
                .map(|i| {
                    let c = code % per_axis;
                    code /= per_axis;
                    -half[i] + 2.0 * half[i] * c as f64 / (per_axis - 1) as f64
                })
                .collect()
        })
        .collect()
}

fn geometry(reps: &[RepresentationData], half: &[f64]) -> Result<Geometry, StrategyError> {
    let l = half.len();
    let zero = vec![0.0; l];
    let per_axis = match l {
        1 => 81,
        2 => 21,
        3 => 9,
        _ => 5,
    };
    let grid = box_grid(half, per_axis);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut kappa = Vec::new();
    let mut inverse_norm = Vec::new();
    let mut eta_sampled = f64::INFINITY;
    let mut gradient_bound: f64 = 0.0;
    for rep in reps {
        let dim = rep.dim();
        let k = (0..dim)
            .map(|i| (0..dim).map(|j| rep.u_entry(i, j).abs_bound(&zero, half)).sum::<f64>())
            .fold(0.0, f64::max);
        kappa.push(k);
        let verdict = expanding_check(&rep.weights, rep.d);
        if !verdict.expanding {
            return Err(StrategyError::Setup(format!("degree {} is not expanding", rep.d)));
        }
        let pinv = verdict
            .coefficient_map
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| StrategyError::Setup(e.to_string()))?;
        let norm = (0..pinv.nrows()).map(|i| pinv.row(i).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
        inverse_norm.push(norm);
        let mut samples: Vec<Vec<f64>> = (0..dim)
            .map(|j| {
                let mut e = vec![0.0; dim];
                e[j] = 1.0;
                e
            })
            .collect();
        samples.extend((0..SAMPLED_MAPS).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()));
        for v in samples {
            let phi = phi_projected(&v, rep, Projection::Expanding);
            let n = phi.coeff_norm();
            if n == 0.0 {
                continue;
            }
            let best = grid
                .iter()
                .map(|x| phi.eval(x).iter().map(|c| c.abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            eta_sampled = eta_sampled.min(best / n);
            for p in &phi.components {
                let g: f64 = (0..l).map(|i| p.partial(i).abs_bound(&zero, half)).sum();
                gradient_bound = gradient_bound.max(g / n);
            }
        }
    }
    Ok(Geometry { kappa, inverse_norm, eta_sampled, gradient_bound })
}

#[derive(Debug, Clone)]
pub struct BoundedStrategy {
    config: BoundedConfig,
    probe: OrbitProbe,
    reps: Vec<RepresentationData>,
    state: Option<BoundedStrategyState>,
    dangerous_per_round: Vec<usize>,
}

pub fn alice_stay_bounded(weights: &WeightVector, basepoint: &LatticeBasis, config: BoundedConfig) -> BoundedStrategy {
    let reps = (1..weights.k()).map(|d| RepresentationData::new(weights, d)).collect();
    BoundedStrategy { config, probe: OrbitProbe::new(weights, basepoint), reps, state: None, dangerous_per_round: Vec::new() }
}

impl BoundedStrategy {
    /// Constants, available once the first move has been made.
    pub fn state(&self) -> Option<&BoundedStrategyState> {
        self.state.as_ref()
    }

    pub fn dangerous_per_round(&self) -> &[usize] {
        &self.dangerous_per_round
    }

    fn finalize(&mut self, ctx: &MoveContext<'_>) -> Result<(), StrategyError> {
        let w = self.probe.weights.clone();
        if w.k() > MAX_DANGER_DIM {
            return Err(StrategyError::Setup(format!("dimension {} exceeds {}", w.k(), MAX_DANGER_DIM)));
        }
        let base = &ctx.space.base;
        let half: Vec<f64> = base.widths().iter().map(|x| 0.5 * x).collect();
        let geo = geometry(&self.reps, &half)?;
        let c_ball = geo.eta_sampled / geo.gradient_bound;
        let eta_poly = 0.5 * geo.eta_sampled;
        let rates = w.contraction_rates();
        let widths = base.widths();
        let a_prime = (0..rates.len())
            .map(|i| ((2.0 * widths[i] / c_ball).ln() / rates[i]).max(0.0))
            .fold(0.0, f64::max);
        let alice_step = ctx.scale - ctx.parent.t;
        if !(alice_step > a_prime) {
            return Err(StrategyError::Setup(format!("Alice step {alice_step} must exceed a' = {a_prime:.6}")));
        }
        let period = ctx.schedule.period();
        let contraction: Vec<f64> = self.reps.iter().map(|r| r.max_contraction()).collect();
        let growth: Vec<f64> = (0..self.reps.len()).map(|i| geo.kappa[i] * (contraction[i] * period).exp()).collect();
        let auto_cap = growth.iter().map(|g| 0.7 / g).fold(f64::INFINITY, f64::min);
        let mut eps0 = self.config.eps0_cap.unwrap_or(auto_cap);

        // opening domain: every wedge vector over B_1 at t1 must be >= eps0
        let t1 = ctx.parent.t;
        let center = ctx.parent.center();
        let mu = w.max_abs_exponent();
        let mut initial_floor = f64::INFINITY;
        let steps = (t1 / FLOOR_GRID).ceil() as usize;
        for i in 0..=steps {
            let t = (i as f64 * FLOOR_GRID).min(t1);
            let lat = self.probe.lattice(&center, t, ctx.space.horizon());
            let s = systole(&lat).map_err(|e| StrategyError::Setup(e.to_string()))?.0;
            initial_floor = initial_floor.min(s);
        }
        initial_floor *= (-mu * 0.5 * FLOOR_GRID).exp() / geo.kappa[0];
        let lat = self.probe.lattice(&center, t1, ctx.space.horizon());
        for (i, rep) in self.reps.iter().enumerate() {
            let wb = LatticeBasis { matrix: wedge_basis(&lat.matrix, rep.d) };
            let m = systole(&wb).map_err(|e| StrategyError::Setup(e.to_string()))?.0;
            eps0 = eps0.min(m / geo.kappa[i] * (1.0 - 1e-9));
        }
        let kappa_max = geo.kappa.iter().cloned().fold(0.0, f64::max);
        let inv_max = geo.inverse_norm.iter().cloned().fold(0.0, f64::max);
        let eps1 = eps0 / kappa_max;
        let eps2 = eps1 / inv_max;
        let eps3 = (eta_poly * eps2).min(eps0);
        let floor = eps3.min(eps0 * (-contraction[0] * period).exp()).min(initial_floor);
        self.state = Some(BoundedStrategyState {
            basepoint: self.probe.basepoint.clone(),
            weights: w.clone(),
            degrees: self.reps.iter().map(|r| r.d).collect(),
            kappa: geo.kappa,
            inverse_norm: geo.inverse_norm,
            contraction,
            eps0,
            eps1,
            eps2,
            eps3,
            eta_sampled: geo.eta_sampled,
            eta_poly,
            gradient_bound: geo.gradient_bound,
            c_ball,
            a_prime,
            danger_bound: w.k() - 1,
            alice_step,
            period,
            t1,
            initial_floor,
            floor,
        });
        Ok(())
    }
}

/// `wedge^d(U) c` for the tracker transform `U`.
fn lift(transform: &[Vec<Integer>], d: usize, coords: &[i64]) -> Vec<Integer> {
    let wu = wedge_int(transform, d);
    wu.iter()
        .map(|row| {
            let mut acc = Integer::new();
            for (x, &c) in row.iter().zip(coords) {
                if c != 0 {
                    acc += Integer::from(x * c);
                }
            }
            acc
        })
        .collect()
}

pub(crate) fn int_json(xs: &[Integer]) -> Value {
    Value::Array(
        xs.iter()
            .map(|x| Value::Number(x.to_string().parse::<Number>().expect("integer literal")))
            .collect(),
    )
}

/// Certified lower bound for `|P wedge^d(u_Y) v|` over the box around `center`.
pub(crate) fn expanding_lower_bound(phi_full: &[Polynomial], rep: &RepresentationData, center: &[f64], rho: &[f64]) -> f64 {
    rep.expanding.iter().map(|&i| min_abs_on_box(&phi_full[i], center, rho)).fold(0.0, f64::max)
}

/// Renormalized box of the child at offset `z`: its center relative to the
/// parent's center, and its half-widths.
pub(crate) fn child_region(ctx_space: &crate::contraction::GameSpace, step: f64, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let base = &ctx_space.base;
    let sg = &ctx_space.semigroup;
    let c0 = base.center();
    let moved = sg.apply(step, &c0);
    let center = (0..z.len()).map(|i| z[i] + moved[i] - c0[i]).collect();
    let half: Vec<f64> = base.widths().iter().map(|x| 0.5 * x).collect();
    (center, sg.apply(step, &half))
}

impl Strategy for BoundedStrategy {
    fn label(&self) -> String {
        "stay-bounded".into()
    }

    fn propose(&mut self, ctx: &MoveContext<'_>) -> Result<Proposal, StrategyError> {
        check_space(ctx, &self.probe.weights)?;
        if self.state.is_none() {
            self.finalize(ctx)?;
        }
        let st = self.state.clone().expect("finalized above");
        let step = ctx.scale - ctx.parent.t;
        if (step - st.alice_step).abs() > 1e-9 {
            return Err(StrategyError::Setup(format!("built for Alice step {}, game uses {step}", st.alice_step)));
        }
        let half: Vec<f64> = ctx.space.base.widths().iter().map(|x| 0.5 * x).collect();
        let zero = vec![0.0; half.len()];
        let lat = self.probe.lattice(&ctx.parent.center(), ctx.parent.t, ctx.space.horizon());
        let transform: Vec<Vec<Integer>> = self.probe.transform().expect("probe has a tracker").to_vec();

        let mut dangerous: Vec<(DangerRecord, Vec<Polynomial>, usize)> = Vec::new();
        for (ri, rep) in self.reps.iter().enumerate() {
            let wb = wedge_basis(&lat.matrix, rep.d);
            let theta = st.kappa[ri] * (st.contraction[ri] * st.period).exp() * st.eps0 * (1.0 + 1e-9);
            let cands = primitive_short(&wb, theta).map_err(|e| StrategyError::Setup(e.to_string()))?;
            for (coords, norm) in cands {
                let v: Vec<f64> = (0..wb.nrows())
                    .map(|i| (0..wb.ncols()).map(|j| wb[(i, j)] * coords[j] as f64).sum())
                    .collect();
                let phi = phi_projected(&v, rep, Projection::Full).components;
                let short_later = (0..rep.dim())
                    .map(|i| (rep.lambda[i] * st.period).exp() * min_abs_on_box(&phi[i], &zero, &half))
                    .fold(0.0, f64::max);
                if short_later >= st.eps0 {
                    continue;
                }
                if expanding_lower_bound(&phi, rep, &zero, &half) >= st.eps3 {
                    continue;
                }
                let record = DangerRecord { degree: rep.d, coords: lift(&transform, rep.d, &coords), norm };
                dangerous.push((record, phi, ri));
            }
        }
        self.dangerous_per_round.push(dangerous.len());
        if dangerous.len() > st.danger_bound {
            return Err(StrategyError::TooManyDangerous {
                round: ctx.round,
                found: dangerous.len(),
                bound: st.danger_bound,
            });
        }

        let bx = ctx.legal_box()?;
        let mut ann = Annotations::new();
        let list: Vec<Value> = dangerous
            .iter()
            .map(|(r, _, _)| json!({"degree": r.degree, "coords": int_json(&r.coords), "norm": dec12(r.norm)}))
            .collect();
        ann.insert("dangerous".into(), Value::Array(list));
        ann.insert("eps3".into(), dec12(st.eps3));
        if dangerous.is_empty() {
            ann.insert("certified_bound".into(), Value::Null);
            return Ok(Proposal { domain: ctx.place(&bx.lower_corner()), annotations: ann });
        }

        let spacing = st.c_ball / 4.0;
        let counts: Vec<usize> = (0..bx.lower.len())
            .map(|i| (((bx.upper[i] - bx.lower[i]) / spacing).ceil() as usize + 1).clamp(2, 256))
            .collect();
        let total: usize = counts.iter().product();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mut code in 0..total {
            let u: Vec<f64> = counts
                .iter()
                .map(|&n| {
                    let c = code % n;
                    code /= n;
                    c as f64 / (n - 1) as f64
                })
                .collect();
            let z = bx.point(&u);
            let (center, rho) = child_region(ctx.space, step, &z);
            let bound = dangerous
                .iter()
                .map(|(_, phi, ri)| expanding_lower_bound(phi, &self.reps[*ri], &center, &rho))
                .fold(f64::INFINITY, f64::min);
            if best.as_ref().is_none_or(|(b, _)| bound > *b) {
                best = Some((bound, z));
            }
        }
        let (bound, z) = best.expect("grid is nonempty");
        if bound < st.eps3 {
            return Err(StrategyError::NoSafeBall { round: ctx.round, best: bound, required: st.eps3 });
        }
        ann.insert("certified_bound".into(), dec12(bound));
        Ok(Proposal { domain: ctx.place(&z), annotations: ann })
    }

    fn context(&self) -> Option<Value> {
        Some(json!({
            "kind": "bounded",
            "weights": self.probe.weights,
            "basepoint": self.probe.basepoint,
            "state": self.state,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contraction::{AdmissibleBase, ContractionSemigroup, GameSpace};
    use crate::game::{intersection_point, play, Schedule};
    use crate::homogeneous::{orbit_precision, OrbitTracker};
    use crate::linalg::Ring;
    use crate::strategies::bob_cusp_seeking;

    #[test]
    fn affine_min_is_exact() {
        // p = 0.3 + y on |y| <= 0.5: min |p| = 0
        let p = Polynomial::constant(1, 0.3).add(&Polynomial::var(1, 0));
        assert_eq!(min_abs_on_box(&p, &[0.0], &[0.5]), 0.0);
        assert!((min_abs_on_box(&p, &[0.4], &[0.1]) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn sl2_constants() {
        let w = WeightVector::equal(1, 1);
        let reps = vec![RepresentationData::new(&w, 1)];
        let geo = geometry(&reps, &[0.5]).unwrap();
        assert!((geo.kappa[0] - 1.5).abs() < 1e-15);
        assert!((geo.eta_sampled - 0.5).abs() < 1e-12);
        assert!((geo.gradient_bound - 1.0).abs() < 1e-12);
        assert!((geo.inverse_norm[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sl2_game_respects_floor() {
        let w = WeightVector::equal(1, 1);
        let g = LatticeBasis::identity(2);
        let base = AdmissibleBase::unit(1);
        let sg = ContractionSemigroup::for_weights(&w, &base).unwrap();
        let sched = Schedule::new(1.0, 1.0, 1.0, 0.0).unwrap();
        let sp = GameSpace::with_horizon(sg, base, sched.t_prime(15));
        let mut alice = alice_stay_bounded(&w, &g, BoundedConfig::default());
        let trace = play(&mut alice, &mut bob_cusp_seeking(&w, &g, 7), &sp, &sched, 15).unwrap();
        let st = alice.state().unwrap().clone();
        assert!(st.eps3 <= st.eps0 && st.floor > 0.0);
        assert!(alice.dangerous_per_round().iter().all(|&n| n <= 1));
        let (h, _) = intersection_point(&trace).unwrap();
        let mut tr = OrbitTracker::new(&w, &g, &h, orbit_precision(&w, sched.t(15)));
        let mut t = 0.0;
        while t <= sched.t(15) {
            tr.advance_to(t);
            assert!(tr.systole() >= st.floor, "t = {t}: {} < {}", tr.systole(), st.floor);
            t += 0.05;
        }
    }
}
