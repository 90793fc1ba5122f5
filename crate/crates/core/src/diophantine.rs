//! Independent Diophantine oracles: weighted approximation margins,
//! continued fractions, the margin/systole correspondence audit, and a
//! box-counting probe.

use nalgebra::DMatrix;
use rug::{Float, Integer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::homogeneous::{orbit_precision, LatticeBasis, OrbitTracker, WeightVector};

/// Largest count the f64 expansion accepts.
pub const F64_CF_LIMIT: usize = 40;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiophantineError {
    #[error("q_max must be at least 1")]
    EmptySearch,
    #[error("Y is {rows}x{cols}, weights expect {m}x{n}")]
    Shape { rows: usize, cols: usize, m: usize, n: usize },
    #[error("search over {0} denominators is too large")]
    SearchTooLarge(u128),
    #[error("count {0} exceeds the double-precision limit {F64_CF_LIMIT}")]
    TooManyQuotients(usize),
    #[error("need at least {need} {what}, got {got}")]
    TooFew { what: &'static str, need: usize, got: usize },
}

const SEARCH_CAP: u128 = 200_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BadReport {
    /// `Y`, row-major.
    pub y: Vec<Vec<f64>>,
    pub weights: WeightVector,
    pub q_max: u64,
    pub margin: f64,
    pub witness_p: Vec<i64>,
    pub witness_q: Vec<i64>,
    /// `(t, systole of g_t u_Y Z^k)` on a grid up to the matching time.
    pub orbit_profile: Vec<(f64, f64)>,
}

fn check_shape(y: &DMatrix<f64>, w: &WeightVector) -> Result<(), DiophantineError> {
    if y.nrows() != w.m() || y.ncols() != w.n() {
        return Err(DiophantineError::Shape { rows: y.nrows(), cols: y.ncols(), m: w.m(), n: w.n() });
    }
    Ok(())
}

/// `max_i |Y_i q - p_i|^{1/r_i} * max_j |q_j|^{1/s_j}` minimized over
/// `0 < |q|_inf <= q_max` with the optimal `p`.
pub fn bad_margin(y: &DMatrix<f64>, w: &WeightVector, q_max: u64) -> Result<BadReport, DiophantineError> {
    check_shape(y, w)?;
    if q_max == 0 {
        return Err(DiophantineError::EmptySearch);
    }
    let (m, n) = (w.m(), w.n());
    let side = 2 * q_max as u128 + 1;
    let size = side.pow(n as u32);
    if size > SEARCH_CAP {
        return Err(DiophantineError::SearchTooLarge(size));
    }
    let qm = q_max as i64;
    let mut q = vec![-qm; n];
    let mut best = (f64::INFINITY, f64::INFINITY, i64::MAX, vec![0i64; m], vec![0i64; n]);
    loop {
        // one representative per +-q pair: first nonzero coordinate positive
        let first = q.iter().find(|&&x| x != 0);
        if first.is_some_and(|&x| x > 0) {
            let qpart = (0..n).map(|j| (q[j].abs() as f64).powf(1.0 / w.s[j])).fold(0.0, f64::max);
            let mut ypart: f64 = 0.0;
            let mut p = vec![0i64; m];
            for i in 0..m {
                let v: f64 = (0..n).map(|j| y[(i, j)] * q[j] as f64).sum();
                p[i] = v.round() as i64;
                ypart = ypart.max((v - p[i] as f64).abs().powf(1.0 / w.r[i]));
            }
            let val = ypart * qpart;
            // ties go to the smaller q
            let l1: i64 = q.iter().map(|x| x.abs()).sum();
            if (val, qpart, l1) < (best.0, best.1, best.2) {
                best = (val, qpart, l1, p, q.clone());
            }
        }
        let mut i = 0;
        while i < n {
            if q[i] < qm {
                q[i] += 1;
                break;
            }
            q[i] = -qm;
            i += 1;
        }
        if i == n {
            break;
        }
    }
    let s_min = w.s.iter().cloned().fold(f64::INFINITY, f64::min);
    let t_match = (q_max as f64).ln() * s_min.recip().min(1e3);
    let orbit_profile = orbit_profile(y, w, t_match, 0.5);
    Ok(BadReport {
        y: (0..m).map(|i| y.row(i).iter().cloned().collect()).collect(),
        weights: w.clone(),
        q_max,
        margin: best.0,
        witness_p: best.3,
        witness_q: best.4,
        orbit_profile,
    })
}

/// Systole of `g_t u_Y Z^k` on `0, step, 2 step, ..` up to `t_max` (inclusive).
pub fn orbit_profile(y: &DMatrix<f64>, w: &WeightVector, t_max: f64, step: f64) -> Vec<(f64, f64)> {
    let flat: Vec<f64> = (0..y.nrows()).flat_map(|i| (0..y.ncols()).map(move |j| y[(i, j)])).collect();
    let mut tr = OrbitTracker::from_f64(w, &LatticeBasis::identity(w.k()), &flat, orbit_precision(w, t_max));
    let steps = (t_max / step).floor() as usize;
    let mut out = Vec::with_capacity(steps + 2);
    for i in 0..=steps {
        let t = i as f64 * step;
        tr.advance_to(t);
        out.push((t, tr.systole()));
    }
    if (steps as f64) * step < t_max {
        tr.advance_to(t_max);
        out.push((t_max, tr.systole()));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfExpansion {
    pub quotients: Vec<i64>,
    /// True when the expansion stopped before `count` quotients because the
    /// input no longer determines the next one.
    pub truncated: bool,
}

impl CfExpansion {
    /// Convergents `p_k / q_k`.
    pub fn convergents(&self) -> Vec<(Integer, Integer)> {
        let (mut p0, mut q0) = (Integer::from(1), Integer::from(0));
        let (mut p1, mut q1) = (Integer::from(self.quotients.first().copied().unwrap_or(0)), Integer::from(1));
        let mut out = vec![(p1.clone(), q1.clone())];
        for &a in self.quotients.iter().skip(1) {
            let p2 = Integer::from(&p1 * a) + &p0;
            let q2 = Integer::from(&q1 * a) + &q0;
            (p0, q0, p1, q1) = (p1, q1, p2.clone(), q2.clone());
            out.push((p2, q2));
        }
        out
    }
}

/// Exact rational `num / den` with `den > 0`.
#[derive(Clone)]
struct Ratio {
    num: Integer,
    den: Integer,
}

impl Ratio {
    fn floor(&self) -> Integer {
        self.num.clone().div_rem_floor(self.den.clone()).0
    }

    fn is_integer(&self) -> bool {
        self.num.is_divisible(&self.den)
    }

    /// `1 / (self - a)` for `a < self`.
    fn invert_minus(&self, a: &Integer) -> Ratio {
        Ratio { num: self.den.clone(), den: Integer::from(&self.num - Integer::from(a * &self.den)) }
    }
}

/// Quotients of the rational with least denominator in `[lo, hi]`, cut at
/// `count` quotients or when a convergent denominator exceeds `q_limit`.
fn simplest_in(mut lo: Ratio, mut hi: Ratio, count: usize, q_limit: &Integer) -> CfExpansion {
    let mut quotients = Vec::new();
    let (mut q0, mut q1) = (Integer::from(0), Integer::from(1));
    loop {
        if quotients.len() == count {
            return CfExpansion { quotients, truncated: false };
        }
        let a = lo.floor();
        let last = lo.is_integer() || hi.floor() > a;
        let a = if lo.is_integer() || !last { a } else { a + 1 };
        if !quotients.is_empty() {
            let q2 = Integer::from(&q1 * &a) + &q0;
            if q2 > *q_limit {
                return CfExpansion { quotients, truncated: true };
            }
            (q0, q1) = (q1, q2);
        }
        let Some(ai) = a.to_i64() else {
            return CfExpansion { quotients, truncated: true };
        };
        quotients.push(ai);
        if last {
            return CfExpansion { quotients, truncated: false };
        }
        (lo, hi) = (hi.invert_minus(&a), lo.invert_minus(&a));
    }
}

/// `y` widened by `ulps` units in its last place, as exact rationals.
fn ulp_interval(y: &Float, ulps: u32) -> Option<(Ratio, Ratio)> {
    let (mant, exp) = y.to_integer_exp()?;
    let scale = |m: Integer| {
        if exp >= 0 {
            Ratio { num: m << exp as u32, den: Integer::from(1) }
        } else {
            Ratio { num: m, den: Integer::from(1) << (-exp) as u32 }
        }
    };
    Some((scale(Integer::from(&mant - ulps)), scale(mant + ulps)))
}

fn expand_float(y: &Float, count: usize, q_limit: &Integer) -> CfExpansion {
    if count == 0 {
        return CfExpansion { quotients: vec![], truncated: false };
    }
    match ulp_interval(y, 2) {
        Some((lo, hi)) if !y.is_zero() => simplest_in(lo, hi, count, q_limit),
        _ => CfExpansion { quotients: vec![0], truncated: false },
    }
}

/// Partial quotients of `y`, read as the simplest rational within a few
/// ulps. Expansion stops once a convergent denominator passes `2^26`, where
/// `1/q^2` meets the double rounding error.
pub fn continued_fraction(y: f64, count: usize) -> Result<CfExpansion, DiophantineError> {
    if count > F64_CF_LIMIT {
        return Err(DiophantineError::TooManyQuotients(count));
    }
    Ok(expand_float(&Float::with_val(53, y), count, &(Integer::from(1) << 26)))
}

/// Multiprecision variant; trusted while `q^2` stays below `2^(prec - 8)`.
pub fn continued_fraction_hp(y: &Float, count: usize) -> CfExpansion {
    let limit = Integer::from(1) << (y.prec().saturating_sub(8) / 2);
    expand_float(y, count, &limit)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bands {
    pub margin_lo: f64,
    pub margin_hi: f64,
    pub floor_lo: f64,
    pub floor_hi: f64,
}

impl Bands {
    pub fn symmetric(lo: f64, hi: f64) -> Self {
        Bands { margin_lo: lo, margin_hi: hi, floor_lo: lo, floor_hi: hi }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Consistent,
    Inconsistent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaniRow {
    pub y: Vec<Vec<f64>>,
    pub margin: f64,
    pub floor: f64,
    pub verdict: Verdict,
    pub witness_p: Vec<i64>,
    pub witness_q: Vec<i64>,
    /// Time at which the systole floor is attained (grid minimum refined by
    /// golden-section search).
    pub floor_time: f64,
}

/// First time at which every `|q_j| <= q_max` has shrunk to `floor_hi`, so
/// a small margin found by the search has had room to show in the orbit.
pub fn audit_horizon(w: &WeightVector, q_max: u64, floor_hi: f64) -> f64 {
    let s_min = w.s.iter().cloned().fold(f64::INFINITY, f64::min);
    (q_max as f64 / floor_hi).ln() / s_min
}

/// Golden-section search for the systole minimum on `[lo, hi]`, which
/// brackets the grid minimum. Between grid points the systole is a minimum
/// of log-convex functions of `t`, so the grid can overshoot the floor.
fn refine_floor(y: &DMatrix<f64>, w: &WeightVector, t_max: f64, mut lo: f64, mut hi: f64) -> (f64, f64) {
    const INV_PHI2: f64 = 0.381_966_011_250_105_1;
    let flat: Vec<f64> = (0..y.nrows()).flat_map(|i| (0..y.ncols()).map(move |j| y[(i, j)])).collect();
    let mut tr = OrbitTracker::from_f64(w, &LatticeBasis::identity(w.k()), &flat, orbit_precision(w, t_max));
    let mut at = |t: f64| {
        tr.advance_to(t);
        tr.systole()
    };
    let mut x1 = lo + INV_PHI2 * (hi - lo);
    let mut x2 = hi - INV_PHI2 * (hi - lo);
    let (mut f1, mut f2) = (at(x1), at(x2));
    while hi - lo > 1e-9 {
        if f1 <= f2 {
            hi = x2;
            (x2, f2) = (x1, f1);
            x1 = lo + INV_PHI2 * (hi - lo);
            f1 = at(x1);
        } else {
            lo = x1;
            (x1, f1) = (x2, f2);
            x2 = hi - INV_PHI2 * (hi - lo);
            f2 = at(x2);
        }
    }
    if f1 <= f2 { (x1, f1) } else { (x2, f2) }
}

/// Compares the approximation margin with the systole floor on `[0, t_max]`;
/// only a large/small mismatch outside the bands is flagged.
pub fn dani_audit(
    y: &DMatrix<f64>,
    w: &WeightVector,
    q_max: u64,
    t_max: f64,
    t_step: f64,
    bands: &Bands,
) -> Result<DaniRow, DiophantineError> {
    let report = bad_margin(y, w, q_max)?;
    let profile = orbit_profile(y, w, t_max, t_step);
    let (grid_time, grid_floor) = profile.iter().fold((0.0, f64::INFINITY), |a, &b| if b.1 < a.1 { b } else { a });
    let (floor_time, floor) = refine_floor(y, w, t_max, (grid_time - t_step).max(0.0), (grid_time + t_step).min(t_max));
    let (floor_time, floor) = if floor < grid_floor { (floor_time, floor) } else { (grid_time, grid_floor) };
    let margin = report.margin;
    let bad = (margin > bands.margin_hi && floor < bands.floor_lo) || (margin < bands.margin_lo && floor > bands.floor_hi);
    Ok(DaniRow {
        y: report.y,
        margin,
        floor,
        verdict: if bad { Verdict::Inconsistent } else { Verdict::Consistent },
        witness_p: report.witness_p,
        witness_q: report.witness_q,
        floor_time,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionEstimate {
    pub estimate: f64,
    pub scales: Vec<f64>,
    pub counts: Vec<usize>,
    pub label: String,
}

/// Least-squares slope of `log N(eps)` against `-log eps`, where `N` counts
/// occupied grid cells of side `eps`.
pub fn estimate_box_dimension(points: &[Vec<f64>], scales: &[f64]) -> Result<DimensionEstimate, DiophantineError> {
    if points.len() < 100 {
        return Err(DiophantineError::TooFew { what: "points", need: 100, got: points.len() });
    }
    if scales.len() < 3 {
        return Err(DiophantineError::TooFew { what: "scales", need: 3, got: scales.len() });
    }
    let counts: Vec<usize> = scales
        .iter()
        .map(|&eps| {
            let mut cells: Vec<Vec<i64>> =
                points.iter().map(|p| p.iter().map(|x| (x / eps).floor() as i64).collect()).collect();
            cells.sort();
            cells.dedup();
            cells.len()
        })
        .collect();
    let xs: Vec<f64> = scales.iter().map(|e| -e.ln()).collect();
    let ys: Vec<f64> = counts.iter().map(|&c| (c as f64).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(DimensionEstimate {
        estimate: if sxx > 0.0 { sxy / sxx } else { 0.0 },
        scales: scales.to_vec(),
        counts,
        label: "heuristic box-counting estimate".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one(y: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, y)
    }

    fn brute_1d(y: f64, q_max: i64) -> f64 {
        let mut best = f64::INFINITY;
        for q in 1..=q_max {
            for p in ((q as f64 * y).floor() as i64 - 1)..=((q as f64 * y).ceil() as i64 + 1) {
                best = best.min(q as f64 * (q as f64 * y - p as f64).abs());
            }
        }
        best
    }

    #[test]
    fn zero_matrix_margin() {
        let w = WeightVector::new(vec![1.0], vec![0.5, 0.5]).unwrap();
        let r = bad_margin(&DMatrix::zeros(1, 2), &w, 1).unwrap();
        assert_eq!(r.margin, 0.0);
        assert_eq!(r.witness_p, vec![0]);
        assert_eq!(r.witness_q.iter().map(|x| x.abs()).sum::<i64>(), 1);
        let r = bad_margin(&one(0.0), &WeightVector::equal(1, 1), 1).unwrap();
        assert_eq!((r.witness_p, r.witness_q), (vec![0], vec![1]));
    }

    #[test]
    fn golden_ratio_margin_matches_brute_force() {
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let r = bad_margin(&one(phi), &WeightVector::equal(1, 1), 10_000).unwrap();
        assert!((r.margin - brute_1d(phi, 10_000)).abs() < 1e-12);
        // attained at q = 1: |phi - 2| = (3 - sqrt 5)/2
        assert!((r.margin - (3.0 - 5f64.sqrt()) / 2.0).abs() < 1e-12);
        assert_eq!((r.witness_p[0], r.witness_q[0]), (2, 1));
    }

    #[test]
    fn rational_margin() {
        let r = bad_margin(&one(1.0 / 3.0), &WeightVector::equal(1, 1), 3).unwrap();
        assert!(r.margin < 1e-15);
        assert_eq!((r.witness_p[0], r.witness_q[0]), (1, 3));
    }

    #[test]
    fn continued_fraction_examples() {
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let cf = continued_fraction(phi, 30).unwrap();
        assert_eq!(cf.quotients, vec![1; 30]);
        assert!(!cf.truncated);
        let cf = continued_fraction(7.0 / 3.0, 10).unwrap();
        assert_eq!(cf.quotients[..2], [2, 3]);
        // 7/3 is not a dyadic rational; the tail beyond the trust horizon is cut
        assert!(cf.truncated || cf.quotients.len() < 10);
        let exact = continued_fraction(2.375, 10).unwrap();
        assert_eq!(exact.quotients, vec![2, 2, 1, 2]);
        assert!(!exact.truncated);
        assert!(continued_fraction(phi, 41).is_err());
    }

    #[test]
    fn hp_expansion_of_golden_ratio() {
        let mut y = Float::with_val(256, 5);
        y.sqrt_mut();
        y += 1;
        y /= 2;
        let cf = continued_fraction_hp(&y, 100);
        assert_eq!(cf.quotients, vec![1; 100]);
    }

    #[test]
    fn dani_audit_examples() {
        let w = WeightVector::equal(1, 1);
        let bands = Bands::symmetric(1e-3, 1e-1);
        let row = dani_audit(&one(0.0), &w, 100, 10.0, 0.1, &bands).unwrap();
        assert_eq!(row.margin, 0.0);
        assert!((row.floor - (-10f64).exp()).abs() < 1e-12);
        assert_eq!(row.verdict, Verdict::Consistent);
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let row = dani_audit(&one(phi), &w, 10_000, 10_000f64.ln(), 0.05, &bands).unwrap();
        assert!(row.floor > 0.5, "{}", row.floor);
        assert_eq!(row.verdict, Verdict::Consistent);
    }

    #[test]
    fn dani_floor_sees_between_grid_points() {
        // witness q = (8, -2), p = 3; its orbit vector has sup norm
        // max(e^t |x|, 8 e^{-t/2}), minimal value 8 (|x|/8)^{1/3}
        let w = WeightVector::new(vec![1.0], vec![0.5, 0.5]).unwrap();
        let y = DMatrix::from_row_slice(1, 2, &[0.41790867519146135, 0.17162705956273716]);
        let x = (8.0 * y[(0, 0)] - 2.0 * y[(0, 1)] - 3.0f64).abs();
        let vector_min = 8.0 * (x / 8.0).cbrt();
        let row = dani_audit(&y, &w, 100, audit_horizon(&w, 100, 0.1), 0.05, &Bands::symmetric(1e-3, 1e-1)).unwrap();
        let grid = orbit_profile(&y, &w, 13.8, 0.05).into_iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        assert!(grid > 0.1 && vector_min < 0.1, "{grid} {vector_min}");
        assert!(row.floor <= vector_min + 1e-9 && row.floor <= grid, "{}", row.floor);
        assert_eq!(row.verdict, Verdict::Consistent);
    }

    #[test]
    fn box_dimension_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let scales: Vec<f64> = (2..=5).map(|j| 0.5f64.powi(j)).collect();
        let square: Vec<Vec<f64>> = (0..10_000).map(|_| vec![rng.random(), rng.random()]).collect();
        let d = estimate_box_dimension(&square, &scales).unwrap().estimate;
        assert!((1.8..=2.0).contains(&d), "{d}");
        let line: Vec<Vec<f64>> = (0..10_000).map(|_| {
            let s: f64 = rng.random();
            vec![s, 0.5 * s + 0.1]
        }).collect();
        let d = estimate_box_dimension(&line, &scales).unwrap().estimate;
        assert!((0.9..=1.1).contains(&d), "{d}");
        let dot = vec![vec![0.3, 0.3]; 100];
        assert_eq!(estimate_box_dimension(&dot, &scales).unwrap().estimate, 0.0);
        assert!(estimate_box_dimension(&dot[..50], &scales).is_err());
    }

    proptest! {
        #[test]
        fn margin_monotone_in_search_range(y in 0.0f64..1.0, q in 1u64..200) {
            let w = WeightVector::equal(1, 1);
            let a = bad_margin(&one(y), &w, q).unwrap().margin;
            let b = bad_margin(&one(y), &w, q + 17).unwrap().margin;
            prop_assert!(b <= a);
        }

        #[test]
        fn margin_shift_invariant(y in 0.0f64..1.0, shift in -5i64..5) {
            let w = WeightVector::equal(1, 1);
            let a = bad_margin(&one(y), &w, 300).unwrap().margin;
            let b = bad_margin(&one(y + shift as f64), &w, 300).unwrap().margin;
            // the shifted input is rounded once, so agreement is up to q_max * ulp
            prop_assert!((a - b).abs() <= 1e-9);
        }

        #[test]
        fn margin_weighted_shift_invariant(a in 0.0f64..1.0, b in 0.0f64..1.0, s in -3i64..3) {
            let w = WeightVector::new(vec![1.0], vec![1.0 / 3.0, 2.0 / 3.0]).unwrap();
            let y = DMatrix::from_row_slice(1, 2, &[a, b]);
            let y2 = DMatrix::from_row_slice(1, 2, &[a + s as f64, b - s as f64]);
            let m1 = bad_margin(&y, &w, 40).unwrap().margin;
            let m2 = bad_margin(&y2, &w, 40).unwrap().margin;
            prop_assert!((m1 - m2).abs() <= 1e-6);
        }

        #[test]
        fn transposed_scalar_problem(y in -3.0f64..3.0) {
            let w = WeightVector::equal(1, 1);
            let a = bad_margin(&one(y), &w, 500).unwrap();
            let b = bad_margin(&one(y).transpose(), &w, 500).unwrap();
            prop_assert_eq!(a.margin, b.margin);
        }

        #[test]
        fn convergents_approximate(y in 0.0f64..10.0) {
            let cf = continued_fraction(y, 25).unwrap();
            for (p, q) in cf.convergents() {
                let (p, q) = (p.to_f64(), q.to_f64());
                // the expanded rational sits within a few ulps of y
                prop_assert!((y - p / q).abs() <= 1.0 / (q * q) + 8.0 * f64::EPSILON * y.abs());
            }
        }
    }
}
