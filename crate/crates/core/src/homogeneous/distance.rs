//! A computable stand-in for the right-invariant distance on `SL_k(R)/SL_k(Z)`.
//!
//! `d(x, y) = min_gamma |log(x gamma y^{-1})|_F` over a finite candidate set of
//! integer matrices around `round(x^{-1} y)`, evaluated on reduced
//! representatives and symmetrized.

use nalgebra::DMatrix;

use super::LatticeBasis;
use crate::linalg::{expm, logm};

const NO_CANDIDATE: f64 = 1e18;

/// Minimum over the candidates, or `cap` if no candidate is below it.
fn directed(x: &DMatrix<f64>, y: &DMatrix<f64>, cap: f64) -> f64 {
    let k = x.nrows();
    let (Some(xi), Some(yi)) = (x.clone().try_inverse(), y.clone().try_inverse()) else {
        return cap;
    };
    let g0 = (&xi * y).map(|v| v.round());
    if g0.iter().any(|v| v.abs() > 1e12) {
        return cap;
    }
    let cells = k * k;
    let total = 3usize.pow(cells as u32);
    // x (g0 + E) y^{-1} = base + sum_ij E_ij x_i (y^{-1})^j
    let base = x * &g0 * &yi;
    let rank_one: Vec<DMatrix<f64>> = (0..cells).map(|cell| x.column(cell / k) * yi.row(cell % k)).collect();
    let mut gm = vec![0.0; cells];
    let mut a = DMatrix::<f64>::zeros(k, k);
    let mut candidates: Vec<(f64, usize)> = Vec::new();
    for code in 0..total {
        offset_matrix(&g0, code, &mut gm);
        // small integer entries: the f64 determinant is exact after rounding
        if (small_det(&gm, k) - 1.0).abs() > 0.5 {
            continue;
        }
        fill_candidate(&base, &rank_one, code, &mut a);
        let mut off = 0.0;
        for j in 0..k {
            for i in 0..k {
                let d = a[(i, j)] - if i == j { 1.0 } else { 0.0 };
                off += d * d;
            }
        }
        let lower = (1.0 + off.sqrt()).ln();
        if lower < cap {
            candidates.push((lower, code));
        }
    }
    candidates.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    let mut best = cap;
    for (lower, code) in candidates {
        // |log A| >= ln(1 + |A - I|) prunes the rest
        if lower >= best {
            break;
        }
        fill_candidate(&base, &rank_one, code, &mut a);
        if let Some(l) = logm(&a) {
            best = best.min(l.norm());
        }
    }
    best
}

/// Entries of `g0 + E` for the offset pattern `E` numbered `code`, row-major.
fn offset_matrix(g0: &DMatrix<f64>, code: usize, out: &mut [f64]) {
    let k = g0.nrows();
    let mut c = code;
    for (cell, v) in out.iter_mut().enumerate() {
        *v = g0[(cell / k, cell % k)] + (c % 3) as f64 - 1.0;
        c /= 3;
    }
}

fn fill_candidate(base: &DMatrix<f64>, rank_one: &[DMatrix<f64>], code: usize, a: &mut DMatrix<f64>) {
    a.copy_from(base);
    let mut c = code;
    for r in rank_one {
        match c % 3 {
            0 => *a -= r,
            2 => *a += r,
            _ => {}
        }
        c /= 3;
    }
}

fn small_det(m: &[f64], k: usize) -> f64 {
    match k {
        1 => m[0],
        2 => m[0] * m[3] - m[1] * m[2],
        3 => {
            m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) + m[2] * (m[3] * m[7] - m[4] * m[6])
        }
        _ => DMatrix::from_row_slice(k, k, m).determinant(),
    }
}

/// Distance proxy between the lattices spanned by the columns of `x` and `y`.
pub fn flow_distance(x: &LatticeBasis, y: &LatticeBasis) -> f64 {
    let (xr, _) = x.reduced();
    let (yr, _) = y.reduced();
    reduced_distance(&xr.matrix, &yr.matrix, NO_CANDIDATE)
}

fn reduced_distance(xr: &DMatrix<f64>, yr: &DMatrix<f64>, cap: f64) -> f64 {
    let one = directed(xr, yr, cap);
    one.min(directed(yr, xr, one))
}

/// Relative accuracy of the proven lower bound in [`FlowSegment::bracket`].
pub const SEGMENT_SEARCH_TOL: f64 = 1e-3;
/// Segment distances saturate here. Below it the candidate set around
/// `round(x^{-1} y)` contains the minimizer, so the proxy is continuous and
/// its slope along the flow is controlled.
pub const TRUST_RADIUS: f64 = 0.5;
const EVAL_BUDGET: usize = 20_000;
const GOLDEN: f64 = 0.381_966_011_250_105_1;

/// Allowed gap between the bracket ends when the best value so far is
/// `best`: relative below `0.9 TRUST_RADIUS`, widening to half the trust
/// radius at saturation so that far points stay cheap.
pub fn search_gap(best: f64) -> f64 {
    SEGMENT_SEARCH_TOL * best + 1e-12 + 5.0 * (best - 0.9 * TRUST_RADIUS).max(0.0)
}

/// Result of [`FlowSegment::bracket`], both saturated at `TRUST_RADIUS`.
/// `lower` is a proven lower bound on the distance (minus infinity if the
/// search budget ran out) and `value` is attained at some point of the segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentDistance {
    pub lower: f64,
    pub value: f64,
}

/// The segment `{exp(tau X) z : 0 <= tau <= T}` with a Lipschitz-pruned
/// nearest-point search.
#[derive(Debug, Clone)]
pub struct FlowSegment {
    pub z: LatticeBasis,
    pub generator: DMatrix<f64>,
    pub length: f64,
    lipschitz: f64,
}

impl FlowSegment {
    pub fn new(z: &LatticeBasis, generator: DMatrix<f64>, length: f64) -> Self {
        // tau -> |log(exp(tau X) A)|_F has slope at most |X|_F |dexp_L^{-1}|
        // with |ad L| <= 2|L|_F <= s; the Bernoulli series gives
        // |dexp^{-1}| <= s/2 + 2 - (s/2) cot(s/2)
        let h = TRUST_RADIUS;
        let lipschitz = generator.norm() * (h + 2.0 - h / h.tan());
        FlowSegment { z: z.clone(), generator, length: length.max(0.0), lipschitz }
    }

    pub fn point(&self, tau: f64) -> LatticeBasis {
        self.z.left_mul(&expm(&(&self.generator * tau)))
    }

    fn profile(&self, p: &LatticeBasis) -> impl Fn(f64) -> f64 + '_ {
        let pr = p.reduced().0.matrix;
        move |tau: f64| reduced_distance(&pr, &self.point(tau).reduced().0.matrix, TRUST_RADIUS)
    }

    /// Distance from `p` to the segment, saturated at `TRUST_RADIUS`. See
    /// [`FlowSegment::bracket`].
    pub fn distance(&self, p: &LatticeBasis) -> f64 {
        self.bracket(p).value
    }

    /// Lipschitz search for the nearest point. The global minimum is
    /// bracketed to within [`search_gap`]; every basin the
    /// bracket leaves open is then refined by golden-section search, so
    /// nearby inputs give values that agree far more closely than the bracket.
    pub fn bracket(&self, p: &LatticeBasis) -> SegmentDistance {
        self.bracket_above(p, f64::INFINITY)
    }

    /// As [`FlowSegment::bracket`], but the lower bound is only pushed up to
    /// `threshold`: the result satisfies `lower >= min(value - gap, threshold)`.
    /// Much cheaper when the question is whether the distance exceeds a
    /// small `threshold`.
    pub fn bracket_above(&self, p: &LatticeBasis, threshold: f64) -> SegmentDistance {
        let f = self.profile(p);
        let target = |best: f64| (best - search_gap(best)).min(threshold);
        if self.length == 0.0 || self.lipschitz == 0.0 {
            let v = f(0.0);
            return SegmentDistance { lower: v, value: v };
        }
        let mut best = f(0.0).min(f(self.length));
        let mut stack = vec![(0.0, self.length, f64::NEG_INFINITY)];
        // pruned intervals with their floors, revisited when `best` improves
        let mut parked: Vec<(f64, f64, f64)> = Vec::new();
        let mut evals = 0;
        let mut exhausted = false;
        loop {
            while let Some((a, b, floor)) = stack.pop() {
                if floor >= target(best) || evals >= EVAL_BUDGET {
                    exhausted |= floor < target(best);
                    parked.push((a, b, floor));
                    continue;
                }
                let mid = 0.5 * (a + b);
                let v = f(mid);
                evals += 1;
                best = best.min(v);
                let bound = v - 0.5 * (b - a) * self.lipschitz;
                stack.push((a, mid, bound));
                stack.push((mid, b, bound));
            }
            if exhausted {
                break;
            }
            let (keep, redo): (Vec<_>, Vec<_>) = parked.into_iter().partition(|p| p.2 >= target(best));
            parked = keep;
            if redo.is_empty() {
                break;
            }
            stack = redo;
        }
        let mut lower = if exhausted { f64::NEG_INFINITY } else { parked.iter().map(|p| p.2).fold(f64::INFINITY, f64::min) };
        let mut open: Vec<(f64, f64)> = parked.iter().filter(|p| p.2 < best).map(|p| (p.0, p.1)).collect();
        // merge touching open intervals into basins
        open.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut basins: Vec<(f64, f64)> = Vec::new();
        for (a, b) in open {
            match basins.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => basins.push((a, b)),
            }
        }
        let mut value = best;
        for (a, b) in basins {
            value = value.min(self.golden(&f, a, b));
        }
        lower = lower.min(value);
        SegmentDistance { lower, value }
    }

    fn golden(&self, f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let mut x1 = lo + GOLDEN * (hi - lo);
        let mut x2 = hi - GOLDEN * (hi - lo);
        let (mut f1, mut f2) = (f(x1), f(x2));
        while hi - lo > 1e-12 * self.length.max(1.0) {
            if f1 <= f2 {
                hi = x2;
                (x2, f2) = (x1, f1);
                x1 = lo + GOLDEN * (hi - lo);
                f1 = f(x1);
            } else {
                lo = x1;
                (x1, f1) = (x2, f2);
                x2 = hi - GOLDEN * (hi - lo);
                f2 = f(x2);
            }
        }
        f1.min(f2)
    }

    /// Certifies that the distance from `p` to the segment exceeds `r`:
    /// every part of the segment is either pruned by the Lipschitz bound or
    /// evaluated above `r`. Returns false when a point within `r` is found or
    /// the evaluation budget runs out, and always for `r >= TRUST_RADIUS`.
    pub fn exceeds(&self, p: &LatticeBasis, r: f64) -> bool {
        let f = self.profile(p);
        if f(0.0) <= r {
            return false;
        }
        if self.length == 0.0 {
            return true;
        }
        if f(self.length) <= r {
            return false;
        }
        let mut stack = vec![(0.0, self.length)];
        let mut evals = 0;
        while let Some((a, b)) = stack.pop() {
            let mid = 0.5 * (a + b);
            let v = f(mid);
            if v <= r {
                return false;
            }
            evals += 1;
            if v - 0.5 * (b - a) * self.lipschitz <= r {
                if evals >= EVAL_BUDGET {
                    return false;
                }
                // strictly inside the ball where the Lipschitz bound keeps f above r
                let rho = 0.999 * (v - r) / self.lipschitz;
                stack.push((a, mid - rho));
                stack.push((mid + rho, b));
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homogeneous::{flow, flow_generator, u_of, WeightVector};

    fn brute(x: &DMatrix<f64>, y: &DMatrix<f64>, r: i64) -> f64 {
        let yi = y.clone().try_inverse().unwrap();
        let mut best = f64::INFINITY;
        for a in -r..=r {
            for b in -r..=r {
                for c in -r..=r {
                    for d in -r..=r {
                        if a * d - b * c != 1 {
                            continue;
                        }
                        let g = DMatrix::from_row_slice(2, 2, &[a as f64, b as f64, c as f64, d as f64]);
                        if let Some(l) = logm(&(x * &g * &yi)) {
                            best = best.min(l.norm());
                        }
                        let g = g.try_inverse().unwrap();
                        if let Some(l) = logm(&(y * g * x.clone().try_inverse().unwrap())) {
                            best = best.min(l.norm());
                        }
                    }
                }
            }
        }
        best
    }

    #[test]
    fn distance_to_self_is_zero() {
        let x = LatticeBasis::new(u_of(&DMatrix::from_element(1, 1, 0.3))).unwrap();
        assert!(flow_distance(&x, &x) < 1e-12);
    }

    #[test]
    fn small_perturbation() {
        let x = LatticeBasis::new(u_of(&DMatrix::from_element(1, 1, 0.3))).unwrap();
        let e = DMatrix::from_row_slice(2, 2, &[0.0, 1e-4, 0.0, 0.0]);
        let y = x.left_mul(&expm(&e));
        let d = flow_distance(&x, &y);
        assert!((0.5e-4..=2e-4).contains(&d), "{d}");
    }

    #[test]
    fn unipotent_shift_matches_brute_force() {
        let x = LatticeBasis::identity(2);
        let y = LatticeBasis::new(u_of(&DMatrix::from_element(1, 1, 1.0))).unwrap();
        let d = flow_distance(&x, &y);
        assert!((d - brute(&x.matrix, &y.matrix, 3)).abs() < 1e-9);
        assert!(d < 1e-12);
        let y = LatticeBasis::new(u_of(&DMatrix::from_element(1, 1, 0.4))).unwrap().left_mul(&flow(0.2, &WeightVector::equal(1, 1)));
        let d = flow_distance(&x, &y);
        assert!((d - brute(&x.matrix, &y.matrix, 3)).abs() < 1e-9);
    }

    #[test]
    fn symmetric() {
        let x = LatticeBasis::new(u_of(&DMatrix::from_element(1, 1, 0.77))).unwrap().left_mul(&flow(0.4, &WeightVector::equal(1, 1)));
        let y = LatticeBasis::new(u_of(&DMatrix::from_element(1, 1, -0.2))).unwrap();
        assert!((flow_distance(&x, &y) - flow_distance(&y, &x)).abs() < 1e-9);
    }

    #[test]
    fn segment_distance_finds_interior_point() {
        let w = WeightVector::equal(1, 1);
        let seg = FlowSegment::new(&LatticeBasis::identity(2), flow_generator(&w), 4.0);
        let p = seg.point(1.7);
        assert!(seg.distance(&p) < 1e-6);
        let e = DMatrix::from_row_slice(2, 2, &[0.0, 0.05, 0.0, 0.0]);
        let q = p.left_mul(&expm(&e));
        let d = seg.distance(&q);
        assert!(d > 0.02 && d <= 0.05 + 1e-9, "{d}");
        assert!(seg.exceeds(&q, 0.5 * d));
        assert!(!seg.exceeds(&q, d + 1e-9));
        let b = seg.bracket(&q);
        assert!(b.lower <= b.value && b.lower >= b.value * (1.0 - SEGMENT_SEARCH_TOL) - 1e-12);
    }

    #[test]
    fn saturated_profile_respects_lipschitz_constant() {
        let w = WeightVector::equal(1, 1);
        let seg = FlowSegment::new(&LatticeBasis::identity(2), flow_generator(&w), 4.0);
        for (i, c) in [0.37, -0.2, 0.45].into_iter().enumerate() {
            let e = DMatrix::from_row_slice(2, 2, &[0.1 * i as f64, 0.3 - c, c, -0.1 * i as f64]);
            let q = seg.point(0.7 * i as f64).left_mul(&expm(&e));
            let f = seg.profile(&q);
            let h = 1e-3;
            let vals: Vec<f64> = (0..=4000).map(|j| f(j as f64 * h)).collect();
            for pair in vals.windows(2) {
                assert!((pair[1] - pair[0]).abs() <= seg.lipschitz * h * (1.0 + 1e-9), "{pair:?}");
            }
        }
    }

    #[test]
    fn segment_distance_is_stable_under_tiny_perturbation() {
        let w = WeightVector::equal(1, 1);
        let seg = FlowSegment::new(&LatticeBasis::identity(2), flow_generator(&w), 4.0);
        let e = DMatrix::from_row_slice(2, 2, &[0.0, 0.3, 0.0, 0.0]);
        let q = seg.point(2.2).left_mul(&expm(&e));
        let nudge = DMatrix::from_row_slice(2, 2, &[0.0, 1e-13, 0.0, 0.0]);
        let a = seg.distance(&q);
        let b = seg.distance(&q.left_mul(&expm(&nudge)));
        assert!((a - b).abs() < 1e-10, "{a} {b}");
        let grid = (0..=4000).map(|i| flow_distance(&q, &seg.point(i as f64 * 1e-3))).fold(f64::INFINITY, f64::min);
        assert!(a <= grid + 1e-12 && a >= grid - 1e-5, "{a} vs grid {grid}");
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn bracket_agrees_with_dense_grid(tau in 0.0f64..4.0, a in -0.4f64..0.4, b in -0.4f64..0.4, c in -0.4f64..0.4) {
            let w = WeightVector::equal(1, 1);
            let seg = FlowSegment::new(&LatticeBasis::identity(2), flow_generator(&w), 4.0);
            let e = DMatrix::from_row_slice(2, 2, &[a, b, c, -a]);
            let q = seg.point(tau).left_mul(&expm(&e));
            let grid = (0..=4000).map(|i| flow_distance(&q, &seg.point(i as f64 * 1e-3))).fold(f64::INFINITY, f64::min);
            let r = seg.bracket(&q);
            let grid = grid.min(TRUST_RADIUS);
            proptest::prop_assert!(r.value <= grid + search_gap(grid), "{:?} vs grid {}", r, grid);
            proptest::prop_assert!(r.lower <= r.value && r.lower >= r.value - search_gap(r.value), "{:?}", r);
            proptest::prop_assert!(r.lower <= grid, "{:?} vs grid {}", r, grid);
            proptest::prop_assert!(r.value >= grid - 1e-3 * seg.lipschitz, "{:?} vs grid {}", r, grid);
            let cheap = seg.bracket_above(&q, 0.01);
            proptest::prop_assert!(cheap.lower <= grid && cheap.lower >= (grid - search_gap(grid)).min(0.01), "{:?}", cheap);
            proptest::prop_assert!(cheap.value >= r.lower, "{:?}", cheap);
        }
    }
}
