//! Weighted diagonal flows on the space of unimodular lattices.

mod distance;
mod orbit;
mod wedge;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{gcd_all, int_det, lll, IntMat};

pub use distance::{flow_distance, search_gap, FlowSegment, SegmentDistance, SEGMENT_SEARCH_TOL, TRUST_RADIUS};
pub use orbit::{orbit_precision, OrbitTracker};
pub use wedge::{
    expanding_check, expanding_check_with, phi_poly, phi_projected, wedge_basis, wedge_hp, wedge_int,
    ExpandingVerdict, PolyMap, Polynomial, Projection, RepresentationData,
};

pub const MAX_SYSTOLE_DIM: usize = 6;
pub const MAX_DANGER_DIM: usize = 3;
const ENUMERATION_CAP: u128 = 50_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HomogeneousError {
    #[error("dimension {k} exceeds supported maximum {max}")]
    DimensionTooLarge { k: usize, max: usize },
    #[error("weights invalid: {0}")]
    InvalidWeights(String),
    #[error("basis is not unimodular (det = {0})")]
    NotUnimodular(f64),
    #[error("wedge degree {d} outside 1..{k}")]
    DegreeOutOfRange { d: usize, k: usize },
    #[error("enumeration box of {0} points is too large")]
    EnumerationTooLarge(u128),
}

/// The weights `(r; s)` of the flow `diag(e^{r_i t}, e^{-s_j t})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub r: Vec<f64>,
    pub s: Vec<f64>,
}

impl WeightVector {
    pub fn new(r: Vec<f64>, s: Vec<f64>) -> Result<Self, HomogeneousError> {
        if r.is_empty() || s.is_empty() {
            return Err(HomogeneousError::InvalidWeights("both blocks must be nonempty".into()));
        }
        if r.iter().chain(&s).any(|&x| !(x > 0.0)) {
            return Err(HomogeneousError::InvalidWeights("entries must be positive".into()));
        }
        for (name, v) in [("r", &r), ("s", &s)] {
            let sum: f64 = v.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(HomogeneousError::InvalidWeights(format!("sum of {name} is {sum}, expected 1")));
            }
        }
        Ok(WeightVector { r, s })
    }

    pub fn equal(m: usize, n: usize) -> Self {
        WeightVector { r: vec![1.0 / m as f64; m], s: vec![1.0 / n as f64; n] }
    }

    pub fn m(&self) -> usize {
        self.r.len()
    }

    pub fn n(&self) -> usize {
        self.s.len()
    }

    pub fn k(&self) -> usize {
        self.m() + self.n()
    }

    /// Coordinates of `H = M_{m,n}` flattened row-major.
    pub fn h_dim(&self) -> usize {
        self.m() * self.n()
    }

    /// Diagonal exponents `(r_1..r_m, -s_1..-s_n)`.
    pub fn omega(&self) -> Vec<f64> {
        self.r.iter().cloned().chain(self.s.iter().map(|x| -x)).collect()
    }

    /// Conjugation by the flow contracts entry `(i, j)` of `Y` at `r_i + s_j`.
    pub fn contraction_rates(&self) -> Vec<f64> {
        self.r.iter().flat_map(|ri| self.s.iter().map(move |sj| ri + sj)).collect()
    }

    pub fn max_abs_exponent(&self) -> f64 {
        self.omega().iter().map(|x| x.abs()).fold(0.0, f64::max)
    }
}

/// Columns generate a unimodular lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeBasis {
    pub matrix: DMatrix<f64>,
}

impl LatticeBasis {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self, HomogeneousError> {
        let det = matrix.determinant();
        if !matrix.is_square() || (det.abs() - 1.0).abs() > 1e-9 {
            return Err(HomogeneousError::NotUnimodular(det));
        }
        Ok(LatticeBasis { matrix })
    }

    pub fn identity(k: usize) -> Self {
        LatticeBasis { matrix: DMatrix::identity(k, k) }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, HomogeneousError> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(HomogeneousError::NotUnimodular(f64::NAN));
        }
        Self::new(DMatrix::from_fn(k, k, |i, j| rows[i][j]))
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.k()).map(|i| (0..self.k()).map(|j| self.matrix[(i, j)]).collect()).collect()
    }

    pub fn k(&self) -> usize {
        self.matrix.nrows()
    }

    /// `g * self`, without re-checking unimodularity.
    pub fn left_mul(&self, g: &DMatrix<f64>) -> LatticeBasis {
        LatticeBasis { matrix: g * &self.matrix }
    }

    /// LLL-reduced representative of the same lattice with a determinant +1
    /// change of basis.
    pub fn reduced(&self) -> (LatticeBasis, IntMat) {
        let (mut red, mut v) = lll(&self.matrix);
        if int_det(&v) < 0 {
            for row in v.iter_mut() {
                row[0] = -row[0];
            }
            red.column_mut(0).neg_mut();
        }
        (LatticeBasis { matrix: red }, v)
    }

    /// Row-major decimal CSV with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.rows() {
            let cells: Vec<String> = row.iter().map(|x| format!("{x:.16e}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

impl Serialize for LatticeBasis {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for LatticeBasis {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        LatticeBasis::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// `[[I_m, Y], [0, I_n]]`.
pub fn u_of(y: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = y.shape();
    let mut u = DMatrix::identity(m + n, m + n);
    u.view_mut((0, m), (m, n)).copy_from(y);
    u
}

/// `u_of` for a row-major flattened `Y`.
pub fn u_of_flat(w: &WeightVector, y: &[f64]) -> DMatrix<f64> {
    u_of(&DMatrix::from_row_slice(w.m(), w.n(), y))
}

/// `diag(e^{r_i t}, e^{-s_j t})`.
pub fn flow(t: f64, w: &WeightVector) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_iterator(w.k(), w.omega().into_iter().map(|o| (o * t).exp())))
}

/// Generator of the flow, `diag(omega)`.
pub fn flow_generator(w: &WeightVector) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_vec(w.omega()))
}

fn sup_norm(v: &DVector<f64>) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// Canonical sign: first nonzero coordinate positive.
pub fn canonical_sign(v: &mut [i64]) {
    if v.iter().find(|&&x| x != 0).is_some_and(|&x| x < 0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Every nonzero integer coefficient vector `c` (relative to the columns of
/// `basis`) with `|basis * c|_inf < radius`, and its norm.
pub fn short_vectors(basis: &DMatrix<f64>, radius: f64) -> Result<Vec<(Vec<i64>, f64)>, HomogeneousError> {
    let n = basis.ncols();
    let (red, v) = lll(basis);
    let Some(inv) = red.clone().try_inverse() else { return Ok(Vec::new()) };
    let bounds: Vec<i64> = (0..n)
        .map(|i| ((0..n).map(|j| inv[(i, j)].abs()).sum::<f64>() * radius).floor() as i64)
        .collect();
    let size: u128 = bounds.iter().map(|&b| 2 * b as u128 + 1).product();
    if size > ENUMERATION_CAP {
        return Err(HomogeneousError::EnumerationTooLarge(size));
    }
    let mut out = Vec::new();
    let mut c: Vec<i64> = bounds.iter().map(|b| -b).collect();
    loop {
        if c.iter().any(|&x| x != 0) {
            let img = &red * DVector::from_iterator(n, c.iter().map(|&x| x as f64));
            let norm = sup_norm(&img);
            if norm < radius {
                let orig: Vec<i64> = (0..n).map(|i| (0..n).map(|j| v[i][j] * c[j]).sum()).collect();
                out.push((orig, norm));
            }
        }
        let mut i = 0;
        while i < n {
            if c[i] < bounds[i] {
                c[i] += 1;
                break;
            }
            c[i] = -bounds[i];
            i += 1;
        }
        if i == n {
            break;
        }
    }
    Ok(out)
}

/// Shortest nonzero vector in the sup norm, by reduction plus exhaustive
/// enumeration of the box that must contain anything shorter.
pub fn systole(basis: &LatticeBasis) -> Result<(f64, Vec<i64>), HomogeneousError> {
    systole_of(&basis.matrix)
}

pub fn systole_of(m: &DMatrix<f64>) -> Result<(f64, Vec<i64>), HomogeneousError> {
    let k = m.ncols();
    if k > MAX_SYSTOLE_DIM {
        return Err(HomogeneousError::DimensionTooLarge { k, max: MAX_SYSTOLE_DIM });
    }
    let (red, v) = lll(m);
    let best_col = (0..k).map(|j| sup_norm(&red.column(j).clone_owned())).fold(f64::INFINITY, f64::min);
    let found: Vec<(Vec<i64>, f64)> = short_vectors(&red, best_col * (1.0 + 1e-12))?
        .into_iter()
        .map(|(c, norm)| {
            let mut w: Vec<i64> = (0..k).map(|i| (0..k).map(|j| v[i][j] * c[j]).sum()).collect();
            canonical_sign(&mut w);
            (w, norm)
        })
        .collect();
    let norm = found.iter().map(|f| f.1).fold(f64::INFINITY, f64::min);
    // ties: fewest coefficients, then lexicographically largest
    let (w, _) = found
        .into_iter()
        .filter(|f| f.1 <= norm * (1.0 + 1e-12))
        .min_by(|a, b| {
            let l1 = |x: &[i64]| x.iter().map(|c| c.abs()).sum::<i64>();
            l1(&a.0).cmp(&l1(&b.0)).then_with(|| b.0.cmp(&a.0))
        })
        .expect("basis column is always a candidate");
    Ok((norm, w))
}

/// A primitive short vector of a wedge lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct DangerousVector {
    pub coords: Vec<i64>,
    pub norm: f64,
}

/// Primitive vectors of `wedge^d` of the lattice with sup norm below
/// `threshold`, one per sign pair, sorted by norm.
pub fn dangerous_vectors(
    basis: &LatticeBasis,
    d: usize,
    threshold: f64,
) -> Result<Vec<DangerousVector>, HomogeneousError> {
    let k = basis.k();
    if k > MAX_DANGER_DIM {
        return Err(HomogeneousError::DimensionTooLarge { k, max: MAX_DANGER_DIM });
    }
    if d == 0 || d >= k {
        return Err(HomogeneousError::DegreeOutOfRange { d, k });
    }
    let w = wedge_basis(&basis.matrix, d);
    Ok(primitive_short(&w, threshold)?
        .into_iter()
        .map(|(coords, norm)| DangerousVector { coords, norm })
        .collect())
}

/// Primitive short vectors, sign-canonical, deduplicated, sorted by norm.
pub fn primitive_short(basis: &DMatrix<f64>, threshold: f64) -> Result<Vec<(Vec<i64>, f64)>, HomogeneousError> {
    let mut out: Vec<(Vec<i64>, f64)> = short_vectors(basis, threshold)?
        .into_iter()
        .filter(|(c, _)| gcd_all(c) == 1)
        .map(|(mut c, n)| {
            canonical_sign(&mut c);
            (c, n)
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out.dedup_by(|a, b| a.0 == b.0);
    out.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

#[cfg(test)]
pub(crate) fn int_mat_to_f64(m: &IntMat) -> DMatrix<f64> {
    crate::linalg::int_to_f64(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// A shortest vector has sup norm <= 1 (det 1), so its coefficients are
    /// bounded by the row-sum norm of the inverse.
    fn coefficient_range(m: &DMatrix<f64>) -> i64 {
        let inv = m.clone().try_inverse().unwrap();
        inv.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max).ceil() as i64
    }

    fn brute_systole(m: &DMatrix<f64>, range: i64) -> f64 {
        let k = m.ncols();
        let mut best = f64::INFINITY;
        let mut c = vec![-range; k];
        loop {
            if c.iter().any(|&x| x != 0) {
                let img = m * DVector::from_iterator(k, c.iter().map(|&x| x as f64));
                best = best.min(sup_norm(&img));
            }
            let mut i = 0;
            while i < k && c[i] == range {
                c[i] = -range;
                i += 1;
            }
            if i == k {
                return best;
            }
            c[i] += 1;
        }
    }

    #[test]
    fn weights_validate() {
        assert!(WeightVector::new(vec![1.0], vec![0.5, 0.5]).is_ok());
        assert!(WeightVector::new(vec![1.0], vec![0.5, 0.6]).is_err());
        assert!(WeightVector::new(vec![1.0], vec![1.5, -0.5]).is_err());
        let w = WeightVector::new(vec![1.0], vec![1.0 / 3.0, 2.0 / 3.0]).unwrap();
        let rates = w.contraction_rates();
        assert!((rates[0] - 4.0 / 3.0).abs() < 1e-15 && (rates[1] - 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn u_of_examples() {
        assert_eq!(u_of(&DMatrix::zeros(1, 2)), DMatrix::identity(3, 3));
        assert_eq!(u_of(&DMatrix::from_element(1, 1, 0.7)), DMatrix::from_row_slice(2, 2, &[1.0, 0.7, 0.0, 1.0]));
        let u = u_of(&DMatrix::from_row_slice(1, 2, &[2.0, -3.0]));
        assert_eq!(u, DMatrix::from_row_slice(3, 3, &[1.0, 2.0, -3.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]));
        assert_eq!(u.determinant(), 1.0);
    }

    #[test]
    fn flow_examples() {
        let w = WeightVector::equal(1, 1);
        assert_eq!(flow(0.0, &w), DMatrix::identity(2, 2));
        let g = flow(1.0, &w);
        assert!((g[(0, 0)] - 1f64.exp()).abs() < 1e-15 && (g[(1, 1)] - (-1f64).exp()).abs() < 1e-15);
        let w = WeightVector::new(vec![1.0], vec![1.0 / 3.0, 2.0 / 3.0]).unwrap();
        let g = flow(3.0, &w);
        let expect = [3f64.exp(), (-1f64).exp(), (-2f64).exp()];
        for i in 0..3 {
            assert!((g[(i, i)] / expect[i] - 1.0).abs() < 1e-14);
        }
        assert!((g.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn systole_examples() {
        for k in 2..=6 {
            let (v, w) = systole(&LatticeBasis::identity(k)).unwrap();
            assert_eq!(v, 1.0);
            assert_eq!(w.iter().map(|x| x.abs()).sum::<i64>(), 1);
        }
        let w = WeightVector::equal(1, 1);
        for t in [0.5, 1.0, 3.0] {
            let (v, wit) = systole(&LatticeBasis::identity(2).left_mul(&flow(t, &w))).unwrap();
            assert!((v - (-t).exp()).abs() < 1e-15);
            assert_eq!(wit, vec![0, 1]);
        }
        let m = u_of(&DMatrix::from_element(1, 1, 0.5));
        let (v, _) = systole_of(&m).unwrap();
        assert_eq!(v, brute_systole(&m, 3));
        assert_eq!(v, 1.0);
        assert!(matches!(
            systole(&LatticeBasis::identity(7)),
            Err(HomogeneousError::DimensionTooLarge { .. })
        ));
    }

    #[test]
    fn dangerous_examples() {
        assert!(dangerous_vectors(&LatticeBasis::identity(2), 1, 0.5).unwrap().is_empty());
        let w = WeightVector::equal(1, 1);
        let b = LatticeBasis::identity(2).left_mul(&flow(1.0, &w));
        let found = dangerous_vectors(&b, 1, 0.5).unwrap();
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].coords, vec![0, 1]);
        assert!((found[0].norm - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn dangerous_matches_brute_force_sl3() {
        let w = WeightVector::new(vec![1.0], vec![1.0 / 3.0, 2.0 / 3.0]).unwrap();
        let m = flow(2.0, &w);
        let b = LatticeBasis::identity(3).left_mul(&m);
        let found = dangerous_vectors(&b, 1, 0.3).unwrap();
        let mut brute = Vec::new();
        let r = 10;
        for a in -r..=r {
            for bb in -r..=r {
                for c in -r..=r {
                    let mut v = vec![a, bb, c];
                    if gcd_all(&v) != 1 {
                        continue;
                    }
                    let img = &m * DVector::from_vec(vec![a as f64, bb as f64, c as f64]);
                    if sup_norm(&img) < 0.3 {
                        canonical_sign(&mut v);
                        brute.push(v);
                    }
                }
            }
        }
        brute.sort();
        brute.dedup();
        let mut got: Vec<Vec<i64>> = found.into_iter().map(|d| d.coords).collect();
        got.sort();
        assert_eq!(got, brute);
        assert!(!got.is_empty());
    }

    #[test]
    fn reduced_keeps_orientation() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 7.0]);
        let b = LatticeBasis::new(m.clone()).unwrap();
        let (red, v) = b.reduced();
        assert_eq!(int_det(&v), 1);
        assert!((&m * int_mat_to_f64(&v) - &red.matrix).norm() < 1e-12);
    }

    #[test]
    fn csv_has_full_precision() {
        let b = LatticeBasis::identity(2).left_mul(&flow(0.3, &WeightVector::equal(1, 1)));
        let csv = b.to_csv();
        let first: f64 = csv.lines().next().unwrap().split(',').next().unwrap().parse().unwrap();
        assert_eq!(first, 0.3f64.exp());
    }

    fn random_unimodular(k: usize, seed: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::from_fn(k, k, |i, j| seed[(i * k + j) % seed.len()] + if i == j { 1.5 } else { 0.0 });
        let d = m.determinant();
        let s = d.abs().powf(-1.0 / k as f64);
        m *= s;
        if d < 0.0 {
            m.column_mut(0).neg_mut();
        }
        m
    }

    proptest! {
        #[test]
        fn systole_matches_brute_force(x in prop::collection::vec(-1.0f64..1.0, 4)) {
            let m = random_unimodular(2, &x);
            let (v, wit) = systole_of(&m).unwrap();
            prop_assert!((v - brute_systole(&m, coefficient_range(&m))).abs() < 1e-12);
            let img = &m * DVector::from_iterator(2, wit.iter().map(|&c| c as f64));
            prop_assert!((sup_norm(&img) - v).abs() < 1e-12);
        }

        #[test]
        fn minkowski_consistency(x in prop::collection::vec(-1.0f64..1.0, 9)) {
            let m = random_unimodular(3, &x);
            let (v, _) = systole_of(&m).unwrap();
            prop_assert!(v <= 2.0 * 3.0);
            prop_assert!(v <= 1.0 + 1e-9);
        }

        #[test]
        fn systole_invariant_under_integer_shift(y in -3.0f64..3.0, t in 0.0f64..4.0, p in -5i64..5) {
            let w = WeightVector::equal(1, 1);
            let a = systole_of(&(flow(t, &w) * u_of(&DMatrix::from_element(1, 1, y)))).unwrap().0;
            let b = systole_of(&(flow(t, &w) * u_of(&DMatrix::from_element(1, 1, y + p as f64)))).unwrap().0;
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1e-3));
        }

        #[test]
        fn systole_piecewise_log_linear(y in 0.0f64..1.0, t in 0.0f64..3.0) {
            // away from witness changes the log-systole has slope in {omega}
            let w = WeightVector::equal(1, 1);
            let at = |s: f64| systole_of(&(flow(s, &w) * u_of(&DMatrix::from_element(1, 1, y)))).unwrap();
            let (v0, w0) = at(t);
            let (v1, w1) = at(t + 1e-4);
            if w0 == w1 {
                let slope = (v1.ln() - v0.ln()) / 1e-4;
                prop_assert!((slope.abs() - 1.0).abs() < 1e-6);
            }
        }
    }
}
