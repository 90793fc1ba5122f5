//! Small dense kernels: matrix exponential/logarithm, f64 LLL with exact
//! integer transforms, and Laplace minors over an abstract ring.

use nalgebra::DMatrix;
use rug::{Float, Integer};

pub type IntMat = Vec<Vec<i64>>;

pub fn identity_int(n: usize) -> IntMat {
    (0..n).map(|i| (0..n).map(|j| i64::from(i == j)).collect()).collect()
}

pub fn int_to_f64(m: &IntMat) -> DMatrix<f64> {
    let n = m.len();
    DMatrix::from_fn(n, n, |i, j| m[i][j] as f64)
}

/// `exp(a)` by scaling and squaring with a Taylor core.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.iter().map(|x| x.abs()).fold(0.0, f64::max) * n as f64;
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let b = a / 2f64.powi(s);
    let mut sum = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for k in 1..=24 {
        term = &term * &b / k as f64;
        sum += &term;
        if term.abs().max() < 1e-20 * sum.abs().max() {
            break;
        }
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

fn sqrtm(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut y = a.clone();
    let mut z = DMatrix::<f64>::identity(n, n);
    for _ in 0..100 {
        let yi = y.clone().try_inverse()?;
        let zi = z.clone().try_inverse()?;
        let yn = (&y + zi) * 0.5;
        let zn = (&z + yi) * 0.5;
        let step = (&yn - &y).norm();
        y = yn;
        z = zn;
        if !y.iter().all(|x| x.is_finite()) {
            return None;
        }
        if step <= 1e-15 * y.norm() {
            break;
        }
    }
    if (&y * &y - a).norm() > 1e-9 * a.norm().max(1.0) {
        return None;
    }
    Some(y)
}

/// Principal logarithm by inverse scaling and squaring. `None` when `a` has
/// no real principal logarithm (e.g. negative real eigenvalues).
pub fn logm(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    if n == 2 {
        return logm2(a);
    }
    logm_series(a)
}

fn logm_series(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let mut x = a.clone();
    let mut s = 0;
    while (&x - &id).norm() > 0.25 {
        x = sqrtm(&x)?;
        s += 1;
        if s > 64 {
            return None;
        }
    }
    let e = &x - &id;
    let mut power = e.clone();
    let mut sum = e.clone();
    for k in 2..=60 {
        power = &power * &e;
        let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
        sum += &power * (sign / k as f64);
        if power.norm() < 1e-18 {
            break;
        }
    }
    Some(sum * 2f64.powi(s))
}

/// Closed form for 2x2: with `m = a / sqrt(det a)` and `t = tr(m) / 2`,
/// the traceless part `n = m - tI` squares to `(t^2 - 1) I`, so
/// `log m = f(t) n` with `f = acos(t)/sin(acos t)` or its hyperbolic twin.
fn logm2(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
    if !(det > 0.0) {
        return None;
    }
    let root = det.sqrt();
    let t = 0.5 * (a[(0, 0)] + a[(1, 1)]) / root;
    if !(t > -1.0) {
        return None;
    }
    let f = if (t - 1.0).abs() < 1e-8 {
        1.0 - (t - 1.0) / 3.0
    } else if t > 1.0 {
        let mu = t.acosh();
        mu / mu.sinh()
    } else {
        let theta = t.acos();
        theta / theta.sin()
    };
    let half_log_det = root.ln();
    let mut out = a / root * f;
    out[(0, 0)] += half_log_det - f * t;
    out[(1, 1)] += half_log_det - f * t;
    Some(out)
}

fn gram_schmidt(b: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let n = b.ncols();
    let mut mu = DMatrix::<f64>::zeros(n, n);
    let mut star = b.clone();
    let mut norms = vec![0.0; n];
    for i in 0..n {
        for j in 0..i {
            let m = if norms[j] > 0.0 { b.column(i).dot(&star.column(j)) / norms[j] } else { 0.0 };
            mu[(i, j)] = m;
            let sj = star.column(j).clone_owned();
            let mut si = star.column_mut(i);
            si.axpy(-m, &sj, 1.0);
        }
        norms[i] = star.column(i).norm_squared();
    }
    (mu, norms)
}

/// LLL reduction (delta = 0.99) of the columns of `b`.
///
/// Returns the reduced basis and the unimodular transform `v` with
/// `reduced = b * v`. The transform is exact even when `b` is only known to
/// f64 accuracy, which is what the orbit tracker relies on.
pub fn lll(b: &DMatrix<f64>) -> (DMatrix<f64>, IntMat) {
    let n = b.ncols();
    let mut basis = b.clone();
    let mut v = identity_int(n);
    if n < 2 {
        return (basis, v);
    }
    let mut k = 1;
    let mut guard = 0;
    while k < n && guard < 20_000 {
        guard += 1;
        let (mu, _) = gram_schmidt(&basis);
        let mut overflow = false;
        for j in (0..k).rev() {
            let (mu, _) = if j + 1 == k { (mu.clone(), vec![]) } else { gram_schmidt(&basis) };
            let r = mu[(k, j)].round();
            if r == 0.0 {
                continue;
            }
            if r.abs() > 4.0e15 {
                overflow = true;
                break;
            }
            let ri = r as i64;
            let mut ok = true;
            let mut next: Vec<i64> = Vec::with_capacity(n);
            for row in v.iter() {
                match row[j].checked_mul(ri).and_then(|p| row[k].checked_sub(p)) {
                    Some(x) => next.push(x),
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                overflow = true;
                break;
            }
            for (row, x) in v.iter_mut().zip(next) {
                row[k] = x;
            }
            let bj = basis.column(j).clone_owned();
            basis.column_mut(k).axpy(-r, &bj, 1.0);
        }
        if overflow {
            break;
        }
        let (mu, norms) = gram_schmidt(&basis);
        if norms[k] >= (0.99 - mu[(k, k - 1)].powi(2)) * norms[k - 1] {
            k += 1;
        } else {
            basis.swap_columns(k, k - 1);
            for row in v.iter_mut() {
                row.swap(k, k - 1);
            }
            k = (k - 1).max(1);
        }
    }
    (basis, v)
}

pub fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.unsigned_abs(), b.unsigned_abs());
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a as i64
}

pub fn gcd_all(xs: &[i64]) -> i64 {
    xs.iter().fold(0, |g, &x| gcd(g, x))
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// All `d`-subsets of `0..k` in lexicographic order.
pub fn subsets(k: usize, d: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, k: usize, d: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == d {
            out.push(cur.clone());
            return;
        }
        for i in start..k {
            cur.push(i);
            rec(i + 1, k, d, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, k, d, &mut Vec::new(), &mut out);
    out
}

/// Minimal commutative ring interface for symbolic and multiprecision minors.
pub trait Ring: Clone {
    fn zero_like(&self) -> Self;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
}

impl Ring for f64 {
    fn zero_like(&self) -> Self {
        0.0
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
}

impl Ring for Integer {
    fn zero_like(&self) -> Self {
        Integer::new()
    }
    fn add(&self, o: &Self) -> Self {
        Integer::from(self + o)
    }
    fn sub(&self, o: &Self) -> Self {
        Integer::from(self - o)
    }
    fn mul(&self, o: &Self) -> Self {
        Integer::from(self * o)
    }
}

impl Ring for Float {
    fn zero_like(&self) -> Self {
        Float::new(self.prec())
    }
    fn add(&self, o: &Self) -> Self {
        Float::with_val(self.prec(), self + o)
    }
    fn sub(&self, o: &Self) -> Self {
        Float::with_val(self.prec(), self - o)
    }
    fn mul(&self, o: &Self) -> Self {
        Float::with_val(self.prec(), self * o)
    }
}

/// Determinant of the submatrix `rows x cols` by Laplace expansion.
pub fn minor<R: Ring>(entry: &dyn Fn(usize, usize) -> R, rows: &[usize], cols: &[usize]) -> R {
    if rows.len() == 1 {
        return entry(rows[0], cols[0]);
    }
    let mut acc: Option<R> = None;
    for (j, &c) in cols.iter().enumerate() {
        let rest: Vec<usize> = cols.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, &x)| x).collect();
        let term = entry(rows[0], c).mul(&minor(entry, &rows[1..], &rest));
        acc = Some(match acc {
            None if j % 2 == 0 => term,
            None => term.zero_like().sub(&term),
            Some(a) if j % 2 == 0 => a.add(&term),
            Some(a) => a.sub(&term),
        });
    }
    acc.expect("nonempty minor")
}

/// Matrix of `d`-th exterior power in lexicographic index order.
pub fn wedge_generic<R: Ring>(k: usize, d: usize, entry: &dyn Fn(usize, usize) -> R) -> Vec<Vec<R>> {
    let sets = subsets(k, d);
    sets.iter().map(|i| sets.iter().map(|j| minor(entry, i, j)).collect()).collect()
}

pub fn int_det(m: &IntMat) -> i128 {
    let n = m.len();
    let rows: Vec<usize> = (0..n).collect();
    let e = |i: usize, j: usize| Integer::from(m[i][j]);
    minor(&e, &rows, &rows).to_i128().unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expm_and_logm_invert() {
        let a = DMatrix::from_row_slice(2, 2, &[0.3, -1.2, 0.7, -0.4]);
        let e = expm(&a);
        let back = logm(&e).unwrap();
        assert!((back - a).norm() < 1e-12);
    }

    #[test]
    fn expm_of_diagonal_is_exact_exponential() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-3.0, 2.5]));
        let e = expm(&a);
        assert!((e[(0, 0)] / (-3.0f64).exp() - 1.0).abs() < 1e-13);
        assert!((e[(1, 1)] / 2.5f64.exp() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn closed_form_logarithm_matches_series() {
        let cases = [
            [0.3, -1.2, 0.7, -0.4],
            [0.9, 0.4, 0.2, -0.6],
            [0.0, 1.0, 0.0, 0.0],
            [1e-9, 0.3, 0.0, -1e-9],
            [0.2, 0.0, 0.0, 0.1],
        ];
        for c in cases {
            let a = expm(&DMatrix::from_row_slice(2, 2, &c));
            let closed = logm2(&a).unwrap();
            let series = logm_series(&a).unwrap();
            assert!((&closed - &series).norm() < 1e-12, "{c:?}: {closed} vs {series}");
        }
        let b = DMatrix::from_row_slice(3, 3, &[0.1, 0.4, -0.2, 0.0, -0.3, 0.5, 0.2, 0.1, 0.2]);
        assert!((logm(&expm(&b)).unwrap() - b).norm() < 1e-12);
    }

    #[test]
    fn logm_rejects_negative_eigenvalue() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]);
        assert!(logm(&a).is_none());
    }

    #[test]
    fn lll_transform_reproduces_basis() {
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 100.0, 0.0, 1.0]);
        let (red, v) = lll(&b);
        assert!((&b * int_to_f64(&v) - &red).norm() < 1e-9);
        assert_eq!(int_det(&v).abs(), 1);
        assert!(red.column(0).norm() <= 1.0 + 1e-12);
    }

    #[test]
    fn minors_match_determinant() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.5, 1.0, 3.0, 2.0, 0.0, 1.0, 4.0]);
        let e = |i: usize, j: usize| m[(i, j)];
        let d = minor(&e, &[0, 1, 2], &[0, 1, 2]);
        assert!((d - m.determinant()).abs() < 1e-12);
    }

    #[test]
    fn subsets_are_lexicographic() {
        assert_eq!(subsets(3, 2), vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
        assert_eq!(binomial(6, 3), 20);
    }
}
