//! Tracking `g_t u_Y g Z^k` for large `t` without losing the lattice.
//!
//! The orbit matrix has entries of size `e^{|omega| t}` that cancel down to
//! an O(1) reduced basis. We keep `Y` and `g` in multiprecision, march `t` in
//! short steps, and after each step LLL-reduce the f64 image of
//! `g_t u_Y g U` with an exact integer transform `U`.

use nalgebra::DMatrix;
use rug::{Float, Integer};

use super::{systole_of, LatticeBasis, WeightVector};
use crate::hp::{self, Real};
use crate::linalg::{int_det, lll, IntMat};

const STEP: f64 = 0.5;

/// Bits needed to follow the orbit up to time `t_max`.
pub fn orbit_precision(w: &WeightVector, t_max: f64) -> u32 {
    let bits = 2.0 * w.max_abs_exponent() * t_max.max(0.0) * std::f64::consts::LOG2_E;
    160 + bits.ceil() as u32
}

#[derive(Debug, Clone)]
pub struct OrbitTracker {
    weights: WeightVector,
    prec: u32,
    /// `u_Y g` at working precision.
    start: Vec<Vec<Real>>,
    t: f64,
    transform: Vec<Vec<Integer>>,
    reduced: DMatrix<f64>,
}

fn u_times_g(w: &WeightVector, y: &[Real], g: &LatticeBasis, prec: u32) -> Vec<Vec<Real>> {
    let k = w.k();
    let (m, n) = (w.m(), w.n());
    (0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    let mut acc = hp::real(prec, g.matrix[(i, j)]);
                    if i < m {
                        for c in 0..n {
                            acc += Float::with_val(prec, &y[i * n + c] * g.matrix[(m + c, j)]);
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

impl OrbitTracker {
    pub fn new(w: &WeightVector, g: &LatticeBasis, y: &[Real], prec: u32) -> Self {
        let k = w.k();
        let start = u_times_g(w, y, g, prec);
        let transform = (0..k).map(|i| (0..k).map(|j| Integer::from(u8::from(i == j))).collect()).collect();
        let mut tr = OrbitTracker { weights: w.clone(), prec, start, t: 0.0, transform, reduced: DMatrix::zeros(k, k) };
        tr.reduce_at(0.0);
        tr
    }

    pub fn from_f64(w: &WeightVector, g: &LatticeBasis, y: &[f64], prec: u32) -> Self {
        Self::new(w, g, &hp::from_f64s(prec, y), prec)
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn precision(&self) -> u32 {
        self.prec
    }

    /// Moves the tracked point to a nearby `Y` keeping the current time and
    /// transform as the starting guess.
    pub fn rebase(&mut self, g: &LatticeBasis, y: &[Real]) {
        self.start = u_times_g(&self.weights, y, g, self.prec);
        let t = self.t;
        self.reduce_at(t);
    }

    /// `g_t u_Y g` at working precision.
    pub fn orbit_matrix(&self, t: f64) -> Vec<Vec<Real>> {
        let omega = self.weights.omega();
        self.start
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let s = hp::exp_of_product(self.prec, omega[i], t);
                row.iter().map(|x| Float::with_val(self.prec, x * &s)).collect()
            })
            .collect()
    }

    fn product_f64(&self, m: &[Vec<Real>]) -> DMatrix<f64> {
        let k = m.len();
        DMatrix::from_fn(k, k, |i, j| {
            let mut acc = Float::new(self.prec);
            for (c, row) in self.transform.iter().enumerate() {
                acc += Float::with_val(self.prec, &m[i][c] * &row[j]);
            }
            acc.to_f64()
        })
    }

    fn apply_transform(&mut self, v: &IntMat) {
        let k = v.len();
        let old = self.transform.clone();
        for (i, row) in self.transform.iter_mut().enumerate() {
            for j in 0..k {
                let mut acc = Integer::new();
                for c in 0..k {
                    if v[c][j] != 0 {
                        acc += Integer::from(&old[i][c] * v[c][j]);
                    }
                }
                row[j] = acc;
            }
        }
    }

    fn reduce_at(&mut self, t: f64) {
        let m = self.orbit_matrix(t);
        let k = m.len();
        for _ in 0..12 {
            let p = self.product_f64(&m);
            let (_, mut v) = lll(&p);
            // keep the transform in SL_k(Z)
            if int_det(&v) < 0 {
                for row in v.iter_mut() {
                    row[0] = -row[0];
                }
            }
            let trivial = (0..k).all(|i| (0..k).all(|j| v[i][j] == i64::from(i == j)));
            if trivial {
                break;
            }
            self.apply_transform(&v);
        }
        self.reduced = self.product_f64(&m);
        self.t = t;
    }

    /// Advances (or rewinds) to time `t` in bounded steps.
    pub fn advance_to(&mut self, t: f64) {
        let delta = t - self.t;
        let steps = (delta.abs() / STEP).ceil().max(1.0) as usize;
        let t0 = self.t;
        for i in 1..=steps {
            let ti = if i == steps { t } else { t0 + delta * i as f64 / steps as f64 };
            self.reduce_at(ti);
        }
    }

    /// Reduced f64 basis of `g_t u_Y g Z^k` at the current time.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.reduced
    }

    pub fn lattice(&self) -> LatticeBasis {
        LatticeBasis { matrix: self.reduced.clone() }
    }

    /// Exact integer transform: `basis = g_t u_Y g * transform`.
    pub fn transform(&self) -> &[Vec<Integer>] {
        &self.transform
    }

    pub fn systole(&self) -> f64 {
        systole_of(&self.reduced).map(|(v, _)| v).unwrap_or(f64::NAN)
    }
}
