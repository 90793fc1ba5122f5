//! Exterior powers of the standard representation, their weight
//! decomposition under the flow, and the polynomial maps `Y -> wedge^d(u_Y) v`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rug::{Float, Integer};

use super::WeightVector;
use crate::linalg::{binomial, subsets, wedge_generic, Ring};

const EXPANDING_TOL: f64 = 1e-12;

/// `wedge^d` of a real matrix, lexicographic index order.
pub fn wedge_basis(m: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let k = m.nrows();
    let e = |i: usize, j: usize| m[(i, j)];
    let rows = wedge_generic(k, d, &e);
    let n = rows.len();
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

pub fn wedge_int(m: &[Vec<Integer>], d: usize) -> Vec<Vec<Integer>> {
    let e = |i: usize, j: usize| m[i][j].clone();
    wedge_generic(m.len(), d, &e)
}

pub fn wedge_hp(m: &[Vec<Float>], d: usize) -> Vec<Vec<Float>> {
    let e = |i: usize, j: usize| m[i][j].clone();
    wedge_generic(m.len(), d, &e)
}

/// Sparse multivariate polynomial with real coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    pub nvars: usize,
    pub terms: BTreeMap<Vec<u32>, f64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Polynomial { nvars, terms: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Self::zero(nvars);
        if c != 0.0 {
            p.terms.insert(vec![0; nvars], c);
        }
        p
    }

    pub fn var(nvars: usize, i: usize) -> Self {
        let mut e = vec![0; nvars];
        e[i] = 1;
        let mut p = Self::zero(nvars);
        p.terms.insert(e, 1.0);
        p
    }

    fn cleaned(mut self) -> Self {
        self.terms.retain(|_, c| *c != 0.0);
        self
    }

    pub fn scale(&self, c: f64) -> Self {
        Polynomial { nvars: self.nvars, terms: self.terms.iter().map(|(e, v)| (e.clone(), v * c)).collect() }.cleaned()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| c * e.iter().zip(x).map(|(&p, &v)| v.powi(p as i32)).product::<f64>())
            .sum()
    }

    /// Max absolute coefficient.
    pub fn coeff_norm(&self) -> f64 {
        self.terms.values().map(|c| c.abs()).fold(0.0, f64::max)
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum()).max().unwrap_or(0)
    }

    pub fn partial(&self, i: usize) -> Polynomial {
        let mut out = Self::zero(self.nvars);
        for (e, c) in &self.terms {
            if e[i] > 0 {
                let mut f = e.clone();
                f[i] -= 1;
                *out.terms.entry(f).or_insert(0.0) += c * e[i] as f64;
            }
        }
        out.cleaned()
    }

    /// Upper bound on `|p|` over the box `|x_i - c_i| <= rho_i`.
    pub fn abs_bound(&self, center: &[f64], rho: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| {
                c.abs()
                    * e.iter()
                        .zip(center.iter().zip(rho))
                        .map(|(&p, (&x, &r))| (x.abs() + r).powi(p as i32))
                        .product::<f64>()
            })
            .sum()
    }
}

impl Ring for Polynomial {
    fn zero_like(&self) -> Self {
        Polynomial::zero(self.nvars)
    }
    fn add(&self, o: &Self) -> Self {
        let mut out = self.clone();
        for (e, c) in &o.terms {
            *out.terms.entry(e.clone()).or_insert(0.0) += c;
        }
        out.cleaned()
    }
    fn sub(&self, o: &Self) -> Self {
        self.add(&o.scale(-1.0))
    }
    fn mul(&self, o: &Self) -> Self {
        let mut out = Polynomial::zero(self.nvars);
        for (e1, c1) in &self.terms {
            for (e2, c2) in &o.terms {
                let e: Vec<u32> = e1.iter().zip(e2).map(|(a, b)| a + b).collect();
                *out.terms.entry(e).or_insert(0.0) += c1 * c2;
            }
        }
        out.cleaned()
    }
}

/// Weight data of `wedge^d R^k` under the flow, plus `wedge^d(u_Y)` as
/// polynomials in the entries of `Y`.
#[derive(Debug, Clone)]
pub struct RepresentationData {
    pub k: usize,
    pub d: usize,
    pub weights: WeightVector,
    pub index_sets: Vec<Vec<usize>>,
    pub lambda: Vec<f64>,
    pub expanding: Vec<usize>,
    u_wedge: Vec<Vec<Polynomial>>,
}

impl RepresentationData {
    pub fn new(w: &WeightVector, d: usize) -> Self {
        let k = w.k();
        assert!(d >= 1 && d < k, "wedge degree {d} outside 1..{k}");
        let omega = w.omega();
        let index_sets = subsets(k, d);
        let lambda: Vec<f64> = index_sets.iter().map(|i| i.iter().map(|&j| omega[j]).sum()).collect();
        let expanding = (0..lambda.len()).filter(|&i| lambda[i] > EXPANDING_TOL).collect();
        let (m, n) = (w.m(), w.n());
        let nv = m * n;
        let entry = |i: usize, j: usize| {
            if i == j {
                Polynomial::constant(nv, 1.0)
            } else if i < m && j >= m {
                Polynomial::var(nv, i * n + (j - m))
            } else {
                Polynomial::zero(nv)
            }
        };
        let u_wedge = wedge_generic(k, d, &entry);
        RepresentationData { k, d, weights: w.clone(), index_sets, lambda, expanding, u_wedge }
    }

    pub fn dim(&self) -> usize {
        binomial(self.k, self.d)
    }

    pub fn nvars(&self) -> usize {
        self.weights.h_dim()
    }

    pub fn non_expanding(&self) -> Vec<usize> {
        (0..self.lambda.len()).filter(|i| !self.expanding.contains(i)).collect()
    }

    /// Coordinate projection onto the expanding block.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        self.expanding.iter().map(|&i| v[i]).collect()
    }

    /// Largest contraction exponent on the non-expanding block.
    pub fn max_contraction(&self) -> f64 {
        self.lambda.iter().map(|l| (-l).max(0.0)).fold(0.0, f64::max)
    }

    /// `wedge^d(u_Y)` entry as a polynomial in `Y`.
    pub fn u_entry(&self, i: usize, j: usize) -> &Polynomial {
        &self.u_wedge[i][j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Projection {
    Expanding,
    NonExpanding,
    Full,
}

/// Polynomial map `Y -> P wedge^d(u_Y) v` for a coordinate projection `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyMap {
    pub indices: Vec<usize>,
    pub components: Vec<Polynomial>,
}

impl PolyMap {
    pub fn eval(&self, y: &[f64]) -> Vec<f64> {
        self.components.iter().map(|p| p.eval(y)).collect()
    }

    pub fn coeff_norm(&self) -> f64 {
        self.components.iter().map(|p| p.coeff_norm()).fold(0.0, f64::max)
    }

    pub fn degree(&self) -> u32 {
        self.components.iter().map(|p| p.degree()).max().unwrap_or(0)
    }
}

pub fn phi_projected(v: &[f64], rep: &RepresentationData, proj: Projection) -> PolyMap {
    let indices = match proj {
        Projection::Expanding => rep.expanding.clone(),
        Projection::NonExpanding => rep.non_expanding(),
        Projection::Full => (0..rep.dim()).collect(),
    };
    let nv = rep.nvars();
    let components = indices
        .iter()
        .map(|&i| {
            let mut acc = Polynomial::zero(nv);
            for (j, &vj) in v.iter().enumerate() {
                if vj != 0.0 {
                    acc = acc.add(&rep.u_entry(i, j).scale(vj));
                }
            }
            acc
        })
        .collect();
    PolyMap { indices, components }
}

/// Expanding part of `Y -> wedge^d(u_Y) v`.
pub fn phi_poly(v: &[f64], rep: &RepresentationData) -> PolyMap {
    phi_projected(v, rep, Projection::Expanding)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpandingVerdict {
    pub expanding: bool,
    pub kernel_dim: usize,
    pub smallest_singular: f64,
    /// Linear map `v -> coefficients of P o phi^v` (rows: component x monomial).
    pub coefficient_map: DMatrix<f64>,
}

pub fn expanding_check(w: &WeightVector, d: usize) -> ExpandingVerdict {
    expanding_check_with(w, d, Projection::Expanding)
}

/// Injectivity of `v -> P o phi^v`, decided by singular values.
pub fn expanding_check_with(w: &WeightVector, d: usize, proj: Projection) -> ExpandingVerdict {
    let rep = RepresentationData::new(w, d);
    let dim = rep.dim();
    let maps: Vec<PolyMap> = (0..dim)
        .map(|j| {
            let mut e = vec![0.0; dim];
            e[j] = 1.0;
            phi_projected(&e, &rep, proj)
        })
        .collect();
    let mut rows: BTreeMap<(usize, Vec<u32>), usize> = BTreeMap::new();
    for map in &maps {
        for (c, p) in map.components.iter().enumerate() {
            for e in p.terms.keys() {
                let next = rows.len();
                rows.entry((c, e.clone())).or_insert(next);
            }
        }
    }
    let mut mat = DMatrix::<f64>::zeros(rows.len().max(1), dim);
    for (j, map) in maps.iter().enumerate() {
        for (c, p) in map.components.iter().enumerate() {
            for (e, v) in &p.terms {
                mat[(rows[&(c, e.clone())], j)] = *v;
            }
        }
    }
    let sv = mat.clone().svd(false, false).singular_values;
    let largest = sv.iter().cloned().fold(0.0, f64::max);
    let rank = sv.iter().filter(|&&s| s > 1e-9 * largest && largest > 0.0).count();
    let mut sorted: Vec<f64> = sv.iter().cloned().collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let smallest_singular = if sorted.len() >= dim { sorted[dim - 1] } else { 0.0 };
    let kernel_dim = dim - rank;
    ExpandingVerdict { expanding: kernel_dim == 0, kernel_dim, smallest_singular, coefficient_map: mat }
}
