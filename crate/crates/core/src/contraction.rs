//! Contracting one-parameter semigroups on `H = R^l`, the admissible base box,
//! and the calculus of translated images `Phi_t(D0) + h`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rug::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::homogeneous::WeightVector;
use crate::hp::{self, Real};
use crate::linalg::expm;

/// Slack accepted on renormalized coordinates when testing containment.
pub const CONTAINMENT_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContractionError {
    #[error("empty or degenerate base box on axis {axis}")]
    DegenerateBase { axis: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("rates must be positive, found {0}")]
    NonPositiveRate(f64),
    #[error("generator eigenvalue with real part {re} exceeds -sigma = {bound}")]
    NotContracting { re: f64, bound: f64 },
    #[error("domains belong to different spaces")]
    MismatchedContext,
    #[error("two disjoint translates need a > {threshold}, got {a}")]
    TooSmallScale { a: f64, threshold: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleBase {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl AdmissibleBase {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, ContractionError> {
        if lower.len() != upper.len() {
            return Err(ContractionError::Dimension { expected: lower.len(), found: upper.len() });
        }
        if let Some(axis) = (0..lower.len()).find(|&i| !(lower[i] < upper[i])) {
            return Err(ContractionError::DegenerateBase { axis });
        }
        Ok(AdmissibleBase { lower, upper })
    }

    pub fn unit(dim: usize) -> Self {
        AdmissibleBase { lower: vec![0.0; dim], upper: vec![1.0; dim] }
    }

    pub fn cube(dim: usize, side: f64) -> Self {
        AdmissibleBase { lower: vec![0.0; dim], upper: vec![side; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn vertices(&self) -> Vec<Vec<f64>> {
        let l = self.dim();
        (0..1usize << l)
            .map(|mask| (0..l).map(|i| if mask >> i & 1 == 1 { self.upper[i] } else { self.lower[i] }).collect())
            .collect()
    }

    /// Sup-metric diameter of `m * D0`.
    pub fn image_diameter(&self, m: &DMatrix<f64>) -> f64 {
        let w = self.widths();
        (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)].abs() * w[j]).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Per-axis `[min, max]` of `m * D0`.
    pub fn image_bounds(&self, m: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
        let n = m.nrows();
        let mut lo = vec![0.0; n];
        let mut hi = vec![0.0; n];
        for i in 0..n {
            for j in 0..m.ncols() {
                let a = m[(i, j)] * self.lower[j];
                let b = m[(i, j)] * self.upper[j];
                lo[i] += a.min(b);
                hi[i] += a.max(b);
            }
        }
        (lo, hi)
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.iter().enumerate().all(|(i, &v)| v >= self.lower[i] - tol && v <= self.upper[i] + tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemigroupKind {
    Diagonal { rates: Vec<f64> },
    General { generator: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionSemigroup {
    pub dim: usize,
    pub kind: SemigroupKind,
    pub sigma: f64,
    pub c0: f64,
}

impl ContractionSemigroup {
    pub fn diagonal(rates: Vec<f64>, base: &AdmissibleBase) -> Result<Self, ContractionError> {
        if rates.len() != base.dim() {
            return Err(ContractionError::Dimension { expected: base.dim(), found: rates.len() });
        }
        if let Some(&r) = rates.iter().find(|&&r| !(r > 0.0)) {
            return Err(ContractionError::NonPositiveRate(r));
        }
        let sigma = rates.iter().cloned().fold(f64::INFINITY, f64::min);
        let c0 = base.widths().into_iter().fold(0.0, f64::max);
        Ok(ContractionSemigroup { dim: rates.len(), kind: SemigroupKind::Diagonal { rates }, sigma, c0 })
    }

    /// Conjugation action of the weighted flow on `Y` in `M_{m,n}`,
    /// flattened row-major: coordinate `(i, j)` contracts at `r_i + s_j`.
    pub fn for_weights(w: &WeightVector, base: &AdmissibleBase) -> Result<Self, ContractionError> {
        let rates = w.contraction_rates();
        Self::diagonal(rates, base)
    }

    /// `Phi_t = exp(t * generator)`. `sigma` defaults to the spectral abscissa.
    pub fn general(
        generator: DMatrix<f64>,
        sigma: Option<f64>,
        base: &AdmissibleBase,
    ) -> Result<Self, ContractionError> {
        let l = generator.nrows();
        if l != base.dim() || generator.ncols() != l {
            return Err(ContractionError::Dimension { expected: base.dim(), found: l });
        }
        let eig = generator.complex_eigenvalues();
        let abscissa = eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        let sigma = sigma.unwrap_or(-abscissa);
        if !(sigma > 0.0) || abscissa > -sigma + 1e-9 {
            return Err(ContractionError::NotContracting { re: abscissa, bound: -sigma });
        }
        let rows = (0..l).map(|i| (0..l).map(|j| generator[(i, j)]).collect()).collect();
        let mut sg = ContractionSemigroup { dim: l, kind: SemigroupKind::General { generator: rows }, sigma, c0: 0.0 };
        // calibrate the diameter constant on a fine grid well past transients
        let horizon = 30.0 / sigma;
        let steps = 3000;
        let mut c0: f64 = 0.0;
        for i in 0..=steps {
            let t = horizon * i as f64 / steps as f64;
            c0 = c0.max(base.image_diameter(&sg.matrix(t)) * (sigma * t).exp());
        }
        sg.c0 = c0 * (1.0 + 1e-9);
        Ok(sg)
    }

    fn generator(&self) -> Option<DMatrix<f64>> {
        match &self.kind {
            SemigroupKind::General { generator } => {
                let l = self.dim;
                Some(DMatrix::from_fn(l, l, |i, j| generator[i][j]))
            }
            SemigroupKind::Diagonal { .. } => None,
        }
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self.kind, SemigroupKind::Diagonal { .. })
    }

    /// Largest exponential rate at which `Phi_{-t}` can expand.
    pub fn max_rate(&self) -> f64 {
        match &self.kind {
            SemigroupKind::Diagonal { rates } => rates.iter().cloned().fold(0.0, f64::max),
            SemigroupKind::General { generator } => {
                generator.iter().map(|row| row.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
            }
        }
    }

    pub fn matrix(&self, t: f64) -> DMatrix<f64> {
        match &self.kind {
            SemigroupKind::Diagonal { rates } => {
                DMatrix::from_diagonal(&DVector::from_iterator(self.dim, rates.iter().map(|r| (-r * t).exp())))
            }
            SemigroupKind::General { .. } => expm(&(self.generator().unwrap() * t)),
        }
    }

    pub fn apply(&self, t: f64, x: &[f64]) -> Vec<f64> {
        match &self.kind {
            SemigroupKind::Diagonal { rates } => x.iter().zip(rates).map(|(v, r)| v * (-r * t).exp()).collect(),
            SemigroupKind::General { .. } => {
                let y = self.matrix(t) * DVector::from_column_slice(x);
                y.iter().cloned().collect()
            }
        }
    }

    /// `Phi_t` as a multiprecision matrix (dense; diagonal kinds stay diagonal).
    pub fn matrix_hp(&self, t: f64, prec: u32) -> Vec<Vec<Real>> {
        let l = self.dim;
        match &self.kind {
            SemigroupKind::Diagonal { rates } => (0..l)
                .map(|i| {
                    (0..l)
                        .map(|j| if i == j { hp::exp_of_product(prec, -rates[i], t) } else { Float::new(prec) })
                        .collect()
                })
                .collect(),
            SemigroupKind::General { .. } => {
                let gen = self.generator().unwrap();
                let norm = gen.abs().max() * l as f64 * t.abs();
                let s = if norm > 0.25 { (norm / 0.25).log2().ceil() as i32 } else { 0 };
                let core = expm(&(gen * (t / 2f64.powi(s))));
                let mut m: Vec<Vec<Real>> =
                    (0..l).map(|i| (0..l).map(|j| hp::real(prec, core[(i, j)])).collect()).collect();
                for _ in 0..s {
                    m = mat_mul_hp(&m, &m, prec);
                }
                m
            }
        }
    }

    /// `Phi_t(x)` on multiprecision coordinates.
    pub fn apply_hp(&self, t: f64, x: &[Real], prec: u32) -> Vec<Real> {
        match &self.kind {
            SemigroupKind::Diagonal { rates } => x
                .iter()
                .zip(rates)
                .map(|(v, r)| Float::with_val(prec, v * &hp::exp_of_product(prec, -r, t)))
                .collect(),
            SemigroupKind::General { .. } => {
                // negative times use the inverse of the forward matrix so that
                // Phi_{-t} o Phi_t is the identity to working precision
                let m = if t >= 0.0 {
                    self.matrix_hp(t, prec)
                } else {
                    invert_hp(&self.matrix_hp(-t, prec), prec)
                };
                mat_vec_hp(&m, x, prec)
            }
        }
    }
}

pub fn mat_mul_hp(a: &[Vec<Real>], b: &[Vec<Real>], prec: u32) -> Vec<Vec<Real>> {
    let n = a.len();
    let p = b[0].len();
    (0..n)
        .map(|i| {
            (0..p)
                .map(|j| {
                    let mut acc = Float::new(prec);
                    for (k, bk) in b.iter().enumerate() {
                        acc += Float::with_val(prec, &a[i][k] * &bk[j]);
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

pub fn mat_vec_hp(a: &[Vec<Real>], x: &[Real], prec: u32) -> Vec<Real> {
    a.iter()
        .map(|row| {
            let mut acc = Float::new(prec);
            for (m, v) in row.iter().zip(x) {
                acc += Float::with_val(prec, m * v);
            }
            acc
        })
        .collect()
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn invert_hp(a: &[Vec<Real>], prec: u32) -> Vec<Vec<Real>> {
    let n = a.len();
    let mut m: Vec<Vec<Real>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r: Vec<Real> = row.iter().map(|x| Float::with_val(prec, x)).collect();
            r.extend((0..n).map(|j| Float::with_val(prec, u32::from(i == j))));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| m[x][col].clone().abs().partial_cmp(&m[y][col].clone().abs()).unwrap())
            .unwrap();
        m.swap(col, piv);
        let p = m[col][col].clone();
        for x in m[col].iter_mut() {
            *x /= &p;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = m[r][col].clone();
            if f.is_zero() {
                continue;
            }
            for c in 0..2 * n {
                let delta = Float::with_val(prec, &f * &m[col][c]);
                m[r][c] -= delta;
            }
        }
    }
    m.into_iter().map(|row| row[n..].to_vec()).collect()
}

pub fn apply(sg: &ContractionSemigroup, t: f64, x: &[f64]) -> Vec<f64> {
    sg.apply(t, x)
}

pub fn diameter_bound(sg: &ContractionSemigroup, t: f64) -> f64 {
    sg.c0 * (-sg.sigma * t).exp()
}

/// The semigroup, the base box, and the working precision shared by every
/// domain of one game.
#[derive(Debug, Clone, PartialEq)]
pub struct GameSpace {
    pub semigroup: ContractionSemigroup,
    pub base: AdmissibleBase,
    pub precision: u32,
}

impl GameSpace {
    pub fn new(semigroup: ContractionSemigroup, base: AdmissibleBase) -> Arc<Self> {
        Self::with_horizon(semigroup, base, 0.0)
    }

    /// Precision sufficient for domains down to scale `horizon`.
    pub fn with_horizon(semigroup: ContractionSemigroup, base: AdmissibleBase, horizon: f64) -> Arc<Self> {
        let precision = hp::precision_for(semigroup.max_rate(), horizon.max(20.0));
        Arc::new(GameSpace { semigroup, base, precision })
    }

    pub fn with_precision(semigroup: ContractionSemigroup, base: AdmissibleBase, precision: u32) -> Arc<Self> {
        Arc::new(GameSpace { semigroup, base, precision })
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    /// The base box itself, as the domain of scale 0.
    pub fn root(self: &Arc<Self>) -> Domain {
        Domain { t: 0.0, translation: hp::zeros(self.precision, self.dim()), space: Arc::clone(self) }
    }

    /// Largest scale whose domains this space still resolves.
    pub fn horizon(&self) -> f64 {
        let bits = self.precision.saturating_sub(96) as f64;
        bits / (self.semigroup.max_rate().max(1e-12) * std::f64::consts::LOG2_E)
    }
}

/// Axis-aligned box of admissible offsets for an inner domain, expressed in
/// the outer domain's renormalized frame.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl OffsetBox {
    pub fn point(&self, u: &[f64]) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).zip(u).map(|((l, h), s)| l + (h - l) * s).collect()
    }

    pub fn lower_corner(&self) -> Vec<f64> {
        self.lower.clone()
    }
}

/// One element `Phi_t(D0) + h` of the domain family.
#[derive(Debug, Clone)]
pub struct Domain {
    pub t: f64,
    pub translation: Vec<Real>,
    pub space: Arc<GameSpace>,
}

impl PartialEq for Domain {
    fn eq(&self, o: &Self) -> bool {
        self.t == o.t && self.translation == o.translation && *self.space == *o.space
    }
}

impl Domain {
    pub fn new(space: &Arc<GameSpace>, t: f64, translation: Vec<Real>) -> Self {
        let prec = space.precision;
        let translation = translation.iter().map(|x| hp::with_prec(x, prec)).collect();
        Domain { t, translation, space: Arc::clone(space) }
    }

    pub fn from_f64(space: &Arc<GameSpace>, t: f64, h: &[f64]) -> Self {
        Domain { t, translation: hp::from_f64s(space.precision, h), space: Arc::clone(space) }
    }

    pub fn prec(&self) -> u32 {
        self.space.precision
    }

    pub fn semigroup(&self) -> &ContractionSemigroup {
        &self.space.semigroup
    }

    pub fn base(&self) -> &AdmissibleBase {
        &self.space.base
    }

    /// Point of the domain with renormalized coordinates `f` (a point of D0).
    pub fn point_at(&self, f: &[f64]) -> Vec<Real> {
        let prec = self.prec();
        let moved = self.semigroup().apply_hp(self.t, &hp::from_f64s(prec, f), prec);
        moved.into_iter().zip(&self.translation).map(|(m, h)| Float::with_val(prec, &m + h)).collect()
    }

    pub fn center(&self) -> Vec<Real> {
        self.point_at(&self.base().center())
    }

    pub fn vertices(&self) -> Vec<Vec<Real>> {
        self.base().vertices().iter().map(|v| self.point_at(v)).collect()
    }

    /// `Phi_{-t}(p - h)`: where `p` sits relative to this domain's own copy of D0.
    pub fn frame_of(&self, p: &[Real]) -> Vec<f64> {
        let prec = self.prec().max(p.first().map_or(0, |x| x.prec()));
        let diff: Vec<Real> = p.iter().zip(&self.translation).map(|(a, b)| Float::with_val(prec, a - b)).collect();
        hp::to_f64s(&self.semigroup().apply_hp(-self.t, &diff, prec))
    }

    /// Offset of `self` inside `outer`'s renormalized frame.
    pub fn offset_in(&self, outer: &Domain) -> Vec<f64> {
        outer.frame_of(&self.translation)
    }

    /// Domain of scale `t` placed at renormalized offset `z` inside `self`.
    pub fn child(&self, t: f64, z: &[f64]) -> Domain {
        let prec = self.prec();
        let moved = self.semigroup().apply_hp(self.t, &hp::from_f64s(prec, z), prec);
        let translation = moved.into_iter().zip(&self.translation).map(|(m, h)| Float::with_val(prec, &m + h)).collect();
        Domain { t, translation, space: Arc::clone(&self.space) }
    }

    /// Admissible offsets for a child of scale `t_inner`, if any exist.
    pub fn legal_box(&self, t_inner: f64) -> Option<OffsetBox> {
        let m = self.semigroup().matrix(t_inner - self.t);
        let (qlo, qhi) = self.base().image_bounds(&m);
        let lower: Vec<f64> = (0..qlo.len()).map(|i| self.base().lower[i] - qlo[i]).collect();
        let upper: Vec<f64> = (0..qhi.len()).map(|i| self.base().upper[i] - qhi[i]).collect();
        if lower.iter().zip(&upper).any(|(l, u)| *l > u + CONTAINMENT_TOL) {
            return None;
        }
        let upper = lower.iter().zip(&upper).map(|(l, u)| u.max(*l)).collect();
        Some(OffsetBox { lower, upper })
    }

    /// Sup-metric diameter.
    pub fn diameter(&self) -> f64 {
        self.base().image_diameter(&self.semigroup().matrix(self.t))
    }

    pub fn contains_point(&self, p: &[Real], tol: f64) -> bool {
        self.base().contains(&self.frame_of(p), tol)
    }
}

/// True iff every vertex of `inner` lies in `outer` (renormalized slack 1e-12).
pub fn fits_inside(inner: &Domain, outer: &Domain) -> Result<bool, ContractionError> {
    if *inner.space != *outer.space {
        return Err(ContractionError::MismatchedContext);
    }
    let z = inner.offset_in(outer);
    let m = inner.semigroup().matrix(inner.t - outer.t);
    let base = inner.base();
    Ok(base.vertices().iter().all(|v| {
        let q = &m * DVector::from_column_slice(v);
        let p: Vec<f64> = q.iter().zip(&z).map(|(a, b)| a + b).collect();
        base.contains(&p, CONTAINMENT_TOL)
    }))
}

fn translate_fits(sg: &ContractionSemigroup, base: &AdmissibleBase, t: f64) -> bool {
    let (lo, hi) = base.image_bounds(&sg.matrix(t));
    base.widths().iter().zip(lo.iter().zip(&hi)).all(|(w, (l, h))| h - l <= w + CONTAINMENT_TOL)
}

/// Scale past which a domain is always small enough to fit anywhere in D0.
fn safe_scale(sg: &ContractionSemigroup, base: &AdmissibleBase) -> f64 {
    let wmin = base.widths().into_iter().fold(f64::INFINITY, f64::min);
    ((sg.c0 / wmin).ln() / sg.sigma).max(0.0) + 1.0
}

/// Last scale at which `pred` fails, scanning up to `hi` then bisecting.
fn last_failure(pred: &dyn Fn(f64) -> bool, hi: f64) -> f64 {
    let step = 1e-3;
    let n = (hi / step).ceil() as usize;
    let mut last_bad = None;
    for i in 0..=n {
        let t = i as f64 * step;
        if !pred(t) {
            last_bad = Some(t);
        }
    }
    let Some(bad) = last_bad else { return 0.0 };
    let (mut lo, mut up) = (bad, bad + step);
    while up - lo > 1e-9 {
        let mid = 0.5 * (lo + up);
        if pred(mid) {
            up = mid;
        } else {
            lo = mid;
        }
    }
    up
}

/// Threshold beyond which a translate of `Phi_t(D0)` always fits in D0.
pub fn compute_a_star(sg: &ContractionSemigroup, base: &AdmissibleBase) -> f64 {
    if sg.is_diagonal() {
        return 0.0;
    }
    last_failure(&|t| translate_fits(sg, base, t), safe_scale(sg, base))
}

/// Min over `u` in `[-w, w]` of `|m u - d|_2`, by enumerating active sets.
fn box_distance(m: &DMatrix<f64>, w: &[f64], d: &[f64]) -> f64 {
    let l = w.len();
    let target = DVector::from_column_slice(d);
    let mut best = f64::INFINITY;
    let patterns = 3usize.pow(l as u32);
    for code in 0..patterns {
        let mut fixed = vec![0i8; l];
        let mut c = code;
        for f in fixed.iter_mut() {
            *f = (c % 3) as i8 - 1;
            c /= 3;
        }
        let free: Vec<usize> = (0..l).filter(|&i| fixed[i] == 0).collect();
        let mut rhs = target.clone();
        for i in 0..l {
            if fixed[i] != 0 {
                rhs -= m.column(i) * (fixed[i] as f64 * w[i]);
            }
        }
        let mut u = vec![0.0; l];
        for i in 0..l {
            u[i] = fixed[i] as f64 * w[i];
        }
        if !free.is_empty() {
            let sub = DMatrix::from_fn(l, free.len(), |r, c| m[(r, free[c])]);
            let Ok(sol) = sub.clone().svd(true, true).solve(&rhs, 1e-14) else { continue };
            if free.iter().enumerate().any(|(k, &i)| sol[k].abs() > w[i] * (1.0 + 1e-12)) {
                continue;
            }
            for (k, &i) in free.iter().enumerate() {
                u[i] = sol[k];
            }
        }
        let r = m * DVector::from_column_slice(&u) - &target;
        best = best.min(r.norm());
    }
    best
}

fn corner_pair(space: &Arc<GameSpace>, a: f64) -> Option<(Domain, Domain, f64)> {
    let root = space.root();
    let legal = root.legal_box(a)?;
    let m = space.semigroup.matrix(a);
    let d: Vec<f64> = legal.upper.iter().zip(&legal.lower).map(|(u, l)| u - l).collect();
    let eps = box_distance(&m, &space.base.widths(), &d);
    Some((root.child(a, &legal.lower), root.child(a, &legal.upper), eps))
}

/// Smallest scale above which two disjoint translates of `Phi_a(D0)` fit in D0.
pub fn two_translate_threshold(sg: &ContractionSemigroup, base: &AdmissibleBase) -> f64 {
    if let SemigroupKind::Diagonal { rates } = &sg.kind {
        let fastest = rates.iter().cloned().fold(0.0, f64::max);
        return std::f64::consts::LN_2 / fastest;
    }
    let space = GameSpace::new(sg.clone(), base.clone());
    let hi = safe_scale(sg, base) + std::f64::consts::LN_2 / sg.sigma;
    last_failure(&|a| corner_pair(&space, a).is_some_and(|(_, _, e)| e > 1e-12), hi)
}

/// Two translates of `Phi_a(D0)` inside D0 at opposite corners of the legal
/// offset box, with their Euclidean set distance.
pub fn two_separated_translates(space: &Arc<GameSpace>, a: f64) -> Result<(Domain, Domain, f64), ContractionError> {
    let threshold = two_translate_threshold(&space.semigroup, &space.base);
    let too_small = ContractionError::TooSmallScale { a, threshold };
    if a <= threshold {
        return Err(too_small);
    }
    match corner_pair(space, a) {
        Some((d1, d2, eps)) if eps > 0.0 => Ok((d1, d2, eps)),
        _ => Err(too_small),
    }
}

/// Smallest `s` such that `Phi_s` of each box fits in a translate of the other.
pub fn mutual_squeeze(sg: &ContractionSemigroup, first: &AdmissibleBase, second: &AdmissibleBase) -> f64 {
    let fits = |s: f64, inner: &AdmissibleBase, outer: &AdmissibleBase| {
        let (lo, hi) = inner.image_bounds(&sg.matrix(s));
        outer.widths().iter().zip(lo.iter().zip(&hi)).all(|(w, (l, h))| h - l <= w + CONTAINMENT_TOL)
    };
    let both = |s: f64| fits(s, first, second) && fits(s, second, first);
    let hi = safe_scale(sg, first).max(safe_scale(sg, second)) + 1.0;
    last_failure(&both, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_space(rates: Vec<f64>) -> Arc<GameSpace> {
        let base = AdmissibleBase::unit(rates.len());
        GameSpace::new(ContractionSemigroup::diagonal(rates, &base).unwrap(), base)
    }

    #[test]
    fn apply_diagonal_examples() {
        let base = AdmissibleBase::unit(2);
        let sg = ContractionSemigroup::diagonal(vec![1.0, 2.0], &base).unwrap();
        let y = apply(&sg, 2f64.ln(), &[1.0, 1.0]);
        assert!((y[0] - 0.5).abs() < 1e-15 && (y[1] - 0.25).abs() < 1e-15);
        assert_eq!(apply(&sg, 0.0, &[0.3, -2.0]), vec![0.3, -2.0]);
        let sg = ContractionSemigroup::diagonal(vec![4.0 / 3.0, 5.0 / 3.0], &base).unwrap();
        let y = apply(&sg, 3.0, &[1.0, 1.0]);
        assert!((y[0] / (-4f64).exp() - 1.0).abs() < 1e-14);
        assert!((y[1] / (-5f64).exp() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn general_kind_rejects_expanding_generator() {
        let base = AdmissibleBase::unit(2);
        let gen = DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, -1.0]);
        assert!(ContractionSemigroup::general(gen, None, &base).is_err());
    }

    #[test]
    fn fits_inside_examples() {
        let space = unit_space(vec![1.0, 1.0]);
        let outer = space.root();
        assert!(fits_inside(&outer, &outer).unwrap());
        let inner = Domain::from_f64(&space, 1.0, &[0.0, 0.0]);
        assert!(fits_inside(&inner, &outer).unwrap());
        let shifted = Domain::from_f64(&space, 1.0, &[1.0, 1.0]);
        // vertex (1 + 1/e, 1 + 1/e) leaves the unit square
        let e = (-1f64).exp();
        assert!(1.0 + e > 1.0 + CONTAINMENT_TOL);
        assert!(!fits_inside(&shifted, &outer).unwrap());
    }

    #[test]
    fn fits_inside_rejects_foreign_space() {
        let a = unit_space(vec![1.0, 1.0]);
        let b = unit_space(vec![1.0, 2.0]);
        assert_eq!(fits_inside(&a.root(), &b.root()), Err(ContractionError::MismatchedContext));
    }

    #[test]
    fn diameter_bound_examples() {
        let base = AdmissibleBase::cube(2, 2.0);
        let sg = ContractionSemigroup::diagonal(vec![1.0, 1.0], &base).unwrap();
        assert_eq!(sg.c0, 2.0);
        assert_eq!(diameter_bound(&sg, 0.0), 2.0);
        assert!((diameter_bound(&sg, 2f64.ln()) - 1.0).abs() < 1e-15);

        let space = unit_space(vec![4.0 / 3.0, 5.0 / 3.0]);
        for t in 0..=10 {
            let d = Domain::from_f64(&space, t as f64, &[0.0, 0.0]);
            // direct measurement over all vertex pairs
            let vs: Vec<Vec<f64>> = d.vertices().iter().map(|v| hp::to_f64s(v)).collect();
            let mut diam: f64 = 0.0;
            for p in &vs {
                for q in &vs {
                    diam = diam.max(p.iter().zip(q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
                }
            }
            assert!(diam <= diameter_bound(&space.semigroup, t as f64) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn a_star_of_diagonal_is_zero() {
        let base = AdmissibleBase::new(vec![-1.0, 0.0], vec![3.0, 0.5]).unwrap();
        let sg = ContractionSemigroup::diagonal(vec![0.7, 2.0], &base).unwrap();
        assert_eq!(compute_a_star(&sg, &base), 0.0);
    }

    #[test]
    fn a_star_of_rotation_contraction() {
        let base = AdmissibleBase::unit(2);
        let gen = DMatrix::from_row_slice(2, 2, &[-1.0, -5.0, 5.0, -1.0]);
        let sg = ContractionSemigroup::general(gen, None, &base).unwrap();
        assert!((sg.sigma - 1.0).abs() < 1e-9);
        let a = compute_a_star(&sg, &base);
        assert!(a > 0.0);
        let space = GameSpace::new(sg.clone(), base.clone());
        let root = space.root();
        // a fitting translate exists at a_*: place it via the legal box
        let legal = root.legal_box(a).expect("fit at a_*");
        assert!(fits_inside(&root.child(a, &legal.lower), &root).unwrap());
        // and no translate fits slightly below
        assert!(root.legal_box(a - 0.01).is_none());
        for dt in [0.01, 0.1, 0.5, 2.0, 5.0] {
            assert!(root.legal_box(a + dt).is_some());
        }
    }

    #[test]
    fn two_translates_unit_square() {
        let space = unit_space(vec![1.0, 1.0]);
        let (d1, d2, eps) = two_separated_translates(&space, 4f64.ln()).unwrap();
        assert!((eps - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(hp::to_f64s(&d1.translation), vec![0.0, 0.0]);
        let h2 = hp::to_f64s(&d2.translation);
        assert!((h2[0] - 0.75).abs() < 1e-15 && (h2[1] - 0.75).abs() < 1e-15);
        let (_, _, eps100) = two_separated_translates(&space, 100f64.ln()).unwrap();
        assert!(eps100 >= eps);
        assert!((eps100 - 2f64.sqrt() * 0.98).abs() < 1e-12);
        assert!(matches!(
            two_separated_translates(&space, 2f64.ln()),
            Err(ContractionError::TooSmallScale { .. })
        ));
    }

    #[test]
    fn box_distance_matches_axis_gaps() {
        // oracle: for diagonal images the distance is the norm of per-axis gaps
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![0.25, 0.5]));
        let d = [0.75, 0.2];
        let w = [1.0, 1.0];
        let gaps: Vec<f64> = (0..2).map(|i| f64::abs(d[i] - m[(i, i)] * w[i])).collect();
        let expect = ((d[0] - 0.25f64).max(0.0).powi(2) + (d[1] - 0.5f64).max(0.0).powi(2)).sqrt();
        assert!((box_distance(&m, &w, &d) - expect).abs() < 1e-14);
        assert!(gaps[0] > 0.0);
    }

    #[test]
    fn mutual_squeeze_of_nested_cubes() {
        let unit = AdmissibleBase::unit(2);
        let big = AdmissibleBase::cube(2, 2.0);
        let sg = ContractionSemigroup::diagonal(vec![2.0, 2.0], &unit).unwrap();
        let s = mutual_squeeze(&sg, &unit, &big);
        assert!((s - 2f64.ln() / 2.0).abs() < 1e-8);
    }

    #[test]
    fn deep_child_round_trips_through_frames() {
        let base = AdmissibleBase::unit(1);
        let sg = ContractionSemigroup::diagonal(vec![2.0], &base).unwrap();
        let space = GameSpace::with_horizon(sg, base, 120.0);
        let mut d = space.root();
        for k in 1..=60 {
            let t = 2.0 * k as f64;
            let legal = d.legal_box(t).unwrap();
            let next = d.child(t, &legal.point(&[0.37]));
            assert!(fits_inside(&next, &d).unwrap());
            d = next;
        }
        assert!(d.contains_point(&d.center(), 1e-12));
    }

    proptest! {
        #[test]
        fn semigroup_law(s in -3.0f64..3.0, t in -3.0f64..3.0, x in prop::collection::vec(-5.0f64..5.0, 2)) {
            let base = AdmissibleBase::unit(2);
            let gen = DMatrix::from_row_slice(2, 2, &[-1.0, -5.0, 5.0, -1.0]);
            for sg in [
                ContractionSemigroup::diagonal(vec![1.0, 2.5], &base).unwrap(),
                ContractionSemigroup::general(gen.clone(), None, &base).unwrap(),
            ] {
                let a = sg.apply(s, &sg.apply(t, &x));
                let b = sg.apply(s + t, &x);
                for (p, q) in a.iter().zip(&b) {
                    prop_assert!((p - q).abs() <= 1e-9 * (1.0 + q.abs()));
                }
                let back = sg.apply(-t, &sg.apply(t, &x));
                for (p, q) in back.iter().zip(&x) {
                    prop_assert!((p - q).abs() <= 1e-8);
                }
            }
        }

        #[test]
        fn containment_is_transitive(u in prop::collection::vec(0.0f64..1.0, 4), ta in 0.0f64..2.0, tb in 0.0f64..2.0) {
            let space = unit_space(vec![1.0, 1.5]);
            let c = space.root();
            let b = c.child(ta, &c.legal_box(ta).unwrap().point(&u[..2]));
            let a = b.child(ta + tb, &b.legal_box(ta + tb).unwrap().point(&u[2..]));
            prop_assert!(fits_inside(&a, &b).unwrap());
            prop_assert!(fits_inside(&b, &c).unwrap());
            prop_assert!(fits_inside(&a, &c).unwrap());
        }

        #[test]
        fn diagonal_diameter_is_exact(t in 0.0f64..20.0) {
            let base = AdmissibleBase::new(vec![0.0, 0.0], vec![3.0, 1.0]).unwrap();
            let sg = ContractionSemigroup::diagonal(vec![0.5, 2.0], &base).unwrap();
            let space = GameSpace::new(sg.clone(), base);
            let d = Domain::from_f64(&space, t, &[0.0, 0.0]);
            let expect = (3.0 * (-0.5 * t).exp()).max((-2.0 * t).exp());
            prop_assert!((d.diameter() - expect).abs() <= 1e-15 * expect.max(1.0));
            prop_assert!(d.diameter() <= diameter_bound(&sg, t) * (1.0 + 1e-12));
        }

        #[test]
        fn fit_persists_above_a_star(dt in 0.0f64..4.0) {
            let base = AdmissibleBase::unit(2);
            let gen = DMatrix::from_row_slice(2, 2, &[-1.0, -5.0, 5.0, -1.0]);
            let sg = ContractionSemigroup::general(gen, None, &base).unwrap();
            let a = compute_a_star(&sg, &base);
            prop_assert!(translate_fits(&sg, &base, a + dt));
        }
    }
}
