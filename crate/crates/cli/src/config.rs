//! TOML run configuration. Every section is optional; each subcommand reads
//! the sections it needs and reports missing or out-of-range values by
//! their dotted field name.

use std::path::Path;

use msgame_core::contraction::compute_a_star;
use msgame_core::strategies::AuditConfig;
use msgame_core::{AdmissibleBase, ContractionSemigroup, LatticeBasis, Schedule, WeightVector};
use nalgebra::DMatrix;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub rounds: Option<usize>,
    pub space: Option<SpaceConfig>,
    pub schedule: Option<ScheduleConfig>,
    pub alice: Option<AliceConfig>,
    pub bob: Option<BobConfig>,
    pub audit: Option<AuditSection>,
    pub diophantine: Option<DiophantineConfig>,
    pub expanding: Option<ExpandingConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    pub r: Vec<f64>,
    pub s: Vec<f64>,
    pub base_lower: Option<Vec<f64>>,
    pub base_upper: Option<Vec<f64>>,
    /// Rows of the starting lattice basis `g`; identity when absent.
    pub basepoint: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub t1: f64,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AliceKind {
    Avoid,
    Bounded,
    Dummy,
    Random,
    Intersect,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AliceConfig {
    pub strategy: AliceKind,
    pub seed: Option<u64>,
    /// Avoidance target lattice rows; identity when absent.
    pub target: Option<Vec<Vec<f64>>>,
    /// Transversality scale; calibrated by the audit when absent.
    pub delta: Option<f64>,
    pub eps0_cap: Option<f64>,
    #[serde(default)]
    pub components: Vec<AliceConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BobKind {
    Random,
    Cusp,
    Target,
    Dummy,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BobConfig {
    pub strategy: BobKind,
    pub seed: Option<u64>,
    pub target: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSection {
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub max_level: Option<u32>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiophantineConfig {
    /// Rows of `Y` for `certify-bad`.
    pub y: Option<Vec<Vec<f64>>>,
    pub q_max: Option<u64>,
    /// Number of random `Y` for `dani-audit`.
    pub count: Option<usize>,
    pub seed: Option<u64>,
    pub t_max: Option<f64>,
    pub t_step: Option<f64>,
    pub band_lo: Option<f64>,
    pub band_hi: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightEntry {
    pub r: Vec<f64>,
    pub s: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpandingConfig {
    pub weights: Vec<WeightEntry>,
    pub degrees: Option<Vec<usize>>,
    /// Swap the expanding projection for the non-expanding one.
    #[serde(default)]
    pub control: bool,
}

pub fn config_err(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn section<'a, T>(value: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    value.as_ref().ok_or_else(|| config_err(name, "section is required for this subcommand"))
}

pub fn matrix(rows: &[Vec<f64>], field: &str) -> Result<DMatrix<f64>, CliError> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(config_err(field, "expected a nonempty rectangular array of rows"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn lattice(rows: Option<&Vec<Vec<f64>>>, k: usize, field: &str) -> Result<LatticeBasis, CliError> {
    let Some(rows) = rows else {
        return Ok(LatticeBasis::identity(k));
    };
    let m = matrix(rows, field)?;
    if m.nrows() != k || m.ncols() != k {
        return Err(config_err(field, format!("expected a {k}x{k} matrix")));
    }
    LatticeBasis::new(m).map_err(|e| config_err(field, e))
}

pub fn weights(r: &[f64], s: &[f64], field: &str) -> Result<WeightVector, CliError> {
    WeightVector::new(r.to_vec(), s.to_vec()).map_err(|e| config_err(field, e))
}

/// The space, semigroup and basepoint described by `[space]`.
pub struct Space {
    pub weights: WeightVector,
    pub base: AdmissibleBase,
    pub semigroup: ContractionSemigroup,
    pub basepoint: LatticeBasis,
}

impl SpaceConfig {
    pub fn build(&self) -> Result<Space, CliError> {
        let weights = weights(&self.r, &self.s, "space.r/space.s")?;
        let dim = weights.h_dim();
        let base = match (&self.base_lower, &self.base_upper) {
            (None, None) => AdmissibleBase::unit(dim),
            (Some(lo), Some(hi)) => {
                if lo.len() != dim || hi.len() != dim {
                    return Err(config_err("space.base_lower", format!("expected {dim} coordinates")));
                }
                AdmissibleBase::new(lo.clone(), hi.clone()).map_err(|e| config_err("space.base_lower", e))?
            }
            _ => return Err(config_err("space.base_upper", "base_lower and base_upper go together")),
        };
        let semigroup = ContractionSemigroup::for_weights(&weights, &base).map_err(|e| config_err("space.r/space.s", e))?;
        let basepoint = lattice(self.basepoint.as_ref(), weights.k(), "space.basepoint")?;
        Ok(Space { weights, base, semigroup, basepoint })
    }
}

impl ScheduleConfig {
    pub fn build(&self, space: &Space) -> Result<Schedule, CliError> {
        let a_star = compute_a_star(&space.semigroup, &space.base);
        // the schedule error names the offending field
        Schedule::new(self.t1, self.a, self.b, a_star).map_err(|e| CliError::Config(e.to_string()))
    }
}

impl AuditSection {
    pub fn build(&self) -> AuditConfig {
        let d = AuditConfig::default();
        AuditConfig {
            samples: self.samples.unwrap_or(d.samples),
            seed: self.seed.unwrap_or(d.seed),
            max_level: self.max_level.unwrap_or(d.max_level),
        }
    }
}

pub fn rounds(cfg: &RunConfig, flag: Option<usize>) -> Result<usize, CliError> {
    let n = flag.or(cfg.rounds).ok_or_else(|| config_err("rounds", "missing (set it in the file or pass --rounds)"))?;
    if n == 0 {
        return Err(config_err("rounds", "must be at least 1"));
    }
    Ok(n)
}

pub fn positive(x: f64, field: &str) -> Result<f64, CliError> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(config_err(field, format!("must be positive, got {x}")))
    }
}
