//! The JSON run configuration.

use std::path::{Path, PathBuf};

use polyseg::{
    make_params, CouplingMatrix, Discretization, Grid, PhiConvention, ProblemParams, SolveOptions,
    SweepSchedule,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    #[serde(rename = "N")]
    pub n: usize,
    pub m: usize,
    pub n1: usize,
    pub n2: usize,
}

impl Default for ParamsConfig {
    fn default() -> Self {
        Self { n: 4, m: 1, n1: 2, n2: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouplingConfig {
    pub ell: usize,
    /// One weight per species; all ones when absent.
    pub mu: Option<Vec<f64>>,
    /// Off-diagonal coupling for `solve-system`.
    pub lambda: f64,
    /// Exponent matrices; `2*/2` everywhere when absent.
    pub alpha: Option<Vec<Vec<f64>>>,
    pub beta: Option<Vec<Vec<f64>>>,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        Self { ell: 2, mu: None, lambda: -1.0, alpha: None, beta: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Explicit schedule; overrides `base` and `steps`.
    pub lambdas: Option<Vec<f64>>,
    /// `λ_k = −base^k`.
    pub base: f64,
    pub steps: usize,
    pub warm_start: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { lambdas: None, base: 4.0, steps: 8, warm_start: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub params: ParamsConfig,
    /// Number of grid nodes `M`.
    pub grid: usize,
    pub convention: PhiConvention,
    pub couplings: CouplingConfig,
    pub sweep: SweepConfig,
    pub solver: SolveOptions,
    pub out: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            params: ParamsConfig::default(),
            grid: 2048,
            convention: PhiConvention::Selfadjoint,
            couplings: CouplingConfig::default(),
            sweep: SweepConfig::default(),
            solver: SolveOptions::default(),
            out: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.problem()?;
        self.discretization_grid()?;
        self.solver.validate()?;
        self.coupling(self.couplings.lambda)?;
        self.schedule()?;
        Ok(())
    }

    pub fn problem(&self) -> Result<ProblemParams, CliError> {
        let p = &self.params;
        Ok(make_params(p.n, p.m, p.n1, p.n2)?)
    }

    fn discretization_grid(&self) -> Result<Grid, CliError> {
        Ok(Grid::with_convention(self.grid, &self.problem()?, self.convention)?)
    }

    pub fn discretization(&self) -> Result<Discretization, CliError> {
        let params = self.problem()?;
        let grid = self.discretization_grid()?;
        Ok(Discretization::new(grid, polyseg::conformal_coefficients(&params))?)
    }

    /// Species weights, one per cell or component.
    pub fn mu(&self, ell: usize) -> Result<Vec<f64>, CliError> {
        match &self.couplings.mu {
            None => Ok(vec![1.0; ell]),
            Some(mu) if mu.len() == ell => Ok(mu.clone()),
            Some(mu) => Err(CliError::Config(format!("couplings.mu has {} entries, need {ell}", mu.len()))),
        }
    }

    pub fn coupling(&self, lambda: f64) -> Result<CouplingMatrix, CliError> {
        let ell = self.couplings.ell;
        if ell == 0 {
            return Err(CliError::Config("couplings.ell must be positive".into()));
        }
        let two_star = self.problem()?.two_star();
        let mu = self.mu(ell)?;
        let lam: Vec<Vec<f64>> =
            (0..ell).map(|i| (0..ell).map(|j| if i == j { 0.0 } else { lambda }).collect()).collect();
        let half = vec![vec![two_star / 2.0; ell]; ell];
        let alpha = self.couplings.alpha.clone().unwrap_or_else(|| half.clone());
        let beta = self.couplings.beta.clone().unwrap_or(half);
        Ok(CouplingMatrix::new(mu, lam, alpha, beta, two_star)?)
    }

    pub fn schedule(&self) -> Result<SweepSchedule, CliError> {
        let s = &self.sweep;
        let options = self.solver.clone();
        let schedule = match &s.lambdas {
            Some(l) => SweepSchedule { lambdas: l.clone(), options, warm_start: s.warm_start },
            None => SweepSchedule { warm_start: s.warm_start, ..SweepSchedule::geometric(s.base, s.steps, options) },
        };
        schedule.validate()?;
        Ok(schedule)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(RunConfig::parse("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::parse(r#"{"grid": 256, "gird": 3}"#).unwrap_err();
        assert!(err.to_string().contains("gird"), "{err}");
        let err = RunConfig::parse("{\n\"params\": {\"N\": 4, \"m\": 1, \"n1\": 2, \"n2\": 3, \"k\": 1}}").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn module_invariants_are_revalidated() {
        assert!(RunConfig::parse(r#"{"params": {"N": 4, "m": 2, "n1": 2, "n2": 3}}"#).is_err());
        assert!(RunConfig::parse(r#"{"grid": 4}"#).is_err());
        assert!(RunConfig::parse(r#"{"couplings": {"lambda": 2.0}}"#).is_err());
        assert!(RunConfig::parse(r#"{"couplings": {"mu": [1.0]}}"#).is_err());
        assert!(RunConfig::parse(r#"{"sweep": {"lambdas": [-1.0, -0.5]}}"#).is_err());
        assert!(RunConfig::parse(r#"{"solver": {"backtrack": 1.5}}"#).is_err());
    }

    #[test]
    fn default_schedule_reaches_two_to_the_fourteenth() {
        let s = RunConfig::default().schedule().unwrap();
        assert_eq!(s.lambdas.first(), Some(&-1.0));
        assert_eq!(s.lambdas.last(), Some(&-16384.0));
    }

    #[test]
    fn config_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.couplings.mu = Some(vec![1.0, 2.5]);
        cfg.seed = 9;
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
    }
}
