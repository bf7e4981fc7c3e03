//! Flat `key = value` run configuration with `#` comments.

use std::fs;
use std::path::{Path, PathBuf};

use crate::conditional::SmootherConfig;
use crate::error::{Error, Result};
use crate::model::ToyParameters;
use crate::nlreg::{McmcConfig, PriorConfig, DEFAULT_LEVELS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub fixed: f64,
    pub per_participant: f64,
}

impl CostModel {
    pub fn cost(&self, n: f64) -> f64 {
        self.fixed + self.per_participant * n
    }
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            fixed: 0.0,
            per_participant: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Label used when designs are compared.
    pub name: String,
    pub model: String,
    pub exercise: u32,
    /// Zero-based; `None` keeps the model default.
    pub reference_arm: Option<usize>,
    pub toy: ToyParameters,
    pub psa_draws: usize,
    pub q: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub posterior_draws: usize,
    pub smoother: SmootherConfig,
    pub mcmc: McmcConfig,
    pub prior: PriorConfig,
    pub levels: Vec<f64>,
    pub seed: u64,
    pub out: PathBuf,
    pub cost: CostModel,
    pub population: f64,
    pub oracle_outer: usize,
    pub oracle_inner: usize,
    pub oracle_n: Vec<usize>,
    pub variance_points: Option<PathBuf>,
    pub fitted_values: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "design".into(),
            model: "bk".into(),
            exercise: 1,
            reference_arm: None,
            toy: ToyParameters::default(),
            psa_draws: 100_000,
            q: 50,
            n_min: 10,
            n_max: 200,
            posterior_draws: 10_000,
            smoother: SmootherConfig::default(),
            mcmc: McmcConfig::default(),
            prior: PriorConfig::default(),
            levels: DEFAULT_LEVELS.to_vec(),
            seed: 1,
            out: PathBuf::from("evsi-out"),
            cost: CostModel::default(),
            population: 1.0,
            oracle_outer: 2000,
            oracle_inner: 2000,
            oracle_n: vec![10, 50, 200],
            variance_points: None,
            fitted_values: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "name",
    "model",
    "exercise",
    "reference_arm",
    "toy_mu0",
    "toy_sigma0",
    "toy_sigma_d",
    "psa_draws",
    "q",
    "n_min",
    "n_max",
    "posterior_draws",
    "smoother_max_fit_draws",
    "mcmc_chains",
    "mcmc_burn_in",
    "mcmc_draws",
    "h_prior_variance_multiplier",
    "sigma_prior_df",
    "levels",
    "seed",
    "out",
    "fixed_cost",
    "per_participant_cost",
    "population",
    "oracle_outer",
    "oracle_inner",
    "oracle_n",
    "variance_points",
    "fitted_values",
];

impl RunConfig {
    /// Reads a config file on top of the defaults. The design name
    /// defaults to the file stem.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg = RunConfig::default();
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            cfg.name = stem.to_string();
        }
        cfg.apply_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: source.to_string(),
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            self.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::InvalidArgument(m) => err(m),
                other => other,
            })?;
        }
        Ok(())
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "name" => self.name = value.to_string(),
            "model" => self.model = value.to_string(),
            "exercise" => self.exercise = parse(key, value)?,
            "reference_arm" => {
                let arm: usize = parse(key, value)?;
                if arm == 0 {
                    return Err(Error::invalid("reference_arm is one-based"));
                }
                self.reference_arm = Some(arm - 1);
            }
            "toy_mu0" => self.toy.mu0 = parse(key, value)?,
            "toy_sigma0" => self.toy.sigma0 = parse(key, value)?,
            "toy_sigma_d" => self.toy.sigma_d = parse(key, value)?,
            "psa_draws" => self.psa_draws = parse(key, value)?,
            "q" => self.q = parse(key, value)?,
            "n_min" => self.n_min = parse(key, value)?,
            "n_max" => self.n_max = parse(key, value)?,
            "posterior_draws" => self.posterior_draws = parse(key, value)?,
            "smoother_max_fit_draws" => self.smoother.max_fit_draws = parse(key, value)?,
            "mcmc_chains" => self.mcmc.chains = parse(key, value)?,
            "mcmc_burn_in" => self.mcmc.burn_in = parse(key, value)?,
            "mcmc_draws" => self.mcmc.draws = parse(key, value)?,
            "h_prior_variance_multiplier" => self.prior.h_variance_multiplier = parse(key, value)?,
            "sigma_prior_df" => self.prior.sigma_df = parse(key, value)?,
            "levels" => self.levels = parse_list(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "fixed_cost" => self.cost.fixed = parse(key, value)?,
            "per_participant_cost" => self.cost.per_participant = parse(key, value)?,
            "population" => self.population = parse(key, value)?,
            "oracle_outer" => self.oracle_outer = parse(key, value)?,
            "oracle_inner" => self.oracle_inner = parse(key, value)?,
            "oracle_n" => self.oracle_n = parse_list(key, value)?,
            "variance_points" => self.variance_points = Some(PathBuf::from(value)),
            "fitted_values" => self.fitted_values = Some(PathBuf::from(value)),
            _ => return Err(Error::invalid(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("psa_draws", self.psa_draws),
            ("q", self.q),
            ("posterior_draws", self.posterior_draws),
            ("mcmc_chains", self.mcmc.chains),
            ("mcmc_draws", self.mcmc.draws),
            ("oracle_outer", self.oracle_outer),
            ("oracle_inner", self.oracle_inner),
            ("smoother_max_fit_draws", self.smoother.max_fit_draws),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{k} must be positive")));
        }
        if self.n_min < 1 || self.n_min >= self.n_max {
            return Err(Error::invalid(format!(
                "need 1 ≤ n_min < n_max, got n_min={}, n_max={}",
                self.n_min, self.n_max
            )));
        }
        if self.levels.is_empty()
            || self.levels.iter().any(|&l| !(l > 0.0 && l < 1.0))
            || self.levels.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::invalid(
                "levels must be increasing and inside (0, 1)",
            ));
        }
        if !self.levels.contains(&0.5) {
            return Err(Error::invalid("levels must include the median 0.5"));
        }
        if !(self.population >= 0.0) || !self.population.is_finite() {
            return Err(Error::invalid("population must be a finite value ≥ 0"));
        }
        if !self.cost.fixed.is_finite() || !self.cost.per_participant.is_finite() {
            return Err(Error::invalid("costs must be finite"));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\', ',']) {
            return Err(Error::invalid(
                "name must be non-empty without `/`, `\\` or `,`",
            ));
        }
        Ok(())
    }

    /// Sample sizes the curve is reported on.
    pub fn grid(&self) -> Vec<f64> {
        (self.n_min..=self.n_max).map(|n| n as f64).collect()
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("bad value `{value}` for `{key}`")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}
