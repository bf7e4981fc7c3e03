//! End-to-end runs: PSA, conditional INB, posterior variances, the curve
//! regression and the EVSI curves, plus the oracle and design comparison.

mod compare;
mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub use compare::{compare_designs, DesignComparison, DesignInput, DesignResult};
pub use config::{CostModel, RunConfig, KEYS};

use crate::conditional::{evppi, fit_conditional_inb, ConditionalInb, FitSource};
use crate::error::{Error, Result};
use crate::io::{self, fmt_num};
use crate::model::{
    self, bk_exercise, toy_study, ModelSpec, NetBenefitDraws, NetBenefitFn, ParameterDraws,
    StudyDesign,
};
use crate::moment::{
    build_quantile_design, estimate_posterior_variances, PosteriorVariancePoint, QuantileDesign,
};
use crate::nlreg::{
    evsi_curve, evsi_curve_multi, fit_variance_curve, fit_variance_surface_multi,
    residual_diagnostics, EvsiCurve, NlregPosterior, VarianceObservations, VarianceSurface,
    BAND_NOTE,
};
use crate::oracle::{closed_form_toy_evsi, nested_mc_evsi, OracleEstimate};
use crate::psa::{compute_inb, inb_moments, InbDraws, InbMoments};
use crate::rng::derive_seed;

/// Resolves the model and the study template (sample size 0).
pub fn resolve_model(cfg: &RunConfig) -> Result<(ModelSpec, StudyDesign)> {
    let spec = match cfg.model.as_str() {
        "normal-toy" => ModelSpec::normal_toy(&cfg.toy)?,
        other => ModelSpec::builtin(other)?,
    };
    let spec = match cfg.reference_arm {
        Some(arm) => spec.with_reference_arm(arm)?,
        None => spec,
    };
    let study = match spec.net_benefit {
        NetBenefitFn::NormalToy => {
            if cfg.exercise != 1 {
                return Err(Error::UnknownExercise(cfg.exercise));
            }
            toy_study(cfg.toy.sigma_d, 0)
        }
        _ => bk_exercise(cfg.exercise, 0)?,
    };
    study.validate(&spec)?;
    Ok((spec, study))
}

#[derive(Debug, Clone)]
pub struct PsaStage {
    pub spec: ModelSpec,
    pub study: StudyDesign,
    pub draws: ParameterDraws,
    pub net_benefit: NetBenefitDraws,
    pub inb: InbDraws,
    pub moments: InbMoments,
}

impl PsaStage {
    pub fn focal_draws(&self) -> nalgebra::DMatrix<f64> {
        self.draws.select_columns(&self.study.focal_parameters)
    }
}

pub fn run_psa(cfg: &RunConfig) -> Result<PsaStage> {
    cfg.validate()?;
    let (spec, study) = resolve_model(cfg)?;
    let draws = model::sample_prior(&spec, cfg.psa_draws, derive_seed(cfg.seed, "psa", 0))?;
    let net_benefit = model::net_benefit(&draws, &spec)?;
    let inb = compute_inb(&net_benefit, spec.reference_arm)?;
    let moments = inb_moments(&inb)?;
    Ok(PsaStage {
        spec,
        study,
        draws,
        net_benefit,
        inb,
        moments,
    })
}

/// Fits the smoother, or reads fitted values when the config names a file.
pub fn run_conditional(cfg: &RunConfig, psa: &PsaStage) -> Result<ConditionalInb> {
    match &cfg.fitted_values {
        Some(path) => {
            let fitted = io::read_fitted_values(path, psa.inb.len(), psa.inb.dim())?;
            ConditionalInb::from_fitted(fitted)
        }
        None => fit_conditional_inb(&psa.inb, &psa.focal_draws(), &cfg.smoother),
    }
}

#[derive(Debug, Clone)]
pub struct VarianceStage {
    pub design: Option<QuantileDesign>,
    /// Values rounded to their printed form, so a re-ingested file refits
    /// to the same curve.
    pub points: Vec<PosteriorVariancePoint>,
    pub posterior_updates: usize,
    pub model_evaluations: usize,
}

pub fn run_variance_points(cfg: &RunConfig, psa: &PsaStage) -> Result<VarianceStage> {
    if let Some(path) = &cfg.variance_points {
        let points = io::read_variance_points(path, psa.inb.dim())?;
        return Ok(VarianceStage {
            design: None,
            points,
            posterior_updates: 0,
            model_evaluations: 0,
        });
    }
    let design = build_quantile_design(
        &psa.focal_draws(),
        cfg.q,
        cfg.n_min,
        cfg.n_max,
        derive_seed(cfg.seed, "design", 0),
    )?;
    let est = estimate_posterior_variances(
        &design,
        &psa.spec,
        &psa.study,
        cfg.posterior_draws,
        derive_seed(cfg.seed, "variance", 0),
    )?;
    let points = est
        .points
        .into_iter()
        .map(|mut p| {
            p.sigma.iter_mut().for_each(|v| *v = io::quantize(*v));
            p
        })
        .collect();
    Ok(VarianceStage {
        design: Some(design),
        points,
        posterior_updates: est.posterior_updates,
        model_evaluations: est.model_evaluations,
    })
}

#[derive(Debug, Clone)]
pub enum CurveFit {
    Dual {
        observations: VarianceObservations,
        posterior: NlregPosterior,
    },
    Multi {
        surface: VarianceSurface,
    },
}

impl CurveFit {
    /// The regression behind the first covariance element.
    pub fn leading(&self) -> Option<&NlregPosterior> {
        match self {
            CurveFit::Dual { posterior, .. } => Some(posterior),
            CurveFit::Multi { surface } => surface.element(0, 0),
        }
    }

    pub fn warnings(&self) -> Vec<String> {
        match self {
            CurveFit::Dual { posterior, .. } => posterior.warnings.clone(),
            CurveFit::Multi { surface } => surface
                .elements
                .iter()
                .filter_map(|((i, j), p)| p.as_ref().map(|p| (i, j, p)))
                .flat_map(|(i, j, p)| {
                    p.warnings
                        .iter()
                        .map(move |w| format!("element ({},{}): {w}", i + 1, j + 1))
                })
                .collect(),
        }
    }
}

pub fn fit_curve(
    cfg: &RunConfig,
    psa: &PsaStage,
    cond: &ConditionalInb,
    variance: &VarianceStage,
) -> Result<(CurveFit, EvsiCurve)> {
    let seed = derive_seed(cfg.seed, "nlreg", 0);
    let grid = cfg.grid();
    if psa.inb.dim() == 1 {
        let observations = VarianceObservations::from_points(
            &variance.points,
            psa.moments.variance(),
            cond.variance(),
            (0, 0),
        )?;
        let posterior = fit_variance_curve(&observations, &cfg.prior, &cfg.mcmc, seed)?;
        let curve = evsi_curve(&posterior, cond, &grid, &cfg.levels)?;
        Ok((
            CurveFit::Dual {
                observations,
                posterior,
            },
            curve,
        ))
    } else {
        let surface = fit_variance_surface_multi(
            &variance.points,
            &psa.moments,
            &cond.covariance,
            &cfg.prior,
            &cfg.mcmc,
            seed,
        )?;
        let curve = evsi_curve_multi(&surface, cond, &grid, &cfg.levels)?;
        Ok((CurveFit::Multi { surface }, curve))
    }
}

/// Model evaluations spent by a run and the oracle it replaces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    pub psa_evaluations: usize,
    pub posterior_updates: usize,
    pub posterior_evaluations: usize,
    /// Nested Monte Carlo cost of the configured oracle grid.
    pub oracle_evaluations: usize,
}

impl Budget {
    pub fn total(&self) -> usize {
        self.psa_evaluations + self.posterior_evaluations
    }

    pub fn reduction(&self) -> f64 {
        self.oracle_evaluations as f64 / self.total() as f64
    }
}

pub fn oracle_budget(cfg: &RunConfig) -> usize {
    cfg.oracle_n.len() * cfg.oracle_outer * (cfg.oracle_inner + 1)
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub config: RunConfig,
    pub psa: PsaStage,
    pub cond: ConditionalInb,
    pub evppi: f64,
    pub variance: VarianceStage,
    pub fit: CurveFit,
    pub curve: EvsiCurve,
    pub budget: Budget,
}

pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineResult> {
    let psa = run_psa(cfg)?;
    let cond = run_conditional(cfg, &psa)?;
    let variance = run_variance_points(cfg, &psa)?;
    let (fit, curve) = fit_curve(cfg, &psa, &cond, &variance)?;
    let budget = Budget {
        psa_evaluations: psa.inb.len(),
        posterior_updates: variance.posterior_updates,
        posterior_evaluations: variance.model_evaluations,
        oracle_evaluations: oracle_budget(cfg),
    };
    Ok(PipelineResult {
        config: cfg.clone(),
        evppi: evppi(&cond),
        psa,
        cond,
        variance,
        fit,
        curve,
        budget,
    })
}

fn arm_label(arm: usize) -> String {
    format!("arm{}", arm + 1)
}

pub fn write_psa_summary(dir: &Path, psa: &PsaStage) -> Result<usize> {
    let nb = &psa.net_benefit.values;
    let rows = (0..psa.spec.arm_count).map(|a| {
        let col: Vec<f64> = nb.column(a).iter().copied().collect();
        let (mean_inb, var_inb) = match psa.inb.arms.iter().position(|&x| x == a) {
            Some(c) => (psa.moments.mean[c], psa.moments.covariance[(c, c)]),
            None => (0.0, 0.0),
        };
        vec![
            (a + 1).to_string(),
            u8::from(a == psa.spec.reference_arm).to_string(),
            fmt_num(crate::stats::mean(&col)),
            fmt_num(crate::stats::std_dev(&col)),
            fmt_num(mean_inb),
            fmt_num(var_inb),
        ]
    });
    io::write_table(
        &dir.join("psa_summary.csv"),
        &[
            "arm",
            "reference",
            "mean_nb",
            "sd_nb",
            "mean_inb",
            "var_inb",
        ],
        rows,
    )
}

pub fn write_fitted(dir: &Path, psa: &PsaStage, cond: &ConditionalInb) -> Result<usize> {
    let labels: Vec<String> = psa.inb.arms.iter().map(|&a| arm_label(a)).collect();
    io::write_fitted_values(&dir.join("fitted_values.csv"), &cond.fitted, &labels)
}

fn write_posterior(path: &Path, post: &NlregPosterior) -> Result<usize> {
    let rows = (0..post.chains).flat_map(|c| {
        post.chain_h(c)
            .iter()
            .zip(post.chain_sigma_eps(c))
            .enumerate()
            .map(move |(i, (h, s))| {
                vec![
                    (c + 1).to_string(),
                    (i + 1).to_string(),
                    fmt_num(*h),
                    fmt_num(*s),
                ]
            })
    });
    io::write_table(path, &["chain", "iter", "h", "sigma_eps"], rows)
}

pub fn write_curve(path: &Path, curve: &EvsiCurve) -> Result<usize> {
    let rows = curve.grid.iter().enumerate().flat_map(|(i, &n)| {
        curve.levels.iter().enumerate().map(move |(l, &level)| {
            vec![
                fmt_num(n),
                fmt_num(level),
                fmt_num(curve.sigma_x[l][i]),
                fmt_num(curve.evsi[l][i]),
            ]
        })
    });
    io::write_table(path, &["n", "level", "sigma_x", "evsi"], rows)
}

/// Writes every pipeline table plus `manifest.txt`; returns the file names.
pub fn write_pipeline_outputs(dir: &Path, result: &PipelineResult) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    write_psa_summary(dir, &result.psa)?;
    files.push("psa_summary.csv".to_string());
    io::write_variance_points(&dir.join("variance_points.csv"), &result.variance.points)?;
    files.push("variance_points.csv".into());
    match &result.fit {
        CurveFit::Dual {
            observations,
            posterior,
        } => {
            write_posterior(&dir.join("posterior_draws.csv"), posterior)?;
            files.push("posterior_draws.csv".into());
            write_residuals(&dir.join("residuals.csv"), posterior, observations)?;
            files.push("residuals.csv".into());
        }
        CurveFit::Multi { surface } => {
            for ((i, j), post) in &surface.elements {
                let Some(post) = post else { continue };
                let (name, res) = if (*i, *j) == (0, 0) {
                    (
                        "posterior_draws.csv".to_string(),
                        "residuals.csv".to_string(),
                    )
                } else {
                    (
                        format!("posterior_draws_{}_{}.csv", i + 1, j + 1),
                        format!("residuals_{}_{}.csv", i + 1, j + 1),
                    )
                };
                write_posterior(&dir.join(&name), post)?;
                let obs = VarianceObservations::from_points(
                    &result.variance.points,
                    result.psa.moments.covariance[(*i, *j)],
                    surface.sigma_phi[(*i, *j)],
                    (*i, *j),
                )?;
                write_residuals(&dir.join(&res), post, &obs)?;
                files.push(name);
                files.push(res);
            }
        }
    }
    write_curve(&dir.join("curve.csv"), &result.curve)?;
    files.push("curve.csv".into());
    files.push("manifest.txt".into());
    fs::write(dir.join("manifest.txt"), pipeline_manifest(result, &files))?;
    Ok(files)
}

fn write_residuals(
    path: &Path,
    post: &NlregPosterior,
    obs: &VarianceObservations,
) -> Result<usize> {
    let rows = residual_diagnostics(post, obs)?.into_iter().map(|r| {
        vec![
            fmt_num(r.n),
            fmt_num(r.y),
            fmt_num(r.fitted),
            fmt_num(r.residual),
            fmt_num(r.standardized),
        ]
    });
    io::write_table(
        path,
        &["n", "y", "fitted", "residual", "standardized"],
        rows,
    )
}

/// `key = value` lines; contains no timings so reruns are identical.
#[derive(Default)]
pub struct Manifest(String);

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        let mut m = Manifest::default();
        m.kv("tool", format!("evsi {}", env!("CARGO_PKG_VERSION")));
        m.kv("command", command);
        m.kv("name", &cfg.name);
        m.kv("model", &cfg.model);
        m.kv("exercise", cfg.exercise);
        m.kv("seed", cfg.seed);
        m.kv("psa_draws", cfg.psa_draws);
        m
    }

    pub fn kv(&mut self, key: &str, value: impl std::fmt::Display) {
        let _ = writeln!(self.0, "{key} = {value}");
    }

    pub fn num(&mut self, key: &str, value: f64) {
        self.kv(key, fmt_num(value));
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

fn join_nums(values: &[f64]) -> String {
    values
        .iter()
        .map(|&v| fmt_num(v))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn pipeline_manifest(result: &PipelineResult, files: &[String]) -> String {
    let cfg = &result.config;
    let mut m = Manifest::new("evsi-curve", cfg);
    m.kv("arms", result.psa.spec.arm_count);
    m.kv("reference_arm", result.psa.spec.reference_arm + 1);
    m.kv(
        "focal_parameters",
        result
            .psa
            .study
            .focal_parameters
            .iter()
            .map(|&f| result.psa.spec.parameter_names[f].clone())
            .collect::<Vec<_>>()
            .join(","),
    );
    m.kv("q", result.variance.points.len());
    m.kv("n_min", cfg.n_min);
    m.kv("n_max", cfg.n_max);
    m.kv("posterior_draws", cfg.posterior_draws);
    m.kv(
        "variance_points_source",
        match &cfg.variance_points {
            Some(p) => format!("file {}", p.display()),
            None => "simulated".into(),
        },
    );
    match &result.cond.source {
        FitSource::External => m.kv("fitted_values_source", "file"),
        FitSource::Smoother {
            basis_columns,
            fit_rows,
            lambda,
            edf,
            ..
        } => {
            m.kv("fitted_values_source", "smoother");
            m.kv("smoother_basis_columns", basis_columns);
            m.kv("smoother_fit_rows", fit_rows);
            m.kv("smoother_lambda", join_nums(lambda));
            m.kv("smoother_edf", join_nums(edf));
        }
    }
    if let Some(d) = &result.variance.design {
        m.num("design_max_abs_correlation", d.max_correlation());
    }
    m.kv("inb_mean", join_nums(result.psa.moments.mean.as_slice()));
    m.kv(
        "inb_variance",
        join_nums(&diag(&result.psa.moments.covariance)),
    );
    m.kv(
        "conditional_inb_variance",
        join_nums(&diag(&result.cond.covariance)),
    );
    m.num("evppi", result.evppi);
    m.kv("mcmc_chains", cfg.mcmc.chains);
    m.kv("mcmc_burn_in", cfg.mcmc.burn_in);
    m.kv("mcmc_draws", cfg.mcmc.draws);
    m.num(
        "h_prior_variance_multiplier",
        cfg.prior.h_variance_multiplier,
    );
    m.num("sigma_prior_df", cfg.prior.sigma_df);
    if let Some(p) = result.fit.leading() {
        m.num("h_median", p.median_h());
        m.num("sigma_eps_median", p.median_sigma_eps());
        m.num("rhat_h", p.rhat_h);
        m.num("rhat_sigma_eps", p.rhat_sigma);
        m.kv("acceptance", join_nums(&p.acceptance));
    }
    if let CurveFit::Multi { surface } = &result.fit {
        m.kv("element_regressions", surface.regressions());
    }
    m.kv("levels", join_nums(&cfg.levels));
    m.kv("band_note", BAND_NOTE);
    let b = &result.budget;
    m.kv("budget_psa_evaluations", b.psa_evaluations);
    m.kv("budget_posterior_updates", b.posterior_updates);
    m.kv("budget_posterior_evaluations", b.posterior_evaluations);
    m.kv("budget_total_evaluations", b.total());
    m.kv("oracle_reference_points", cfg.oracle_n.len());
    m.kv("oracle_reference_evaluations", b.oracle_evaluations);
    m.num("evaluation_reduction", b.reduction());
    for w in result.fit.warnings() {
        m.kv("warning", w);
    }
    m.kv("files", files.join(","));
    m.into_string()
}

fn diag(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, i)]).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRow {
    pub n: usize,
    pub estimate: OracleEstimate,
    /// Exact value for the toy model.
    pub closed_form: Option<f64>,
}

pub fn run_oracle(cfg: &RunConfig, ns: &[usize]) -> Result<Vec<OracleRow>> {
    cfg.validate()?;
    if ns.is_empty() {
        return Err(Error::invalid("the oracle needs at least one sample size"));
    }
    let (spec, study) = resolve_model(cfg)?;
    ns.iter()
        .map(|&n| {
            let estimate = nested_mc_evsi(
                &spec,
                &study.with_sample_size(n),
                cfg.oracle_outer,
                cfg.oracle_inner,
                derive_seed(cfg.seed, "oracle", n as u64),
            )?;
            let closed_form = match spec.net_benefit {
                NetBenefitFn::NormalToy => Some(closed_form_toy_evsi(
                    cfg.toy.mu0,
                    cfg.toy.sigma0,
                    cfg.toy.sigma_d,
                    n as f64,
                )?),
                _ => None,
            };
            Ok(OracleRow {
                n,
                estimate,
                closed_form,
            })
        })
        .collect()
}

pub fn write_oracle(dir: &Path, cfg: &RunConfig, rows: &[OracleRow]) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let toy = rows.iter().any(|r| r.closed_form.is_some());
    let mut header = vec!["n", "evsi", "se", "outer", "inner", "model_evaluations"];
    if toy {
        header.push("closed_form");
    }
    let table = rows.iter().map(|r| {
        let e = &r.estimate;
        let mut row = vec![
            r.n.to_string(),
            fmt_num(e.evsi),
            fmt_num(e.se),
            e.outer.to_string(),
            e.inner.to_string(),
            e.model_evaluations.to_string(),
        ];
        if let Some(c) = r.closed_form {
            row.push(fmt_num(c));
        }
        row
    });
    io::write_table(&dir.join("oracle.csv"), &header, table)?;
    let mut m = Manifest::new("oracle", cfg);
    m.kv("oracle_outer", cfg.oracle_outer);
    m.kv("oracle_inner", cfg.oracle_inner);
    m.kv(
        "oracle_n",
        rows.iter()
            .map(|r| r.n.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    m.kv(
        "budget_total_evaluations",
        rows.iter()
            .map(|r| r.estimate.model_evaluations)
            .sum::<usize>(),
    );
    m.kv("files", "oracle.csv,manifest.txt");
    fs::write(dir.join("manifest.txt"), m.into_string())?;
    Ok(vec!["oracle.csv".into(), "manifest.txt".into()])
}

pub fn write_comparison(dir: &Path, comparison: &DesignComparison) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let rows = comparison.designs.iter().flat_map(|d| {
        (0..d.grid.len()).map(move |i| {
            vec![
                d.name.clone(),
                fmt_num(d.grid[i]),
                fmt_num(d.evsi[i]),
                fmt_num(d.cost[i]),
                fmt_num(d.net_value[i]),
            ]
        })
    });
    io::write_table(
        &dir.join("comparison.csv"),
        &["design", "n", "evsi", "cost", "net_value"],
        rows,
    )?;
    let summary = comparison.designs.iter().map(|d| {
        vec![
            d.name.clone(),
            fmt_num(d.optimal_n),
            fmt_num(d.optimal_net_value),
            u8::from(d.never_worthwhile).to_string(),
        ]
    });
    io::write_table(
        &dir.join("comparison_summary.csv"),
        &[
            "design",
            "optimal_n",
            "optimal_net_value",
            "never_worthwhile",
        ],
        summary,
    )?;
    Ok(vec![
        "comparison.csv".into(),
        "comparison_summary.csv".into(),
    ])
}

#[cfg(test)]
mod tests;
