use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evsi::pipeline::{self, DesignInput, Manifest, RunConfig};
use evsi::Error;

/// Expected value of sample information across trial sample sizes.
#[derive(Parser)]
#[command(name = "evsi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the PSA and summarise net benefit.
    Psa(Common),
    /// Fit the conditional INB and report the EVPPI.
    Evppi(Common),
    /// Full pipeline: EVSI curves with credible bands.
    EvsiCurve(Common),
    /// Nested Monte Carlo EVSI at the configured sample sizes.
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Comma-separated sample sizes, overriding `oracle_n`.
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<usize>>,
    },
    /// Net value of several designs; pass one --config per design.
    Compare(Common),
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    config: Vec<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    exercise: Option<u32>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long = "n-min")]
    n_min: Option<usize>,
    #[arg(long = "n-max")]
    n_max: Option<usize>,
}

impl Common {
    fn load(&self, path: Option<&Path>) -> evsi::Result<RunConfig> {
        let mut cfg = match path {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if let Some(v) = &self.model {
            cfg.model = v.clone();
        }
        if let Some(v) = self.exercise {
            cfg.exercise = v;
        }
        if let Some(v) = self.q {
            cfg.q = v;
        }
        if let Some(v) = self.n_min {
            cfg.n_min = v;
        }
        if let Some(v) = self.n_max {
            cfg.n_max = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn single(&self) -> evsi::Result<RunConfig> {
        if self.config.len() > 1 {
            return Err(Error::InvalidArgument(
                "only `compare` accepts more than one --config".into(),
            ));
        }
        self.load(self.config.first().map(PathBuf::as_path))
    }
}

fn report(files: &[String], dir: &Path) {
    for f in files {
        println!("{}", dir.join(f).display());
    }
}

fn run(cli: Cli) -> evsi::Result<()> {
    match cli.command {
        Command::Psa(common) => {
            let cfg = common.single()?;
            let psa = pipeline::run_psa(&cfg)?;
            std::fs::create_dir_all(&cfg.out)?;
            pipeline::write_psa_summary(&cfg.out, &psa)?;
            let mut m = Manifest::new("psa", &cfg);
            m.kv("budget_total_evaluations", psa.inb.len());
            m.kv("files", "psa_summary.csv,manifest.txt");
            std::fs::write(cfg.out.join("manifest.txt"), m.into_string())?;
            report(&["psa_summary.csv".into(), "manifest.txt".into()], &cfg.out);
        }
        Command::Evppi(common) => {
            let cfg = common.single()?;
            let psa = pipeline::run_psa(&cfg)?;
            let cond = pipeline::run_conditional(&cfg, &psa)?;
            let value = evsi::conditional::evppi(&cond);
            std::fs::create_dir_all(&cfg.out)?;
            pipeline::write_psa_summary(&cfg.out, &psa)?;
            pipeline::write_fitted(&cfg.out, &psa, &cond)?;
            let mut m = Manifest::new("evppi", &cfg);
            m.num("evppi", value);
            m.kv("budget_total_evaluations", psa.inb.len());
            m.kv("files", "psa_summary.csv,fitted_values.csv,manifest.txt");
            std::fs::write(cfg.out.join("manifest.txt"), m.into_string())?;
            println!("evppi = {}", evsi::io::fmt_num(value));
            report(
                &[
                    "psa_summary.csv".into(),
                    "fitted_values.csv".into(),
                    "manifest.txt".into(),
                ],
                &cfg.out,
            );
        }
        Command::EvsiCurve(common) => {
            let cfg = common.single()?;
            let result = pipeline::run_pipeline(&cfg)?;
            let files = pipeline::write_pipeline_outputs(&cfg.out, &result)?;
            for w in result.fit.warnings() {
                eprintln!("warning: {w}");
            }
            report(&files, &cfg.out);
        }
        Command::Oracle { common, n } => {
            let cfg = common.single()?;
            let ns = n.unwrap_or_else(|| cfg.oracle_n.clone());
            let rows = pipeline::run_oracle(&cfg, &ns)?;
            let files = pipeline::write_oracle(&cfg.out, &cfg, &rows)?;
            report(&files, &cfg.out);
        }
        Command::Compare(common) => {
            if common.config.is_empty() {
                return Err(Error::InvalidArgument(
                    "compare needs at least one --config".into(),
                ));
            }
            let root = common
                .out
                .clone()
                .unwrap_or_else(|| RunConfig::default().out);
            let mut inputs = Vec::new();
            for path in &common.config {
                let mut cfg = common.load(Some(path))?;
                cfg.out = root.join(&cfg.name);
                let result = pipeline::run_pipeline(&cfg)?;
                pipeline::write_pipeline_outputs(&cfg.out, &result)?;
                inputs.push(DesignInput {
                    name: cfg.name.clone(),
                    curve: result.curve,
                    cost: cfg.cost,
                    population: cfg.population,
                });
            }
            let comparison = pipeline::compare_designs(&inputs)?;
            let files = pipeline::write_comparison(&root, &comparison)?;
            for d in &comparison.designs {
                println!(
                    "{}: optimal n = {}, net value = {}{}",
                    d.name,
                    evsi::io::fmt_num(d.optimal_n),
                    evsi::io::fmt_num(d.optimal_net_value),
                    if d.never_worthwhile {
                        " (never worthwhile)"
                    } else {
                        ""
                    }
                );
            }
            report(&files, &root);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = if e.is_config_error() {
                2
            } else if e.is_numerical() {
                3
            } else {
                1
            };
            ExitCode::from(code)
        }
    }
}
