use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bae_core::estimators::{ErrorStats, Estimator};
use bae_core::inversion::LaplacePosterior;
use bae_core::spectral::{generalized_eig, spectrum_monitor, SpectrumEntry};
use bae_core::studies::io::{self, FieldExport, Manifest};
use bae_core::studies::{
    convergence_study, cost_ledger, gaussian_draws, posterior_study, required_order, Experiment, SpectrumRow,
    StudyConfig,
};
use bae_core::{Error, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "bae", version, about = "Approximation-error statistics and BAE-corrected inversion")]
struct Cli {
    /// Study configuration (JSON).
    #[arg(long, global = true, conflicts_with = "example")]
    config: Option<PathBuf>,
    /// Built-in configuration: example1 or example2.
    #[arg(long, global = true)]
    example: Option<String>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the mesh as JSON.
    Mesh,
    /// Draw prior samples (and optionally approximation errors).
    Sample {
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Also evaluate the approximation error at each draw.
        #[arg(long)]
        errors: bool,
    },
    /// Estimate the error statistics with one estimator.
    Estimate {
        #[arg(long)]
        estimator: Estimator,
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Estimator seed index.
        #[arg(long, default_value_t = 0)]
        replicate: u64,
    },
    /// Generalized eigenvalues of error covariances against the noise.
    Spectrum {
        /// Statistics files written by `estimate`.
        #[arg(long, required = true, num_args = 1..)]
        stats: Vec<PathBuf>,
    },
    /// Laplace posterior for one data realization.
    Invert {
        /// Error statistics; without it the error is ignored.
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        realization: u64,
        /// Posterior draws written with the field export.
        #[arg(long, default_value_t = 2)]
        draws: usize,
    },
    /// Convergence of the error statistics against a reference.
    StudyConvergence {
        /// Reference statistics; computed and written when absent.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Double loop over data realizations and estimator seeds.
    StudyPosterior {
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Extra plain Monte Carlo sample sizes on the first seed.
        #[arg(long, value_delimiter = ',')]
        extra_mc: Vec<usize>,
    },
    /// Per-sample solve counts for each estimator.
    Cost {
        #[arg(long, default_value_t = 20)]
        samples: usize,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Mesh => "mesh",
            Command::Sample { .. } => "sample",
            Command::Estimate { .. } => "estimate",
            Command::Spectrum { .. } => "spectrum",
            Command::Invert { .. } => "invert",
            Command::StudyConvergence { .. } => "study-convergence",
            Command::StudyPosterior { .. } => "study-posterior",
            Command::Cost { .. } => "cost",
        }
    }
}

fn git_revision() -> Option<String> {
    let out = std::process::Command::new("git").args(["rev-parse", "--short", "HEAD"]).output().ok()?;
    out.status.success().then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
}

fn load_config(cli: &Cli) -> Result<StudyConfig> {
    let mut c = match (&cli.config, &cli.example) {
        (Some(p), _) => StudyConfig::load(p)?,
        (None, Some(name)) => StudyConfig::preset(name)?,
        (None, None) => return Err(Error::Config("pass --config <file> or --example <name>".into())),
    };
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    Ok(c)
}

struct Output {
    dir: PathBuf,
    manifest: Manifest,
}

impl Output {
    fn path(&mut self, name: &str) -> PathBuf {
        self.manifest.files.push(name.into());
        self.dir.join(name)
    }

    fn finish(mut self) -> Result<()> {
        let path = self.dir.join("manifest.json");
        self.manifest.files.sort();
        io::write_json(&path, &self.manifest)?;
        for f in &self.manifest.files {
            println!("{}", self.dir.join(f).display());
        }
        Ok(())
    }
}

fn load_reference(exp: &Experiment, path: Option<&Path>, out: &mut Output) -> Result<ErrorStats> {
    match path {
        Some(p) => {
            if !p.exists() {
                return Err(Error::Config(format!("reference statistics {} not found", p.display())));
            }
            let r: ErrorStats = io::read_json(p)?;
            exp.set_reference(r.clone())?;
            Ok(r)
        }
        None => {
            let r = exp.reference()?.clone();
            io::write_json(&out.path("reference.json"), &r)?;
            Ok(r)
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let config = load_config(cli)?;
    std::fs::create_dir_all(&cli.out)?;
    let mut out = Output { dir: cli.out.clone(), manifest: Manifest::new(cli.command.name(), &config, git_revision()) };
    let exp = Experiment::build(config)?;
    match &cli.command {
        Command::Mesh => {
            std::fs::write(out.path("mesh.json"), exp.mesh.to_json()?)?;
        }
        Command::Sample { count, errors } => {
            let seed = exp.seed("samples", 0);
            let z = exp.prior.sample(seed, *count)?;
            let rows: Vec<Vec<f64>> = z.iter().map(|v| v.iter().copied().collect()).collect();
            io::write_json(&out.path("prior_samples.json"), &json!({"m_dim": exp.m_dim(), "samples": rows}))?;
            if *errors {
                let s = exp.draw(None, None, seed, *count, false)?;
                let eps: Vec<Vec<f64>> = s.iter().map(|s| s.eps.iter().copied().collect()).collect();
                io::write_json(&out.path("error_samples.json"), &json!({"samples": eps}))?;
            }
        }
        Command::Estimate { estimator, n, replicate } => {
            let taylor = if estimator.order().is_some() { Some(exp.taylor()?) } else { None };
            let seed = exp.seed("estimator", *replicate);
            let samples = if estimator.uses_samples() {
                exp.draw(taylor.as_ref(), required_order(&[*estimator]), seed, *n, true)?
            } else {
                Vec::new()
            };
            let stats = exp.estimate(taylor.as_ref(), *estimator, &samples, *n, seed)?;
            io::write_json(&out.path(&format!("stats_{}_{}.json", estimator.tag(), stats.n)), &stats)?;
        }
        Command::Spectrum { stats } => {
            let noise_variance = exp.noise_variance();
            let mut rows = Vec::new();
            let mut entries = Vec::new();
            for p in stats {
                let s: ErrorStats = io::read_json(p)?;
                let values: Vec<f64> = generalized_eig(&s.covariance, &exp.noise.covariance)?.values.iter().copied().collect();
                rows.extend(values.iter().enumerate().map(|(index, &eigenvalue)| SpectrumRow {
                    estimator: s.estimator.tag().into(),
                    n: s.n,
                    seed: 0,
                    index,
                    eigenvalue,
                    noise_variance,
                }));
                entries.push(SpectrumEntry { n: s.n, eigenvalues: values });
            }
            io::write_spectra(&out.path("spectra.csv"), &rows)?;
            if entries.len() >= 2 {
                let report = spectrum_monitor(entries, exp.config.spectrum_threshold, exp.config.monitor_tol)?;
                io::write_json(&out.path("spectrum_monitor.json"), &report)?;
            }
        }
        Command::Invert { stats, realization, draws } => {
            let stats: Option<ErrorStats> = stats.as_deref().map(io::read_json).transpose()?;
            let data = exp.data_realization(*realization)?;
            let post: LaplacePosterior = exp.posterior(&data.data, stats.as_ref())?;
            io::write_json(&out.path("posterior.json"), &post)?;
            let samples = gaussian_draws(&post.map, &post.covariance, exp.seed("posterior-draws", *realization), *draws)?
                .into_iter()
                .map(|v| v.iter().copied().collect())
                .collect();
            let truth = data.truth.rows(0, exp.m_dim()).into_owned();
            let space = exp.prior_m.block(0).space.ok_or_else(|| Error::InvalidArgument("prior has no space".into()))?;
            let field = FieldExport::new(&exp.mesh, space, &post, Some(&truth), samples);
            io::write_json(&out.path("field.json"), &field)?;
        }
        Command::StudyConvergence { reference } => {
            let r = load_reference(&exp, reference.as_deref(), &mut out)?;
            let report = convergence_study(&exp, &r)?;
            io::write_convergence(&out.path("convergence.csv"), &report.rows)?;
            io::write_convergence_summary(&out.path("convergence_summary.csv"), &report.summary)?;
            io::write_spectra(&out.path("spectra.csv"), &report.spectra)?;
            io::write_json(&out.path("spectrum_monitor.json"), &report.monitors)?;
        }
        Command::StudyPosterior { reference, extra_mc } => {
            let r = load_reference(&exp, reference.as_deref(), &mut out)?;
            let report = posterior_study(&exp, &r, extra_mc)?;
            io::write_posterior(&out.path("posterior.csv"), &report.rows)?;
            io::write_posterior_summary(&out.path("posterior_summary.csv"), &report.summary)?;
            io::write_json(
                &out.path("posterior_report.json"),
                &json!({"reference_n": report.reference_n, "failures": report.failures, "summary": report.summary}),
            )?;
        }
        Command::Cost { samples } => {
            let ledger = cost_ledger(&exp, *samples, exp.seed("cost", 0))?;
            io::write_cost(&out.path("cost.csv"), &ledger.rows)?;
            io::write_json(&out.path("cost.json"), &ledger)?;
        }
    }
    out.finish()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
