//! `sdrkit` command-line tool: runs pipeline stages from one TOML config.
//!
//! Exit codes: 0 ok, 2 config error, 3 stage failure, 4 diagnostics gate failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sdrkit::inventory::{read_response_sets, Format};
use sdrkit::irt::{FitBackend, ModelData};
use sdrkit::pipeline::{Pipeline, PipelineConfig, PipelineError, ProviderSettings, Stage};

#[derive(Parser)]
#[command(name = "sdrkit", version, about = "Desirability-matched inventories, IRT scoring and SDR metrics")]
struct Cli {
    /// Pipeline configuration file.
    #[arg(short, long, global = true, default_value = "sdrkit.toml")]
    config: PathBuf,
    /// Override a config value, e.g. `--set personas.count=20` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Re-run stages whose outputs already exist.
    #[arg(long, global = true)]
    force: bool,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderKind {
    Sim,
    Http,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Map,
    Hmc,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Likert,
    Gfc,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Likert => Format::Likert,
            FormatArg::Gfc => Format::Gfc,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the desirability rating plan (and collect ratings if configured).
    RatePlan,
    /// Aggregate raw ratings into item desirability and agreement statistics.
    Aggregate,
    /// Assemble the desirability-matched forced-choice inventory.
    Assemble,
    /// Sample the persona set.
    Personas,
    /// Administer the questionnaire to every configured respondent.
    Administer {
        /// Only respondents using this provider.
        #[arg(long)]
        provider: Option<ProviderKind>,
    },
    /// Fit the IRT models.
    Fit {
        #[arg(long)]
        backend: Option<BackendArg>,
        /// Restrict to one format (required with --responses).
        #[arg(long)]
        format: Option<FormatArg>,
        /// Fit a single response file instead of the configured runs.
        #[arg(long, requires_all = ["format", "out"])]
        responses: Option<PathBuf>,
        /// Output artifact for --responses.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute report tables and plots from the fits.
    Report,
    /// Run every stage in order.
    Pipeline,
    /// Check that every reported number traces to an indexed fit.
    Lint,
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut overrides = cli.overrides.clone();
    if let Command::Fit { backend: Some(b), .. } = &cli.command {
        overrides.push(format!("fit.backend=\"{}\"", match b {
            BackendArg::Map => "map",
            BackendArg::Hmc => "hmc",
        }));
    }
    if let Command::Fit { format: Some(f), responses: None, .. } = &cli.command {
        overrides.push(format!("design.formats=[\"{}\"]", Format::from(*f).as_str()));
    }
    let mut cfg = PipelineConfig::load(&cli.config, &overrides)?;
    if let Command::Administer { provider: Some(kind) } = &cli.command {
        cfg.config.respondents.retain(|r| {
            matches!((kind, &r.provider), (ProviderKind::Sim, ProviderSettings::Sim(_)) | (ProviderKind::Http, ProviderSettings::Http(_)))
        });
        if cfg.config.respondents.is_empty() {
            return Err(PipelineError::Config("no respondent uses the requested provider".into()));
        }
    }
    let pipeline = Pipeline::new(cfg, cli.force);
    match cli.command {
        Command::RatePlan => pipeline.run_stage(Stage::Rate).map(drop),
        Command::Aggregate => pipeline.run_stage(Stage::Aggregate).map(drop),
        Command::Assemble => pipeline.run_stage(Stage::Assemble).map(drop),
        Command::Personas => pipeline.run_stage(Stage::Personas).map(drop),
        Command::Administer { .. } => pipeline.run_stage(Stage::Administer).map(drop),
        Command::Fit { responses: Some(path), format, out, .. } => {
            fit_file(&pipeline, &path, format.expect("clap requires format").into(), &out.expect("clap requires out"))
        }
        Command::Fit { .. } => pipeline.run_stage(Stage::Fit).map(drop),
        Command::Report => pipeline.run_stage(Stage::Report).map(drop),
        Command::Pipeline => pipeline.run().map(drop),
        Command::Lint => {
            let issues = pipeline.lint()?;
            if issues.is_empty() {
                println!("lint: ok");
                Ok(())
            } else {
                for i in &issues {
                    println!("lint: {i}");
                }
                Err(PipelineError::Stage { stage: "lint", message: format!("{} problem(s)", issues.len()) })
            }
        }
    }
}

/// Fits one response file with the configured inventory and pool.
fn fit_file(p: &Pipeline, path: &PathBuf, format: Format, out: &PathBuf) -> Result<(), PipelineError> {
    let stage = |e: &dyn std::fmt::Display| PipelineError::Stage { stage: "fit", message: e.to_string() };
    let pool = p.rated_pool("fit")?;
    let inventory = p.inventory("fit", &pool)?;
    let file = std::fs::File::open(path).map_err(|e| stage(&format!("{}: {e}", path.display())))?;
    let sets: Vec<_> = read_response_sets(file).map_err(|e| stage(&e))?.into_iter().filter(|s| s.format == format).collect();
    let data = ModelData::from_response_sets(format, &sets, &inventory, &pool).map_err(|e| stage(&e))?;
    let artifact = p.fit_data(&data)?;
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir).map_err(|e| stage(&e))?;
    }
    artifact.write_json(out).map_err(|e| stage(&e))?;
    if p.cfg.config.fit.backend == FitBackend::Hmc && !artifact.diagnostics_passed() {
        return Err(PipelineError::Diagnostics(format!("{} failed the R̂/divergence gate", out.display())));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sdrkit: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
