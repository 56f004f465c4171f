use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lcn_flow::harness::{
    self, emit_loss_figure, exit, parse_specs, run::batch_exit_code, run_batch, run_experiment, verify_dir,
    ExperimentConfig, HarnessError, Overrides, OUT_ENV,
};

#[derive(Parser)]
#[command(name = "lcnflow", version, about = "Gradient flow for linear convolutional networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one experiment and write its artifacts.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Re-check the artifacts of a run directory.
    Verify {
        dir: PathBuf,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Tabulate loss components over a residual grid.
    LossFigure {
        /// JSON array of loss specs, or a path to a file holding one.
        #[arg(long)]
        specs: String,
        #[arg(long, num_args = 2, value_names = ["MIN", "MAX"], allow_negative_numbers = true, default_values_t = [-4.0, 4.0])]
        range: Vec<f64>,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the same problem for several initialization seeds in parallel.
    Batch {
        config: PathBuf,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
}

/// Flags mirroring config fields; they win over the file.
#[derive(Args)]
struct OverrideArgs {
    /// Output directory (default: `output_dir`, else $LCN_FLOW_OUT/<config name>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Initialization seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Seed of a synthetic dataset.
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long)]
    abs_tol: Option<f64>,
    #[arg(long)]
    grad_tol: Option<f64>,
    #[arg(long)]
    max_t: Option<f64>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    sample_every: Option<u64>,
    #[arg(long)]
    min_step: Option<f64>,
}

impl OverrideArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            output_dir: self.out.clone(),
            init_seed: self.seed,
            data_seed: self.data_seed,
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            grad_tol: self.grad_tol,
            max_t: self.max_t,
            max_steps: self.max_steps,
            sample_every: self.sample_every,
            min_step: self.min_step,
        }
    }
}

fn load(path: &Path, overrides: &OverrideArgs) -> Result<(ExperimentConfig, PathBuf), HarnessError> {
    let mut config = ExperimentConfig::load(path)?;
    config.apply(&overrides.overrides());
    let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    let name = path.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
    let dir = config.resolve_output_dir(&root, &name);
    Ok((config, dir))
}

fn main_inner(cli: Cli) -> Result<i32, HarnessError> {
    match cli.command {
        Command::Run { config, overrides } => {
            let (config, dir) = load(&config, &overrides)?;
            let out = run_experiment(&config, &dir)?;
            let s = &out.summary;
            println!("{}: {}", dir.display(), s.status.as_str());
            if let (Some(t), Some(l), Some(g)) = (s.final_t, s.final_loss, s.final_grad_norm) {
                println!("  t = {t:.6e}  L = {l:.6e}  |grad L| = {g:.3e}");
            }
            if let Some(report) = &s.verification {
                print!("{}", report.render());
            }
            if let Some(msg) = &s.message {
                eprintln!("{msg}");
            }
            Ok(out.exit_code())
        }
        Command::Verify { dir, json } => {
            let report = verify_dir(&dir)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            } else {
                print!("{}", report.render());
            }
            Ok(report.exit_code())
        }
        Command::LossFigure { specs, range, step, out } => {
            let specs = parse_specs(&specs)?;
            match out {
                Some(path) => {
                    let file = std::fs::File::create(&path)
                        .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
                    emit_loss_figure(&specs, range[0], range[1], step, file)?;
                }
                None => emit_loss_figure(&specs, range[0], range[1], step, std::io::stdout().lock())?,
            }
            Ok(exit::CONVERGED)
        }
        Command::Batch { config, seeds, jobs, overrides } => {
            let (config, dir) = load(&config, &overrides)?;
            let rows = run_batch(&config, &dir, seeds, jobs)?;
            for r in &rows {
                println!("seed {:>4}  {:<22} exit {}", r.seed, r.status, r.exit_code);
            }
            println!("{}", dir.join(harness::BATCH_FILE).display());
            Ok(batch_exit_code(&rows))
        }
    }
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit::ERROR as u8)
        }
    }
}
