use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mixfit_core::dataset::synthetic_logistic;
use mixfit_core::driver::{
    emit_outputs, load_config_data, read_trajectory, verify_trajectory, Checkpoint, OutputPaths,
    Summary,
};
use mixfit_core::model::gradient_check;
use mixfit_core::{Error, LogisticParams, ModelSpec, RunConfig, Runner};

#[derive(Parser, Debug)]
#[command(name = "mixfit", version, about = "Expert-advice aggregation of noisy gradient dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the aggregation loop on a dataset.
    Run(Box<RunArgs>),
    /// Compare analytic and finite-difference gradients on random draws.
    ValidateGradient(GradientArgs),
    /// Recompute the mixture-loss bound from a trajectory CSV.
    CheckBound(BoundArgs),
    /// Write a synthetic logistic-growth dataset.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    /// `key = value` config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    x_cols: Option<String>,
    #[arg(long)]
    y_col: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Number of experts K.
    #[arg(long)]
    experts: Option<usize>,
    /// Subsample size m (default: dataset size).
    #[arg(long)]
    subsample_size: Option<usize>,
    /// `with` or `without`.
    #[arg(long)]
    replacement: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    /// `consensus` or `per-expert`.
    #[arg(long)]
    mode: Option<String>,
    /// Comma-separated starting parameters.
    #[arg(long)]
    theta0: Option<String>,
    /// File with K initial weights summing to one.
    #[arg(long)]
    omega0: Option<PathBuf>,
    #[arg(long)]
    trajectory: Option<PathBuf>,
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Add every expert's estimate to the trajectory.
    #[arg(long)]
    record_experts: bool,
    /// Fan expert updates out over threads.
    #[arg(long)]
    parallel: bool,
    /// Write a checkpoint here when the run stops early.
    #[arg(long, requires = "stop_after")]
    checkpoint: Option<PathBuf>,
    /// Stop after this many steps (use with --checkpoint).
    #[arg(long, requires = "checkpoint")]
    stop_after: Option<usize>,
    /// Continue from a checkpoint; its stored config is used.
    #[arg(long, conflicts_with = "config")]
    resume: Option<PathBuf>,
}

impl RunArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut put = |k, v: Option<String>| {
            if let Some(v) = v {
                out.push((k, v));
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        put("data", path(&self.data));
        put("x-cols", self.x_cols.clone());
        put("y-col", self.y_col.clone());
        put("model", self.model.clone());
        put("experts", self.experts.map(|v| v.to_string()));
        put("subsample-size", self.subsample_size.map(|v| v.to_string()));
        put("replacement", self.replacement.clone());
        put("seed", self.seed.map(|v| v.to_string()));
        put("horizon", self.horizon.map(|v| v.to_string()));
        put("steps", self.steps.map(|v| v.to_string()));
        put("delta", self.delta.map(|v| v.to_string()));
        put("epsilon", self.epsilon.map(|v| v.to_string()));
        put("gamma", self.gamma.map(|v| v.to_string()));
        put("beta", self.beta.map(|v| v.to_string()));
        put("tol", self.tol.map(|v| v.to_string()));
        put("mode", self.mode.clone());
        put("theta0", self.theta0.clone());
        put("omega0", path(&self.omega0));
        put("trajectory", path(&self.trajectory));
        put("summary", path(&self.summary));
        put("plot", path(&self.plot));
        put("record-experts", self.record_experts.then(|| "true".into()));
        put("parallel", self.parallel.then(|| "true".into()));
        out
    }

    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut config = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for (k, v) in self.overrides() {
            config.set(k, &v)?;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args, Debug)]
struct GradientArgs {
    #[arg(long, default_value = "logistic")]
    model: String,
    #[arg(long, default_value_t = 100)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Relative finite-difference step.
    #[arg(long, default_value_t = 1e-6)]
    step: f64,
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
}

#[derive(Args, Debug)]
struct BoundArgs {
    #[arg(long)]
    trajectory: PathBuf,
    /// Weight decay factor of the run.
    #[arg(long, required_unless_present = "summary")]
    beta: Option<f64>,
    /// Summary JSON of the run; supplies beta.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 2.1070)]
    n0: f64,
    #[arg(long, default_value_t = 219.0527)]
    ne: f64,
    #[arg(long, default_value_t = 0.7427)]
    r: f64,
    /// Observations at t = 0, 1, ..., days - 1.
    #[arg(long, default_value_t = 23)]
    days: u32,
    #[arg(long, default_value_t = 2.0)]
    noise_sd: f64,
    #[arg(long, default_value_t = 23)]
    seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::ValidateGradient(args) => cmd_validate_gradient(&args),
        Command::CheckBound(args) => cmd_check_bound(&args),
        Command::Synth(args) => cmd_synth(&args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn cmd_run(args: &RunArgs) -> Result<u8, Error> {
    let (config, checkpoint) = match &args.resume {
        Some(path) => {
            let c = Checkpoint::load(path)?;
            (c.config.clone(), Some(c))
        }
        None => (args.resolve()?, None),
    };
    let data = load_config_data(&config)?;
    let mut runner = match checkpoint {
        Some(c) => Runner::resume(c, &data)?,
        None => Runner::new(config.clone(), &data)?,
    };
    if let (Some(limit), Some(path)) = (args.stop_after, &args.checkpoint) {
        runner.run_until(limit)?;
        if !runner.is_finished() {
            runner.checkpoint().save(path)?;
            println!("stopped after {} steps; checkpoint written to {}", runner.steps_done(), path.display());
            return Ok(0);
        }
    }
    let model = runner.model().clone();
    let outcome = runner.run_to_end()?;
    emit_outputs(&outcome, &data, &model, &config, &OutputPaths::from_config(&config))?;

    let names = model.param_names();
    let theta: Vec<String> = names
        .iter()
        .zip(outcome.theta_star.iter())
        .map(|(n, v)| format!("{n} = {v}"))
        .collect();
    println!("theta* : {}", theta.join(", "));
    println!(
        "steps  : {}{}",
        outcome.steps_run,
        if outcome.converged { " (converged)" } else { "" }
    );
    println!("validation objective : {}", outcome.validation_objective);
    println!(
        "mixture loss L = {} <= bound {} (slack {})",
        outcome.bound.total_loss, outcome.bound.bound, outcome.bound.slack
    );
    Ok(0)
}

fn cmd_validate_gradient(args: &GradientArgs) -> Result<u8, Error> {
    let model = ModelSpec::by_name(&args.model)?;
    let worst = gradient_check(&model, args.draws, args.seed, args.step)?;
    let ok = worst < args.tolerance;
    println!(
        "{}: {} draws, worst relative error {worst:.3e} (tolerance {:e})",
        if ok { "ok" } else { "FAILED" },
        args.draws,
        args.tolerance
    );
    Ok(if ok { 0 } else { 4 })
}

fn beta_from_summary(path: &Path) -> Result<f64, Error> {
    let summary = Summary::load(path)?;
    Ok(RunConfig::parse_text(&summary.config)?.beta)
}

fn cmd_check_bound(args: &BoundArgs) -> Result<u8, Error> {
    let beta = match (args.beta, &args.summary) {
        (Some(b), _) => b,
        (None, Some(p)) => beta_from_summary(p)?,
        (None, None) => unreachable!("clap requires one of --beta / --summary"),
    };
    let table = read_trajectory(&args.trajectory)?;
    let audit = verify_trajectory(&table, beta)?;
    println!("rows                 : {}", audit.rows);
    println!("total mixture loss L : {}", audit.final_bound.total_loss);
    println!("bound                : {}", audit.final_bound.bound);
    println!("slack                : {}", audit.final_bound.slack);
    println!("step violations      : {}", audit.step_violations);
    println!("bound violations     : {}", audit.bound_violations);
    println!("max pi deviation     : {:e}", audit.max_pi_deviation);
    println!("max loss deviation   : {:e}", audit.max_loss_deviation);
    let ok = audit.passed();
    println!("{}", if ok { "bound satisfied" } else { "bound check FAILED" });
    Ok(if ok { 0 } else { 6 })
}

fn cmd_synth(args: &SynthArgs) -> Result<u8, Error> {
    let params = LogisticParams::new(args.n0, args.ne, args.r);
    let times: Vec<f64> = (0..args.days).map(f64::from).collect();
    let data = synthetic_logistic(&params, &times, args.noise_sd, args.seed)?;
    let mut text = String::from("t,N\n");
    for (x, y) in data.view().iter() {
        text.push_str(&format!("{},{}\n", x[0], y));
    }
    std::fs::write(&args.output, text).map_err(|source| Error::Io {
        path: args.output.clone(),
        source,
    })?;
    println!("wrote {} points to {}", data.len(), args.output.display());
    Ok(0)
}
