use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rbf_pum::adaptivity::{SolveSettings, StoppingRule};
use rbf_pum::harness::{convergence_study, run, RunConfig, CONVERGENCE_HEADER};
use rbf_pum::kernels::KernelModel;
use rbf_pum::problems::ProblemName;
use rbf_pum::{Error, Execution};

#[derive(Parser)]
#[command(name = "rbfpum", version, about = "RBF partition-of-unity Poisson solver with adaptive refinement")]
struct Cli {
    /// Run every parallel stage on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Adaptive solve; writes report.json, history.csv and point/solution CSVs.
    Solve(SolveArgs),
    /// Fixed-grid solves on a sequence of grid sizes.
    Convergence(ConvergenceArgs),
}

#[derive(Args)]
struct SolveArgs {
    /// key = value file; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<String>,
    /// Initial interior points: grid or halton.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    n_side: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    tau_min: Option<String>,
    #[arg(long)]
    tau_max: Option<String>,
    /// interp or coarse-fine.
    #[arg(long)]
    indicator: Option<String>,
    /// Fixed patch grid (default: round(√N / patch-divisor), at least 2).
    #[arg(long)]
    patches_per_axis: Option<String>,
    #[arg(long)]
    patch_divisor: Option<String>,
    #[arg(long)]
    overlap: Option<String>,
    /// Test points per interior point.
    #[arg(long)]
    test_multiplier: Option<String>,
    /// Added points keep this fraction of 1/√N_i from other points and the boundary.
    #[arg(long)]
    spacing_fraction: Option<String>,
    /// Ignore test points covered by only one patch.
    #[arg(long)]
    skip_single_cover: bool,
    #[arg(long)]
    max_iterations: Option<String>,
    #[arg(long)]
    max_points: Option<String>,
    /// Stop as soon as no point is removed.
    #[arg(long)]
    paper_stopping: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConvergenceArgs {
    #[arg(long, default_value = "u1")]
    problem: String,
    /// Comma-separated grid sides.
    #[arg(long, value_delimiter = ',', default_value = "9,17,33")]
    sides: Vec<usize>,
    #[arg(long, default_value_t = 3.0)]
    epsilon: f64,
    #[arg(long)]
    patches_per_axis: Option<usize>,
    #[arg(long)]
    patch_divisor: Option<f64>,
    #[arg(long)]
    overlap: Option<f64>,
    /// Also write the table to DIR/convergence.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn solve_config(args: &SolveArgs) -> Result<RunConfig, Error> {
    let mut config = RunConfig::default();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        config.apply_text(&text)?;
    }
    let overrides = [
        ("problem", &args.problem),
        ("mode", &args.mode),
        ("n_side", &args.n_side),
        ("epsilon", &args.epsilon),
        ("tau_min", &args.tau_min),
        ("tau_max", &args.tau_max),
        ("indicator", &args.indicator),
        ("patches_per_axis", &args.patches_per_axis),
        ("patch_divisor", &args.patch_divisor),
        ("overlap", &args.overlap),
        ("test_multiplier", &args.test_multiplier),
        ("spacing_fraction", &args.spacing_fraction),
        ("max_iterations", &args.max_iterations),
        ("max_points", &args.max_points),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            config.set(key, v)?;
        }
    }
    if args.skip_single_cover {
        config.skip_single_cover = true;
    }
    if args.paper_stopping {
        config.stopping = StoppingRule::Paper;
    }
    if let Some(out) = &args.out {
        config.out = Some(out.clone());
    }
    config.validate()?;
    Ok(config)
}

fn cmd_solve(args: &SolveArgs, exec: Execution) -> u8 {
    let config = match solve_config(args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: [config] {e}");
            return 1;
        }
    };
    match run(&config, exec) {
        Ok(out) => {
            let r = &out.report;
            println!("problem     {}", r.problem);
            println!("N_tot       {}", r.n_tot);
            println!("MAE         {:.3e}", r.mae);
            println!("RMSE        {:.3e}", r.rmse);
            println!("CN          {:.3e}", r.cn);
            println!("iterations  {} ({})", r.iterations, r.stop_reason);
            println!("seconds     {:.2}", r.timings.total_seconds);
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code() as u8
        }
    }
}

fn cmd_convergence(args: &ConvergenceArgs, exec: Execution) -> u8 {
    let setup = || -> Result<(ProblemName, SolveSettings), Error> {
        if args.sides.is_empty() {
            return Err(Error::Config("no grid sides given".into()));
        }
        let defaults = SolveSettings::default();
        let overlap = args.overlap.unwrap_or(defaults.overlap);
        let patch_divisor = args.patch_divisor.unwrap_or(defaults.patch_divisor);
        if !(overlap >= 1.0) || !(patch_divisor > 0.0) || args.patches_per_axis == Some(0) {
            return Err(Error::Config("need overlap >= 1 and positive patch counts".into()));
        }
        let kernel = KernelModel::matern6(args.epsilon).map_err(|e| Error::Config(e.to_string()))?;
        let settings = SolveSettings { kernel, overlap, patches_per_axis: args.patches_per_axis, patch_divisor, exec };
        Ok((args.problem.parse()?, settings))
    };
    let (problem, settings) = match setup() {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: [config] {e}");
            return 1;
        }
    };
    let rows = match convergence_study(problem, &args.sides, &settings) {
        Ok(rows) => rows,
        Err(e) => {
            eprintln!("error: [solve] {e}");
            return if e.is_numerical() { 2 } else { 1 };
        }
    };
    let mut table = format!("{CONVERGENCE_HEADER}\n");
    for r in &rows {
        table.push_str(&format!("{r}\n"));
    }
    print!("{table}");
    if let Some(dir) = &args.out {
        let written = fs::create_dir_all(dir).and_then(|_| fs::File::create(dir.join("convergence.csv"))?.write_all(table.as_bytes()));
        if let Err(e) = written {
            eprintln!("error: [output] {e}");
            return 1;
        }
    }
    0
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let exec = if cli.sequential { Execution::Sequential } else { Execution::default() };
    let code = match &cli.command {
        Command::Solve(args) => cmd_solve(args, exec),
        Command::Convergence(args) => cmd_convergence(args, exec),
    };
    ExitCode::from(code)
}
