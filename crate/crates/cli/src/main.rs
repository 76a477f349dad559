use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fmo::{Mode, Scheme};
use fmo_cli::{generate, run, CliError, MeshConfig, Outputs, RunConfig, Source, Start};

#[derive(Parser)]
#[command(name = "fmo", version, about = "Free material optimization by dual averaging")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated cantilever instance.
    Generate {
        #[command(flatten)]
        mesh: MeshArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the solver on an instance file or a generated mesh.
    Solve(Box<SolveArgs>),
}

#[derive(Args)]
struct MeshArgs {
    #[arg(long, default_value_t = 8)]
    nx: usize,
    #[arg(long, default_value_t = 4)]
    ny: usize,
    /// Defaults to `nx`.
    #[arg(long)]
    lx: Option<f64>,
    /// Defaults to `ny`.
    #[arg(long)]
    ly: Option<f64>,
    #[arg(long, default_value_t = 1)]
    loads: usize,
    #[arg(long, default_value_t = 0.3)]
    rho_l: f64,
    #[arg(long, default_value_t = 1.0)]
    rho_u: f64,
    #[arg(long, default_value_t = 0.01)]
    r: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    mesh_eta: f64,
    #[arg(long, default_value_t = 1.0)]
    mesh_nu: f64,
}

impl MeshArgs {
    fn config(&self) -> MeshConfig {
        MeshConfig {
            nx: self.nx,
            ny: self.ny,
            lx: self.lx.unwrap_or(self.nx as f64),
            ly: self.ly.unwrap_or(self.ny as f64),
            loads: self.loads,
            rho_l: self.rho_l,
            rho_u: self.rho_u,
            r: self.r,
            gamma: self.gamma,
            eta: self.mesh_eta,
            nu: self.mesh_nu,
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    /// Instance file; a mesh is generated from the mesh options when absent.
    #[arg(long)]
    instance: Option<PathBuf>,
    #[command(flatten)]
    mesh: MeshArgs,
    #[arg(long, default_value = "plain")]
    mode: Mode,
    #[arg(long, default_value = "simple")]
    scheme: Scheme,
    #[arg(long, default_value_t = 1000)]
    iters: u64,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    sigma0: Option<f64>,
    /// Use the step parameters prescribed by the gap theorem unless overridden.
    #[arg(long)]
    theorem_params: bool,
    /// Steps per sigma autotune window; 0 disables.
    #[arg(long, default_value_t = 0)]
    autotune_window: usize,
    /// Overrides the instance value.
    #[arg(long)]
    eta: Option<f64>,
    /// Overrides the instance value.
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "upper")]
    start: StartArg,
    #[arg(long, default_value_t = 1)]
    stride: u64,
    /// Ordered reductions and zeroed timings.
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    parallel: bool,
    #[arg(long, default_value_t = fmo::penalty::DEFAULT_DENSE_THRESHOLD)]
    dense_threshold: usize,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    state: Option<PathBuf>,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    checkpoint_every: u64,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum StartArg {
    Upper,
    Random,
}

impl SolveArgs {
    fn into_parts(self: Box<Self>) -> (RunConfig, Source) {
        let source = match self.instance {
            Some(p) => Source::Instance(p),
            None => Source::Mesh(self.mesh.config()),
        };
        let config = RunConfig {
            mode: self.mode,
            scheme: self.scheme,
            iterations: self.iters,
            tau: self.tau,
            sigma0: self.sigma0,
            theorem_params: self.theorem_params,
            autotune_window: self.autotune_window,
            eta: self.eta,
            nu: self.nu,
            seed: self.seed,
            start: match self.start {
                StartArg::Upper => Start::Upper,
                StartArg::Random => Start::Random,
            },
            stride: self.stride,
            deterministic: self.deterministic,
            parallel: self.parallel,
            dense_threshold: self.dense_threshold,
            outputs: Outputs {
                csv: self.csv,
                report: self.report,
                state: self.state,
                checkpoint_dir: self.checkpoint_dir,
                checkpoint_every: self.checkpoint_every,
            },
        };
        (config, source)
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { mesh, out } => {
            let inst = generate(&mesh.config(), &out)?;
            log::info!("wrote {} (m = {}, N = {})", out.display(), inst.m(), inst.n);
        }
        Command::Solve(args) => {
            let (config, source) = args.into_parts();
            let outcome = run(&config, &source)?;
            let r = &outcome.report;
            println!(
                "m={} N={} L={} nig={} obj0={} cpu={:.3} obj={} const={}",
                r.m, r.n, r.loads, r.nig, r.obj0, r.cpu, r.obj, r.constraint
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = serde_json::json!({
                "error": { "kind": "usage", "message": e.to_string().trim_end(), "exit_code": 2 }
            });
            eprintln!("{msg}");
            return ExitCode::from(2);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
