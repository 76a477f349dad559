//! Batch front-end: instance generation, configured solves, iteration logs and reports.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use fmo::diagnostics::{
    approximation_certificate, compute_constants, flop_report, theorem_parameters, BoundConstants, Certificate,
    FlopReport,
};
use fmo::fem2d::{build_instance, Edge, LoadSpec, MeshSpec, NodeSelector};
use fmo::format::{read_instance, write_instance, write_material};
use fmo::penalty::{violation, DenseStiffness};
use fmo::proj::spectral::project_block;
use fmo::{
    feasible_e, starting_point, DualState, FmoError, MaterialState, Mode, ProblemInstance, Reduction, Scheme, Solver,
    SolverConfig, SymBlock,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

pub const CSV_HEADER: &str =
    "t,objective,gap_estimate,theoretical_bound,violation_literal,violation_positive,sigma,alpha,wall_ns,flops";

/// Relative slack on `c_j <= gamma` before a load counts as violated in the report.
pub const FEASIBLE_REL_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Fmo(#[from] FmoError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid run configuration: {0}")]
    Config(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Fmo(e) if !e.is_input_error() => 3,
            _ => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Fmo(e) => e.kind(),
            CliError::Io { .. } => "io",
            CliError::Config(_) => "invalid_config",
        }
    }

    /// Single-line JSON object describing the error.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": {
                "kind": self.kind(),
                "message": self.to_string(),
                "exit_code": self.exit_code(),
            }
        })
        .to_string()
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Cantilever mesh and problem data for a generated instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeshConfig {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    /// 1: tip load at the right-edge midpoint; 2 adds a horizontal load at the top-right corner.
    pub loads: usize,
    pub rho_l: f64,
    pub rho_u: f64,
    pub r: f64,
    pub gamma: f64,
    pub eta: f64,
    pub nu: f64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig {
            nx: 8,
            ny: 4,
            lx: 8.0,
            ly: 4.0,
            loads: 1,
            rho_l: 0.3,
            rho_u: 1.0,
            r: 0.01,
            gamma: 1.0,
            eta: 1.0,
            nu: 1.0,
        }
    }
}

impl MeshConfig {
    pub fn spec(&self) -> Result<MeshSpec> {
        let mut spec = MeshSpec::cantilever(self.nx, self.ny, self.lx, self.ly);
        match self.loads {
            1 => {}
            2 => spec.loads.push(LoadSpec {
                nodes: NodeSelector::Node {
                    ix: self.nx,
                    iy: self.ny,
                },
                force: [1.0, 0.0],
            }),
            l => return Err(CliError::Config(format!("generated meshes support 1 or 2 loads, got {l}"))),
        }
        debug_assert_eq!(spec.fixed_edge, Edge::Left);
        Ok(spec)
    }

    pub fn build(&self) -> Result<ProblemInstance> {
        Ok(build_instance(
            &self.spec()?,
            self.rho_l,
            self.rho_u,
            self.r,
            self.gamma,
            self.eta,
            self.nu,
        )?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Instance(PathBuf),
    Mesh(MeshConfig),
}

impl Source {
    pub fn load(&self) -> Result<ProblemInstance> {
        match self {
            Source::Instance(p) => Ok(read_instance(p)?),
            Source::Mesh(m) => m.build(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Start {
    /// Identity blocks with trace at the upper bound, constant duals of norm `eta`.
    #[default]
    Upper,
    /// Seeded random feasible point.
    Random,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outputs {
    pub csv: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub state: Option<PathBuf>,
    /// Averaged states written as `state_<t>.json` at every logged row whose `t` is a multiple.
    pub checkpoint_dir: Option<PathBuf>,
    pub checkpoint_every: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub scheme: Scheme,
    pub iterations: u64,
    /// `None` falls back to the theorem value or 0.5.
    pub tau: Option<f64>,
    /// `None` falls back to the theorem value or 1.
    pub sigma0: Option<f64>,
    pub theorem_params: bool,
    pub autotune_window: usize,
    /// Overrides the instance value.
    pub eta: Option<f64>,
    /// Overrides the instance value.
    pub nu: Option<f64>,
    pub seed: u64,
    pub start: Start,
    pub stride: u64,
    /// Ordered reductions and zeroed timing columns.
    pub deterministic: bool,
    pub parallel: bool,
    pub dense_threshold: usize,
    #[serde(skip)]
    pub outputs: Outputs,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Plain,
            scheme: Scheme::Simple,
            iterations: 1000,
            tau: None,
            sigma0: None,
            theorem_params: false,
            autotune_window: 0,
            eta: None,
            nu: None,
            seed: 0,
            start: Start::Upper,
            stride: 1,
            deterministic: false,
            parallel: false,
            dense_threshold: fmo::penalty::DEFAULT_DENSE_THRESHOLD,
            outputs: Outputs::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(CliError::Config("iterations must be at least 1".into()));
        }
        if self.stride == 0 {
            return Err(CliError::Config("stride must be at least 1".into()));
        }
        if self.outputs.checkpoint_dir.is_some() && self.outputs.checkpoint_every == 0 {
            return Err(CliError::Config("checkpoint interval must be at least 1".into()));
        }
        Ok(())
    }
}

/// One logged CSV row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Row {
    /// Index of the newest iterate in the average.
    pub t: u64,
    /// `<I, E_hat>` of the averaged material.
    pub objective: f64,
    pub gap_estimate: f64,
    pub theoretical_bound: Option<f64>,
    pub violation_literal: Option<f64>,
    pub violation_positive: Option<f64>,
    pub sigma: f64,
    pub alpha: f64,
    pub wall_ns: u128,
    pub flops: u64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Row {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.t,
            self.objective,
            self.gap_estimate,
            opt(self.theoretical_bound),
            opt(self.violation_literal),
            opt(self.violation_positive),
            self.sigma,
            self.alpha,
            self.wall_ns,
            self.flops
        )
    }
}

/// Final report; the first eight fields follow the experiment tables.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case")]
pub struct Report {
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "L")]
    pub loads: usize,
    pub nig: usize,
    pub obj0: f64,
    /// Seconds spent in the iteration loop (0 in deterministic mode).
    pub cpu: f64,
    pub obj: f64,
    /// `"f"` when every compliance is within tolerance of `gamma`, otherwise the positive violation.
    #[serde(rename = "const")]
    pub constraint: serde_json::Value,
    pub iterations: u64,
    pub config: RunConfig,
    pub tau: f64,
    pub sigma0: f64,
    pub sigma_final: f64,
    pub gamma: f64,
    pub eta: f64,
    pub nu: f64,
    pub gap_estimate: f64,
    pub theoretical_bound: Option<f64>,
    pub compliances: Option<Vec<f64>>,
    pub violation_literal: Option<f64>,
    pub violation_positive: Option<f64>,
    pub feasible_constraints: Option<bool>,
    pub feasible_material: bool,
    pub certificate: Option<Certificate>,
    pub b_norm: f64,
    pub lambda_min_btb: Option<f64>,
    pub flops: FlopReport,
}

pub struct Outcome {
    pub report: Report,
    pub rows: Vec<Row>,
    pub e_hat: MaterialState,
}

/// Seeded feasible start: projected random blocks and duals inside the ball.
pub fn random_start(inst: &ProblemInstance, seed: u64) -> Result<(MaterialState, DualState)> {
    let mut g = ChaCha8Rng::seed_from_u64(seed);
    let k = inst.k;
    let mut blocks = Vec::with_capacity(inst.m());
    for i in 0..inst.m() {
        let scale = inst.rho_u[i] / k as f64;
        let mut u = SymBlock::zeros(k);
        for a in 0..k {
            for b in a..k {
                u.set(a, b, scale * g.gen_range(-1.0..1.0));
            }
            u.set(a, a, scale * g.gen_range(0.0..2.0));
        }
        blocks.push(project_block(&u, inst.rho_l[i], inst.rho_u[i], inst.r)?);
    }
    let vectors = (0..inst.num_loads())
        .map(|_| {
            let mut v: Vec<f64> = (0..inst.n).map(|_| g.gen_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            let radius = inst.eta * g.gen_range(0.0..1.0f64);
            if norm > 0.0 {
                v.iter_mut().for_each(|a| *a *= radius / norm);
            }
            v
        })
        .collect();
    Ok((MaterialState::new(blocks), DualState { vectors }))
}

/// Compliances of `e`, or `None` when `N` exceeds the dense threshold.
fn compliances(inst: &ProblemInstance, e: &MaterialState, threshold: usize) -> fmo::Result<Option<Vec<f64>>> {
    if inst.n > threshold {
        return Ok(None);
    }
    Ok(Some(DenseStiffness::factor(inst, e, threshold, None)?.compliances(inst)))
}

fn constraints_hold(c: &[f64], gamma: f64) -> bool {
    c.iter().all(|&cj| cj <= gamma * (1.0 + FEASIBLE_REL_TOL))
}

struct Sinks {
    csv: Option<BufWriter<File>>,
    csv_path: PathBuf,
}

impl Sinks {
    fn open(outputs: &Outputs) -> Result<Self> {
        let csv = match &outputs.csv {
            Some(p) => {
                let mut w = BufWriter::new(File::create(p).map_err(io_err(p))?);
                writeln!(w, "{CSV_HEADER}").map_err(io_err(p))?;
                Some(w)
            }
            None => None,
        };
        if let Some(dir) = &outputs.checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        Ok(Sinks {
            csv,
            csv_path: outputs.csv.clone().unwrap_or_default(),
        })
    }

    fn row(&mut self, row: &Row) -> Result<()> {
        if let Some(w) = self.csv.as_mut() {
            writeln!(w, "{}", row.csv_line()).map_err(io_err(&self.csv_path))?;
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        if let Some(w) = self.csv.as_mut() {
            w.flush().map_err(io_err(&self.csv_path))?;
        }
        Ok(())
    }
}

/// Checkpoint file name for row `t`.
pub fn checkpoint_path(dir: &Path, t: u64) -> PathBuf {
    dir.join(format!("state_{t}.json"))
}

/// Solves `instance` (after applying the `eta`/`nu` overrides) and writes the configured outputs.
pub fn solve(config: &RunConfig, instance: &ProblemInstance) -> Result<Outcome> {
    config.validate()?;
    let mut inst = instance.clone();
    if let Some(eta) = config.eta {
        inst.eta = eta;
    }
    if let Some(nu) = config.nu {
        inst.nu = nu;
    }
    inst.validate()?;

    let constants: BoundConstants = compute_constants(&inst, config.dense_threshold)?;
    let (tau_th, sigma_th) = theorem_parameters(&constants, config.scheme);
    let tau = config.tau.unwrap_or(if config.theorem_params { tau_th } else { 0.5 });
    let sigma0 = config.sigma0.unwrap_or(if config.theorem_params { sigma_th } else { 1.0 });
    let solver_config = SolverConfig {
        scheme: config.scheme,
        mode: config.mode,
        tau,
        sigma0,
        autotune_window: config.autotune_window,
        reduction: if config.parallel && !config.deterministic {
            Reduction::Parallel
        } else {
            Reduction::Ordered
        },
        parallel_blocks: config.parallel,
        dense_threshold: config.dense_threshold,
    };
    let (e0, x0) = match config.start {
        Start::Upper => starting_point(&inst),
        Start::Random => random_start(&inst, config.seed)?,
    };
    let mut solver = Solver::with_start(&inst, solver_config, e0, x0)?.with_constants(constants.clone());
    log::info!(
        "solving m = {}, N = {}, L = {} with {:?}/{:?}, tau = {tau}, sigma0 = {sigma0}",
        inst.m(),
        inst.n,
        inst.num_loads(),
        config.scheme,
        config.mode
    );

    let mut sinks = Sinks::open(&config.outputs)?;
    let mut rows = Vec::new();
    let started = Instant::now();
    let last = config.iterations;
    let mut loop_err: Option<CliError> = None;
    solver.run(config.iterations, |s, rec| {
        let t = rec.t - 1;
        if t % config.stride != 0 && rec.t != last {
            return Ok(());
        }
        let wall_ns = if config.deterministic { 0 } else { started.elapsed().as_nanos() };
        let e_hat = s.averaged_primal()?;
        let viol = compliances(&inst, &e_hat, config.dense_threshold)?.map(|c| violation(&c, inst.gamma));
        let row = Row {
            t,
            objective: e_hat.total_trace(),
            gap_estimate: rec.gap.total,
            theoretical_bound: rec.theoretical_bound,
            violation_literal: viol.map(|v| v.literal),
            violation_positive: viol.map(|v| v.positive),
            sigma: rec.sigma,
            alpha: rec.alpha,
            wall_ns,
            flops: s.flops.sparse(),
        };
        let written = sinks.row(&row).and_then(|_| match &config.outputs.checkpoint_dir {
            Some(dir) if t % config.outputs.checkpoint_every == 0 || rec.t == last => {
                write_material(&checkpoint_path(dir, t), &e_hat).map_err(CliError::from)
            }
            _ => Ok(()),
        });
        if let Err(e) = written {
            loop_err = Some(e);
            return Err(FmoError::Format("output failed".into()));
        }
        if rec.t % 1000 == 0 {
            log::debug!("t = {t}: objective {} gap {}", row.objective, row.gap_estimate);
        }
        rows.push(row);
        Ok(())
    })
    .map_err(|e| loop_err.take().unwrap_or(CliError::Fmo(e)))?;
    let elapsed = started.elapsed().as_secs_f64();
    sinks.finish()?;

    let e_hat = solver.averaged_primal()?;
    let comp = compliances(&inst, &e_hat, config.dense_threshold)?;
    let viol = comp.as_ref().map(|c| violation(c, inst.gamma));
    let feasible_constraints = comp.as_ref().map(|c| constraints_hold(c, inst.gamma));
    let constraint = match (feasible_constraints, viol) {
        (Some(true), _) => serde_json::Value::from("f"),
        (Some(false), Some(v)) => serde_json::Value::from(v.positive),
        _ => serde_json::Value::Null,
    };
    let certificate = comp
        .as_ref()
        .map(|c| approximation_certificate(&inst, &solver.x, c, &constants, inst.total_rho_u()));
    let last_row = rows.last().copied().expect("at least one row is logged");
    let report = Report {
        m: inst.m(),
        n: inst.n,
        loads: inst.num_loads(),
        nig: inst.nig(),
        obj0: rows[0].objective,
        cpu: if config.deterministic { 0.0 } else { elapsed },
        obj: e_hat.total_trace(),
        constraint,
        iterations: config.iterations,
        config: config.clone(),
        tau,
        sigma0,
        sigma_final: solver.schedule.sigma,
        gamma: inst.gamma,
        eta: inst.eta,
        nu: inst.nu,
        gap_estimate: last_row.gap_estimate,
        theoretical_bound: last_row.theoretical_bound,
        violation_literal: viol.map(|v| v.literal),
        violation_positive: viol.map(|v| v.positive),
        compliances: comp,
        feasible_constraints,
        feasible_material: feasible_e(&inst, &e_hat)?.feasible,
        certificate,
        b_norm: constants.b_norm,
        lambda_min_btb: constants.lambda_min_btb,
        flops: flop_report(&inst, solver.flops.snapshot(), config.iterations),
    };

    if let Some(p) = &config.outputs.report {
        let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Fmo(FmoError::Format(e.to_string())))?;
        std::fs::write(p, text + "\n").map_err(io_err(p))?;
    }
    if let Some(p) = &config.outputs.state {
        write_material(p, &e_hat)?;
    }
    Ok(Outcome { report, rows, e_hat })
}

/// Loads the source and solves.
pub fn run(config: &RunConfig, source: &Source) -> Result<Outcome> {
    config.validate()?;
    let inst = source.load()?;
    solve(config, &inst)
}

/// Builds a mesh instance and writes it in the instance format.
pub fn generate(mesh: &MeshConfig, out: &Path) -> Result<ProblemInstance> {
    let inst = mesh.build()?;
    write_instance(out, &inst)?;
    Ok(inst)
}
