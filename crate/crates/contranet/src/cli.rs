//! Command-line surface tying the pipeline together: decay rates,
//! certification, gain synthesis, simulation, and the DC-ring case study.
//!
//! Structured inputs and outputs are JSON; time series are CSV. Every
//! command that produces files writes them into one output directory
//! (`--out-dir`, falling back to the `CONTRANET_OUT_DIR` environment
//! variable, then the working directory) and finishes by writing
//! `manifest.json` listing what was produced — the manifest is written last,
//! so its presence marks a completed run.
//!
//! Exit codes: 0 on success (and for `certify`/`mtdc`, a feasible/passing
//! result), 1 for an infeasible design or a run that fails its thresholds,
//! 2 for input errors (unreadable files, malformed JSON, inconsistent
//! dimensions, bad step sizes).
//!
//! The JSON network description covers the declarative subset of the model:
//! linear intrinsic dynamics, linear self-terms, diffusive pair couplings,
//! constant or sinusoidal delays, polynomial-plus-decaying-sine
//! disturbances, identity outputs, and the zero desired solution. Anything
//! involving closures (custom maps, custom delays, custom histories) is
//! available through the library API only.

use crate::certify::{certify, Certificate, Transformation};
use crate::halanay::{rate_residual, solve_rate, HalanayError, HalanayParams};
use crate::linalg::{DenseMatrix, NormSpec, PNorm};
use crate::mtdc::{build_mtdc, run_case_study, CaseStudyReport, MtdcError, MtdcParams};
use crate::netmodel::{
    assemble_jacobian_blocks, zeta_offset, AgentDynamics, CouplingLayer, DelayFn, DelayKey,
    DelaySchedule, DesiredSolution, DisturbanceModel, MultiplexNetwork, PairMap, PairTerm,
    Residual, SelfTerm, TermMap, TermRole,
};
use crate::simulator::{error_metrics, simulate, InitialHistory, SimConfig, Trace};
use crate::synthesis::{
    GainVector, PlantParams, SearchConfig, SynthesisError, SynthesisResult, TransformParams,
};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INFEASIBLE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Anything that should abort a command with exit code 2: unreadable or
/// malformed inputs, inconsistent model descriptions, failed writes.
#[derive(Debug)]
pub struct CliError(pub String);

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for CliError {}

fn input<E: fmt::Display>(e: E) -> CliError {
    CliError(e.to_string())
}

// ---------------------------------------------------------------------------
// Argument surface
// ---------------------------------------------------------------------------

#[derive(Debug, Parser)]
#[command(
    name = "contranet",
    version,
    about = "Contraction certificates, gain synthesis, and closed-loop simulation \
             for nonlinear networks with delayed multiplex integral control"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the delayed rate equation and print the decay rate.
    Rate(RateArgs),
    /// Certify a network design from JSON inputs (exit 0 iff feasible).
    Certify(CertifyArgs),
    /// Search ring controller gains and write the design point.
    Synth(SynthArgs),
    /// Integrate a network and write the trace and its error metrics.
    Simulate(SimulateArgs),
    /// Run the DC-ring case study end to end and write the full report.
    Mtdc(MtdcArgs),
}

#[derive(Debug, Args)]
pub struct RateArgs {
    /// Instantaneous contraction rate (must be positive).
    #[arg(long)]
    pub sigma_bar: f64,
    /// Total delayed gain (nonnegative, strictly below sigma-bar).
    #[arg(long)]
    pub sigma_under: f64,
    /// Worst-case delay.
    #[arg(long)]
    pub tau_max: f64,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    /// Network description (JSON).
    pub network: PathBuf,
    /// State transformation: {"block": [[..]]} or {"blocks": [[[..]], ..]}.
    pub transform: PathBuf,
    /// Composite norm: {"p": "two" | "inf", "eta": [..]} (eta optional).
    pub norm: PathBuf,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Search configuration (JSON; "{}" uses the stock defaults).
    pub search: PathBuf,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Network description (JSON).
    pub network: PathBuf,
    /// Simulation setup (JSON): t0, horizon, dt, seed, history, norm.
    pub sim: PathBuf,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MtdcArgs {
    /// Ring size.
    #[arg(long, default_value_t = 30)]
    pub terminals: usize,
    #[arg(long, default_value_t = 60.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    /// Seed for the normal initial voltages.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Inject this design point (gains JSON) instead of running the search.
    #[arg(long)]
    pub gains_file: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Parse real process arguments and dispatch; returns the exit code.
pub fn run() -> i32 {
    let mut stdout = std::io::stdout();
    run_from(std::env::args_os(), &mut stdout)
}

/// Dispatch a command from explicit arguments, writing human-readable
/// progress to `out`. Returns the exit code.
pub fn run_from<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_INPUT,
            };
            let _ = write!(out, "{e}");
            return code;
        }
    };
    let result = match &cli.command {
        Command::Rate(a) => cmd_rate(a, out),
        Command::Certify(a) => cmd_certify(a, out),
        Command::Synth(a) => cmd_synth(a, out),
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Mtdc(a) => cmd_mtdc(a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let _ = writeln!(out, "error: {e}");
            EXIT_INPUT
        }
    }
}

// ---------------------------------------------------------------------------
// JSON schemas
// ---------------------------------------------------------------------------

/// Declarative network description. Agent indices are zero-based
/// everywhere. With m+1 layers listed, layer 0 feeds the plant directly and
/// layers 1..=m feed the integrator ladder, so the integral order is
/// `layers.len() - 1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkFile {
    pub agents: Vec<AgentSpec>,
    pub layers: Vec<LayerSpec>,
    /// Bound every scheduled delay must respect.
    #[serde(default)]
    pub tau_max: f64,
    #[serde(default)]
    pub delays: Vec<DelaySpec>,
    #[serde(default)]
    pub disturbance: Option<DisturbanceSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentSpec {
    /// Square intrinsic-dynamics matrix; its size sets the state dimension.
    pub a: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(default)]
    pub self_terms: Vec<SelfTermSpec>,
    #[serde(default)]
    pub pair_terms: Vec<PairTermSpec>,
    #[serde(default)]
    pub delayed_pair_terms: Vec<PairTermSpec>,
}

/// Whether a coupling belongs to the physical plant or to the controller
/// (controller terms are the ones reported as injected inputs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleSpec {
    Plant,
    #[default]
    Control,
}

impl RoleSpec {
    fn role(self) -> TermRole {
        match self {
            RoleSpec::Plant => TermRole::Plant,
            RoleSpec::Control => TermRole::Control,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelfTermSpec {
    pub agent: usize,
    /// Linear gain applied to the agent's own state.
    pub gain: Vec<Vec<f64>>,
    #[serde(default)]
    pub role: RoleSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairTermSpec {
    pub to: usize,
    pub from: usize,
    /// Gain G of the diffusive coupling G (x_from - x_to).
    pub diffusive_gain: Vec<Vec<f64>>,
    #[serde(default)]
    pub role: RoleSpec,
}

/// One scheduled delay on the edge from -> to:
/// tau(t) = base + amplitude * sin(t + phase).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DelaySpec {
    pub to: usize,
    pub from: usize,
    pub base: f64,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    /// Per agent: polynomial coefficient vectors, constant term first.
    pub poly: Vec<Vec<Vec<f64>>>,
    /// Per agent residual parts; empty means none anywhere.
    #[serde(default)]
    pub residuals: Vec<ResidualSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResidualSpec {
    None,
    DecayingSine {
        amplitude: Vec<f64>,
        decay: f64,
        frequency: f64,
        phase: f64,
    },
}

/// State transformation: one shared block or one block per agent.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TransformFile {
    #[serde(default)]
    pub block: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub blocks: Option<Vec<Vec<Vec<f64>>>>,
}

/// Composite norm: local p-norm plus optional per-agent weights
/// (omitted = uniform).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormFile {
    pub p: PNorm,
    #[serde(default)]
    pub eta: Option<Vec<f64>>,
}

/// Simulation setup for `simulate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimFile {
    #[serde(default)]
    pub t0: f64,
    pub horizon: f64,
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
    pub history: HistorySpec,
    /// Norm for the error metrics (default: uniform Euclidean).
    #[serde(default)]
    pub norm: Option<NormFile>,
    /// Tail window start (default: t0 + 2/3 of the horizon).
    #[serde(default)]
    pub tail_start: Option<f64>,
    /// Settling threshold (default: 1e-3 x the initial composite error).
    #[serde(default)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HistorySpec {
    /// Constant history: the full stacked augmented state.
    Constant { values: Vec<f64> },
    /// Seeded standard-normal plant states, integrators starting at zero.
    Gaussian { std: f64 },
}

/// A ring design point: three delay-free and three delayed gains plus the
/// transformation parameters. The metadata fields are written by the search
/// and ignored on input.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GainsFile {
    pub k: [f64; 3],
    pub kt: [f64; 3],
    pub alpha: f64,
    pub beta: f64,
    #[serde(default)]
    pub sigma_bar: Option<f64>,
    #[serde(default)]
    pub sigma_under: Option<f64>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub cond_t: Option<f64>,
    #[serde(default)]
    pub evaluations: Option<usize>,
}

impl GainsFile {
    pub fn design_point(&self) -> (GainVector, TransformParams) {
        (
            GainVector::new(self.k, self.kt),
            TransformParams { alpha: self.alpha, beta: self.beta },
        )
    }

    pub fn from_design(gains: &GainVector, tp: &TransformParams) -> Self {
        Self {
            k: gains.ks(),
            kt: gains.kts(),
            alpha: tp.alpha,
            beta: tp.beta,
            sigma_bar: None,
            sigma_under: None,
            lambda: None,
            cond_t: None,
            evaluations: None,
        }
    }

    fn from_synthesis(result: &SynthesisResult) -> Self {
        Self {
            sigma_bar: Some(result.certificate.sigma_bar),
            sigma_under: Some(result.certificate.sigma_under),
            lambda: result.certificate.lambda,
            cond_t: Some(result.cond_t),
            evaluations: Some(result.evaluations),
            ..Self::from_design(&result.gains, &result.transform)
        }
    }
}

/// Everything `report.json` holds about a case-study run (the trace itself
/// goes to `trace.csv`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportSummary {
    pub params: MtdcParams,
    pub synthesized: bool,
    pub gains: GainsFile,
    pub certificate: Certificate,
    pub metrics: crate::simulator::ErrorMetrics,
    pub tail_start: f64,
    pub initial_max_abs_v: f64,
    pub tail_max_abs_v: f64,
    pub v_threshold: f64,
    pub v_pass: bool,
    pub u_plus_d_tail: f64,
    pub u_plus_d_band: f64,
    pub u_pass: bool,
    pub zeta_tails: [f64; 2],
    /// Smallest certificate-band value over the tail (absent if infeasible).
    pub zeta_band_floor: Option<f64>,
    pub zeta_pass: bool,
    pub window_35_40_max_abs_v: Option<f64>,
    pub envelope_dominated: bool,
    /// Envelope inputs (initial error, residual sup, output Lipschitz).
    pub envelope_params: (f64, f64, f64),
    /// Overall verdict: feasible certificate and every check passing.
    pub pass: bool,
}

impl ReportSummary {
    pub fn from_report(report: &CaseStudyReport) -> Self {
        let mut gains = GainsFile::from_design(&report.gains, &report.transform);
        gains.sigma_bar = Some(report.certificate.sigma_bar);
        gains.sigma_under = Some(report.certificate.sigma_under);
        gains.lambda = report.certificate.lambda;
        gains.cond_t = Some(report.certificate.cond_t);
        let pass = report.certificate.feasible
            && report.v_pass
            && report.u_pass
            && report.zeta_pass
            && report.envelope_dominated;
        Self {
            params: report.params.clone(),
            synthesized: report.synthesized,
            gains,
            certificate: report.certificate.clone(),
            metrics: report.metrics.clone(),
            tail_start: report.tail_start,
            initial_max_abs_v: report.initial_max_abs_v,
            tail_max_abs_v: report.tail_max_abs_v,
            v_threshold: report.v_threshold,
            v_pass: report.v_pass,
            u_plus_d_tail: report.u_plus_d_tail,
            u_plus_d_band: report.u_plus_d_band,
            u_pass: report.u_pass,
            zeta_tails: report.zeta_tails,
            zeta_band_floor: report.zeta_band_floor.is_finite().then_some(report.zeta_band_floor),
            zeta_pass: report.zeta_pass,
            window_35_40_max_abs_v: report.window_35_40_max_abs_v,
            envelope_dominated: report.envelope_dominated,
            envelope_params: report.envelope_params,
            pass,
        }
    }
}

/// Completion marker written last into the output directory: the command,
/// its inputs, the seed, the tool version, the wall-clock time, and every
/// file the run produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<String>,
    pub out_dir: String,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<String>,
}

// ---------------------------------------------------------------------------
// Schema -> model conversion
// ---------------------------------------------------------------------------

fn matrix(rows: &[Vec<f64>]) -> Result<DenseMatrix, CliError> {
    DenseMatrix::from_rows(rows).map_err(input)
}

/// Extract a matrix's rows (for building JSON descriptions by hand).
pub fn matrix_rows(m: &DenseMatrix) -> Vec<Vec<f64>> {
    (0..m.rows())
        .map(|r| (0..m.cols()).map(|c| m.get(r, c)).collect())
        .collect()
}

/// Build the full network model from its declarative description.
pub fn network_from_file(nf: &NetworkFile) -> Result<MultiplexNetwork, CliError> {
    let agents = nf
        .agents
        .iter()
        .map(|a| Ok(AgentDynamics::linear(matrix(&a.a)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let dims: Vec<usize> = agents.iter().map(|a| a.state_dim).collect();

    let mut delays = DelaySchedule::new(nf.tau_max).map_err(input)?;
    for d in &nf.delays {
        let law = if d.amplitude == 0.0 {
            DelayFn::Constant(d.base)
        } else {
            DelayFn::Sinusoidal { base: d.base, amplitude: d.amplitude, phase: d.phase }
        };
        delays
            .insert(DelayKey::Edge { to: d.to, from: d.from }, law)
            .map_err(input)?;
    }

    let mut layers = Vec::with_capacity(nf.layers.len());
    for ls in &nf.layers {
        let mut layer = CouplingLayer::empty();
        for st in &ls.self_terms {
            layer.self_terms.push(SelfTerm {
                agent: st.agent,
                map: TermMap::Linear(matrix(&st.gain)?),
                role: st.role.role(),
            });
        }
        for pt in &ls.pair_terms {
            layer.pair_terms.push(PairTerm {
                to: pt.to,
                from: pt.from,
                map: PairMap::diffusive(matrix(&pt.diffusive_gain)?),
                role: pt.role.role(),
            });
        }
        for pt in &ls.delayed_pair_terms {
            layer.delayed_pair_terms.push(PairTerm {
                to: pt.to,
                from: pt.from,
                map: PairMap::diffusive(matrix(&pt.diffusive_gain)?),
                role: pt.role.role(),
            });
        }
        layers.push(layer);
    }

    let mut disturbance = DisturbanceModel::zero(&dims, nf.layers.len().saturating_sub(1));
    if let Some(ds) = &nf.disturbance {
        if ds.poly.len() != dims.len() {
            return Err(CliError(format!(
                "disturbance lists {} agents, network has {}",
                ds.poly.len(),
                dims.len()
            )));
        }
        disturbance.poly = ds.poly.clone();
        if !ds.residuals.is_empty() {
            if ds.residuals.len() != dims.len() {
                return Err(CliError(format!(
                    "disturbance lists {} residuals, network has {} agents",
                    ds.residuals.len(),
                    dims.len()
                )));
            }
            for (slot, spec) in disturbance.residual.iter_mut().zip(&ds.residuals) {
                *slot = match spec {
                    ResidualSpec::None => Residual::None,
                    ResidualSpec::DecayingSine { amplitude, decay, frequency, phase } => {
                        Residual::DecayingSine {
                            amplitude: amplitude.clone(),
                            decay: *decay,
                            frequency: *frequency,
                            phase: *phase,
                        }
                    }
                };
            }
        }
    }

    MultiplexNetwork::new(agents, layers, delays, disturbance, None, DesiredSolution::Zero)
        .map_err(input)
}

fn transformation_from_file(tf: &TransformFile, n: usize) -> Result<Transformation, CliError> {
    match (&tf.blocks, &tf.block) {
        (Some(bs), _) => {
            let blocks = bs.iter().map(|b| matrix(b)).collect::<Result<Vec<_>, _>>()?;
            Transformation::new(blocks).map_err(input)
        }
        (None, Some(b)) => Transformation::uniform(matrix(b)?, n).map_err(input),
        (None, None) => Err(CliError("transform file needs `block` or `blocks`".to_string())),
    }
}

fn norm_from_file(f: Option<&NormFile>, n: usize) -> Result<NormSpec, CliError> {
    match f {
        Some(NormFile { p, eta: Some(eta) }) => NormSpec::new(*p, eta.clone()),
        Some(NormFile { p, eta: None }) => NormSpec::uniform(*p, n),
        None => NormSpec::uniform(PNorm::Two, n),
    }
    .map_err(input)
}

/// The case-study network as a declarative description — the same model
/// `build_mtdc` constructs, in file form.
pub fn mtdc_network_file(p: &MtdcParams, gains: &GainVector) -> NetworkFile {
    let n = p.n;
    let c = p.c;
    let k = gains.ks();
    let kt = gains.kts();
    let neighbors = |i: usize| [(i + n - 1) % n, (i + 1) % n];

    let agents = (0..n).map(|_| AgentSpec { a: vec![vec![0.0]] }).collect();

    let mut delays = Vec::new();
    for i in 0..n {
        for j in neighbors(i) {
            delays.push(DelaySpec {
                to: i,
                from: j,
                base: p.delay_base,
                amplitude: p.delay_amplitude,
                phase: (i + 1) as f64,
            });
        }
    }

    let mut layers = Vec::with_capacity(3);
    for level in 0..3usize {
        let mut layer = LayerSpec::default();
        for i in 0..n {
            layer.self_terms.push(SelfTermSpec {
                agent: i,
                gain: vec![vec![-k[level] / c]],
                role: RoleSpec::Control,
            });
            for j in neighbors(i) {
                if level == 0 {
                    layer.pair_terms.push(PairTermSpec {
                        to: i,
                        from: j,
                        diffusive_gain: vec![vec![1.0 / (c * p.r)]],
                        role: RoleSpec::Plant,
                    });
                }
                layer.delayed_pair_terms.push(PairTermSpec {
                    to: i,
                    from: j,
                    diffusive_gain: vec![vec![kt[level] / c]],
                    role: RoleSpec::Control,
                });
            }
        }
        layers.push(layer);
    }

    let target = p.disturbance_terminal - 1;
    let s = p.disturbance_scale;
    let mut poly = vec![vec![vec![0.0], vec![0.0]]; n];
    let mut residuals = vec![ResidualSpec::None; n];
    if s != 0.0 {
        poly[target] = vec![vec![3.0 * s / c], vec![1.0 * s / c]];
        residuals[target] = ResidualSpec::DecayingSine {
            amplitude: vec![1.0 * s / c],
            decay: 0.2,
            frequency: 1.0,
            phase: 0.0,
        };
    }

    NetworkFile {
        agents,
        layers,
        tau_max: p.tau_max(),
        delays,
        disturbance: Some(DisturbanceSpec { poly, residuals }),
    }
}

// ---------------------------------------------------------------------------
// Output plumbing
// ---------------------------------------------------------------------------

fn resolve_out_dir(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os("CONTRANET_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn prepare_out_dir(flag: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    let dir = resolve_out_dir(flag);
    fs::create_dir_all(&dir)
        .map_err(|e| CliError(format!("creating {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<String, CliError> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| CliError(format!("serializing {name}: {e}")))?;
    write_text(dir, name, &(body + "\n"))
}

fn write_text(dir: &Path, name: &str, body: &str) -> Result<String, CliError> {
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| CliError(format!("writing {}: {e}", path.display())))?;
    Ok(name.to_string())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let body = fs::read_to_string(path)
        .map_err(|e| CliError(format!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&body).map_err(|e| CliError(format!("{}: {e}", path.display())))
}

fn finish_manifest(
    dir: &Path,
    command: &str,
    inputs: &[&Path],
    seed: Option<u64>,
    outputs: Vec<String>,
    started: Instant,
) -> Result<(), CliError> {
    let manifest = RunManifest {
        command: command.to_string(),
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        out_dir: dir.display().to_string(),
        seed,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        outputs,
    };
    write_json(dir, "manifest.json", &manifest)?;
    Ok(())
}

fn say(out: &mut dyn Write, line: &str) -> Result<(), CliError> {
    writeln!(out, "{line}").map_err(|e| CliError(format!("writing output: {e}")))
}

fn csv_cell(v: f64) -> String {
    format!("{v:.12e}")
}

/// Full-state CSV: every plant component, every integrator component, every
/// injected control, the composite output error, and the shifted-integrator
/// norms, one row per mesh point.
pub fn trace_csv(trace: &Trace) -> String {
    let n = trace.dims.len();
    let mut header = vec!["t".to_string()];
    for (i, &dim) in trace.dims.iter().enumerate() {
        for c in 0..dim {
            header.push(format!("x{}_{}", i + 1, c + 1));
        }
    }
    for (i, &dim) in trace.dims.iter().enumerate() {
        for k in 1..=trace.order {
            for c in 0..dim {
                header.push(format!("r{}_{}_{}", i + 1, k, c + 1));
            }
        }
    }
    for (i, &dim) in trace.dims.iter().enumerate() {
        for c in 0..dim {
            header.push(format!("u{}_{}", i + 1, c + 1));
        }
    }
    header.push("composite_error".to_string());
    for k in 1..=trace.order {
        header.push(format!("zeta{k}_norm"));
    }

    let mut body = header.join(",");
    body.push('\n');
    for ti in 0..trace.len() {
        let mut row = vec![csv_cell(trace.times[ti])];
        for i in 0..n {
            row.extend(trace.agent_x(ti, i).iter().copied().map(csv_cell));
        }
        for i in 0..n {
            for k in 1..=trace.order {
                row.extend(trace.agent_r(ti, i, k).iter().copied().map(csv_cell));
            }
        }
        for i in 0..n {
            row.extend(trace.agent_u(ti, i).iter().copied().map(csv_cell));
        }
        row.push(csv_cell(trace.composite_error[ti]));
        row.extend(trace.zeta_norms[ti].iter().copied().map(csv_cell));
        body.push_str(&row.join(","));
        body.push('\n');
    }
    body
}

/// Plot-ready case-study series: per mesh point the worst voltage
/// magnitude, the disturbed terminal's voltage, its injected control, the
/// disturbance, their sum (the compensation error), the two shifted
/// integrator coordinates, the composite error, and the certificate
/// envelope.
pub fn case_study_csv(report: &CaseStudyReport) -> Result<String, CliError> {
    let net = build_mtdc(&report.params, &report.gains).map_err(input)?;
    let trace = &report.trace;
    let n = report.params.n;
    let target = report.params.disturbance_terminal - 1;
    let (u0, w_sup, l_g) = report.envelope_params;

    let mut body = String::from(
        "t,max_abs_v,v_dist,u_dist,d_dist,u_plus_d,zeta1_dist,zeta2_dist,composite_error,envelope\n",
    );
    for ti in 0..trace.len() {
        let t = trace.times[ti];
        let max_abs_v = (0..n)
            .map(|i| trace.agent_x(ti, i)[0].abs())
            .fold(0.0_f64, f64::max);
        let v = trace.agent_x(ti, target)[0];
        let u = trace.agent_u(ti, target)[0];
        let d = net.disturbance().value(target, 1, t)[0];
        let z1 = trace.agent_r(ti, target, 1)[0]
            + zeta_offset(2, 1, &net.disturbance().poly[target], t).map_err(input)?[0];
        let z2 = trace.agent_r(ti, target, 2)[0]
            + zeta_offset(2, 2, &net.disturbance().poly[target], t).map_err(input)?[0];
        let envelope = if report.certificate.feasible {
            crate::certify::iss_envelope(&report.certificate, u0, w_sup, l_g, t - trace.times[0])
                .map_err(input)?
        } else {
            f64::NAN
        };
        let row = [
            t,
            max_abs_v,
            v,
            u,
            d,
            u + d,
            z1,
            z2,
            trace.composite_error[ti],
            envelope,
        ];
        let cells: Vec<String> = row.iter().copied().map(csv_cell).collect();
        body.push_str(&cells.join(","));
        body.push('\n');
    }
    Ok(body)
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_rate(a: &RateArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let params = match HalanayParams::new(a.sigma_bar, a.sigma_under, a.tau_max) {
        Ok(p) => p,
        Err(e @ HalanayError::NotContracting { .. }) => {
            say(out, &format!("infeasible: {e}"))?;
            return Ok(EXIT_INFEASIBLE);
        }
        Err(e) => return Err(input(e)),
    };
    let lambda = solve_rate(&params);
    let residual = rate_residual(&params, lambda);
    say(out, &format!("lambda = {lambda:.12} (residual {residual:.3e})"))?;
    Ok(EXIT_OK)
}

fn cmd_certify(a: &CertifyArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let started = Instant::now();
    let nf: NetworkFile = read_json(&a.network)?;
    let tf: TransformFile = read_json(&a.transform)?;
    let nrm: NormFile = read_json(&a.norm)?;

    let net = network_from_file(&nf)?;
    let n = net.num_agents();
    let transformation = transformation_from_file(&tf, n)?;
    let spec = norm_from_file(Some(&nrm), n)?;
    // The declarative subset is linear, so the blocks are time-invariant
    // and assembling them at t = 0 loses nothing.
    let blocks = assemble_jacobian_blocks(&net, 0.0).map_err(input)?;
    let cert = certify(&blocks, &transformation, &spec).map_err(input)?;

    let dir = prepare_out_dir(&a.out_dir)?;
    let outputs = vec![write_json(&dir, "certificate.json", &cert)?];

    say(
        out,
        &format!(
            "sigma_bar = {:.6e}, sigma_under = {:.6e}, cond_T = {:.6}",
            cert.sigma_bar, cert.sigma_under, cert.cond_t
        ),
    )?;
    let code = if cert.feasible {
        say(
            out,
            &format!("feasible: decay rate lambda = {:.12}", cert.lambda.unwrap_or(f64::NAN)),
        )?;
        EXIT_OK
    } else {
        say(out, "infeasible:")?;
        let floor = cert.sigma_under.max(0.0);
        for (i, row) in cert.c2_rows.iter().enumerate() {
            if -row <= floor {
                say(
                    out,
                    &format!(
                        "  violation: agent {} instantaneous rate {:.6e} fails to dominate \
                         delayed gain {:.6e}",
                        i + 1,
                        -row,
                        floor
                    ),
                )?;
            }
        }
        EXIT_INFEASIBLE
    };
    finish_manifest(
        &dir,
        "certify",
        &[&a.network, &a.transform, &a.norm],
        None,
        outputs,
        started,
    )?;
    Ok(code)
}

fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let started = Instant::now();
    let search: SearchConfig = read_json(&a.search)?;
    let dir = prepare_out_dir(&a.out_dir)?;
    match crate::synthesis::synthesize(&search) {
        Ok(result) => {
            let gains = GainsFile::from_synthesis(&result);
            let outputs = vec![write_json(&dir, "gains.json", &gains)?];
            say(
                out,
                &format!(
                    "design point: k = {:?}, kt = {:?}, alpha = {}, beta = {}",
                    gains.k, gains.kt, gains.alpha, gains.beta
                ),
            )?;
            say(
                out,
                &format!(
                    "certified: sigma_bar = {:.6e}, sigma_under = {:.6e}, lambda = {:.6e} \
                     ({} evaluations)",
                    result.certificate.sigma_bar,
                    result.certificate.sigma_under,
                    result.certificate.lambda.unwrap_or(f64::NAN),
                    result.evaluations
                ),
            )?;
            finish_manifest(&dir, "synth", &[&a.search], None, outputs, started)?;
            Ok(EXIT_OK)
        }
        Err(SynthesisError::NoFeasiblePoint(notes)) => {
            say(out, "no feasible design point on the search grid:")?;
            for note in notes.iter().take(10) {
                say(out, &format!("  {note}"))?;
            }
            finish_manifest(&dir, "synth", &[&a.search], None, Vec::new(), started)?;
            Ok(EXIT_INFEASIBLE)
        }
        Err(e) => Err(input(e)),
    }
}

fn cmd_simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let started = Instant::now();
    let nf: NetworkFile = read_json(&a.network)?;
    let sf: SimFile = read_json(&a.sim)?;
    let net = network_from_file(&nf)?;
    let spec = norm_from_file(sf.norm.as_ref(), net.num_agents())?;
    let history = match &sf.history {
        HistorySpec::Constant { values } => InitialHistory::ConstantStacked(values.clone()),
        HistorySpec::Gaussian { std } => InitialHistory::GaussianStates { std: *std },
    };
    let cfg = SimConfig { t0: sf.t0, horizon: sf.horizon, dt: sf.dt, history, seed: sf.seed };
    let trace = simulate(&net, &cfg, &spec).map_err(input)?;

    let tail_start = sf.tail_start.unwrap_or(sf.t0 + 2.0 / 3.0 * sf.horizon);
    let threshold = sf.threshold.unwrap_or(1e-3 * trace.composite_error[0]);
    let metrics = error_metrics(&trace, &net, &spec, tail_start, threshold).map_err(input)?;

    let dir = prepare_out_dir(&a.out_dir)?;
    let outputs = vec![
        write_text(&dir, "trace.csv", &trace_csv(&trace))?,
        write_json(&dir, "metrics.json", &metrics)?,
    ];
    say(
        out,
        &format!(
            "integrated {} mesh points; composite error {:.6e} -> {:.6e} (tail sup {:.6e})",
            trace.len(),
            trace.composite_error[0],
            metrics.final_error,
            metrics.tail_sup_error
        ),
    )?;
    finish_manifest(
        &dir,
        "simulate",
        &[&a.network, &a.sim],
        Some(sf.seed),
        outputs,
        started,
    )?;
    Ok(EXIT_OK)
}

fn cmd_mtdc(a: &MtdcArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let started = Instant::now();
    let p = MtdcParams {
        n: a.terminals,
        horizon: a.horizon,
        dt: a.dt,
        seed: a.seed,
        ..MtdcParams::default()
    };
    let injected = match &a.gains_file {
        Some(path) => {
            let gf: GainsFile = read_json(path)?;
            Some(gf.design_point())
        }
        None => None,
    };
    let search = SearchConfig {
        eta: vec![1.0; a.terminals],
        plant: PlantParams::mtdc_ring(a.terminals),
        ..SearchConfig::default()
    };

    let report = match run_case_study(&p, &search, injected) {
        Ok(r) => r,
        Err(MtdcError::Synthesis(SynthesisError::NoFeasiblePoint(notes))) => {
            say(out, "no feasible design point on the search grid:")?;
            for note in notes.iter().take(10) {
                say(out, &format!("  {note}"))?;
            }
            return Ok(EXIT_INFEASIBLE);
        }
        Err(e) => return Err(input(e)),
    };

    let dir = prepare_out_dir(&a.out_dir)?;
    let summary = ReportSummary::from_report(&report);
    let outputs = vec![
        write_json(&dir, "gains.json", &summary.gains)?,
        write_json(&dir, "certificate.json", &report.certificate)?,
        write_text(&dir, "trace.csv", &case_study_csv(&report)?)?,
        write_json(&dir, "report.json", &summary)?,
    ];

    let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
    say(
        out,
        &format!(
            "certificate: feasible = {}, sigma_bar = {:.6e}, sigma_under = {:.6e}, lambda = {:.6e}",
            report.certificate.feasible,
            report.certificate.sigma_bar,
            report.certificate.sigma_under,
            report.certificate.lambda.unwrap_or(f64::NAN)
        ),
    )?;
    say(
        out,
        &format!(
            "voltages: initial {:.6e} -> tail {:.6e} (threshold {:.6e}) {}",
            report.initial_max_abs_v,
            report.tail_max_abs_v,
            report.v_threshold,
            verdict(report.v_pass)
        ),
    )?;
    say(
        out,
        &format!(
            "compensation: |u + d| tail {:.6e} within band {:.6e} {}",
            report.u_plus_d_tail,
            report.u_plus_d_band,
            verdict(report.u_pass)
        ),
    )?;
    say(
        out,
        &format!(
            "integrators: zeta tails ({:.6e}, {:.6e}) within certificate band {}",
            report.zeta_tails[0],
            report.zeta_tails[1],
            verdict(report.zeta_pass)
        ),
    )?;
    say(
        out,
        &format!("envelope: dominated over the whole run {}", verdict(report.envelope_dominated)),
    )?;
    if let Some(w) = report.window_35_40_max_abs_v {
        say(out, &format!("window [35, 40]: max |v| = {:.6e}", w))?;
    }

    let inputs: Vec<&Path> = a.gains_file.iter().map(PathBuf::as_path).collect();
    finish_manifest(&dir, "mtdc", &inputs, Some(a.seed), outputs, started)?;
    Ok(if summary.pass { EXIT_OK } else { EXIT_INFEASIBLE })
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
