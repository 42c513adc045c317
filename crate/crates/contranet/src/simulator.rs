//! Closed-loop simulation of delayed multiplex networks.
//!
//! Fixed-step classical Runge-Kutta (4 stages) on the stacked augmented
//! state, with a dense-output history buffer for delayed lookups: every
//! completed mesh point stores the state and its derivative, and queries
//! between mesh points use cubic Hermite interpolation. Queries at or before
//! the start time read the configured initial history; queries past the last
//! completed mesh point (they arise inside a step whenever a delay dips
//! below the step size) extrapolate the most recent interpolant, which keeps
//! the O(dt^4) error model at the cost of a larger constant.
//!
//! Step-size guard: with `p1` the 1st percentile of the scheduled delays
//! sampled over the run and `tau_max` the declared bound, the config must
//! satisfy `dt <= max(p1, tau_max / 10) / 10`. The percentile governs when
//! delays stay bounded away from zero; the `tau_max`-scale fallback covers
//! schedules whose delays touch zero at isolated instants, where no step
//! size could clear a percentile rule and the extrapolation path above is
//! the designed behavior.

use crate::linalg::NormSpec;
use crate::netmodel::{
    control_input, zeta_offset, DelayKey, MultiplexNetwork, NetModelError, StateEnv,
};
use rand_core::{RngCore, SeedableRng};
use std::fmt;
use serde::{Deserialize, Serialize};

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub enum SimError {
    /// Invalid configuration (non-positive step or horizon, bad history
    /// length, weight count mismatch).
    BadConfig(String),
    /// Step size violates the delay-resolution guard.
    StepTooLarge { dt: f64, limit: f64 },
    /// A scheduled delay leaves [0, tau_max] on the simulation window.
    Schedule(String),
    /// Network evaluation failed.
    Net(NetModelError),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::BadConfig(msg) => write!(f, "bad simulation config: {msg}"),
            SimError::StepTooLarge { dt, limit } => {
                write!(f, "dt = {dt} exceeds the delay-resolution guard {limit:.6e}")
            }
            SimError::Schedule(msg) => write!(f, "delay schedule violation: {msg}"),
            SimError::Net(e) => write!(f, "network evaluation failed: {e}"),
        }
    }
}

impl std::error::Error for SimError {}

impl From<NetModelError> for SimError {
    fn from(e: NetModelError) -> Self {
        SimError::Net(e)
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Initial history on `[t0 - tau_max, t0]`.
pub enum InitialHistory {
    /// The stacked augmented state held constant over the whole history
    /// window (length: sum over agents of (m + 1) n_i).
    ConstantStacked(Vec<f64>),
    /// Plant states drawn once from a centered normal with the given
    /// standard deviation (seeded Box-Muller over ChaCha12), integrators
    /// zero; the drawn state is held constant over the history window.
    GaussianStates { std: f64 },
    /// Arbitrary per-agent augmented history `phi_i(t)`.
    Custom(Box<dyn Fn(usize, f64) -> Vec<f64> + Send + Sync>),
}

impl fmt::Debug for InitialHistory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialHistory::ConstantStacked(v) => {
                write!(f, "InitialHistory::ConstantStacked(len {})", v.len())
            }
            InitialHistory::GaussianStates { std } => {
                write!(f, "InitialHistory::GaussianStates(std {std})")
            }
            InitialHistory::Custom(_) => write!(f, "InitialHistory::Custom"),
        }
    }
}

/// Simulation configuration.
#[derive(Debug)]
pub struct SimConfig {
    pub t0: f64,
    pub horizon: f64,
    pub dt: f64,
    pub history: InitialHistory,
    pub seed: u64,
}

/// Standard normal draws via Box-Muller over a seeded ChaCha12 stream.
/// Deterministic across platforms: uniforms come from the top 53 bits.
pub fn standard_normals(seed: u64, count: usize) -> Vec<f64> {
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let scale = 1.0 / 9007199254740992.0; // 2^-53
    let mut out = Vec::with_capacity(count + 1);
    while out.len() < count {
        let u1 = ((rng.next_u64() >> 11) as f64 + 1.0) * scale; // (0, 1]
        let u2 = (rng.next_u64() >> 11) as f64 * scale; // [0, 1)
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        out.push(r * theta.cos());
        out.push(r * theta.sin());
    }
    out.truncate(count);
    out
}

// ---------------------------------------------------------------------------
// Layout
// ---------------------------------------------------------------------------

/// Stacked-vector layout: agent i occupies `aug_offset[i] .. aug_offset[i] +
/// (m + 1) n_i`, with the plant state first and the m integrator blocks after.
#[derive(Debug, Clone)]
struct Layout {
    order: usize,
    dims: Vec<usize>,
    aug_offsets: Vec<usize>,
    total: usize,
}

impl Layout {
    fn of(net: &MultiplexNetwork) -> Self {
        let order = net.order();
        let dims: Vec<usize> = (0..net.num_agents()).map(|i| net.state_dim(i)).collect();
        let mut aug_offsets = Vec::with_capacity(dims.len());
        let mut acc = 0;
        for &n in &dims {
            aug_offsets.push(acc);
            acc += (order + 1) * n;
        }
        Self { order, dims, aug_offsets, total: acc }
    }

    fn x_range(&self, i: usize) -> std::ops::Range<usize> {
        let off = self.aug_offsets[i];
        off..off + self.dims[i]
    }

    fn r_range(&self, i: usize) -> std::ops::Range<usize> {
        let off = self.aug_offsets[i] + self.dims[i];
        off..off + self.order * self.dims[i]
    }

    fn aug_range(&self, i: usize) -> std::ops::Range<usize> {
        let off = self.aug_offsets[i];
        off..off + (self.order + 1) * self.dims[i]
    }
}

// ---------------------------------------------------------------------------
// History buffer with cubic Hermite dense output
// ---------------------------------------------------------------------------

struct HistoryBuffer<'a> {
    t0: f64,
    h: f64,
    layout: &'a Layout,
    states: Vec<Vec<f64>>,
    derivs: Vec<Vec<f64>>,
    initial: &'a dyn Fn(usize, f64) -> Vec<f64>,
}

impl<'a> HistoryBuffer<'a> {
    fn new(
        t0: f64,
        h: f64,
        layout: &'a Layout,
        initial: &'a dyn Fn(usize, f64) -> Vec<f64>,
    ) -> Self {
        Self { t0, h, layout, states: Vec::new(), derivs: Vec::new(), initial }
    }

    fn push(&mut self, state: Vec<f64>, deriv: Vec<f64>) {
        self.states.push(state);
        self.derivs.push(deriv);
    }

    /// Augmented state of agent `j` at time `t` under the dense-output rules.
    fn sample_aug(&self, j: usize, t: f64) -> Vec<f64> {
        if t <= self.t0 {
            return (self.initial)(j, t);
        }
        let range = self.layout.aug_range(j);
        let n = self.states.len();
        if n == 1 {
            // No completed segment yet: linear extrapolation from the start
            // point (only reachable in the very first step when a delay is
            // smaller than the step).
            let y0 = &self.states[0][range.clone()];
            let d0 = &self.derivs[0][range];
            return y0
                .iter()
                .zip(d0)
                .map(|(y, d)| y + (t - self.t0) * d)
                .collect();
        }
        let mut k = ((t - self.t0) / self.h).floor() as usize;
        if k > n - 2 {
            k = n - 2; // extrapolate the last completed interpolant
        }
        let tk = self.t0 + k as f64 * self.h;
        let th = (t - tk) / self.h;
        let (h00, h10, h01, h11) = hermite_basis(th);
        let y0 = &self.states[k][range.clone()];
        let d0 = &self.derivs[k][range.clone()];
        let y1 = &self.states[k + 1][range.clone()];
        let d1 = &self.derivs[k + 1][range];
        (0..y0.len())
            .map(|idx| {
                h00 * y0[idx]
                    + h10 * self.h * d0[idx]
                    + h01 * y1[idx]
                    + h11 * self.h * d1[idx]
            })
            .collect()
    }

    /// Plant-state part of agent `j` at time `t`.
    fn sample_x(&self, j: usize, t: f64) -> Vec<f64> {
        let mut aug = self.sample_aug(j, t);
        aug.truncate(self.layout.dims[j]);
        aug
    }
}

fn hermite_basis(th: f64) -> (f64, f64, f64, f64) {
    let t2 = th * th;
    let t3 = t2 * th;
    (
        2.0 * t3 - 3.0 * t2 + 1.0,
        t3 - 2.0 * t2 + th,
        -2.0 * t3 + 3.0 * t2,
        t3 - t2,
    )
}

// ---------------------------------------------------------------------------
// Stage environment
// ---------------------------------------------------------------------------

struct StageEnv<'a> {
    net: &'a MultiplexNetwork,
    layout: &'a Layout,
    t: f64,
    stacked: &'a [f64],
    history: &'a HistoryBuffer<'a>,
}

impl StateEnv for StageEnv<'_> {
    fn time(&self) -> f64 {
        self.t
    }

    fn current(&self, agent: usize) -> Vec<f64> {
        self.stacked[self.layout.x_range(agent)].to_vec()
    }

    fn delayed(&self, agent: usize, key: DelayKey) -> Vec<f64> {
        let tau = self
            .net
            .delays()
            .eval(key, self.t)
            .expect("delayed term keys are validated at network construction");
        debug_assert!(
            tau >= -1e-12 && tau <= self.net.delays().tau_max() + 1e-9,
            "delay {tau} for {key:?} outside [0, tau_max] at t = {}",
            self.t
        );
        self.history.sample_x(agent, self.t - tau)
    }

    fn leader_current(&self) -> Vec<f64> {
        self.net.leader().expect("leader terms imply a leader").value(self.t)
    }

    fn leader_delayed(&self, key: DelayKey) -> Vec<f64> {
        let tau = self
            .net
            .delays()
            .eval(key, self.t)
            .expect("delayed term keys are validated at network construction");
        self.net.leader().expect("leader terms imply a leader").value(self.t - tau)
    }
}

// ---------------------------------------------------------------------------
// Trace
// ---------------------------------------------------------------------------

/// Recorded closed-loop run on a uniform mesh. All series share the mesh
/// length; stacked vectors follow the agent-major layout (plant state, then
/// the m integrator blocks, per agent).
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub times: Vec<f64>,
    /// Integrator order m.
    pub order: usize,
    /// Plant dimensions n_i.
    pub dims: Vec<usize>,
    /// Output dimensions per agent.
    pub out_dims: Vec<usize>,
    /// Stacked augmented state per mesh point.
    pub states: Vec<Vec<f64>>,
    /// Stacked controller outputs per mesh point (sum of n_i entries):
    /// control-role layer-0 couplings plus the first integrator.
    pub controls: Vec<Vec<f64>>,
    /// Stacked outputs y_i per mesh point.
    pub outputs: Vec<Vec<f64>>,
    /// Composite output error max_i ||y_i - y*_i||_p / eta_i per mesh point.
    pub composite_error: Vec<f64>,
    /// Per mesh point: composite norms of the shifted integrator coordinates
    /// zeta_k = r_k + offset_k(t), one entry per layer k = 1..m.
    pub zeta_norms: Vec<Vec<f64>>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn aug_offset(&self, i: usize) -> usize {
        (0..i).map(|j| (self.order + 1) * self.dims[j]).sum()
    }

    /// Plant state of agent i at mesh index ti.
    pub fn agent_x(&self, ti: usize, i: usize) -> &[f64] {
        let off = self.aug_offset(i);
        &self.states[ti][off..off + self.dims[i]]
    }

    /// k-th integrator block (k = 1..m) of agent i at mesh index ti.
    pub fn agent_r(&self, ti: usize, i: usize, k: usize) -> &[f64] {
        assert!(k >= 1 && k <= self.order, "integrator index k = {k}");
        let off = self.aug_offset(i) + k * self.dims[i];
        &self.states[ti][off..off + self.dims[i]]
    }

    /// Controller output of agent i at mesh index ti.
    pub fn agent_u(&self, ti: usize, i: usize) -> &[f64] {
        let off: usize = self.dims[..i].iter().sum();
        &self.controls[ti][off..off + self.dims[i]]
    }
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

fn resolve_history<'a>(
    cfg: &'a SimConfig,
    layout: &Layout,
) -> Result<Box<dyn Fn(usize, f64) -> Vec<f64> + Send + Sync + 'a>, SimError> {
    match &cfg.history {
        InitialHistory::ConstantStacked(v) => {
            if v.len() != layout.total {
                return Err(SimError::BadConfig(format!(
                    "constant history has length {}, stacked dimension is {}",
                    v.len(),
                    layout.total
                )));
            }
            let v = v.clone();
            let layout = layout.clone();
            Ok(Box::new(move |j, _t| v[layout.aug_range(j)].to_vec()))
        }
        InitialHistory::GaussianStates { std } => {
            if !(std.is_finite() && *std >= 0.0) {
                return Err(SimError::BadConfig(format!(
                    "gaussian history std must be nonnegative, got {std}"
                )));
            }
            let total_x: usize = layout.dims.iter().sum();
            let draws = standard_normals(cfg.seed, total_x);
            let mut stacked = vec![0.0; layout.total];
            let mut pos = 0;
            for i in 0..layout.dims.len() {
                let range = layout.x_range(i);
                for idx in range {
                    stacked[idx] = std * draws[pos];
                    pos += 1;
                }
            }
            let layout = layout.clone();
            Ok(Box::new(move |j, _t| stacked[layout.aug_range(j)].to_vec()))
        }
        InitialHistory::Custom(f) => Ok(Box::new(move |j, t| f(j, t))),
    }
}

/// Integrate the closed loop over `[t0, t0 + horizon]` and record a trace at
/// every mesh point. The step count is the nearest integer to
/// `horizon / dt`, and the step is adjusted to divide the horizon exactly.
pub fn simulate(
    net: &MultiplexNetwork,
    cfg: &SimConfig,
    spec: &NormSpec,
) -> Result<Trace, SimError> {
    let layout = Layout::of(net);
    let nn = net.num_agents();
    if spec.eta().len() != nn {
        return Err(SimError::BadConfig(format!(
            "{} norm weights for {} agents",
            spec.eta().len(),
            nn
        )));
    }
    if !(cfg.horizon.is_finite() && cfg.horizon > 0.0) {
        return Err(SimError::BadConfig(format!("horizon must be positive, got {}", cfg.horizon)));
    }
    if !(cfg.dt.is_finite() && cfg.dt > 0.0) {
        return Err(SimError::BadConfig(format!("dt must be positive, got {}", cfg.dt)));
    }
    if !cfg.t0.is_finite() {
        return Err(SimError::BadConfig(format!("t0 must be finite, got {}", cfg.t0)));
    }
    let steps = (cfg.horizon / cfg.dt).round().max(1.0) as usize;
    let h = cfg.horizon / steps as f64;

    // Delay-schedule checks on the run window: range validity on a sample
    // grid, then the step-size guard against the sampled 1st percentile with
    // the tau_max-scale fallback for schedules that touch zero.
    let tau_max = net.delays().tau_max();
    if net.delays().num_delays() > 0 && tau_max > 0.0 {
        let t1 = cfg.t0 + cfg.horizon;
        net.delays()
            .validate_sampled(cfg.t0, t1, 1001)
            .map_err(|e| SimError::Schedule(e.to_string()))?;
        let mut samples = Vec::new();
        for key in net.delays().relabeled() {
            for s in 0..1001usize {
                let t = cfg.t0 + cfg.horizon * s as f64 / 1000.0;
                samples.push(net.delays().eval(key, t).expect("validated key"));
            }
        }
        samples.sort_by(|a, b| a.partial_cmp(b).expect("finite delays"));
        let p1 = samples[samples.len() / 100];
        let limit = p1.max(tau_max / 10.0) / 10.0;
        if h > limit * (1.0 + 1e-12) {
            return Err(SimError::StepTooLarge { dt: h, limit });
        }
    }

    let initial = resolve_history(cfg, &layout)?;
    let mut buffer = HistoryBuffer::new(cfg.t0, h, &layout, initial.as_ref());

    // Assemble the starting state from the history at t0.
    let mut y0 = vec![0.0; layout.total];
    for i in 0..nn {
        let aug = initial(i, cfg.t0);
        if aug.len() != (layout.order + 1) * layout.dims[i] {
            return Err(SimError::BadConfig(format!(
                "history for agent {i} has length {}, expected {}",
                aug.len(),
                (layout.order + 1) * layout.dims[i]
            )));
        }
        y0[layout.aug_range(i)].copy_from_slice(&aug);
    }

    // Right-hand side of the stacked augmented system; also returns the
    // stacked controller outputs for trace recording.
    let rhs = |t: f64,
               y: &[f64],
               buffer: &HistoryBuffer|
     -> Result<(Vec<f64>, Vec<f64>), SimError> {
        let env = StageEnv { net, layout: &layout, t, stacked: y, history: buffer };
        let mut dy = vec![0.0; layout.total];
        let mut u_all = Vec::with_capacity(layout.dims.iter().sum());
        for i in 0..nn {
            let n = layout.dims[i];
            let x_i = &y[layout.x_range(i)];
            let r_i = &y[layout.r_range(i)];
            let input = control_input(net, i, r_i, &env)?;
            let f = net.agent(i).intrinsic.value(x_i, t);
            let d = net.disturbance().value(i, n, t);
            let xr = layout.x_range(i);
            for idx in 0..n {
                dy[xr.start + idx] = f[idx] + input.u_total[idx] + d[idx];
            }
            let rr = layout.r_range(i);
            dy[rr].copy_from_slice(&input.r_dot);
            u_all.extend_from_slice(&input.u_control);
        }
        Ok((dy, u_all))
    };

    let out_dims: Vec<usize> = (0..nn)
        .map(|i| net.agent(i).output.out_dim(layout.dims[i]))
        .collect();
    let mut trace = Trace {
        times: Vec::with_capacity(steps + 1),
        order: layout.order,
        dims: layout.dims.clone(),
        out_dims,
        states: Vec::with_capacity(steps + 1),
        controls: Vec::with_capacity(steps + 1),
        outputs: Vec::with_capacity(steps + 1),
        composite_error: Vec::with_capacity(steps + 1),
        zeta_norms: Vec::with_capacity(steps + 1),
    };

    let record = |trace: &mut Trace, t: f64, y: &[f64], u: Vec<f64>| {
        let mut outputs = Vec::new();
        let mut err: f64 = 0.0;
        for i in 0..nn {
            let x_i = &y[layout.x_range(i)];
            let y_i = net.agent(i).output.value(x_i);
            let star = net.agent(i).output.value(&net.desired_state(i, t));
            let diff: Vec<f64> = y_i.iter().zip(&star).map(|(a, b)| a - b).collect();
            err = err.max(spec.local_p().vector_norm(&diff) / spec.eta()[i]);
            outputs.extend(y_i);
        }
        let mut zrow = Vec::with_capacity(layout.order);
        for k in 1..=layout.order {
            let mut zn: f64 = 0.0;
            for i in 0..nn {
                let n = layout.dims[i];
                let off = layout.aug_offsets[i] + k * n;
                let offset = zeta_offset(layout.order, k, &net.disturbance().poly[i], t)
                    .expect("validated disturbance shape");
                let zeta: Vec<f64> =
                    (0..n).map(|idx| y[off + idx] + offset[idx]).collect();
                zn = zn.max(spec.local_p().vector_norm(&zeta) / spec.eta()[i]);
            }
            zrow.push(zn);
        }
        trace.times.push(t);
        trace.states.push(y.to_vec());
        trace.controls.push(u);
        trace.outputs.push(outputs);
        trace.composite_error.push(err);
        trace.zeta_norms.push(zrow);
    };

    // Start point: derivative and controls at t0 only query history at or
    // before t0, which the buffer serves from the initial history.
    buffer.push(y0.clone(), vec![0.0; layout.total]);
    let (d0, u0) = rhs(cfg.t0, &y0, &buffer)?;
    buffer.derivs[0] = d0;
    record(&mut trace, cfg.t0, &y0, u0);

    let mut y = y0;
    for k in 0..steps {
        let t = cfg.t0 + k as f64 * h;
        let k1 = buffer.derivs[k].clone();
        let stage = |base: &[f64], scale: f64, dir: &[f64]| -> Vec<f64> {
            base.iter().zip(dir).map(|(y, d)| y + scale * d).collect()
        };
        let y2 = stage(&y, 0.5 * h, &k1);
        let (k2, _) = rhs(t + 0.5 * h, &y2, &buffer)?;
        let y3 = stage(&y, 0.5 * h, &k2);
        let (k3, _) = rhs(t + 0.5 * h, &y3, &buffer)?;
        let y4 = stage(&y, h, &k3);
        let (k4, _) = rhs(t + h, &y4, &buffer)?;
        let mut next = y.clone();
        for idx in 0..layout.total {
            next[idx] += h / 6.0 * (k1[idx] + 2.0 * k2[idx] + 2.0 * k3[idx] + k4[idx]);
        }
        let t_next = cfg.t0 + (k + 1) as f64 * h;
        buffer.push(next.clone(), vec![0.0; layout.total]);
        let (d_next, u_next) = rhs(t_next, &next, &buffer)?;
        buffer.derivs[k + 1] = d_next;
        record(&mut trace, t_next, &next, u_next);
        y = next;
    }
    Ok(trace)
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Summary statistics over a trace, recomputed from the raw state series
/// (independently of the series cached in the trace) under the given norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub tail_start: f64,
    pub threshold: f64,
    /// Sup of the composite output error over the tail window.
    pub tail_sup_error: f64,
    /// Composite output error at the final mesh point.
    pub final_error: f64,
    /// Earliest mesh time after which the error stays at or below the
    /// threshold through the end of the trace.
    pub time_to_threshold: Option<f64>,
    /// Sup over the tail window of each shifted-integrator composite norm.
    pub tail_sup_zeta: Vec<f64>,
}

/// Composite norm of the full augmented error at one mesh index: per agent,
/// the plant deviation from the desired state stacked with the shifted
/// integrator coordinates zeta_k, under the given norm. This is the quantity
/// the contraction certificate decays, so it supplies envelope initial
/// conditions (and restart values) for dominance checks.
pub fn composite_augmented_error(
    trace: &Trace,
    net: &MultiplexNetwork,
    spec: &NormSpec,
    ti: usize,
) -> Result<f64, SimError> {
    if ti >= trace.len() {
        return Err(SimError::BadConfig(format!(
            "mesh index {ti} out of range for trace of length {}",
            trace.len()
        )));
    }
    let t = trace.times[ti];
    let m = trace.order;
    let mut out: f64 = 0.0;
    for i in 0..net.num_agents() {
        let star = net.desired_state(i, t);
        let mut block: Vec<f64> = trace
            .agent_x(ti, i)
            .iter()
            .zip(&star)
            .map(|(a, b)| a - b)
            .collect();
        for k in 1..=m {
            let offset = zeta_offset(m, k, &net.disturbance().poly[i], t)?;
            block.extend(trace.agent_r(ti, i, k).iter().zip(&offset).map(|(a, b)| a + b));
        }
        out = out.max(spec.local_p().vector_norm(&block) / spec.eta()[i]);
    }
    Ok(out)
}

/// Compute error metrics for a trace against the network it came from:
/// composite output error per mesh point, its sup over `[tail_start, end]`,
/// the threshold-crossing time, and the shifted-integrator residuals.
pub fn error_metrics(
    trace: &Trace,
    net: &MultiplexNetwork,
    spec: &NormSpec,
    tail_start: f64,
    threshold: f64,
) -> Result<ErrorMetrics, SimError> {
    if trace.is_empty() {
        return Err(SimError::BadConfig("empty trace".to_string()));
    }
    let nn = net.num_agents();
    if spec.eta().len() != nn {
        return Err(SimError::BadConfig(format!(
            "{} norm weights for {} agents",
            spec.eta().len(),
            nn
        )));
    }
    let m = trace.order;
    let mut errors = Vec::with_capacity(trace.len());
    let mut zeta_sup = vec![0.0_f64; m];
    let mut tail_sup: f64 = 0.0;
    for ti in 0..trace.len() {
        let t = trace.times[ti];
        let mut err: f64 = 0.0;
        for i in 0..nn {
            let y_i = net.agent(i).output.value(trace.agent_x(ti, i));
            let star = net.agent(i).output.value(&net.desired_state(i, t));
            let diff: Vec<f64> = y_i.iter().zip(&star).map(|(a, b)| a - b).collect();
            err = err.max(spec.local_p().vector_norm(&diff) / spec.eta()[i]);
        }
        errors.push(err);
        if t >= tail_start {
            tail_sup = tail_sup.max(err);
            for k in 1..=m {
                let mut zn: f64 = 0.0;
                for i in 0..nn {
                    let offset = zeta_offset(m, k, &net.disturbance().poly[i], t)?;
                    let r = trace.agent_r(ti, i, k);
                    let zeta: Vec<f64> =
                        r.iter().zip(&offset).map(|(a, b)| a + b).collect();
                    zn = zn.max(spec.local_p().vector_norm(&zeta) / spec.eta()[i]);
                }
                zeta_sup[k - 1] = zeta_sup[k - 1].max(zn);
            }
        }
    }
    // Earliest suffix start staying at or below the threshold.
    let mut time_to_threshold = None;
    for ti in (0..trace.len()).rev() {
        if errors[ti] <= threshold {
            time_to_threshold = Some(trace.times[ti]);
        } else {
            break;
        }
    }
    Ok(ErrorMetrics {
        tail_start,
        threshold,
        tail_sup_error: tail_sup,
        final_error: *errors.last().expect("nonempty"),
        time_to_threshold,
        tail_sup_zeta: zeta_sup,
    })
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
