//! Network model: agents with intrinsic dynamics, multiplex coupling layers
//! (one delay-free and one delayed family of couplings per layer), per-edge
//! delay schedules, polynomial-plus-residual disturbances, and the cascaded
//! integrator controller that rejects polynomial disturbance profiles.
//!
//! A network of order `m` carries `m + 1` coupling layers. Layer 0 feeds the
//! plant input directly; layer `k >= 1` feeds the k-th integrator:
//!
//! ```text
//! x_i'   = f_i(x_i, t) + H_{i,0} + r_{i,1} + d_i(t)
//! r_ik'  = H_{i,k} + r_{i,k+1}        (k = 1..m, with r_{i,m+1} = 0)
//! ```
//!
//! where `H_{i,k}` sums layer k's delay-free and delayed coupling terms at
//! agent i. The disturbance `d_i` is a degree-(m-1) vector polynomial plus a
//! bounded residual; the integrator stack absorbs the polynomial part, and
//! shifted coordinates `zeta_{i,k} = r_{i,k} + offset_{i,k}(t)` turn the
//! closed loop into an autonomous error system whose block Jacobians this
//! module assembles.

use crate::linalg::DenseMatrix;
use std::collections::BTreeMap;
use std::fmt;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Errors raised while building or evaluating a network model.
#[derive(Debug)]
pub enum NetModelError {
    /// A dimension disagrees with the declared agent state sizes.
    DimensionMismatch(String),
    /// A coupling term references an agent index outside the network.
    UnknownAgent(usize),
    /// A delayed coupling has no delay schedule entry for its edge.
    MissingDelay(DelayKey),
    /// A delay function leaves the interval [0, tau_max].
    InvalidDelay(String),
    /// Disturbance shape does not match the layer count or agent dimensions.
    BadDisturbance(String),
    /// The network declares leader couplings but no leader signal (or the
    /// leader signal has the wrong dimension).
    BadLeader(String),
    /// Layer count must be order + 1 >= 1.
    NoLayers,
    /// Offset index outside 1..=m.
    BadOffsetIndex { k: usize, m: usize },
}

impl fmt::Display for NetModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetModelError::DimensionMismatch(msg) => write!(f, "dimension mismatch: {msg}"),
            NetModelError::UnknownAgent(i) => write!(f, "agent index {i} out of range"),
            NetModelError::MissingDelay(key) => {
                write!(f, "no delay schedule entry for {key:?}")
            }
            NetModelError::InvalidDelay(msg) => write!(f, "invalid delay: {msg}"),
            NetModelError::BadDisturbance(msg) => write!(f, "bad disturbance: {msg}"),
            NetModelError::BadLeader(msg) => write!(f, "bad leader: {msg}"),
            NetModelError::NoLayers => write!(f, "a network needs at least one coupling layer"),
            NetModelError::BadOffsetIndex { k, m } => {
                write!(f, "offset index k = {k} outside 1..={m}")
            }
        }
    }
}

impl std::error::Error for NetModelError {}

// ---------------------------------------------------------------------------
// Term maps (value + Jacobian pairs)
// ---------------------------------------------------------------------------

/// Map of a single state vector to a value vector, with its Jacobian.
pub enum TermMap {
    /// Linear, time-invariant: value `A x`, Jacobian `A`.
    Linear(DenseMatrix),
    /// General differentiable map with a hand-supplied Jacobian.
    Custom {
        value: Box<dyn Fn(&[f64], f64) -> Vec<f64> + Send + Sync>,
        jacobian: Box<dyn Fn(&[f64], f64) -> DenseMatrix + Send + Sync>,
    },
}

impl TermMap {
    pub fn value(&self, x: &[f64], t: f64) -> Vec<f64> {
        match self {
            TermMap::Linear(a) => a.matvec(x).expect("validated linear term shape"),
            TermMap::Custom { value, .. } => value(x, t),
        }
    }

    pub fn jacobian(&self, x: &[f64], t: f64) -> DenseMatrix {
        match self {
            TermMap::Linear(a) => a.clone(),
            TermMap::Custom { jacobian, .. } => jacobian(x, t),
        }
    }
}

impl fmt::Debug for TermMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TermMap::Linear(a) => write!(f, "TermMap::Linear({}x{})", a.rows(), a.cols()),
            TermMap::Custom { .. } => write!(f, "TermMap::Custom"),
        }
    }
}

/// Map of an ordered state pair (receiver, sender) to a value vector, with
/// Jacobians with respect to each argument.
pub enum PairMap {
    /// Linear: value `G_to x_to + G_from x_from`.
    Linear { gain_to: DenseMatrix, gain_from: DenseMatrix },
    /// General differentiable pair map.
    Custom {
        value: Box<dyn Fn(&[f64], &[f64], f64) -> Vec<f64> + Send + Sync>,
        jac_to: Box<dyn Fn(&[f64], &[f64], f64) -> DenseMatrix + Send + Sync>,
        jac_from: Box<dyn Fn(&[f64], &[f64], f64) -> DenseMatrix + Send + Sync>,
    },
}

impl PairMap {
    /// Diffusive coupling `G (x_from - x_to)`: vanishes whenever the pair agrees.
    pub fn diffusive(gain: DenseMatrix) -> Self {
        PairMap::Linear { gain_to: gain.scale(-1.0), gain_from: gain }
    }

    pub fn value(&self, x_to: &[f64], x_from: &[f64], t: f64) -> Vec<f64> {
        match self {
            PairMap::Linear { gain_to, gain_from } => {
                let mut v = gain_to.matvec(x_to).expect("validated pair term shape");
                let w = gain_from.matvec(x_from).expect("validated pair term shape");
                for (a, b) in v.iter_mut().zip(w) {
                    *a += b;
                }
                v
            }
            PairMap::Custom { value, .. } => value(x_to, x_from, t),
        }
    }

    pub fn jac_to(&self, x_to: &[f64], x_from: &[f64], t: f64) -> DenseMatrix {
        match self {
            PairMap::Linear { gain_to, .. } => gain_to.clone(),
            PairMap::Custom { jac_to, .. } => jac_to(x_to, x_from, t),
        }
    }

    pub fn jac_from(&self, x_to: &[f64], x_from: &[f64], t: f64) -> DenseMatrix {
        match self {
            PairMap::Linear { gain_from, .. } => gain_from.clone(),
            PairMap::Custom { jac_from, .. } => jac_from(x_to, x_from, t),
        }
    }
}

impl fmt::Debug for PairMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PairMap::Linear { .. } => write!(f, "PairMap::Linear"),
            PairMap::Custom { .. } => write!(f, "PairMap::Custom"),
        }
    }
}

/// Who owns a coupling term. Plant terms are part of the open-loop physics;
/// control terms are injected by the controller. Both enter the dynamics and
/// the certificates identically; the role only affects which terms are
/// reported as the controller output `u_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermRole {
    Plant,
    Control,
}

/// Coupling contribution to one agent depending on that agent's own state.
#[derive(Debug)]
pub struct SelfTerm {
    pub agent: usize,
    pub map: TermMap,
    pub role: TermRole,
}

/// Coupling contribution to agent `to` depending on the pair
/// (x_to, x_from). In the delayed family both arguments are evaluated at
/// `t - tau(t)` for the edge's scheduled delay.
#[derive(Debug)]
pub struct PairTerm {
    pub to: usize,
    pub from: usize,
    pub map: PairMap,
    pub role: TermRole,
}

/// Coupling contribution to agent `to` depending on (x_to, leader signal).
/// The leader is exogenous, so only the Jacobian with respect to `x_to`
/// enters the error dynamics.
#[derive(Debug)]
pub struct LeaderTerm {
    pub to: usize,
    pub map: PairMap,
    pub role: TermRole,
}

/// One coupling layer: families of delay-free and delayed terms.
#[derive(Debug, Default)]
pub struct CouplingLayer {
    pub self_terms: Vec<SelfTerm>,
    pub pair_terms: Vec<PairTerm>,
    pub delayed_pair_terms: Vec<PairTerm>,
    pub leader_terms: Vec<LeaderTerm>,
    pub delayed_leader_terms: Vec<LeaderTerm>,
}

impl CouplingLayer {
    pub fn empty() -> Self {
        Self::default()
    }
}

// ---------------------------------------------------------------------------
// Output maps
// ---------------------------------------------------------------------------

/// Per-agent output map `y_i = g_i(x_i)` with a declared Lipschitz constant.
pub enum OutputMap {
    /// `y = x`, Lipschitz constant 1.
    Identity,
    Custom {
        dim: usize,
        map: Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
        lipschitz: f64,
    },
}

impl OutputMap {
    pub fn value(&self, x: &[f64]) -> Vec<f64> {
        match self {
            OutputMap::Identity => x.to_vec(),
            OutputMap::Custom { map, .. } => map(x),
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            OutputMap::Identity => 1.0,
            OutputMap::Custom { lipschitz, .. } => *lipschitz,
        }
    }

    pub fn out_dim(&self, state_dim: usize) -> usize {
        match self {
            OutputMap::Identity => state_dim,
            OutputMap::Custom { dim, .. } => *dim,
        }
    }
}

impl fmt::Debug for OutputMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutputMap::Identity => write!(f, "OutputMap::Identity"),
            OutputMap::Custom { dim, lipschitz, .. } => {
                write!(f, "OutputMap::Custom(dim {dim}, Lipschitz {lipschitz})")
            }
        }
    }
}

/// One agent: state dimension, intrinsic drift with Jacobian, output map.
#[derive(Debug)]
pub struct AgentDynamics {
    pub state_dim: usize,
    pub intrinsic: TermMap,
    pub output: OutputMap,
}

impl AgentDynamics {
    pub fn new(state_dim: usize, intrinsic: TermMap) -> Self {
        Self { state_dim, intrinsic, output: OutputMap::Identity }
    }

    pub fn with_output(mut self, output: OutputMap) -> Self {
        self.output = output;
        self
    }

    /// Linear time-invariant agent `x' = A x`.
    pub fn linear(a: DenseMatrix) -> Self {
        let n = a.rows();
        Self::new(n, TermMap::Linear(a))
    }
}

// ---------------------------------------------------------------------------
// Disturbances
// ---------------------------------------------------------------------------

/// Residual (non-polynomial) disturbance component with computable sup bounds.
pub enum Residual {
    None,
    /// `amplitude * exp(-decay t) * sin(frequency t + phase)`, componentwise.
    DecayingSine { amplitude: Vec<f64>, decay: f64, frequency: f64, phase: f64 },
    /// Arbitrary signal with declared per-component absolute bounds.
    Custom {
        map: Box<dyn Fn(f64) -> Vec<f64> + Send + Sync>,
        component_bounds: Vec<f64>,
    },
}

impl Residual {
    pub fn value(&self, dim: usize, t: f64) -> Vec<f64> {
        match self {
            Residual::None => vec![0.0; dim],
            Residual::DecayingSine { amplitude, decay, frequency, phase } => {
                let s = (-decay * t).exp() * (frequency * t + phase).sin();
                amplitude.iter().map(|a| a * s).collect()
            }
            Residual::Custom { map, .. } => map(t),
        }
    }

    /// Per-component bounds on |w_j(t)| valid for all `t >= from_t >= 0`.
    pub fn component_bounds(&self, dim: usize, from_t: f64) -> Vec<f64> {
        match self {
            Residual::None => vec![0.0; dim],
            Residual::DecayingSine { amplitude, decay, .. } => {
                let env = (-decay * from_t.max(0.0)).exp();
                amplitude.iter().map(|a| a.abs() * env).collect()
            }
            Residual::Custom { component_bounds, .. } => component_bounds.clone(),
        }
    }

    fn dim(&self) -> Option<usize> {
        match self {
            Residual::None => None,
            Residual::DecayingSine { amplitude, .. } => Some(amplitude.len()),
            Residual::Custom { component_bounds, .. } => Some(component_bounds.len()),
        }
    }
}

impl fmt::Debug for Residual {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Residual::None => write!(f, "Residual::None"),
            Residual::DecayingSine { decay, frequency, .. } => {
                write!(f, "Residual::DecayingSine(decay {decay}, frequency {frequency})")
            }
            Residual::Custom { .. } => write!(f, "Residual::Custom"),
        }
    }
}

/// Disturbance `d_i(t) = sum_k dbar_{i,k} t^k + w_i(t)`: one degree-(m-1)
/// vector polynomial and one residual per agent. The polynomial part is what
/// the m-stage integrator stack rejects; the residual is what remains in the
/// steady-state error bound.
#[derive(Debug)]
pub struct DisturbanceModel {
    /// `poly[i][k]` is the k-th coefficient vector of agent i (length n_i),
    /// k = 0..m-1. Every agent carries exactly m coefficient vectors.
    pub poly: Vec<Vec<Vec<f64>>>,
    /// One residual per agent.
    pub residual: Vec<Residual>,
}

impl DisturbanceModel {
    /// No disturbance at all: order-m zero polynomials for the given dims.
    pub fn zero(dims: &[usize], order: usize) -> Self {
        let poly = dims
            .iter()
            .map(|&n| (0..order).map(|_| vec![0.0; n]).collect())
            .collect();
        let residual = dims.iter().map(|_| Residual::None).collect();
        Self { poly, residual }
    }

    pub fn value(&self, i: usize, dim: usize, t: f64) -> Vec<f64> {
        let mut d = vec![0.0; dim];
        // Horner evaluation, highest coefficient first.
        for coeff in self.poly[i].iter().rev() {
            for (acc, &c) in d.iter_mut().zip(coeff) {
                *acc = *acc * t + c;
            }
        }
        let w = self.residual[i].value(dim, t);
        for (acc, wv) in d.iter_mut().zip(w) {
            *acc += wv;
        }
        d
    }

    /// p-norm bound on the residual of agent i over `t >= from_t`.
    pub fn residual_sup(&self, i: usize, dim: usize, p: crate::linalg::PNorm, from_t: f64) -> f64 {
        p.vector_norm(&self.residual[i].component_bounds(dim, from_t))
    }
}

// ---------------------------------------------------------------------------
// Delay schedules
// ---------------------------------------------------------------------------

/// Identifies one scheduled delay: a directed coupling edge or a
/// leader-to-agent link. The `Ord` derive fixes the relabeling order used to
/// enumerate delayed Jacobian groups deterministically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DelayKey {
    Edge { to: usize, from: usize },
    Leader { to: usize },
}

/// One delay trajectory `tau(t)`.
pub enum DelayFn {
    Constant(f64),
    /// `base + amplitude * sin(t + phase)`.
    Sinusoidal { base: f64, amplitude: f64, phase: f64 },
    Custom(Box<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl DelayFn {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            DelayFn::Constant(c) => *c,
            DelayFn::Sinusoidal { base, amplitude, phase } => base + amplitude * (t + phase).sin(),
            DelayFn::Custom(f) => f(t),
        }
    }

    /// Analytic range when available: (min, max) over all t.
    fn analytic_range(&self) -> Option<(f64, f64)> {
        match self {
            DelayFn::Constant(c) => Some((*c, *c)),
            DelayFn::Sinusoidal { base, amplitude, .. } => {
                Some((base - amplitude.abs(), base + amplitude.abs()))
            }
            DelayFn::Custom(_) => None,
        }
    }
}

impl fmt::Debug for DelayFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DelayFn::Constant(c) => write!(f, "DelayFn::Constant({c})"),
            DelayFn::Sinusoidal { base, amplitude, phase } => {
                write!(f, "DelayFn::Sinusoidal({base} + {amplitude} sin(t + {phase}))")
            }
            DelayFn::Custom(_) => write!(f, "DelayFn::Custom"),
        }
    }
}

/// Per-edge delay schedule with a uniform upper bound `tau_max`. Analytic
/// delay kinds are range-checked at insertion; custom delays are checked on
/// a sample grid by `validate_sampled`.
#[derive(Debug)]
pub struct DelaySchedule {
    tau_max: f64,
    entries: BTreeMap<DelayKey, DelayFn>,
}

impl DelaySchedule {
    pub fn new(tau_max: f64) -> Result<Self, NetModelError> {
        if !(tau_max.is_finite() && tau_max >= 0.0) {
            return Err(NetModelError::InvalidDelay(format!(
                "tau_max must be nonnegative and finite, got {tau_max}"
            )));
        }
        Ok(Self { tau_max, entries: BTreeMap::new() })
    }

    pub fn tau_max(&self) -> f64 {
        self.tau_max
    }

    pub fn insert(&mut self, key: DelayKey, delay: DelayFn) -> Result<(), NetModelError> {
        if let Some((lo, hi)) = delay.analytic_range() {
            if lo < 0.0 || hi > self.tau_max + 1e-12 {
                return Err(NetModelError::InvalidDelay(format!(
                    "{key:?} ranges over [{lo}, {hi}] outside [0, {}]",
                    self.tau_max
                )));
            }
        }
        self.entries.insert(key, delay);
        Ok(())
    }

    pub fn get(&self, key: DelayKey) -> Option<&DelayFn> {
        self.entries.get(&key)
    }

    pub fn eval(&self, key: DelayKey, t: f64) -> Result<f64, NetModelError> {
        Ok(self
            .entries
            .get(&key)
            .ok_or(NetModelError::MissingDelay(key))?
            .eval(t))
    }

    /// Relabeled enumeration of all scheduled delays, in deterministic key
    /// order. Its length is the delay count `q`.
    pub fn relabeled(&self) -> Vec<DelayKey> {
        self.entries.keys().copied().collect()
    }

    pub fn num_delays(&self) -> usize {
        self.entries.len()
    }

    /// Check every entry (including custom ones) stays in [0, tau_max] on a
    /// uniform sample grid over [t0, t1].
    pub fn validate_sampled(&self, t0: f64, t1: f64, samples: usize) -> Result<(), NetModelError> {
        let steps = samples.max(2);
        for (key, delay) in &self.entries {
            for s in 0..steps {
                let t = t0 + (t1 - t0) * s as f64 / (steps - 1) as f64;
                let tau = delay.eval(t);
                if !(tau.is_finite() && tau >= 0.0 && tau <= self.tau_max + 1e-12) {
                    return Err(NetModelError::InvalidDelay(format!(
                        "{key:?} evaluates to {tau} at t = {t}, outside [0, {}]",
                        self.tau_max
                    )));
                }
            }
        }
        Ok(())
    }

    /// Smallest sampled delay over [t0, t1]; used to guard integration steps.
    pub fn min_sampled(&self, t0: f64, t1: f64, samples: usize) -> f64 {
        let steps = samples.max(2);
        let mut lo = f64::INFINITY;
        for delay in self.entries.values() {
            for s in 0..steps {
                let t = t0 + (t1 - t0) * s as f64 / (steps - 1) as f64;
                lo = lo.min(delay.eval(t));
            }
        }
        if lo.is_finite() {
            lo
        } else {
            self.tau_max
        }
    }
}

// ---------------------------------------------------------------------------
// Leader and desired solution
// ---------------------------------------------------------------------------

/// Exogenous leader signal shared by all leader couplings.
pub enum LeaderSignal {
    Constant(Vec<f64>),
    Custom { dim: usize, map: Box<dyn Fn(f64) -> Vec<f64> + Send + Sync> },
}

impl LeaderSignal {
    pub fn value(&self, t: f64) -> Vec<f64> {
        match self {
            LeaderSignal::Constant(v) => v.clone(),
            LeaderSignal::Custom { map, .. } => map(t),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            LeaderSignal::Constant(v) => v.len(),
            LeaderSignal::Custom { dim, .. } => *dim,
        }
    }
}

impl fmt::Debug for LeaderSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LeaderSignal::Constant(v) => write!(f, "LeaderSignal::Constant(dim {})", v.len()),
            LeaderSignal::Custom { dim, .. } => write!(f, "LeaderSignal::Custom(dim {dim})"),
        }
    }
}

/// The solution the couplings are designed to vanish on.
pub enum DesiredSolution {
    /// `x*_i(t) = 0` for every agent (deviation coordinates).
    Zero,
    /// Arbitrary per-agent trajectory.
    Custom(Box<dyn Fn(usize, f64) -> Vec<f64> + Send + Sync>),
}

impl DesiredSolution {
    pub fn state(&self, agent: usize, dim: usize, t: f64) -> Vec<f64> {
        match self {
            DesiredSolution::Zero => vec![0.0; dim],
            DesiredSolution::Custom(f) => f(agent, t),
        }
    }
}

impl fmt::Debug for DesiredSolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DesiredSolution::Zero => write!(f, "DesiredSolution::Zero"),
            DesiredSolution::Custom(_) => write!(f, "DesiredSolution::Custom"),
        }
    }
}

// ---------------------------------------------------------------------------
// The network
// ---------------------------------------------------------------------------

/// A multiplex network: agents, `m + 1` coupling layers, delay schedule,
/// disturbance model, optional leader, and the desired solution.
#[derive(Debug)]
pub struct MultiplexNetwork {
    agents: Vec<AgentDynamics>,
    layers: Vec<CouplingLayer>,
    delays: DelaySchedule,
    disturbance: DisturbanceModel,
    leader: Option<LeaderSignal>,
    desired: DesiredSolution,
}

impl MultiplexNetwork {
    pub fn new(
        agents: Vec<AgentDynamics>,
        layers: Vec<CouplingLayer>,
        delays: DelaySchedule,
        disturbance: DisturbanceModel,
        leader: Option<LeaderSignal>,
        desired: DesiredSolution,
    ) -> Result<Self, NetModelError> {
        if agents.is_empty() {
            return Err(NetModelError::DimensionMismatch("no agents".to_string()));
        }
        if layers.is_empty() {
            return Err(NetModelError::NoLayers);
        }
        let net = Self { agents, layers, delays, disturbance, leader, desired };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<(), NetModelError> {
        let nn = self.agents.len();
        let m = self.order();
        // Intrinsic terms: linear shapes must match the state dimension.
        for (i, agent) in self.agents.iter().enumerate() {
            if let TermMap::Linear(a) = &agent.intrinsic {
                if a.rows() != agent.state_dim || a.cols() != agent.state_dim {
                    return Err(NetModelError::DimensionMismatch(format!(
                        "agent {i}: intrinsic gain is {}x{}, state dimension {}",
                        a.rows(),
                        a.cols(),
                        agent.state_dim
                    )));
                }
            }
        }
        // Coupling terms: valid agent indices, conformal linear gains, and a
        // scheduled delay for every delayed term.
        for (k, layer) in self.layers.iter().enumerate() {
            for term in &layer.self_terms {
                if term.agent >= nn {
                    return Err(NetModelError::UnknownAgent(term.agent));
                }
                if let TermMap::Linear(a) = &term.map {
                    let n = self.agents[term.agent].state_dim;
                    if a.rows() != n || a.cols() != n {
                        return Err(NetModelError::DimensionMismatch(format!(
                            "layer {k} self term on agent {}: gain {}x{} for dimension {n}",
                            term.agent,
                            a.rows(),
                            a.cols()
                        )));
                    }
                }
            }
            for (delayed, terms) in
                [(false, &layer.pair_terms), (true, &layer.delayed_pair_terms)]
            {
                for term in terms {
                    if term.to >= nn {
                        return Err(NetModelError::UnknownAgent(term.to));
                    }
                    if term.from >= nn {
                        return Err(NetModelError::UnknownAgent(term.from));
                    }
                    if let PairMap::Linear { gain_to, gain_from } = &term.map {
                        let (nt, nf) =
                            (self.agents[term.to].state_dim, self.agents[term.from].state_dim);
                        if gain_to.rows() != nt
                            || gain_to.cols() != nt
                            || gain_from.rows() != nt
                            || gain_from.cols() != nf
                        {
                            return Err(NetModelError::DimensionMismatch(format!(
                                "layer {k} pair term ({}, {}): gains do not conform",
                                term.to, term.from
                            )));
                        }
                    }
                    if delayed {
                        let key = DelayKey::Edge { to: term.to, from: term.from };
                        if self.delays.get(key).is_none() {
                            return Err(NetModelError::MissingDelay(key));
                        }
                    }
                }
            }
            for (delayed, terms) in
                [(false, &layer.leader_terms), (true, &layer.delayed_leader_terms)]
            {
                for term in terms {
                    if term.to >= nn {
                        return Err(NetModelError::UnknownAgent(term.to));
                    }
                    let leader = self.leader.as_ref().ok_or_else(|| {
                        NetModelError::BadLeader(
                            "leader coupling present but no leader signal".to_string(),
                        )
                    })?;
                    if let PairMap::Linear { gain_to, gain_from } = &term.map {
                        let nt = self.agents[term.to].state_dim;
                        if gain_to.rows() != nt
                            || gain_to.cols() != nt
                            || gain_from.rows() != nt
                            || gain_from.cols() != leader.dim()
                        {
                            return Err(NetModelError::DimensionMismatch(format!(
                                "layer {k} leader term on agent {}: gains do not conform",
                                term.to
                            )));
                        }
                    }
                    if delayed {
                        let key = DelayKey::Leader { to: term.to };
                        if self.delays.get(key).is_none() {
                            return Err(NetModelError::MissingDelay(key));
                        }
                    }
                }
            }
        }
        // Disturbance: m coefficient vectors per agent, each of the agent's
        // dimension; residual dimensions must match where declared.
        if self.disturbance.poly.len() != nn || self.disturbance.residual.len() != nn {
            return Err(NetModelError::BadDisturbance(format!(
                "disturbance covers {} agents, network has {nn}",
                self.disturbance.poly.len()
            )));
        }
        for (i, coeffs) in self.disturbance.poly.iter().enumerate() {
            if coeffs.len() != m {
                return Err(NetModelError::BadDisturbance(format!(
                    "agent {i}: {} polynomial coefficients for order {m}",
                    coeffs.len()
                )));
            }
            let n = self.agents[i].state_dim;
            if coeffs.iter().any(|c| c.len() != n) {
                return Err(NetModelError::BadDisturbance(format!(
                    "agent {i}: coefficient vector length differs from state dimension {n}"
                )));
            }
            if let Some(d) = self.disturbance.residual[i].dim() {
                if d != n {
                    return Err(NetModelError::BadDisturbance(format!(
                        "agent {i}: residual dimension {d} differs from state dimension {n}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    /// Integrator order m (the network carries m + 1 coupling layers).
    pub fn order(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn state_dim(&self, i: usize) -> usize {
        self.agents[i].state_dim
    }

    /// Augmented per-agent dimension (m + 1) n_i.
    pub fn aug_dim(&self, i: usize) -> usize {
        (self.order() + 1) * self.agents[i].state_dim
    }

    pub fn agent(&self, i: usize) -> &AgentDynamics {
        &self.agents[i]
    }

    pub fn layer(&self, k: usize) -> &CouplingLayer {
        &self.layers[k]
    }

    pub fn delays(&self) -> &DelaySchedule {
        &self.delays
    }

    pub fn disturbance(&self) -> &DisturbanceModel {
        &self.disturbance
    }

    pub fn leader(&self) -> Option<&LeaderSignal> {
        self.leader.as_ref()
    }

    pub fn desired_state(&self, i: usize, t: f64) -> Vec<f64> {
        self.desired.state(i, self.agents[i].state_dim, t)
    }

    /// Largest output Lipschitz constant across agents.
    pub fn max_output_lipschitz(&self) -> f64 {
        self.agents
            .iter()
            .map(|a| a.output.lipschitz())
            .fold(1.0, f64::max)
    }
}

// ---------------------------------------------------------------------------
// Evaluation environment
// ---------------------------------------------------------------------------

/// Supplies the state samples a coupling evaluation needs: each agent's
/// current state and, for every scheduled delay key, the agent's state at
/// `t - tau_key(t)`. Implemented by the simulator's history buffer and by
/// small ad-hoc structs in tests.
pub trait StateEnv {
    fn time(&self) -> f64;
    /// Agent j's state at the current time.
    fn current(&self, agent: usize) -> Vec<f64>;
    /// Agent j's state at `t - tau(t)` for the given scheduled delay.
    fn delayed(&self, agent: usize, key: DelayKey) -> Vec<f64>;
    /// Leader signal at the current time (only called on networks with a leader).
    fn leader_current(&self) -> Vec<f64> {
        unreachable!("leader value requested but the network has no leader")
    }
    /// Leader signal at `t - tau(t)` for the given scheduled delay.
    fn leader_delayed(&self, _key: DelayKey) -> Vec<f64> {
        unreachable!("delayed leader value requested but the network has no leader")
    }
}

/// Environment pinned to the desired solution: every sample (current,
/// delayed, any agent) is read off the desired trajectory. Used to check
/// that couplings vanish where they are supposed to.
struct DesiredEnv<'a> {
    net: &'a MultiplexNetwork,
    t: f64,
}

impl StateEnv for DesiredEnv<'_> {
    fn time(&self) -> f64 {
        self.t
    }

    fn current(&self, agent: usize) -> Vec<f64> {
        self.net.desired_state(agent, self.t)
    }

    fn delayed(&self, agent: usize, key: DelayKey) -> Vec<f64> {
        let tau = self.net.delays().eval(key, self.t).expect("validated delay key");
        self.net.desired_state(agent, self.t - tau)
    }

    fn leader_current(&self) -> Vec<f64> {
        self.net.leader().expect("validated leader").value(self.t)
    }

    fn leader_delayed(&self, key: DelayKey) -> Vec<f64> {
        let tau = self.net.delays().eval(key, self.t).expect("validated delay key");
        self.net.leader().expect("validated leader").value(self.t - tau)
    }
}

/// Sum of layer k's coupling terms at agent i under the given environment.
/// With `role_filter = Some(role)` only terms of that role contribute.
pub fn layer_sum(
    net: &MultiplexNetwork,
    k: usize,
    i: usize,
    env: &dyn StateEnv,
    role_filter: Option<TermRole>,
) -> Vec<f64> {
    let n = net.state_dim(i);
    let t = env.time();
    let mut acc = vec![0.0; n];
    let mut add = |v: Vec<f64>| {
        for (a, b) in acc.iter_mut().zip(v) {
            *a += b;
        }
    };
    let keep = |role: TermRole| role_filter.map_or(true, |want| role == want);
    let layer = net.layer(k);
    let x_i = env.current(i);
    for term in layer.self_terms.iter().filter(|s| s.agent == i && keep(s.role)) {
        add(term.map.value(&x_i, t));
    }
    for term in layer.pair_terms.iter().filter(|p| p.to == i && keep(p.role)) {
        let x_from = env.current(term.from);
        add(term.map.value(&x_i, &x_from, t));
    }
    for term in layer.delayed_pair_terms.iter().filter(|p| p.to == i && keep(p.role)) {
        let key = DelayKey::Edge { to: term.to, from: term.from };
        let xd_to = env.delayed(term.to, key);
        let xd_from = env.delayed(term.from, key);
        add(term.map.value(&xd_to, &xd_from, t));
    }
    for term in layer.leader_terms.iter().filter(|l| l.to == i && keep(l.role)) {
        let ell = env.leader_current();
        add(term.map.value(&x_i, &ell, t));
    }
    for term in layer.delayed_leader_terms.iter().filter(|l| l.to == i && keep(l.role)) {
        let key = DelayKey::Leader { to: term.to };
        let xd_to = env.delayed(term.to, key);
        let ell = env.leader_delayed(key);
        add(term.map.value(&xd_to, &ell, t));
    }
    acc
}

/// Controller evaluation at one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentInput {
    /// Everything layer 0 adds to the plant equation plus the first
    /// integrator: `H_{i,0} + r_{i,1}`.
    pub u_total: Vec<f64>,
    /// The controller-owned part of `u_total` (plant-role couplings removed).
    pub u_control: Vec<f64>,
    /// Stacked integrator derivatives `r_{i,k}' = H_{i,k} + r_{i,k+1}`,
    /// k = 1..m, flattened agent-locally (length m * n_i).
    pub r_dot: Vec<f64>,
}

/// Evaluate the multiplex controller at agent i: the plant input assembled
/// from layer 0 plus the first integrator, and the integrator ladder driven
/// by layers 1..m. `r_i` stacks the m integrator states of agent i.
pub fn control_input(
    net: &MultiplexNetwork,
    i: usize,
    r_i: &[f64],
    env: &dyn StateEnv,
) -> Result<AgentInput, NetModelError> {
    if i >= net.num_agents() {
        return Err(NetModelError::UnknownAgent(i));
    }
    let n = net.state_dim(i);
    let m = net.order();
    if r_i.len() != m * n {
        return Err(NetModelError::DimensionMismatch(format!(
            "agent {i}: integrator stack has length {}, expected {}",
            r_i.len(),
            m * n
        )));
    }
    let mut u_total = layer_sum(net, 0, i, env, None);
    let mut u_control = layer_sum(net, 0, i, env, Some(TermRole::Control));
    if m >= 1 {
        for j in 0..n {
            u_total[j] += r_i[j];
            u_control[j] += r_i[j];
        }
    }
    let mut r_dot = vec![0.0; m * n];
    for k in 1..=m {
        let h_k = layer_sum(net, k, i, env, None);
        let base = (k - 1) * n;
        for j in 0..n {
            r_dot[base + j] = h_k[j];
            if k < m {
                r_dot[base + j] += r_i[k * n + j];
            }
        }
    }
    Ok(AgentInput { u_total, u_control, r_dot })
}

// ---------------------------------------------------------------------------
// Integrator offsets (the zeta ladder)
// ---------------------------------------------------------------------------

/// `a! / b!` for `a >= b`, exact in f64 for the small orders used here.
fn falling_factorial_ratio(a: usize, b: usize) -> f64 {
    ((b + 1)..=a).map(|v| v as f64).product()
}

/// Offset that recenters the k-th integrator (k = 1..m) so the shifted
/// coordinate `zeta_{i,k} = r_{i,k} + offset_k(t)` has an equilibrium at 0:
///
/// `offset_k(t) = sum_{b=0}^{m-k} ( (m-1-b)! / (m-k-b)! ) dbar_{m-1-b} t^{m-k-b}`
///
/// where `dbar` holds the m polynomial coefficient vectors of the agent's
/// disturbance. The ladder telescopes: d/dt offset_k = offset_{k+1}, and
/// offset_m is constant. In particular offset_1 is the disturbance
/// polynomial itself, so r_{i,1} converges to minus the polynomial part.
pub fn zeta_offset(
    m: usize,
    k: usize,
    dbar: &[Vec<f64>],
    t: f64,
) -> Result<Vec<f64>, NetModelError> {
    if k == 0 || k > m {
        return Err(NetModelError::BadOffsetIndex { k, m });
    }
    if dbar.len() != m {
        return Err(NetModelError::BadDisturbance(format!(
            "{} coefficient vectors for order {m}",
            dbar.len()
        )));
    }
    let n = dbar.first().map_or(0, Vec::len);
    if dbar.iter().any(|c| c.len() != n) {
        return Err(NetModelError::BadDisturbance(
            "coefficient vectors have unequal lengths".to_string(),
        ));
    }
    let mut out = vec![0.0; n];
    for b in 0..=(m - k) {
        let factor =
            falling_factorial_ratio(m - 1 - b, m - k - b) * t.powi((m - k - b) as i32);
        for (o, &c) in out.iter_mut().zip(&dbar[m - 1 - b]) {
            *o += factor * c;
        }
    }
    Ok(out)
}

/// Finite-difference check of the offset ladder at time `t`: central
/// differences of `offset_k` must match `offset_{k+1}` for k < m, and
/// `offset_m` must be constant. Returns the largest absolute mismatch.
pub fn zeta_derivative_check(
    m: usize,
    dbar: &[Vec<f64>],
    t: f64,
    h: f64,
) -> Result<f64, NetModelError> {
    let mut worst = 0.0_f64;
    for k in 1..=m {
        let plus = zeta_offset(m, k, dbar, t + h)?;
        let minus = zeta_offset(m, k, dbar, t - h)?;
        let deriv: Vec<f64> = plus
            .iter()
            .zip(&minus)
            .map(|(p, q)| (p - q) / (2.0 * h))
            .collect();
        let target = if k < m {
            zeta_offset(m, k + 1, dbar, t)?
        } else {
            vec![0.0; deriv.len()]
        };
        for (d, g) in deriv.iter().zip(&target) {
            worst = worst.max((d - g).abs());
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// Jacobian block assembly
// ---------------------------------------------------------------------------

/// Jacobian blocks of one relabeled delay: every augmented block the delayed
/// couplings scheduled under `key` contribute. A delayed pair edge (i, j)
/// contributes a block at (i, i) (receiver's own delayed state) and at
/// (i, j) (sender's delayed state); a delayed leader link contributes at
/// (i, i) only.
#[derive(Debug, Clone)]
pub struct DelayedBlockGroup {
    pub key: DelayKey,
    /// (row agent, column agent, augmented block) with only the first block
    /// column populated — integrator states are never sampled with delay.
    pub blocks: Vec<(usize, usize, DenseMatrix)>,
}

/// Augmented error-system Jacobian blocks at the desired solution.
///
/// Per agent i the augmented coordinate stacks (x_i, r_{i,1}, ..., r_{i,m}),
/// so blocks are (m+1) n_i by (m+1) n_j. The diagonal block couples the
/// agent to itself (intrinsic Jacobian plus own-state coupling Jacobians in
/// the first block column, identities on the block superdiagonal from the
/// integrator ladder); off-diagonal and delayed blocks carry coupling
/// Jacobians in their first block column only.
#[derive(Debug, Clone)]
pub struct JacobianBlocks {
    pub order: usize,
    pub dims: Vec<usize>,
    pub a_diag: Vec<DenseMatrix>,
    /// Delay-free cross blocks, sorted by (row, column) agent pair; only
    /// pairs with at least one coupling term appear.
    pub a_off: Vec<(usize, usize, DenseMatrix)>,
    /// One group per scheduled delay, in relabeled order.
    pub delayed: Vec<DelayedBlockGroup>,
    pub tau_max: f64,
}

impl JacobianBlocks {
    /// Number of relabeled delays q.
    pub fn num_delays(&self) -> usize {
        self.delayed.len()
    }

    pub fn aug_dim(&self, i: usize) -> usize {
        (self.order + 1) * self.dims[i]
    }
}

/// Assemble the augmented Jacobian blocks of the error dynamics, evaluating
/// every coupling Jacobian on the desired solution at time `t`.
pub fn assemble_jacobian_blocks(
    net: &MultiplexNetwork,
    t: f64,
) -> Result<JacobianBlocks, NetModelError> {
    let nn = net.num_agents();
    let m = net.order();
    let dims: Vec<usize> = (0..nn).map(|i| net.state_dim(i)).collect();
    let desired: Vec<Vec<f64>> = (0..nn).map(|i| net.desired_state(i, t)).collect();
    // Desired states sampled at each scheduled delay, per key.
    let mut desired_delayed: BTreeMap<DelayKey, Vec<Vec<f64>>> = BTreeMap::new();
    for key in net.delays().relabeled() {
        let tau = net.delays().eval(key, t)?;
        let states = (0..nn).map(|j| net.desired_state(j, t - tau)).collect();
        desired_delayed.insert(key, states);
    }
    let leader_now = net.leader().map(|l| l.value(t));

    // Accumulators for the first block column of each (i, j) position:
    // per layer k, the sum of coupling Jacobians. Keyed by agent pair.
    let mut cur_cols: BTreeMap<(usize, usize), Vec<DenseMatrix>> = BTreeMap::new();
    let mut del_cols: BTreeMap<(DelayKey, usize, usize), Vec<DenseMatrix>> = BTreeMap::new();
    let mut add_cur = |i: usize, j: usize, k: usize, jac: DenseMatrix| {
        let cols = cur_cols
            .entry((i, j))
            .or_insert_with(|| (0..=m).map(|_| DenseMatrix::zeros(dims[i], dims[j])).collect());
        cols[k] = cols[k].add(&jac).expect("conformal coupling Jacobian");
    };
    let mut add_del = |key: DelayKey, i: usize, j: usize, k: usize, jac: DenseMatrix| {
        let cols = del_cols
            .entry((key, i, j))
            .or_insert_with(|| (0..=m).map(|_| DenseMatrix::zeros(dims[i], dims[j])).collect());
        cols[k] = cols[k].add(&jac).expect("conformal coupling Jacobian");
    };

    for k in 0..=m {
        let layer = net.layer(k);
        for term in &layer.self_terms {
            let i = term.agent;
            add_cur(i, i, k, term.map.jacobian(&desired[i], t));
        }
        for term in &layer.pair_terms {
            let (i, j) = (term.to, term.from);
            add_cur(i, i, k, term.map.jac_to(&desired[i], &desired[j], t));
            add_cur(i, j, k, term.map.jac_from(&desired[i], &desired[j], t));
        }
        for term in &layer.leader_terms {
            let i = term.to;
            let ell = leader_now.as_ref().expect("validated leader");
            add_cur(i, i, k, term.map.jac_to(&desired[i], ell, t));
        }
        for term in &layer.delayed_pair_terms {
            let (i, j) = (term.to, term.from);
            let key = DelayKey::Edge { to: i, from: j };
            let tau = net.delays().eval(key, t)?;
            let states = &desired_delayed[&key];
            add_del(key, i, i, k, term.map.jac_to(&states[i], &states[j], t));
            add_del(key, i, j, k, term.map.jac_from(&states[i], &states[j], t));
            let _ = tau;
        }
        for term in &layer.delayed_leader_terms {
            let i = term.to;
            let key = DelayKey::Leader { to: i };
            let tau = net.delays().eval(key, t)?;
            let states = &desired_delayed[&key];
            let ell = net.leader().expect("validated leader").value(t - tau);
            add_del(key, i, i, k, term.map.jac_to(&states[i], &ell, t));
        }
    }

    // Build an augmented block from per-layer first-column Jacobians; the
    // diagonal blocks additionally carry the intrinsic Jacobian and the
    // integrator-ladder identities.
    let build_block = |i: usize, j: usize, cols: &[DenseMatrix], diagonal: bool| {
        let (ni, nj) = (dims[i], dims[j]);
        let mut blk = DenseMatrix::zeros((m + 1) * ni, (m + 1) * nj);
        for (k, col) in cols.iter().enumerate() {
            blk.set_block(k * ni, 0, col);
        }
        if diagonal {
            for k in 0..m {
                let eye = DenseMatrix::identity(ni);
                blk.set_block(k * ni, (k + 1) * ni, &eye);
            }
        }
        blk
    };

    let mut a_diag = Vec::with_capacity(nn);
    for i in 0..nn {
        let zero_cols: Vec<DenseMatrix> =
            (0..=m).map(|_| DenseMatrix::zeros(dims[i], dims[i])).collect();
        let cols = cur_cols.get(&(i, i)).unwrap_or(&zero_cols);
        let mut blk = build_block(i, i, cols, true);
        let jf = net.agent(i).intrinsic.jacobian(&desired[i], t);
        if jf.rows() != dims[i] || jf.cols() != dims[i] {
            return Err(NetModelError::DimensionMismatch(format!(
                "agent {i}: intrinsic Jacobian is {}x{}, state dimension {}",
                jf.rows(),
                jf.cols(),
                dims[i]
            )));
        }
        let top = blk.block(0, 0, dims[i], dims[i]).add(&jf).expect("conformal");
        blk.set_block(0, 0, &top);
        a_diag.push(blk);
    }

    let mut a_off = Vec::new();
    for (&(i, j), cols) in &cur_cols {
        if i == j {
            continue;
        }
        a_off.push((i, j, build_block(i, j, cols, false)));
    }

    let mut delayed = Vec::new();
    for key in net.delays().relabeled() {
        let mut blocks = Vec::new();
        for (&(k2, i, j), cols) in &del_cols {
            if k2 == key {
                blocks.push((i, j, build_block(i, j, cols, false)));
            }
        }
        delayed.push(DelayedBlockGroup { key, blocks });
    }

    Ok(JacobianBlocks {
        order: m,
        dims,
        a_diag,
        a_off,
        delayed,
        tau_max: net.delays().tau_max(),
    })
}

/// Largest absolute coupling value over all layers and agents with every
/// state pinned to the desired solution, sampled at the given times. A
/// well-posed design drives this to zero (couplings vanish where the network
/// is supposed to converge).
pub fn verify_c1(net: &MultiplexNetwork, times: &[f64]) -> Result<f64, NetModelError> {
    let mut worst = 0.0_f64;
    for &t in times {
        let env = DesiredEnv { net, t };
        for k in 0..=net.order() {
            for i in 0..net.num_agents() {
                let h = layer_sum(net, k, i, &env, None);
                for v in h {
                    worst = worst.max(v.abs());
                }
            }
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;
    use approx::assert_relative_eq;
    use std::collections::HashMap;

    /// Test environment with explicitly pinned samples.
    struct PinnedEnv {
        t: f64,
        current: Vec<Vec<f64>>,
        delayed: HashMap<(usize, DelayKey), Vec<f64>>,
    }

    impl StateEnv for PinnedEnv {
        fn time(&self) -> f64 {
            self.t
        }
        fn current(&self, agent: usize) -> Vec<f64> {
            self.current[agent].clone()
        }
        fn delayed(&self, agent: usize, key: DelayKey) -> Vec<f64> {
            self.delayed
                .get(&(agent, key))
                .cloned()
                .unwrap_or_else(|| self.current[agent].clone())
        }
    }

    fn scalar(v: f64) -> DenseMatrix {
        DenseMatrix::new(1, 1, vec![v]).unwrap()
    }

    /// Scalar ring of `nn` agents, order m = 2, modeled on a resistive line
    /// network: plant coupling (x_j - x_i) / r on both ring neighbors in
    /// layer 0, proportional/integral self gains k0..k2, and delayed
    /// diffusive control gains kt0..kt2 on both neighbors of every layer.
    fn ring_network(nn: usize, r: f64, k: [f64; 3], kt: [f64; 3]) -> MultiplexNetwork {
        let agents: Vec<AgentDynamics> =
            (0..nn).map(|_| AgentDynamics::linear(scalar(0.0))).collect();
        let mut delays = DelaySchedule::new(0.2).unwrap();
        let neighbors = |i: usize| [(i + nn - 1) % nn, (i + 1) % nn];
        for i in 0..nn {
            for j in neighbors(i) {
                delays
                    .insert(
                        DelayKey::Edge { to: i, from: j },
                        DelayFn::Sinusoidal { base: 0.1, amplitude: 0.1, phase: (i + 1) as f64 },
                    )
                    .unwrap();
            }
        }
        let mut layers = Vec::new();
        for level in 0..3usize {
            let mut layer = CouplingLayer::empty();
            for i in 0..nn {
                layer.self_terms.push(SelfTerm {
                    agent: i,
                    map: TermMap::Linear(scalar(-k[level])),
                    role: TermRole::Control,
                });
                for j in neighbors(i) {
                    if level == 0 {
                        layer.pair_terms.push(PairTerm {
                            to: i,
                            from: j,
                            map: PairMap::diffusive(scalar(1.0 / r)),
                            role: TermRole::Plant,
                        });
                    }
                    layer.delayed_pair_terms.push(PairTerm {
                        to: i,
                        from: j,
                        map: PairMap::diffusive(scalar(-kt[level])),
                        role: TermRole::Control,
                    });
                }
            }
            layers.push(layer);
        }
        let disturbance = DisturbanceModel::zero(&vec![1; nn], 2);
        MultiplexNetwork::new(agents, layers, delays, disturbance, None, DesiredSolution::Zero)
            .unwrap()
    }

    #[test]
    fn control_input_ladder_hand_computed() {
        // Two scalar agents, order 2, single directed delayed edge 0 <- 1.
        let agents = vec![
            AgentDynamics::linear(scalar(-1.0)),
            AgentDynamics::linear(scalar(-1.0)),
        ];
        let mut delays = DelaySchedule::new(0.5).unwrap();
        delays
            .insert(DelayKey::Edge { to: 0, from: 1 }, DelayFn::Constant(0.25))
            .unwrap();
        let mk_layer = |s: f64, d: f64| {
            let mut layer = CouplingLayer::empty();
            layer.self_terms.push(SelfTerm {
                agent: 0,
                map: TermMap::Linear(scalar(s)),
                role: TermRole::Control,
            });
            layer.delayed_pair_terms.push(PairTerm {
                to: 0,
                from: 1,
                map: PairMap::diffusive(scalar(d)),
                role: TermRole::Control,
            });
            layer
        };
        let layers = vec![mk_layer(-2.0, 0.5), mk_layer(-3.0, 0.25), mk_layer(-4.0, 0.125)];
        let net = MultiplexNetwork::new(
            agents,
            layers,
            delays,
            DisturbanceModel::zero(&[1, 1], 2),
            None,
            DesiredSolution::Zero,
        )
        .unwrap();

        let mut delayed = HashMap::new();
        let key = DelayKey::Edge { to: 0, from: 1 };
        delayed.insert((0usize, key), vec![0.6]);
        delayed.insert((1usize, key), vec![0.9]);
        let env = PinnedEnv { t: 0.0, current: vec![vec![2.0], vec![5.0]], delayed };
        let r = [7.0, 11.0]; // r_{0,1}, r_{0,2}
        let input = control_input(&net, 0, &r, &env).unwrap();

        // Layer sums at agent 0: s * x_0 + d * (xd_1 - xd_0).
        let h0 = -2.0 * 2.0 + 0.5 * (0.9 - 0.6);
        let h1 = -3.0 * 2.0 + 0.25 * (0.9 - 0.6);
        let h2 = -4.0 * 2.0 + 0.125 * (0.9 - 0.6);
        assert_relative_eq!(input.u_total[0], h0 + 7.0, epsilon = 1e-14);
        assert_relative_eq!(input.u_control[0], h0 + 7.0, epsilon = 1e-14);
        assert_relative_eq!(input.r_dot[0], h1 + 11.0, epsilon = 1e-14);
        assert_relative_eq!(input.r_dot[1], h2, epsilon = 1e-14);
    }

    #[test]
    fn plant_terms_excluded_from_reported_control() {
        let net = ring_network(3, 20.0, [0.7, 1.3, 0.5], [0.0, 0.0, 0.0]);
        let env = PinnedEnv {
            t: 0.0,
            current: vec![vec![1.0], vec![4.0], vec![-2.0]],
            delayed: HashMap::new(),
        };
        let r = [0.0, 0.0];
        let input = control_input(&net, 0, &r, &env).unwrap();
        // u_total includes the line flows ((4 - 1) + (-2 - 1)) / 20; u_control
        // is the proportional part only.
        let line = ((4.0 - 1.0) + (-2.0 - 1.0)) / 20.0;
        assert_relative_eq!(input.u_total[0], -0.7 + line, epsilon = 1e-14);
        assert_relative_eq!(input.u_control[0], -0.7, epsilon = 1e-14);
    }

    #[test]
    fn zeta_offsets_closed_forms_order_two() {
        // Order 2, scalar: offset_1(t) = dbar_1 t + dbar_0 (the polynomial),
        // offset_2(t) = dbar_1.
        let dbar = vec![vec![3.0], vec![1.5]];
        for &t in &[0.0, 0.7, 4.2, -1.3] {
            let o1 = zeta_offset(2, 1, &dbar, t).unwrap();
            let o2 = zeta_offset(2, 2, &dbar, t).unwrap();
            assert_relative_eq!(o1[0], 1.5 * t + 3.0, epsilon = 1e-13);
            assert_relative_eq!(o2[0], 1.5, epsilon = 1e-13);
        }
    }

    #[test]
    fn zeta_offsets_closed_forms_order_three() {
        // Order 3: offset_1 = d2 t^2 + d1 t + d0, offset_2 = 2 d2 t + d1,
        // offset_3 = 2 d2.
        let dbar = vec![vec![0.5], vec![-2.0], vec![0.25]];
        let t = 1.7;
        let o1 = zeta_offset(3, 1, &dbar, t).unwrap();
        let o2 = zeta_offset(3, 2, &dbar, t).unwrap();
        let o3 = zeta_offset(3, 3, &dbar, t).unwrap();
        assert_relative_eq!(o1[0], 0.25 * t * t - 2.0 * t + 0.5, epsilon = 1e-12);
        assert_relative_eq!(o2[0], 0.5 * t - 2.0, epsilon = 1e-12);
        assert_relative_eq!(o3[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn zeta_ladder_differentiates_correctly_up_to_order_four() {
        let mut state = 9u64;
        let mut next = move || {
            state = state.wrapping_add(0x9E3779B97F4A7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
            (z >> 11) as f64 / (1u64 << 52) as f64 - 1.0
        };
        for m in 1..=4usize {
            let dbar: Vec<Vec<f64>> =
                (0..m).map(|_| vec![3.0 * next(), 3.0 * next()]).collect();
            for &t in &[0.0, 0.9, 2.3] {
                let err = zeta_derivative_check(m, &dbar, t, 1e-4).unwrap();
                assert!(err < 1e-6, "order {m}, t = {t}: ladder error {err}");
            }
        }
    }

    #[test]
    fn zeta_offset_validates_indices() {
        let dbar = vec![vec![1.0]];
        assert!(matches!(
            zeta_offset(1, 0, &dbar, 0.0),
            Err(NetModelError::BadOffsetIndex { .. })
        ));
        assert!(matches!(
            zeta_offset(1, 2, &dbar, 0.0),
            Err(NetModelError::BadOffsetIndex { .. })
        ));
        assert!(zeta_offset(1, 1, &dbar, 0.0).is_ok());
    }

    #[test]
    fn assembled_blocks_match_hand_matrices_on_ring() {
        let (r, k, kt) = (20.0, [0.7445, 1.3399, 0.5052], [0.00057, 0.00076, 0.00048]);
        let net = ring_network(3, r, k, kt);
        let blocks = assemble_jacobian_blocks(&net, 0.0).unwrap();
        assert_eq!(blocks.order, 2);
        assert_eq!(blocks.a_diag.len(), 3);
        // Diagonal block: first column stacks -(2/r + k0), -k1, -k2 (the
        // delayed self-parts live in the delayed groups, not here), with the
        // integrator identities on the superdiagonal.
        let want = DenseMatrix::from_rows(&[
            vec![-(2.0 / r + k[0]), 1.0, 0.0],
            vec![-k[1], 0.0, 1.0],
            vec![-k[2], 0.0, 0.0],
        ])
        .unwrap();
        for blk in &blocks.a_diag {
            assert!(blk.sub(&want).unwrap().max_abs() < 1e-14);
        }
        // Off-diagonal blocks: 1/r in the (0, 0) entry, zero elsewhere.
        assert_eq!(blocks.a_off.len(), 6);
        for (_, _, blk) in &blocks.a_off {
            assert_relative_eq!(blk.get(0, 0), 1.0 / r, epsilon = 1e-15);
            let mut rest = blk.clone();
            rest.set(0, 0, 0.0);
            assert_eq!(rest.max_abs(), 0.0);
        }
        // Delayed groups: one per directed ring edge (q = 6), each holding a
        // receiver-side block (-kt column) and a sender-side block (+kt).
        assert_eq!(blocks.num_delays(), 6);
        for group in &blocks.delayed {
            let DelayKey::Edge { to, from } = group.key else {
                panic!("unexpected leader delay")
            };
            assert_eq!(group.blocks.len(), 2);
            for &(bi, bj, ref blk) in &group.blocks {
                assert_eq!(bi, to);
                let sign = if bj == to {
                    -1.0
                } else {
                    assert_eq!(bj, from);
                    1.0
                };
                for (row, &gain) in kt.iter().enumerate() {
                    // Delayed control gains were built as diffusive(-kt):
                    // receiver side +kt, sender side -kt.
                    assert_relative_eq!(
                        blk.get(row, 0),
                        -sign * gain,
                        epsilon = 1e-15
                    );
                }
                for row in 0..3 {
                    for col in 1..3 {
                        assert_eq!(blk.get(row, col), 0.0);
                    }
                }
            }
        }
    }

    /// Finite-difference oracle over the full augmented vector field: builds
    /// the augmented RHS of the error system with current and delayed states
    /// as independent variables and differentiates numerically.
    #[test]
    fn assembled_blocks_match_finite_difference_oracle() {
        // Two agents with 2-dimensional states, order 1, nonlinear intrinsic
        // drift and a nonlinear delayed coupling with hand Jacobians.
        let intrinsic = |i: usize| TermMap::Custom {
            value: Box::new(move |x: &[f64], _t| {
                vec![
                    -2.0 * x[0] + 0.3 * (x[1] + i as f64 * 0.0).sin(),
                    -1.5 * x[1] + 0.1 * x[0] * x[0],
                ]
            }),
            jacobian: Box::new(move |x: &[f64], _t| {
                DenseMatrix::from_rows(&[
                    vec![-2.0, 0.3 * x[1].cos()],
                    vec![0.2 * x[0], -1.5],
                ])
                .unwrap()
            }),
        };
        let agents = vec![
            AgentDynamics::new(2, intrinsic(0)),
            AgentDynamics::new(2, intrinsic(1)),
        ];
        let mut delays = DelaySchedule::new(0.3).unwrap();
        delays
            .insert(DelayKey::Edge { to: 0, from: 1 }, DelayFn::Constant(0.2))
            .unwrap();
        delays
            .insert(DelayKey::Edge { to: 1, from: 0 }, DelayFn::Constant(0.1))
            .unwrap();

        // Nonlinear diffusive pair map: G tanh(x_from - x_to), componentwise.
        let nl_pair = |g: f64| PairMap::Custom {
            value: Box::new(move |xt: &[f64], xf: &[f64], _t| {
                xt.iter().zip(xf).map(|(a, b)| g * (b - a).tanh()).collect()
            }),
            jac_to: Box::new(move |xt: &[f64], xf: &[f64], _t| {
                let mut j = DenseMatrix::zeros(2, 2);
                for idx in 0..2 {
                    let s = (xf[idx] - xt[idx]).tanh();
                    j.set(idx, idx, -g * (1.0 - s * s));
                }
                j
            }),
            jac_from: Box::new(move |xt: &[f64], xf: &[f64], _t| {
                let mut j = DenseMatrix::zeros(2, 2);
                for idx in 0..2 {
                    let s = (xf[idx] - xt[idx]).tanh();
                    j.set(idx, idx, g * (1.0 - s * s));
                }
                j
            }),
        };

        let mut layer0 = CouplingLayer::empty();
        let mut layer1 = CouplingLayer::empty();
        for (to, from) in [(0usize, 1usize), (1usize, 0usize)] {
            layer0.pair_terms.push(PairTerm {
                to,
                from,
                map: nl_pair(0.4),
                role: TermRole::Plant,
            });
            layer0.delayed_pair_terms.push(PairTerm {
                to,
                from,
                map: nl_pair(0.2),
                role: TermRole::Control,
            });
            layer1.delayed_pair_terms.push(PairTerm {
                to,
                from,
                map: nl_pair(0.1),
                role: TermRole::Control,
            });
        }
        layer1.self_terms.push(SelfTerm {
            agent: 0,
            map: TermMap::Linear(
                DenseMatrix::from_rows(&[vec![-0.5, 0.1], vec![0.0, -0.6]]).unwrap(),
            ),
            role: TermRole::Control,
        });

        let net = MultiplexNetwork::new(
            agents,
            vec![layer0, layer1],
            delays,
            DisturbanceModel::zero(&[2, 2], 1),
            None,
            DesiredSolution::Zero,
        )
        .unwrap();
        let blocks = assemble_jacobian_blocks(&net, 0.0).unwrap();

        // Augmented RHS with independent current/delayed samples. The
        // environment reads agent states from flat vectors: `cur[j]` and
        // `del[(j, key)]`, each of length 4 (x then r).
        let m = net.order();
        let rhs = |cur: &[Vec<f64>], del: &HashMap<(usize, DelayKey), Vec<f64>>| {
            let env = PinnedEnv {
                t: 0.0,
                current: cur.iter().map(|v| v[0..2].to_vec()).collect(),
                delayed: del
                    .iter()
                    .map(|(&(j, key), v)| ((j, key), v[0..2].to_vec()))
                    .collect(),
            };
            let mut out = Vec::new();
            for i in 0..2 {
                let r_i = &cur[i][2..4];
                let input = control_input(&net, i, r_i, &env).unwrap();
                let f = net.agent(i).intrinsic.value(&cur[i][0..2], 0.0);
                for idx in 0..2 {
                    out.push(f[idx] + input.u_total[idx]);
                }
                out.extend(input.r_dot);
            }
            out
        };

        // Base point: the desired solution (zero); FD with respect to each
        // augmented coordinate of each agent, current and delayed.
        let h = 1e-6;
        let aug = (m + 1) * 2;
        let keys = net.delays().relabeled();
        let base_cur = vec![vec![0.0; aug], vec![0.0; aug]];
        let base_del: HashMap<(usize, DelayKey), Vec<f64>> = keys
            .iter()
            .flat_map(|&key| (0..2).map(move |j| ((j, key), vec![0.0; aug])))
            .collect();

        // Current-state Jacobian: columns recover a_diag and a_off.
        for j in 0..2usize {
            for col in 0..aug {
                let mut plus = base_cur.clone();
                plus[j][col] += h;
                let mut minus = base_cur.clone();
                minus[j][col] -= h;
                let fp = rhs(&plus, &base_del);
                let fm = rhs(&minus, &base_del);
                for i in 0..2usize {
                    for row in 0..aug {
                        let fd = (fp[i * aug + row] - fm[i * aug + row]) / (2.0 * h);
                        let want = if i == j {
                            blocks.a_diag[i].get(row, col)
                        } else {
                            blocks
                                .a_off
                                .iter()
                                .find(|&&(bi, bj, _)| bi == i && bj == j)
                                .map_or(0.0, |(_, _, b)| b.get(row, col))
                        };
                        assert!(
                            (fd - want).abs() < 1e-5,
                            "current block ({i},{j}) entry ({row},{col}): fd {fd} vs {want}"
                        );
                    }
                }
            }
        }

        // Delayed-state Jacobians: columns recover each delayed group block.
        for &key in &keys {
            let group = blocks.delayed.iter().find(|g| g.key == key).unwrap();
            for j in 0..2usize {
                for col in 0..aug {
                    let mut plus = base_del.clone();
                    plus.get_mut(&(j, key)).unwrap()[col] += h;
                    let mut minus = base_del.clone();
                    minus.get_mut(&(j, key)).unwrap()[col] -= h;
                    let fp = rhs(&base_cur, &plus);
                    let fm = rhs(&base_cur, &minus);
                    for i in 0..2usize {
                        for row in 0..aug {
                            let fd = (fp[i * aug + row] - fm[i * aug + row]) / (2.0 * h);
                            let want = group
                                .blocks
                                .iter()
                                .find(|&&(bi, bj, _)| bi == i && bj == j)
                                .map_or(0.0, |(_, _, b)| b.get(row, col));
                            assert!(
                                (fd - want).abs() < 1e-5,
                                "delayed {key:?} block ({i},{j}) entry ({row},{col}): \
                                 fd {fd} vs {want}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn couplings_vanish_on_desired_solution() {
        let net = ring_network(4, 20.0, [0.7, 1.3, 0.5], [0.001, 0.002, 0.003]);
        let times: Vec<f64> = (0..20).map(|s| s as f64 * 0.5).collect();
        let worst = verify_c1(&net, &times).unwrap();
        assert!(worst <= 1e-10, "coupling residual {worst}");
    }

    #[test]
    fn constant_bias_term_is_caught_by_c1_check() {
        // A coupling with a constant bias does not vanish at zero.
        let agents = vec![AgentDynamics::linear(scalar(-1.0))];
        let mut layer = CouplingLayer::empty();
        layer.self_terms.push(SelfTerm {
            agent: 0,
            map: TermMap::Custom {
                value: Box::new(|x: &[f64], _t| vec![-x[0] + 0.5]),
                jacobian: Box::new(|_x: &[f64], _t| scalar(-1.0)),
            },
            role: TermRole::Control,
        });
        let net = MultiplexNetwork::new(
            agents,
            vec![layer],
            DelaySchedule::new(0.0).unwrap(),
            DisturbanceModel::zero(&[1], 0),
            None,
            DesiredSolution::Zero,
        )
        .unwrap();
        let worst = verify_c1(&net, &[0.0, 1.0]).unwrap();
        assert!(worst > 0.4);
    }

    #[test]
    fn validation_rejects_malformed_networks() {
        // Delayed term without a schedule entry.
        let agents = vec![
            AgentDynamics::linear(scalar(-1.0)),
            AgentDynamics::linear(scalar(-1.0)),
        ];
        let mut layer = CouplingLayer::empty();
        layer.delayed_pair_terms.push(PairTerm {
            to: 0,
            from: 1,
            map: PairMap::diffusive(scalar(1.0)),
            role: TermRole::Control,
        });
        let err = MultiplexNetwork::new(
            agents,
            vec![layer],
            DelaySchedule::new(0.5).unwrap(),
            DisturbanceModel::zero(&[1, 1], 0),
            None,
            DesiredSolution::Zero,
        )
        .unwrap_err();
        assert!(matches!(err, NetModelError::MissingDelay(_)));

        // Wrong polynomial coefficient count for the layer count.
        let agents = vec![AgentDynamics::linear(scalar(-1.0))];
        let err = MultiplexNetwork::new(
            agents,
            vec![CouplingLayer::empty(), CouplingLayer::empty()],
            DelaySchedule::new(0.0).unwrap(),
            DisturbanceModel::zero(&[1], 0),
            None,
            DesiredSolution::Zero,
        )
        .unwrap_err();
        assert!(matches!(err, NetModelError::BadDisturbance(_)));

        // Leader coupling without a leader signal.
        let agents = vec![AgentDynamics::linear(scalar(-1.0))];
        let mut layer = CouplingLayer::empty();
        layer.leader_terms.push(LeaderTerm {
            to: 0,
            map: PairMap::diffusive(scalar(1.0)),
            role: TermRole::Control,
        });
        let err = MultiplexNetwork::new(
            agents,
            vec![layer],
            DelaySchedule::new(0.0).unwrap(),
            DisturbanceModel::zero(&[1], 0),
            None,
            DesiredSolution::Zero,
        )
        .unwrap_err();
        assert!(matches!(err, NetModelError::BadLeader(_)));

        // Out-of-range sinusoidal delay.
        let mut delays = DelaySchedule::new(0.15).unwrap();
        let err = delays
            .insert(
                DelayKey::Edge { to: 0, from: 1 },
                DelayFn::Sinusoidal { base: 0.1, amplitude: 0.1, phase: 0.0 },
            )
            .unwrap_err();
        assert!(matches!(err, NetModelError::InvalidDelay(_)));
    }

    #[test]
    fn disturbance_value_combines_polynomial_and_residual() {
        let model = DisturbanceModel {
            poly: vec![vec![vec![3.0], vec![1.0]]],
            residual: vec![Residual::DecayingSine {
                amplitude: vec![1.0],
                decay: 0.2,
                frequency: 1.0,
                phase: 0.0,
            }],
        };
        for &t in &[0.0, 1.0, 2.5, 10.0] {
            let d = model.value(0, 1, t);
            let want = 3.0 + t + (-0.2 * t).exp() * t.sin();
            assert_relative_eq!(d[0], want, epsilon = 1e-13);
        }
        // Residual bound decays with the window start.
        assert_relative_eq!(
            model.residual_sup(0, 1, crate::linalg::PNorm::Two, 0.0),
            1.0,
            epsilon = 1e-14
        );
        let late = model.residual_sup(0, 1, crate::linalg::PNorm::Two, 10.0);
        assert_relative_eq!(late, (-2.0_f64).exp(), epsilon = 1e-14);
    }

    #[test]
    fn intrinsic_jacobians_consistent_with_finite_differences() {
        // The nonlinear intrinsic map used in the FD oracle test, checked
        // directly at a few points.
        let dyn0 = AgentDynamics::new(
            2,
            TermMap::Custom {
                value: Box::new(|x: &[f64], _t| {
                    vec![-2.0 * x[0] + 0.3 * x[1].sin(), -1.5 * x[1] + 0.1 * x[0] * x[0]]
                }),
                jacobian: Box::new(|x: &[f64], _t| {
                    DenseMatrix::from_rows(&[
                        vec![-2.0, 0.3 * x[1].cos()],
                        vec![0.2 * x[0], -1.5],
                    ])
                    .unwrap()
                }),
            },
        );
        let h = 1e-6;
        for point in [[0.0, 0.0], [0.4, -0.8], [-1.2, 2.0]] {
            let jac = dyn0.intrinsic.jacobian(&point, 0.0);
            for col in 0..2 {
                let mut plus = point;
                plus[col] += h;
                let mut minus = point;
                minus[col] -= h;
                let fp = dyn0.intrinsic.value(&plus, 0.0);
                let fm = dyn0.intrinsic.value(&minus, 0.0);
                for row in 0..2 {
                    let fd = (fp[row] - fm[row]) / (2.0 * h);
                    assert!(
                        (fd - jac.get(row, col)).abs() < 1e-5,
                        "entry ({row},{col})"
                    );
                }
            }
        }
    }
}
