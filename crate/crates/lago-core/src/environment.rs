//! The stochastic world: task arrivals, accessible fog subsets, realized
//! rates/frequencies, and per-slot energy coefficients, all drawn from a
//! seeded generator so the whole trace is a pure function of (config, seed).
//!
//! Randomness is split into one ChaCha12 sub-stream per purpose so the draw
//! order of one feature is insulated from changes in another:
//!
//! ```text
//! stream 0  profiles      (node supports sampled once at build time)
//! stream 1  subsets       (accessible fog subset per slot)
//! stream 2  tasks         (arrival counts and sizes)
//! stream 3  rates         (realized R, offloaded tasks only, task order)
//! stream 4  frequencies   (realized F, every task, task order)
//! stream 5  coefficients  (eta/kappa draws, ascending node order per slot)
//! ```
//!
//! The hidden true means rho_n = E[1/R] and phi_n = E[1/F] are computed in
//! closed form from the uniform supports (E[1/U(a,b)] = ln(b/a)/(b-a)) and
//! exposed only to the metrics oracle, never to the learner or controller.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::model::{
    Decision, Feedback, InvalidConfig, NodeId, SlotContext, SystemConstants, Task, TaskFeedback,
    TaskId, Violations, DEVICE,
};

/// Closed interval a uniform variable is drawn from. `low == high` collapses
/// the draw to a constant; real configurations keep `low < high` and the
/// degenerate form exists for deterministic test setups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Support {
    low: f64,
    high: f64,
}

impl Support {
    pub fn new(low: f64, high: f64) -> Result<Self, InvalidConfig> {
        let mut v = Violations::new();
        if !(low > 0.0) || !low.is_finite() {
            v.push("support.low", format!("must be positive and finite, got {low}"));
        }
        if !(high > low) || !high.is_finite() {
            v.push("support.high", format!("must exceed low = {low}, got {high}"));
        }
        v.into_result()?;
        Ok(Self { low, high })
    }

    /// Collapses the support to a single point.
    pub fn point(value: f64) -> Result<Self, InvalidConfig> {
        let mut v = Violations::new();
        if !(value > 0.0) || !value.is_finite() {
            v.push("support", format!("point value must be positive and finite, got {value}"));
        }
        v.into_result()?;
        Ok(Self { low: value, high: value })
    }

    pub fn low(&self) -> f64 {
        self.low
    }

    pub fn high(&self) -> f64 {
        self.high
    }

    pub fn contains(&self, x: f64) -> bool {
        self.low <= x && x <= self.high
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.low == self.high {
            self.low
        } else {
            rng.gen_range(self.low..self.high)
        }
    }

    /// E[1/U(a, b)] = ln(b/a) / (b - a); 1/c for the degenerate point.
    pub fn reciprocal_mean(&self) -> f64 {
        if self.low == self.high {
            1.0 / self.low
        } else {
            (self.high / self.low).ln() / (self.high - self.low)
        }
    }
}

/// Per-node draw supports and energy budget. The device (node 0) has no
/// transmission, hence no rate support and no eta support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeProfile {
    pub node: NodeId,
    pub rate: Option<Support>,
    pub freq: Support,
    pub eta: Option<Support>,
    pub kappa: Support,
    /// Energy budget b_n, joules per slot.
    pub budget: f64,
}

impl NodeProfile {
    fn validate(&self, constants: &SystemConstants) -> Result<(), InvalidConfig> {
        let mut v = Violations::new();
        let tag = |field: &str| format!("profiles[{}].{}", self.node, field);
        if self.node == DEVICE {
            if self.rate.is_some() {
                v.push(tag("rate"), "the device has no transmission rate support");
            }
            if self.eta.is_some() {
                v.push(tag("eta"), "the device has no transmission energy support");
            }
        } else {
            match self.rate {
                None => v.push(tag("rate"), "fog nodes need a rate support"),
                Some(s) if s.low < constants.r_min => v.push(
                    tag("rate"),
                    format!("low {} below r_min {}", s.low, constants.r_min),
                ),
                Some(_) => {}
            }
            match self.eta {
                None => v.push(tag("eta"), "fog nodes need an eta support"),
                Some(s) if s.high > constants.eta_max => v.push(
                    tag("eta"),
                    format!("high {} above eta_max {}", s.high, constants.eta_max),
                ),
                Some(_) => {}
            }
        }
        if self.freq.low < constants.f_min {
            v.push(
                tag("freq"),
                format!("low {} below f_min {}", self.freq.low, constants.f_min),
            );
        }
        if self.kappa.high > constants.kappa_max {
            v.push(
                tag("kappa"),
                format!("high {} above kappa_max {}", self.kappa.high, constants.kappa_max),
            );
        }
        if !(self.budget > 0.0) || !self.budget.is_finite() {
            v.push(tag("budget"), format!("must be positive, got {}", self.budget));
        }
        v.into_result()
    }
}

/// Hidden means of the reciprocal rate/frequency variables. `rho` has no
/// entry for the device (node 0 never transmits).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueMeans {
    pub rho: BTreeMap<NodeId, f64>,
    pub phi: BTreeMap<NodeId, f64>,
}

/// How many tasks arrive per slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArrivalSpec {
    /// Exactly this many tasks each slot.
    Fixed(u32),
    /// Uniformly 0..=max tasks each slot.
    UniformMax(u32),
}

impl ArrivalSpec {
    pub fn max_count(&self) -> u32 {
        match *self {
            ArrivalSpec::Fixed(k) => k,
            ArrivalSpec::UniformMax(k) => k,
        }
    }
}

/// Task size distribution. The log-uniform default stands in for the
/// heavy-spread real-world traces the original evaluation sampled from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TaskSizeDist {
    LogUniform { low: f64, high: f64 },
    Uniform { low: f64, high: f64 },
    Fixed(f64),
}

impl TaskSizeDist {
    pub fn max_size(&self) -> f64 {
        match *self {
            TaskSizeDist::LogUniform { high, .. } | TaskSizeDist::Uniform { high, .. } => high,
            TaskSizeDist::Fixed(v) => v,
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            TaskSizeDist::LogUniform { low, high } => {
                if low == high {
                    low
                } else {
                    rng.gen_range(low.ln()..high.ln()).exp()
                }
            }
            TaskSizeDist::Uniform { low, high } => {
                if low == high {
                    low
                } else {
                    rng.gen_range(low..high)
                }
            }
            TaskSizeDist::Fixed(v) => v,
        }
    }

    fn validate(&self) -> Result<(), InvalidConfig> {
        let mut v = Violations::new();
        match *self {
            TaskSizeDist::LogUniform { low, high } | TaskSizeDist::Uniform { low, high } => {
                if !(low > 0.0) || !low.is_finite() {
                    v.push("tasks.size.low", format!("must be positive, got {low}"));
                }
                if !(high >= low) || !high.is_finite() {
                    v.push("tasks.size.high", format!("must be >= low, got {high}"));
                }
            }
            TaskSizeDist::Fixed(val) => {
                if !(val > 0.0) || !val.is_finite() {
                    v.push("tasks.size", format!("must be positive, got {val}"));
                }
            }
        }
        v.into_result()
    }
}

/// Whether eta/kappa are redrawn each slot or fixed per node at build time.
/// Per-slot redraw is the default reading of the evaluation setup; the fixed
/// mode exists for sensitivity checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoefficientMode {
    PerSlot,
    PerNode,
}

/// Environment-level knobs beyond the per-node profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvParams {
    pub arrivals: ArrivalSpec,
    pub task_size: TaskSizeDist,
    /// Computation demand per bit (W = cycles_per_bit * L).
    pub cycles_per_bit: f64,
    /// Number of fog nodes accessible each slot (n_a).
    pub subset_size: u32,
    pub coefficient_mode: CoefficientMode,
}

impl EnvParams {
    fn validate(&self, constants: &SystemConstants) -> Result<(), InvalidConfig> {
        let mut v = Violations::new();
        self.task_size.validate().unwrap_or_else(|e| v.extend(e));
        if self.arrivals.max_count() > constants.a_max {
            v.push(
                "arrivals",
                format!(
                    "max arrivals {} exceed a_max {}",
                    self.arrivals.max_count(),
                    constants.a_max
                ),
            );
        }
        if !(self.cycles_per_bit > 0.0) || !self.cycles_per_bit.is_finite() {
            v.push("tasks.cycles_per_bit", format!("must be positive, got {}", self.cycles_per_bit));
        }
        // subset_size 0 is the degenerate device-only mode.
        if self.subset_size as usize > constants.n_fog {
            v.push(
                "subset_size",
                format!("must be at most {}, got {}", constants.n_fog, self.subset_size),
            );
        }
        if self.task_size.max_size() > constants.l_max {
            v.push(
                "tasks.size",
                format!(
                    "maximum size {} exceeds l_max {}",
                    self.task_size.max_size(),
                    constants.l_max
                ),
            );
        }
        if self.task_size.max_size() * self.cycles_per_bit > constants.w_max {
            v.push(
                "tasks.cycles_per_bit",
                format!(
                    "maximum demand {} exceeds w_max {}",
                    self.task_size.max_size() * self.cycles_per_bit,
                    constants.w_max
                ),
            );
        }
        v.into_result()
    }
}

/// Meta-distributions the per-node supports are themselves sampled from,
/// mirroring the two-level sampling of the reference setup. Fog node n gets
/// rate support (x, y) with x ~ rate_low and y ~ rate_high, and likewise for
/// frequencies; energy coefficient supports are shared across fog nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaProfiles {
    pub rate_low: Support,
    pub rate_high: Support,
    pub freq_low: Support,
    pub freq_high: Support,
    pub device_freq: Support,
    pub device_kappa: Support,
    pub fog_kappa: Support,
    pub fog_eta: Support,
    /// Energy budget b_n applied to every node.
    pub budget: f64,
}

impl Default for MetaProfiles {
    fn default() -> Self {
        Self {
            rate_low: Support { low: 5e6, high: 1.5e7 },
            rate_high: Support { low: 5e7, high: 1.5e8 },
            freq_low: Support { low: 5e9, high: 1.5e10 },
            freq_high: Support { low: 1.5e10, high: 2.5e10 },
            device_freq: Support { low: 1e9, high: 1e10 },
            device_kappa: Support { low: 1e-10, high: 5e-10 },
            fog_kappa: Support { low: 5e-9, high: 1.5e-8 },
            fog_eta: Support { low: 1e-7, high: 1e-6 },
            budget: 0.5,
        }
    }
}

impl MetaProfiles {
    /// Draws one profile per node (device first, then fog nodes 1..=N in
    /// order; per fog node: rate low, rate high, freq low, freq high).
    pub fn sample(&self, n_fog: usize, rng: &mut impl Rng) -> Vec<NodeProfile> {
        let mut profiles = Vec::with_capacity(n_fog + 1);
        profiles.push(NodeProfile {
            node: DEVICE,
            rate: None,
            freq: self.device_freq,
            eta: None,
            kappa: self.device_kappa,
            budget: self.budget,
        });
        for node in 1..=n_fog {
            let rate = Support {
                low: self.rate_low.sample(rng),
                high: self.rate_high.sample(rng),
            };
            let freq = Support {
                low: self.freq_low.sample(rng),
                high: self.freq_high.sample(rng),
            };
            profiles.push(NodeProfile {
                node,
                rate: Some(rate),
                freq,
                eta: Some(self.fog_eta),
                kappa: self.fog_kappa,
                budget: self.budget,
            });
        }
        profiles
    }
}

// Sub-stream ids of the master seed.
const STREAM_PROFILES: u64 = 0;
const STREAM_SUBSETS: u64 = 1;
const STREAM_TASKS: u64 = 2;
const STREAM_RATES: u64 = 3;
const STREAM_FREQS: u64 = 4;
const STREAM_COEFFS: u64 = 5;

fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Serializable position of one ChaCha12 sub-stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamPos {
    pub stream: u64,
    pub word_pos: u128,
}

/// Serializable snapshot of the environment's mutable state; together with
/// the build inputs it allows an exact resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub next_t: u64,
    pub streams: Vec<StreamPos>,
}

#[derive(Debug)]
struct Streams {
    subsets: ChaCha12Rng,
    tasks: ChaCha12Rng,
    rates: ChaCha12Rng,
    freqs: ChaCha12Rng,
    coeffs: ChaCha12Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Self {
            subsets: stream_rng(seed, STREAM_SUBSETS),
            tasks: stream_rng(seed, STREAM_TASKS),
            rates: stream_rng(seed, STREAM_RATES),
            freqs: stream_rng(seed, STREAM_FREQS),
            coeffs: stream_rng(seed, STREAM_COEFFS),
        }
    }

    fn positions(&self) -> Vec<StreamPos> {
        [&self.subsets, &self.tasks, &self.rates, &self.freqs, &self.coeffs]
            .iter()
            .map(|r| StreamPos {
                stream: r.get_stream(),
                word_pos: r.get_word_pos(),
            })
            .collect()
    }

    fn restore(seed: u64, positions: &[StreamPos]) -> Result<Self, EnvError> {
        let mut streams = Self::new(seed);
        for pos in positions {
            let rng = match pos.stream {
                STREAM_SUBSETS => &mut streams.subsets,
                STREAM_TASKS => &mut streams.tasks,
                STREAM_RATES => &mut streams.rates,
                STREAM_FREQS => &mut streams.freqs,
                STREAM_COEFFS => &mut streams.coeffs,
                other => return Err(EnvError::BadState(format!("unknown stream id {other}"))),
            };
            rng.set_word_pos(pos.word_pos);
        }
        Ok(streams)
    }
}

/// The seeded world one simulation run draws from. Exclusively owned by its
/// run; slot generation is strictly sequential.
#[derive(Debug)]
pub struct Environment {
    constants: SystemConstants,
    params: EnvParams,
    profiles: Vec<NodeProfile>,
    means: TrueMeans,
    seed: u64,
    streams: Streams,
    /// eta/kappa values fixed at build time under CoefficientMode::PerNode.
    fixed_coeffs: Option<(BTreeMap<NodeId, f64>, BTreeMap<NodeId, f64>)>,
    next_t: u64,
}

impl Environment {
    /// Builds an environment from explicit per-node profiles.
    pub fn build(
        profiles: Vec<NodeProfile>,
        constants: SystemConstants,
        params: EnvParams,
        seed: u64,
    ) -> Result<Self, EnvError> {
        constants.validate().map_err(EnvError::Invalid)?;
        params.validate(&constants).map_err(EnvError::Invalid)?;
        let mut v = Violations::new();
        if profiles.len() != constants.n_nodes() {
            v.push(
                "profiles",
                format!("need {} profiles, got {}", constants.n_nodes(), profiles.len()),
            );
        }
        for (idx, p) in profiles.iter().enumerate() {
            if p.node != idx {
                v.push(
                    format!("profiles[{idx}]"),
                    format!("expected node {idx}, got {}", p.node),
                );
            }
            p.validate(&constants).unwrap_or_else(|e| v.extend(e));
        }
        v.into_result().map_err(EnvError::Invalid)?;

        let means = compute_true_means(&profiles, &constants)?;
        let mut streams = Streams::new(seed);
        let fixed_coeffs = match params.coefficient_mode {
            CoefficientMode::PerSlot => None,
            CoefficientMode::PerNode => Some(draw_coefficients(
                &profiles,
                profiles.iter().map(|p| p.node),
                &mut streams.coeffs,
            )),
        };
        Ok(Self {
            constants,
            params,
            profiles,
            means,
            seed,
            streams,
            fixed_coeffs,
            next_t: 0,
        })
    }

    /// Builds an environment whose node profiles are themselves sampled from
    /// the meta-distributions using the profiles sub-stream of `seed`.
    pub fn build_sampled(
        meta: &MetaProfiles,
        constants: SystemConstants,
        params: EnvParams,
        seed: u64,
    ) -> Result<Self, EnvError> {
        let mut rng = stream_rng(seed, STREAM_PROFILES);
        let profiles = meta.sample(constants.n_fog, &mut rng);
        Self::build(profiles, constants, params, seed)
    }

    pub fn constants(&self) -> &SystemConstants {
        &self.constants
    }

    pub fn params(&self) -> &EnvParams {
        &self.params
    }

    pub fn profiles(&self) -> &[NodeProfile] {
        &self.profiles
    }

    pub fn budgets(&self) -> Vec<f64> {
        self.profiles.iter().map(|p| p.budget).collect()
    }

    /// Closed-form means of 1/R and 1/F; for the metrics oracle only.
    pub fn true_means(&self) -> &TrueMeans {
        &self.means
    }

    pub fn next_t(&self) -> u64 {
        self.next_t
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Generates slot `t`. Slots must be requested strictly sequentially.
    ///
    /// Draw order: accessible subset (subsets stream), arrival count if
    /// random then task sizes (tasks stream), then eta/kappa for accessible
    /// nodes in ascending node order, eta before kappa (coefficients stream).
    pub fn next_slot(&mut self, t: u64) -> Result<SlotContext, EnvError> {
        if t != self.next_t {
            return Err(EnvError::OutOfOrder { expected: self.next_t, got: t });
        }
        let n_fog = self.constants.n_fog;
        let n_a = self.params.subset_size as usize;

        // Partial Fisher-Yates over fog ids; first n_a entries are the draw.
        let mut ids: Vec<NodeId> = (1..=n_fog).collect();
        for i in 0..n_a {
            let j = self.streams.subsets.gen_range(i..n_fog);
            ids.swap(i, j);
        }
        let mut accessible: Vec<NodeId> = Vec::with_capacity(n_a + 1);
        accessible.push(DEVICE);
        accessible.extend_from_slice(&ids[..n_a]);
        accessible.sort_unstable();

        let count = match self.params.arrivals {
            ArrivalSpec::Fixed(k) => k,
            ArrivalSpec::UniformMax(k) => self.streams.tasks.gen_range(0..=k),
        };
        let mut tasks = Vec::with_capacity(count as usize);
        for ordinal in 0..count {
            let size = self.params.task_size.sample(&mut self.streams.tasks);
            let work = size * self.params.cycles_per_bit;
            tasks.push(
                Task::new(TaskId { slot: t, ordinal }, size, work)
                    .map_err(|e| EnvError::BadState(e.to_string()))?,
            );
        }

        let (eta, kappa) = match &self.fixed_coeffs {
            Some((eta_all, kappa_all)) => (
                accessible
                    .iter()
                    .filter(|&&n| n != DEVICE)
                    .map(|&n| (n, eta_all[&n]))
                    .collect(),
                accessible.iter().map(|&n| (n, kappa_all[&n])).collect(),
            ),
            None => draw_coefficients(
                &self.profiles,
                accessible.iter().copied(),
                &mut self.streams.coeffs,
            ),
        };

        let ctx = SlotContext { t, tasks, accessible, eta, kappa };
        ctx.validate(&self.constants)
            .map_err(|e| EnvError::BadState(e.to_string()))?;
        self.next_t += 1;
        Ok(ctx)
    }

    /// Realizes the slot's rates and frequencies for the given decision and
    /// returns the resulting feedback.
    ///
    /// Draws are consumed in task order; each offloaded task consumes one
    /// rate draw, every task consumes one frequency draw.
    pub fn realize(&mut self, ctx: &SlotContext, decision: &Decision) -> Result<Feedback, EnvError> {
        decision
            .validate(ctx)
            .map_err(|e| EnvError::BadDecision(e.to_string()))?;
        let mut per_task = BTreeMap::new();
        for task in &ctx.tasks {
            let node = decision.node_for(task.id).expect("validated above");
            let profile = &self.profiles[node];
            let (rate, d_tr) = if node == DEVICE {
                (None, 0.0)
            } else {
                let r = profile
                    .rate
                    .expect("fog profile has a rate support")
                    .sample(&mut self.streams.rates);
                (Some(r), task.size_bits / r)
            };
            let freq = profile.freq.sample(&mut self.streams.freqs);
            let d_pr = task.work_cycles / freq;
            per_task.insert(task.id, TaskFeedback { rate, freq, d_tr, d_pr });
        }
        Ok(Feedback { per_task })
    }

    /// Snapshot of the mutable state for resume.
    pub fn state(&self) -> EnvState {
        EnvState {
            next_t: self.next_t,
            streams: self.streams.positions(),
        }
    }

    /// Rebuilds an environment and fast-forwards it to a saved state.
    pub fn restore(
        profiles: Vec<NodeProfile>,
        constants: SystemConstants,
        params: EnvParams,
        seed: u64,
        state: &EnvState,
    ) -> Result<Self, EnvError> {
        let mut env = Self::build(profiles, constants, params, seed)?;
        env.streams = Streams::restore(seed, &state.streams)?;
        env.next_t = state.next_t;
        Ok(env)
    }
}

/// Draws eta (fog only) then kappa for the given nodes in iteration order.
fn draw_coefficients(
    profiles: &[NodeProfile],
    nodes: impl Iterator<Item = NodeId>,
    rng: &mut ChaCha12Rng,
) -> (BTreeMap<NodeId, f64>, BTreeMap<NodeId, f64>) {
    let mut eta = BTreeMap::new();
    let mut kappa = BTreeMap::new();
    for n in nodes {
        let p = &profiles[n];
        if let Some(s) = p.eta {
            eta.insert(n, s.sample(rng));
        }
        kappa.insert(n, p.kappa.sample(rng));
    }
    (eta, kappa)
}

fn compute_true_means(
    profiles: &[NodeProfile],
    constants: &SystemConstants,
) -> Result<TrueMeans, EnvError> {
    let mut rho = BTreeMap::new();
    let mut phi = BTreeMap::new();
    for p in profiles {
        if let Some(rate) = p.rate {
            let m = rate.reciprocal_mean();
            debug_assert!(m > 0.0 && m <= constants.rho_max);
            rho.insert(p.node, m);
        }
        let m = p.freq.reciprocal_mean();
        debug_assert!(m > 0.0 && m <= constants.phi_max);
        phi.insert(p.node, m);
    }
    Ok(TrueMeans { rho, phi })
}

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error(transparent)]
    Invalid(#[from] InvalidConfig),
    #[error("slots must be generated sequentially: expected t = {expected}, got {got}")]
    OutOfOrder { expected: u64, got: u64 },
    #[error("invalid decision: {0}")]
    BadDecision(String),
    #[error("environment state error: {0}")]
    BadState(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{assert_rel, vi_constants};

    pub(crate) fn small_params(subset_size: u32) -> EnvParams {
        EnvParams {
            arrivals: ArrivalSpec::Fixed(10),
            task_size: TaskSizeDist::LogUniform { low: 5e3, high: 5e5 },
            cycles_per_bit: 1000.0,
            subset_size,
            coefficient_mode: CoefficientMode::PerSlot,
        }
    }

    fn vi_env(seed: u64) -> Environment {
        Environment::build_sampled(
            &MetaProfiles::default(),
            vi_constants(),
            small_params(10),
            seed,
        )
        .unwrap()
    }

    #[test]
    fn reciprocal_mean_matches_closed_form() {
        // E[1/U(1e7, 1e8)] = ln(10)/9e7.
        let s = Support::new(1e7, 1e8).unwrap();
        assert_rel(s.reciprocal_mean(), 10f64.ln() / 9e7, 1e-12);
        assert_rel(s.reciprocal_mean(), 2.5584278811044954e-8, 1e-9);
        // E[1/U(5e9, 1.5e10)] = ln(3)/1e10.
        let s = Support::new(5e9, 1.5e10).unwrap();
        assert_rel(s.reciprocal_mean(), 3f64.ln() / 1e10, 1e-12);
        assert_rel(s.reciprocal_mean(), 1.0986122886681097e-10, 1e-9);
        // Degenerate point c gives 1/c.
        let s = Support::point(4e9).unwrap();
        assert_rel(s.reciprocal_mean(), 2.5e-10, 1e-15);
    }

    #[test]
    fn monte_carlo_reciprocal_mean_within_half_percent() {
        let s = Support::new(1e7, 1e8).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let n = 1_000_000;
        let sum: f64 = (0..n).map(|_| 1.0 / s.sample(&mut rng)).sum();
        let mc = sum / n as f64;
        assert_rel(mc, s.reciprocal_mean(), 5e-3);
    }

    #[test]
    fn subset_size_larger_than_fog_count_is_rejected() {
        let err = Environment::build_sampled(
            &MetaProfiles::default(),
            vi_constants(),
            small_params(25),
            1,
        )
        .unwrap_err();
        assert!(err.to_string().contains("subset_size"));
    }

    #[test]
    fn same_seed_rebuild_yields_identical_first_slot() {
        let mut a = vi_env(42);
        let mut b = vi_env(42);
        let sa = a.next_slot(0).unwrap();
        let sb = b.next_slot(0).unwrap();
        assert_eq!(sa.accessible, sb.accessible);
        assert_eq!(sa.eta, sb.eta);
        assert_eq!(sa.kappa, sb.kappa);
        assert_eq!(sa.tasks.len(), sb.tasks.len());
        for (x, y) in sa.tasks.iter().zip(&sb.tasks) {
            assert_eq!(x.size_bits, y.size_bits);
            assert_eq!(x.work_cycles, y.work_cycles);
        }
    }

    #[test]
    fn different_seeds_diverge() {
        let mut a = vi_env(1);
        let mut b = vi_env(2);
        let sa = a.next_slot(0).unwrap();
        let sb = b.next_slot(0).unwrap();
        assert!(
            sa.accessible != sb.accessible
                || sa.tasks[0].size_bits != sb.tasks[0].size_bits
        );
    }

    #[test]
    fn out_of_order_slot_requests_fail() {
        let mut env = vi_env(5);
        env.next_slot(0).unwrap();
        env.next_slot(1).unwrap();
        let err = env.next_slot(1).unwrap_err();
        assert!(matches!(err, EnvError::OutOfOrder { expected: 2, got: 1 }));
    }

    #[test]
    fn accessible_set_has_device_plus_subset() {
        let mut env = vi_env(9);
        for t in 0..50 {
            let ctx = env.next_slot(t).unwrap();
            assert_eq!(ctx.accessible.len(), 11);
            assert_eq!(ctx.accessible[0], DEVICE);
            assert!(ctx.accessible.windows(2).all(|w| w[0] < w[1]));
            assert_eq!(ctx.eta.len(), 10);
            assert_eq!(ctx.kappa.len(), 11);
        }
    }

    #[test]
    fn subset_sampling_is_uniform_over_many_slots() {
        let n_slots = 10_000u64;
        let mut env = vi_env(12);
        let mut hits = vec![0u64; 21];
        for t in 0..n_slots {
            let ctx = env.next_slot(t).unwrap();
            for &n in &ctx.accessible {
                hits[n] += 1;
            }
        }
        // Each fog node appears with frequency n_a/N = 0.5 within three
        // binomial standard errors.
        let p = 0.5;
        let se = (p * (1.0 - p) / n_slots as f64).sqrt();
        for n in 1..=20 {
            let freq = hits[n] as f64 / n_slots as f64;
            assert!(
                (freq - p).abs() <= 3.0 * se,
                "node {n}: frequency {freq} outside {p} +- {}",
                3.0 * se
            );
        }
    }

    #[test]
    fn realized_draws_stay_inside_supports() {
        let mut env = vi_env(13);
        let constants = env.constants().clone();
        let profiles = env.profiles().to_vec();
        for t in 0..200 {
            let ctx = env.next_slot(t).unwrap();
            // Send every task to the highest accessible fog node.
            let fog = *ctx.accessible.last().unwrap();
            let decision = Decision {
                assignments: ctx.tasks.iter().map(|task| (task.id, fog)).collect(),
            };
            let fb = env.realize(&ctx, &decision).unwrap();
            for (_, f) in &fb.per_task {
                let r = f.rate.unwrap();
                assert!(profiles[fog].rate.unwrap().contains(r));
                assert!(profiles[fog].freq.contains(f.freq));
                assert!(1.0 / r <= constants.rho_max);
                assert!(1.0 / f.freq <= constants.phi_max);
            }
        }
    }

    #[test]
    fn realize_hand_example_with_point_supports() {
        // Task of 1e6 bits / 1e9 cycles on a node with R = 1e7 and F = 1e10
        // gives d_tr = 0.1 s, d_pr = 0.1 s; on the device d_tr = 0 exactly.
        let constants = SystemConstants::derive(1, 2, 1e7, 1e10, 5e6, 1e9, 1e-6, 1.5e-8).unwrap();
        let profiles = vec![
            NodeProfile {
                node: 0,
                rate: None,
                freq: Support::point(1e10).unwrap(),
                eta: None,
                kappa: Support::point(2e-10).unwrap(),
                budget: 0.5,
            },
            NodeProfile {
                node: 1,
                rate: Some(Support::point(1e7).unwrap()),
                freq: Support::point(1e10).unwrap(),
                eta: Some(Support::point(5e-7).unwrap()),
                kappa: Support::point(1e-8).unwrap(),
                budget: 0.5,
            },
        ];
        let params = EnvParams {
            arrivals: ArrivalSpec::Fixed(1),
            task_size: TaskSizeDist::Fixed(1e6),
            cycles_per_bit: 1000.0,
            subset_size: 1,
            coefficient_mode: CoefficientMode::PerSlot,
        };
        let mut env = Environment::build(profiles, constants, params, 3).unwrap();

        let ctx = env.next_slot(0).unwrap();
        let id = ctx.tasks[0].id;
        let offload = Decision { assignments: BTreeMap::from([(id, 1)]) };
        let fb = env.realize(&ctx, &offload).unwrap();
        let f = fb.per_task[&id];
        assert_rel(f.d_tr, 0.1, 1e-12);
        assert_rel(f.d_pr, 0.1, 1e-12);
        assert_rel(f.latency(), 0.2, 1e-12);

        let ctx = env.next_slot(1).unwrap();
        let id = ctx.tasks[0].id;
        let local = Decision { assignments: BTreeMap::from([(id, 0)]) };
        let fb = env.realize(&ctx, &local).unwrap();
        let f = fb.per_task[&id];
        assert_eq!(f.d_tr, 0.0);
        assert_eq!(f.rate, None);
    }

    #[test]
    fn true_means_cover_fog_for_rho_and_all_nodes_for_phi() {
        let env = vi_env(21);
        let means = env.true_means();
        assert!(!means.rho.contains_key(&DEVICE));
        assert_eq!(means.rho.len(), 20);
        assert_eq!(means.phi.len(), 21);
        for (n, &r) in &means.rho {
            assert!(r > 0.0 && r <= env.constants().rho_max, "rho[{n}] = {r}");
        }
        for (n, &p) in &means.phi {
            assert!(p > 0.0 && p <= env.constants().phi_max, "phi[{n}] = {p}");
        }
    }

    #[test]
    fn decision_on_inaccessible_node_is_rejected() {
        let mut env = vi_env(17);
        let ctx = env.next_slot(0).unwrap();
        let outside = (1..=20).find(|n| !ctx.is_accessible(*n)).unwrap();
        let decision = Decision {
            assignments: ctx.tasks.iter().map(|t| (t.id, outside)).collect(),
        };
        assert!(matches!(env.realize(&ctx, &decision), Err(EnvError::BadDecision(_))));
    }

    #[test]
    fn per_node_coefficient_mode_keeps_eta_kappa_constant() {
        let mut params = small_params(10);
        params.coefficient_mode = CoefficientMode::PerNode;
        let mut env = Environment::build_sampled(
            &MetaProfiles::default(),
            vi_constants(),
            params,
            23,
        )
        .unwrap();
        let mut seen: BTreeMap<NodeId, (f64, f64)> = BTreeMap::new();
        for t in 0..100 {
            let ctx = env.next_slot(t).unwrap();
            for &n in &ctx.accessible {
                if n == DEVICE {
                    continue;
                }
                let pair = (ctx.eta[&n], ctx.kappa[&n]);
                if let Some(prev) = seen.insert(n, pair) {
                    assert_eq!(prev, pair, "coefficients changed for node {n}");
                }
            }
        }
    }

    #[test]
    fn state_snapshot_resumes_exactly() {
        let mut env = vi_env(31);
        for t in 0..5 {
            env.next_slot(t).unwrap();
        }
        let state = env.state();
        let resumed = Environment::restore(
            env.profiles().to_vec(),
            env.constants().clone(),
            env.params().clone(),
            31,
            &state,
        );
        let mut resumed = resumed.unwrap();
        let a = env.next_slot(5).unwrap();
        let b = resumed.next_slot(5).unwrap();
        assert_eq!(a.accessible, b.accessible);
        assert_eq!(a.kappa, b.kappa);
        assert_eq!(
            a.tasks.iter().map(|t| t.size_bits).collect::<Vec<_>>(),
            b.tasks.iter().map(|t| t.size_bits).collect::<Vec<_>>()
        );
    }
}
