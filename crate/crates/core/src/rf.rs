//! Reward-free exploration: RF-UCRL with error-bound bonuses and the
//! W-bonus variant.

use rand::Rng;

use crate::confidence::{ThresholdMode, ThresholdSpec};
use crate::empirical::EmpiricalState;
use crate::error::{param, Result};
use crate::mdp::{argmax, eval_policy, sample_categorical, DiscountProfile, Policy, RewardTable, TabularMdp};

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// The stopping rule fired after `tau` episodes.
    Stopped { tau: u64 },
    /// The episode budget ran out before the rule fired.
    BudgetExhausted { episodes: u64 },
}

impl Outcome {
    pub fn tau(&self) -> Option<u64> {
        match *self {
            Outcome::Stopped { tau } => Some(tau),
            Outcome::BudgetExhausted { .. } => None,
        }
    }

    pub fn episodes(&self) -> u64 {
        match *self {
            Outcome::Stopped { tau } => tau,
            Outcome::BudgetExhausted { episodes } => episodes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RfConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub clipped: bool,
    pub stationary_pooled: bool,
    /// Maximum number of exploration episodes.
    pub max_episodes: u64,
    /// Log a checkpoint every this many episodes; 0 logs only the first and last.
    pub log_every: u64,
}

impl RfConfig {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(param(format!("epsilon {epsilon} must be positive")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(param(format!("delta {delta} outside (0, 1)")));
        }
        Ok(Self { epsilon, delta, clipped: true, stationary_pooled: false, max_episodes: u64::MAX, log_every: 0 })
    }

    pub fn unclipped(mut self) -> Self {
        self.clipped = false;
        self
    }

    pub fn pooled(mut self) -> Self {
        self.stationary_pooled = true;
        self
    }

    pub fn with_budget(mut self, max_episodes: u64) -> Self {
        self.max_episodes = max_episodes;
        self
    }

    pub fn with_log_every(mut self, log_every: u64) -> Self {
        self.log_every = log_every;
        self
    }

    pub fn mode(&self) -> ThresholdMode {
        if self.stationary_pooled {
            ThresholdMode::StationaryPooled
        } else {
            ThresholdMode::PerStep
        }
    }

    /// Threshold matching this configuration on `mdp`.
    pub fn threshold_spec(&self, mdp: &TabularMdp) -> Result<ThresholdSpec> {
        ThresholdSpec::new(self.delta, mdp.num_states(), mdp.num_actions(), mdp.horizon(), self.mode())
    }
}

/// `E_h(s, a)` for `h` in `0..=H`; layer `H` is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorBoundTable {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    values: Vec<f64>,
}

impl ErrorBoundTable {
    fn zeros(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        Self { horizon, num_states, num_actions, values: vec![0.0; (horizon + 1) * num_states * num_actions] }
    }

    #[inline]
    pub fn get(&self, h: usize, s: usize, a: usize) -> f64 {
        self.values[(h * self.num_states + s) * self.num_actions + a]
    }

    /// Bounds of every action at `(h, s)`.
    #[inline]
    pub fn row(&self, h: usize, s: usize) -> &[f64] {
        let start = (h * self.num_states + s) * self.num_actions;
        &self.values[start..start + self.num_actions]
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    fn greedy_action(&self, h: usize, s: usize) -> usize {
        argmax(self.row(h, s))
    }
}

/// Backward recursion `E_h = bonus + gamma_h sum p_hat max_b E_{h+1}`, with
/// `min(clip, .)` when `clipped`. Unvisited pairs take `clip` when clipped.
fn backward_bounds(
    state: &EmpiricalState,
    mode: ThresholdMode,
    clipped: bool,
    table: &mut ErrorBoundTable,
    clip: impl Fn(usize) -> f64,
    propagation: impl Fn(usize) -> f64,
    bonus: impl Fn(usize, u64) -> f64,
) {
    let (ns, na) = (table.num_states, table.num_actions);
    let mut next_max = vec![0.0; ns];
    for h in (0..table.horizon).rev() {
        for (s, slot) in next_max.iter_mut().enumerate() {
            *slot = table.row(h + 1, s).iter().cloned().fold(0.0, f64::max);
        }
        let cap = clip(h);
        let weight = propagation(h);
        // unclipped: unvisited pairs take the one-sample bonus over the worst
        // next state, which dominates every visited pair at this step
        let unvisited = if clipped {
            cap
        } else {
            cap.max(bonus(h, 1) + weight * next_max.iter().cloned().fold(0.0, f64::max))
        };
        for s in 0..ns {
            for a in 0..na {
                let n = state.count_for(mode, h, s, a);
                let value = if n == 0 {
                    unvisited
                } else {
                    let future: f64 = state
                        .next_counts_for(mode, h, s, a)
                        .iter()
                        .zip(&next_max)
                        .filter(|(&c, _)| c > 0)
                        .map(|(&c, &m)| c as f64 * m)
                        .sum::<f64>()
                        / n as f64;
                    let raw = bonus(h, n) + weight * future;
                    if clipped {
                        raw.min(cap)
                    } else {
                        raw
                    }
                };
                table.values[(h * ns + s) * na + a] = value;
            }
        }
    }
}

/// Error bounds `E_h(s, a)` of RF-UCRL from the current counts.
pub fn compute_error_bounds(
    state: &EmpiricalState,
    cfg: &RfConfig,
    spec: &ThresholdSpec,
    profile: &DiscountProfile,
) -> ErrorBoundTable {
    let mut table = ErrorBoundTable::zeros(state.horizon(), state.num_states(), state.num_actions());
    fill_error_bounds(state, cfg, spec, profile, &mut table);
    table
}

fn fill_error_bounds(
    state: &EmpiricalState,
    cfg: &RfConfig,
    spec: &ThresholdSpec,
    profile: &DiscountProfile,
    table: &mut ErrorBoundTable,
) {
    backward_bounds(
        state,
        cfg.mode(),
        cfg.clipped,
        table,
        |h| profile.future_ceiling(h),
        |h| profile.factor(h),
        |h, n| {
            let n = n as f64;
            profile.future_ceiling(h) * (2.0 * spec.beta(n) / n).sqrt()
        },
    );
}

/// W table of the bonus-based variant (undiscounted):
/// `W_h = min(H, 9 H^2 beta(n)/n + (1 + 1/H) sum p_hat max_b W_{h+1})`.
pub fn compute_w_bounds(state: &EmpiricalState, spec: &ThresholdSpec, horizon: usize) -> ErrorBoundTable {
    let mut table = ErrorBoundTable::zeros(horizon, state.num_states(), state.num_actions());
    fill_w_bounds(state, spec, &mut table);
    table
}

fn fill_w_bounds(state: &EmpiricalState, spec: &ThresholdSpec, table: &mut ErrorBoundTable) {
    let hf = table.horizon as f64;
    backward_bounds(
        state,
        spec.mode,
        true,
        table,
        |_| hf,
        |_| 1.0 + 1.0 / hf,
        |_, n| {
            let n = n as f64;
            9.0 * hf * hf * spec.beta(n) / n
        },
    );
}

/// Greedy policy over the bounds of steps `0..H`; ties go to the lowest action.
pub fn greedy_policy(bounds: &ErrorBoundTable) -> Policy {
    Policy::greedy_over(bounds.horizon, bounds.num_states, bounds.num_actions, &bounds.values)
}

/// `E_0(s_1, pi_0(s_1)) <= epsilon / 2`.
pub fn rf_should_stop(bounds: &ErrorBoundTable, policy: &Policy, initial_state: usize, epsilon: f64) -> bool {
    bounds.get(0, initial_state, policy.action(0, initial_state)) <= epsilon / 2.0
}

/// `2e sqrt(W) + W` at `(s_1, pi_0(s_1))`, compared with `epsilon / 2` by the W rule.
pub fn w_stop_value(bounds: &ErrorBoundTable, initial_state: usize) -> f64 {
    let w = bounds.row(0, initial_state).iter().cloned().fold(0.0, f64::max);
    2.0 * std::f64::consts::E * w.sqrt() + w
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rule {
    ErrorBound,
    WBonus,
}

/// Incremental RF-UCRL (or W-bonus) explorer: greedy sampling with respect to
/// the current bounds, which are refreshed after each episode.
#[derive(Debug, Clone)]
pub struct RfAgent {
    cfg: RfConfig,
    spec: ThresholdSpec,
    profile: DiscountProfile,
    initial_state: usize,
    rule: Rule,
    state: EmpiricalState,
    bounds: ErrorBoundTable,
}

impl RfAgent {
    pub fn new(mdp: &TabularMdp, cfg: RfConfig, spec: ThresholdSpec) -> Result<Self> {
        Self::build(mdp, cfg, spec, Rule::ErrorBound)
    }

    /// The W-bonus variant; requires an undiscounted MDP.
    pub fn new_w_bonus(mdp: &TabularMdp, cfg: RfConfig, spec: ThresholdSpec) -> Result<Self> {
        if mdp.gamma() != 1.0 {
            return Err(param(format!("the W-bonus rule needs gamma = 1, got {}", mdp.gamma())));
        }
        Self::build(mdp, cfg, spec, Rule::WBonus)
    }

    fn build(mdp: &TabularMdp, cfg: RfConfig, spec: ThresholdSpec, rule: Rule) -> Result<Self> {
        if cfg.stationary_pooled && !mdp.is_stationary() {
            return Err(param("pooled counts need a stationary MDP"));
        }
        let state = EmpiricalState::for_mdp(mdp);
        let bounds = ErrorBoundTable::zeros(mdp.horizon(), mdp.num_states(), mdp.num_actions());
        let mut agent = Self {
            cfg,
            spec,
            profile: mdp.discount_profile(),
            initial_state: mdp.initial_state(),
            rule,
            state,
            bounds,
        };
        agent.refresh();
        Ok(agent)
    }

    fn refresh(&mut self) {
        match self.rule {
            Rule::ErrorBound => fill_error_bounds(&self.state, &self.cfg, &self.spec, &self.profile, &mut self.bounds),
            Rule::WBonus => fill_w_bounds(&self.state, &self.spec, &mut self.bounds),
        }
    }

    pub fn config(&self) -> &RfConfig {
        &self.cfg
    }

    pub fn empirical(&self) -> &EmpiricalState {
        &self.state
    }

    pub fn into_empirical(self) -> EmpiricalState {
        self.state
    }

    pub fn bounds(&self) -> &ErrorBoundTable {
        &self.bounds
    }

    pub fn policy(&self) -> Policy {
        greedy_policy(&self.bounds)
    }

    /// The quantity the stopping rule compares with `epsilon / 2`.
    pub fn stop_value(&self) -> f64 {
        match self.rule {
            Rule::ErrorBound => self.bounds.row(0, self.initial_state).iter().cloned().fold(0.0, f64::max),
            Rule::WBonus => w_stop_value(&self.bounds, self.initial_state),
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stop_value() <= self.cfg.epsilon / 2.0
    }

    /// Plays one episode with the greedy policy and absorbs it.
    pub fn explore_episode<R: Rng + ?Sized>(&mut self, mdp: &TabularMdp, rng: &mut R) {
        let mut s = mdp.initial_state();
        for h in 0..mdp.horizon() {
            let a = self.bounds.greedy_action(h, s);
            let next = sample_categorical(mdp.transition_row(h, s, a), rng);
            self.state.record_transition(h, s, a, next);
            s = next;
        }
        self.state.finish_episode();
        self.refresh();
    }

    fn checkpoint(&self) -> RfCheckpoint {
        RfCheckpoint {
            t: self.state.episodes(),
            stop_value: self.stop_value(),
            step_one: self.bounds.row(0, self.initial_state).to_vec(),
            visits: self.state.state_visits(),
        }
    }
}

/// Snapshot written to the checkpoint log.
#[derive(Debug, Clone, PartialEq)]
pub struct RfCheckpoint {
    pub t: u64,
    pub stop_value: f64,
    /// Bounds of every action at the initial state and step 0.
    pub step_one: Vec<f64>,
    pub visits: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct RfRun {
    pub state: EmpiricalState,
    pub outcome: Outcome,
    pub log: Vec<RfCheckpoint>,
}

/// Runs RF-UCRL until its stopping rule fires or the episode budget is spent.
pub fn run_rf_ucrl<R: Rng + ?Sized>(mdp: &TabularMdp, cfg: &RfConfig, spec: &ThresholdSpec, rng: &mut R) -> Result<RfRun> {
    drive(RfAgent::new(mdp, *cfg, *spec)?, mdp, rng)
}

/// Runs the W-bonus variant; errors unless the MDP is undiscounted.
pub fn run_rf_express<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    cfg: &RfConfig,
    spec: &ThresholdSpec,
    rng: &mut R,
) -> Result<RfRun> {
    drive(RfAgent::new_w_bonus(mdp, *cfg, *spec)?, mdp, rng)
}

fn drive<R: Rng + ?Sized>(mut agent: RfAgent, mdp: &TabularMdp, rng: &mut R) -> Result<RfRun> {
    let mut log = vec![agent.checkpoint()];
    let budget = agent.cfg.max_episodes;
    let every = agent.cfg.log_every;
    let outcome = loop {
        let t = agent.state.episodes();
        if agent.should_stop() {
            break Outcome::Stopped { tau: t };
        }
        if t >= budget {
            break Outcome::BudgetExhausted { episodes: t };
        }
        agent.explore_episode(mdp, rng);
        if every > 0 && agent.state.episodes() % every == 0 {
            log.push(agent.checkpoint());
        }
    };
    if log.last().map(|c| c.t) != Some(agent.state.episodes()) {
        log.push(agent.checkpoint());
    }
    Ok(RfRun { state: agent.state, outcome, log })
}

/// Result of comparing the true estimation error with the error bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DominanceReport {
    /// Largest `e_hat - E` over steps, pairs, policies and rewards.
    pub max_excess: f64,
    /// Whether `n KL(p_hat, p) <= beta(n)` held on every visited pair.
    pub event_held: bool,
    pub samples: usize,
}

/// Checks `|Q_hat^pi - Q^pi| <= E` on random policies and reward tables,
/// with both value functions computed exactly.
pub fn verify_error_dominance<R: Rng + ?Sized>(
    state: &EmpiricalState,
    mdp: &TabularMdp,
    cfg: &RfConfig,
    spec: &ThresholdSpec,
    num_policies: usize,
    num_rewards: usize,
    rng: &mut R,
) -> Result<DominanceReport> {
    let bounds = compute_error_bounds(state, cfg, spec, &mdp.discount_profile());
    let empirical = state.empirical_mdp(mdp, cfg.mode())?;
    let (ns, na, horizon) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let mut max_excess = f64::NEG_INFINITY;
    let mut samples = 0;
    for _ in 0..num_rewards {
        let reward = RewardTable::random(horizon, ns, na, rng);
        for _ in 0..num_policies {
            let policy = Policy::random(horizon, ns, na, rng);
            let truth = eval_policy(mdp, &policy, &reward)?;
            let estimate = eval_policy(&empirical, &policy, &reward)?;
            for h in 0..horizon {
                for s in 0..ns {
                    for a in 0..na {
                        let err = (estimate.q(h, s, a) - truth.q(h, s, a)).abs();
                        max_excess = max_excess.max(err - bounds.get(h, s, a));
                    }
                }
            }
            samples += 1;
        }
    }
    Ok(DominanceReport { max_excess, event_held: state.kl_event_holds(mdp, spec), samples })
}
