//! Best-policy identification with KL confidence regions, and the
//! boosting conversion from a weak PAC routine.

use rand::Rng;

use crate::confidence::{ball_max_value, ball_min_value, kl_radius, ThresholdMode, ThresholdSpec};
use crate::empirical::EmpiricalState;
use crate::error::{dim, param, Result};
use crate::mdp::{argmax, monte_carlo_value, sample_categorical, DiscountProfile, Policy, RewardTable, TabularMdp};
use crate::rf::Outcome;
use crate::rng::child_seed;

/// Optimistic and pessimistic values for every step; layer `H` is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceBounds {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    q_upper: Vec<f64>,
    q_lower: Vec<f64>,
    v_upper: Vec<f64>,
    v_lower: Vec<f64>,
}

impl ConfidenceBounds {
    fn zeros(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        let q = (horizon + 1) * num_states * num_actions;
        let v = (horizon + 1) * num_states;
        Self {
            horizon,
            num_states,
            num_actions,
            q_upper: vec![0.0; q],
            q_lower: vec![0.0; q],
            v_upper: vec![0.0; v],
            v_lower: vec![0.0; v],
        }
    }

    #[inline]
    fn qi(&self, h: usize, s: usize, a: usize) -> usize {
        (h * self.num_states + s) * self.num_actions + a
    }

    pub fn q_upper(&self, h: usize, s: usize, a: usize) -> f64 {
        self.q_upper[self.qi(h, s, a)]
    }

    pub fn q_lower(&self, h: usize, s: usize, a: usize) -> f64 {
        self.q_lower[self.qi(h, s, a)]
    }

    pub fn v_upper(&self, h: usize, s: usize) -> f64 {
        self.v_upper[h * self.num_states + s]
    }

    pub fn v_lower(&self, h: usize, s: usize) -> f64 {
        self.v_lower[h * self.num_states + s]
    }

    /// `V_upper_0(s) - V_lower_0(s)`.
    pub fn gap(&self, s: usize) -> f64 {
        self.v_upper(0, s) - self.v_lower(0, s)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    fn upper_row(&self, h: usize, s: usize) -> &[f64] {
        let start = self.qi(h, s, 0);
        &self.q_upper[start..start + self.num_actions]
    }
}

/// Optimistic and pessimistic Q-values over the KL confidence region around
/// the empirical kernel. Unvisited pairs range over the whole simplex.
pub fn compute_q_confidence(
    state: &EmpiricalState,
    reward: &RewardTable,
    spec: &ThresholdSpec,
    profile: &DiscountProfile,
) -> Result<ConfidenceBounds> {
    let (ns, na, horizon) = (state.num_states(), state.num_actions(), state.horizon());
    if reward.horizon() != horizon || reward.num_states() != ns || reward.num_actions() != na {
        return Err(dim("reward table does not match the empirical state"));
    }
    if profile.horizon() != horizon {
        return Err(dim("discount profile does not match the horizon"));
    }
    let mut bounds = ConfidenceBounds::zeros(horizon, ns, na);
    fill_confidence(state, reward, spec, profile, &mut bounds, &mut vec![0.0; ns]);
    Ok(bounds)
}

fn fill_confidence(
    state: &EmpiricalState,
    reward: &RewardTable,
    spec: &ThresholdSpec,
    profile: &DiscountProfile,
    b: &mut ConfidenceBounds,
    row: &mut [f64],
) {
    let (ns, na) = (b.num_states, b.num_actions);
    for h in (0..b.horizon).rev() {
        let disc = profile.factor(h);
        let (head_u, next_u) = b.v_upper.split_at_mut((h + 1) * ns);
        let (head_l, next_l) = b.v_lower.split_at_mut((h + 1) * ns);
        let next_u = &next_u[..ns];
        let next_l = &next_l[..ns];
        for s in 0..ns {
            let mut best_u = f64::NEG_INFINITY;
            let mut best_l = f64::NEG_INFINITY;
            for a in 0..na {
                let n = state.count_for(spec.mode, h, s, a);
                let alpha = kl_radius(n as f64, spec);
                state.p_hat_into(spec.mode, h, s, a, row);
                let r = reward.get(h, s, a);
                let up = r + disc * ball_max_value(row, next_u, alpha);
                let lo = r + disc * ball_min_value(row, next_l, alpha);
                let i = (h * ns + s) * na + a;
                b.q_upper[i] = up;
                b.q_lower[i] = lo;
                best_u = best_u.max(up);
                best_l = best_l.max(lo);
            }
            head_u[h * ns + s] = best_u;
            head_l[h * ns + s] = best_l;
        }
    }
}

/// Greedy policy with respect to the optimistic Q-values.
pub fn bpi_sampling_policy(bounds: &ConfidenceBounds) -> Policy {
    Policy::greedy_over(bounds.horizon, bounds.num_states, bounds.num_actions, &bounds.q_upper)
}

/// Greedy policy with respect to the pessimistic Q-values.
pub fn bpi_recommend(bounds: &ConfidenceBounds) -> Policy {
    Policy::greedy_over(bounds.horizon, bounds.num_states, bounds.num_actions, &bounds.q_lower)
}

/// `V_upper_0(s_1) - V_lower_0(s_1) <= epsilon`.
pub fn bpi_should_stop(bounds: &ConfidenceBounds, initial_state: usize, epsilon: f64) -> bool {
    bounds.gap(initial_state) <= epsilon
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpiConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub max_episodes: u64,
    /// Log a checkpoint every this many episodes; 0 logs only the first and last.
    pub log_every: u64,
}

impl BpiConfig {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(param(format!("epsilon {epsilon} must be non-negative")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(param(format!("delta {delta} outside (0, 1)")));
        }
        Ok(Self { epsilon, delta, max_episodes: u64::MAX, log_every: 0 })
    }

    pub fn with_budget(mut self, max_episodes: u64) -> Self {
        self.max_episodes = max_episodes;
        self
    }

    pub fn with_log_every(mut self, log_every: u64) -> Self {
        self.log_every = log_every;
        self
    }

    pub fn threshold_spec(&self, mdp: &TabularMdp) -> Result<ThresholdSpec> {
        ThresholdSpec::per_step(self.delta, mdp.num_states(), mdp.num_actions(), mdp.horizon())
    }
}

/// Incremental BPI-UCRL: samples with the optimistic greedy policy and
/// refreshes both bound tables after each episode.
#[derive(Debug, Clone)]
pub struct BpiAgent {
    cfg: BpiConfig,
    spec: ThresholdSpec,
    profile: DiscountProfile,
    reward: RewardTable,
    initial_state: usize,
    state: EmpiricalState,
    bounds: ConfidenceBounds,
    row: Vec<f64>,
}

impl BpiAgent {
    pub fn new(mdp: &TabularMdp, reward: &RewardTable, cfg: BpiConfig, spec: ThresholdSpec) -> Result<Self> {
        mdp.check_reward(reward)?;
        if spec.mode == ThresholdMode::StationaryPooled && !mdp.is_stationary() {
            return Err(param("pooled counts need a stationary MDP"));
        }
        let state = EmpiricalState::for_mdp(mdp);
        let profile = mdp.discount_profile();
        let bounds = compute_q_confidence(&state, reward, &spec, &profile)?;
        Ok(Self {
            cfg,
            spec,
            profile,
            reward: reward.clone(),
            initial_state: mdp.initial_state(),
            row: vec![0.0; mdp.num_states()],
            state,
            bounds,
        })
    }

    pub fn config(&self) -> &BpiConfig {
        &self.cfg
    }

    pub fn empirical(&self) -> &EmpiricalState {
        &self.state
    }

    pub fn bounds(&self) -> &ConfidenceBounds {
        &self.bounds
    }

    pub fn recommendation(&self) -> Policy {
        bpi_recommend(&self.bounds)
    }

    /// Current gap at the initial state, compared with `epsilon` by the stopping rule.
    pub fn stop_value(&self) -> f64 {
        self.bounds.gap(self.initial_state)
    }

    pub fn should_stop(&self) -> bool {
        bpi_should_stop(&self.bounds, self.initial_state, self.cfg.epsilon)
    }

    /// Plays one episode with the optimistic greedy policy and absorbs it.
    pub fn explore_episode<R: Rng + ?Sized>(&mut self, mdp: &TabularMdp, rng: &mut R) {
        let mut s = mdp.initial_state();
        for h in 0..mdp.horizon() {
            let a = argmax(self.bounds.upper_row(h, s));
            let next = sample_categorical(mdp.transition_row(h, s, a), rng);
            self.state.record_transition(h, s, a, next);
            s = next;
        }
        self.state.finish_episode();
        fill_confidence(&self.state, &self.reward, &self.spec, &self.profile, &mut self.bounds, &mut self.row);
    }

    fn checkpoint(&self) -> BpiCheckpoint {
        let (upper, lower) = (self.bounds.v_upper(0, self.initial_state), self.bounds.v_lower(0, self.initial_state));
        BpiCheckpoint { t: self.state.episodes(), v_upper: upper, v_lower: lower, gap: upper - lower }
    }
}

/// Snapshot written to the checkpoint log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpiCheckpoint {
    pub t: u64,
    pub v_upper: f64,
    pub v_lower: f64,
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct BpiRun {
    /// Pessimistic greedy policy at the end of the run.
    pub recommendation: Policy,
    pub outcome: Outcome,
    pub log: Vec<BpiCheckpoint>,
    pub state: EmpiricalState,
    pub bounds: ConfidenceBounds,
}

/// Runs BPI-UCRL until the gap at the initial state is at most `epsilon`
/// or the budget is spent; either way the current recommendation is returned.
pub fn run_bpi_ucrl<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    reward: &RewardTable,
    cfg: &BpiConfig,
    spec: &ThresholdSpec,
    rng: &mut R,
) -> Result<BpiRun> {
    let mut agent = BpiAgent::new(mdp, reward, *cfg, *spec)?;
    let mut log = vec![agent.checkpoint()];
    let outcome = loop {
        let t = agent.state.episodes();
        if agent.should_stop() {
            break Outcome::Stopped { tau: t };
        }
        if t >= cfg.max_episodes {
            break Outcome::BudgetExhausted { episodes: t };
        }
        agent.explore_episode(mdp, rng);
        if cfg.log_every > 0 && agent.state.episodes() % cfg.log_every == 0 {
            log.push(agent.checkpoint());
        }
    };
    if log.last().map(|c| c.t) != Some(agent.state.episodes()) {
        log.push(agent.checkpoint());
    }
    Ok(BpiRun { recommendation: agent.recommendation(), outcome, log, state: agent.state, bounds: agent.bounds })
}

/// Rollouts per candidate so that all `m` value estimates are within
/// `epsilon` with probability `1 - delta`: `range^2 / (2 epsilon^2) log(m / delta)`.
pub fn required_rollouts(value_range: f64, epsilon: f64, m: usize, delta: f64) -> Result<usize> {
    if m == 0 {
        return Err(param("at least one instance is needed"));
    }
    if !(epsilon > 0.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(param("epsilon must be positive and delta in (0, 1)"));
    }
    let n = value_range * value_range / (2.0 * epsilon * epsilon) * (m as f64 / delta).ln();
    Ok((n.ceil() as usize).max(1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub policy: Policy,
    /// Index of the chosen instance.
    pub index: usize,
    /// Monte Carlo value estimate of every candidate.
    pub estimates: Vec<f64>,
}

/// Runs `m` independent instances of `weak_agent`, each with its own seed,
/// estimates every returned policy with `n` rollouts and keeps the best
/// estimate (lowest index on ties).
pub fn boost_and_select<R: Rng + ?Sized>(
    mut weak_agent: impl FnMut(u64) -> Result<Policy>,
    m: usize,
    n: usize,
    mdp: &TabularMdp,
    reward: &RewardTable,
    rng: &mut R,
) -> Result<Selection> {
    if m == 0 {
        return Err(param("at least one instance is needed"));
    }
    if n == 0 {
        return Err(param("at least one rollout is needed"));
    }
    let master: u64 = rng.gen();
    let mut candidates = Vec::with_capacity(m);
    let mut estimates = Vec::with_capacity(m);
    for i in 0..m {
        let policy = weak_agent(child_seed(master, &[i as u64, 0]))?;
        let mut eval_rng = crate::rng::seeded(child_seed(master, &[i as u64, 1]));
        estimates.push(monte_carlo_value(mdp, &policy, reward, n, &mut eval_rng)?.mean);
        candidates.push(policy);
    }
    let index = argmax(&estimates);
    Ok(Selection { policy: candidates.swap_remove(index), index, estimates })
}
