//! Tabular episodic MDPs with exact planning, policy evaluation and simulation.
//!
//! Steps are 0-indexed throughout: step `0` is the first decision of an
//! episode and step `horizon` is the terminal layer whose values are zero.

use rand::Rng;

use crate::error::{dim, param, Result};

/// Maximum allowed deviation of a transition row sum from one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// `sigma(h) = 1 + gamma + ... + gamma^(h-1)`, the largest value an `h`-step
/// tail with rewards in `[0, 1]` can take.
pub fn sigma(gamma: f64, h: usize) -> f64 {
    let mut acc = 0.0;
    let mut pow = 1.0;
    for _ in 0..h {
        acc += pow;
        pow *= gamma;
    }
    acc
}

/// Deterministic reward table `r_h(s, a)` with entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTable {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    values: Vec<f64>,
}

impl RewardTable {
    pub fn new(horizon: usize, num_states: usize, num_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != horizon * num_states * num_actions {
            return Err(dim(format!(
                "reward table has {} entries, expected {}x{}x{}",
                values.len(),
                horizon,
                num_states,
                num_actions
            )));
        }
        if let Some(bad) = values.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(param(format!("reward {bad} outside [0, 1]")));
        }
        Ok(Self { horizon, num_states, num_actions, values })
    }

    pub fn zeros(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        Self { horizon, num_states, num_actions, values: vec![0.0; horizon * num_states * num_actions] }
    }

    pub fn from_fn(
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(horizon * num_states * num_actions);
        for h in 0..horizon {
            for s in 0..num_states {
                for a in 0..num_actions {
                    values.push(f(h, s, a));
                }
            }
        }
        Self::new(horizon, num_states, num_actions, values)
    }

    /// Rewards drawn i.i.d. uniform on `[0, 1)`.
    pub fn random<R: Rng + ?Sized>(horizon: usize, num_states: usize, num_actions: usize, rng: &mut R) -> Self {
        let values = (0..horizon * num_states * num_actions).map(|_| rng.gen::<f64>()).collect();
        Self { horizon, num_states, num_actions, values }
    }

    #[inline]
    pub fn get(&self, h: usize, s: usize, a: usize) -> f64 {
        self.values[(h * self.num_states + s) * self.num_actions + a]
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
}

/// Deterministic, time-dependent policy `pi_h(s)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Policy {
    horizon: usize,
    num_states: usize,
    actions: Vec<usize>,
}

impl Policy {
    pub fn new(horizon: usize, num_states: usize, num_actions: usize, actions: Vec<usize>) -> Result<Self> {
        if actions.len() != horizon * num_states {
            return Err(dim(format!(
                "policy has {} entries, expected {}x{}",
                actions.len(),
                horizon,
                num_states
            )));
        }
        if let Some(bad) = actions.iter().find(|&&a| a >= num_actions) {
            return Err(param(format!("action {bad} out of range 0..{num_actions}")));
        }
        Ok(Self { horizon, num_states, actions })
    }

    /// Policy that plays `action` everywhere.
    pub fn constant(horizon: usize, num_states: usize, action: usize) -> Self {
        Self { horizon, num_states, actions: vec![action; horizon * num_states] }
    }

    pub fn from_fn(horizon: usize, num_states: usize, mut f: impl FnMut(usize, usize) -> usize) -> Self {
        let mut actions = Vec::with_capacity(horizon * num_states);
        for h in 0..horizon {
            for s in 0..num_states {
                actions.push(f(h, s));
            }
        }
        Self { horizon, num_states, actions }
    }

    /// A deterministic policy with every entry drawn uniformly.
    pub fn random<R: Rng + ?Sized>(horizon: usize, num_states: usize, num_actions: usize, rng: &mut R) -> Self {
        Self::from_fn(horizon, num_states, |_, _| rng.gen_range(0..num_actions))
    }

    /// Greedy policy over a `[h][s][a]` table; ties go to the lowest action.
    pub(crate) fn greedy_over(horizon: usize, num_states: usize, num_actions: usize, table: &[f64]) -> Self {
        Self::from_fn(horizon, num_states, |h, s| {
            let base = (h * num_states + s) * num_actions;
            argmax(&table[base..base + num_actions])
        })
    }

    #[inline]
    pub fn action(&self, h: usize, s: usize) -> usize {
        self.actions[h * self.num_states + s]
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }
}

/// Index of the largest entry, lowest index on ties.
#[inline]
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in values.iter().enumerate().skip(1) {
        if x > values[best] {
            best = i;
        }
    }
    best
}

/// Finite-horizon tabular MDP with per-step transition kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    gamma: f64,
    /// Factor applied to the next-step value in the step-`h` backup. All equal
    /// to `gamma` except for MDPs built by the initial-state reduction.
    discounts: Vec<f64>,
    /// Flattened `[h][s][a][s']`.
    transitions: Vec<f64>,
    rewards: RewardTable,
    initial_state: usize,
    stationary: bool,
}

impl TabularMdp {
    /// Builds a non-stationary MDP from a flattened `[h][s][a][s']` kernel.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        gamma: f64,
        transitions: Vec<f64>,
        rewards: RewardTable,
        initial_state: usize,
    ) -> Result<Self> {
        let discounts = vec![gamma; horizon];
        Self::build(num_states, num_actions, horizon, gamma, discounts, transitions, rewards, initial_state, false)
    }

    /// Builds an MDP whose kernel `[s][a][s']` is shared by every step.
    pub fn new_stationary(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        gamma: f64,
        kernel: &[f64],
        rewards: RewardTable,
        initial_state: usize,
    ) -> Result<Self> {
        let layer = num_states * num_actions * num_states;
        if kernel.len() != layer {
            return Err(dim(format!("stationary kernel has {} entries, expected {layer}", kernel.len())));
        }
        let transitions = kernel.repeat(horizon);
        let discounts = vec![gamma; horizon];
        Self::build(num_states, num_actions, horizon, gamma, discounts, transitions, rewards, initial_state, true)
    }

    /// Same as [`TabularMdp::new`] with an explicit per-step discount schedule.
    #[allow(clippy::too_many_arguments)]
    pub fn with_discounts(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        gamma: f64,
        discounts: Vec<f64>,
        transitions: Vec<f64>,
        rewards: RewardTable,
        initial_state: usize,
    ) -> Result<Self> {
        if discounts.len() != horizon {
            return Err(dim(format!("{} discounts for horizon {horizon}", discounts.len())));
        }
        if discounts.iter().any(|&d| !(d > 0.0 && d <= 1.0)) {
            return Err(param("step discounts must lie in (0, 1]"));
        }
        Self::build(num_states, num_actions, horizon, gamma, discounts, transitions, rewards, initial_state, false)
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        gamma: f64,
        discounts: Vec<f64>,
        transitions: Vec<f64>,
        rewards: RewardTable,
        initial_state: usize,
        stationary: bool,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 || horizon == 0 {
            return Err(param("num_states, num_actions and horizon must be positive"));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(param(format!("discount {gamma} outside (0, 1]")));
        }
        if initial_state >= num_states {
            return Err(param(format!("initial state {initial_state} out of range")));
        }
        let expected = horizon * num_states * num_actions * num_states;
        if transitions.len() != expected {
            return Err(dim(format!("kernel has {} entries, expected {expected}", transitions.len())));
        }
        if rewards.horizon() != horizon || rewards.num_states() != num_states || rewards.num_actions() != num_actions {
            return Err(dim("reward table shape does not match the MDP"));
        }
        for (i, row) in transitions.chunks_exact(num_states).enumerate() {
            if row.iter().any(|&p| !(p >= 0.0)) {
                return Err(param(format!("transition row {i} has a negative or NaN entry")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(param(format!("transition row {i} sums to {total}")));
            }
        }
        let mdp = Self {
            num_states,
            num_actions,
            horizon,
            gamma,
            discounts,
            transitions,
            rewards,
            initial_state,
            stationary,
        };
        if stationary {
            let layer = num_states * num_actions * num_states;
            let first = &mdp.transitions[..layer];
            let identical = mdp
                .transitions
                .chunks_exact(layer)
                .all(|l| l.iter().zip(first).all(|(x, y)| x.to_bits() == y.to_bits()));
            if !identical {
                return Err(param("stationary flag set but kernels differ across steps"));
            }
        }
        Ok(mdp)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn is_stationary(&self) -> bool {
        self.stationary
    }

    pub fn rewards(&self) -> &RewardTable {
        &self.rewards
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transitions
    }

    /// Discount applied to the step-`h + 1` value in the step-`h` backup.
    #[inline]
    pub fn discount(&self, h: usize) -> f64 {
        self.discounts[h]
    }

    pub fn discount_profile(&self) -> DiscountProfile {
        DiscountProfile::from_factors(self.discounts.clone())
    }

    #[inline]
    pub fn transition_row(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let start = ((h * self.num_states + s) * self.num_actions + a) * self.num_states;
        &self.transitions[start..start + self.num_states]
    }

    /// Copy of this MDP with a different reward table.
    pub fn with_rewards(&self, rewards: RewardTable) -> Result<Self> {
        self.check_reward(&rewards)?;
        Ok(Self { rewards, ..self.clone() })
    }

    pub(crate) fn check_reward(&self, reward: &RewardTable) -> Result<()> {
        if reward.horizon() != self.horizon
            || reward.num_states() != self.num_states
            || reward.num_actions() != self.num_actions
        {
            return Err(dim(format!(
                "reward table is {}x{}x{}, MDP is {}x{}x{}",
                reward.horizon(),
                reward.num_states(),
                reward.num_actions(),
                self.horizon,
                self.num_states,
                self.num_actions
            )));
        }
        Ok(())
    }

    pub(crate) fn check_policy(&self, policy: &Policy) -> Result<()> {
        if policy.horizon() != self.horizon || policy.num_states() != self.num_states {
            return Err(dim(format!(
                "policy is {}x{}, MDP is {}x{}",
                policy.horizon(),
                policy.num_states(),
                self.horizon,
                self.num_states
            )));
        }
        if policy.actions().iter().any(|&a| a >= self.num_actions) {
            return Err(param("policy action out of range"));
        }
        Ok(())
    }
}

/// Per-step discount factors and the value ceilings they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscountProfile {
    factors: Vec<f64>,
    /// `ceilings[h]` is the largest return collectable from step `h` on.
    ceilings: Vec<f64>,
}

impl DiscountProfile {
    pub fn uniform(gamma: f64, horizon: usize) -> Self {
        Self::from_factors(vec![gamma; horizon])
    }

    pub fn from_factors(factors: Vec<f64>) -> Self {
        let horizon = factors.len();
        let mut ceilings = vec![0.0; horizon + 1];
        for h in (0..horizon).rev() {
            ceilings[h] = 1.0 + factors[h] * ceilings[h + 1];
        }
        Self { factors, ceilings }
    }

    pub fn horizon(&self) -> usize {
        self.factors.len()
    }

    #[inline]
    pub fn factor(&self, h: usize) -> f64 {
        self.factors[h]
    }

    /// Largest return from step `h` onwards; `sigma(H - h)` for a uniform discount.
    #[inline]
    pub fn ceiling(&self, h: usize) -> f64 {
        self.ceilings[h]
    }

    /// Largest discounted future contribution at step `h`; `gamma * sigma(H - h - 1)`.
    #[inline]
    pub fn future_ceiling(&self, h: usize) -> f64 {
        self.factors[h] * self.ceilings[h + 1]
    }
}

/// `Q_h(s, a)` and `V_h(s)` for `h` in `0..=H`; layer `H` is identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    q: Vec<f64>,
    v: Vec<f64>,
}

impl ValueTable {
    fn zeros(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        Self {
            horizon,
            num_states,
            num_actions,
            q: vec![0.0; (horizon + 1) * num_states * num_actions],
            v: vec![0.0; (horizon + 1) * num_states],
        }
    }

    #[inline]
    pub fn q(&self, h: usize, s: usize, a: usize) -> f64 {
        self.q[(h * self.num_states + s) * self.num_actions + a]
    }

    #[inline]
    pub fn v(&self, h: usize, s: usize) -> f64 {
        self.v[h * self.num_states + s]
    }

    pub fn v_layer(&self, h: usize) -> &[f64] {
        &self.v[h * self.num_states..(h + 1) * self.num_states]
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
}

/// Value of `policy` under `reward` by backward induction.
pub fn eval_policy(mdp: &TabularMdp, policy: &Policy, reward: &RewardTable) -> Result<ValueTable> {
    mdp.check_policy(policy)?;
    mdp.check_reward(reward)?;
    let (ns, na, horizon) = (mdp.num_states, mdp.num_actions, mdp.horizon);
    let mut table = ValueTable::zeros(horizon, ns, na);
    for h in (0..horizon).rev() {
        let disc = mdp.discount(h);
        for s in 0..ns {
            for a in 0..na {
                let next = table.v_layer(h + 1);
                let future: f64 = mdp.transition_row(h, s, a).iter().zip(next).map(|(p, v)| p * v).sum();
                table.q[(h * ns + s) * na + a] = reward.get(h, s, a) + disc * future;
            }
            table.v[h * ns + s] = table.q(h, s, policy.action(h, s));
        }
    }
    Ok(table)
}

/// Optimal values and the greedy (lowest-index tie-break) optimal policy.
pub fn plan_optimal(mdp: &TabularMdp, reward: &RewardTable) -> Result<(Policy, ValueTable)> {
    mdp.check_reward(reward)?;
    let (ns, na, horizon) = (mdp.num_states, mdp.num_actions, mdp.horizon);
    let mut table = ValueTable::zeros(horizon, ns, na);
    let mut actions = vec![0; horizon * ns];
    for h in (0..horizon).rev() {
        let disc = mdp.discount(h);
        for s in 0..ns {
            for a in 0..na {
                let next = table.v_layer(h + 1);
                let future: f64 = mdp.transition_row(h, s, a).iter().zip(next).map(|(p, v)| p * v).sum();
                table.q[(h * ns + s) * na + a] = reward.get(h, s, a) + disc * future;
            }
            let base = (h * ns + s) * na;
            let best = argmax(&table.q[base..base + na]);
            actions[h * ns + s] = best;
            table.v[h * ns + s] = table.q[base + best];
        }
    }
    Ok((Policy { horizon, num_states: ns, actions }, table))
}

/// One simulated step of an episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
    pub reward: Option<f64>,
}

/// An `H`-step episode started from the MDP's initial state.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Draws an index from a categorical distribution by inverse CDF.
#[inline]
pub(crate) fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    // rounding left u above the accumulated mass
    last_positive
}

/// Simulates one episode of `policy`, recording the MDP's rewards.
pub fn sample_episode<R: Rng + ?Sized>(mdp: &TabularMdp, policy: &Policy, rng: &mut R) -> Result<Trajectory> {
    mdp.check_policy(policy)?;
    Ok(sample_episode_unchecked(mdp, policy, rng))
}

pub(crate) fn sample_episode_unchecked<R: Rng + ?Sized>(mdp: &TabularMdp, policy: &Policy, rng: &mut R) -> Trajectory {
    let mut steps = Vec::with_capacity(mdp.horizon);
    let mut state = mdp.initial_state;
    for h in 0..mdp.horizon {
        let action = policy.action(h, state);
        let next_state = sample_categorical(mdp.transition_row(h, state, action), rng);
        steps.push(Step { state, action, next_state, reward: Some(mdp.rewards.get(h, state, action)) });
        state = next_state;
    }
    Trajectory { steps }
}

/// Reach probabilities `p_h^pi(s, a)` for every step.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyTable {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl OccupancyTable {
    fn zeros(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        Self { horizon, num_states, num_actions, probs: vec![0.0; horizon * num_states * num_actions] }
    }

    #[inline]
    pub fn get(&self, h: usize, s: usize, a: usize) -> f64 {
        self.probs[(h * self.num_states + s) * self.num_actions + a]
    }

    pub fn layer(&self, h: usize) -> &[f64] {
        let w = self.num_states * self.num_actions;
        &self.probs[h * w..(h + 1) * w]
    }

    pub fn values(&self) -> &[f64] {
        &self.probs
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
}

/// Forward recursion of state-action reach probabilities under `policy`.
pub fn occupancy(mdp: &TabularMdp, policy: &Policy) -> Result<OccupancyTable> {
    mdp.check_policy(policy)?;
    let (ns, na, horizon) = (mdp.num_states, mdp.num_actions, mdp.horizon);
    let mut occ = OccupancyTable::zeros(horizon, ns, na);
    let s1 = mdp.initial_state;
    occ.probs[s1 * na + policy.action(0, s1)] = 1.0;
    let mut next_states = vec![0.0; ns];
    for h in 0..horizon.saturating_sub(1) {
        next_states.iter_mut().for_each(|x| *x = 0.0);
        for s in 0..ns {
            for a in 0..na {
                let mass = occ.get(h, s, a);
                if mass == 0.0 {
                    continue;
                }
                for (acc, p) in next_states.iter_mut().zip(mdp.transition_row(h, s, a)) {
                    *acc += mass * p;
                }
            }
        }
        for (s, &mass) in next_states.iter().enumerate() {
            let a = policy.action(h + 1, s);
            occ.probs[((h + 1) * ns + s) * na + a] = mass;
        }
    }
    Ok(occ)
}

/// Accumulated expected visit counts `n̄_h^t(s, a) = Σ_{i ≤ t} p_h^i(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoCounts {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    episodes: usize,
    counts: Vec<f64>,
}

impl PseudoCounts {
    pub fn new(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        Self { horizon, num_states, num_actions, episodes: 0, counts: vec![0.0; horizon * num_states * num_actions] }
    }

    pub fn add(&mut self, occ: &OccupancyTable) -> Result<()> {
        if occ.probs.len() != self.counts.len() {
            return Err(dim("occupancy table shape does not match pseudo-counts"));
        }
        for (c, p) in self.counts.iter_mut().zip(&occ.probs) {
            *c += p;
        }
        self.episodes += 1;
        Ok(())
    }

    #[inline]
    pub fn get(&self, h: usize, s: usize, a: usize) -> f64 {
        self.counts[(h * self.num_states + s) * self.num_actions + a]
    }

    pub fn episodes(&self) -> usize {
        self.episodes
    }

    pub fn values(&self) -> &[f64] {
        &self.counts
    }
}

/// Sums a history of occupancy tables. An empty history needs an explicit
/// shape, so this takes the dimensions alongside the tables.
pub fn accumulate_pseudo_counts(
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    history: &[OccupancyTable],
) -> Result<PseudoCounts> {
    let mut counts = PseudoCounts::new(horizon, num_states, num_actions);
    for occ in history {
        counts.add(occ)?;
    }
    Ok(counts)
}

/// Sample mean of the discounted return together with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub rollouts: usize,
}

/// Monte Carlo estimate of `V_0^pi(s_1)` under `reward`.
pub fn monte_carlo_value<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &Policy,
    reward: &RewardTable,
    num_rollouts: usize,
    rng: &mut R,
) -> Result<MonteCarloEstimate> {
    if num_rollouts == 0 {
        return Err(param("num_rollouts must be at least 1"));
    }
    mdp.check_policy(policy)?;
    mdp.check_reward(reward)?;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..num_rollouts {
        let mut state = mdp.initial_state;
        let mut weight = 1.0;
        let mut ret = 0.0;
        for h in 0..mdp.horizon {
            let action = policy.action(h, state);
            ret += weight * reward.get(h, state, action);
            weight *= mdp.discount(h);
            state = sample_categorical(mdp.transition_row(h, state, action), rng);
        }
        sum += ret;
        sum_sq += ret * ret;
    }
    let n = num_rollouts as f64;
    let mean = sum / n;
    let std_error = if num_rollouts > 1 {
        let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(MonteCarloEstimate { mean, std_error, rollouts: num_rollouts })
}
