//! Visit counts and the empirical transition model built from them.

use crate::confidence::{kl_unchecked, ThresholdMode, ThresholdSpec};
use crate::error::{dim, Result};
use crate::mdp::{RewardTable, TabularMdp, Trajectory};

/// Counts `n_h(s, a)` and `n_h(s, a, s')`, plus the same counts pooled over
/// steps. Empirical rows default to uniform on unvisited pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmpiricalState {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    episodes: u64,
    counts: Vec<u64>,
    next_counts: Vec<u64>,
    pooled_counts: Vec<u64>,
    pooled_next: Vec<u64>,
}

impl EmpiricalState {
    pub fn new(num_states: usize, num_actions: usize, horizon: usize) -> Self {
        let pairs = num_states * num_actions;
        Self {
            num_states,
            num_actions,
            horizon,
            episodes: 0,
            counts: vec![0; horizon * pairs],
            next_counts: vec![0; horizon * pairs * num_states],
            pooled_counts: vec![0; pairs],
            pooled_next: vec![0; pairs * num_states],
        }
    }

    pub fn for_mdp(mdp: &TabularMdp) -> Self {
        Self::new(mdp.num_states(), mdp.num_actions(), mdp.horizon())
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

    /// Number of complete episodes absorbed so far.
    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn total_transitions(&self) -> u64 {
        self.pooled_counts.iter().sum()
    }

    #[inline]
    fn pair(&self, h: usize, s: usize, a: usize) -> usize {
        (h * self.num_states + s) * self.num_actions + a
    }

    /// Adds one observed transition at step `h` without touching the episode counter.
    pub fn record_transition(&mut self, h: usize, s: usize, a: usize, next: usize) {
        let idx = self.pair(h, s, a);
        self.counts[idx] += 1;
        self.next_counts[idx * self.num_states + next] += 1;
        let pooled = s * self.num_actions + a;
        self.pooled_counts[pooled] += 1;
        self.pooled_next[pooled * self.num_states + next] += 1;
    }

    /// Adds `count` identical transitions at step `h`.
    pub fn record_transitions(&mut self, h: usize, s: usize, a: usize, next: usize, count: u64) {
        let idx = self.pair(h, s, a);
        self.counts[idx] += count;
        self.next_counts[idx * self.num_states + next] += count;
        let pooled = s * self.num_actions + a;
        self.pooled_counts[pooled] += count;
        self.pooled_next[pooled * self.num_states + next] += count;
    }

    /// Advances the episode counter after an episode recorded step by step.
    pub(crate) fn finish_episode(&mut self) {
        self.episodes += 1;
    }

    /// Absorbs a full episode and advances the episode counter.
    pub fn update_counts(&mut self, trajectory: &Trajectory) -> Result<()> {
        if trajectory.len() != self.horizon {
            return Err(dim(format!("trajectory of length {}, horizon {}", trajectory.len(), self.horizon)));
        }
        for (h, step) in trajectory.steps.iter().enumerate() {
            self.record_transition(h, step.state, step.action, step.next_state);
        }
        self.episodes += 1;
        Ok(())
    }

    #[inline]
    pub fn count(&self, h: usize, s: usize, a: usize) -> u64 {
        self.counts[self.pair(h, s, a)]
    }

    #[inline]
    pub fn next_count(&self, h: usize, s: usize, a: usize, next: usize) -> u64 {
        self.next_counts[self.pair(h, s, a) * self.num_states + next]
    }

    #[inline]
    pub fn pooled_count(&self, s: usize, a: usize) -> u64 {
        self.pooled_counts[s * self.num_actions + a]
    }

    /// Count used by a threshold in the given mode.
    #[inline]
    pub fn count_for(&self, mode: ThresholdMode, h: usize, s: usize, a: usize) -> u64 {
        match mode {
            ThresholdMode::PerStep => self.count(h, s, a),
            ThresholdMode::StationaryPooled => self.pooled_count(s, a),
        }
    }

    /// Next-state counts of `(h, s, a)` (per-step) or `(s, a)` (pooled).
    #[inline]
    pub fn next_counts_for(&self, mode: ThresholdMode, h: usize, s: usize, a: usize) -> &[u64] {
        let ns = self.num_states;
        match mode {
            ThresholdMode::PerStep => {
                let start = self.pair(h, s, a) * ns;
                &self.next_counts[start..start + ns]
            }
            ThresholdMode::StationaryPooled => {
                let start = (s * self.num_actions + a) * ns;
                &self.pooled_next[start..start + ns]
            }
        }
    }

    /// Writes the empirical row into `out`; uniform when the pair is unvisited.
    pub fn p_hat_into(&self, mode: ThresholdMode, h: usize, s: usize, a: usize, out: &mut [f64]) {
        let n = self.count_for(mode, h, s, a);
        if n == 0 {
            out.iter_mut().for_each(|x| *x = 1.0 / self.num_states as f64);
        } else {
            let inv = 1.0 / n as f64;
            for (o, &c) in out.iter_mut().zip(self.next_counts_for(mode, h, s, a)) {
                *o = c as f64 * inv;
            }
        }
    }

    pub fn p_hat(&self, h: usize, s: usize, a: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.num_states];
        self.p_hat_into(ThresholdMode::PerStep, h, s, a, &mut row);
        row
    }

    /// Visits per state, summed over steps and actions.
    pub fn state_visits(&self) -> Vec<u64> {
        let mut visits = vec![0; self.num_states];
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                visits[s] += self.pooled_count(s, a);
            }
        }
        visits
    }

    /// The MDP with empirical kernels in place of the true ones, keeping the
    /// template's rewards, discounts and initial state.
    pub fn empirical_mdp(&self, template: &TabularMdp, mode: ThresholdMode) -> Result<TabularMdp> {
        self.check_template(template)?;
        let ns = self.num_states;
        let mut transitions = vec![0.0; self.horizon * self.num_states * self.num_actions * ns];
        for h in 0..self.horizon {
            for s in 0..ns {
                for a in 0..self.num_actions {
                    let start = self.pair(h, s, a) * ns;
                    self.p_hat_into(mode, h, s, a, &mut transitions[start..start + ns]);
                }
            }
        }
        let discounts = (0..self.horizon).map(|h| template.discount(h)).collect();
        let rewards: RewardTable = template.rewards().clone();
        TabularMdp::with_discounts(
            ns,
            self.num_actions,
            self.horizon,
            template.gamma(),
            discounts,
            transitions,
            rewards,
            template.initial_state(),
        )
    }

    fn check_template(&self, mdp: &TabularMdp) -> Result<()> {
        if mdp.num_states() != self.num_states || mdp.num_actions() != self.num_actions || mdp.horizon() != self.horizon {
            return Err(dim("empirical state and MDP shapes differ"));
        }
        Ok(())
    }

    /// Whether `n KL(p_hat, p) <= beta(n)` holds for every visited pair under
    /// the spec's counting mode. Unvisited pairs impose no constraint.
    pub fn kl_event_holds(&self, mdp: &TabularMdp, spec: &ThresholdSpec) -> bool {
        let mut row = vec![0.0; self.num_states];
        let steps = match spec.mode {
            ThresholdMode::PerStep => self.horizon,
            ThresholdMode::StationaryPooled => 1,
        };
        for h in 0..steps {
            for s in 0..self.num_states {
                for a in 0..self.num_actions {
                    if !self.pair_in_kl_event(mdp, spec, h, s, a, &mut row) {
                        return false;
                    }
                }
            }
        }
        true
    }

    pub fn pair_in_kl_event(
        &self,
        mdp: &TabularMdp,
        spec: &ThresholdSpec,
        h: usize,
        s: usize,
        a: usize,
        scratch: &mut [f64],
    ) -> bool {
        let n = self.count_for(spec.mode, h, s, a);
        if n == 0 {
            return true;
        }
        self.p_hat_into(spec.mode, h, s, a, scratch);
        let kl = kl_unchecked(scratch, mdp.transition_row(h, s, a));
        n as f64 * kl <= spec.beta(n as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::make_random_mdp;
    use crate::mdp::{sample_episode, Policy};
    use crate::rng::seeded;
    use rand::Rng;

    #[test]
    fn one_trajectory_gives_unit_counts() {
        let mut rng = seeded(0);
        let mdp = make_random_mdp(4, 2, 3, 1.0, &mut rng).unwrap();
        let traj = sample_episode(&mdp, &Policy::random(3, 4, 2, &mut rng), &mut rng).unwrap();
        let mut state = EmpiricalState::for_mdp(&mdp);
        state.update_counts(&traj).unwrap();
        assert_eq!(state.episodes(), 1);
        for (h, st) in traj.steps.iter().enumerate() {
            assert_eq!(state.count(h, st.state, st.action), 1);
            assert_eq!(state.next_count(h, st.state, st.action, st.next_state), 1);
        }
        assert_eq!(state.total_transitions(), 3);
    }

    #[test]
    fn bookkeeping_identities_hold() {
        let mut rng = seeded(1);
        let mdp = make_random_mdp(5, 3, 4, 1.0, &mut rng).unwrap();
        let mut state = EmpiricalState::for_mdp(&mdp);
        let mut trajectories = Vec::new();
        for _ in 0..1000 {
            let policy = Policy::random(4, 5, 3, &mut rng);
            let traj = sample_episode(&mdp, &policy, &mut rng).unwrap();
            state.update_counts(&traj).unwrap();
            trajectories.push(traj);
        }
        for h in 0..4 {
            let mut layer = 0;
            for s in 0..5 {
                for a in 0..3 {
                    let n = state.count(h, s, a);
                    let next: u64 = (0..5).map(|x| state.next_count(h, s, a, x)).sum();
                    assert_eq!(n, next);
                    layer += n;
                    let row = state.p_hat(h, s, a);
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
            assert_eq!(layer, 1000);
        }
        // pooled counts against an independent recount
        for s in 0..5 {
            for a in 0..3 {
                let recount = trajectories
                    .iter()
                    .flat_map(|t| t.steps.iter())
                    .filter(|st| st.state == s && st.action == a)
                    .count() as u64;
                assert_eq!(state.pooled_count(s, a), recount);
            }
        }
    }

    #[test]
    fn unvisited_rows_are_uniform() {
        let state = EmpiricalState::new(4, 2, 2);
        assert_eq!(state.p_hat(1, 3, 1), vec![0.25; 4]);
    }

    #[test]
    fn wrong_length_trajectory_is_rejected() {
        let mut state = EmpiricalState::new(2, 2, 3);
        assert!(state.update_counts(&Trajectory::default()).is_err());
    }

    #[test]
    fn empirical_mdp_of_true_counts_is_close() {
        let mut rng = seeded(2);
        let mdp = make_random_mdp(3, 2, 2, 1.0, &mut rng).unwrap();
        let mut state = EmpiricalState::for_mdp(&mdp);
        for _ in 0..20_000 {
            let h = rng.gen_range(0..2);
            let s = rng.gen_range(0..3);
            let a = rng.gen_range(0..2);
            let next = crate::mdp::sample_categorical(mdp.transition_row(h, s, a), &mut rng);
            state.record_transition(h, s, a, next);
        }
        let emp = state.empirical_mdp(&mdp, ThresholdMode::PerStep).unwrap();
        for (x, y) in emp.transitions().iter().zip(mdp.transitions()) {
            assert!((x - y).abs() < 0.05);
        }
        let spec = ThresholdSpec::per_step(0.1, 3, 2, 2).unwrap();
        assert!(state.kl_event_holds(&mdp, &spec));
    }
}
