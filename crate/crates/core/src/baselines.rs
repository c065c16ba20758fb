//! Comparison agents: uniform-random exploration and generative-model sampling.

use rand::Rng;

use crate::confidence::ThresholdMode;
use crate::empirical::EmpiricalState;
use crate::error::{param, Result};
use crate::mdp::{sample_categorical, TabularMdp};

/// Plays one episode with uniformly random actions and records it.
pub fn random_episode<R: Rng + ?Sized>(mdp: &TabularMdp, state: &mut EmpiricalState, rng: &mut R) {
    let mut s = mdp.initial_state();
    for h in 0..mdp.horizon() {
        let a = rng.gen_range(0..mdp.num_actions());
        let next = sample_categorical(mdp.transition_row(h, s, a), rng);
        state.record_transition(h, s, a, next);
        s = next;
    }
    state.finish_episode();
}

/// Random-policy exploration until at least `num_transitions` transitions
/// are collected; the last episode is always completed.
pub fn run_random_policy<R: Rng + ?Sized>(mdp: &TabularMdp, num_transitions: u64, rng: &mut R) -> EmpiricalState {
    let mut state = EmpiricalState::for_mdp(mdp);
    let episodes = num_transitions.div_ceil(mdp.horizon() as u64);
    for _ in 0..episodes {
        random_episode(mdp, &mut state, rng);
    }
    state
}

/// Draws transitions straight from the kernel, cycling through the pairs
/// in index order so that any prefix is as balanced as possible.
#[derive(Debug, Clone)]
pub struct GenerativeSampler {
    mode: ThresholdMode,
    cursor: usize,
    /// Draws made per `(s, a)` in pooled mode, used to spread them over steps.
    pooled_draws: Vec<usize>,
}

impl GenerativeSampler {
    pub fn new(mdp: &TabularMdp, mode: ThresholdMode) -> Result<Self> {
        if mode == ThresholdMode::StationaryPooled && !mdp.is_stationary() {
            return Err(param("pooled sampling needs a stationary MDP"));
        }
        Ok(Self { mode, cursor: 0, pooled_draws: vec![0; mdp.num_states() * mdp.num_actions()] })
    }

    /// Adds one transition to `state`.
    pub fn draw<R: Rng + ?Sized>(&mut self, mdp: &TabularMdp, state: &mut EmpiricalState, rng: &mut R) {
        let (ns, na, horizon) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
        let (h, s, a) = match self.mode {
            ThresholdMode::PerStep => {
                let i = self.cursor % (horizon * ns * na);
                (i / (ns * na), (i / na) % ns, i % na)
            }
            ThresholdMode::StationaryPooled => {
                let i = self.cursor % (ns * na);
                let h = self.pooled_draws[i] % horizon;
                self.pooled_draws[i] += 1;
                (h, i / na, i % na)
            }
        };
        self.cursor += 1;
        let next = sample_categorical(mdp.transition_row(h, s, a), rng);
        state.record_transition(h, s, a, next);
    }
}

/// Generative-model sampling of exactly `num_transitions` transitions:
/// `floor(n / (S A H))` per triple (`floor(n / (S A))` per pair when pooled),
/// remainder assigned round-robin in index order.
pub fn run_generative_model<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    num_transitions: u64,
    mode: ThresholdMode,
    rng: &mut R,
) -> Result<EmpiricalState> {
    let mut sampler = GenerativeSampler::new(mdp, mode)?;
    let mut state = EmpiricalState::for_mdp(mdp);
    for _ in 0..num_transitions {
        sampler.draw(mdp, &mut state, rng);
    }
    Ok(state)
}
