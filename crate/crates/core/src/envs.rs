//! Benchmark environments, the initial-state reduction and random MDP fixtures.

use rand::Rng;

use crate::error::{param, Result};
use crate::mdp::{RewardTable, TabularMdp};

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

pub const GRID_LEFT: usize = 0;
pub const GRID_RIGHT: usize = 1;
pub const GRID_UP: usize = 2;
pub const GRID_DOWN: usize = 3;

/// Chain of `length` states with a left and a right action. The intended move
/// succeeds with probability `1 - slip`, otherwise the agent moves the other
/// way. Moves past either end leave the agent in place. The rightmost state
/// pays reward 1 for any action at any step and the episode starts in the
/// middle of the chain.
pub fn make_double_chain(length: usize, horizon: usize, slip: f64, gamma: f64) -> Result<TabularMdp> {
    if length < 3 || length % 2 == 0 {
        return Err(param(format!("chain length must be odd and at least 3, got {length}")));
    }
    if !(0.0..0.5).contains(&slip) {
        return Err(param(format!("slip {slip} outside [0, 0.5)")));
    }
    let mut kernel = vec![0.0; length * 2 * length];
    for s in 0..length {
        let left = s.saturating_sub(1);
        let right = (s + 1).min(length - 1);
        for (a, (intended, other)) in [(LEFT, (left, right)), (RIGHT, (right, left))] {
            let row = &mut kernel[(s * 2 + a) * length..(s * 2 + a + 1) * length];
            row[intended] += 1.0 - slip;
            row[other] += slip;
        }
    }
    let rewards = RewardTable::from_fn(horizon, length, 2, |_, s, _| if s == length - 1 { 1.0 } else { 0.0 })?;
    TabularMdp::new_stationary(length, 2, horizon, gamma, &kernel, rewards, (length - 1) / 2)
}

/// Grid cell as `(row, col)`.
pub type Cell = (usize, usize);

/// `side x side` grid with four moves. The chosen direction is taken with
/// probability `1 - slip`; each of the three other directions gets `slip / 3`.
/// Moves into a wall leave the agent in place. States are numbered row-major.
pub fn make_gridworld(
    side: usize,
    horizon: usize,
    slip: f64,
    reward_cell: Cell,
    start_cell: Cell,
    gamma: f64,
) -> Result<TabularMdp> {
    if side == 0 {
        return Err(param("grid side must be positive"));
    }
    for (name, (r, c)) in [("reward", reward_cell), ("start", start_cell)] {
        if r >= side || c >= side {
            return Err(param(format!("{name} cell ({r}, {c}) outside a {side}x{side} grid")));
        }
    }
    if !(0.0..=1.0).contains(&slip) {
        return Err(param(format!("slip {slip} outside [0, 1]")));
    }
    let ns = side * side;
    let index = |(r, c): Cell| r * side + c;
    let moved = |(r, c): Cell, dir: usize| -> Cell {
        match dir {
            GRID_LEFT => (r, c.saturating_sub(1)),
            GRID_RIGHT => (r, (c + 1).min(side - 1)),
            GRID_UP => (r.saturating_sub(1), c),
            _ => ((r + 1).min(side - 1), c),
        }
    };
    let mut kernel = vec![0.0; ns * 4 * ns];
    for r in 0..side {
        for c in 0..side {
            let s = index((r, c));
            for a in 0..4 {
                let row = &mut kernel[(s * 4 + a) * ns..(s * 4 + a + 1) * ns];
                for dir in 0..4 {
                    let mass = if dir == a { 1.0 - slip } else { slip / 3.0 };
                    row[index(moved((r, c), dir))] += mass;
                }
            }
        }
    }
    let goal = index(reward_cell);
    let rewards = RewardTable::from_fn(horizon, ns, 4, |_, s, _| if s == goal { 1.0 } else { 0.0 })?;
    TabularMdp::new_stationary(ns, 4, horizon, gamma, &kernel, rewards, index(start_cell))
}

/// Grid configuration used in the reference experiments.
pub fn default_gridworld(horizon: usize, gamma: f64) -> Result<TabularMdp> {
    make_gridworld(21, horizon, 0.05, (16, 16), (10, 10), gamma)
}

/// Reduces an initial distribution `p0` to a single start state.
///
/// The returned MDP has one extra state (index `S`, the new initial state)
/// and horizon `H + 1`. From the extra state every action leads to `p0` with
/// zero reward and no discounting, after which the original dynamics and
/// rewards apply. The discount sequence is therefore `1, 1, gamma, ...`.
pub fn add_initial_state(mdp: &TabularMdp, p0: &[f64]) -> Result<TabularMdp> {
    let (ns, na, horizon) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    if p0.len() != ns {
        return Err(param(format!("initial distribution has {} entries, expected {ns}", p0.len())));
    }
    if p0.iter().any(|&p| !(p >= 0.0)) || (p0.iter().sum::<f64>() - 1.0).abs() > crate::mdp::ROW_SUM_TOLERANCE {
        return Err(param("initial distribution must be non-negative and sum to one"));
    }
    let new_ns = ns + 1;
    let start = ns;
    let mut transitions = Vec::with_capacity((horizon + 1) * new_ns * na * new_ns);
    let stay = |s: usize| {
        let mut row = vec![0.0; new_ns];
        row[s] = 1.0;
        row
    };
    // step 0: only the extra state is reachable
    for s in 0..new_ns {
        for _ in 0..na {
            if s == start {
                transitions.extend_from_slice(p0);
                transitions.push(0.0);
            } else {
                transitions.extend(stay(s));
            }
        }
    }
    for h in 0..horizon {
        for s in 0..new_ns {
            for a in 0..na {
                if s == start {
                    transitions.extend(stay(start));
                } else {
                    transitions.extend_from_slice(mdp.transition_row(h, s, a));
                    transitions.push(0.0);
                }
            }
        }
    }
    let rewards = RewardTable::from_fn(horizon + 1, new_ns, na, |h, s, a| {
        if h == 0 || s == start {
            0.0
        } else {
            mdp.rewards().get(h - 1, s, a)
        }
    })?;
    let mut discounts = Vec::with_capacity(horizon + 1);
    discounts.push(1.0);
    discounts.extend((0..horizon).map(|h| mdp.discount(h)));
    TabularMdp::with_discounts(new_ns, na, horizon + 1, mdp.gamma(), discounts, transitions, rewards, start)
}

/// Random MDP with Dirichlet(1) transition rows and uniform rewards, started
/// from state 0.
pub fn make_random_mdp<R: Rng + ?Sized>(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    gamma: f64,
    rng: &mut R,
) -> Result<TabularMdp> {
    if num_states == 0 || num_actions == 0 || horizon == 0 {
        return Err(param("num_states, num_actions and horizon must be positive"));
    }
    let mut transitions = Vec::with_capacity(horizon * num_states * num_actions * num_states);
    for _ in 0..horizon * num_states * num_actions {
        let row: Vec<f64> = (0..num_states).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            transitions.extend(row.iter().map(|x| x / total));
        } else {
            transitions.extend(std::iter::repeat(1.0 / num_states as f64).take(num_states));
        }
    }
    let rewards = RewardTable::random(horizon, num_states, num_actions, rng);
    TabularMdp::new(num_states, num_actions, horizon, gamma, transitions, rewards, 0)
}
