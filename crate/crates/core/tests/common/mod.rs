//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use std::io::Write;

use rand::Rng;
use rfexplore::{RewardTable, TabularMdp};

/// Writes one verdict line straight to stderr so it survives output capture.
pub fn verdict(id: u32, name: &str, pass: bool, detail: &str) {
    let word = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "criterion {id} {name}: {word} ({detail})");
}

/// Exponential draws normalised: uniform on the simplex.
pub fn random_simplex<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

pub fn dot(p: &[f64], v: &[f64]) -> f64 {
    p.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// `KL(q || p)`; zero-mass terms of `q` contribute nothing.
pub fn kl(q: &[f64], p: &[f64]) -> f64 {
    q.iter()
        .zip(p)
        .filter(|(&qi, _)| qi > 0.0)
        .map(|(&qi, &pi)| if pi > 0.0 { qi * (qi / pi).ln() } else { f64::INFINITY })
        .sum()
}

/// Value at every start state of one deterministic policy given as a flat
/// `h * S + s` action table.
fn policy_values(mdp: &TabularMdp, reward: &RewardTable, actions: &[usize]) -> Vec<f64> {
    let ns = mdp.num_states();
    let mut next = vec![0.0; ns];
    for h in (0..mdp.horizon()).rev() {
        let mut cur = vec![0.0; ns];
        for (s, slot) in cur.iter_mut().enumerate() {
            let a = actions[h * ns + s];
            *slot = reward.get(h, s, a) + mdp.discount(h) * dot(mdp.transition_row(h, s, a), &next);
        }
        next = cur;
    }
    next
}

/// Best value per start state over all `A^(S H)` deterministic policies.
pub fn brute_force_optimal(mdp: &TabularMdp, reward: &RewardTable) -> Vec<f64> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let cells = ns * mdp.horizon();
    let total = na.pow(cells as u32);
    let mut best = vec![f64::NEG_INFINITY; ns];
    let mut actions = vec![0; cells];
    for code in 0..total {
        let mut c = code;
        for slot in actions.iter_mut() {
            *slot = c % na;
            c /= na;
        }
        for (b, v) in best.iter_mut().zip(policy_values(mdp, reward, &actions)) {
            *b = b.max(v);
        }
    }
    best
}

/// Best `sign * p.v` over simplex points on a lattice of spacing `step`
/// restricted to `lo[i] <= p[i] <= lo[i] + width` for the free coordinates.
fn lattice_search(q: &[f64], v: &[f64], alpha: f64, sign: f64, step: f64, lo: &[f64], width: f64) -> Option<Vec<f64>> {
    let n = q.len();
    let cells = (width / step).round() as usize;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut consider = |p: Vec<f64>| {
        if p.iter().any(|&x| x < -1e-15) || kl(q, &p) > alpha {
            return;
        }
        let value = sign * dot(&p, v);
        if best.as_ref().is_none_or(|(b, _)| value > *b) {
            best = Some((value, p));
        }
    };
    match n {
        2 => {
            for i in 0..=cells {
                let p0 = lo[0] + i as f64 * step;
                consider(vec![p0, 1.0 - p0]);
            }
        }
        3 => {
            for i in 0..=cells {
                let p0 = lo[0] + i as f64 * step;
                for j in 0..=cells {
                    let p1 = lo[1] + j as f64 * step;
                    consider(vec![p0, p1, 1.0 - p0 - p1]);
                }
            }
        }
        _ => panic!("lattice oracle covers two or three states"),
    }
    best.map(|(_, p)| p)
}

/// Extremal `p.v` over `{p : KL(q || p) <= alpha}`: a `1e-3` simplex grid,
/// then a local refinement that zooms to `1e-4` and `1e-5` spacing. The best
/// coarse point can sit about `sqrt(step * radius)` away from the optimum along
/// the curved boundary, hence the wide first window. `None` when no grid point
/// is feasible.
pub fn grid_ball(q: &[f64], v: &[f64], alpha: f64, maximize: bool) -> Option<f64> {
    let sign = if maximize { 1.0 } else { -1.0 };
    let free = q.len() - 1;
    let mut best = lattice_search(q, v, alpha, sign, 1e-3, &vec![0.0; free], 1.0)?;
    for (step, half) in [(1e-4, 3e-2), (1e-5, 3e-3)] {
        let lo: Vec<f64> = best[..free].iter().map(|&x| (x - half).max(0.0)).collect();
        if let Some(p) = lattice_search(q, v, alpha, sign, step, &lo, 2.0 * half) {
            if sign * dot(&p, v) > sign * dot(&best, v) {
                best = p;
            }
        }
    }
    Some(dot(&best, v))
}
