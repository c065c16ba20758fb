//! Confidence thresholds, divergences and optimization over KL balls.

use crate::error::{dim, param, Result};
use crate::mdp::sigma;

/// Which counts the threshold is paired with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Counts per step `n_h(s, a)`; union bound over `S * A * H` pairs.
    PerStep,
    /// Counts pooled over steps `n(s, a)` for stationary kernels; union bound over `S * A`.
    StationaryPooled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdSpec {
    pub delta: f64,
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub mode: ThresholdMode,
}

impl ThresholdSpec {
    pub fn new(delta: f64, num_states: usize, num_actions: usize, horizon: usize, mode: ThresholdMode) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(param(format!("delta {delta} outside (0, 1)")));
        }
        if num_states == 0 || num_actions == 0 || horizon == 0 {
            return Err(param("threshold dimensions must be positive"));
        }
        Ok(Self { delta, num_states, num_actions, horizon, mode })
    }

    pub fn per_step(delta: f64, num_states: usize, num_actions: usize, horizon: usize) -> Result<Self> {
        Self::new(delta, num_states, num_actions, horizon, ThresholdMode::PerStep)
    }

    /// `log(2SAH/delta)` per step, `log(2SA/delta)` pooled.
    pub fn log_term(&self) -> f64 {
        let pairs = (self.num_states * self.num_actions) as f64;
        let union = match self.mode {
            ThresholdMode::PerStep => pairs * self.horizon as f64,
            ThresholdMode::StationaryPooled => pairs,
        };
        (2.0 * union / self.delta).ln()
    }

    pub fn beta(&self, n: f64) -> f64 {
        beta(n, self)
    }
}

/// `beta(n, delta) = log(2SAH/delta) + (S-1) log(e (1 + n/(S-1)))`.
pub fn beta(n: f64, spec: &ThresholdSpec) -> f64 {
    let lead = spec.log_term();
    if spec.num_states <= 1 {
        return lead;
    }
    let k = (spec.num_states - 1) as f64;
    lead + k * (1.0 + (n / k).ln_1p())
}

/// Deviation threshold of the count event, `log(2SAH/delta)`.
pub fn beta_cnt(spec: &ThresholdSpec) -> f64 {
    ThresholdSpec { mode: ThresholdMode::PerStep, ..*spec }.log_term()
}

/// `beta(n) / n` with the convention `1/0 = +inf`.
#[inline]
pub fn kl_radius(n: f64, spec: &ThresholdSpec) -> f64 {
    if n > 0.0 {
        beta(n, spec) / n
    } else {
        f64::INFINITY
    }
}

/// Which guarantee the closed-form stopping-time bound refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    RewardFree,
    BestPolicy,
}

/// High-probability upper bound on the number of exploration episodes,
/// evaluated in closed form for per-step kernels.
pub fn sample_complexity_bound(
    kind: BoundKind,
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    gamma: f64,
    epsilon: f64,
    delta: f64,
) -> f64 {
    let constant = match kind {
        BoundKind::RewardFree => 144.0,
        BoundKind::BestPolicy => 64.0,
    };
    let c_h = constant * (1.0 + 2f64.sqrt()).powi(2) * sigma(gamma, horizon).powi(4);
    let sa = (num_states * num_actions) as f64;
    let k = (num_states - 1) as f64;
    let lead = (2.0 * sa * horizon as f64 / delta).ln();
    let e = std::f64::consts::E;
    let scale = c_h * sa / (epsilon * epsilon);
    let inner = lead + k * e.sqrt() + (e * k).sqrt();
    scale * (lead + 2.0 * k * (scale * inner).ln() + k)
}

/// `KL(q || p) = sum q log(q / p)`, `+inf` when `p` misses mass of `q`.
pub fn kl_categorical(q: &[f64], p: &[f64]) -> Result<f64> {
    if q.len() != p.len() {
        return Err(dim(format!("distributions of length {} and {}", q.len(), p.len())));
    }
    Ok(kl_unchecked(q, p))
}

#[inline]
pub(crate) fn kl_unchecked(q: &[f64], p: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&qi, &pi) in q.iter().zip(p) {
        if qi > 0.0 {
            if pi <= 0.0 {
                return f64::INFINITY;
            }
            total += qi * (qi / pi).ln();
        }
    }
    total.max(0.0)
}

/// L1 radius implied by a KL radius through Pinsker's inequality.
pub fn pinsker_l1(kl: f64) -> Result<f64> {
    if !(kl >= 0.0) {
        return Err(param(format!("KL value {kl} must be non-negative")));
    }
    Ok((2.0 * kl).sqrt())
}

const BISECTION_MAX_ITERS: usize = 200;
const BISECTION_REL_WIDTH: f64 = 1e-12;
/// Beyond this multiplier the solution is numerically the argmax vertex.
const MULTIPLIER_CAP: f64 = 1e200;

/// `max { p . v : KL(q || p) <= alpha }` and a maximizer.
///
/// `alpha = 0` gives `q . v`; `alpha = +inf` gives `max v`.
pub fn kl_ball_max(q: &[f64], v: &[f64], alpha: f64) -> Result<(f64, Vec<f64>)> {
    validate_ball_inputs(q, v, alpha)?;
    let mut p = vec![0.0; q.len()];
    let value = ball_max(q, v, alpha, Some(&mut p));
    Ok((value, p))
}

/// `min { p . v : KL(q || p) <= alpha }` and a minimizer.
pub fn kl_ball_min(q: &[f64], v: &[f64], alpha: f64) -> Result<(f64, Vec<f64>)> {
    validate_ball_inputs(q, v, alpha)?;
    let mut p = vec![0.0; q.len()];
    let value = ball_solve(q, v, alpha, Direction::Min, Some(&mut p));
    Ok((value, p))
}

fn validate_ball_inputs(q: &[f64], v: &[f64], alpha: f64) -> Result<()> {
    if q.len() != v.len() || q.is_empty() {
        return Err(dim(format!("distribution of length {} against values of length {}", q.len(), v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(param("value vector must be finite"));
    }
    if !(alpha >= 0.0) {
        return Err(param(format!("radius {alpha} must be non-negative")));
    }
    if q.iter().any(|&x| !(x >= 0.0)) || (q.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(param("center must be a probability vector"));
    }
    Ok(())
}

/// Scratch-free value of the ball maximization, used in the inner loops.
#[inline]
pub(crate) fn ball_max_value(q: &[f64], v: &[f64], alpha: f64) -> f64 {
    ball_max(q, v, alpha, None)
}

#[inline]
pub(crate) fn ball_min_value(q: &[f64], v: &[f64], alpha: f64) -> f64 {
    ball_solve(q, v, alpha, Direction::Min, None)
}

fn ball_max(q: &[f64], v: &[f64], alpha: f64, out: Option<&mut [f64]>) -> f64 {
    ball_solve(q, v, alpha, Direction::Max, out)
}

#[derive(Clone, Copy)]
enum Direction {
    Max,
    Min,
}

/// Dual solution of the ball optimization.
///
/// For the maximization, write `w_i = (max v - v_i) / range` so the target
/// lies at `w = 0`. Stationarity gives `p_i ∝ q_i / (1 + lambda w_i)` for a
/// multiplier `lambda >= 0`, and the KL of that family,
/// `g(lambda) = sum q log(1 + lambda w) + log sum q / (1 + lambda w)`,
/// increases from 0. When no mass of `q` sits on a best state, `g` saturates
/// at a finite limit; if that limit is within the radius, the leftover mass
/// is placed on the best state outside `q`'s support.
fn ball_solve(q: &[f64], v: &[f64], alpha: f64, dir: Direction, out: Option<&mut [f64]>) -> f64 {
    let sign = match dir {
        Direction::Max => 1.0,
        Direction::Min => -1.0,
    };
    let n = q.len();
    // target (best) value and its lowest index, worst value
    let mut best_idx = 0;
    let mut worst = sign * v[0];
    for i in 1..n {
        let x = sign * v[i];
        if x > sign * v[best_idx] {
            best_idx = i;
        }
        worst = worst.min(x);
    }
    let best = sign * v[best_idx];
    let range = best - worst;

    let center_value = || q.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();

    if alpha == 0.0 || range == 0.0 {
        if let Some(p) = out {
            p.copy_from_slice(q);
        }
        return if range == 0.0 { v[0] } else { center_value() };
    }
    if alpha == f64::INFINITY {
        if let Some(p) = out {
            p.iter_mut().for_each(|x| *x = 0.0);
            p[best_idx] = 1.0;
        }
        return sign * best;
    }

    let gap = |i: usize| (best - sign * v[i]) / range;

    // mass of q already on best states
    let mut on_best = 0.0;
    for i in 0..n {
        if q[i] > 0.0 && gap(i) == 0.0 {
            on_best += q[i];
        }
    }
    if on_best >= 1.0 {
        if let Some(p) = out {
            p.copy_from_slice(q);
        }
        return sign * best;
    }

    if on_best == 0.0 {
        // multiplier -> infinity limit: compare the saturated KL with alpha
        let mut log_gap = 0.0;
        let mut inv_gap = 0.0;
        for i in 0..n {
            if q[i] > 0.0 {
                let w = gap(i);
                log_gap += q[i] * w.ln();
                inv_gap += q[i] / w;
            }
        }
        let saturated = log_gap + inv_gap.ln();
        if saturated <= alpha {
            let c = (log_gap - alpha).exp();
            let mut shortfall = 0.0;
            let mut covered = 0.0;
            for i in 0..n {
                if q[i] > 0.0 {
                    let w = gap(i);
                    let pi = c * q[i] / w;
                    covered += pi;
                    shortfall += pi * w;
                }
            }
            let residual = (1.0 - covered).max(0.0);
            if let Some(p) = out {
                for i in 0..n {
                    p[i] = if q[i] > 0.0 { c * q[i] / gap(i) } else { 0.0 };
                }
                p[best_idx] += residual;
            }
            return sign * (best - range * shortfall);
        }
    }

    let kl_at = |lambda: f64| -> f64 {
        let mut a = 0.0;
        let mut b = 0.0;
        for i in 0..n {
            if q[i] > 0.0 {
                let lw = lambda * gap(i);
                a += q[i] * lw.ln_1p();
                b += q[i] * lw / (1.0 + lw);
            }
        }
        a + (-b).ln_1p()
    };

    // bracket the root of g(lambda) = alpha
    let mut var = 0.0;
    let mut mean = 0.0;
    for i in 0..n {
        if q[i] > 0.0 {
            mean += q[i] * gap(i);
        }
    }
    for i in 0..n {
        if q[i] > 0.0 {
            let d = gap(i) - mean;
            var += q[i] * d * d;
        }
    }
    let mut lo = 0.0;
    let mut hi = if var > 0.0 { (2.0 * alpha / var).sqrt().max(f64::MIN_POSITIVE) } else { 1.0 };
    let mut capped = false;
    while kl_at(hi) < alpha {
        lo = hi;
        hi *= 2.0;
        if hi > MULTIPLIER_CAP {
            // g grows only logarithmically here; lo is feasible and numerically at the vertex
            capped = true;
            break;
        }
    }
    if !capped {
        for _ in 0..BISECTION_MAX_ITERS {
            if hi - lo <= BISECTION_REL_WIDTH * hi {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if kl_at(mid) <= alpha {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    // lo keeps g(lo) <= alpha, so the returned point is feasible
    let lambda = lo;
    let mut z = 0.0;
    let mut weighted_gap = 0.0;
    for i in 0..n {
        if q[i] > 0.0 {
            let w = gap(i);
            let r = q[i] / (1.0 + lambda * w);
            z += r;
            weighted_gap += r * w;
        }
    }
    if let Some(p) = out {
        for i in 0..n {
            p[i] = if q[i] > 0.0 { q[i] / (1.0 + lambda * gap(i)) / z } else { 0.0 };
        }
    }
    sign * (best - range * weighted_gap / z)
}

/// Bernstein-type upper bound on `q . f` implied by `KL(p || q) <= alpha`
/// for `0 <= f <= b`: `p . f + sqrt(2 Var_q(f) alpha) + alpha b / 3`.
pub fn bernstein_kl_upper(pf: f64, var_q: f64, alpha: f64, b: f64) -> f64 {
    pf + (2.0 * var_q * alpha).sqrt() + alpha * b / 3.0
}

/// Checks the count/pseudo-count implication: if `n >= nbar / 2 - beta_cnt`
/// then `min(beta(n)/n, 1) <= 4 beta(nbar) / max(nbar, 1)`.
pub fn cnt_pseudo_bound_holds(n: f64, nbar: f64, beta_n: f64, beta_nbar: f64, beta_cnt: f64) -> bool {
    if n < nbar / 2.0 - beta_cnt {
        return true;
    }
    let lhs = if n > 0.0 { (beta_n / n).min(1.0) } else { 1.0 };
    lhs <= 4.0 * beta_nbar / nbar.max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn random_simplex<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let total: f64 = raw.iter().sum();
        raw.iter().map(|x| x / total).collect()
    }

    fn spec(delta: f64, s: usize, a: usize, h: usize) -> ThresholdSpec {
        ThresholdSpec::per_step(delta, s, a, h).unwrap()
    }

    #[test]
    fn beta_closed_form() {
        let b = beta(0.0, &spec(0.1, 2, 2, 2));
        assert_abs_diff_eq!(b, 160f64.ln() + 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b, 6.0752, epsilon = 1e-4);
        // S = 1 leaves only the union-bound term
        let single = spec(0.05, 1, 3, 4);
        assert_abs_diff_eq!(beta(1e6, &single), (2.0 * 12.0 / 0.05f64).ln(), epsilon = 1e-12);
        let pooled = ThresholdSpec::new(0.1, 2, 2, 2, ThresholdMode::StationaryPooled).unwrap();
        assert_abs_diff_eq!(pooled.log_term(), 80f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn beta_is_monotone_and_ratio_decreasing() {
        let mut rng = seeded(0);
        for _ in 0..20 {
            let sp = spec(rng.gen_range(0.01..0.99), rng.gen_range(1..20), rng.gen_range(2..5), rng.gen_range(1..30));
            let mut prev = beta(0.0, &sp);
            for n in 1..=1000 {
                let b = beta(n as f64, &sp);
                assert!(b >= prev);
                prev = b;
            }
            let mut prev_ratio = f64::INFINITY;
            for i in 0..400 {
                let x = 1.0 + i as f64 * 0.25;
                let ratio = beta(x, &sp) / x;
                assert!(ratio <= prev_ratio + 1e-15);
                prev_ratio = ratio;
            }
        }
    }

    #[test]
    fn threshold_rejects_bad_delta() {
        assert!(ThresholdSpec::per_step(0.0, 2, 2, 2).is_err());
        assert!(ThresholdSpec::per_step(1.0, 2, 2, 2).is_err());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_categorical(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_abs_diff_eq!(kl_categorical(&[1.0, 0.0], &[0.5, 0.5]).unwrap(), 2f64.ln(), epsilon = 1e-15);
        assert_eq!(kl_categorical(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), f64::INFINITY);
        assert!(matches!(kl_categorical(&[1.0], &[0.5, 0.5]), Err(crate::Error::Dimension(_))));
    }

    #[test]
    fn kl_positive_off_diagonal() {
        let mut rng = seeded(1);
        for _ in 0..1000 {
            let n = rng.gen_range(2..6);
            let q = random_simplex(n, &mut rng);
            let p = random_simplex(n, &mut rng);
            assert!(kl_categorical(&q, &p).unwrap() > 0.0);
        }
    }

    #[test]
    fn pinsker_examples() {
        assert_eq!(pinsker_l1(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(pinsker_l1(0.02).unwrap(), 0.2, epsilon = 1e-15);
        assert!(pinsker_l1(-1.0).is_err());
    }

    #[test]
    fn ball_trivial_radii() {
        let q = [0.2, 0.3, 0.5];
        let v = [1.0, -2.0, 0.5];
        let (val, p) = kl_ball_max(&q, &v, 0.0).unwrap();
        assert_abs_diff_eq!(val, 0.2 - 0.6 + 0.25, epsilon = 1e-15);
        assert_eq!(p, q.to_vec());
        assert_eq!(kl_ball_max(&[0.5, 0.5], &[0.0, 1.0], f64::INFINITY).unwrap().0, 1.0);
        assert_eq!(kl_ball_min(&[0.5, 0.5], &[0.0, 1.0], f64::INFINITY).unwrap().0, 0.0);
        assert_abs_diff_eq!(kl_ball_min(&q, &v, 0.0).unwrap().0, 0.2 - 0.6 + 0.25, epsilon = 1e-15);
    }

    #[test]
    fn ball_two_point_instance() {
        // binding constraint: -0.5 log(1 - 4 x^2) = 0.02
        let x = ((1.0 - (-0.04f64).exp()) / 4.0).sqrt();
        let (upper, p) = kl_ball_max(&[0.5, 0.5], &[0.0, 1.0], 0.02).unwrap();
        assert_abs_diff_eq!(upper, 0.5 + x, epsilon = 1e-9);
        assert_abs_diff_eq!(upper, 0.59901, epsilon = 1e-5);
        assert!(kl_categorical(&[0.5, 0.5], &p).unwrap() <= 0.02 + 1e-8);
        let (lower, _) = kl_ball_min(&[0.5, 0.5], &[0.0, 1.0], 0.02).unwrap();
        assert_abs_diff_eq!(lower, 0.5 - x, epsilon = 1e-9);
    }

    #[test]
    fn ball_moves_mass_outside_support() {
        // q puts no mass on the best state: KL(q || p) = -log p_0 <= alpha
        let alpha = 0.3;
        let (val, p) = kl_ball_max(&[1.0, 0.0], &[0.0, 1.0], alpha).unwrap();
        assert_abs_diff_eq!(val, 1.0 - (-alpha).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 1.0 - (-alpha).exp(), epsilon = 1e-12);
    }

    #[test]
    fn ball_rejects_bad_inputs() {
        assert!(matches!(kl_ball_max(&[0.5, 0.5], &[0.0, f64::NAN], 0.1), Err(crate::Error::Parameter(_))));
        assert!(matches!(kl_ball_max(&[0.5, 0.5], &[0.0, f64::INFINITY], 0.1), Err(crate::Error::Parameter(_))));
        assert!(matches!(kl_ball_max(&[1.0], &[0.0, 1.0], 0.1), Err(crate::Error::Dimension(_))));
    }

    #[test]
    fn ball_min_is_negated_max() {
        let mut rng = seeded(2);
        for _ in 0..1000 {
            let n = rng.gen_range(2..7);
            let q = random_simplex(n, &mut rng);
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let alpha = (rng.gen_range(-8.0..2.0f64)).exp();
            let neg: Vec<f64> = v.iter().map(|x| -x).collect();
            let min = kl_ball_min(&q, &v, alpha).unwrap().0;
            let max = kl_ball_max(&q, &neg, alpha).unwrap().0;
            assert_abs_diff_eq!(min, -max, epsilon = 1e-9);
            assert_abs_diff_eq!(ball_min_value(&q, &v, alpha), min, epsilon = 1e-12);
        }
    }

    #[test]
    fn ball_solutions_are_feasible_and_monotone() {
        let mut rng = seeded(3);
        for _ in 0..500 {
            let n = rng.gen_range(2..6);
            let mut q = random_simplex(n, &mut rng);
            if rng.gen_bool(0.3) {
                q[0] = 0.0;
                let t: f64 = q.iter().sum();
                q.iter_mut().for_each(|x| *x /= t);
            }
            let v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let vmax = v.iter().cloned().fold(f64::MIN, f64::max);
            let mut prev = f64::NEG_INFINITY;
            for k in -10..=4 {
                let alpha = 2f64.powi(k);
                let (val, p) = kl_ball_max(&q, &v, alpha).unwrap();
                let kl = kl_categorical(&q, &p).unwrap();
                assert!(kl <= alpha + 1e-8, "{q:?} {v:?} {alpha} {p:?} {kl}");
                assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
                let pv: f64 = p.iter().zip(&v).map(|(a, b)| a * b).sum();
                assert_abs_diff_eq!(pv, val, epsilon = 1e-9);
                assert!(val >= prev - 1e-12 && val <= vmax + 1e-12);
                prev = val;
            }
        }
    }

    #[test]
    fn bernstein_examples() {
        assert_eq!(bernstein_kl_upper(0.4, 0.2, 0.0, 1.0), 0.4);
        assert_abs_diff_eq!(bernstein_kl_upper(0.4, 0.0, 0.3, 1.0), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn cnt_pseudo_examples() {
        let sp = spec(0.1, 5, 2, 3);
        let b0 = beta(0.0, &sp);
        assert!(cnt_pseudo_bound_holds(0.0, 0.0, b0, b0, beta_cnt(&sp)));
        assert!(cnt_pseudo_bound_holds(100.0, 150.0, beta(100.0, &sp), beta(150.0, &sp), beta_cnt(&sp)));
    }

    #[test]
    fn complexity_bound_is_large_and_decreasing_in_epsilon() {
        let a = sample_complexity_bound(BoundKind::RewardFree, 7, 2, 5, 1.0, 0.5, 0.1);
        let b = sample_complexity_bound(BoundKind::RewardFree, 7, 2, 5, 1.0, 0.3, 0.1);
        let c = sample_complexity_bound(BoundKind::BestPolicy, 7, 2, 5, 1.0, 0.3, 0.1);
        assert!(a > 1e6 && b > a && c < b);
    }
}
