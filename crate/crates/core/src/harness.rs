//! Experiment configuration, multi-seed drivers and tabular output.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::baselines::{random_episode, GenerativeSampler};
use crate::bpi::{BpiAgent, BpiConfig};
use crate::confidence::{beta_cnt, sample_complexity_bound, BoundKind, ThresholdMode};
use crate::empirical::EmpiricalState;
use crate::envs::{make_double_chain, make_gridworld};
use crate::error::{Error, Result};
use crate::mdp::{eval_policy, occupancy, plan_optimal, PseudoCounts, RewardTable, TabularMdp};
use crate::rf::{Outcome, RfAgent, RfConfig};
use crate::rng::{child_seed, seeded, SimRng};

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Flat experiment description read from JSON. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// `double_chain` or `gridworld`.
    pub env: String,
    pub length: usize,
    pub side: usize,
    pub horizon: usize,
    /// Defaults to 0.1 on the chain and 0.05 on the grid.
    pub slip: Option<f64>,
    pub gamma: f64,
    pub reward_cell: (usize, usize),
    pub start_cell: (usize, usize),
    /// Any of `rp`, `gm`, `rf`, `rf_w`, `bpi`.
    pub agents: Vec<String>,
    pub epsilon: f64,
    pub delta: f64,
    /// Clip the RF error bounds at the value ceiling; the unclipped form is the default.
    pub clipped: bool,
    pub pooled: bool,
    /// Transition budget per run.
    pub budget: u64,
    /// Transition counts at which errors are measured; empty means `[budget]`.
    pub checkpoints: Vec<u64>,
    pub seeds: usize,
    pub master_seed: u64,
    pub out_dir: String,
    /// Accuracy grid for sample-complexity estimates.
    pub epsilons: Vec<f64>,
    /// Size of the random reward battery for error curves; 0 uses the environment reward.
    pub num_rewards: usize,
    /// Episodes between checkpoint-log rows of a single run; 0 logs only the ends.
    pub log_every: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: "double_chain".into(),
            length: 31,
            side: 21,
            horizon: 20,
            slip: None,
            gamma: 1.0,
            reward_cell: (16, 16),
            start_cell: (10, 10),
            agents: vec!["rp".into(), "gm".into(), "rf".into(), "bpi".into()],
            epsilon: 0.1,
            delta: 0.1,
            clipped: false,
            pooled: false,
            budget: 5000,
            checkpoints: Vec::new(),
            seeds: 4,
            master_seed: 0,
            out_dir: "out".into(),
            epsilons: vec![0.8, 0.6, 0.4, 0.3],
            num_rewards: 0,
            log_every: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.agent_kinds()?;
        self.build_env()?;
        if self.seeds == 0 {
            return Err(config_err("seeds must be at least 1"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(config_err(format!("delta {} outside (0, 1)", self.delta)));
        }
        if !(self.epsilon > 0.0) || self.epsilons.iter().any(|&e| !(e > 0.0)) {
            return Err(config_err("accuracies must be positive"));
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(config_err("checkpoints must be strictly increasing"));
        }
        if self.checkpoints.last().is_some_and(|&n| n > self.budget) {
            return Err(config_err("checkpoints must not exceed the budget"));
        }
        Ok(())
    }

    pub fn agent_kinds(&self) -> Result<Vec<AgentKind>> {
        if self.agents.is_empty() {
            return Err(config_err("no agents configured"));
        }
        self.agents.iter().map(|name| name.parse()).collect()
    }

    pub fn build_env(&self) -> Result<TabularMdp> {
        let built = match self.env.as_str() {
            "double_chain" => make_double_chain(self.length, self.horizon, self.slip.unwrap_or(0.1), self.gamma),
            "gridworld" => make_gridworld(
                self.side,
                self.horizon,
                self.slip.unwrap_or(0.05),
                self.reward_cell,
                self.start_cell,
                self.gamma,
            ),
            other => return Err(config_err(format!("unknown environment '{other}'"))),
        };
        built.map_err(|e| config_err(e.to_string()))
    }

    pub fn checkpoint_schedule(&self) -> Vec<u64> {
        if self.checkpoints.is_empty() {
            vec![self.budget]
        } else {
            self.checkpoints.clone()
        }
    }

    fn count_mode(&self) -> ThresholdMode {
        if self.pooled {
            ThresholdMode::StationaryPooled
        } else {
            ThresholdMode::PerStep
        }
    }

    fn rf_config(&self) -> Result<RfConfig> {
        let cfg = RfConfig::new(self.epsilon, self.delta)?;
        Ok(RfConfig { clipped: self.clipped, stationary_pooled: self.pooled, log_every: self.log_every, ..cfg })
    }

    fn bpi_config(&self) -> Result<BpiConfig> {
        Ok(BpiConfig::new(self.epsilon, self.delta)?.with_log_every(self.log_every))
    }

    fn run_rng(&self, kind: AgentKind, seed: usize) -> SimRng {
        seeded(child_seed(self.master_seed, &[seed as u64, kind.code()]))
    }

    fn episode_budget(&self, mdp: &TabularMdp) -> u64 {
        self.budget / mdp.horizon() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AgentKind {
    RandomPolicy,
    GenerativeModel,
    RfUcrl,
    RfW,
    BpiUcrl,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::RandomPolicy => "rp",
            AgentKind::GenerativeModel => "gm",
            AgentKind::RfUcrl => "rf",
            AgentKind::RfW => "rf_w",
            AgentKind::BpiUcrl => "bpi",
        }
    }

    /// Stable index used for seed splitting.
    fn code(self) -> u64 {
        self as u64
    }

    pub fn has_stopping_rule(self) -> bool {
        matches!(self, AgentKind::RfUcrl | AgentKind::RfW | AgentKind::BpiUcrl)
    }

    /// Factor applied to `epsilon` before comparison with the stop value.
    fn stop_scale(self) -> f64 {
        match self {
            AgentKind::BpiUcrl => 1.0,
            _ => 0.5,
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "rp" => AgentKind::RandomPolicy,
            "gm" => AgentKind::GenerativeModel,
            "rf" => AgentKind::RfUcrl,
            "rf_w" => AgentKind::RfW,
            "bpi" => AgentKind::BpiUcrl,
            other => return Err(config_err(format!("unknown agent '{other}'"))),
        })
    }
}

/// Any of the agents, advanced one episode (or one generative draw) at a time.
enum Explorer {
    Random(EmpiricalState),
    Generative(GenerativeSampler, EmpiricalState),
    Rf(Box<RfAgent>),
    Bpi(Box<BpiAgent>),
}

impl Explorer {
    fn new(kind: AgentKind, mdp: &TabularMdp, cfg: &ExperimentConfig) -> Result<Self> {
        Ok(match kind {
            AgentKind::RandomPolicy => Explorer::Random(EmpiricalState::for_mdp(mdp)),
            AgentKind::GenerativeModel => {
                Explorer::Generative(GenerativeSampler::new(mdp, cfg.count_mode())?, EmpiricalState::for_mdp(mdp))
            }
            AgentKind::RfUcrl | AgentKind::RfW => {
                let rf = cfg.rf_config()?;
                let spec = rf.threshold_spec(mdp)?;
                let agent = if kind == AgentKind::RfUcrl {
                    RfAgent::new(mdp, rf, spec)?
                } else {
                    RfAgent::new_w_bonus(mdp, rf, spec)?
                };
                Explorer::Rf(Box::new(agent))
            }
            AgentKind::BpiUcrl => {
                let bpi = cfg.bpi_config()?;
                let spec = bpi.threshold_spec(mdp)?;
                Explorer::Bpi(Box::new(BpiAgent::new(mdp, mdp.rewards(), bpi, spec)?))
            }
        })
    }

    fn empirical(&self) -> &EmpiricalState {
        match self {
            Explorer::Random(st) | Explorer::Generative(_, st) => st,
            Explorer::Rf(agent) => agent.empirical(),
            Explorer::Bpi(agent) => agent.empirical(),
        }
    }

    fn advance(&mut self, mdp: &TabularMdp, rng: &mut SimRng) {
        match self {
            Explorer::Random(st) => random_episode(mdp, st, rng),
            Explorer::Generative(sampler, st) => sampler.draw(mdp, st, rng),
            Explorer::Rf(agent) => agent.explore_episode(mdp, rng),
            Explorer::Bpi(agent) => agent.explore_episode(mdp, rng),
        }
    }

    fn stop_value(&self) -> Option<f64> {
        match self {
            Explorer::Random(_) | Explorer::Generative(..) => None,
            Explorer::Rf(agent) => Some(agent.stop_value()),
            Explorer::Bpi(agent) => Some(agent.stop_value()),
        }
    }

    fn should_stop(&self) -> bool {
        match self {
            Explorer::Random(_) | Explorer::Generative(..) => false,
            Explorer::Rf(agent) => agent.should_stop(),
            Explorer::Bpi(agent) => agent.should_stop(),
        }
    }
}

/// Reward tables and optimal values used to score checkpoints.
struct Evaluation {
    rewards: Vec<RewardTable>,
    optimal: Vec<f64>,
}

impl Evaluation {
    fn new(cfg: &ExperimentConfig, mdp: &TabularMdp) -> Result<Self> {
        let rewards = if cfg.num_rewards == 0 {
            vec![mdp.rewards().clone()]
        } else {
            let mut rng = seeded(child_seed(cfg.master_seed, &[u64::MAX]));
            (0..cfg.num_rewards)
                .map(|_| RewardTable::random(mdp.horizon(), mdp.num_states(), mdp.num_actions(), &mut rng))
                .collect()
        };
        let optimal = rewards
            .iter()
            .map(|r| Ok(plan_optimal(mdp, r)?.1.v(0, mdp.initial_state())))
            .collect::<Result<_>>()?;
        Ok(Self { rewards, optimal })
    }

    /// `|V_hat* - V*|` at the initial state (worst case over the battery), or
    /// `V* - V^pi` for the current BPI recommendation.
    fn error(&self, explorer: &Explorer, mdp: &TabularMdp, mode: ThresholdMode) -> Result<f64> {
        let s1 = mdp.initial_state();
        if let Explorer::Bpi(agent) = explorer {
            let optimal = plan_optimal(mdp, mdp.rewards())?.1.v(0, s1);
            let value = eval_policy(mdp, &agent.recommendation(), mdp.rewards())?.v(0, s1);
            return Ok((optimal - value).abs());
        }
        let empirical = explorer.empirical().empirical_mdp(mdp, mode)?;
        let mut worst: f64 = 0.0;
        for (reward, &optimal) in self.rewards.iter().zip(&self.optimal) {
            let estimate = plan_optimal(&empirical, reward)?.1.v(0, s1);
            worst = worst.max((estimate - optimal).abs());
        }
        Ok(worst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointRecord {
    /// Transitions collected when the checkpoint was taken.
    pub n: u64,
    pub error: f64,
    pub stop_value: Option<f64>,
}

/// One agent on one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub agent: AgentKind,
    pub seed: usize,
    pub checkpoints: Vec<CheckpointRecord>,
    /// Episode at which the stopping rule first fired, if it did.
    pub tau: Option<u64>,
    pub visits: Vec<u64>,
    pub wall_clock: Duration,
}

fn simulate(
    cfg: &ExperimentConfig,
    mdp: &TabularMdp,
    eval: Option<&Evaluation>,
    kind: AgentKind,
    seed: usize,
) -> Result<RunRecord> {
    let start = Instant::now();
    let mut rng = cfg.run_rng(kind, seed);
    let mut explorer = Explorer::new(kind, mdp, cfg)?;
    let mut tau = None;
    let mut checkpoints = Vec::new();
    for n in cfg.checkpoint_schedule() {
        while explorer.empirical().total_transitions() < n {
            if tau.is_none() && explorer.should_stop() {
                tau = Some(explorer.empirical().episodes());
            }
            explorer.advance(mdp, &mut rng);
        }
        if let Some(eval) = eval {
            checkpoints.push(CheckpointRecord {
                n: explorer.empirical().total_transitions(),
                error: eval.error(&explorer, mdp, cfg.count_mode())?,
                stop_value: explorer.stop_value(),
            });
        }
    }
    if tau.is_none() && explorer.should_stop() {
        tau = Some(explorer.empirical().episodes());
    }
    Ok(RunRecord {
        agent: kind,
        seed,
        checkpoints,
        tau,
        visits: explorer.empirical().state_visits(),
        wall_clock: start.elapsed(),
    })
}

/// Mean and standard error of the checkpoint errors of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub agent: AgentKind,
    pub n: u64,
    pub mean: f64,
    pub std_error: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCurve {
    pub rows: Vec<CurveRow>,
    pub records: Vec<RunRecord>,
}

impl ErrorCurve {
    /// Mean error of `agent` at its last checkpoint.
    pub fn final_mean(&self, agent: AgentKind) -> Option<f64> {
        self.rows.iter().filter(|r| r.agent == agent).last().map(|r| r.mean)
    }

    pub fn to_table(&self) -> Table {
        let mut table = Table::new("curve.v1", &["agent", "n", "mean_error", "std_error", "runs"]);
        for r in &self.rows {
            table.push(vec![
                Cell::Text(r.agent.name().into()),
                Cell::Int(r.n),
                Cell::Float(r.mean),
                Cell::Float(r.std_error),
                Cell::Int(r.runs as u64),
            ]);
        }
        table
    }
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn run_all(cfg: &ExperimentConfig, evaluate: bool) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let mdp = cfg.build_env()?;
    let eval = if evaluate { Some(Evaluation::new(cfg, &mdp)?) } else { None };
    let mut records = Vec::new();
    for kind in cfg.agent_kinds()? {
        for seed in 0..cfg.seeds {
            records.push(simulate(cfg, &mdp, eval.as_ref(), kind, seed)?);
        }
    }
    Ok(records)
}

/// Estimation error against the number of collected transitions, averaged over seeds.
pub fn run_error_curve(cfg: &ExperimentConfig) -> Result<ErrorCurve> {
    let records = run_all(cfg, true)?;
    let schedule = cfg.checkpoint_schedule();
    let mut rows = Vec::new();
    for kind in cfg.agent_kinds()? {
        for (i, &n) in schedule.iter().enumerate() {
            let errors: Vec<f64> =
                records.iter().filter(|r| r.agent == kind).map(|r| r.checkpoints[i].error).collect();
            let (mean, std_error) = mean_and_stderr(&errors);
            rows.push(CurveRow { agent: kind, n, mean, std_error, runs: errors.len() });
        }
    }
    Ok(ErrorCurve { rows, records })
}

/// Visits per state, summed over steps and seeds, for each agent.
#[derive(Debug, Clone, PartialEq)]
pub struct VisitTable {
    pub agents: Vec<AgentKind>,
    /// `visits[i][s]` for agent `agents[i]`.
    pub visits: Vec<Vec<u64>>,
}

impl VisitTable {
    pub fn of(&self, agent: AgentKind) -> Option<&[u64]> {
        self.agents.iter().position(|&a| a == agent).map(|i| self.visits[i].as_slice())
    }

    pub fn to_table(&self) -> Table {
        let mut table = Table::new("visits.v1", &["agent", "state", "visits"]);
        for (agent, counts) in self.agents.iter().zip(&self.visits) {
            for (s, &c) in counts.iter().enumerate() {
                table.push(vec![Cell::Text(agent.name().into()), Cell::Int(s as u64), Cell::Int(c)]);
            }
        }
        table
    }
}

pub fn run_visit_counts(cfg: &ExperimentConfig) -> Result<VisitTable> {
    let records = run_all(&ExperimentConfig { checkpoints: Vec::new(), ..cfg.clone() }, false)?;
    let agents = cfg.agent_kinds()?;
    let visits = agents
        .iter()
        .map(|&kind| {
            let mut total = vec![0; records[0].visits.len()];
            for r in records.iter().filter(|r| r.agent == kind) {
                total.iter_mut().zip(&r.visits).for_each(|(t, v)| *t += v);
            }
            total
        })
        .collect();
    Ok(VisitTable { agents, visits })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauRow {
    pub agent: AgentKind,
    pub seed: usize,
    pub epsilon: f64,
    /// `None` when the budget ran out first.
    pub tau: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauSummary {
    pub agent: AgentKind,
    pub epsilon: f64,
    /// Mean over runs that stopped within the budget.
    pub mean_tau: f64,
    pub std_error: f64,
    pub censored_fraction: f64,
    /// Closed-form high-probability bound on the stopping time, where one applies.
    pub bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleComplexity {
    pub per_seed: Vec<TauRow>,
    pub summary: Vec<TauSummary>,
}

impl SampleComplexity {
    pub fn to_table(&self) -> Table {
        let mut table = Table::new(
            "complexity.v1",
            &["agent", "epsilon", "mean_tau", "std_error", "censored_fraction", "theorem_bound"],
        );
        for r in &self.summary {
            table.push(vec![
                Cell::Text(r.agent.name().into()),
                Cell::Float(r.epsilon),
                Cell::Float(r.mean_tau),
                Cell::Float(r.std_error),
                Cell::Float(r.censored_fraction),
                r.bound.map_or(Cell::Missing, Cell::Float),
            ]);
        }
        table
    }

    pub fn per_seed_table(&self) -> Table {
        let mut table = Table::new("tau.v1", &["agent", "seed", "epsilon", "tau"]);
        for r in &self.per_seed {
            table.push(vec![
                Cell::Text(r.agent.name().into()),
                Cell::Int(r.seed as u64),
                Cell::Float(r.epsilon),
                r.tau.map_or(Cell::Missing, Cell::Int),
            ]);
        }
        table
    }
}

/// Stopping times over the `epsilons` grid, read off one long run per seed
/// as the first episode at which the stop value crosses each threshold.
pub fn run_sample_complexity(cfg: &ExperimentConfig) -> Result<SampleComplexity> {
    cfg.validate()?;
    let mdp = cfg.build_env()?;
    let kinds: Vec<AgentKind> = cfg.agent_kinds()?.into_iter().filter(|k| k.has_stopping_rule()).collect();
    if kinds.is_empty() {
        return Err(config_err("sample complexity needs an agent with a stopping rule"));
    }
    if cfg.epsilons.is_empty() {
        return Err(config_err("the epsilon grid is empty"));
    }
    let budget = cfg.episode_budget(&mdp);
    let mut per_seed = Vec::new();
    for &kind in &kinds {
        for seed in 0..cfg.seeds {
            let mut rng = cfg.run_rng(kind, seed);
            let mut explorer = Explorer::new(kind, &mdp, cfg)?;
            let mut taus: Vec<Option<u64>> = vec![None; cfg.epsilons.len()];
            loop {
                let t = explorer.empirical().episodes();
                let value = explorer.stop_value().expect("agent with a stopping rule");
                for (tau, &eps) in taus.iter_mut().zip(&cfg.epsilons) {
                    if tau.is_none() && value <= kind.stop_scale() * eps {
                        *tau = Some(t);
                    }
                }
                if taus.iter().all(Option::is_some) || t >= budget {
                    break;
                }
                explorer.advance(&mdp, &mut rng);
            }
            for (tau, &epsilon) in taus.into_iter().zip(&cfg.epsilons) {
                per_seed.push(TauRow { agent: kind, seed, epsilon, tau });
            }
        }
    }
    let (ns, na, horizon) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let mut summary = Vec::new();
    for &kind in &kinds {
        for &epsilon in &cfg.epsilons {
            let rows: Vec<&TauRow> = per_seed.iter().filter(|r| r.agent == kind && r.epsilon == epsilon).collect();
            let stopped: Vec<f64> = rows.iter().filter_map(|r| r.tau.map(|t| t as f64)).collect();
            let (mean_tau, std_error) = mean_and_stderr(&stopped);
            let bound_kind = match kind {
                AgentKind::RfUcrl => Some(BoundKind::RewardFree),
                AgentKind::BpiUcrl => Some(BoundKind::BestPolicy),
                _ => None,
            };
            summary.push(TauSummary {
                agent: kind,
                epsilon,
                mean_tau,
                std_error,
                censored_fraction: 1.0 - stopped.len() as f64 / rows.len() as f64,
                bound: bound_kind.map(|b| sample_complexity_bound(b, ns, na, horizon, mdp.gamma(), epsilon, cfg.delta)),
            });
        }
    }
    Ok(SampleComplexity { per_seed, summary })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageReport {
    pub runs: usize,
    /// Runs in which `n KL(p_hat, p) <= beta(n)` failed for some `(t, h, s, a)`.
    pub kl_failures: usize,
    /// Runs in which `n >= n_bar / 2 - beta_cnt` failed for some `(t, h, s, a)`.
    pub count_failures: usize,
    pub delta: f64,
}

impl CoverageReport {
    pub fn kl_fraction(&self) -> f64 {
        self.kl_failures as f64 / self.runs as f64
    }

    pub fn count_fraction(&self) -> f64 {
        self.count_failures as f64 / self.runs as f64
    }

    /// `delta / 2` plus three binomial standard errors.
    pub fn tolerance(&self) -> f64 {
        let p = self.delta / 2.0;
        p + 3.0 * (p * (1.0 - p) / self.runs as f64).sqrt()
    }

    pub fn to_table(&self) -> Table {
        let mut table = Table::new(
            "coverage.v1",
            &["runs", "delta", "kl_failures", "kl_fraction", "count_failures", "count_fraction", "tolerance"],
        );
        table.push(vec![
            Cell::Int(self.runs as u64),
            Cell::Float(self.delta),
            Cell::Int(self.kl_failures as u64),
            Cell::Float(self.kl_fraction()),
            Cell::Int(self.count_failures as u64),
            Cell::Float(self.count_fraction()),
            Cell::Float(self.tolerance()),
        ]);
        table
    }
}

/// Runs RF-UCRL (stopping rule ignored) for the episode budget on every seed
/// and records whether the concentration events ever failed.
pub fn run_event_coverage(cfg: &ExperimentConfig) -> Result<CoverageReport> {
    cfg.validate()?;
    let mdp = cfg.build_env()?;
    let rf = cfg.rf_config()?;
    let spec = rf.threshold_spec(&mdp)?;
    let cnt_threshold = beta_cnt(&spec);
    let (ns, na, horizon) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let budget = cfg.episode_budget(&mdp);
    let mut kl_failures = 0;
    let mut count_failures = 0;
    let mut row = vec![0.0; ns];
    for seed in 0..cfg.seeds {
        let mut rng = cfg.run_rng(AgentKind::RfUcrl, seed);
        let mut agent = RfAgent::new(&mdp, rf, spec)?;
        let mut pseudo = PseudoCounts::new(horizon, ns, na);
        let mut kl_failed = false;
        let mut count_failed = false;
        for _ in 0..budget {
            pseudo.add(&occupancy(&mdp, &agent.policy())?)?;
            let before = agent.empirical().clone();
            agent.explore_episode(&mdp, &mut rng);
            let st = agent.empirical();
            for h in 0..horizon {
                for s in 0..ns {
                    for a in 0..na {
                        let changed = st.count_for(spec.mode, h, s, a) != before.count_for(spec.mode, h, s, a);
                        if !kl_failed && changed && !st.pair_in_kl_event(&mdp, &spec, h, s, a, &mut row) {
                            kl_failed = true;
                        }
                        let n = st.count(h, s, a) as f64;
                        if !count_failed && n < pseudo.get(h, s, a) / 2.0 - cnt_threshold {
                            count_failed = true;
                        }
                    }
                }
            }
        }
        kl_failures += kl_failed as usize;
        count_failures += count_failed as usize;
    }
    Ok(CoverageReport { runs: cfg.seeds, kl_failures, count_failures, delta: cfg.delta })
}

/// Result of one exploration run with its stopping rule active.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleRun {
    pub agent: AgentKind,
    pub outcome: Outcome,
    pub log: Table,
}

/// Runs one agent with a stopping rule on seed index `seed`.
pub fn run_single(cfg: &ExperimentConfig, kind: AgentKind, seed: usize) -> Result<SingleRun> {
    cfg.validate()?;
    let mdp = cfg.build_env()?;
    let mut rng = cfg.run_rng(kind, seed);
    let budget = cfg.episode_budget(&mdp);
    let (outcome, log) = match kind {
        AgentKind::RfUcrl | AgentKind::RfW => {
            let rf = cfg.rf_config()?.with_budget(budget);
            let spec = rf.threshold_spec(&mdp)?;
            let run = if kind == AgentKind::RfUcrl {
                crate::rf::run_rf_ucrl(&mdp, &rf, &spec, &mut rng)?
            } else {
                crate::rf::run_rf_express(&mdp, &rf, &spec, &mut rng)?
            };
            let mut columns = vec!["t".to_string(), "stop_value".to_string()];
            columns.extend((0..mdp.num_actions()).map(|a| format!("bound_a{a}")));
            columns.extend((0..mdp.num_states()).map(|s| format!("visits_s{s}")));
            let mut table = Table::with_columns("rf_log.v1", columns);
            for c in &run.log {
                let mut cells = vec![Cell::Int(c.t), Cell::Float(c.stop_value)];
                cells.extend(c.step_one.iter().map(|&x| Cell::Float(x)));
                cells.extend(c.visits.iter().map(|&x| Cell::Int(x)));
                table.push(cells);
            }
            (run.outcome, table)
        }
        AgentKind::BpiUcrl => {
            let bpi = cfg.bpi_config()?.with_budget(budget);
            let spec = bpi.threshold_spec(&mdp)?;
            let run = crate::bpi::run_bpi_ucrl(&mdp, mdp.rewards(), &bpi, &spec, &mut rng)?;
            let mut table = Table::new("bpi_log.v1", &["t", "v_upper", "v_lower", "gap"]);
            for c in &run.log {
                table.push(vec![Cell::Int(c.t), Cell::Float(c.v_upper), Cell::Float(c.v_lower), Cell::Float(c.gap)]);
            }
            (run.outcome, table)
        }
        other => return Err(config_err(format!("agent '{other}' has no stopping rule"))),
    };
    Ok(SingleRun { agent: kind, outcome, log })
}

/// Optimal values and actions of the configured environment.
pub fn plan_table(cfg: &ExperimentConfig) -> Result<(f64, Table)> {
    cfg.validate()?;
    let mdp = cfg.build_env()?;
    let (policy, values) = plan_optimal(&mdp, mdp.rewards())?;
    let mut table = Table::new("plan.v1", &["step", "state", "value", "action"]);
    for h in 0..mdp.horizon() {
        for s in 0..mdp.num_states() {
            table.push(vec![
                Cell::Int(h as u64),
                Cell::Int(s as u64),
                Cell::Float(values.v(h, s)),
                Cell::Int(policy.action(h, s) as u64),
            ]);
        }
    }
    Ok((values.v(0, mdp.initial_state()), table))
}

/// Writes with 17 significant digits; non-finite values as `inf`, `-inf`, `nan`.
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
    Missing,
}

impl Cell {
    fn text(&self) -> String {
        match self {
            Cell::Int(x) => x.to_string(),
            Cell::Float(x) => format_float(*x),
            Cell::Text(s) => s.clone(),
            Cell::Missing => String::new(),
        }
    }

    fn json(&self) -> serde_json::Value {
        use serde_json::Value;
        match self {
            Cell::Int(x) => Value::from(*x),
            Cell::Float(x) if x.is_finite() => {
                Value::Number(serde_json::Number::from_str(&format_float(*x)).expect("formatted float parses"))
            }
            Cell::Float(_) | Cell::Missing => Value::Null,
            Cell::Text(s) => Value::from(s.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

/// Rows under a versioned schema; every row carries the schema tag as its
/// first field in both CSV and JSON.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub schema: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(schema: &str, columns: &[&str]) -> Self {
        Self::with_columns(schema, columns.iter().map(|c| c.to_string()).collect())
    }

    pub fn with_columns(schema: &str, columns: Vec<String>) -> Self {
        Self { schema: schema.into(), columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(std::iter::once("schema").chain(self.columns.iter().map(String::as_str)))?;
        for row in &self.rows {
            writer.write_record(std::iter::once(self.schema.clone()).chain(row.iter().map(Cell::text)))?;
        }
        let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|row| {
                let mut object = serde_json::Map::new();
                object.insert("schema".into(), self.schema.clone().into());
                for (column, cell) in self.columns.iter().zip(row) {
                    object.insert(column.clone(), cell.json());
                }
                serde_json::Value::Object(object)
            })
            .collect();
        let mut text = serde_json::to_string_pretty(&rows).map_err(|e| Error::Io(e.into()))?;
        text.push('\n');
        Ok(text)
    }

    pub fn render(&self, format: OutputFormat) -> Result<String> {
        match format {
            OutputFormat::Csv => self.to_csv(),
            OutputFormat::Json => self.to_json(),
        }
    }

    /// Writes `dir/stem.{csv,json}`, creating `dir` if needed.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str, format: OutputFormat) -> Result<std::path::PathBuf> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{stem}.{}", format.extension()));
        std::fs::write(&path, self.render(format)?)?;
        Ok(path)
    }
}
