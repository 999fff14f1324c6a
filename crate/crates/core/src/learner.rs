//! Version-space learner: optimistic planning over the set of follower
//! parameters consistent with every observed response, with a margin
//! `epsilon` that forces each mistake to cut the set substantially.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{dot, norm2, step, Dsg, FollowerOracle, MixedStrategy, StateId};
use crate::opt::{sample_version_space, solve_optimistic_with, OptimisticProblem, SolverOptions};
use crate::record::{EpisodeLog, EpisodeRecord, FallbackEvent, RunResult, SegmentReport, StepLog};
use crate::rng::{categorical, ids, stream, Stream};

/// Rows within this max-norm distance of an existing row are not stored.
pub const DEDUP_TOL: f64 = 1e-12;
/// Local margin halving stops below this value.
pub const MIN_EPSILON: f64 = 1e-6;

/// Unit vectors `theta` with `c . theta >= 0` for every stored row `c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VersionSpace {
    p: usize,
    rows: Vec<Vec<f64>>,
}

impl VersionSpace {
    pub fn new(p: usize) -> Self {
        VersionSpace { p, rows: Vec::new() }
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Smallest `c . theta` over the rows; `+inf` when there are none.
    pub fn min_slack(&self, theta: &[f64]) -> f64 {
        self.rows.iter().map(|c| dot(c, theta)).fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, theta: &[f64], tol: f64) -> bool {
        (norm2(theta) - 1.0).abs() <= 1e-9 && self.min_slack(theta) >= -tol
    }

    /// Adds a row unless an equal one is already stored. Returns whether it
    /// was added.
    pub fn push(&mut self, row: Vec<f64>) -> bool {
        assert_eq!(row.len(), self.p, "row dimension");
        let dup = self
            .rows
            .iter()
            .any(|c| c.iter().zip(&row).all(|(u, v)| (u - v).abs() <= DEDUP_TOL));
        if !dup {
            self.rows.push(row);
        }
        !dup
    }

    /// Records that the follower answered `x` with `b_obs`: one row
    /// `(x^T (M_b_obs - M_b'))^T` per alternative `b'`. Returns how many
    /// rows were new.
    pub fn update(&mut self, dsg: &Dsg, x: &MixedStrategy, b_obs: usize) -> usize {
        (0..dsg.m())
            .filter(|&other| other != b_obs)
            .map(|other| self.push(dsg.margin_row(x.probs(), b_obs, other)) as usize)
            .sum()
    }
}

/// `2 * T^(-1/p)`.
pub fn epsilon_schedule(episodes: usize, p: usize) -> f64 {
    assert!(episodes >= 1 && p >= 1);
    2.0 * (episodes as f64).powf(-1.0 / p as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EpsilonChoice {
    Auto,
    Fixed(f64),
}

impl EpsilonChoice {
    pub fn resolve(self, episodes: usize, p: usize) -> f64 {
        match self {
            EpsilonChoice::Auto => epsilon_schedule(episodes, p),
            EpsilonChoice::Fixed(e) => e,
        }
    }
}

impl fmt::Display for EpsilonChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EpsilonChoice::Auto => f.write_str("auto"),
            EpsilonChoice::Fixed(e) => write!(f, "{e}"),
        }
    }
}

// JSON form: the string "auto" or a number.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum EpsilonRepr {
    Number(f64),
    Word(String),
}

impl Serialize for EpsilonChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            EpsilonChoice::Auto => EpsilonRepr::Word("auto".into()),
            EpsilonChoice::Fixed(e) => EpsilonRepr::Number(*e),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for EpsilonChoice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        match EpsilonRepr::deserialize(d)? {
            EpsilonRepr::Number(e) if e > 0.0 && e.is_finite() => Ok(EpsilonChoice::Fixed(e)),
            EpsilonRepr::Number(e) => Err(D::Error::custom(format!("epsilon must be positive, got {e}"))),
            EpsilonRepr::Word(w) if w == "auto" => Ok(EpsilonChoice::Auto),
            EpsilonRepr::Word(w) => Err(D::Error::custom(format!("expected \"auto\" or a number, got {w:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub episodes: usize,
    pub epsilon: EpsilonChoice,
    pub candidates: usize,
    /// Rejection proposals per `get_policy` call; defaults to 200 per candidate.
    pub budget: Option<usize>,
    pub alternation_rounds: usize,
    pub min_epsilon: f64,
    pub seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            episodes: 1,
            epsilon: EpsilonChoice::Auto,
            candidates: crate::opt::DEFAULT_CANDIDATES,
            budget: None,
            alternation_rounds: 1,
            min_epsilon: MIN_EPSILON,
            seed: 0,
        }
    }
}

impl LearnerConfig {
    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            candidates: self.candidates,
            budget: self.budget.unwrap_or(crate::opt::DEFAULT_BUDGET_FACTOR * self.candidates),
            alternation_rounds: self.alternation_rounds,
        }
    }

    fn check(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Invariant("episode count must be at least 1".into()));
        }
        if self.candidates == 0 {
            return Err(Error::Invariant("candidate count must be at least 1".into()));
        }
        if let EpsilonChoice::Fixed(e) = self.epsilon {
            if !(e > 0.0) {
                return Err(Error::Invariant(format!("epsilon must be positive, got {e}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyEntry {
    pub x: MixedStrategy,
    pub theta: Vec<f64>,
    pub b: usize,
    pub vtilde: f64,
    /// Margin the entry was solved with; `0` for a uniform fallback.
    pub epsilon: f64,
    pub fallback: bool,
}

/// One entry per state, in layer-major order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub entries: Vec<PolicyEntry>,
}

impl PolicyTable {
    pub fn get(&self, dsg: &Dsg, s: StateId) -> &PolicyEntry {
        &self.entries[dsg.flat(s)]
    }

    pub fn root(&self) -> &PolicyEntry {
        &self.entries[0]
    }

    pub fn strategies(&self) -> Vec<MixedStrategy> {
        self.entries.iter().map(|e| e.x.clone()).collect()
    }

    pub fn fallback_states(&self, dsg: &Dsg) -> Vec<StateId> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.fallback)
            .map(|(i, _)| dsg.state_at(i))
            .collect()
    }

    /// Smallest margin among states solved without fallback.
    pub fn epsilon_floor(&self) -> Option<f64> {
        self.entries.iter().filter(|e| !e.fallback).map(|e| e.epsilon).reduce(f64::min)
    }
}

/// `q_b[a] = r(s, a, b) + sum_s' P(s, a, b, s') v(s')` for every `b`, with
/// `next` the values of the following layer (empty in the last layer).
pub fn continuation_objectives(dsg: &Dsg, s: StateId, next: &[f64]) -> Vec<Vec<f64>> {
    let terminal = dsg.is_terminal_layer(s);
    (0..dsg.m())
        .map(|b| {
            (0..dsg.n())
                .map(|a| {
                    let r = dsg.reward(s, a, b);
                    if terminal {
                        r
                    } else {
                        r + dot(dsg.transition(s, a, b), next)
                    }
                })
                .collect()
        })
        .collect()
}

/// Plans backwards from the last layer, solving the optimistic program at
/// every state against one shared set of sampled parameters.
///
/// A state whose program is infeasible is retried with half the margin
/// until it succeeds or the margin drops below `min_epsilon`; after that
/// the state plays uniformly and is flagged as a fallback.
pub fn get_policy(
    vs: &VersionSpace,
    dsg: &Dsg,
    epsilon: f64,
    opts: &SolverOptions,
    min_epsilon: f64,
    rng: &mut Stream,
) -> Result<PolicyTable> {
    let candidates = sample_version_space(vs.rows(), dsg.p(), opts.candidates, opts.budget, rng)?;
    let mut entries: Vec<Option<PolicyEntry>> = vec![None; dsg.state_count()];
    let mut next_values: Vec<f64> = Vec::new();
    for h in (1..=dsg.horizon()).rev() {
        let mut values = Vec::with_capacity(dsg.layer_sizes()[h - 1]);
        for s in dsg.layer(h) {
            let objectives = continuation_objectives(dsg, s, &next_values);
            let entry = plan_state(dsg, s, objectives, vs, epsilon, min_epsilon, &candidates, opts)?;
            values.push(entry.vtilde);
            entries[dsg.flat(s)] = Some(entry);
        }
        next_values = values;
    }
    Ok(PolicyTable { entries: entries.into_iter().map(Option::unwrap).collect() })
}

#[allow(clippy::too_many_arguments)]
fn plan_state(
    dsg: &Dsg,
    s: StateId,
    objectives: Vec<Vec<f64>>,
    vs: &VersionSpace,
    epsilon: f64,
    min_epsilon: f64,
    candidates: &[Vec<f64>],
    opts: &SolverOptions,
) -> Result<PolicyEntry> {
    let mut prob = OptimisticProblem {
        objectives,
        features: dsg.features(),
        constraints: vs.rows(),
        epsilon,
        support: dsg.available(s),
    };
    loop {
        match solve_optimistic_with(&prob, candidates, opts.alternation_rounds) {
            Ok(sol) => {
                return Ok(PolicyEntry {
                    x: sol.x,
                    theta: sol.theta,
                    b: sol.b,
                    vtilde: sol.value,
                    epsilon: prob.epsilon,
                    fallback: false,
                })
            }
            Err(Error::AllInfeasible { .. }) if prob.epsilon / 2.0 >= min_epsilon => prob.epsilon /= 2.0,
            Err(Error::AllInfeasible { .. }) => break,
            Err(e) => return Err(e),
        }
    }
    let x = MixedStrategy::uniform(dsg.n(), dsg.available(s));
    let theta = candidates[0].clone();
    let b = crate::game::best_response(dsg, s, &x, &theta, crate::game::DEFAULT_TIE_TOL)?;
    let vtilde = dot(&prob.objectives[b], x.probs());
    Ok(PolicyEntry { x, theta, b, vtilde, epsilon: 0.0, fallback: true })
}

/// Plays one episode with `policy`, updating `vs` after every observed
/// response.
pub fn run_episode(
    dsg: &Dsg,
    oracle: &FollowerOracle,
    policy: &PolicyTable,
    vs: &mut VersionSpace,
    rng: &mut Stream,
) -> Result<EpisodeLog> {
    let mut s = StateId::root();
    let mut steps = Vec::with_capacity(dsg.horizon());
    loop {
        let entry = policy.get(dsg, s);
        let b_obs = oracle.respond(dsg, s, &entry.x)?;
        vs.update(dsg, &entry.x, b_obs);
        let action = categorical(entry.x.probs(), rng);
        let reward = dsg.reward(s, action, b_obs);
        steps.push(StepLog {
            state: s,
            x: entry.x.clone(),
            theta: Some(entry.theta.clone()),
            b_pred: Some(entry.b),
            b_obs,
            action,
            reward,
            mistake: b_obs != entry.b,
            epsilon: Some(entry.epsilon),
        });
        if dsg.is_terminal_layer(s) {
            break;
        }
        s = step(dsg, s, action, b_obs, rng)?;
    }
    Ok(EpisodeLog { steps })
}

/// Random streams of one learner run.
struct Streams {
    policy: Stream,
    env: Stream,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Streams { policy: stream(seed, ids::POLICY), env: stream(seed, ids::ENVIRONMENT) }
    }
}

#[allow(clippy::too_many_arguments)]
fn play_episodes(
    dsg: &Dsg,
    oracle: &FollowerOracle,
    cfg: &LearnerConfig,
    episodes: usize,
    epsilon: f64,
    segment: Option<usize>,
    vs: &mut VersionSpace,
    streams: &mut Streams,
    out: &mut RunResult,
) -> Result<()> {
    let opts = cfg.solver_options();
    for _ in 0..episodes {
        let episode = out.episodes.len() + 1;
        let table = get_policy(vs, dsg, epsilon, &opts, cfg.min_epsilon, &mut streams.policy)?;
        let fallbacks = table.fallback_states(dsg);
        out.fallbacks.extend(fallbacks.iter().map(|&state| FallbackEvent {
            episode,
            state,
            last_epsilon: cfg.min_epsilon,
        }));
        let log = run_episode(dsg, oracle, &table, vs, &mut streams.env)?;
        out.episodes.push(EpisodeRecord {
            episode,
            realized_return: log.realized_return(),
            vtilde_root: Some(table.root().vtilde),
            mistakes: log.mistakes(),
            epsilon: Some(epsilon),
            epsilon_floor: table.epsilon_floor(),
            fallback_events: fallbacks.len(),
            segment,
        });
        out.rows_after.push(vs.len());
        out.logs.push(log);
    }
    Ok(())
}

/// Runs `cfg.episodes` episodes of plan-then-play, threading the version
/// space through.
pub fn run_learning(dsg: &Dsg, oracle: &FollowerOracle, cfg: &LearnerConfig) -> Result<RunResult> {
    run_learning_from(dsg, oracle, cfg, VersionSpace::new(dsg.p())).map(|(run, _)| run)
}

/// [`run_learning`] starting from an existing version space; also returns
/// the final one.
pub fn run_learning_from(
    dsg: &Dsg,
    oracle: &FollowerOracle,
    cfg: &LearnerConfig,
    mut vs: VersionSpace,
) -> Result<(RunResult, VersionSpace)> {
    cfg.check()?;
    let epsilon = cfg.epsilon.resolve(cfg.episodes, dsg.p());
    let mut out = RunResult { learner: "version_space".into(), horizon: dsg.horizon(), ..Default::default() };
    let mut streams = Streams::new(cfg.seed);
    play_episodes(dsg, oracle, cfg, cfg.episodes, epsilon, None, &mut vs, &mut streams, &mut out)?;
    Ok((out, vs))
}

/// Doubling wrapper: segment `i` runs `2^i * t0` episodes with the margin
/// scheduled for that length, keeping the version space across segments.
/// `cfg.episodes` and `cfg.epsilon` are ignored.
pub fn run_anytime(
    dsg: &Dsg,
    oracle: &FollowerOracle,
    t0: usize,
    segments: usize,
    cfg: &LearnerConfig,
) -> Result<RunResult> {
    if t0 == 0 {
        return Err(Error::Invariant("initial segment length must be at least 1".into()));
    }
    cfg.check()?;
    let mut vs = VersionSpace::new(dsg.p());
    let mut out = RunResult { learner: "version_space".into(), horizon: dsg.horizon(), ..Default::default() };
    let mut streams = Streams::new(cfg.seed);
    for i in 0..segments {
        let length = t0 << i;
        let epsilon = epsilon_schedule(length, dsg.p());
        let first_episode = out.episodes.len() + 1;
        let rows_at_start = vs.len();
        play_episodes(dsg, oracle, cfg, length, epsilon, Some(i), &mut vs, &mut streams, &mut out)?;
        out.segments.push(SegmentReport {
            index: i,
            first_episode,
            length,
            epsilon,
            rows_at_start,
            rows_at_end: vs.len(),
        });
    }
    Ok(out)
}
