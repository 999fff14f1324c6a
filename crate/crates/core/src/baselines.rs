//! Comparison agents: tabular Q-learning over a grid of mixed strategies, a
//! uniformly random leader and a fixed policy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{step, Dsg, FollowerOracle, MixedStrategy, StateId};
use crate::planning::Policy;
use crate::record::{EpisodeRecord, RunResult};
use crate::rng::{categorical, uniform_simplex, Stream};

/// Largest grid [`enumerate_grid_strategies`] will build.
pub const GRID_LIMIT: usize = 1_000_000;

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// Number of points `z / g` with `z` a composition of `g` into `n` parts.
pub fn grid_size(n: usize, g: usize) -> u128 {
    binomial((g + n - 1) as u128, (n - 1) as u128)
}

/// All strategies `(z_1 / g, ..., z_n / g)` with non-negative integers
/// summing to `g`, in lexicographic order of `z`.
pub fn enumerate_grid_strategies(n: usize, g: usize) -> Result<Vec<MixedStrategy>> {
    assert!(n >= 1 && g >= 1, "grid needs n >= 1 and g >= 1");
    let count = grid_size(n, g);
    if count > GRID_LIMIT as u128 {
        return Err(Error::SizeLimit { count, limit: GRID_LIMIT });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut z = vec![0usize; n];
    compositions(&mut z, 0, g, &mut |z| {
        out.push(MixedStrategy::new(z.iter().map(|&v| v as f64 / g as f64).collect()).unwrap())
    });
    Ok(out)
}

fn compositions(z: &mut [usize], i: usize, left: usize, emit: &mut impl FnMut(&[usize])) {
    if i + 1 == z.len() {
        z[i] = left;
        emit(z);
        return;
    }
    for v in 0..=left {
        z[i] = v;
        compositions(z, i + 1, left - v, emit);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearningRate {
    /// `1 / ceil(visits / divisor)`, clamped to `[min, max]`.
    Visits { divisor: f64, min: f64, max: f64 },
    Constant { alpha: f64 },
}

impl LearningRate {
    pub fn at(&self, visits: u64) -> f64 {
        match *self {
            LearningRate::Visits { divisor, min, max } => {
                let k = (visits as f64 / divisor).ceil().max(1.0);
                (1.0 / k).clamp(min, max)
            }
            LearningRate::Constant { alpha } => alpha,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QConfig {
    pub episodes: usize,
    pub granularity: usize,
    pub exploration: f64,
    pub learning_rate: LearningRate,
}

impl Default for QConfig {
    fn default() -> Self {
        QConfig {
            episodes: 1,
            granularity: 10,
            exploration: 0.1,
            learning_rate: LearningRate::Visits { divisor: 10.0, min: 0.05, max: 1.0 },
        }
    }
}

/// Q-values per state over that state's grid strategies.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    pub grids: Vec<Vec<MixedStrategy>>,
    pub q: Vec<Vec<f64>>,
    visits: Vec<Vec<u64>>,
}

impl QTable {
    /// Grids restricted to each state's available actions.
    pub fn new(dsg: &Dsg, granularity: usize) -> Result<Self> {
        let mut grids = Vec::with_capacity(dsg.state_count());
        for s in dsg.states() {
            let avail = dsg.available(s);
            let local = enumerate_grid_strategies(avail.len(), granularity)?;
            grids.push(
                local
                    .into_iter()
                    .map(|x| MixedStrategy::embed(dsg.n(), avail, x.probs()))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        let q = grids.iter().map(|g| vec![0.0; g.len()]).collect();
        let visits = grids.iter().map(|g| vec![0; g.len()]).collect();
        Ok(QTable { grids, q, visits })
    }

    fn best_value(&self, flat: usize) -> f64 {
        self.q[flat].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy index, ties broken uniformly.
    fn greedy<R: Rng + ?Sized>(&self, flat: usize, rng: &mut R) -> usize {
        let top = self.best_value(flat);
        let ties: Vec<usize> = (0..self.q[flat].len()).filter(|&i| self.q[flat][i] == top).collect();
        ties[rng.random_range(0..ties.len())]
    }

    /// Greedy policy of the learned table (lowest index on ties).
    pub fn greedy_policy(&self, dsg: &Dsg) -> Result<Policy> {
        let strategies = (0..dsg.state_count())
            .map(|flat| {
                let top = self.best_value(flat);
                let i = self.q[flat].iter().position(|&v| v == top).unwrap();
                self.grids[flat][i].clone()
            })
            .collect();
        Policy::new(dsg, strategies)
    }
}

/// Epsilon-greedy tabular Q-learning where each grid strategy is one
/// action of the reduced single-agent problem.
pub fn q_learning_run(
    dsg: &Dsg,
    oracle: &FollowerOracle,
    cfg: &QConfig,
    rng: &mut Stream,
) -> Result<(RunResult, QTable)> {
    if !(0.0..=1.0).contains(&cfg.exploration) {
        return Err(Error::Invariant(format!("exploration rate {} outside [0, 1]", cfg.exploration)));
    }
    let mut table = QTable::new(dsg, cfg.granularity)?;
    let mut run = RunResult { learner: "q_learning".into(), horizon: dsg.horizon(), ..Default::default() };
    for episode in 1..=cfg.episodes {
        let mut s = StateId::root();
        let mut total = 0.0;
        loop {
            let flat = dsg.flat(s);
            let i = if rng.random::<f64>() < cfg.exploration {
                rng.random_range(0..table.grids[flat].len())
            } else {
                table.greedy(flat, rng)
            };
            let x = &table.grids[flat][i];
            let b = oracle.respond(dsg, s, x)?;
            let a = categorical(x.probs(), rng);
            let reward = dsg.reward(s, a, b);
            total += reward;
            let (next, cont) = if dsg.is_terminal_layer(s) {
                (None, 0.0)
            } else {
                let n = step(dsg, s, a, b, rng)?;
                (Some(n), table.best_value(dsg.flat(n)))
            };
            table.visits[flat][i] += 1;
            let alpha = cfg.learning_rate.at(table.visits[flat][i]);
            let q = &mut table.q[flat][i];
            *q += alpha * (reward + cont - *q);
            match next {
                Some(n) => s = n,
                None => break,
            }
        }
        run.episodes.push(baseline_record(episode, total));
    }
    Ok((run, table))
}

fn baseline_record(episode: usize, realized_return: f64) -> EpisodeRecord {
    EpisodeRecord {
        episode,
        realized_return,
        vtilde_root: None,
        mistakes: 0,
        epsilon: None,
        epsilon_floor: None,
        fallback_events: 0,
        segment: None,
    }
}

/// Plays a fresh uniformly random strategy on `Delta(available(s))` at
/// every step.
pub fn random_policy_run(dsg: &Dsg, oracle: &FollowerOracle, episodes: usize, rng: &mut Stream) -> Result<RunResult> {
    let mut run = RunResult { learner: "random".into(), horizon: dsg.horizon(), ..Default::default() };
    for episode in 1..=episodes {
        let mut s = StateId::root();
        let mut total = 0.0;
        loop {
            let avail = dsg.available(s);
            let w = uniform_simplex(avail.len(), rng);
            let x = MixedStrategy::embed(dsg.n(), avail, &w)?;
            let b = oracle.respond(dsg, s, &x)?;
            let a = categorical(x.probs(), rng);
            total += dsg.reward(s, a, b);
            if dsg.is_terminal_layer(s) {
                break;
            }
            s = step(dsg, s, a, b, rng)?;
        }
        run.episodes.push(baseline_record(episode, total));
    }
    Ok(run)
}

/// Plays a fixed policy for `episodes` episodes.
pub fn fixed_policy_run(
    dsg: &Dsg,
    oracle: &FollowerOracle,
    policy: &Policy,
    episodes: usize,
    name: &str,
    rng: &mut Stream,
) -> Result<RunResult> {
    let mut run = RunResult { learner: name.into(), horizon: dsg.horizon(), ..Default::default() };
    for episode in 1..=episodes {
        let total = crate::planning::rollout(dsg, oracle, policy, rng)?;
        run.episodes.push(baseline_record(episode, total));
    }
    Ok(run)
}
