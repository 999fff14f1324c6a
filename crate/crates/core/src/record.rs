//! Run records shared by the learner and the baselines.

use serde::{Deserialize, Serialize};

use crate::game::{MixedStrategy, StateId};

/// One step of an episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub state: StateId,
    pub x: MixedStrategy,
    /// Parameter the plan was built on; absent for agents without one.
    pub theta: Option<Vec<f64>>,
    pub b_pred: Option<usize>,
    pub b_obs: usize,
    pub action: usize,
    pub reward: f64,
    pub mistake: bool,
    /// Margin used when planning this state; `0` after a uniform fallback.
    pub epsilon: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub steps: Vec<StepLog>,
}

impl EpisodeLog {
    pub fn realized_return(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn mistakes(&self) -> usize {
        self.steps.iter().filter(|s| s.mistake).count()
    }
}

/// A state where the optimistic program stayed infeasible down to the
/// smallest margin and the learner played uniformly instead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FallbackEvent {
    pub episode: usize,
    pub state: StateId,
    pub last_epsilon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// 1-based.
    pub episode: usize,
    pub realized_return: f64,
    pub vtilde_root: Option<f64>,
    pub mistakes: usize,
    /// Scheduled margin for the episode.
    pub epsilon: Option<f64>,
    /// Smallest margin actually planned with, after local halving.
    pub epsilon_floor: Option<f64>,
    pub fallback_events: usize,
    pub segment: Option<usize>,
}

/// Mistake count of one run (or one anytime segment) against the budget
/// `(2 / epsilon)^(p - 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub segment: Option<usize>,
    pub episodes: usize,
    pub epsilon: f64,
    pub p: usize,
    pub budget: f64,
    pub mistakes: usize,
    /// Episodes with at least one mistake.
    pub mistake_episodes: usize,
    pub pass: bool,
}

pub fn mistake_budget(epsilon: f64, p: usize) -> f64 {
    (2.0 / epsilon).powi(p as i32 - 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub index: usize,
    pub first_episode: usize,
    pub length: usize,
    pub epsilon: f64,
    pub rows_at_start: usize,
    pub rows_at_end: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub learner: String,
    pub horizon: usize,
    pub episodes: Vec<EpisodeRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub logs: Vec<EpisodeLog>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fallbacks: Vec<FallbackEvent>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub segments: Vec<SegmentReport>,
    /// Version-space size after each episode.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rows_after: Vec<usize>,
}

impl RunResult {
    pub fn total_mistakes(&self) -> usize {
        self.episodes.iter().map(|e| e.mistakes).sum()
    }

    pub fn returns(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.realized_return).collect()
    }

    /// Bound checks for every segment, or one for the whole run. `None` for
    /// runs without a margin schedule.
    pub fn bound_checks(&self, p: usize) -> Option<Vec<BoundCheck>> {
        if self.episodes.iter().any(|e| e.epsilon.is_none()) || self.episodes.is_empty() {
            return None;
        }
        let mut groups: Vec<(Option<usize>, Vec<&EpisodeRecord>)> = Vec::new();
        for e in &self.episodes {
            match groups.last_mut() {
                Some((seg, list)) if *seg == e.segment => list.push(e),
                _ => groups.push((e.segment, vec![e])),
            }
        }
        Some(
            groups
                .into_iter()
                .map(|(segment, list)| {
                    let epsilon = list
                        .iter()
                        .map(|e| e.epsilon_floor.or(e.epsilon).unwrap())
                        .fold(f64::INFINITY, f64::min);
                    let budget = if epsilon > 0.0 { mistake_budget(epsilon, p) } else { f64::INFINITY };
                    let mistakes = list.iter().map(|e| e.mistakes).sum();
                    BoundCheck {
                        segment,
                        episodes: list.len(),
                        epsilon,
                        p,
                        budget,
                        mistakes,
                        mistake_episodes: list.iter().filter(|e| e.mistakes > 0).count(),
                        pass: mistakes as f64 <= budget,
                    }
                })
                .collect(),
        )
    }
}
