//! Episodic dynamic Stackelberg games.
//!
//! A [`Dsg`] has a layered state space (layer 1 holds the single initial
//! state), a leader with `n` actions, a follower with `m` actions and a
//! follower utility that is linear in an unknown parameter `theta` through
//! per-response feature matrices `M_b` of shape `n x p`. The follower is
//! myopic: given the leader's mixed strategy `x` it plays an action that
//! maximizes `x^T M_b theta`, breaking ties in favour of the leader.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::categorical;

pub const DEFAULT_TIE_TOL: f64 = 1e-9;
const ROW_SUM_TOL: f64 = 1e-9;
const PROB_TOL: f64 = 1e-9;
const SUPPORT_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateId {
    /// 1-based layer.
    pub layer: usize,
    pub index: usize,
}

impl StateId {
    pub fn new(layer: usize, index: usize) -> Self {
        StateId { layer, index }
    }

    pub fn root() -> Self {
        StateId { layer: 1, index: 0 }
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.layer, self.index)
    }
}

/// Probability vector over the leader's full action set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MixedStrategy {
    probs: Vec<f64>,
}

impl MixedStrategy {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let s = MixedStrategy { probs };
        s.check()?;
        Ok(s)
    }

    /// Builds a strategy from raw solver output: clamps round-off negatives
    /// and renormalizes. Fails if the input is far from the simplex.
    pub fn from_raw(mut probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !p.is_finite() || *p < -1e-7) {
            return Err(Error::InvalidStrategy(format!("{probs:?} is not a distribution")));
        }
        for p in probs.iter_mut() {
            if *p < 0.0 {
                *p = 0.0;
            }
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidStrategy(format!("entries sum to {total}")));
        }
        for p in probs.iter_mut() {
            *p /= total;
        }
        MixedStrategy::new(probs)
    }

    pub fn point(n: usize, action: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[action] = 1.0;
        MixedStrategy { probs }
    }

    pub fn uniform(n: usize, support: &[usize]) -> Self {
        let mut probs = vec![0.0; n];
        let w = 1.0 / support.len() as f64;
        for &a in support {
            probs[a] = w;
        }
        MixedStrategy { probs }
    }

    /// Spreads `weights` over `support` inside an `n`-action vector.
    pub fn embed(n: usize, support: &[usize], weights: &[f64]) -> Result<Self> {
        let mut probs = vec![0.0; n];
        for (&a, &w) in support.iter().zip(weights) {
            probs[a] = w;
        }
        MixedStrategy::from_raw(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    fn check(&self) -> Result<()> {
        if self.probs.is_empty() {
            return Err(Error::InvalidStrategy("empty probability vector".into()));
        }
        if let Some(p) = self.probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidStrategy(format!("entry {p} is not a probability")));
        }
        let total: f64 = self.probs.iter().sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidStrategy(format!("entries sum to {total}")));
        }
        Ok(())
    }

    /// Checks dimension and support against the state's available actions.
    pub fn check_at(&self, dsg: &Dsg, s: StateId) -> Result<()> {
        if self.probs.len() != dsg.n() {
            return Err(Error::InvalidStrategy(format!(
                "strategy has {} entries, game has {} leader actions",
                self.probs.len(),
                dsg.n()
            )));
        }
        let avail = dsg.available(s);
        for (a, &p) in self.probs.iter().enumerate() {
            if p > SUPPORT_TOL && !avail.contains(&a) {
                return Err(Error::InvalidStrategy(format!(
                    "mass {p} on action {a} which is unavailable at {s}"
                )));
            }
        }
        Ok(())
    }
}

/// The truthful follower: best-responds under the hidden `theta_star`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FollowerOracle {
    theta_star: Vec<f64>,
    tie_tol: f64,
}

impl FollowerOracle {
    pub fn new(theta_star: Vec<f64>) -> Result<Self> {
        Self::with_tie_tol(theta_star, DEFAULT_TIE_TOL)
    }

    pub fn with_tie_tol(theta_star: Vec<f64>, tie_tol: f64) -> Result<Self> {
        let norm = norm2(&theta_star);
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::MalformedGame(format!("theta_star has norm {norm}, expected 1")));
        }
        if tie_tol <= 0.0 {
            return Err(Error::MalformedGame("tie tolerance must be positive".into()));
        }
        Ok(FollowerOracle { theta_star, tie_tol })
    }

    /// Normalizes `theta` to unit length first.
    pub fn from_direction(theta: &[f64]) -> Result<Self> {
        let norm = norm2(theta);
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::MalformedGame("theta_star must be a non-zero vector".into()));
        }
        Self::new(theta.iter().map(|t| t / norm).collect())
    }

    pub fn theta_star(&self) -> &[f64] {
        &self.theta_star
    }

    pub fn tie_tol(&self) -> f64 {
        self.tie_tol
    }

    pub fn respond(&self, dsg: &Dsg, s: StateId, x: &MixedStrategy) -> Result<usize> {
        best_response(dsg, s, x, &self.theta_star, self.tie_tol)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    EmptyAvailable { state: StateId },
    RewardOutOfRange { state: StateId, a: usize, b: usize, value: f64 },
    TransitionRowSum { state: StateId, a: usize, b: usize, sum: f64 },
    NegativeTransition { state: StateId, a: usize, b: usize, value: f64 },
    NonFiniteFeature { b: usize },
    FeatureScale { max_diff_norm: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyAvailable { state } => {
                write!(f, "state {state} has no available leader action")
            }
            Violation::RewardOutOfRange { state, a, b, value } => write!(
                f,
                "reward r({state}, {a}, {b}) = {value} outside [0, 1] (leader rewards must be normalized)"
            ),
            Violation::TransitionRowSum { state, a, b, sum } => {
                write!(f, "transition row P({state}, {a}, {b}, .) sums to {sum}")
            }
            Violation::NegativeTransition { state, a, b, value } => {
                write!(f, "transition row P({state}, {a}, {b}, .) has negative entry {value}")
            }
            Violation::NonFiniteFeature { b } => write!(f, "feature matrix {b} has non-finite entries"),
            Violation::FeatureScale { max_diff_norm } => write!(
                f,
                "max Frobenius norm of feature differences is {max_diff_norm}, expected <= 1"
            ),
        }
    }
}

/// A layered, finite-horizon dynamic Stackelberg game.
#[derive(Clone, Debug, PartialEq)]
pub struct Dsg {
    layer_sizes: Vec<usize>,
    offsets: Vec<usize>,
    n: usize,
    m: usize,
    p: usize,
    available: Vec<Vec<usize>>,
    /// `[state][a][b]`
    reward: Vec<Vec<Vec<f64>>>,
    /// `[state][a][b][next-layer index]`; empty rows in the last layer.
    transition: Vec<Vec<Vec<Vec<f64>>>>,
    /// `[b][a][feature]`
    features: Vec<Vec<Vec<f64>>>,
}

impl Dsg {
    /// Checks shapes only; value-level problems are reported by [`validate`].
    pub fn new(
        layer_sizes: Vec<usize>,
        available: Vec<Vec<usize>>,
        reward: Vec<Vec<Vec<f64>>>,
        transition: Vec<Vec<Vec<Vec<f64>>>>,
        features: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let bad = |msg: String| Err(Error::MalformedGame(msg));
        if layer_sizes.is_empty() {
            return bad("horizon must be at least 1".into());
        }
        if layer_sizes[0] != 1 {
            return bad(format!("first layer must hold exactly one state, got {}", layer_sizes[0]));
        }
        if layer_sizes.contains(&0) {
            return bad("every layer needs at least one state".into());
        }
        let mut offsets = Vec::with_capacity(layer_sizes.len() + 1);
        let mut acc = 0;
        for &k in &layer_sizes {
            offsets.push(acc);
            acc += k;
        }
        offsets.push(acc);
        let total = acc;

        let m = features.len();
        if m == 0 {
            return bad("follower needs at least one action".into());
        }
        let n = features[0].len();
        if n == 0 {
            return bad("leader needs at least one action".into());
        }
        let p = features[0][0].len();
        if p == 0 {
            return bad("feature dimension must be positive".into());
        }
        for (b, mat) in features.iter().enumerate() {
            if mat.len() != n || mat.iter().any(|row| row.len() != p) {
                return bad(format!("feature matrix {b} is not {n}x{p}"));
            }
        }
        if available.len() != total || reward.len() != total || transition.len() != total {
            return bad(format!(
                "expected {total} states in available/reward/transition, got {}/{}/{}",
                available.len(),
                reward.len(),
                transition.len()
            ));
        }
        for (si, acts) in available.iter().enumerate() {
            if let Some(a) = acts.iter().find(|&&a| a >= n) {
                return bad(format!("state #{si} lists unavailable action index {a}"));
            }
            let mut sorted = acts.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != acts.len() {
                return bad(format!("state #{si} lists duplicate actions"));
            }
        }
        for (si, r) in reward.iter().enumerate() {
            if r.len() != n || r.iter().any(|row| row.len() != m) {
                return bad(format!("reward tensor of state #{si} is not {n}x{m}"));
            }
        }
        for h in 0..layer_sizes.len() {
            let next = layer_sizes.get(h + 1).copied().unwrap_or(0);
            for si in offsets[h]..offsets[h + 1] {
                let t = &transition[si];
                if t.len() != n
                    || t.iter().any(|row| row.len() != m || row.iter().any(|d| d.len() != next))
                {
                    return bad(format!(
                        "transition tensor of state #{si} is not {n}x{m}x{next}"
                    ));
                }
            }
        }
        Ok(Dsg { layer_sizes, offsets, n, m, p, available, reward, transition, features })
    }

    pub fn horizon(&self) -> usize {
        self.layer_sizes.len()
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn state_count(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Layer-major, index-minor position of a state.
    pub fn flat(&self, s: StateId) -> usize {
        debug_assert!(s.layer >= 1 && s.layer <= self.horizon());
        debug_assert!(s.index < self.layer_sizes[s.layer - 1]);
        self.offsets[s.layer - 1] + s.index
    }

    pub fn state_at(&self, flat: usize) -> StateId {
        let h = self.offsets.partition_point(|&o| o <= flat) - 1;
        StateId::new(h + 1, flat - self.offsets[h])
    }

    pub fn layer(&self, layer: usize) -> impl Iterator<Item = StateId> + '_ {
        (0..self.layer_sizes[layer - 1]).map(move |i| StateId::new(layer, i))
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> + '_ {
        (0..self.state_count()).map(|i| self.state_at(i))
    }

    pub fn contains(&self, s: StateId) -> bool {
        s.layer >= 1 && s.layer <= self.horizon() && s.index < self.layer_sizes[s.layer - 1]
    }

    pub fn is_terminal_layer(&self, s: StateId) -> bool {
        s.layer == self.horizon()
    }

    pub fn available(&self, s: StateId) -> &[usize] {
        &self.available[self.flat(s)]
    }

    pub fn reward(&self, s: StateId, a: usize, b: usize) -> f64 {
        self.reward[self.flat(s)][a][b]
    }

    /// Next-layer distribution; empty for last-layer states.
    pub fn transition(&self, s: StateId, a: usize, b: usize) -> &[f64] {
        &self.transition[self.flat(s)][a][b]
    }

    pub fn feature_matrix(&self, b: usize) -> &[Vec<f64>] {
        &self.features[b]
    }

    pub fn features(&self) -> &[Vec<Vec<f64>>] {
        &self.features
    }

    pub fn available_all(&self) -> &[Vec<usize>] {
        &self.available
    }

    pub fn reward_tensor(&self) -> &[Vec<Vec<f64>>] {
        &self.reward
    }

    pub fn transition_tensor(&self) -> &[Vec<Vec<Vec<f64>>>] {
        &self.transition
    }

    /// Same game with the feature matrices replaced (shapes must match).
    pub fn with_features(&self, features: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        Dsg::new(
            self.layer_sizes.clone(),
            self.available.clone(),
            self.reward.clone(),
            self.transition.clone(),
            features,
        )
    }

    /// Row vector `x^T M_b`, length `p`.
    pub fn weighted_features(&self, x: &[f64], b: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.p];
        for (xa, row) in x.iter().zip(&self.features[b]) {
            if *xa == 0.0 {
                continue;
            }
            for (o, f) in out.iter_mut().zip(row) {
                *o += xa * f;
            }
        }
        out
    }

    /// `(x^T (M_b - M_other))^T`, the halfspace normal observed when the
    /// follower answers `x` with `b` rather than `other`.
    pub fn margin_row(&self, x: &[f64], b: usize, other: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.p];
        for (a, xa) in x.iter().enumerate() {
            if *xa == 0.0 {
                continue;
            }
            let rb = &self.features[b][a];
            let ro = &self.features[other][a];
            for j in 0..self.p {
                out[j] += xa * (rb[j] - ro[j]);
            }
        }
        out
    }

    /// Leader's immediate expected reward when the follower plays `b`.
    pub fn expected_reward(&self, s: StateId, x: &[f64], b: usize) -> f64 {
        let r = &self.reward[self.flat(s)];
        x.iter().zip(r).map(|(xa, row)| xa * row[b]).sum()
    }
}

/// Reports every invariant violation; an empty list means the game is valid.
pub fn validate(dsg: &Dsg) -> Vec<Violation> {
    let mut out = Vec::new();
    for s in dsg.states() {
        if dsg.available(s).is_empty() {
            out.push(Violation::EmptyAvailable { state: s });
        }
        for a in 0..dsg.n() {
            for b in 0..dsg.m() {
                let value = dsg.reward(s, a, b);
                if !(0.0..=1.0).contains(&value) {
                    out.push(Violation::RewardOutOfRange { state: s, a, b, value });
                }
                if dsg.is_terminal_layer(s) {
                    continue;
                }
                let row = dsg.transition(s, a, b);
                if let Some(&value) = row.iter().find(|v| !(**v >= 0.0)) {
                    out.push(Violation::NegativeTransition { state: s, a, b, value });
                }
                let sum: f64 = row.iter().sum();
                if !((sum - 1.0).abs() <= ROW_SUM_TOL) {
                    out.push(Violation::TransitionRowSum { state: s, a, b, sum });
                }
            }
        }
    }
    let mut finite = true;
    for (b, mat) in dsg.features().iter().enumerate() {
        if mat.iter().flatten().any(|v| !v.is_finite()) {
            out.push(Violation::NonFiniteFeature { b });
            finite = false;
        }
    }
    if finite {
        let d = max_feature_gap(dsg.features());
        if d > 1.0 + 1e-9 {
            out.push(Violation::FeatureScale { max_diff_norm: d });
        }
    }
    out
}

/// `max_{b != b'} ||M_b - M_b'||_F`.
pub fn max_feature_gap(features: &[Vec<Vec<f64>>]) -> f64 {
    let mut best = 0.0f64;
    for i in 0..features.len() {
        for j in i + 1..features.len() {
            let sq: f64 = features[i]
                .iter()
                .flatten()
                .zip(features[j].iter().flatten())
                .map(|(u, v)| (u - v) * (u - v))
                .sum();
            best = best.max(sq.sqrt());
        }
    }
    best
}

/// Rescales all feature matrices by one positive constant so that the
/// largest pairwise Frobenius gap is 1. Returns the game and the constant.
pub fn normalize_features(dsg: &Dsg) -> Result<(Dsg, f64)> {
    if dsg.features().iter().flatten().flatten().any(|v| !v.is_finite()) {
        return Err(Error::MalformedGame("feature matrices contain non-finite entries".into()));
    }
    if dsg.m() == 1 {
        return Ok((dsg.clone(), 1.0));
    }
    let d = max_feature_gap(dsg.features());
    if d == 0.0 {
        return Err(Error::DegenerateFeatures);
    }
    if (d - 1.0).abs() <= 1e-12 {
        return Ok((dsg.clone(), 1.0));
    }
    let c = 1.0 / d;
    let scaled = dsg
        .features()
        .iter()
        .map(|mat| mat.iter().map(|row| row.iter().map(|v| v * c).collect()).collect())
        .collect();
    Ok((dsg.with_features(scaled)?, c))
}

/// Follower utilities `x^T M_b theta` for every `b`.
pub fn follower_utilities(dsg: &Dsg, x: &[f64], theta: &[f64]) -> Vec<f64> {
    (0..dsg.m())
        .map(|b| dot(&dsg.weighted_features(x, b), theta))
        .collect()
}

/// Follower best response under `theta`, ties (within `tie_tol`) broken by
/// the leader's immediate expected reward, then by lowest index.
pub fn best_response(
    dsg: &Dsg,
    s: StateId,
    x: &MixedStrategy,
    theta: &[f64],
    tie_tol: f64,
) -> Result<usize> {
    x.check_at(dsg, s)?;
    if theta.len() != dsg.p() {
        return Err(Error::MalformedGame(format!(
            "theta has dimension {}, game has p = {}",
            theta.len(),
            dsg.p()
        )));
    }
    let utils = follower_utilities(dsg, x.probs(), theta);
    let top = utils.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut best: Option<(usize, f64)> = None;
    for (b, &u) in utils.iter().enumerate() {
        if u < top - tie_tol {
            continue;
        }
        let lr = dsg.expected_reward(s, x.probs(), b);
        match best {
            Some((_, cur)) if lr <= cur => {}
            _ => best = Some((b, lr)),
        }
    }
    Ok(best.map(|(b, _)| b).expect("argmax over a non-empty action set"))
}

/// Expected immediate leader reward against the truthful follower.
pub fn leader_expected_reward(
    dsg: &Dsg,
    s: StateId,
    x: &MixedStrategy,
    oracle: &FollowerOracle,
) -> Result<f64> {
    let b = oracle.respond(dsg, s, x)?;
    Ok(dsg.expected_reward(s, x.probs(), b))
}

/// Next-layer distribution induced by `x` and the follower's response.
pub fn aux_transition(
    dsg: &Dsg,
    s: StateId,
    x: &MixedStrategy,
    oracle: &FollowerOracle,
) -> Result<Vec<f64>> {
    if dsg.is_terminal_layer(s) {
        return Err(Error::TerminalState(s));
    }
    let b = oracle.respond(dsg, s, x)?;
    let mut out = vec![0.0; dsg.layer_sizes()[s.layer]];
    for (a, &xa) in x.probs().iter().enumerate() {
        if xa == 0.0 {
            continue;
        }
        for (o, pr) in out.iter_mut().zip(dsg.transition(s, a, b)) {
            *o += xa * pr;
        }
    }
    Ok(out)
}

/// Samples the successor of `s` under joint action `(a, b)`.
pub fn step<R: Rng + ?Sized>(
    dsg: &Dsg,
    s: StateId,
    a: usize,
    b: usize,
    rng: &mut R,
) -> Result<StateId> {
    if dsg.is_terminal_layer(s) {
        return Err(Error::TerminalState(s));
    }
    let idx = categorical(dsg.transition(s, a, b), rng);
    Ok(StateId::new(s.layer + 1, idx))
}

pub(crate) fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// On-disk JSON form of a game.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DsgDocument {
    pub horizon: usize,
    pub layer_sizes: Vec<usize>,
    pub available: Vec<Vec<usize>>,
    pub reward: Vec<Vec<Vec<f64>>>,
    pub transition: Vec<Vec<Vec<Vec<f64>>>>,
    pub features: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_star: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

impl DsgDocument {
    pub fn from_game(
        dsg: &Dsg,
        theta_star: Option<&[f64]>,
        metadata: Option<serde_json::Value>,
    ) -> Self {
        DsgDocument {
            horizon: dsg.horizon(),
            layer_sizes: dsg.layer_sizes().to_vec(),
            available: dsg.available.clone(),
            reward: dsg.reward.clone(),
            transition: dsg.transition.clone(),
            features: dsg.features.clone(),
            theta_star: theta_star.map(<[f64]>::to_vec),
            metadata,
        }
    }

    pub fn to_game(&self) -> Result<Dsg> {
        if self.horizon != self.layer_sizes.len() {
            return Err(Error::MalformedGame(format!(
                "horizon {} does not match {} layer sizes",
                self.horizon,
                self.layer_sizes.len()
            )));
        }
        Dsg::new(
            self.layer_sizes.clone(),
            self.available.clone(),
            self.reward.clone(),
            self.transition.clone(),
            self.features.clone(),
        )
    }
}
