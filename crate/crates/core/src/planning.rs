//! Full-information planning by backward induction and exact or sampled
//! policy evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{best_response, dot, step, Dsg, FollowerOracle, MixedStrategy, StateId};
use crate::learner::{continuation_objectives, PolicyTable};
use crate::lp::{self, Constraint, LinearProgram, Outcome, Relation};
use crate::opt::{solve_simplex_lp, LpSolution, SimplexLp};
use crate::rng::{categorical, Stream};

/// One mixed strategy per state, layer-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Policy {
    strategies: Vec<MixedStrategy>,
}

impl Policy {
    pub fn new(dsg: &Dsg, strategies: Vec<MixedStrategy>) -> Result<Self> {
        if strategies.len() != dsg.state_count() {
            return Err(Error::InvalidStrategy(format!(
                "policy has {} strategies for {} states",
                strategies.len(),
                dsg.state_count()
            )));
        }
        for (i, x) in strategies.iter().enumerate() {
            x.check_at(dsg, dsg.state_at(i))?;
        }
        Ok(Policy { strategies })
    }

    pub fn uniform(dsg: &Dsg) -> Self {
        Policy { strategies: dsg.states().map(|s| MixedStrategy::uniform(dsg.n(), dsg.available(s))).collect() }
    }

    pub fn from_table(dsg: &Dsg, table: &PolicyTable) -> Result<Self> {
        Policy::new(dsg, table.strategies())
    }

    pub fn get(&self, dsg: &Dsg, s: StateId) -> &MixedStrategy {
        &self.strategies[dsg.flat(s)]
    }

    pub fn strategies(&self) -> &[MixedStrategy] {
        &self.strategies
    }
}

/// Value per state, layer-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValueTable {
    values: Vec<f64>,
}

impl ValueTable {
    pub fn get(&self, dsg: &Dsg, s: StateId) -> f64 {
        self.values[dsg.flat(s)]
    }

    pub fn root(&self) -> f64 {
        self.values[0]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Best policy with full knowledge of `theta_star`: per state, the best
/// response `b` whose region admits the highest continuation value.
///
/// When the optimum sits on a decision boundary where the follower's
/// tie-breaking would pick another response, the strategy is moved a tiny
/// step into the interior of `b`'s region. Stored values are those the
/// strategies actually earn against the follower.
pub fn hindsight_policy(dsg: &Dsg, oracle: &FollowerOracle) -> Result<(Policy, ValueTable)> {
    plan(dsg, oracle, 0.0)
}

/// Best policy whose planned response holds with margin at least `epsilon`.
pub fn epsilon_conservative_policy(
    dsg: &Dsg,
    oracle: &FollowerOracle,
    epsilon: f64,
) -> Result<(Policy, ValueTable)> {
    if !(epsilon > 0.0) {
        return Err(Error::SolverError(format!("epsilon must be positive, got {epsilon}")));
    }
    plan(dsg, oracle, epsilon)
}

fn plan(dsg: &Dsg, oracle: &FollowerOracle, margin: f64) -> Result<(Policy, ValueTable)> {
    let mut strategies = vec![None; dsg.state_count()];
    let mut values = vec![0.0; dsg.state_count()];
    let mut next: Vec<f64> = Vec::new();
    for h in (1..=dsg.horizon()).rev() {
        let mut layer_values = Vec::new();
        for s in dsg.layer(h) {
            let q = continuation_objectives(dsg, s, &next);
            let (x, v) = plan_state(dsg, oracle, s, &q, margin)?;
            values[dsg.flat(s)] = v;
            layer_values.push(v);
            strategies[dsg.flat(s)] = Some(x);
        }
        next = layer_values;
    }
    let policy = Policy { strategies: strategies.into_iter().map(Option::unwrap).collect() };
    Ok((policy, ValueTable { values }))
}

/// `[b'][a] = (M_b[a] - M_b'[a]) . theta` over the support, `b' != b`.
fn margin_rows(dsg: &Dsg, theta: &[f64], b: usize, support: &[usize]) -> Vec<Vec<f64>> {
    (0..dsg.m())
        .filter(|&o| o != b)
        .map(|o| {
            (0..dsg.n())
                .map(|a| {
                    if support.contains(&a) {
                        dot(&dsg.feature_matrix(b)[a], theta) - dot(&dsg.feature_matrix(o)[a], theta)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

fn plan_state(
    dsg: &Dsg,
    oracle: &FollowerOracle,
    s: StateId,
    q: &[Vec<f64>],
    margin: f64,
) -> Result<(MixedStrategy, f64)> {
    let theta = oracle.theta_star();
    let support = dsg.available(s);
    let mut best: Option<(usize, MixedStrategy, f64)> = None;
    for b in 0..dsg.m() {
        let rows = margin_rows(dsg, theta, b, support).into_iter().map(|g| (g, margin)).collect();
        let lp = SimplexLp { objective: q[b].clone(), rows, support: support.to_vec() };
        if let LpSolution::Optimal { x, value } = solve_simplex_lp(&lp)? {
            if best.as_ref().is_none_or(|(_, _, v)| value > *v + 1e-12) {
                best = Some((b, x, value));
            }
        }
    }
    let Some((b, mut x, _)) = best else {
        return Err(if margin > 0.0 {
            Error::EpsilonInfeasible { state: s, epsilon: margin }
        } else {
            Error::NumericalDegeneracy(s)
        });
    };
    if oracle.respond(dsg, s, &x)? != b {
        if let Some(z) = most_robust_point(dsg, theta, b, support, oracle.tie_tol())? {
            let mut lambda = 1e-9;
            while lambda <= 1.0 {
                let probs: Vec<f64> = x.probs().iter().zip(z.probs()).map(|(u, v)| (1.0 - lambda) * u + lambda * v).collect();
                let moved = MixedStrategy::from_raw(probs)?;
                if oracle.respond(dsg, s, &moved)? == b {
                    x = moved;
                    break;
                }
                lambda *= 10.0;
            }
        }
    }
    let realized = oracle.respond(dsg, s, &x)?;
    let value = dot(&q[realized], x.probs());
    Ok((x, value))
}

/// Strategy maximizing the smallest margin of `b` over every alternative,
/// if that margin exceeds `floor`.
fn most_robust_point(
    dsg: &Dsg,
    theta: &[f64],
    b: usize,
    support: &[usize],
    floor: f64,
) -> Result<Option<MixedStrategy>> {
    let rows = margin_rows(dsg, theta, b, support);
    if rows.is_empty() {
        return Ok(None);
    }
    let k = support.len();
    // variables: y over the support, then t+ and t-
    let mut constraints = vec![Constraint::new(
        (0..k).map(|_| 1.0).chain([0.0, 0.0]).collect(),
        Relation::Eq,
        1.0,
    )];
    for g in &rows {
        let coeffs = support.iter().map(|&a| g[a]).chain([-1.0, 1.0]).collect();
        constraints.push(Constraint::new(coeffs, Relation::Ge, 0.0));
    }
    let mut cap = vec![0.0; k + 2];
    cap[k] = 1.0;
    constraints.push(Constraint::new(cap, Relation::Le, 2.0));
    let mut objective = vec![0.0; k + 2];
    objective[k] = 1.0;
    objective[k + 1] = -1.0;
    match lp::solve(&LinearProgram { objective, constraints })? {
        Outcome::Optimal { x, value, .. } if value > floor => {
            Ok(Some(MixedStrategy::embed(dsg.n(), support, &x[..k])?))
        }
        _ => Ok(None),
    }
}

/// Values of `policy` against the truthful follower, by backward induction.
pub fn evaluate_policy_exact(dsg: &Dsg, oracle: &FollowerOracle, policy: &Policy) -> Result<ValueTable> {
    let mut values = vec![0.0; dsg.state_count()];
    let mut next: Vec<f64> = Vec::new();
    for h in (1..=dsg.horizon()).rev() {
        let mut layer_values = Vec::new();
        for s in dsg.layer(h) {
            let x = policy.get(dsg, s);
            let b = oracle.respond(dsg, s, x)?;
            let mut v = 0.0;
            for (a, &xa) in x.probs().iter().enumerate() {
                if xa == 0.0 {
                    continue;
                }
                let cont = if dsg.is_terminal_layer(s) { 0.0 } else { dot(dsg.transition(s, a, b), &next) };
                v += xa * (dsg.reward(s, a, b) + cont);
            }
            values[dsg.flat(s)] = v;
            layer_values.push(v);
        }
        next = layer_values;
    }
    Ok(ValueTable { values })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
}

/// One sampled episode return of `policy` from the root.
pub fn rollout(dsg: &Dsg, oracle: &FollowerOracle, policy: &Policy, rng: &mut Stream) -> Result<f64> {
    let mut s = StateId::root();
    let mut total = 0.0;
    loop {
        let x = policy.get(dsg, s);
        let b = oracle.respond(dsg, s, x)?;
        let a = categorical(x.probs(), rng);
        total += dsg.reward(s, a, b);
        if dsg.is_terminal_layer(s) {
            return Ok(total);
        }
        s = step(dsg, s, a, b, rng)?;
    }
}

/// Mean and standard error of `episodes` sampled returns.
pub fn evaluate_policy_mc(
    dsg: &Dsg,
    oracle: &FollowerOracle,
    policy: &Policy,
    episodes: usize,
    rng: &mut Stream,
) -> Result<McEstimate> {
    if episodes == 0 {
        return Err(Error::Invariant("at least one rollout is required".into()));
    }
    let returns = (0..episodes).map(|_| rollout(dsg, oracle, policy, rng)).collect::<Result<Vec<_>>>()?;
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let stderr = if returns.len() > 1 {
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(McEstimate { mean, stderr })
}

/// Follower response at every state under `policy`.
pub fn responses(dsg: &Dsg, oracle: &FollowerOracle, policy: &Policy) -> Result<Vec<usize>> {
    dsg.states().map(|s| best_response(dsg, s, policy.get(dsg, s), oracle.theta_star(), oracle.tie_tol())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::fixtures::{toy_single_state, two_layer};
    use crate::learner::{get_policy, VersionSpace, MIN_EPSILON};
    use crate::opt::SolverOptions;
    use crate::rng::{ids, stream};
    use crate::scenarios::{random_dsg, RandomDsgSpec};
    use proptest::prelude::*;

    /// Sweeps `x = (t, 1 - t)` over `steps + 1` points.
    fn grid_oracle(dsg: &Dsg, oracle: &FollowerOracle, steps: usize) -> f64 {
        (0..=steps)
            .map(|i| {
                let t = i as f64 / steps as f64;
                let x = MixedStrategy::new(vec![t, 1.0 - t]).unwrap();
                crate::game::leader_expected_reward(dsg, StateId::root(), &x, oracle).unwrap()
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn single_response_picks_best_action() {
        let g = Dsg::new(
            vec![1],
            vec![vec![0, 1, 2]],
            vec![vec![vec![0.1], vec![0.7], vec![0.3]]],
            vec![vec![vec![vec![]], vec![vec![]], vec![vec![]]]],
            vec![vec![vec![0.0], vec![1.0], vec![2.0]]],
        )
        .unwrap();
        let oracle = FollowerOracle::new(vec![1.0]).unwrap();
        let (pi, v) = hindsight_policy(&g, &oracle).unwrap();
        assert_eq!(pi.get(&g, StateId::root()).probs(), &[0.0, 1.0, 0.0]);
        assert_eq!(v.root(), 0.7);
    }

    #[test]
    fn toy_game_matches_grid_search() {
        let g = toy_single_state([0.2, 0.8], [0.0, 0.0]);
        for dir in [[1.0, 0.0], [0.3, 1.0], [-1.0, 0.4], [0.7, -0.7]] {
            let oracle = FollowerOracle::from_direction(&dir).unwrap();
            let (pi, v) = hindsight_policy(&g, &oracle).unwrap();
            let grid = grid_oracle(&g, &oracle, 10_000);
            assert!(v.root() >= grid - 1e-3, "{} < {grid}", v.root());
            let exact = evaluate_policy_exact(&g, &oracle, &pi).unwrap();
            assert!((exact.root() - v.root()).abs() <= 1e-9);
        }
    }

    #[test]
    fn boundary_optimum_is_nudged_into_the_planned_region() {
        // theta = (1, 0): b1 iff x1 >= x2. b2 pays more immediately, so the
        // follower breaks the tie at x = (0.5, 0.5) towards b2; but b1 leads to
        // a rich successor.
        let g = Dsg::new(
            vec![1, 2],
            vec![vec![0, 1]; 3],
            vec![
                vec![vec![0.0, 0.5], vec![0.2, 0.5]],
                vec![vec![1.0, 1.0], vec![1.0, 1.0]],
                vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            ],
            vec![
                vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]; 2],
                vec![vec![vec![], vec![]]; 2],
                vec![vec![vec![], vec![]]; 2],
            ],
            vec![
                vec![vec![0.5, 0.0], vec![0.0, 0.5]],
                vec![vec![0.0, 0.5], vec![0.5, 0.0]],
            ],
        )
        .unwrap();
        let oracle = FollowerOracle::new(vec![1.0, 0.0]).unwrap();
        let (pi, v) = hindsight_policy(&g, &oracle).unwrap();
        let x = pi.get(&g, StateId::root());
        assert_eq!(oracle.respond(&g, StateId::root(), x).unwrap(), 0);
        let exact = evaluate_policy_exact(&g, &oracle, &pi).unwrap();
        assert!((exact.root() - v.root()).abs() <= 1e-12);
        // the boundary point itself earns only the tie-broken response
        assert!((v.root() - 1.1).abs() < 1e-6);
    }

    #[test]
    fn constant_rewards() {
        let g = two_layer(0.5);
        let oracle = FollowerOracle::from_direction(&[0.2, 1.0]).unwrap();
        let (_, v) = hindsight_policy(&g, &oracle).unwrap();
        assert!((v.root() - 1.0).abs() < 1e-12);
        let u = evaluate_policy_exact(&g, &oracle, &Policy::uniform(&g)).unwrap();
        assert!((u.root() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn huge_margin_is_infeasible() {
        let g = toy_single_state([0.2, 0.8], [0.0, 0.0]);
        let oracle = FollowerOracle::new(vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            epsilon_conservative_policy(&g, &oracle, 10.0),
            Err(Error::EpsilonInfeasible { .. })
        ));
    }

    #[test]
    fn margin_values_converge_to_hindsight() {
        let g = toy_single_state([0.2, 0.8], [0.0, 0.0]);
        let oracle = FollowerOracle::from_direction(&[1.0, 0.2]).unwrap();
        let (_, star) = hindsight_policy(&g, &oracle).unwrap();
        let gaps: Vec<f64> = [1e-2, 1e-4, 1e-6]
            .iter()
            .map(|&e| star.root() - epsilon_conservative_policy(&g, &oracle, e).unwrap().1.root())
            .collect();
        assert!(gaps.iter().all(|&d| d >= -1e-9));
        assert!(gaps[0] >= gaps[1] && gaps[1] >= gaps[2]);
        assert!(gaps[2] < 1e-5, "{gaps:?}");
    }

    #[test]
    fn smaller_margin_never_hurts() {
        let (g, theta) = random_dsg(&RandomDsgSpec { layer_sizes: vec![1, 2, 2], n: 4, m: 4, p: 3, seed: 11 }).unwrap();
        let oracle = FollowerOracle::new(theta).unwrap();
        let (_, lo) = epsilon_conservative_policy(&g, &oracle, 0.01).unwrap();
        let (_, hi) = epsilon_conservative_policy(&g, &oracle, 0.1).unwrap();
        assert!(lo.root() >= hi.root() - 1e-9);
    }

    #[test]
    fn monte_carlo_on_deterministic_game_has_no_spread() {
        let g = two_layer(0.5);
        let oracle = FollowerOracle::from_direction(&[1.0, 0.0]).unwrap();
        let pi = Policy::new(&g, vec![MixedStrategy::point(2, 1); 3]).unwrap();
        let est = evaluate_policy_mc(&g, &oracle, &pi, 50, &mut stream(0, ids::EVALUATION)).unwrap();
        assert_eq!(est.stderr, 0.0);
        assert_eq!(est.mean, evaluate_policy_exact(&g, &oracle, &pi).unwrap().root());
    }

    #[test]
    fn monte_carlo_single_rollout_in_range() {
        let (g, theta) = random_dsg(&RandomDsgSpec { layer_sizes: vec![1, 2, 2], n: 3, m: 2, p: 2, seed: 2 }).unwrap();
        let oracle = FollowerOracle::new(theta).unwrap();
        let est = evaluate_policy_mc(&g, &oracle, &Policy::uniform(&g), 1, &mut stream(1, ids::EVALUATION)).unwrap();
        assert!(est.mean >= 0.0 && est.mean <= 3.0);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn monte_carlo_agrees_with_exact() {
        let (g, theta) = random_dsg(&RandomDsgSpec { layer_sizes: vec![1, 2, 2], n: 3, m: 3, p: 2, seed: 8 }).unwrap();
        let oracle = FollowerOracle::new(theta).unwrap();
        let pi = Policy::uniform(&g);
        let exact = evaluate_policy_exact(&g, &oracle, &pi).unwrap().root();
        let est = evaluate_policy_mc(&g, &oracle, &pi, 10_000, &mut stream(4, ids::EVALUATION)).unwrap();
        assert!((est.mean - exact).abs() <= 3.0 * est.stderr, "{est:?} vs {exact}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn hindsight_is_a_fixed_point_and_dominates(seed in 0u64..10_000, p in 2usize..4) {
            let (g, theta) = random_dsg(&RandomDsgSpec { layer_sizes: vec![1, 2, 3], n: 3, m: 3, p, seed }).unwrap();
            let oracle = FollowerOracle::new(theta).unwrap();
            let (pi, star) = hindsight_policy(&g, &oracle).unwrap();
            let exact = evaluate_policy_exact(&g, &oracle, &pi).unwrap();
            for s in g.states() {
                prop_assert!((exact.get(&g, s) - star.get(&g, s)).abs() <= 1e-9);
                let cap = (g.horizon() - s.layer + 1) as f64;
                prop_assert!(star.get(&g, s) >= 0.0 && star.get(&g, s) <= cap + 1e-9);
            }
            let uniform = evaluate_policy_exact(&g, &oracle, &Policy::uniform(&g)).unwrap();
            let table = get_policy(&VersionSpace::new(p), &g, 0.5, &SolverOptions { candidates: 16, budget: 3200, alternation_rounds: 1 }, MIN_EPSILON, &mut stream(seed, ids::POLICY)).unwrap();
            let learner = evaluate_policy_exact(&g, &oracle, &Policy::from_table(&g, &table).unwrap()).unwrap();
            if let Ok((_, conservative)) = epsilon_conservative_policy(&g, &oracle, 0.05) {
                for s in g.states() {
                    prop_assert!(star.get(&g, s) >= conservative.get(&g, s) - 1e-9);
                }
            }
            for s in g.states() {
                prop_assert!(uniform.get(&g, s) <= star.get(&g, s) + 1e-9);
                prop_assert!(learner.get(&g, s) <= star.get(&g, s) + 1e-9);
            }
        }
    }
}
