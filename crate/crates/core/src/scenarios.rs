//! Instance generators: random layered games and a ranger-patrol poaching
//! domain.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::game::{normalize_features, Dsg, DsgDocument};
use crate::rng::{self, ids, stream, uniform_simplex, unit_sphere};

/// A generated game plus its hidden follower parameter.
#[derive(Clone, Debug)]
pub struct Instance {
    pub dsg: Dsg,
    pub theta_star: Vec<f64>,
    /// Constant applied to the raw feature matrices.
    pub normalization: f64,
    pub metadata: serde_json::Value,
}

impl Instance {
    pub fn document(&self) -> DsgDocument {
        DsgDocument::from_game(&self.dsg, Some(&self.theta_star), Some(self.metadata.clone()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomDsgSpec {
    pub layer_sizes: Vec<usize>,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub seed: u64,
}

/// Layer sizes of the four state-space presets used for the
/// state-space-size sweep (rows 1 to 4).
pub fn table1_preset(row: usize) -> Option<Vec<usize>> {
    match row {
        1 => Some(vec![1, 2, 2, 2, 2]),
        2 => Some(vec![1, 2, 4, 4, 4]),
        3 => Some(vec![1, 2, 4, 8, 8]),
        4 => Some(vec![1, 2, 4, 8, 16]),
        _ => None,
    }
}

pub fn random_dsg(spec: &RandomDsgSpec) -> Result<(Dsg, Vec<f64>)> {
    let inst = random_instance(spec)?;
    Ok((inst.dsg, inst.theta_star))
}

/// Rewards `U[0,1]`, transition rows uniform on the next layer's simplex,
/// feature entries `U[-1,1]` rescaled by [`normalize_features`], full
/// action availability and `theta*` uniform on the sphere.
pub fn random_instance(spec: &RandomDsgSpec) -> Result<Instance> {
    if spec.layer_sizes.first() != Some(&1) {
        return Err(Error::SpecError("layer_sizes must start with a single state".into()));
    }
    if spec.layer_sizes.contains(&0) || spec.n == 0 || spec.m == 0 || spec.p == 0 {
        return Err(Error::SpecError("sizes must be positive".into()));
    }
    let mut rng = stream(spec.seed, ids::INSTANCE);
    let total: usize = spec.layer_sizes.iter().sum();
    let (n, m, p) = (spec.n, spec.m, spec.p);

    let reward: Vec<Vec<Vec<f64>>> = (0..total)
        .map(|_| (0..n).map(|_| (0..m).map(|_| rng.random::<f64>()).collect()).collect())
        .collect();
    let mut transition = Vec::with_capacity(total);
    for (h, &size) in spec.layer_sizes.iter().enumerate() {
        let next = spec.layer_sizes.get(h + 1).copied().unwrap_or(0);
        for _ in 0..size {
            let t: Vec<Vec<Vec<f64>>> = (0..n)
                .map(|_| {
                    (0..m)
                        .map(|_| if next == 0 { Vec::new() } else { uniform_simplex(next, &mut rng) })
                        .collect()
                })
                .collect();
            transition.push(t);
        }
    }
    let features: Vec<Vec<Vec<f64>>> = (0..m)
        .map(|_| (0..n).map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect()).collect())
        .collect();
    let theta_star = unit_sphere(p, &mut rng);

    let raw = Dsg::new(
        spec.layer_sizes.clone(),
        vec![(0..n).collect(); total],
        reward,
        transition,
        features,
    )?;
    let (dsg, normalization) = normalize_features(&raw)?;
    let metadata = json!({
        "generator": "random",
        "spec": spec,
        "seed": spec.seed,
        "normalization": normalization,
        "feature_distribution": "uniform[-1,1] then frobenius-normalized",
    });
    Ok(Instance { dsg, theta_star, normalization, metadata })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoachingSpec {
    pub regions: usize,
    pub patrol_costs: Vec<u32>,
    pub budget: u32,
    pub horizon: usize,
    pub animal_types: usize,
    pub catch_value: f64,
    pub seed: u64,
}

impl PoachingSpec {
    /// Four regions costing (1, 1, 2, 2), budget 6, horizon 4 and three
    /// animal types.
    pub fn reference(seed: u64) -> Self {
        PoachingSpec {
            regions: 4,
            patrol_costs: vec![1, 1, 2, 2],
            budget: 6,
            horizon: 4,
            animal_types: 3,
            catch_value: 1.0,
            seed,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.animal_types + 1
    }

    /// Cost of leader action `a`; action 0 is the free stand-down.
    fn cost(&self, a: usize) -> u32 {
        if a == 0 {
            0
        } else {
            self.patrol_costs[a - 1]
        }
    }
}

/// Remaining budgets reachable at each step, highest first.
pub fn reachable_budgets(spec: &PoachingSpec) -> Vec<Vec<u32>> {
    let mut layers = vec![vec![spec.budget]];
    for _ in 1..spec.horizon {
        let mut next = BTreeSet::new();
        for &b in layers.last().unwrap() {
            next.insert(b);
            for &c in &spec.patrol_costs {
                if c <= b {
                    next.insert(b - c);
                }
            }
        }
        layers.push(next.into_iter().rev().collect());
    }
    layers
}

pub fn poaching_dsg(spec: &PoachingSpec) -> Result<(Dsg, Vec<f64>)> {
    let inst = poaching_instance(spec)?;
    Ok((inst.dsg, inst.theta_star))
}

/// States are (step, remaining budget). Leader action 0 stands down; action
/// `i >= 1` patrols region `i`. Follower action `j` snares in region `j + 1`.
pub fn poaching_instance(spec: &PoachingSpec) -> Result<Instance> {
    let regions = spec.regions;
    if regions == 0 {
        return Err(Error::SpecError("poaching domain needs at least one region".into()));
    }
    if spec.patrol_costs.len() != regions {
        return Err(Error::SpecError(format!(
            "{} patrol costs given for {regions} regions",
            spec.patrol_costs.len()
        )));
    }
    if spec.horizon == 0 || spec.animal_types == 0 {
        return Err(Error::SpecError("horizon and animal_types must be positive".into()));
    }
    if !spec.catch_value.is_finite() {
        return Err(Error::SpecError("catch_value must be finite".into()));
    }
    let mut rng: rng::Stream = stream(spec.seed, ids::INSTANCE);
    let animals = spec.animal_types;
    let p = animals + 1;
    let n = regions + 1;
    let m = regions;

    let density: Vec<Vec<f64>> =
        (0..regions).map(|_| (0..animals).map(|_| rng.random::<f64>()).collect()).collect();
    let severity: Vec<Vec<f64>> =
        (0..spec.horizon).map(|_| (0..animals).map(|_| rng.random::<f64>()).collect()).collect();
    let mut theta_star = unit_sphere(p, &mut rng);
    if theta_star[p - 1] < 0.0 {
        theta_star[p - 1] = -theta_star[p - 1];
    }

    let caught = |a: usize, b: usize| a == b + 1;
    let features: Vec<Vec<Vec<f64>>> = (0..m)
        .map(|b| {
            (0..n)
                .map(|a| {
                    let mut f = vec![0.0; p];
                    if caught(a, b) {
                        f[p - 1] = -1.0;
                    } else {
                        f[..animals].copy_from_slice(&density[b]);
                    }
                    f
                })
                .collect()
        })
        .collect();

    let budgets = reachable_budgets(spec);
    let layer_sizes: Vec<usize> = budgets.iter().map(Vec::len).collect();
    let mut available = Vec::new();
    let mut raw_reward = Vec::new();
    let mut transition = Vec::new();
    for (h, layer) in budgets.iter().enumerate() {
        for &budget in layer {
            available.push((0..n).filter(|&a| spec.cost(a) <= budget).collect::<Vec<_>>());
            raw_reward.push(
                (0..n)
                    .map(|a| {
                        (0..m)
                            .map(|b| {
                                if caught(a, b) {
                                    spec.catch_value
                                } else {
                                    -severity[h]
                                        .iter()
                                        .zip(&density[b])
                                        .map(|(c, d)| c * d)
                                        .sum::<f64>()
                                }
                            })
                            .collect::<Vec<_>>()
                    })
                    .collect::<Vec<_>>(),
            );
            let rows: Vec<Vec<Vec<f64>>> = (0..n)
                .map(|a| {
                    let next = match budgets.get(h + 1) {
                        None => return vec![Vec::new(); m],
                        Some(next) => next,
                    };
                    let cost = spec.cost(a);
                    let remaining = if cost <= budget { budget - cost } else { budget };
                    let idx = next.iter().position(|&x| x == remaining).expect("budget closure");
                    let mut row = vec![0.0; next.len()];
                    row[idx] = 1.0;
                    vec![row; m]
                })
                .collect();
            transition.push(rows);
        }
    }

    let (lo, hi) = raw_reward
        .iter()
        .flatten()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let reward = raw_reward
        .iter()
        .map(|s| {
            s.iter()
                .map(|row| {
                    row.iter()
                        .map(|&v| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 })
                        .collect()
                })
                .collect()
        })
        .collect();

    let raw = Dsg::new(layer_sizes, available, reward, transition, features)?;
    let (dsg, normalization) = normalize_features(&raw)?;
    let metadata = json!({
        "generator": "poaching",
        "spec": spec,
        "seed": spec.seed,
        "normalization": normalization,
        "reward_affine": { "min": lo, "max": hi },
        "budgets": budgets,
    });
    Ok(Instance { dsg, theta_star, normalization, metadata })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{validate, StateId};

    #[test]
    fn table1_row4_has_31_states() {
        let sizes = table1_preset(4).unwrap();
        assert_eq!(sizes, vec![1, 2, 4, 8, 16]);
        let (g, _) = random_dsg(&RandomDsgSpec { layer_sizes: sizes, n: 4, m: 4, p: 4, seed: 1 }).unwrap();
        assert_eq!(g.state_count(), 31);
        assert!(table1_preset(5).is_none());
    }

    #[test]
    fn random_games_are_reproducible_and_valid() {
        let spec = RandomDsgSpec { layer_sizes: vec![1, 2, 3], n: 4, m: 3, p: 2, seed: 99 };
        let (a, ta) = random_dsg(&spec).unwrap();
        let (b, tb) = random_dsg(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert!(validate(&a).is_empty(), "{:?}", validate(&a));
        assert!((crate::game::norm2(&ta) - 1.0).abs() < 1e-12);
        let (c, _) = random_dsg(&RandomDsgSpec { seed: 100, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn reference_poaching_instance() {
        let spec = PoachingSpec::reference(3);
        assert_eq!(spec.feature_dim(), 4);
        let inst = poaching_instance(&spec).unwrap();
        let g = &inst.dsg;
        assert_eq!(g.p(), 4);
        assert_eq!(g.n(), 5);
        assert_eq!(g.m(), 4);
        assert!(validate(g).is_empty(), "{:?}", validate(g));
        assert!(inst.theta_star[3] >= 0.0);
        // forward closure over costs {1, 2} from 6
        assert_eq!(
            reachable_budgets(&spec),
            vec![vec![6], vec![6, 5, 4], vec![6, 5, 4, 3, 2], vec![6, 5, 4, 3, 2, 1, 0]]
        );
        assert_eq!(g.layer_sizes(), &[1, 3, 5, 7]);
    }

    #[test]
    fn reachable_budgets_match_brute_force_paths() {
        let spec = PoachingSpec::reference(0);
        // enumerate every action sequence
        let mut frontier = vec![6u32];
        let mut expected = vec![vec![6u32]];
        for _ in 1..spec.horizon {
            let mut next = Vec::new();
            for &b in &frontier {
                for a in 0..=spec.regions {
                    let c = spec.cost(a);
                    if c <= b {
                        next.push(b - c);
                    }
                }
            }
            let mut layer = next.clone();
            layer.sort_unstable_by(|a, b| b.cmp(a));
            layer.dedup();
            expected.push(layer);
            frontier = next;
        }
        assert_eq!(reachable_budgets(&spec), expected);
    }

    #[test]
    fn exhausted_budget_leaves_only_stand_down() {
        let inst = poaching_instance(&PoachingSpec::reference(1)).unwrap();
        let g = &inst.dsg;
        let last = g.horizon();
        // budgets descend, so the last index of the last layer holds budget 0
        let broke = StateId::new(last, g.layer_sizes()[last - 1] - 1);
        assert_eq!(g.available(broke), &[0]);
        let one = StateId::new(last, g.layer_sizes()[last - 1] - 2);
        assert_eq!(g.available(one), &[0, 1, 2]);
        assert_eq!(g.available(StateId::root()), &[0, 1, 2, 3, 4]);
    }

    #[test]
    fn budget_never_increases_or_goes_negative() {
        let spec = PoachingSpec::reference(2);
        let inst = poaching_instance(&spec).unwrap();
        let budgets = reachable_budgets(&spec);
        let g = &inst.dsg;
        for s in g.states() {
            if g.is_terminal_layer(s) {
                continue;
            }
            let here = budgets[s.layer - 1][s.index];
            for &a in g.available(s) {
                for b in 0..g.m() {
                    let row = g.transition(s, a, b);
                    let idx = row.iter().position(|&v| v == 1.0).unwrap();
                    let there = budgets[s.layer][idx];
                    assert_eq!(there, here - spec.cost(a));
                }
            }
        }
    }

    #[test]
    fn reward_rescaling_preserves_order() {
        let spec = PoachingSpec::reference(4);
        let inst = poaching_instance(&spec).unwrap();
        let g = &inst.dsg;
        let budgets = reachable_budgets(&spec);
        // recompute the raw rewards from the generator's draws
        let mut rng = stream(spec.seed, ids::INSTANCE);
        let density: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
        let severity: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
        for s in g.states() {
            let _ = budgets[s.layer - 1][s.index];
            for b in 0..g.m() {
                let raw = |a: usize| {
                    if a == b + 1 {
                        1.0
                    } else {
                        -severity[s.layer - 1].iter().zip(&density[b]).map(|(c, d)| c * d).sum::<f64>()
                    }
                };
                for a1 in 0..g.n() {
                    for a2 in 0..g.n() {
                        if raw(a1) < raw(a2) {
                            assert!(g.reward(s, a1, b) < g.reward(s, a2, b));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn poaching_spec_errors() {
        let spec = PoachingSpec { regions: 0, patrol_costs: vec![], ..PoachingSpec::reference(0) };
        assert!(matches!(poaching_dsg(&spec), Err(Error::SpecError(_))));
        let spec = PoachingSpec { patrol_costs: vec![1], ..PoachingSpec::reference(0) };
        assert!(matches!(poaching_dsg(&spec), Err(Error::SpecError(_))));
    }
}
