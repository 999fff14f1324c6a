use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::QConfig;
use crate::error::{Error, Result};
use crate::game::{DsgDocument, FollowerOracle};
use crate::learner::EpsilonChoice;
use crate::scenarios::{self, Instance, PoachingSpec, RandomDsgSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioConfig {
    Random {
        layer_sizes: Vec<usize>,
        n: usize,
        m: usize,
        p: usize,
    },
    /// One of the four layer-size presets `(1,2,2,2,2)` .. `(1,2,4,8,16)`.
    Table1 {
        row: usize,
        n: usize,
        m: usize,
        p: usize,
    },
    Poaching(PoachingScenario),
    /// A game document with `theta_star`; relative paths resolve against
    /// the config file's directory.
    File {
        path: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoachingScenario {
    pub regions: usize,
    pub patrol_costs: Vec<u32>,
    pub budget: u32,
    pub horizon: usize,
    pub animal_types: usize,
    pub catch_value: f64,
}

impl Default for PoachingScenario {
    fn default() -> Self {
        let r = PoachingSpec::reference(0);
        PoachingScenario {
            regions: r.regions,
            patrol_costs: r.patrol_costs,
            budget: r.budget,
            horizon: r.horizon,
            animal_types: r.animal_types,
            catch_value: r.catch_value,
        }
    }
}

impl ScenarioConfig {
    /// Builds the game and follower for one instance seed.
    pub fn instantiate(&self, seed: u64) -> Result<(Instance, FollowerOracle)> {
        let inst = match self {
            ScenarioConfig::Random { layer_sizes, n, m, p } => scenarios::random_instance(&RandomDsgSpec {
                layer_sizes: layer_sizes.clone(),
                n: *n,
                m: *m,
                p: *p,
                seed,
            })?,
            ScenarioConfig::Table1 { row, n, m, p } => {
                let layer_sizes = scenarios::table1_preset(*row)
                    .ok_or_else(|| Error::SpecError(format!("no layer-size preset for row {row}")))?;
                scenarios::random_instance(&RandomDsgSpec { layer_sizes, n: *n, m: *m, p: *p, seed })?
            }
            ScenarioConfig::Poaching(pc) => scenarios::poaching_instance(&PoachingSpec {
                regions: pc.regions,
                patrol_costs: pc.patrol_costs.clone(),
                budget: pc.budget,
                horizon: pc.horizon,
                animal_types: pc.animal_types,
                catch_value: pc.catch_value,
                seed,
            })?,
            ScenarioConfig::File { path } => {
                let doc: DsgDocument = read_json(path)?;
                let dsg = doc.to_game()?;
                let theta_star = doc.theta_star.clone().ok_or_else(|| Error::Config {
                    path: path.clone(),
                    message: "game document has no theta_star".into(),
                })?;
                Instance {
                    dsg,
                    theta_star,
                    normalization: 1.0,
                    metadata: doc.metadata.clone().unwrap_or(serde_json::Value::Null),
                }
            }
        };
        let oracle = FollowerOracle::new(inst.theta_star.clone())?;
        Ok((inst, oracle))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    VersionSpace,
    QLearning,
    Random,
    Hindsight,
}

impl LearnerKind {
    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::VersionSpace => "version_space",
            LearnerKind::QLearning => "q_learning",
            LearnerKind::Random => "random",
            LearnerKind::Hindsight => "hindsight",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnytimeConfig {
    pub t0: usize,
    pub segments: usize,
}

/// Q-learning settings; the episode count comes from the experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QSettings {
    pub granularity: usize,
    pub exploration: f64,
    pub learning_rate: crate::baselines::LearningRate,
}

impl Default for QSettings {
    fn default() -> Self {
        let d = QConfig::default();
        QSettings { granularity: d.granularity, exploration: d.exploration, learning_rate: d.learning_rate }
    }
}

impl QSettings {
    pub fn with_episodes(&self, episodes: usize) -> QConfig {
        QConfig {
            episodes,
            granularity: self.granularity,
            exploration: self.exploration,
            learning_rate: self.learning_rate,
        }
    }
}

fn default_candidates() -> usize {
    crate::opt::DEFAULT_CANDIDATES
}

fn default_epsilon() -> EpsilonChoice {
    EpsilonChoice::Auto
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub learners: Vec<LearnerKind>,
    /// Episodes per run. Ignored by the version-space learner when
    /// `anytime` is set.
    pub episodes: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: EpsilonChoice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anytime: Option<AnytimeConfig>,
    /// Fixes the game across seeds; by default each seed draws its own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_seed: Option<u64>,
    #[serde(default = "default_candidates")]
    pub candidates: usize,
    #[serde(default)]
    pub q_learning: QSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn validate(&self, origin: &Path) -> Result<()> {
        let fail = |message: &str| Err(Error::Config { path: origin.to_path_buf(), message: message.into() });
        if self.learners.is_empty() {
            return fail("at least one learner is required");
        }
        if self.seeds.is_empty() {
            return fail("at least one seed is required");
        }
        if self.episodes == 0 {
            return fail("episodes must be at least 1");
        }
        if self.candidates == 0 {
            return fail("candidates must be at least 1");
        }
        if let Some(a) = self.anytime {
            if a.t0 == 0 || a.segments == 0 {
                return fail("anytime needs t0 >= 1 and segments >= 1");
            }
        }
        Ok(())
    }

    /// Reads a config, or the config stored in a run manifest. Relative
    /// scenario paths are made absolute against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let value: serde_json::Value = read_json(path)?;
        let body = match value.get("config") {
            Some(inner) if value.get("cells").is_some() => inner.clone(),
            _ => value,
        };
        let mut cfg: ExperimentConfig =
            serde_json::from_value(body).map_err(|e| Error::Config { path: path.to_path_buf(), message: e.to_string() })?;
        if let ScenarioConfig::File { path: game } = &mut cfg.scenario {
            if game.is_relative() {
                if let Some(dir) = path.parent() {
                    *game = dir.join(&*game);
                }
            }
        }
        cfg.validate(path)?;
        Ok(cfg)
    }
}

/// Parses a JSON file, reporting the line and column of syntax errors.
pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|e| Error::Config { path: path.to_path_buf(), message: e.to_string() })
}
