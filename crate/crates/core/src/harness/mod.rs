//! Experiment runner: builds instances, runs every (seed, learner) cell,
//! and writes per-episode metrics, seed-averaged curves and a manifest.

mod config;
mod metrics;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    read_json, AnytimeConfig, ExperimentConfig, LearnerKind, PoachingScenario, QSettings, ScenarioConfig,
};
pub use metrics::{average_cumulative_reward, average_regret, fmt_sig};

use crate::baselines::{fixed_policy_run, q_learning_run, random_policy_run};
use crate::error::{Error, Result};
use crate::game::{Dsg, FollowerOracle};
use crate::learner::{run_anytime, run_learning, LearnerConfig};
use crate::planning::hindsight_policy;
use crate::record::{BoundCheck, FallbackEvent, RunResult};
use crate::rng::{ids, stream};

pub const CSV_HEADER: [&str; 9] =
    ["episode", "seed", "learner", "avg_regret", "avg_cum_reward", "mistakes_cum", "epsilon", "p", "state_count"];
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub episode: usize,
    pub seed: u64,
    pub learner: String,
    pub avg_regret: f64,
    pub avg_cum_reward: f64,
    pub mistakes_cum: usize,
    pub epsilon: Option<f64>,
    pub p: usize,
    pub state_count: usize,
}

/// Mistake budget outcome for one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub learner: String,
    pub checks: Vec<BoundCheck>,
    pub pass: bool,
}

impl fmt::Display for BoundReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.checks.is_empty() {
            return write!(f, "{}: no mistake budget (agent does not plan with a margin)", self.learner);
        }
        for c in &self.checks {
            let seg = c.segment.map(|s| format!(" segment {s}")).unwrap_or_default();
            writeln!(
                f,
                "{}{seg}: epsilon {} p {} budget {} mistakes {} ({} episodes) {}",
                self.learner,
                fmt_sig(c.epsilon),
                c.p,
                fmt_sig(c.budget),
                c.mistakes,
                c.mistake_episodes,
                if c.pass { "PASS" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

/// Compares mistakes with `(2 / epsilon)^(p - 1)`, per segment for anytime
/// runs. Runs without a margin schedule pass vacuously.
pub fn report_bounds(run: &RunResult, dsg: &Dsg) -> BoundReport {
    let checks = run.bound_checks(dsg.p()).unwrap_or_default();
    let pass = checks.iter().all(|c| c.pass);
    BoundReport { learner: run.learner.clone(), checks, pass }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceInfo {
    pub seed: u64,
    pub instance_seed: u64,
    pub p: usize,
    pub state_count: usize,
    pub normalization: f64,
    pub opt_value: f64,
    pub theta_star: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellInfo {
    pub seed: u64,
    pub learner: String,
    pub episodes: usize,
    pub total_mistakes: usize,
    pub final_avg_regret: f64,
    pub final_avg_cum_reward: f64,
    pub fallback_events: Vec<FallbackEvent>,
    pub bounds: BoundReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    /// How the optimal-policy term of the regret is computed.
    pub regret_reference: String,
    pub instances: Vec<InstanceInfo>,
    pub cells: Vec<CellInfo>,
    pub metrics_file: String,
    pub summary_file: String,
    pub bounds_ok: bool,
}

/// Everything one cell produced.
#[derive(Clone, Debug)]
pub struct CellOutcome {
    pub seed: u64,
    pub learner: LearnerKind,
    pub run: RunResult,
    pub rows: Vec<MetricsRow>,
    pub bounds: BoundReport,
}

struct Prepared {
    info: InstanceInfo,
    dsg: Dsg,
    oracle: FollowerOracle,
}

fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let instance_seed = cfg.instance_seed.unwrap_or(seed);
    let (inst, oracle) = cfg.scenario.instantiate(instance_seed)?;
    let (_, values) = hindsight_policy(&inst.dsg, &oracle)?;
    Ok(Prepared {
        info: InstanceInfo {
            seed,
            instance_seed,
            p: inst.dsg.p(),
            state_count: inst.dsg.state_count(),
            normalization: inst.normalization,
            opt_value: values.root(),
            theta_star: inst.theta_star.clone(),
        },
        dsg: inst.dsg,
        oracle,
    })
}

/// Runs one learner on one prepared instance.
pub fn run_agent(
    cfg: &ExperimentConfig,
    learner: LearnerKind,
    seed: u64,
    dsg: &Dsg,
    oracle: &FollowerOracle,
) -> Result<RunResult> {
    match learner {
        LearnerKind::VersionSpace => {
            let lc = LearnerConfig {
                episodes: cfg.episodes,
                epsilon: cfg.epsilon,
                candidates: cfg.candidates,
                seed,
                ..Default::default()
            };
            match cfg.anytime {
                Some(a) => run_anytime(dsg, oracle, a.t0, a.segments, &lc),
                None => run_learning(dsg, oracle, &lc),
            }
        }
        LearnerKind::QLearning => {
            let q = cfg.q_learning.with_episodes(cfg.episodes);
            q_learning_run(dsg, oracle, &q, &mut stream(seed, ids::AGENT)).map(|(run, _)| run)
        }
        LearnerKind::Random => random_policy_run(dsg, oracle, cfg.episodes, &mut stream(seed, ids::AGENT)),
        LearnerKind::Hindsight => {
            let (policy, _) = hindsight_policy(dsg, oracle)?;
            fixed_policy_run(dsg, oracle, &policy, cfg.episodes, "hindsight", &mut stream(seed, ids::AGENT))
        }
    }
}

fn metrics_rows(run: &RunResult, info: &InstanceInfo) -> Vec<MetricsRow> {
    let regret = average_regret(run, info.opt_value, run.horizon);
    let reward = average_cumulative_reward(run, run.horizon);
    let mut mistakes = 0;
    run.episodes
        .iter()
        .enumerate()
        .map(|(i, e)| {
            mistakes += e.mistakes;
            MetricsRow {
                episode: e.episode,
                seed: info.seed,
                learner: run.learner.clone(),
                avg_regret: regret[i],
                avg_cum_reward: reward[i],
                mistakes_cum: mistakes,
                epsilon: e.epsilon,
                p: info.p,
                state_count: info.state_count,
            }
        })
        .collect()
}

/// Runs every cell of the experiment without touching the filesystem.
/// Cells run in parallel on the current rayon pool; the output order is
/// seeds-major, learners-minor as in the config.
pub fn run_cells(cfg: &ExperimentConfig) -> Result<(Vec<InstanceInfo>, Vec<CellOutcome>)> {
    let prepared = cfg.seeds.par_iter().map(|&seed| prepare(cfg, seed)).collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, LearnerKind)> =
        (0..prepared.len()).flat_map(|i| cfg.learners.iter().map(move |&l| (i, l))).collect();
    let cells = jobs
        .par_iter()
        .map(|&(i, learner)| {
            let pr = &prepared[i];
            let run = run_agent(cfg, learner, pr.info.seed, &pr.dsg, &pr.oracle)?;
            let rows = metrics_rows(&run, &pr.info);
            let bounds = report_bounds(&run, &pr.dsg);
            Ok(CellOutcome { seed: pr.info.seed, learner, run, rows, bounds })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((prepared.into_iter().map(|p| p.info).collect(), cells))
}

/// Seed-averaged rows per learner and episode; the seed column reads `mean`.
pub fn summarize(cfg: &ExperimentConfig, cells: &[CellOutcome]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for &learner in &cfg.learners {
        let mine: Vec<&CellOutcome> = cells.iter().filter(|c| c.learner == learner).collect();
        let len = mine.iter().map(|c| c.rows.len()).min().unwrap_or(0);
        for t in 0..len {
            let rows: Vec<&MetricsRow> = mine.iter().map(|c| &c.rows[t]).collect();
            let k = rows.len() as f64;
            let mean = |f: &dyn Fn(&MetricsRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / k;
            let epsilon = rows.iter().map(|r| r.epsilon).collect::<Option<Vec<f64>>>().map(|v| v.iter().sum::<f64>() / k);
            out.push(SummaryRow {
                episode: rows[0].episode,
                learner: learner.name().into(),
                avg_regret: mean(&|r| r.avg_regret),
                avg_cum_reward: mean(&|r| r.avg_cum_reward),
                mistakes_cum: mean(&|r| r.mistakes_cum as f64),
                epsilon,
                p: mean(&|r| r.p as f64),
                state_count: mean(&|r| r.state_count as f64),
            });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub episode: usize,
    pub learner: String,
    pub avg_regret: f64,
    pub avg_cum_reward: f64,
    pub mistakes_cum: f64,
    pub epsilon: Option<f64>,
    pub p: f64,
    pub state_count: f64,
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io { path: path.to_path_buf(), source },
        other => Error::Invariant(format!("writing {}: {other:?}", path.display())),
    }
}

fn write_csv(path: &Path, records: impl Iterator<Item = [String; 9]>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(CSV_HEADER).map_err(|e| csv_error(path, e))?;
    for r in records {
        w.write_record(&r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn opt_sig(v: Option<f64>) -> String {
    v.map(fmt_sig).unwrap_or_default()
}

/// Runs the experiment and writes `metrics.csv`, `summary.csv` and
/// `manifest.json` into `out`. With `threads`, cells run on a dedicated
/// pool of that size.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, threads: Option<usize>) -> Result<Manifest> {
    cfg.validate(Path::new("<config>"))?;
    let (instances, cells) = match threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Invariant(format!("thread pool: {e}")))?
            .install(|| run_cells(cfg))?,
        None => run_cells(cfg)?,
    };
    fs::create_dir_all(out).map_err(|source| Error::Io { path: out.to_path_buf(), source })?;

    let metrics_path = out.join(METRICS_FILE);
    write_csv(
        &metrics_path,
        cells.iter().flat_map(|c| &c.rows).map(|r| {
            [
                r.episode.to_string(),
                r.seed.to_string(),
                r.learner.clone(),
                fmt_sig(r.avg_regret),
                fmt_sig(r.avg_cum_reward),
                r.mistakes_cum.to_string(),
                opt_sig(r.epsilon),
                r.p.to_string(),
                r.state_count.to_string(),
            ]
        }),
    )?;
    let summary_path = out.join(SUMMARY_FILE);
    write_csv(
        &summary_path,
        summarize(cfg, &cells).into_iter().map(|r| {
            [
                r.episode.to_string(),
                "mean".into(),
                r.learner,
                fmt_sig(r.avg_regret),
                fmt_sig(r.avg_cum_reward),
                fmt_sig(r.mistakes_cum),
                opt_sig(r.epsilon),
                fmt_sig(r.p),
                fmt_sig(r.state_count),
            ]
        }),
    )?;

    let cell_info = cells
        .iter()
        .map(|c| CellInfo {
            seed: c.seed,
            learner: c.learner.name().into(),
            episodes: c.run.episodes.len(),
            total_mistakes: c.run.total_mistakes(),
            final_avg_regret: c.rows.last().map_or(0.0, |r| r.avg_regret),
            final_avg_cum_reward: c.rows.last().map_or(0.0, |r| r.avg_cum_reward),
            fallback_events: c.run.fallbacks.clone(),
            bounds: c.bounds.clone(),
        })
        .collect::<Vec<_>>();
    let manifest = Manifest {
        config: cfg.clone(),
        regret_reference: "exact optimal value V(pi*, s1) by backward induction".into(),
        bounds_ok: cell_info.iter().all(|c| c.bounds.pass),
        instances,
        cells: cell_info,
        metrics_file: METRICS_FILE.into(),
        summary_file: SUMMARY_FILE.into(),
    };
    let manifest_path = out.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Invariant(e.to_string()))?;
    fs::write(&manifest_path, text + "\n").map_err(|source| Error::Io { path: manifest_path, source })?;
    Ok(manifest)
}

/// Loads a manifest written by [`run_experiment`].
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    read_json(path)
}

/// Output directory: explicit flag, else the config's `output`, else `out`.
pub fn output_dir(flag: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    flag.map(Path::to_path_buf).or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::EpsilonChoice;

    fn tiny(learners: Vec<LearnerKind>, episodes: usize, seeds: Vec<u64>) -> ExperimentConfig {
        ExperimentConfig {
            scenario: ScenarioConfig::Random { layer_sizes: vec![1, 2], n: 3, m: 3, p: 2 },
            learners,
            episodes,
            seeds,
            epsilon: EpsilonChoice::Auto,
            anytime: None,
            instance_seed: None,
            candidates: 16,
            q_learning: QSettings::default(),
            output: None,
        }
    }

    #[test]
    fn bound_report_examples() {
        use crate::record::mistake_budget;
        assert_eq!(mistake_budget(1.0, 2), 2.0);
        assert_eq!(mistake_budget(0.5, 3), 16.0);
    }

    #[test]
    fn one_cell_one_row() {
        let dir = tempfile::tempdir().unwrap();
        let m = run_experiment(&tiny(vec![LearnerKind::VersionSpace], 1, vec![3]), dir.path(), None).unwrap();
        let text = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "episode,seed,learner,avg_regret,avg_cum_reward,mistakes_cum,epsilon,p,state_count");
        assert_eq!(lines.len(), 2);
        assert!(lines[1].starts_with("1,3,version_space,"));
        assert!(m.bounds_ok);
        let summary = fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
        assert!(summary.lines().nth(1).unwrap().starts_with("1,mean,version_space,"));
    }

    #[test]
    fn hindsight_on_deterministic_game_has_zero_regret() {
        // one state and one leader action make play deterministic
        let mut cfg = tiny(vec![LearnerKind::Hindsight], 4, vec![1]);
        cfg.scenario = ScenarioConfig::Random { layer_sizes: vec![1], n: 1, m: 2, p: 2 };
        let (_, cells) = run_cells(&cfg).unwrap();
        assert!(cells[0].rows.iter().all(|r| r.avg_regret.abs() < 1e-12));
    }

    #[test]
    fn summary_is_pointwise_mean() {
        let cfg = tiny(vec![LearnerKind::Random, LearnerKind::VersionSpace], 3, vec![1, 2, 5]);
        let (_, cells) = run_cells(&cfg).unwrap();
        let summary = summarize(&cfg, &cells);
        assert_eq!(summary.len(), 6);
        for s in &summary {
            let vals: Vec<f64> = cells
                .iter()
                .filter(|c| c.learner.name() == s.learner)
                .map(|c| c.rows[s.episode - 1].avg_regret)
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!((mean - s.avg_regret).abs() < 1e-15);
        }
        for c in &cells {
            assert!(c.rows.windows(2).all(|w| w[0].episode < w[1].episode));
            assert!(c.rows.iter().all(|r| (0.0..=1.0).contains(&r.avg_cum_reward)));
        }
    }

    #[test]
    fn config_errors_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        fs::write(&path, "{\n  \"learners\": [\"version_space\"],\n  \"seeds\": [1,\n}").unwrap();
        let err = ExperimentConfig::load(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.json") && msg.contains("line"), "{msg}");
        fs::write(&path, r#"{"scenario": {"kind": "random", "layer_sizes": [1], "n": 2, "m": 2, "p": 2}, "learners": [], "episodes": 1, "seeds": [0]}"#).unwrap();
        assert!(matches!(ExperimentConfig::load(&path), Err(Error::Config { .. })));
    }

    #[test]
    fn manifest_reloads_as_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(vec![LearnerKind::Random], 2, vec![4]);
        run_experiment(&cfg, dir.path(), Some(1)).unwrap();
        let again = ExperimentConfig::load(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(again, cfg);
    }
}
