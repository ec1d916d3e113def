//! Run artifacts: the per-episode CSV, the JSON summary, and the pure
//! summary computation shared by `run` and `report`.
//!
//! Floats are written in shortest round-trip form, so a record matrix read
//! back from disk is bit-identical to the one that was written, and
//! re-summarizing it reproduces the summary byte for byte.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Scenario;
use crate::experiment::{AgentKind, EpisodeRecord, ExperimentResult, Phase};
use crate::metrics::{cross_repetition_mean, fit_exponential, mean, population_std, MetricsError};

/// Reward of the uniform-random baseline on the 4-channel allocation task:
/// 3/4 of the maximum accumulated reward of 20.
pub const BASELINE_REFERENCE: f64 = 15.0;

const CSV_HEADER: &str = "scenario,agent,rep,episode,phase,accumulated_reward,epsilon_end";

// ---------------------------------------------------------------------------
// errors

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("records are inconsistent: {0}")]
    BadRecords(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("summary serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path, source: io::Error) -> ReportError {
    ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ---------------------------------------------------------------------------
// summary

/// Exponential-fit parameters as they appear in `summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FitSummary {
    pub a: f64,
    pub b: f64,
    pub tau: f64,
}

/// The run-level summary written to `summary.json`. Field order is the file
/// format; don't reorder.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Summary {
    pub scenario: String,
    pub agent: String,
    pub repetitions: usize,
    pub mean_operational_reward: f64,
    pub std_operational_reward: f64,
    pub rise_time_episodes: f64,
    pub fit: FitSummary,
    pub baseline_reference: f64,
}

impl Summary {
    /// The exact bytes written to `summary.json`.
    pub fn to_json(&self) -> Result<String, ReportError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Compute the summary from the record matrix alone, so a summary recomputed
/// from a CSV on disk is bit-identical to the one written at run time.
///
/// The operational statistics pool every operational episode across
/// repetitions; the exponential fit runs on the cross-repetition mean curve
/// of the training phase.
pub fn summarize(
    scenario: Scenario,
    agent: AgentKind,
    records: &[EpisodeRecord],
) -> Result<Summary, ReportError> {
    if records.is_empty() {
        return Err(ReportError::BadRecords("no records".into()));
    }
    let repetitions = records.iter().map(|r| r.repetition).max().unwrap() + 1;
    let episodes = records.iter().map(|r| r.episode).max().unwrap();
    if records.len() != repetitions * episodes {
        return Err(ReportError::BadRecords(format!(
            "expected {repetitions} repetitions × {episodes} episodes = {} records, got {}",
            repetitions * episodes,
            records.len()
        )));
    }

    // reward[rep][episode-1], validated dense.
    let mut rewards = vec![vec![f64::NAN; episodes]; repetitions];
    let mut training_episodes = 0usize;
    for r in records {
        rewards[r.repetition][r.episode - 1] = r.accumulated_reward;
        match r.phase {
            Phase::Training => training_episodes = training_episodes.max(r.episode),
            Phase::Operational => {}
        }
    }
    if rewards.iter().flatten().any(|v| v.is_nan()) {
        return Err(ReportError::BadRecords(
            "record matrix has holes (missing (rep, episode) pairs)".into(),
        ));
    }
    for r in records {
        let should_train = r.episode <= training_episodes;
        if (r.phase == Phase::Training) != should_train {
            return Err(ReportError::BadRecords(format!(
                "phase of (rep {}, episode {}) contradicts a training boundary of {}",
                r.repetition, r.episode, training_episodes
            )));
        }
    }
    if training_episodes == 0 || training_episodes >= episodes {
        return Err(ReportError::BadRecords(format!(
            "need both phases, got {training_episodes} training of {episodes} episodes"
        )));
    }

    let operational: Vec<f64> = rewards
        .iter()
        .flat_map(|row| row[training_episodes..].iter().copied())
        .collect();

    let training_matrix: Vec<Vec<f64>> = rewards
        .iter()
        .map(|row| row[..training_episodes].to_vec())
        .collect();
    let fit = fit_exponential(&cross_repetition_mean(&training_matrix))?;

    Ok(Summary {
        scenario: scenario.as_str().to_string(),
        agent: agent.as_str().to_string(),
        repetitions,
        mean_operational_reward: mean(&operational),
        std_operational_reward: population_std(&operational),
        rise_time_episodes: fit.rise_time,
        fit: FitSummary {
            a: fit.a,
            b: fit.b,
            tau: fit.tau,
        },
        baseline_reference: BASELINE_REFERENCE,
    })
}

// ---------------------------------------------------------------------------
// CSV

/// Write the record matrix as `records.csv` content: a fixed header plus one
/// newline-terminated row per episode, floats in shortest round-trip form.
pub fn csv_string(scenario: Scenario, agent: AgentKind, records: &[EpisodeRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            scenario.as_str(),
            agent.as_str(),
            r.repetition,
            r.episode,
            r.phase.as_str(),
            r.accumulated_reward,
            r.epsilon_end,
        ));
    }
    out
}

pub fn write_csv(
    path: &Path,
    scenario: Scenario,
    agent: AgentKind,
    records: &[EpisodeRecord],
) -> Result<(), ReportError> {
    fs::write(path, csv_string(scenario, agent, records)).map_err(|e| io_err(path, e))
}

/// Parse a `records.csv`. The header must match exactly; every row must
/// carry the same scenario and agent.
pub fn read_csv(path: &Path) -> Result<(Scenario, AgentKind, Vec<EpisodeRecord>), ReportError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let bad = |line: usize, reason: String| ReportError::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };

    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CSV_HEADER => {}
        Some((_, header)) => {
            return Err(bad(1, format!("bad header '{header}', expected '{CSV_HEADER}'")))
        }
        None => return Err(bad(1, "empty file".into())),
    }

    let mut scenario_agent: Option<(Scenario, AgentKind)> = None;
    let mut records = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(bad(lineno, format!("expected 7 fields, got {}", fields.len())));
        }
        let scenario: Scenario = fields[0]
            .parse()
            .map_err(|e| bad(lineno, format!("{e}")))?;
        let agent: AgentKind = fields[1]
            .parse()
            .map_err(|e| bad(lineno, format!("{e}")))?;
        match scenario_agent {
            None => scenario_agent = Some((scenario, agent)),
            Some(sa) if sa == (scenario, agent) => {}
            Some((s0, a0)) => {
                return Err(bad(
                    lineno,
                    format!(
                        "mixed runs in one file: ({}, {}) vs ({}, {})",
                        s0.as_str(),
                        a0.as_str(),
                        scenario.as_str(),
                        agent.as_str()
                    ),
                ))
            }
        }
        let parse_usize = |field: &str, name: &str| {
            field
                .parse::<usize>()
                .map_err(|e| bad(lineno, format!("bad {name} '{field}': {e}")))
        };
        let parse_f64 = |field: &str, name: &str| {
            field
                .parse::<f64>()
                .map_err(|e| bad(lineno, format!("bad {name} '{field}': {e}")))
        };
        records.push(EpisodeRecord {
            repetition: parse_usize(fields[2], "rep")?,
            episode: parse_usize(fields[3], "episode")?,
            phase: fields[4].parse().map_err(|e| bad(lineno, format!("{e}")))?,
            accumulated_reward: parse_f64(fields[5], "accumulated_reward")?,
            epsilon_end: parse_f64(fields[6], "epsilon_end")?,
        });
    }
    let (scenario, agent) =
        scenario_agent.ok_or_else(|| bad(2, "no data rows".into()))?;
    Ok((scenario, agent, records))
}

// ---------------------------------------------------------------------------
// directory-level artifacts

/// Write `records.csv` and `summary.json` for a finished experiment into
/// `dir` (created if needed); returns the summary.
pub fn write_run_outputs(dir: &Path, result: &ExperimentResult) -> Result<Summary, ReportError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let scenario = result.config.scenario;
    let agent = result.config.agent;
    write_csv(&dir.join("records.csv"), scenario, agent, &result.records)?;
    let summary = summarize(scenario, agent, &result.records)?;
    let path = dir.join("summary.json");
    fs::write(&path, summary.to_json()?).map_err(|e| io_err(&path, e))?;
    Ok(summary)
}

/// Recompute `summary.json` from `DIR/records.csv` — the `report`
/// subcommand. Re-running it on an untouched directory rewrites the same
/// bytes.
pub fn report_dir(dir: &Path) -> Result<Summary, ReportError> {
    let (scenario, agent, records) = read_csv(&dir.join("records.csv"))?;
    let summary = summarize(scenario, agent, &records)?;
    let path = dir.join("summary.json");
    fs::write(&path, summary.to_json()?).map_err(|e| io_err(&path, e))?;
    Ok(summary)
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{run_experiment_sequential, ExperimentConfig};
    use crate::rng::substream;
    use rand::Rng;

    fn tmpdir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("coexsim-report-{tag}-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn synthetic_records(
        repetitions: usize,
        episodes: usize,
        training: usize,
        mut reward: impl FnMut(usize, usize) -> f64,
    ) -> Vec<EpisodeRecord> {
        let mut records = Vec::new();
        for rep in 0..repetitions {
            for episode in 1..=episodes {
                records.push(EpisodeRecord {
                    repetition: rep,
                    episode,
                    phase: if episode <= training {
                        Phase::Training
                    } else {
                        Phase::Operational
                    },
                    accumulated_reward: reward(rep, episode),
                    epsilon_end: 0.25,
                });
            }
        }
        records
    }

    #[test]
    fn csv_has_the_pinned_header_and_line_count() {
        let records = synthetic_records(15, 250, 100, |_, _| 20.0);
        let csv = csv_string(Scenario::Static, AgentKind::Ddqn, &records);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3751, "1 header + 15×250 records");
        assert_eq!(
            lines[0],
            "scenario,agent,rep,episode,phase,accumulated_reward,epsilon_end"
        );
        assert_eq!(lines[1], "static,ddqn,0,1,training,20,0.25");
        assert!(csv.ends_with('\n'), "rows are newline-terminated");
        assert!(!csv.contains(','.to_string().repeat(2).as_str()), "no empty fields");
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        // Awkward floats: subnormal-ish fractions, many digits.
        let mut rng = substream(21, "test.csv", 0);
        let records = synthetic_records(3, 40, 15, |_, _| rng.random_range(0.0..20.0));
        let dir = tmpdir("roundtrip");
        let path = dir.join("records.csv");
        write_csv(&path, Scenario::Hopping, AgentKind::Dqn, &records).unwrap();
        let (scenario, agent, back) = read_csv(&path).unwrap();
        assert_eq!(scenario, Scenario::Hopping);
        assert_eq!(agent, AgentKind::Dqn);
        assert_eq!(back.len(), records.len());
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(a.repetition, b.repetition);
            assert_eq!(a.episode, b.episode);
            assert_eq!(a.phase, b.phase);
            assert_eq!(a.accumulated_reward.to_bits(), b.accumulated_reward.to_bits());
            assert_eq!(a.epsilon_end.to_bits(), b.epsilon_end.to_bits());
        }
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn read_csv_rejects_malformed_files() {
        let dir = tmpdir("malformed");
        let cases: [(&str, &str); 5] = [
            ("bad-header", "a,b,c\nstatic,dqn,0,1,training,1,1\n"),
            ("bad-field-count", "scenario,agent,rep,episode,phase,accumulated_reward,epsilon_end\nstatic,dqn,0,1,training,1\n"),
            ("bad-float", "scenario,agent,rep,episode,phase,accumulated_reward,epsilon_end\nstatic,dqn,0,1,training,x,1\n"),
            ("bad-phase", "scenario,agent,rep,episode,phase,accumulated_reward,epsilon_end\nstatic,dqn,0,1,sleeping,1,1\n"),
            ("mixed-agents", "scenario,agent,rep,episode,phase,accumulated_reward,epsilon_end\nstatic,dqn,0,1,training,1,1\nstatic,ddqn,0,2,training,1,1\n"),
        ];
        for (name, content) in cases {
            let path = dir.join(format!("{name}.csv"));
            fs::write(&path, content).unwrap();
            assert!(read_csv(&path).is_err(), "{name} should fail to parse");
        }
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn summary_of_a_perfect_run_is_exact() {
        let records = synthetic_records(15, 250, 100, |_, _| 20.0);
        let s = summarize(Scenario::Static, AgentKind::Ddqn, &records).unwrap();
        assert_eq!(s.mean_operational_reward, 20.0);
        assert_eq!(s.std_operational_reward, 0.0);
        assert_eq!(s.repetitions, 15);
        assert_eq!(s.baseline_reference, 15.0);
        assert_eq!(s.scenario, "static");
        assert_eq!(s.agent, "ddqn");
    }

    #[test]
    fn summary_recovers_a_synthetic_learning_curve() {
        // Rewards follow R(e) = 19.6 − 6·e^(−e/14) exactly in every rep.
        let curve = |e: usize| 19.6 - 6.0 * (-(e as f64) / 14.0).exp();
        let records = synthetic_records(15, 250, 100, |_, e| curve(e));
        let s = summarize(Scenario::Hopping, AgentKind::Ddqn, &records).unwrap();
        assert!((s.fit.tau - 14.0).abs() / 14.0 < 0.01, "tau {}", s.fit.tau);
        assert!((s.rise_time_episodes - 14.0 * 9f64.ln()).abs() < 0.4);
        // Operational episodes (101..=250) sit at the asymptote.
        assert!((s.mean_operational_reward - 19.6).abs() < 0.01);
    }

    #[test]
    fn summary_json_schema_is_pinned() {
        let s = Summary {
            scenario: "static".into(),
            agent: "random".into(),
            repetitions: 15,
            mean_operational_reward: 15.0,
            std_operational_reward: 0.5,
            rise_time_episodes: 30.25,
            fit: FitSummary { a: 15.0, b: 0.5, tau: 13.75 },
            baseline_reference: 15.0,
        };
        let expected = "{\n  \"scenario\": \"static\",\n  \"agent\": \"random\",\n  \"repetitions\": 15,\n  \"mean_operational_reward\": 15.0,\n  \"std_operational_reward\": 0.5,\n  \"rise_time_episodes\": 30.25,\n  \"fit\": {\n    \"a\": 15.0,\n    \"b\": 0.5,\n    \"tau\": 13.75\n  },\n  \"baseline_reference\": 15.0\n}\n";
        assert_eq!(s.to_json().unwrap(), expected);
    }

    #[test]
    fn summarize_rejects_inconsistent_matrices() {
        let mut records = synthetic_records(2, 30, 10, |_, _| 10.0);
        records.pop();
        assert!(summarize(Scenario::Static, AgentKind::Dqn, &records).is_err());

        let mut records = synthetic_records(2, 30, 10, |_, _| 10.0);
        records[40].phase = Phase::Training; // operational episode mislabeled
        assert!(summarize(Scenario::Static, AgentKind::Dqn, &records).is_err());

        let all_training = synthetic_records(2, 30, 30, |_, _| 10.0);
        assert!(summarize(Scenario::Static, AgentKind::Dqn, &all_training).is_err());
    }

    #[test]
    fn run_outputs_then_report_is_byte_idempotent() {
        let cfg = ExperimentConfig {
            agent: AgentKind::Random,
            episodes: 40,
            training_episodes: 16,
            repetitions: 3,
            master_seed: 11,
            ..ExperimentConfig::default()
        };
        let result = run_experiment_sequential(&cfg).unwrap();
        let dir = tmpdir("idempotent");
        write_run_outputs(&dir, &result).unwrap();
        let csv0 = fs::read(dir.join("records.csv")).unwrap();
        let json0 = fs::read(dir.join("summary.json")).unwrap();
        report_dir(&dir).unwrap();
        assert_eq!(fs::read(dir.join("records.csv")).unwrap(), csv0);
        assert_eq!(
            fs::read(dir.join("summary.json")).unwrap(),
            json0,
            "recomputed summary differs from the original"
        );
        fs::remove_dir_all(&dir).ok();
    }
}
