//! End-to-end experiment protocol: scenarios × agent variants × repetitions.
//!
//! A repetition is one fresh environment plus one fresh agent run for 250
//! episodes — 100 training, 150 operational — and every repetition draws its
//! randomness from labeled substreams of `(master_seed, repetition)`, so
//! repetitions are fully isolated and can run in any order, or on several
//! threads, without changing a single output bit.
//!
//! # Example
//!
//! ```
//! use coexsim::env::Scenario;
//! use coexsim::experiment::{run_experiment_sequential, AgentKind, ExperimentConfig};
//!
//! let cfg = ExperimentConfig {
//!     scenario: Scenario::Static,
//!     agent: AgentKind::Random,
//!     episodes: 10,
//!     training_episodes: 4,
//!     repetitions: 2,
//!     master_seed: 7,
//!     ..ExperimentConfig::default()
//! };
//! let result = run_experiment_sequential(&cfg).unwrap();
//! assert_eq!(result.records.len(), 20);
//! ```

use thiserror::Error;

use crate::agent::{epsilon_at, Agent, AgentVariant, Hyperparameters, Transition};
use crate::env::{ChannelIndex, EnvConfig, Environment, Scenario, NUM_CHANNELS};
use crate::rng::{derive_seed, substream};

use rand::Rng;

// ---------------------------------------------------------------------------
// configuration

/// Which policy runs the wireless network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentKind {
    Dqn,
    Ddqn,
    /// Uniform random channel choice; calibration baseline.
    Random,
}

impl AgentKind {
    /// Lowercase token used in CSV records and on the command line.
    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Dqn => "dqn",
            AgentKind::Ddqn => "ddqn",
            AgentKind::Random => "random",
        }
    }
}

impl std::str::FromStr for AgentKind {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dqn" => Ok(AgentKind::Dqn),
            "ddqn" => Ok(AgentKind::Ddqn),
            "random" => Ok(AgentKind::Random),
            _ => Err(ExperimentError::BadConfig(format!(
                "unknown agent '{s}' (expected 'dqn', 'ddqn' or 'random')"
            ))),
        }
    }
}

/// Run phase of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Learning enabled, ε decaying.
    Training,
    /// Policy frozen at the exploration floor.
    Operational,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Training => "training",
            Phase::Operational => "operational",
        }
    }
}

impl std::str::FromStr for Phase {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "training" => Ok(Phase::Training),
            "operational" => Ok(Phase::Operational),
            _ => Err(ExperimentError::BadConfig(format!(
                "unknown phase '{s}' (expected 'training' or 'operational')"
            ))),
        }
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment configuration: {0}")]
    BadConfig(String),
    #[error("environment failure: {0}")]
    Env(#[from] crate::env::EnvError),
}

/// Full description of one experiment (one scenario × one agent kind,
/// repeated).
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub agent: AgentKind,
    pub episodes: usize,
    /// Episodes 1..=training_episodes train; the rest are operational.
    pub training_episodes: usize,
    pub steps_per_episode: usize,
    pub repetitions: usize,
    pub master_seed: u64,
    pub hyperparameters: Hyperparameters,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: Scenario::Static,
            agent: AgentKind::Ddqn,
            episodes: 250,
            training_episodes: 100,
            steps_per_episode: 20,
            repetitions: 15,
            master_seed: 7,
            hyperparameters: Hyperparameters::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.episodes == 0
            || self.training_episodes == 0
            || self.steps_per_episode == 0
            || self.repetitions == 0
        {
            return Err(ExperimentError::BadConfig(
                "all counts must be at least 1".into(),
            ));
        }
        if self.training_episodes >= self.episodes {
            return Err(ExperimentError::BadConfig(format!(
                "training_episodes ({}) must be smaller than episodes ({})",
                self.training_episodes, self.episodes
            )));
        }
        self.hyperparameters
            .validate()
            .map_err(ExperimentError::BadConfig)?;
        Ok(())
    }

    /// Exploration-schedule horizon in environment steps.
    pub fn training_steps(&self) -> u64 {
        (self.training_episodes * self.steps_per_episode) as u64
    }
}

// ---------------------------------------------------------------------------
// records

/// One episode's outcome, the unit of the CSV output.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    /// Repetition index, 0-based.
    pub repetition: usize,
    /// Episode number, 1-based.
    pub episode: usize,
    pub phase: Phase,
    /// Sum of the step rewards, in `[0, steps_per_episode]`.
    pub accumulated_reward: f64,
    /// ε in force after the episode's last step (1.0 for the random agent).
    pub epsilon_end: f64,
}

/// Outcome of one repetition.
#[derive(Debug, Clone)]
pub struct RepetitionOutcome {
    pub records: Vec<EpisodeRecord>,
    /// Operational-phase step count.
    pub operational_steps: u64,
    /// Operational-phase steps on which the agent picked the interferer's
    /// current channel (read from the environment's hidden state before the
    /// step).
    pub operational_interferer_hits: u64,
}

/// All repetitions of one experiment, records ordered by (repetition,
/// episode).
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub records: Vec<EpisodeRecord>,
    pub operational_steps: u64,
    pub operational_interferer_hits: u64,
}

impl ExperimentResult {
    /// Accumulated rewards as a `repetitions × episodes` matrix.
    pub fn reward_matrix(&self) -> Vec<Vec<f64>> {
        let mut matrix = vec![Vec::with_capacity(self.config.episodes); self.config.repetitions];
        for r in &self.records {
            matrix[r.repetition].push(r.accumulated_reward);
        }
        matrix
    }

    /// Fraction of operational steps spent on the interferer's channel.
    pub fn interferer_hit_rate(&self) -> f64 {
        self.operational_interferer_hits as f64 / self.operational_steps.max(1) as f64
    }
}

// ---------------------------------------------------------------------------
// execution

/// Run one repetition: fresh environment and agent seeded from
/// `(master_seed, repetition)`, `episodes` episodes of `steps_per_episode`
/// steps.
pub fn run_repetition(
    cfg: &ExperimentConfig,
    repetition: usize,
) -> Result<RepetitionOutcome, ExperimentError> {
    cfg.validate()?;
    let env_seed = derive_seed(cfg.master_seed, "env", repetition as u64);
    let agent_seed = derive_seed(cfg.master_seed, "agent", repetition as u64);

    let mut env = Environment::new(EnvConfig {
        scenario: cfg.scenario,
        steps_per_episode: cfg.steps_per_episode,
        seed: env_seed,
        ..EnvConfig::default()
    })?;

    let mut agent = match cfg.agent {
        AgentKind::Dqn => Some(Agent::new(
            AgentVariant::Dqn,
            cfg.hyperparameters.clone(),
            agent_seed,
        )),
        AgentKind::Ddqn => Some(Agent::new(
            AgentVariant::Ddqn,
            cfg.hyperparameters.clone(),
            agent_seed,
        )),
        AgentKind::Random => None,
    };
    // The random baseline draws from the same labeled stream an agent would
    // use for exploration.
    let mut random_policy_rng = substream(agent_seed, "agent.explore", 0);

    let training_steps = cfg.training_steps();
    let mut global_step: u64 = 0;
    let mut records = Vec::with_capacity(cfg.episodes);
    let mut operational_steps = 0u64;
    let mut operational_interferer_hits = 0u64;

    for episode in 1..=cfg.episodes {
        let phase = if episode <= cfg.training_episodes {
            Phase::Training
        } else {
            Phase::Operational
        };
        let mut obs = env.reset();
        let mut accumulated = 0.0;

        for _ in 0..cfg.steps_per_episode {
            let epsilon = match phase {
                Phase::Training => epsilon_at(&cfg.hyperparameters, global_step, training_steps),
                // Frozen policy keeps the exploration floor.
                Phase::Operational => cfg.hyperparameters.epsilon_final,
            };
            let action = match &mut agent {
                Some(a) => a.act(&obs, epsilon),
                None => ChannelIndex(random_policy_rng.random_range(0..NUM_CHANNELS)),
            };

            if phase == Phase::Operational {
                operational_steps += 1;
                if action == env.interferer_channel() {
                    operational_interferer_hits += 1;
                }
            }

            let outcome = env.step(action).expect("stepping within the episode");
            accumulated += outcome.reward;
            global_step += 1;

            if phase == Phase::Training {
                if let Some(a) = &mut agent {
                    a.learn_step(Transition {
                        observation: obs,
                        action,
                        reward: outcome.reward,
                        next_observation: outcome.next_observation.clone(),
                        terminal: outcome.terminal,
                    });
                }
            }
            obs = outcome.next_observation;
        }

        if phase == Phase::Training {
            if let Some(a) = &mut agent {
                a.sync_target(episode);
            }
        }

        let epsilon_end = match (&agent, phase) {
            (None, _) => 1.0,
            (Some(_), Phase::Training) => {
                epsilon_at(&cfg.hyperparameters, global_step, training_steps)
            }
            (Some(_), Phase::Operational) => cfg.hyperparameters.epsilon_final,
        };
        records.push(EpisodeRecord {
            repetition,
            episode,
            phase,
            accumulated_reward: accumulated,
            epsilon_end,
        });
    }

    Ok(RepetitionOutcome {
        records,
        operational_steps,
        operational_interferer_hits,
    })
}

fn merge(
    cfg: &ExperimentConfig,
    outcomes: Vec<RepetitionOutcome>,
) -> ExperimentResult {
    let mut records = Vec::with_capacity(cfg.repetitions * cfg.episodes);
    let mut operational_steps = 0;
    let mut operational_interferer_hits = 0;
    for o in outcomes {
        operational_steps += o.operational_steps;
        operational_interferer_hits += o.operational_interferer_hits;
        records.extend(o.records);
    }
    ExperimentResult {
        config: cfg.clone(),
        records,
        operational_steps,
        operational_interferer_hits,
    }
}

/// Run every repetition on the current thread, in index order.
pub fn run_experiment_sequential(
    cfg: &ExperimentConfig,
) -> Result<ExperimentResult, ExperimentError> {
    cfg.validate()?;
    let outcomes: Result<Vec<_>, _> = (0..cfg.repetitions)
        .map(|rep| run_repetition(cfg, rep))
        .collect();
    Ok(merge(cfg, outcomes?))
}

/// Run the repetitions as a data-parallel fan-out, one task per repetition.
/// Repetitions share no state and own their RNG substreams, and the collect
/// preserves index order, so the result is bit-identical to
/// [`run_experiment_sequential`].
#[cfg(feature = "parallel")]
pub fn run_experiment_parallel(
    cfg: &ExperimentConfig,
) -> Result<ExperimentResult, ExperimentError> {
    use rayon::prelude::*;
    cfg.validate()?;
    let outcomes: Result<Vec<_>, _> = (0..cfg.repetitions)
        .into_par_iter()
        .map(|rep| run_repetition(cfg, rep))
        .collect();
    Ok(merge(cfg, outcomes?))
}

/// Run an experiment with the best strategy the build allows: data-parallel
/// when the `parallel` feature is on, sequential otherwise.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, ExperimentError> {
    #[cfg(feature = "parallel")]
    {
        run_experiment_parallel(cfg)
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_experiment_sequential(cfg)
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn random_cfg() -> ExperimentConfig {
        ExperimentConfig {
            agent: AgentKind::Random,
            episodes: 30,
            training_episodes: 12,
            repetitions: 2,
            master_seed: 7,
            ..ExperimentConfig::default()
        }
    }

    fn bits(records: &[EpisodeRecord]) -> Vec<(usize, usize, u64, u64)> {
        records
            .iter()
            .map(|r| {
                (
                    r.repetition,
                    r.episode,
                    r.accumulated_reward.to_bits(),
                    r.epsilon_end.to_bits(),
                )
            })
            .collect()
    }

    #[test]
    fn config_invariants_are_enforced() {
        let mut cfg = random_cfg();
        cfg.training_episodes = 30;
        assert!(cfg.validate().is_err(), "training phase must end early");
        cfg.training_episodes = 31;
        assert!(cfg.validate().is_err());
        cfg = random_cfg();
        cfg.repetitions = 0;
        assert!(cfg.validate().is_err());
        assert!(random_cfg().validate().is_ok());
    }

    #[test]
    fn record_matrix_has_the_right_shape_and_order() {
        let cfg = random_cfg();
        let result = run_experiment_sequential(&cfg).unwrap();
        assert_eq!(result.records.len(), 60);
        for (i, r) in result.records.iter().enumerate() {
            assert_eq!(r.repetition, i / 30);
            assert_eq!(r.episode, i % 30 + 1, "episodes are 1-based and ordered");
            let expect_phase = if r.episode <= 12 {
                Phase::Training
            } else {
                Phase::Operational
            };
            assert_eq!(r.phase, expect_phase, "episode {}", r.episode);
            assert!((0.0..=20.0).contains(&r.accumulated_reward));
            assert_eq!(r.epsilon_end, 1.0, "random agent reports full exploration");
        }
        assert_eq!(result.operational_steps, 2 * 18 * 20);
    }

    #[test]
    fn repetitions_are_deterministic_and_distinct() {
        let cfg = random_cfg();
        let a = run_experiment_sequential(&cfg).unwrap();
        let b = run_experiment_sequential(&cfg).unwrap();
        assert_eq!(bits(&a.records), bits(&b.records));
        assert_eq!(
            a.operational_interferer_hits,
            b.operational_interferer_hits
        );
        let rep0: Vec<f64> = a.records[..30].iter().map(|r| r.accumulated_reward).collect();
        let rep1: Vec<f64> = a.records[30..].iter().map(|r| r.accumulated_reward).collect();
        assert_ne!(rep0, rep1, "repetitions share a stream");

        let mut other = cfg;
        other.master_seed = 8;
        let c = run_experiment_sequential(&other).unwrap();
        assert_ne!(bits(&a.records), bits(&c.records));
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_and_sequential_runs_are_bit_identical() {
        let cfg = random_cfg();
        let seq = run_experiment_sequential(&cfg).unwrap();
        let par = run_experiment_parallel(&cfg).unwrap();
        assert_eq!(bits(&seq.records), bits(&par.records));
        assert_eq!(seq.operational_steps, par.operational_steps);
        assert_eq!(
            seq.operational_interferer_hits,
            par.operational_interferer_hits
        );
    }

    #[test]
    fn random_agent_hits_the_interferer_a_quarter_of_the_time() {
        // Uniform choice over 4 channels → 25% hit rate, both scenarios.
        for scenario in [Scenario::Static, Scenario::Hopping] {
            let cfg = ExperimentConfig {
                scenario,
                episodes: 100,
                training_episodes: 10,
                repetitions: 2,
                ..random_cfg()
            };
            let result = run_experiment_sequential(&cfg).unwrap();
            let rate = result.interferer_hit_rate();
            assert!(
                (0.20..=0.30).contains(&rate),
                "{scenario:?}: hit rate {rate}"
            );
        }
    }

    #[test]
    fn oracle_policy_accumulates_nearly_the_full_reward() {
        // A policy with oracle access to the hidden interferer channel avoids
        // it perfectly; at 10 dB only residual noise flips bits, so every
        // episode accumulates ≥ 19.9 of the maximum 20.
        for scenario in [Scenario::Static, Scenario::Hopping] {
            let mut env = Environment::new(EnvConfig {
                scenario,
                seed: 99,
                ..EnvConfig::default()
            })
            .unwrap();
            for _ in 0..20 {
                env.reset();
                let mut accumulated = 0.0;
                for _ in 0..20 {
                    let avoid = env.interferer_channel();
                    let action = ChannelIndex((avoid.index() + 1) % NUM_CHANNELS);
                    accumulated += env.step(action).unwrap().reward;
                }
                assert!(accumulated >= 19.9, "{scenario:?}: accumulated {accumulated}");
            }
        }
    }

    #[test]
    fn reward_matrix_reshapes_the_records() {
        let result = run_experiment_sequential(&random_cfg()).unwrap();
        let matrix = result.reward_matrix();
        assert_eq!(matrix.len(), 2);
        assert!(matrix.iter().all(|row| row.len() == 30));
        assert_eq!(matrix[1][4], result.records[34].accumulated_reward);
    }

    #[test]
    fn learning_agents_decay_epsilon_and_stay_at_the_floor() {
        // Tiny DQN run: 5 episodes × 20 steps, training ends after 2.
        let cfg = ExperimentConfig {
            agent: AgentKind::Dqn,
            episodes: 5,
            training_episodes: 2,
            repetitions: 1,
            master_seed: 3,
            ..ExperimentConfig::default()
        };
        let result = run_experiment_sequential(&cfg).unwrap();
        let eps: Vec<f64> = result.records.iter().map(|r| r.epsilon_end).collect();
        // ε after episode 1 (step 20 of 40): e^-4 ≈ 0.0183; after episode 2:
        // clamped at the floor; operational episodes hold the floor.
        assert!((eps[0] - (-4.0f64).exp()).abs() < 1e-12, "eps {eps:?}");
        assert_eq!(&eps[1..], &[0.01; 4]);
        assert!(result
            .records
            .iter()
            .all(|r| (0.0..=20.0).contains(&r.accumulated_reward)));
    }
}
