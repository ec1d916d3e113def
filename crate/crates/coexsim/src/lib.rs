//! Simulator and learning agent for centralized wireless coexistence
//! management.
//!
//! A central coordination point observes a shared band through a
//! 1024-point FFT magnitude spectrum and allocates one of four channels to a
//! managed wireless network. A worst-case interferer — an inverted-PSK jammer
//! at twice the network's amplitude — occupies one channel, either statically
//! per episode or hopping one channel per step. The agent (DQN or DDQN with
//! experience replay) learns from spectrum observations alone to keep the
//! network off the interferer's channel; the reward per step is `1 − BER`.
//!
//! The crate is organized around four layers:
//!
//! * [`env`] — baseband signal synthesis, matched-filter demodulation, and
//!   the episodic environment itself.
//! * [`net`] — a dense feed-forward Q-network with backpropagation and an
//!   Adam optimizer, written directly against `f64` slices.
//! * [`agent`] — ε-greedy control, the replay buffer, and DQN/DDQN bootstrap
//!   targets.
//! * [`experiment`] / [`metrics`] / [`report`] — the experiment protocol
//!   (episodes × steps × repetitions), the derived metrics (operational mean,
//!   percentile bands, exponential fit and rise time), and the CSV/JSON
//!   output formats.
//!
//! # Example
//!
//! ```
//! use coexsim::env::Scenario;
//! use coexsim::experiment::{AgentKind, ExperimentConfig};
//!
//! // A short random-policy run; the full protocol uses 250 episodes x 15
//! // repetitions and calibrates to a mean accumulated reward of 15.
//! let cfg = ExperimentConfig {
//!     scenario: Scenario::Static,
//!     agent: AgentKind::Random,
//!     episodes: 10,
//!     training_episodes: 4,
//!     repetitions: 2,
//!     master_seed: 7,
//!     ..ExperimentConfig::default()
//! };
//! let result = coexsim::experiment::run_experiment(&cfg).unwrap();
//! assert_eq!(result.records.len(), 20);
//! for rec in &result.records {
//!     assert!(rec.accumulated_reward >= 0.0 && rec.accumulated_reward <= 20.0);
//! }
//! ```
//!
//! All randomness flows from a single master seed through labeled
//! [`rng`] substreams, so every run — sequential or parallel — is
//! bit-reproducible.

pub mod agent;
pub mod env;
pub mod experiment;
pub mod metrics;
pub mod net;
pub mod report;
pub mod rng;
pub mod selftest;
