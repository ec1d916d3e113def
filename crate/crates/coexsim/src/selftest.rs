//! Built-in verification suite, runnable from the command line without the
//! test harness.
//!
//! Each check exercises one load-bearing property of the simulator or the
//! learner — exact carrier orthogonality, exact collision inversion, the
//! Parseval identity of the spectral front end, backprop against finite
//! differences, bootstrap-target consistency, the exploration schedule, the
//! replay buffer, and bit-identical reruns — and reports pass/fail with a
//! one-line detail.
//!
//! # Example
//!
//! ```no_run
//! let results = coexsim::selftest::run_all();
//! assert!(results.iter().all(|c| c.passed));
//! ```

use rand::Rng;

use crate::agent::{
    ddqn_targets, dqn_targets, epsilon_at, Hyperparameters, ReplayBuffer, Transition,
};
use crate::env::{
    bit_error_rate, carrier, matched_filter_demodulate, modulate_bpsk, upconvert, ChannelIndex,
    EnvConfig, Environment, IqFrame, Observation, Scenario, NUM_CHANNELS, SAMPLES_PER_STEP,
    SAMPLES_PER_SYMBOL, SYMBOLS_PER_STEP,
};
use crate::experiment::{run_experiment_sequential, AgentKind, ExperimentConfig};
use crate::net::{dot, QNetwork, TrainSample, ARCH_DIMS};
use crate::rng::substream;

use rustfft::num_complex::Complex64;

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// What was measured on success; what went wrong on failure.
    pub detail: String,
}

fn check(name: &'static str, body: impl FnOnce() -> Result<String, String>) -> CheckResult {
    match body() {
        Ok(detail) => CheckResult {
            name,
            passed: true,
            detail,
        },
        Err(detail) => CheckResult {
            name,
            passed: false,
            detail,
        },
    }
}

/// Run every check. Total runtime is a few seconds.
pub fn run_all() -> Vec<CheckResult> {
    vec![
        check("subband-orthogonality", subband_orthogonality),
        check("collision-inversion-ber", collision_inversion_ber),
        check("parseval-identity", parseval_identity),
        check("backprop-finite-differences", backprop_finite_differences),
        check("bootstrap-target-consistency", bootstrap_target_consistency),
        check("epsilon-schedule", epsilon_schedule),
        check("replay-buffer", replay_buffer),
        check("bit-identical-reruns", bit_identical_reruns),
    ]
}

pub fn all_passed(results: &[CheckResult]) -> bool {
    results.iter().all(|c| c.passed)
}

// ---------------------------------------------------------------------------
// individual checks

/// Symbol-aligned transmissions on distinct channels demodulate error-free
/// at zero noise, for every ordered channel pair: the four-sample carrier
/// cross sums cancel to within one machine epsilon, orders of magnitude
/// below the matched filter's decision margin, so no bit decision is ever
/// touched by the other channel.
fn subband_orthogonality() -> Result<String, String> {
    let mut rng = substream(501, "selftest.orth", 0);
    let bits_a: Vec<u8> = (0..SYMBOLS_PER_STEP).map(|_| rng.random_range(0..2u8)).collect();
    let bits_b: Vec<u8> = (0..SYMBOLS_PER_STEP).map(|_| rng.random_range(0..2u8)).collect();
    let mut pairs = 0;
    let mut worst_leak = 0.0f64;
    for a in 0..NUM_CHANNELS {
        let fa = upconvert(&modulate_bpsk(&bits_a, 1.0), ChannelIndex(a), SAMPLES_PER_SYMBOL);
        for b in 0..NUM_CHANNELS {
            if a == b {
                continue;
            }
            pairs += 1;
            // Leakage of a's pure signal into b's matched filter.
            for k in 0..SYMBOLS_PER_STEP {
                let mut z = Complex64::new(0.0, 0.0);
                for i in 0..SAMPLES_PER_SYMBOL {
                    let n = k * SAMPLES_PER_SYMBOL + i;
                    z += fa.0[n] * carrier(ChannelIndex(b), n).conj();
                }
                worst_leak = worst_leak.max(z.norm());
                if z.norm() > 1e-12 {
                    return Err(format!(
                        "channel {a} leaks into {b} at symbol {k}: correlation {z}"
                    ));
                }
            }
            // The property itself: a two-channel composite at zero noise
            // demodulates both payloads with zero bit errors.
            let fb = upconvert(&modulate_bpsk(&bits_b, 2.0), ChannelIndex(b), SAMPLES_PER_SYMBOL);
            let composite = IqFrame(fa.0.iter().zip(&fb.0).map(|(x, y)| x + y).collect());
            if matched_filter_demodulate(&composite, ChannelIndex(a)) != bits_a {
                return Err(format!("channel {b} corrupts channel {a}'s payload"));
            }
            if matched_filter_demodulate(&composite, ChannelIndex(b)) != bits_b {
                return Err(format!("channel {a} corrupts channel {b}'s payload"));
            }
        }
    }
    Ok(format!(
        "{pairs} ordered channel pairs error-free; worst carrier leakage {worst_leak:.2e} \
         against a decision margin of {}",
        SAMPLES_PER_SYMBOL
    ))
}

/// A same-channel collision with the inverted double-amplitude replica turns
/// every symbol into `−A·s`, so the demodulator flips every bit: BER = 1
/// exactly at zero noise, and the environment's reward is exactly 0.
fn collision_inversion_ber() -> Result<String, String> {
    // Direct frame construction.
    let mut rng = substream(502, "selftest.coll", 0);
    let bits: Vec<u8> = (0..SYMBOLS_PER_STEP).map(|_| rng.random_range(0..2u8)).collect();
    let symbols = modulate_bpsk(&bits, 1.0);
    let ch = ChannelIndex(2);
    let wn = upconvert(&symbols, ch, SAMPLES_PER_SYMBOL);
    let inverted: Vec<f64> = symbols.iter().map(|s| -2.0 * s).collect();
    let interferer = upconvert(&inverted, ch, SAMPLES_PER_SYMBOL);
    let composite = IqFrame(
        wn.0.iter()
            .zip(&interferer.0)
            .map(|(a, b)| a + b)
            .collect(),
    );
    let rx = matched_filter_demodulate(&composite, ch);
    let ber = bit_error_rate(&bits, &rx).map_err(|e| e.to_string())?;
    if ber != 1.0 {
        return Err(format!("composite frame BER = {ber}, expected exactly 1"));
    }

    // Through the environment at zero noise.
    let mut env = Environment::new(EnvConfig {
        snr_db: f64::INFINITY,
        seed: 502,
        ..EnvConfig::default()
    })
    .map_err(|e| e.to_string())?;
    env.reset();
    let hit = env.interferer_channel();
    let outcome = env.step(hit).map_err(|e| e.to_string())?;
    if outcome.reward != 0.0 {
        return Err(format!(
            "collision step reward = {}, expected exactly 0",
            outcome.reward
        ));
    }
    Ok("direct composite BER = 1 exactly; collision step reward = 0 exactly".into())
}

/// `Σ_n |x[n]|² = N · Σ_k mag[k]²` for the normalized spectrum
/// `mag = |DFT|/N`, within 1e-9 relative error.
fn parseval_identity() -> Result<String, String> {
    let mut rng = substream(503, "selftest.parseval", 0);
    let mut worst = 0.0f64;
    for trial in 0..4 {
        let frame = IqFrame(
            (0..SAMPLES_PER_STEP)
                .map(|_| Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
                .collect(),
        );
        let obs = crate::env::fft_magnitude(&frame).map_err(|e| e.to_string())?;
        let time: f64 = frame.0.iter().map(|s| s.norm_sqr()).sum();
        let freq: f64 = obs.0.iter().map(|m| m * m).sum::<f64>() * SAMPLES_PER_STEP as f64;
        let rel = (time - freq).abs() / time;
        worst = worst.max(rel);
        if rel > 1e-9 {
            return Err(format!("trial {trial}: relative energy error {rel:.3e} > 1e-9"));
        }
    }
    Ok(format!("4 random frames, worst relative energy error {worst:.3e}"))
}

/// Analytic gradients against central finite differences on a small
/// randomized network, relative error < 1e-4 per parameter. Parameters are
/// re-drawn until every hidden pre-activation sits clear of the rectifier
/// kink, where the two-sided difference quotient is not the derivative.
fn backprop_finite_differences() -> Result<String, String> {
    let dims = [6usize, 5, 4, 3];
    let mut rng = substream(504, "selftest.fd", 0);
    let x: Vec<f64> = (0..dims[0]).map(|_| rng.random_range(-1.0..1.0)).collect();

    let preactivations = |dims: &[usize], flat: &[f64], x: &[f64]| -> Vec<Vec<f64>> {
        let mut acts = x.to_vec();
        let mut out = Vec::new();
        let mut off = 0;
        for l in 0..dims.len() - 1 {
            let (cols, rows) = (dims[l], dims[l + 1]);
            let w = &flat[off..off + rows * cols];
            off += rows * cols;
            let b = &flat[off..off + rows];
            off += rows;
            let z: Vec<f64> = (0..rows)
                .map(|r| dot(&w[r * cols..(r + 1) * cols], &acts) + b[r])
                .collect();
            acts = if l + 2 == dims.len() {
                z.clone()
            } else {
                z.iter().map(|v| v.max(0.0)).collect()
            };
            out.push(z);
        }
        out
    };

    let mut net = QNetwork::init(&dims, &mut rng).map_err(|e| e.to_string())?;
    let mut flat = vec![0.0; net.param_count()];
    let mut tries = 0;
    loop {
        tries += 1;
        if tries > 100 {
            return Err("no kink-free parameter draw in 100 tries".into());
        }
        for p in flat.iter_mut() {
            *p = rng.random_range(-0.7..0.7);
        }
        let zs = preactivations(&dims, &flat, &x);
        let clear = zs[..zs.len() - 1]
            .iter()
            .flatten()
            .all(|z| z.abs() > 1e-3);
        if clear {
            break;
        }
    }
    net.set_parameters(&flat).map_err(|e| e.to_string())?;

    let batch = [TrainSample {
        obs: &x,
        action: 1,
        target: 0.8,
    }];
    let mut grads = Vec::new();
    net.loss_and_gradients(&batch, &mut grads)
        .map_err(|e| e.to_string())?;

    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..flat.len() {
        let mut plus = flat.clone();
        plus[i] += h;
        net.set_parameters(&plus).map_err(|e| e.to_string())?;
        let lp = net.batch_loss(&batch).map_err(|e| e.to_string())?;
        let mut minus = flat.clone();
        minus[i] -= h;
        net.set_parameters(&minus).map_err(|e| e.to_string())?;
        let lm = net.batch_loss(&batch).map_err(|e| e.to_string())?;
        let fd = (lp - lm) / (2.0 * h);
        let rel = (grads[i] - fd).abs() / grads[i].abs().max(fd.abs()).max(1.0);
        worst = worst.max(rel);
        if rel > 1e-4 {
            return Err(format!(
                "parameter {i}: backprop {} vs finite difference {fd}, relative error {rel:.3e}",
                grads[i]
            ));
        }
    }
    Ok(format!(
        "{} parameters, worst relative error {worst:.3e}",
        flat.len()
    ))
}

/// With the target network equal to the online network, the DDQN bootstrap
/// reduces to the DQN bootstrap bit for bit; terminal transitions bootstrap
/// to the bare reward under both rules.
fn bootstrap_target_consistency() -> Result<String, String> {
    let mut rng = substream(505, "selftest.targets", 0);
    let online = QNetwork::init(&ARCH_DIMS, &mut rng).map_err(|e| e.to_string())?;
    let target = online.clone_parameters();
    let transitions: Vec<Transition> = (0..12)
        .map(|i| Transition {
            observation: Observation(
                (0..SAMPLES_PER_STEP).map(|_| rng.random_range(0.0..1.0)).collect(),
            ),
            action: ChannelIndex(i % NUM_CHANNELS),
            reward: rng.random_range(0.0..1.0),
            next_observation: Observation(
                (0..SAMPLES_PER_STEP).map(|_| rng.random_range(0.0..1.0)).collect(),
            ),
            terminal: i % 3 == 0,
        })
        .collect();
    let batch: Vec<&Transition> = transitions.iter().collect();
    let dqn = dqn_targets(&batch, &online, 0.96);
    let ddqn = ddqn_targets(&batch, &online, &target, 0.96);
    for (i, (a, b)) in dqn.iter().zip(&ddqn).enumerate() {
        if a.to_bits() != b.to_bits() {
            return Err(format!(
                "transition {i}: dqn target {a} != ddqn target {b} with synced networks"
            ));
        }
    }
    for (i, t) in transitions.iter().enumerate() {
        if t.terminal && (dqn[i] != t.reward || ddqn[i] != t.reward) {
            return Err(format!(
                "terminal transition {i}: target {} != reward {}",
                dqn[i], t.reward
            ));
        }
    }
    Ok(format!(
        "{} transitions bit-identical across rules; {} terminal targets equal rewards",
        batch.len(),
        transitions.iter().filter(|t| t.terminal).count()
    ))
}

/// ε(0) = 1, ε clamps to 0.01 from the end of training onward, and the
/// schedule never increases.
fn epsilon_schedule() -> Result<String, String> {
    let h = Hyperparameters::default();
    let steps = 2000;
    if epsilon_at(&h, 0, steps) != 1.0 {
        return Err(format!("ε(0) = {}, expected exactly 1", epsilon_at(&h, 0, steps)));
    }
    for s in [steps, steps + 1, 10 * steps] {
        if epsilon_at(&h, s, steps) != h.epsilon_final {
            return Err(format!(
                "ε({s}) = {}, expected floor {}",
                epsilon_at(&h, s, steps),
                h.epsilon_final
            ));
        }
    }
    let mut last = f64::INFINITY;
    for s in 0..2 * steps {
        let e = epsilon_at(&h, s, steps);
        if e > last {
            return Err(format!("ε increased at step {s}: {last} → {e}"));
        }
        last = e;
    }
    Ok("endpoints exact (1.0 → 0.01), monotonically non-increasing".into())
}

/// FIFO eviction at capacity and uniform without-replacement minibatches
/// (χ² over element draw counts).
fn replay_buffer() -> Result<String, String> {
    let tiny = |tag: f64| Transition {
        observation: Observation(vec![tag]),
        action: ChannelIndex(0),
        reward: tag,
        next_observation: Observation(vec![tag]),
        terminal: false,
    };

    let mut buf = ReplayBuffer::new(5000);
    for i in 0..5001 {
        buf.push(tiny(i as f64));
    }
    if buf.len() != 5000 || buf.get(0).reward != 1.0 {
        return Err(format!(
            "after 5001 pushes: len {} (want 5000), oldest reward {} (want 1, the oldest entry evicted)",
            buf.len(),
            buf.get(0).reward
        ));
    }

    let mut buf = ReplayBuffer::new(100);
    for i in 0..100 {
        buf.push(tiny(i as f64));
    }
    let mut rng = substream(506, "selftest.replay", 0);
    let batches = 1000;
    let mut counts = vec![0u64; 100];
    for _ in 0..batches {
        let idx = buf
            .sample_indices(32, &mut rng)
            .ok_or("sampling failed with a full buffer")?;
        let mut seen = [false; 100];
        for &i in &idx {
            if seen[i] {
                return Err(format!("index {i} drawn twice within one minibatch"));
            }
            seen[i] = true;
            counts[i] += 1;
        }
    }
    let expected = batches as f64 * 32.0 / 100.0;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    // 99 degrees of freedom; 148.2 is the 99.9th percentile. The RNG stream
    // is fixed, so this either always passes or the sampler is broken.
    if chi2 > 148.2 {
        return Err(format!("draw-count χ² = {chi2:.1} > 148.2 (99 dof)"));
    }
    Ok(format!(
        "FIFO eviction exact; {batches} minibatches without replacement, χ² = {chi2:.1} (99 dof)"
    ))
}

/// The same configuration reruns to bit-identical records — including a
/// learning agent, and including the data-parallel path when compiled in.
fn bit_identical_reruns() -> Result<String, String> {
    let bits = |records: &[crate::experiment::EpisodeRecord]| -> Vec<u64> {
        records
            .iter()
            .map(|r| r.accumulated_reward.to_bits() ^ r.epsilon_end.to_bits().rotate_left(1))
            .collect()
    };

    let random_cfg = ExperimentConfig {
        agent: AgentKind::Random,
        scenario: Scenario::Hopping,
        episodes: 20,
        training_episodes: 8,
        repetitions: 2,
        master_seed: 7,
        ..ExperimentConfig::default()
    };
    let a = run_experiment_sequential(&random_cfg).map_err(|e| e.to_string())?;
    let b = run_experiment_sequential(&random_cfg).map_err(|e| e.to_string())?;
    if bits(&a.records) != bits(&b.records) {
        return Err("random-agent rerun differs".into());
    }

    let dqn_cfg = ExperimentConfig {
        agent: AgentKind::Dqn,
        episodes: 3,
        training_episodes: 2,
        repetitions: 1,
        master_seed: 7,
        ..ExperimentConfig::default()
    };
    let c = run_experiment_sequential(&dqn_cfg).map_err(|e| e.to_string())?;
    let d = run_experiment_sequential(&dqn_cfg).map_err(|e| e.to_string())?;
    if bits(&c.records) != bits(&d.records) {
        return Err("learning-agent rerun differs".into());
    }

    #[cfg(feature = "parallel")]
    {
        let p = crate::experiment::run_experiment_parallel(&random_cfg)
            .map_err(|e| e.to_string())?;
        if bits(&a.records) != bits(&p.records) {
            return Err("parallel run differs from sequential".into());
        }
        Ok("sequential reruns and the parallel path all bit-identical".into())
    }
    #[cfg(not(feature = "parallel"))]
    Ok("sequential reruns bit-identical (parallel path not compiled in)".into())
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Instant;

    #[test]
    fn every_check_passes_within_budget() {
        let t0 = Instant::now();
        let results = run_all();
        let elapsed = t0.elapsed();
        assert_eq!(results.len(), 8);
        for c in &results {
            assert!(c.passed, "{}: {}", c.name, c.detail);
            assert!(!c.detail.is_empty(), "{} has no detail", c.name);
        }
        assert!(all_passed(&results));
        assert!(
            elapsed.as_secs() < 30,
            "selftest took {elapsed:?}, budget is 30 s"
        );
    }

    #[test]
    fn check_names_are_unique() {
        let results = run_all();
        let mut names: Vec<&str> = results.iter().map(|c| c.name).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), 8);
    }
}
