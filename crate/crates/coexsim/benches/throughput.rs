//! Throughput benchmarks for the two hot loops and the repetition fan-out.
//!
//! `experiment/*` compares the data-parallel path against the sequential
//! baseline on the same configuration — on a multi-core host the parallel
//! path should approach a per-core speedup, while on one core it documents
//! the fan-out overhead. `env/step` and `net/train_minibatch` isolate the
//! per-step simulation and learning costs that dominate a full run.

use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::Rng;

use coexsim::env::{ChannelIndex, EnvConfig, Environment, NUM_CHANNELS, SAMPLES_PER_STEP};
use coexsim::experiment::{
    run_experiment_parallel, run_experiment_sequential, AgentKind, ExperimentConfig,
};
use coexsim::net::{AdamState, QNetwork, TrainSample, ARCH_DIMS};
use coexsim::rng::substream;

fn bench_experiment(c: &mut Criterion) {
    let random_cfg = ExperimentConfig {
        agent: AgentKind::Random,
        episodes: 10,
        training_episodes: 4,
        repetitions: 4,
        master_seed: 7,
        ..ExperimentConfig::default()
    };
    let dqn_cfg = ExperimentConfig {
        agent: AgentKind::Dqn,
        episodes: 2,
        training_episodes: 1,
        repetitions: 2,
        ..random_cfg.clone()
    };

    let mut group = c.benchmark_group("experiment");
    group.sample_size(10).measurement_time(Duration::from_secs(8));
    group.bench_function("random/sequential", |b| {
        b.iter(|| run_experiment_sequential(&random_cfg).unwrap())
    });
    group.bench_function("random/parallel", |b| {
        b.iter(|| run_experiment_parallel(&random_cfg).unwrap())
    });
    group.bench_function("dqn/sequential", |b| {
        b.iter(|| run_experiment_sequential(&dqn_cfg).unwrap())
    });
    group.bench_function("dqn/parallel", |b| {
        b.iter(|| run_experiment_parallel(&dqn_cfg).unwrap())
    });
    group.finish();
}

fn bench_env_step(c: &mut Criterion) {
    let mut env = Environment::new(EnvConfig {
        seed: 7,
        ..EnvConfig::default()
    })
    .unwrap();
    env.reset();
    let mut action = 0usize;
    c.bench_function("env/step", |b| {
        b.iter(|| {
            action = (action + 1) % NUM_CHANNELS;
            let outcome = env.step(ChannelIndex(action)).unwrap();
            if outcome.terminal {
                env.reset();
            }
            outcome.reward
        })
    });
}

fn bench_train_minibatch(c: &mut Criterion) {
    let mut rng = substream(7, "bench.net", 0);
    let mut net = QNetwork::init(&ARCH_DIMS, &mut rng).unwrap();
    let mut opt = AdamState::new(&net);
    let observations: Vec<Vec<f64>> = (0..32)
        .map(|_| (0..SAMPLES_PER_STEP).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let batch: Vec<TrainSample<'_>> = observations
        .iter()
        .enumerate()
        .map(|(i, obs)| TrainSample {
            obs,
            action: i % NUM_CHANNELS,
            target: (i % 5) as f64 / 4.0,
        })
        .collect();
    c.bench_function("net/train_minibatch", |b| {
        b.iter(|| net.train_minibatch(&mut opt, &batch).unwrap())
    });
}

criterion_group!(benches, bench_experiment, bench_env_step, bench_train_minibatch);
criterion_main!(benches);
