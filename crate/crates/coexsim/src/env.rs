//! Baseband signal synthesis and the episodic coexistence environment.
//!
//! One managed wireless network sends BPSK frames on one of four
//! subbands; an interferer occupies another (or the same) subband and
//! transmits the network's symbol stream inverted at twice the amplitude, which
//! makes a same-channel collision flip every bit. The agent sees only the
//! 1024-point FFT magnitude of each step's frame and is rewarded with
//! `1 − BER`.
//!
//! Subband centers sit at `f_c = (ch + 0.5)/4 − 0.5` cycles per sample, i.e.
//! {−3/8, −1/8, +1/8, +3/8}. With 4 samples per symbol these carriers are
//! exactly orthogonal over every symbol window, so at zero noise the only
//! error source is a same-channel collision — which is precisely the
//! channel-granularity model the reward is built on.

use std::f64::consts::FRAC_1_SQRT_2;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::rng::substream;

/// Number of allocatable channels (the action space).
pub const NUM_CHANNELS: usize = 4;
/// Complex baseband samples per environment step.
pub const SAMPLES_PER_STEP: usize = 1024;
/// Samples per BPSK symbol (rectangular pulse).
pub const SAMPLES_PER_SYMBOL: usize = 4;
/// Payload symbols (= bits) per step.
pub const SYMBOLS_PER_STEP: usize = SAMPLES_PER_STEP / SAMPLES_PER_SYMBOL;

/// Errors surfaced by the environment layer.
#[derive(Debug, Error)]
pub enum EnvError {
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("channel index {value} out of range (0..{NUM_CHANNELS})")]
    InvalidChannel { value: usize },
    #[error("{what} = {value} out of range")]
    OutOfRange { what: &'static str, value: f64 },
    #[error("episode already finished; call reset before stepping again")]
    EpisodeFinished,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Interferer behavior over an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Scenario (i): the interferer keeps its (randomly drawn) channel for
    /// the whole episode.
    Static,
    /// Scenario (ii): the interferer advances one channel after every step,
    /// wrapping from 3 back to 0.
    Hopping,
}

impl Scenario {
    /// Lowercase token used in CSV records and on the command line.
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Static => "static",
            Scenario::Hopping => "hopping",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static" => Ok(Scenario::Static),
            "hopping" => Ok(Scenario::Hopping),
            _ => Err(EnvError::InvalidConfig(format!(
                "unknown scenario '{s}' (expected 'static' or 'hopping')"
            ))),
        }
    }
}

/// One of the four allocatable channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChannelIndex(pub usize);

impl ChannelIndex {
    /// Validated constructor.
    pub fn new(value: usize) -> Result<Self, EnvError> {
        if value < NUM_CHANNELS {
            Ok(ChannelIndex(value))
        } else {
            Err(EnvError::InvalidChannel { value })
        }
    }

    pub fn index(self) -> usize {
        self.0
    }
}

/// One step's complex baseband capture.
#[derive(Debug, Clone, PartialEq)]
pub struct IqFrame(pub Vec<Complex64>);

/// The agent's state input: 1024 non-negative FFT magnitudes, `|DFT|/1024`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// `1 − BER` of this step's transmission, in `[0, 1]`.
    pub reward: f64,
    /// Spectrum of the frame the reward was measured on.
    pub next_observation: Observation,
    /// True exactly on the final step of an episode.
    pub terminal: bool,
}

/// Environment parameters. The defaults are the calibrated values the
/// experiment protocol is built on; see the field docs for what each pin
/// buys.
#[derive(Debug, Clone)]
pub struct EnvConfig {
    pub num_channels: usize,
    pub samples_per_step: usize,
    pub samples_per_symbol: usize,
    /// WN amplitude `A`; BPSK maps bit 0 → `+A`, bit 1 → `−A`.
    pub wn_amplitude: f64,
    /// Interferer amplitude / WN amplitude. Must exceed 1 so that a
    /// same-channel collision flips the composite symbol's sign: at ratio 2
    /// the collision composite is `(1 − 2)·A·s = −A·s`, giving BER = 1.
    pub interferer_amplitude_ratio: f64,
    /// Symbol SNR of the WN after matched filtering, in dB. 10 dB puts the
    /// clean-channel BER near 4·10⁻⁶, so reward ≈ 1 off-collision.
    /// `f64::INFINITY` disables noise entirely.
    pub snr_db: f64,
    pub scenario: Scenario,
    /// Steps per episode; the step after the last returns `terminal = true`.
    pub steps_per_episode: usize,
    /// Seed for this environment's labeled RNG substreams
    /// (noise / interferer / payload).
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            num_channels: NUM_CHANNELS,
            samples_per_step: SAMPLES_PER_STEP,
            samples_per_symbol: SAMPLES_PER_SYMBOL,
            wn_amplitude: 1.0,
            interferer_amplitude_ratio: 2.0,
            snr_db: 10.0,
            scenario: Scenario::Static,
            steps_per_episode: 20,
            seed: 0,
        }
    }
}

impl EnvConfig {
    /// Check the structural invariants. The channelization constants are
    /// pinned: the exact-orthogonality argument below is specific to four
    /// subbands at quarter-band spacing with four samples per symbol.
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.num_channels != NUM_CHANNELS
            || self.samples_per_step != SAMPLES_PER_STEP
            || self.samples_per_symbol != SAMPLES_PER_SYMBOL
        {
            return Err(EnvError::InvalidConfig(format!(
                "channelization is fixed at {NUM_CHANNELS} channels, \
                 {SAMPLES_PER_STEP} samples/step, {SAMPLES_PER_SYMBOL} samples/symbol; \
                 got {}/{}/{}",
                self.num_channels, self.samples_per_step, self.samples_per_symbol
            )));
        }
        if !(self.wn_amplitude > 0.0) {
            return Err(EnvConfig::bad("wn_amplitude must be positive"));
        }
        if !(self.interferer_amplitude_ratio > 1.0) {
            return Err(EnvConfig::bad(
                "interferer_amplitude_ratio must exceed 1 (collision must flip bits)",
            ));
        }
        if self.snr_db.is_nan() {
            return Err(EnvConfig::bad("snr_db must not be NaN"));
        }
        if self.steps_per_episode == 0 {
            return Err(EnvConfig::bad("steps_per_episode must be at least 1"));
        }
        Ok(())
    }

    fn bad(msg: &str) -> EnvError {
        EnvError::InvalidConfig(msg.to_string())
    }
}

// ---------------------------------------------------------------------------
// Carriers
// ---------------------------------------------------------------------------

const SQ: f64 = FRAC_1_SQRT_2;

/// `exp(j·2π·k/8)` for k = 0..8. All carrier phases are multiples of π/4, so
/// this table is exact up to the rounding of `1/√2` — and because opposite
/// entries are exact negations, the four-sample cross-channel sums cancel to
/// exactly zero in floating point. That is what makes "orthogonality is
/// exact" a literal bit-level statement rather than a tolerance.
const TABLE8: [Complex64; 8] = [
    Complex64::new(1.0, 0.0),
    Complex64::new(SQ, SQ),
    Complex64::new(0.0, 1.0),
    Complex64::new(-SQ, SQ),
    Complex64::new(-1.0, 0.0),
    Complex64::new(-SQ, -SQ),
    Complex64::new(0.0, -1.0),
    Complex64::new(SQ, -SQ),
];

/// Per-channel carrier phase increment in eighths of a cycle. Channel `ch`
/// sits at `f_c = (ch + 0.5)/4 − 0.5 = (2ch − 3)/8` cycles/sample; the
/// increments {−3, −1, 1, 3} are stored as their positive residues mod 8.
const PHASE_STEP: [usize; NUM_CHANNELS] = [5, 7, 1, 3];

/// Carrier sample `exp(j·2π·f_c(channel)·n)`, exact via the phase table.
#[inline]
pub fn carrier(channel: ChannelIndex, n: usize) -> Complex64 {
    TABLE8[(PHASE_STEP[channel.0] * n) & 7]
}

/// FFT bins `start..start+256` covered by a channel's subband (unshifted DFT
/// indexing: non-negative frequencies first). Diagnostic helper used by the
/// calibration checks.
pub fn subband_range(channel: ChannelIndex) -> std::ops::Range<usize> {
    let start = ((channel.0 + 2) % NUM_CHANNELS) * SYMBOLS_PER_STEP;
    start..start + SYMBOLS_PER_STEP
}

/// Fraction of an observation's spectral energy inside a channel's subband.
/// Diagnostic helper.
pub fn band_energy_fraction(obs: &Observation, channel: ChannelIndex) -> f64 {
    let total: f64 = obs.0.iter().map(|m| m * m).sum();
    if total == 0.0 {
        return 0.0;
    }
    let band: f64 = subband_range(channel).map(|k| obs.0[k] * obs.0[k]).sum();
    band / total
}

// ---------------------------------------------------------------------------
// Signal operations
// ---------------------------------------------------------------------------

/// BPSK mapping: bit 0 → `+amplitude`, bit 1 → `−amplitude`.
pub fn modulate_bpsk(bits: &[u8], amplitude: f64) -> Vec<f64> {
    bits.iter()
        .map(|&b| if b == 0 { amplitude } else { -amplitude })
        .collect()
}

/// Place real symbols on a channel's carrier with rectangular pulses of
/// `sps` samples. The output has `symbols.len() · sps` samples; frame-length
/// validation happens at the synthesis boundary.
pub fn upconvert(symbols: &[f64], channel: ChannelIndex, sps: usize) -> IqFrame {
    let mut samples = Vec::with_capacity(symbols.len() * sps);
    for (k, &s) in symbols.iter().enumerate() {
        for n in k * sps..(k + 1) * sps {
            samples.push(carrier(channel, n) * s);
        }
    }
    IqFrame(samples)
}

/// Matched-filter demodulation: per symbol `k`, correlate the frame with the
/// channel's carrier, decide bit 0 iff `Re(z_k) ≥ 0`.
pub fn matched_filter_demodulate(frame: &IqFrame, channel: ChannelIndex) -> Vec<u8> {
    let samples = &frame.0;
    let mut bits = Vec::with_capacity(samples.len() / SAMPLES_PER_SYMBOL);
    for k in 0..samples.len() / SAMPLES_PER_SYMBOL {
        let mut z = Complex64::new(0.0, 0.0);
        for n in k * SAMPLES_PER_SYMBOL..(k + 1) * SAMPLES_PER_SYMBOL {
            z += samples[n] * carrier(channel, n).conj();
        }
        bits.push(if z.re >= 0.0 { 0 } else { 1 });
    }
    bits
}

/// Fraction of differing bit positions.
pub fn bit_error_rate(tx: &[u8], rx: &[u8]) -> Result<f64, EnvError> {
    if tx.is_empty() || tx.len() != rx.len() {
        return Err(EnvError::LengthMismatch {
            expected: tx.len().max(1),
            got: rx.len(),
        });
    }
    let errors = tx.iter().zip(rx).filter(|(a, b)| a != b).count();
    Ok(errors as f64 / tx.len() as f64)
}

/// Reward mapping `R = 1 − BER`.
pub fn reward_from_ber(ber: f64) -> Result<f64, EnvError> {
    if !(0.0..=1.0).contains(&ber) {
        return Err(EnvError::OutOfRange {
            what: "ber",
            value: ber,
        });
    }
    Ok(1.0 - ber)
}

fn magnitudes_with(fft: &dyn Fft<f64>, scratch: &mut Vec<Complex64>, frame: &IqFrame) -> Observation {
    let mut buf = frame.0.clone();
    scratch.resize(fft.get_inplace_scratch_len(), Complex64::new(0.0, 0.0));
    fft.process_with_scratch(&mut buf, scratch);
    let scale = 1.0 / frame.0.len() as f64;
    Observation(buf.iter().map(|c| c.norm() * scale).collect())
}

/// `|DFT(frame)| / 1024`: the agent-facing spectrum observation.
pub fn fft_magnitude(frame: &IqFrame) -> Result<Observation, EnvError> {
    if frame.0.len() != SAMPLES_PER_STEP {
        return Err(EnvError::LengthMismatch {
            expected: SAMPLES_PER_STEP,
            got: frame.0.len(),
        });
    }
    let fft = FftPlanner::new().plan_fft_forward(SAMPLES_PER_STEP);
    let mut scratch = Vec::new();
    Ok(magnitudes_with(fft.as_ref(), &mut scratch, frame))
}

/// Next interferer channel under the scenario rule.
pub fn interferer_next_channel(
    scenario: Scenario,
    current: ChannelIndex,
    at_reset: bool,
    rng: &mut ChaCha8Rng,
) -> ChannelIndex {
    if at_reset {
        return ChannelIndex(rng.random_range(0..NUM_CHANNELS));
    }
    match scenario {
        Scenario::Static => current,
        Scenario::Hopping => ChannelIndex((current.0 + 1) % NUM_CHANNELS),
    }
}

// ---------------------------------------------------------------------------
// Environment
// ---------------------------------------------------------------------------

/// The episodic coexistence environment.
///
/// Hidden state: the interferer's channel, the step counter, and three
/// labeled RNG substreams (noise / interferer / payload) derived from
/// `EnvConfig::seed`. An environment instance is single-threaded; independent
/// instances (one per experiment repetition) may run in parallel.
pub struct Environment {
    cfg: EnvConfig,
    noise_sigma_per_component: f64,
    fft: Arc<dyn Fft<f64>>,
    fft_scratch: Vec<Complex64>,
    noise_rng: ChaCha8Rng,
    interferer_rng: ChaCha8Rng,
    payload_rng: ChaCha8Rng,
    interferer_channel: ChannelIndex,
    step_in_episode: usize,
    episode_index: usize,
}

impl Environment {
    pub fn new(cfg: EnvConfig) -> Result<Self, EnvError> {
        cfg.validate()?;
        // Complex noise variance σ² chosen so the post-matched-filter symbol
        // SNR is snr_db: the filter sums sps samples, so the decision
        // statistic is N(sps·A, sps·σ²/2) per component and
        // SNR = (sps·A)² / (sps·σ²) = sps·A²/σ².
        let sigma2 = cfg.samples_per_symbol as f64 * cfg.wn_amplitude * cfg.wn_amplitude
            / 10f64.powf(cfg.snr_db / 10.0);
        let fft = FftPlanner::new().plan_fft_forward(cfg.samples_per_step);
        Ok(Environment {
            noise_sigma_per_component: (sigma2 / 2.0).sqrt(),
            fft,
            fft_scratch: Vec::new(),
            noise_rng: substream(cfg.seed, "env.noise", 0),
            interferer_rng: substream(cfg.seed, "env.interferer", 0),
            payload_rng: substream(cfg.seed, "env.payload", 0),
            interferer_channel: ChannelIndex(0),
            step_in_episode: 0,
            episode_index: 0,
            cfg,
        })
    }

    /// The interferer's current channel — hidden from the agent, exposed for
    /// verification (e.g. counting how often a trained agent collides).
    pub fn interferer_channel(&self) -> ChannelIndex {
        self.interferer_channel
    }

    /// Episodes started so far.
    pub fn episode_index(&self) -> usize {
        self.episode_index
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    fn draw_bits(&mut self) -> Vec<u8> {
        let n = self.cfg.samples_per_step / self.cfg.samples_per_symbol;
        (0..n).map(|_| self.payload_rng.random_range(0..2u8)).collect()
    }

    /// Compose WN transmission (optional), the interferer's inverted replica,
    /// and AWGN into one frame.
    fn synthesize(&mut self, wn_channel: Option<ChannelIndex>, bits: &[u8]) -> IqFrame {
        let a = self.cfg.wn_amplitude;
        let symbols = modulate_bpsk(bits, a);
        let sps = self.cfg.samples_per_symbol;

        let mut frame = vec![Complex64::new(0.0, 0.0); self.cfg.samples_per_step];
        if let Some(ch) = wn_channel {
            for (n, s) in frame.iter_mut().enumerate() {
                *s += carrier(ch, n) * symbols[n / sps];
            }
        }
        // The interferer re-transmits the same symbol stream inverted at
        // `ratio` times the amplitude (symbol-synchronous worst case).
        let ratio = self.cfg.interferer_amplitude_ratio;
        let ich = self.interferer_channel;
        for (n, s) in frame.iter_mut().enumerate() {
            *s += carrier(ich, n) * (-ratio * symbols[n / sps]);
        }
        if self.noise_sigma_per_component > 0.0 {
            let sd = self.noise_sigma_per_component;
            for s in frame.iter_mut() {
                let re: f64 = self.noise_rng.sample(StandardNormal);
                let im: f64 = self.noise_rng.sample(StandardNormal);
                *s += Complex64::new(re * sd, im * sd);
            }
        }
        IqFrame(frame)
    }

    fn observe(&mut self, frame: &IqFrame) -> Observation {
        magnitudes_with(self.fft.as_ref(), &mut self.fft_scratch, frame)
    }

    /// Start a new episode: re-draw the interferer channel uniformly, zero
    /// the step counter, and return the spectrum of one interferer-only frame
    /// so the agent can sense the band before its first allocation.
    pub fn reset(&mut self) -> Observation {
        self.episode_index += 1;
        self.step_in_episode = 0;
        self.interferer_channel = interferer_next_channel(
            self.cfg.scenario,
            self.interferer_channel,
            true,
            &mut self.interferer_rng,
        );
        // No WN transmission during reset, so there is no symbol stream for
        // the interferer to invert; it idles on its bare carrier instead.
        // The unmodulated tone concentrates > 90% of the frame's spectral
        // energy in the interferer's subband at 10 dB, which is what makes
        // the first observation an unambiguous sensing cue.
        let bits = vec![0u8; self.cfg.samples_per_step / self.cfg.samples_per_symbol];
        let frame = self.synthesize(None, &bits);
        self.observe(&frame)
    }

    /// Allocate `action` to the WN for one step. Synthesizes the frame with
    /// the interferer's *current* channel, measures `reward = 1 − BER` on the
    /// allocated channel, returns the frame's spectrum, and only then lets
    /// the interferer advance per the scenario rule.
    pub fn step(&mut self, action: ChannelIndex) -> Result<StepOutcome, EnvError> {
        if action.0 >= self.cfg.num_channels {
            return Err(EnvError::InvalidChannel { value: action.0 });
        }
        if self.step_in_episode >= self.cfg.steps_per_episode {
            return Err(EnvError::EpisodeFinished);
        }
        let bits = self.draw_bits();
        let frame = self.synthesize(Some(action), &bits);
        let rx = matched_filter_demodulate(&frame, action);
        let ber = bit_error_rate(&bits, &rx).expect("tx/rx lengths match by construction");
        let reward = reward_from_ber(ber).expect("ber is a fraction");
        let next_observation = self.observe(&frame);

        self.step_in_episode += 1;
        let terminal = self.step_in_episode == self.cfg.steps_per_episode;
        self.interferer_channel = interferer_next_channel(
            self.cfg.scenario,
            self.interferer_channel,
            false,
            &mut self.interferer_rng,
        );
        Ok(StepOutcome {
            reward,
            next_observation,
            terminal,
        })
    }
}

// ---------------------------------------------------------------------------
