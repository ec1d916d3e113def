//! Learning-curve metrics: operational-phase statistics, percentile bands,
//! and the exponential fit of the training curve with its 10%→90% rise time.
//!
//! Everything here operates on plain reward values so it can run over a
//! freshly produced record matrix or one re-read from disk and yield
//! bit-identical results.
//!
//! # Example
//!
//! ```
//! use coexsim::metrics::fit_exponential;
//!
//! // A curve generated exactly from R(e) = 19.6 − 6·exp(−e/14).
//! let curve: Vec<f64> = (1..=100)
//!     .map(|e| 19.6 - 6.0 * (-(e as f64) / 14.0).exp())
//!     .collect();
//! let fit = fit_exponential(&curve).unwrap();
//! assert!((fit.tau - 14.0).abs() / 14.0 < 0.01);
//! assert!((fit.rise_time - 14.0 * 9f64.ln()).abs() < 0.5);
//! ```

use thiserror::Error;

// ---------------------------------------------------------------------------
// errors

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("need at least {need} data points, got {got}")]
    TooFewPoints { got: usize, need: usize },
    #[error("probability {0} is outside [0, 1]")]
    BadProbability(f64),
    #[error("input contains a non-finite value")]
    NonFinite,
}

// ---------------------------------------------------------------------------
// basic statistics

pub fn mean(xs: &[f64]) -> f64 {
    debug_assert!(!xs.is_empty());
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation (divisor n): the repetitions are the whole
/// population of the experiment, not a sample from a larger one.
pub fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Empirical percentile with linear interpolation between order statistics:
/// for `n` sorted values the quantile at probability `p` sits at fractional
/// rank `h = (n−1)·p`, interpolated between `x[⌊h⌋]` and `x[⌊h⌋+1]`.
pub fn percentile(values: &[f64], p: f64) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::TooFewPoints { got: 0, need: 1 });
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(MetricsError::BadProbability(p));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("values are finite"));
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if frac == 0.0 {
        return Ok(sorted[lo]);
    }
    Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
}

// ---------------------------------------------------------------------------
// per-episode bands

/// One episode's spread across repetitions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandPoint {
    pub lo: f64,
    pub mean: f64,
    pub hi: f64,
}

/// Per-episode percentile band across repetitions. `per_episode[e]` holds one
/// value per repetition; the result carries, for each episode, the `lo` and
/// `hi` percentiles and the mean.
pub fn percentile_band(
    per_episode: &[Vec<f64>],
    lo: f64,
    hi: f64,
) -> Result<Vec<BandPoint>, MetricsError> {
    per_episode
        .iter()
        .map(|reps| {
            if reps.len() < 2 {
                return Err(MetricsError::TooFewPoints {
                    got: reps.len(),
                    need: 2,
                });
            }
            Ok(BandPoint {
                lo: percentile(reps, lo)?,
                mean: mean(reps),
                hi: percentile(reps, hi)?,
            })
        })
        .collect()
}

/// Cross-repetition mean curve: `matrix[rep][episode]` → per-episode mean.
/// All rows must have equal length.
pub fn cross_repetition_mean(matrix: &[Vec<f64>]) -> Vec<f64> {
    debug_assert!(!matrix.is_empty());
    let episodes = matrix[0].len();
    debug_assert!(matrix.iter().all(|row| row.len() == episodes));
    (0..episodes)
        .map(|e| matrix.iter().map(|row| row[e]).sum::<f64>() / matrix.len() as f64)
        .collect()
}

// ---------------------------------------------------------------------------
// exponential fit

/// Fitted training curve `R(e) = a − b·exp(−e/τ)` and its rise time.
#[derive(Debug, Clone, Copy)]
pub struct FitResult {
    /// Asymptotic reward.
    pub a: f64,
    /// Depth of the initial dip below the asymptote.
    pub b: f64,
    /// Time constant, in episodes.
    pub tau: f64,
    /// 10%→90% rise time of the fitted exponential, `τ·ln 9`.
    pub rise_time: f64,
    /// Sum of squared residuals at the optimum.
    pub sse: f64,
    /// Set when the curve carries no exponential rise to speak of (`b ≈ 0`,
    /// e.g. a flat baseline); `tau` and `rise_time` are then reported but
    /// carry no information.
    pub degenerate: bool,
}

const TAU_MIN: f64 = 0.5;
const TAU_MAX: f64 = 500.0;
const GOLDEN_ITERATIONS: usize = 200;

/// For a fixed τ, solve the linear least-squares subproblem for (a, b) and
/// return (a, b, sse). The model is linear in (a, b): with u(e) = exp(−e/τ),
/// R = a − b·u, so the 2×2 normal equations close over Σu, Σu², Σy, Σyu.
fn linear_subsolve(curve: &[f64], tau: f64) -> (f64, f64, f64) {
    let n = curve.len() as f64;
    let mut su = 0.0;
    let mut suu = 0.0;
    let mut sy = 0.0;
    let mut syu = 0.0;
    for (i, &y) in curve.iter().enumerate() {
        let e = (i + 1) as f64; // episodes are 1-based
        let u = (-e / tau).exp();
        su += u;
        suu += u * u;
        sy += y;
        syu += y * u;
    }
    // [ n   −su  ] [a]   [sy ]
    // [ su  −suu ] [b] = [syu]
    let det = -n * suu + su * su;
    let (a, b) = if det.abs() < 1e-12 * n.max(suu) {
        // Columns collinear (τ at an extreme); fall back to the flat fit.
        (sy / n, 0.0)
    } else {
        ((-sy * suu + su * syu) / det, (-su * sy + n * syu) / det)
    };
    let mut sse = 0.0;
    for (i, &y) in curve.iter().enumerate() {
        let e = (i + 1) as f64;
        let r = y - (a - b * (-e / tau).exp());
        sse += r * r;
    }
    (a, b, sse)
}

/// Least-squares fit of `R(e) = a − b·exp(−e/τ)` to a per-episode mean curve
/// (episode numbers 1..=len). Nonlinear in τ only, so the fit runs a
/// golden-section search on τ with an exact linear sub-solve for (a, b) at
/// each probe — no starting guess, no divergence.
pub fn fit_exponential(curve: &[f64]) -> Result<FitResult, MetricsError> {
    if curve.len() < 10 {
        return Err(MetricsError::TooFewPoints {
            got: curve.len(),
            need: 10,
        });
    }
    if curve.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (TAU_MIN, TAU_MAX);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = linear_subsolve(curve, x1).2;
    let mut f2 = linear_subsolve(curve, x2).2;
    for _ in 0..GOLDEN_ITERATIONS {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = linear_subsolve(curve, x1).2;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = linear_subsolve(curve, x2).2;
        }
    }
    let tau = 0.5 * (lo + hi);
    let (a, b, sse) = linear_subsolve(curve, tau);

    // A curve with no rise fits with b ≈ 0 at an arbitrary τ; flag it so the
    // reported rise time is not mistaken for a measurement.
    let scale = curve
        .iter()
        .fold(1.0f64, |acc, &y| acc.max(y.abs()));
    let degenerate = b.abs() <= 1e-6 * scale;

    Ok(FitResult {
        a,
        b,
        tau,
        rise_time: tau * 9f64.ln(),
        sse,
        degenerate,
    })
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    // -- percentiles ----------------------------------------------------------

    #[test]
    fn percentile_interpolates_order_statistics() {
        // Worked example: n = 15, h = 14·p. p = 0.1 → h = 1.4 →
        // x[1] + 0.4·(x[2]−x[1]) = 2 + 0.4 = 2.4; p = 0.9 symmetric → 13.6.
        let values: Vec<f64> = (1..=15).map(|v| v as f64).collect();
        assert!((percentile(&values, 0.10).unwrap() - 2.4).abs() < 1e-12);
        assert!((percentile(&values, 0.90).unwrap() - 13.6).abs() < 1e-12);
        assert_eq!(percentile(&values, 0.5).unwrap(), 8.0);
    }

    #[test]
    fn percentile_handles_endpoints_and_unsorted_input() {
        let values = [3.0, 1.0, 2.0, 5.0, 4.0];
        assert_eq!(percentile(&values, 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&values, 1.0).unwrap(), 5.0);
        assert_eq!(percentile(&values, 0.5).unwrap(), 3.0);
        assert_eq!(percentile(&[7.5], 0.3).unwrap(), 7.5);
    }

    #[test]
    fn percentile_rejects_bad_inputs() {
        assert!(percentile(&[], 0.5).is_err());
        assert!(percentile(&[1.0], 1.5).is_err());
        assert!(percentile(&[1.0, f64::NAN], 0.5).is_err());
    }

    // -- mean / std -------------------------------------------------------------

    #[test]
    fn mean_and_std_match_hand_computation() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        // Population variance: ((1.5)² + (0.5)² + (0.5)² + (1.5)²)/4 = 1.25.
        assert!((population_std(&xs) - 1.25f64.sqrt()).abs() < 1e-15);
        assert_eq!(population_std(&[20.0; 8]), 0.0);
    }

    // -- bands -------------------------------------------------------------------

    #[test]
    fn identical_repetitions_collapse_the_band() {
        let per_episode = vec![vec![17.0; 15], vec![4.0; 15]];
        let band = percentile_band(&per_episode, 0.1, 0.9).unwrap();
        assert_eq!(band[0], BandPoint { lo: 17.0, mean: 17.0, hi: 17.0 });
        assert_eq!(band[1], BandPoint { lo: 4.0, mean: 4.0, hi: 4.0 });
    }

    #[test]
    fn band_ordering_holds_on_random_data() {
        let mut rng = substream(11, "test.band", 0);
        let per_episode: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..15).map(|_| rng.random_range(0.0..20.0)).collect())
            .collect();
        for p in percentile_band(&per_episode, 0.1, 0.9).unwrap() {
            assert!(p.lo <= p.mean && p.mean <= p.hi, "{p:?}");
        }
    }

    #[test]
    fn band_needs_two_repetitions() {
        assert!(percentile_band(&[vec![1.0]], 0.1, 0.9).is_err());
    }

    #[test]
    fn cross_repetition_mean_averages_columns() {
        let matrix = vec![vec![1.0, 10.0], vec![3.0, 30.0]];
        assert_eq!(cross_repetition_mean(&matrix), vec![2.0, 20.0]);
    }

    // -- exponential fit ------------------------------------------------------------

    fn synthetic_curve(a: f64, b: f64, tau: f64, n: usize) -> Vec<f64> {
        (1..=n)
            .map(|e| a - b * (-(e as f64) / tau).exp())
            .collect()
    }

    #[test]
    fn fit_recovers_exact_synthetic_parameters() {
        let fit = fit_exponential(&synthetic_curve(19.6, 6.0, 14.0, 100)).unwrap();
        assert!((fit.a - 19.6).abs() / 19.6 < 0.01, "a = {}", fit.a);
        assert!((fit.b - 6.0).abs() / 6.0 < 0.01, "b = {}", fit.b);
        assert!((fit.tau - 14.0).abs() / 14.0 < 0.01, "tau = {}", fit.tau);
        // 14·ln 9 = 30.77…, reported as "about 30.8 episodes".
        assert!((fit.rise_time - 30.8).abs() < 0.1, "rise = {}", fit.rise_time);
        assert!(!fit.degenerate);
        assert!(fit.sse < 1e-12, "sse = {}", fit.sse);
    }

    #[test]
    fn fit_survives_observation_noise() {
        let mut rng = substream(12, "test.fit", 0);
        let mut curve = synthetic_curve(19.0, 5.0, 20.0, 100);
        for y in &mut curve {
            *y += rng.random_range(-0.15..0.15);
        }
        let fit = fit_exponential(&curve).unwrap();
        assert!((fit.a - 19.0).abs() < 0.2, "a = {}", fit.a);
        assert!((fit.tau - 20.0).abs() / 20.0 < 0.15, "tau = {}", fit.tau);
        assert!(!fit.degenerate);
    }

    #[test]
    fn constant_curve_is_flagged_degenerate() {
        let fit = fit_exponential(&vec![15.0; 100]).unwrap();
        assert!(fit.degenerate);
        assert!(fit.b.abs() < 1e-6, "b = {}", fit.b);
        assert!((fit.a - 15.0).abs() < 1e-9, "a = {}", fit.a);
        assert!(fit.rise_time.is_finite());
    }

    #[test]
    fn fit_requires_ten_points() {
        assert!(matches!(
            fit_exponential(&[1.0; 9]),
            Err(MetricsError::TooFewPoints { got: 9, need: 10 })
        ));
        assert!(fit_exponential(&[1.0; 10]).is_ok());
    }

    #[test]
    fn golden_section_lands_on_the_sse_minimum() {
        // The returned τ beats a dense grid of alternatives.
        let mut rng = substream(13, "test.fit", 1);
        let mut curve = synthetic_curve(18.0, 4.0, 9.0, 100);
        for y in &mut curve {
            *y += rng.random_range(-0.3..0.3);
        }
        let fit = fit_exponential(&curve).unwrap();
        for i in 1..=999 {
            let tau = TAU_MIN + (TAU_MAX - TAU_MIN) * i as f64 / 1000.0;
            let (_, _, sse) = linear_subsolve(&curve, tau);
            assert!(
                fit.sse <= sse + 1e-9,
                "grid tau {tau} has sse {sse} < fit sse {}",
                fit.sse
            );
        }
    }

    #[test]
    fn fit_rejects_non_finite_curves() {
        let mut curve = synthetic_curve(19.6, 6.0, 14.0, 50);
        curve[10] = f64::NAN;
        assert!(matches!(
            fit_exponential(&curve),
            Err(MetricsError::NonFinite)
        ));
    }
}
