//! Step-counter pedestrian dead reckoning: turns raw acceleration and
//! compass streams into an odometry trajectory and relative-motion edges.
//!
//! Step counting follows the normalized auto-correlation scheme: lock the
//! lag that maximizes the correlation of two adjacent windows, then advance
//! one lag per counted period while the periodicity holds, re-searching the
//! lag in a small neighborhood as cadence drifts.

use crate::geom::{normalize_angle, Pose2, Transform2};
use thiserror::Error;

/// Windows whose standard deviation falls below this are treated as
/// constant (no periodicity). Well below any real gait signal, well above
/// float dust from mean removal.
const DEGENERATE_SIGMA: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct PdrConfig {
    /// Fixed step length in meters.
    pub step_length: f64,
    /// Accelerometer sampling rate in Hz.
    pub sample_rate: f64,
    /// Inclusive lag search window `[tau_min, tau_max]` in samples.
    pub tau_window: (usize, usize),
    /// Minimum auto-correlation to accept a period; below it the counter
    /// holds until periodicity resumes.
    pub periodicity_threshold: f64,
    /// Re-search radius around the locked lag, clamped to `tau_window`.
    pub research_radius: usize,
}

impl Default for PdrConfig {
    fn default() -> Self {
        Self {
            step_length: 0.7,
            sample_rate: 50.0,
            tau_window: (40, 100),
            periodicity_threshold: 0.7,
            research_radius: 10,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PdrError {
    #[error("dead reckoning requires at least one compass sample")]
    EmptyCompass,
    #[error("step counter must be monotone, decreased at t={0}")]
    NonMonotoneCounter(f64),
    #[error("tau window must satisfy 2 <= tau_min < tau_max, got [{0}, {1}]")]
    BadTauWindow(usize, usize),
}

/// Normalized auto-correlation of `accel[t .. t+tau)` against
/// `accel[t+tau .. t+2*tau)`: mean-removed products divided by
/// `tau * sigma_t * sigma_{t+tau}`.
///
/// Returns `None` when either window is (numerically) constant, which the
/// caller treats as "no periodicity". Requires `t + 2*tau <= accel.len()`.
pub fn autocorrelation(accel: &[f64], t: usize, tau: usize) -> Option<f64> {
    assert!(tau >= 1 && t + 2 * tau <= accel.len(), "window out of bounds");
    let a = &accel[t..t + tau];
    let b = &accel[t + tau..t + 2 * tau];
    let n = tau as f64;
    let mu_a = a.iter().sum::<f64>() / n;
    let mu_b = b.iter().sum::<f64>() / n;
    let var_a = a.iter().map(|v| (v - mu_a) * (v - mu_a)).sum::<f64>() / n;
    let var_b = b.iter().map(|v| (v - mu_b) * (v - mu_b)).sum::<f64>() / n;
    let sigma_a = var_a.sqrt();
    let sigma_b = var_b.sqrt();
    if sigma_a < DEGENERATE_SIGMA || sigma_b < DEGENERATE_SIGMA {
        return None;
    }
    let cross: f64 = a.iter().zip(b).map(|(x, y)| (x - mu_a) * (y - mu_b)).sum();
    Some(cross / (n * sigma_a * sigma_b))
}

/// Counts gait periods in an acceleration stream and emits the cumulative
/// step counter at every sample timestamp.
///
/// Traces shorter than `2 * tau_max` samples yield an empty output: no lag
/// lock is possible.
pub fn count_steps(accel: &[(f64, f64)], cfg: &PdrConfig) -> Vec<(f64, u32)> {
    let (tau_min, tau_max) = cfg.tau_window;
    assert!(tau_min >= 2 && tau_max > tau_min, "bad tau window");
    let n = accel.len();
    if n < 2 * tau_max {
        return Vec::new();
    }
    let values: Vec<f64> = accel.iter().map(|(_, a)| *a).collect();

    // Sample indices at which a period completes.
    let mut events: Vec<usize> = Vec::new();
    let mut tau_opt: Option<usize> = None;
    let mut t = 0usize;
    while t + 2 * tau_min <= n {
        let (lo, hi) = match tau_opt {
            None => (tau_min, tau_max),
            Some(tau) => (tau.saturating_sub(cfg.research_radius).max(tau_min), (tau + cfg.research_radius).min(tau_max)),
        };
        let mut best: Option<(usize, f64)> = None;
        for tau in lo..=hi {
            if t + 2 * tau > n {
                break;
            }
            if let Some(r) = autocorrelation(&values, t, tau) {
                if best.map_or(true, |(_, br)| r > br) {
                    best = Some((tau, r));
                }
            }
        }
        match best {
            Some((tau, r)) if r >= cfg.periodicity_threshold => {
                tau_opt = Some(tau);
                t += tau;
                events.push(t.min(n - 1));
            }
            // Hold position until periodicity resumes.
            _ => t += 1,
        }
    }

    let mut out = Vec::with_capacity(n);
    let mut count = 0u32;
    let mut next_event = 0usize;
    for (i, &(ts, _)) in accel.iter().enumerate() {
        while next_event < events.len() && events[next_event] <= i {
            count += 1;
            next_event += 1;
        }
        out.push((ts, count));
    }
    out
}

/// How the initial heading of a dead-reckoned track is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadingInit {
    /// Step-counter mode: the first compass reading.
    FirstCompass,
    /// Externally supplied odometry mode: zero.
    Zero,
}

/// Integrates step counts and compass headings into a trajectory starting
/// at the origin: each count increment moves `step_length` along the
/// heading of the previous pose.
///
/// Emits the origin pose plus one pose per step event, so the output length
/// is the number of count increases plus one.
pub fn dead_reckon(
    steps: &[(f64, u32)],
    compass: &[(f64, f64)],
    cfg: &PdrConfig,
    init: HeadingInit,
) -> Result<Vec<(f64, Pose2)>, PdrError> {
    if compass.is_empty() {
        return Err(PdrError::EmptyCompass);
    }
    // Zero-order hold: the latest compass sample at or before t. Compass
    // wrap-around makes linear interpolation unsafe.
    let heading_at = |t: f64| -> f64 {
        let idx = compass.partition_point(|(ts, _)| *ts <= t);
        if idx == 0 {
            compass[0].1
        } else {
            compass[idx - 1].1
        }
    };

    let theta0 = match init {
        HeadingInit::FirstCompass => normalize_angle(compass[0].1),
        HeadingInit::Zero => 0.0,
    };
    let t0 = steps.first().map(|(t, _)| *t).unwrap_or(compass[0].0);
    let mut out = vec![(t0, Pose2::new(0.0, 0.0, theta0))];

    let mut prev_count = steps.first().map(|(_, c)| *c).unwrap_or(0);
    for &(t, count) in steps {
        if count < prev_count {
            return Err(PdrError::NonMonotoneCounter(t));
        }
        let delta = count - prev_count;
        prev_count = count;
        if delta == 0 {
            continue;
        }
        let prev = out.last().unwrap().1;
        let advance = cfg.step_length * delta as f64;
        let pose = Pose2::new(
            prev.x + advance * prev.theta.cos(),
            prev.y + advance * prev.theta.sin(),
            heading_at(t),
        );
        out.push((t, pose));
    }
    Ok(out)
}

/// One relative-motion edge per consecutive pose pair, transform expressed
/// in the earlier pose's frame.
pub fn odometry_edges(poses: &[Pose2]) -> Vec<((usize, usize), Transform2)> {
    poses
        .windows(2)
        .enumerate()
        .map(|(i, w)| ((i, i + 1), w[0].between(&w[1])))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn sine_wave(freq_hz: f64, rate_hz: f64, duration_s: f64) -> Vec<(f64, f64)> {
        let n = (duration_s * rate_hz) as usize;
        (0..n)
            .map(|i| {
                let t = i as f64 / rate_hz;
                (t, 9.81 + 2.0 * (2.0 * PI * freq_hz * t).sin())
            })
            .collect()
    }

    #[test]
    fn autocorrelation_peaks_at_the_sine_period() {
        // Closed-form oracle: a sine correlated with itself one full period
        // later gives +1, half a period later gives -1.
        let wave = sine_wave(1.0, 50.0, 10.0);
        let values: Vec<f64> = wave.iter().map(|(_, a)| *a).collect();
        let period = 50; // 1 Hz at 50 Hz, so the half period is integral too
        let full = autocorrelation(&values, 0, period).unwrap();
        assert!(full >= 0.99, "full-period correlation {full}");
        let anti = autocorrelation(&values, 0, period / 2).unwrap();
        assert!(anti <= -0.99, "half-period correlation {anti}");
    }

    #[test]
    fn autocorrelation_of_white_noise_is_small() {
        // Statistical oracle: for i.i.d. noise the expected correlation of
        // two length-1000 windows is 0 with std ~ 1/sqrt(1000).
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let noise: Vec<f64> = (0..2100).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = autocorrelation(&noise, 0, 1000).unwrap();
        assert!(r.abs() < 0.2, "white noise correlation {r}");
    }

    #[test]
    fn autocorrelation_is_symmetric_in_the_two_windows() {
        let wave = sine_wave(1.3, 50.0, 8.0);
        let values: Vec<f64> = wave.iter().map(|(_, a)| *a).collect();
        let tau = 31;
        let fwd = autocorrelation(&values, 10, tau).unwrap();
        // Swapping the windows means correlating the reversed pair; with the
        // formula's symmetry this equals correlating from the same start
        // with the windows exchanged.
        let swapped: Vec<f64> = values[10 + tau..10 + 2 * tau]
            .iter()
            .chain(values[10..10 + tau].iter())
            .copied()
            .collect();
        let back = autocorrelation(&swapped, 0, tau).unwrap();
        assert!((fwd - back).abs() < 1e-12);
    }

    #[test]
    fn degenerate_window_reports_none() {
        let flat = vec![9.81; 300];
        assert_eq!(autocorrelation(&flat, 0, 50), None);
    }

    #[test]
    fn counts_a_known_frequency_gait() {
        // Known-frequency oracle: 30 s of a 2 Hz sinusoid carries 60
        // periods; the window must bracket the 25-sample period.
        let cfg = PdrConfig { tau_window: (15, 35), ..Default::default() };
        let wave = sine_wave(2.0, 50.0, 30.0);
        let counts = count_steps(&wave, &cfg);
        let total = counts.last().unwrap().1 as i64;
        assert!((total - 60).abs() <= 2, "expected 60 +/- 2 steps, got {total}");
        // Counter is non-decreasing.
        assert!(counts.windows(2).all(|w| w[1].1 >= w[0].1));
    }

    #[test]
    fn constant_signal_counts_nothing() {
        let cfg = PdrConfig { tau_window: (15, 35), ..Default::default() };
        let flat: Vec<(f64, f64)> = (0..1500).map(|i| (i as f64 / 50.0, 9.81)).collect();
        let counts = count_steps(&flat, &cfg);
        assert_eq!(counts.last().unwrap().1, 0);
    }

    #[test]
    fn short_trace_yields_empty_output() {
        let cfg = PdrConfig::default();
        let wave = sine_wave(2.0, 50.0, 3.0); // 150 samples < 2 * tau_max
        assert!(count_steps(&wave, &cfg).is_empty());
    }

    #[test]
    fn standstill_gap_splits_the_count() {
        // Piecewise oracle: 10 s walk + 10 s standstill + 10 s walk at 2 Hz
        // gives about 40 periods total.
        let cfg = PdrConfig { tau_window: (15, 35), ..Default::default() };
        let rate = 50.0;
        let mut signal = Vec::new();
        for i in 0..1500usize {
            let t = i as f64 / rate;
            let moving = t < 10.0 || t >= 20.0;
            let a = if moving { 9.81 + 2.0 * (2.0 * PI * 2.0 * t).sin() } else { 9.81 };
            signal.push((t, a));
        }
        let counts = count_steps(&signal, &cfg);
        let total = counts.last().unwrap().1 as i64;
        assert!((total - 40).abs() <= 3, "expected 40 +/- 3 steps, got {total}");
    }

    #[test]
    fn dead_reckon_straight_line() {
        let cfg = PdrConfig::default();
        let steps: Vec<(f64, u32)> = (0..=10).map(|i| (i as f64, i as u32)).collect();
        let compass = vec![(0.0, 0.0)];
        let poses = dead_reckon(&steps, &compass, &cfg, HeadingInit::FirstCompass).unwrap();
        let last = poses.last().unwrap().1;
        assert!((last.x - 7.0).abs() < 1e-12 && last.y.abs() < 1e-12 && last.theta.abs() < 1e-12);
        assert_eq!(poses.len(), 11); // 10 step events + origin
    }

    #[test]
    fn dead_reckon_right_angle_path() {
        let cfg = PdrConfig::default();
        let steps: Vec<(f64, u32)> = (0..=20).map(|i| (i as f64, i as u32)).collect();
        // Heading flips to pi/2 exactly at the 10th step event.
        let compass = vec![(0.0, 0.0), (10.0, PI / 2.0)];
        let poses = dead_reckon(&steps, &compass, &cfg, HeadingInit::FirstCompass).unwrap();
        let last = poses.last().unwrap().1;
        assert!((last.x - 7.0).abs() < 1e-9, "x={}", last.x);
        assert!((last.y - 7.0).abs() < 1e-9, "y={}", last.y);
        assert!((last.theta - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn dead_reckon_matches_cumulative_sum_oracle() {
        let cfg = PdrConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let headings: Vec<(f64, f64)> = (0..50).map(|i| (i as f64, rng.gen_range(-PI..PI))).collect();
        let steps: Vec<(f64, u32)> = (0..50).map(|i| (i as f64 + 0.5, i as u32)).collect();
        let poses = dead_reckon(&steps, &headings, &cfg, HeadingInit::FirstCompass).unwrap();

        // Direct summation oracle over the same zero-order-held headings.
        let (mut x, mut y) = (0.0f64, 0.0f64);
        let mut theta = headings[0].1;
        for &(t, _) in &steps[1..] {
            x += cfg.step_length * theta.cos();
            y += cfg.step_length * theta.sin();
            let idx = headings.partition_point(|(ts, _)| *ts <= t);
            theta = headings[idx - 1].1;
        }
        let last = poses.last().unwrap().1;
        assert!((last.x - x).abs() < 1e-9 && (last.y - y).abs() < 1e-9);

        // Path length is step_length * total steps.
        let path: f64 = poses.windows(2).map(|w| w[0].1.distance(&w[1].1)).sum();
        assert!((path - cfg.step_length * 49.0).abs() < 1e-9);
    }

    #[test]
    fn dead_reckon_rejects_bad_input() {
        let cfg = PdrConfig::default();
        assert_eq!(
            dead_reckon(&[(0.0, 0)], &[], &cfg, HeadingInit::Zero),
            Err(PdrError::EmptyCompass)
        );
        let steps = vec![(0.0, 5), (1.0, 3)];
        assert!(matches!(
            dead_reckon(&steps, &[(0.0, 0.0)], &cfg, HeadingInit::Zero),
            Err(PdrError::NonMonotoneCounter(_))
        ));
    }

    #[test]
    fn odometry_edges_basics() {
        let poses = vec![Pose2::origin(), Pose2::new(1.0, 0.0, 0.0)];
        let edges = odometry_edges(&poses);
        assert_eq!(edges.len(), 1);
        let t = edges[0].1;
        assert!((t.dx - 1.0).abs() < 1e-12 && t.dy.abs() < 1e-12 && t.dtheta.abs() < 1e-12);

        let poses = vec![Pose2::new(0.0, 0.0, PI / 2.0), Pose2::new(0.0, 1.0, PI / 2.0)];
        let t = odometry_edges(&poses)[0].1;
        assert!((t.dx - 1.0).abs() < 1e-12 && t.dy.abs() < 1e-12);
    }

    #[test]
    fn odometry_edges_compose_back_to_the_last_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut poses = vec![Pose2::origin()];
        for _ in 0..99 {
            let prev = *poses.last().unwrap();
            poses.push(Pose2::new(
                prev.x + rng.gen_range(-1.0..1.0),
                prev.y + rng.gen_range(-1.0..1.0),
                prev.theta + rng.gen_range(-0.5..0.5),
            ));
        }
        let mut cur = poses[0];
        for (_, t) in odometry_edges(&poses) {
            cur = cur.apply(&t);
        }
        let last = poses.last().unwrap();
        assert!((cur.x - last.x).abs() < 1e-9);
        assert!((cur.y - last.y).abs() < 1e-9);
        assert!(normalize_angle(cur.theta - last.theta).abs() < 1e-9);
    }
}
