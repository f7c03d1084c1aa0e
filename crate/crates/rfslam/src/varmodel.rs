//! Nonparametric similarity-to-distance-variance model trained by binning.
//!
//! Training pairs come from same-track fingerprint pairs whose traveled
//! path stays short enough for odometry to be trusted. Each bin stores the
//! mean of squared distances of its samples; note this is variance about
//! zero, not sample variance about the mean, which is exactly what the
//! loop-edge covariance needs (expected squared offset of a claimed
//! zero-distance loop).

use crate::fingerprint::{apply_rss_threshold, similarity, SimilarityConfig};
use crate::types::Trace;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    /// Fingerprint cosine similarity in [0, 1].
    pub similarity: f64,
    /// Euclidean odometric distance between the recording poses, meters.
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub count: u64,
    /// Mean squared distance in m^2; `None` while the bin is empty.
    pub variance: Option<f64>,
}

/// Binned lookup from similarity to distance variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceModel {
    pub bin_width: f64,
    /// `ceil(1 / bin_width)` bins; bin `i` covers `[i*w, (i+1)*w)`, the
    /// last bin closed at 1.0.
    pub bins: Vec<Bin>,
    /// Returned when every bin is empty, m^2.
    pub fallback_variance: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum VarModelError {
    #[error("cannot train a variance model from an empty sample list")]
    NoSamples,
    #[error("bin width must lie in (0, 1], got {0}")]
    BadBinWidth(f64),
    #[error("similarity query {0} outside [0, 1]")]
    QueryOutOfRange(f64),
}

/// Collects `(similarity, distance)` training pairs from one trace: every
/// same-track fingerprint pair whose cumulative traveled path between the
/// recordings is at most `max_travel` meters.
///
/// Fingerprints are thresholded with `cfg.rss_threshold` before comparing
/// (a no-op if the caller already did).
pub fn collect_training_pairs(trace: &Trace, cfg: &SimilarityConfig, max_travel: f64) -> Vec<TrainingSample> {
    // Cumulative path length at each odometry sample.
    let mut cum = Vec::with_capacity(trace.odometry.len());
    let mut total = 0.0;
    cum.push(0.0);
    for w in trace.odometry.windows(2) {
        total += w[0].1.distance(&w[1].1);
        cum.push(total);
    }

    let thresholded: Vec<_> = trace
        .fingerprints
        .iter()
        .map(|f| apply_rss_threshold(f, cfg.rss_threshold))
        .collect();

    let mut samples = Vec::new();
    for i in 0..thresholded.len() {
        for j in i + 1..thresholded.len() {
            let (fa, fb) = (&thresholded[i], &thresholded[j]);
            let (sa, sb) = (fa.node.step as usize, fb.node.step as usize);
            if sa >= cum.len() || sb >= cum.len() {
                continue;
            }
            if (cum[sb] - cum[sa]).abs() > max_travel {
                continue;
            }
            samples.push(TrainingSample {
                similarity: similarity(fa, fb, cfg.rss_offset),
                distance: fa.pose.distance(&fb.pose),
            });
        }
    }
    samples
}

fn bin_count(width: f64) -> usize {
    (1.0 / width).ceil() as usize
}

fn bin_index(s: f64, width: f64, bins: usize) -> usize {
    ((s / width).floor() as usize).min(bins - 1)
}

/// Bins `[0, 1]` by similarity and stores the mean squared distance per
/// non-empty bin.
pub fn train(samples: &[TrainingSample], bin_width: f64, fallback_variance: f64) -> Result<VarianceModel, VarModelError> {
    if !(bin_width > 0.0 && bin_width <= 1.0) {
        return Err(VarModelError::BadBinWidth(bin_width));
    }
    if samples.is_empty() {
        return Err(VarModelError::NoSamples);
    }
    let n = bin_count(bin_width);
    let mut sums = vec![0.0f64; n];
    let mut counts = vec![0u64; n];
    for s in samples {
        let idx = bin_index(s.similarity.clamp(0.0, 1.0), bin_width, n);
        sums[idx] += s.distance * s.distance;
        counts[idx] += 1;
    }
    let bins = sums
        .iter()
        .zip(&counts)
        .map(|(&sum, &c)| Bin { count: c, variance: if c > 0 { Some(sum / c as f64) } else { None } })
        .collect();
    Ok(VarianceModel { bin_width, bins, fallback_variance })
}

impl VarianceModel {
    /// Looks up the variance for a similarity in `[0, 1]`.
    ///
    /// An empty bin falls back to the nearest non-empty bin, ties broken
    /// toward lower similarity (the larger, more conservative variance).
    /// With every bin empty the fallback variance is returned.
    pub fn query(&self, s: f64) -> Result<f64, VarModelError> {
        if !(0.0..=1.0).contains(&s) {
            return Err(VarModelError::QueryOutOfRange(s));
        }
        let idx = bin_index(s, self.bin_width, self.bins.len());
        if let Some(v) = self.bins[idx].variance {
            return Ok(v);
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, bin) in self.bins.iter().enumerate() {
            if let Some(v) = bin.variance {
                let dist = idx.abs_diff(i);
                let better = match best {
                    None => true,
                    // Strict improvement, or same distance on the lower side.
                    Some((bd, _)) => dist < bd || (dist == bd && i < idx),
                };
                if better {
                    best = Some((dist, v));
                }
            }
        }
        Ok(best.map(|(_, v)| v).unwrap_or(self.fallback_variance))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("variance model serializes")
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(self.to_json().as_bytes())?;
        w.write_all(b"\n")
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, std::io::Error> {
        let mut buf = String::new();
        r.read_to_string(&mut buf)?;
        serde_json::from_str(&buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}
