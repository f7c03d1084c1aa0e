//! RSS thresholding, fingerprint cosine similarity, and loop-closure
//! candidate generation.
//!
//! Similarity is the cosine of the shifted RSS vectors: products are summed
//! over the APs common to both scans, while each denominator norm runs over
//! that scan's full reading set. Raw dBm values are negative, which would
//! saturate the cosine near 1 for any overlapping pair, so readings are
//! shifted by a configurable offset (and clamped at zero) first.

use crate::geom::normalize_angle;
use crate::types::{Fingerprint, NodeId};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimilarityConfig {
    /// Readings below this dBm value are filtered out before similarity.
    pub rss_threshold: i32,
    /// Minimum similarity to claim a loop-closure candidate.
    pub sim_threshold: f64,
    /// Candidate gate: maximum odometric distance between the two poses.
    pub gate_distance: f64,
    /// Candidate gate: maximum absolute heading difference in radians.
    pub gate_orientation: f64,
    /// Shift added to RSS before the cosine; shifted values clamp at 0.
    pub rss_offset: f64,
    /// Same-track pairs closer than this in seconds are skipped: those
    /// nodes are already bound by odometry edges.
    pub min_same_track_separation: f64,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self {
            rss_threshold: -70,
            sim_threshold: 0.7,
            gate_distance: 50.0,
            gate_orientation: 0.3,
            rss_offset: 100.0,
            min_same_track_separation: 60.0,
        }
    }
}

/// A gated fingerprint pair whose similarity cleared the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopCandidate {
    pub a: NodeId,
    pub b: NodeId,
    pub similarity: f64,
}

/// Keeps exactly the readings at or above `threshold` dBm; pose and node
/// are unchanged. Idempotent, and raising the threshold never adds
/// readings.
pub fn apply_rss_threshold(f: &Fingerprint, threshold: i32) -> Fingerprint {
    Fingerprint {
        node: f.node,
        t: f.t,
        pose: f.pose,
        readings: f.readings.iter().filter(|(_, &rss)| rss >= threshold).map(|(m, r)| (*m, *r)).collect(),
    }
}

fn shift(rss: i32, offset: f64) -> f64 {
    (rss as f64 + offset).max(0.0)
}

/// Cosine similarity plus the number of readings visited, the unit the
/// loop-detection cost proxy counts in.
pub(crate) fn similarity_counted(fa: &Fingerprint, fb: &Fingerprint, offset: f64) -> (f64, u64) {
    let mut ops = 0u64;
    let mut dot = 0.0f64;
    let mut norm_a_sq = 0.0f64;
    let mut norm_b_sq = 0.0f64;

    // Merge-join over the canonically ordered reading maps.
    let mut ia = fa.readings.iter().peekable();
    let mut ib = fb.readings.iter().peekable();
    loop {
        match (ia.peek(), ib.peek()) {
            (Some((ma, &ra)), Some((mb, &rb))) => {
                if ma < mb {
                    let v = shift(ra, offset);
                    norm_a_sq += v * v;
                    ops += 1;
                    ia.next();
                } else if mb < ma {
                    let v = shift(rb, offset);
                    norm_b_sq += v * v;
                    ops += 1;
                    ib.next();
                } else {
                    let va = shift(ra, offset);
                    let vb = shift(rb, offset);
                    dot += va * vb;
                    norm_a_sq += va * va;
                    norm_b_sq += vb * vb;
                    ops += 2;
                    ia.next();
                    ib.next();
                }
            }
            (Some((_, &ra)), None) => {
                let v = shift(ra, offset);
                norm_a_sq += v * v;
                ops += 1;
                ia.next();
            }
            (None, Some((_, &rb))) => {
                let v = shift(rb, offset);
                norm_b_sq += v * v;
                ops += 1;
                ib.next();
            }
            (None, None) => break,
        }
    }

    if dot == 0.0 || norm_a_sq == 0.0 || norm_b_sq == 0.0 {
        return (0.0, ops);
    }
    (dot / (norm_a_sq * norm_b_sq).sqrt(), ops)
}

/// Cosine similarity of two (already thresholded) fingerprints in `[0, 1]`.
/// Degenerate inputs (empty AP intersection, zero norm) return 0.
pub fn similarity(fa: &Fingerprint, fb: &Fingerprint, offset: f64) -> f64 {
    similarity_counted(fa, fb, offset).0
}

/// Outcome of a candidate search, with the bookkeeping the sweeps report.
#[derive(Debug, Clone, Default)]
pub struct LoopDetection {
    /// Candidates sorted by `(a, b)`.
    pub candidates: Vec<LoopCandidate>,
    /// Pairs that passed the distance/orientation gate.
    pub gated_pairs: u64,
    /// Total readings visited by similarity evaluations (cost proxy).
    pub similarity_ops: u64,
}

/// Scans every unordered fingerprint pair: gates on odometric distance and
/// heading difference, evaluates similarity only for gated pairs, and keeps
/// pairs at or above the similarity threshold.
///
/// Fingerprints must already be thresholded and their poses expressed in
/// the common merged frame. Output order is deterministic.
pub fn find_loop_candidates(fps: &[Fingerprint], cfg: &SimilarityConfig) -> LoopDetection {
    let mut sorted: Vec<&Fingerprint> = fps.iter().collect();
    sorted.sort_by_key(|f| f.node);

    let mut det = LoopDetection::default();
    for i in 0..sorted.len() {
        for j in i + 1..sorted.len() {
            let (fa, fb) = (sorted[i], sorted[j]);
            if fa.node.user == fb.node.user && (fb.t - fa.t).abs() < cfg.min_same_track_separation {
                continue;
            }
            if fa.pose.distance(&fb.pose) >= cfg.gate_distance {
                continue;
            }
            if normalize_angle(fa.pose.theta - fb.pose.theta).abs() >= cfg.gate_orientation {
                continue;
            }
            det.gated_pairs += 1;
            let (s, ops) = similarity_counted(fa, fb, cfg.rss_offset);
            det.similarity_ops += ops;
            if s >= cfg.sim_threshold {
                det.candidates.push(LoopCandidate { a: fa.node, b: fb.node, similarity: s });
            }
        }
    }
    det
}
