//! Turning identification and ICP matching of track segments.
//!
//! Corners are strong indoor landmarks: a loop candidate whose endpoints
//! both sit near a detected turning is verified by registering the two
//! local track segments with point-to-point ICP. A good fit promotes the
//! candidate to a turning loop, which later receives a much tighter
//! covariance than a plain fingerprint loop.

use crate::fingerprint::LoopCandidate;
use crate::geom::{normalize_angle, Pose2, Transform2};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone)]
pub struct TurningConfig {
    /// Segmentation window in samples; even, at least 4.
    pub window: usize,
    /// Minimum heading change to flag a turning, radians.
    pub turn_threshold: f64,
    /// ICP fitness at or below this claims a turning loop, m^2.
    pub fitness_threshold: f64,
    pub icp_max_iterations: usize,
    /// Stop when the fitness improves by less than this, m^2.
    pub icp_tolerance: f64,
    /// Spatial spacing of the resampled segment polyline, meters.
    pub resample_spacing: f64,
}

impl Default for TurningConfig {
    fn default() -> Self {
        Self {
            window: 40,
            turn_threshold: std::f64::consts::FRAC_PI_3,
            fitness_threshold: 0.5,
            icp_max_iterations: 50,
            icp_tolerance: 1e-6,
            resample_spacing: 0.1,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TurningError {
    #[error("segment window [{0}, {1}] out of bounds for a trace of {2} poses")]
    WindowOutOfBounds(isize, isize, usize),
    #[error("degenerate segment: all points coincident")]
    DegenerateSegment,
    #[error("segments need at least 3 resampled points, got {0} and {1}")]
    TooFewPoints(usize, usize),
}

/// A track segment around a center pose, expressed in the center pose's
/// frame (the center maps to the origin with zero heading).
#[derive(Debug, Clone)]
pub struct Segment {
    /// Index of the center pose within its trace.
    pub center: usize,
    /// Window poses mapped into the center frame, in trace order.
    pub points: Vec<[f64; 2]>,
    /// The same polyline resampled at uniform spatial spacing; the origin
    /// is always one of the resampled points.
    pub resampled: Vec<[f64; 2]>,
}

fn circular_mean(headings: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for h in headings {
        s += h.sin();
        c += h.cos();
    }
    s.atan2(c)
}

/// Flags indices where the mean heading after the index differs from the
/// mean heading before it by more than the turn threshold, then collapses
/// consecutive flags to the index of maximal heading change.
///
/// Only heading differences matter: rotating every input heading by a
/// common constant leaves the output unchanged.
pub fn detect_turnings(poses: &[Pose2], cfg: &TurningConfig) -> Vec<usize> {
    let half = cfg.window / 2;
    if poses.len() < cfg.window + 1 {
        return Vec::new();
    }
    let changes: Vec<(usize, f64)> = (half..poses.len() - half)
        .map(|t| {
            let before = circular_mean(poses[t - half..=t].iter().map(|p| p.theta));
            let after = circular_mean(poses[t..=t + half].iter().map(|p| p.theta));
            (t, normalize_angle(after - before).abs())
        })
        .collect();

    // Non-maximum suppression over runs of consecutive flagged indices:
    // one physical corner, one landmark.
    let mut out = Vec::new();
    let mut run: Option<(usize, f64)> = None;
    let mut prev_flagged_at: Option<usize> = None;
    for (t, change) in changes {
        let flagged = change > cfg.turn_threshold;
        if flagged {
            let adjacent = prev_flagged_at.map_or(false, |p| t == p + 1);
            match (&mut run, adjacent) {
                (Some((best_t, best_c)), true) => {
                    if change > *best_c {
                        *best_t = t;
                        *best_c = change;
                    }
                }
                _ => {
                    if let Some((bt, _)) = run.take() {
                        out.push(bt);
                    }
                    run = Some((t, change));
                }
            }
            prev_flagged_at = Some(t);
        } else if let Some((bt, _)) = run.take() {
            out.push(bt);
            prev_flagged_at = None;
        } else {
            prev_flagged_at = None;
        }
    }
    if let Some((bt, _)) = run {
        out.push(bt);
    }
    out
}

/// Resamples one half of the window polyline, walking outward from the
/// origin, into `round(len / spacing)` equal arcs. Skips the origin itself.
fn resample_half(points: &[[f64; 2]], spacing: f64) -> Vec<[f64; 2]> {
    let mut hops = Vec::with_capacity(points.len().saturating_sub(1));
    let mut total = 0.0;
    for w in points.windows(2) {
        let d = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        total += d;
        hops.push(d);
    }
    if total < 1e-12 {
        return Vec::new();
    }
    let n = ((total / spacing).round() as usize).max(1);
    let step = total / n as f64;

    let mut out = Vec::with_capacity(n);
    let mut seg = 0usize;
    let mut seg_start_arc = 0.0;
    for k in 1..=n {
        let target = step * k as f64;
        while seg < hops.len() - 1 && seg_start_arc + hops[seg] < target - 1e-12 {
            seg_start_arc += hops[seg];
            seg += 1;
        }
        let local = if hops[seg] > 0.0 { ((target - seg_start_arc) / hops[seg]).clamp(0.0, 1.0) } else { 0.0 };
        let (a, b) = (points[seg], points[seg + 1]);
        out.push([a[0] + local * (b[0] - a[0]), a[1] + local * (b[1] - a[1])]);
    }
    out
}

/// Extracts the window of `window + 1` poses around `center`, maps each
/// into the center pose's frame, and resamples the polyline at uniform
/// spatial spacing.
pub fn extract_segment(poses: &[Pose2], center: usize, cfg: &TurningConfig) -> Result<Segment, TurningError> {
    let half = cfg.window / 2;
    let lo = center as isize - half as isize;
    let hi = center as isize + half as isize;
    if lo < 0 || hi >= poses.len() as isize {
        return Err(TurningError::WindowOutOfBounds(lo, hi, poses.len()));
    }
    let center_pose = poses[center];
    let to_local = |p: &Pose2| -> [f64; 2] {
        let t = center_pose.between(p);
        [t.dx, t.dy]
    };
    let points: Vec<[f64; 2]> = poses[lo as usize..=hi as usize].iter().map(to_local).collect();

    // Resample each half outward from the center so the origin is always a
    // sample point, then stitch them back in trace order.
    let backward: Vec<[f64; 2]> = points[..=half].iter().rev().copied().collect();
    let forward = &points[half..];
    let mut resampled: Vec<[f64; 2]> = resample_half(&backward, cfg.resample_spacing);
    resampled.reverse();
    resampled.push([0.0, 0.0]);
    resampled.extend(resample_half(forward, cfg.resample_spacing));

    Ok(Segment { center, points, resampled })
}

fn spread(points: &[[f64; 2]]) -> f64 {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / n;
    points.iter().map(|p| (p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sum::<f64>() / n
}

fn apply_to_point(t: &Transform2, p: [f64; 2]) -> [f64; 2] {
    let (s, c) = t.dtheta.sin_cos();
    [t.dx + c * p[0] - s * p[1], t.dy + s * p[0] + c * p[1]]
}

/// Closed-form 2D rigid alignment mapping `src` onto paired `dst` points
/// (centroid shift plus cross-covariance angle).
fn solve_rigid(src: &[[f64; 2]], dst: &[[f64; 2]]) -> Transform2 {
    let n = src.len() as f64;
    let cs = [src.iter().map(|p| p[0]).sum::<f64>() / n, src.iter().map(|p| p[1]).sum::<f64>() / n];
    let cd = [dst.iter().map(|p| p[0]).sum::<f64>() / n, dst.iter().map(|p| p[1]).sum::<f64>() / n];
    let (mut sxx, mut sxy, mut syx, mut syy) = (0.0, 0.0, 0.0, 0.0);
    for (a, b) in src.iter().zip(dst) {
        let ax = a[0] - cs[0];
        let ay = a[1] - cs[1];
        let bx = b[0] - cd[0];
        let by = b[1] - cd[1];
        sxx += ax * bx;
        sxy += ax * by;
        syx += ay * bx;
        syy += ay * by;
    }
    // atan2(0, 0) = 0 keeps the rotation unchanged for degenerate pairings.
    let theta = (sxy - syx).atan2(sxx + syy);
    let (s, c) = theta.sin_cos();
    Transform2::new(cd[0] - (c * cs[0] - s * cs[1]), cd[1] - (s * cs[0] + c * cs[1]), theta)
}

/// Point-to-point ICP between two resampled segments, starting from the
/// identity (both segments are center-relative, so identity is the natural
/// prior). Returns the transform mapping `a` onto `b` and the final fitness
/// (mean squared correspondence distance).
///
/// Fitness is non-increasing across iterations: nearest-neighbor
/// re-pairing and the closed-form alignment each minimize it in turn.
pub fn icp_match(a: &Segment, b: &Segment, cfg: &TurningConfig) -> Result<(Transform2, f64), TurningError> {
    let src = &a.resampled;
    let dst = &b.resampled;
    if src.len() < 3 || dst.len() < 3 {
        return Err(TurningError::TooFewPoints(src.len(), dst.len()));
    }
    if spread(src) < 1e-12 || spread(dst) < 1e-12 {
        return Err(TurningError::DegenerateSegment);
    }

    let nearest = |p: [f64; 2]| -> [f64; 2] {
        let mut best = dst[0];
        let mut best_d = f64::INFINITY;
        for q in dst {
            let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
            if d < best_d {
                best_d = d;
                best = *q;
            }
        }
        best
    };

    let mut transform = Transform2::identity();
    let mut fitness = f64::INFINITY;
    for _ in 0..cfg.icp_max_iterations {
        let moved: Vec<[f64; 2]> = src.iter().map(|p| apply_to_point(&transform, *p)).collect();
        let matched: Vec<[f64; 2]> = moved.iter().map(|p| nearest(*p)).collect();
        // Re-solve the absolute transform from the original points so the
        // alignment step is optimal for the current pairing.
        transform = solve_rigid(src, &matched);
        let new_fitness = src
            .iter()
            .zip(&matched)
            .map(|(p, q)| {
                let m = apply_to_point(&transform, *p);
                (m[0] - q[0]).powi(2) + (m[1] - q[1]).powi(2)
            })
            .sum::<f64>()
            / src.len() as f64;
        let done = fitness.is_finite() && (fitness - new_fitness).abs() < cfg.icp_tolerance;
        fitness = new_fitness;
        if done {
            break;
        }
    }
    Ok((transform, fitness))
}

/// Splits loop candidates into turning loops and fingerprint loops.
///
/// A candidate whose endpoints both lie within `window / 2` samples of a
/// detected turning on their respective tracks is ICP-matched; fitness at
/// or below the threshold promotes it. Everything else (including segments
/// that cannot be extracted or matched) stays a fingerprint loop. The two
/// outputs partition the input in order.
pub fn classify_loops(
    candidates: &[LoopCandidate],
    tracks: &BTreeMap<u32, Vec<Pose2>>,
    turnings: &BTreeMap<u32, Vec<usize>>,
    cfg: &TurningConfig,
) -> (Vec<LoopCandidate>, Vec<LoopCandidate>) {
    let half = cfg.window / 2;
    let near_turning = |user: u32, step: usize| -> bool {
        turnings
            .get(&user)
            .map(|list| list.iter().any(|&t| t.abs_diff(step) <= half))
            .unwrap_or(false)
    };

    let mut turning_loops = Vec::new();
    let mut fingerprint_loops = Vec::new();
    for cand in candidates {
        let (ua, sa) = (cand.a.user, cand.a.step as usize);
        let (ub, sb) = (cand.b.user, cand.b.step as usize);
        let verified = near_turning(ua, sa) && near_turning(ub, sb) && {
            match (tracks.get(&ua), tracks.get(&ub)) {
                (Some(pa), Some(pb)) => {
                    match (extract_segment(pa, sa, cfg), extract_segment(pb, sb, cfg)) {
                        (Ok(seg_a), Ok(seg_b)) => icp_match(&seg_a, &seg_b, cfg)
                            .map(|(_, fitness)| fitness <= cfg.fitness_threshold)
                            .unwrap_or(false),
                        _ => false,
                    }
                }
                _ => false,
            }
        };
        if verified {
            turning_loops.push(*cand);
        } else {
            fingerprint_loops.push(*cand);
        }
    }
    (turning_loops, fingerprint_loops)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::NodeId;
    use std::f64::consts::{FRAC_PI_2, PI};

    /// L-shaped track: `leg` samples east, then `leg` samples north, 1 m
    /// apart. The corner sits at index `leg`.
    fn l_track(leg: usize) -> Vec<Pose2> {
        let mut poses = Vec::new();
        for i in 0..=leg {
            poses.push(Pose2::new(i as f64, 0.0, 0.0));
        }
        for i in 1..=leg {
            poses.push(Pose2::new(leg as f64, i as f64, FRAC_PI_2));
        }
        poses
    }

    fn straight_track(n: usize, heading: f64) -> Vec<Pose2> {
        (0..n)
            .map(|i| Pose2::new(i as f64 * heading.cos(), i as f64 * heading.sin(), heading))
            .collect()
    }

    #[test]
    fn straight_track_has_no_turnings() {
        let cfg = TurningConfig::default();
        assert!(detect_turnings(&straight_track(120, 0.3), &cfg).is_empty());
    }

    #[test]
    fn single_corner_is_detected_once() {
        let cfg = TurningConfig::default();
        let track = l_track(60);
        let found = detect_turnings(&track, &cfg);
        assert_eq!(found.len(), 1, "expected one turning, got {found:?}");
        assert!(found[0].abs_diff(60) <= 2, "corner at 60, found {}", found[0]);
    }

    #[test]
    fn detection_only_sees_heading_differences() {
        let cfg = TurningConfig::default();
        let track = l_track(50);
        let rotated: Vec<Pose2> =
            track.iter().map(|p| Pose2::new(p.x, p.y, p.theta + 2.1)).collect();
        assert_eq!(detect_turnings(&track, &cfg), detect_turnings(&rotated, &cfg));
    }

    #[test]
    fn gradual_turns_need_a_wide_window() {
        // A 90-degree heading change smeared over 30 samples: a 10-sample
        // window never sees more than pi/3 of it, an 80-sample window does.
        let mut poses = Vec::new();
        let mut pose = Pose2::origin();
        for i in 0..200usize {
            let heading = if i < 85 {
                0.0
            } else if i < 115 {
                FRAC_PI_2 * (i - 85) as f64 / 30.0
            } else {
                FRAC_PI_2
            };
            pose = Pose2::new(pose.x + heading.cos(), pose.y + heading.sin(), heading);
            poses.push(pose);
        }
        let narrow = detect_turnings(&poses, &TurningConfig { window: 10, ..Default::default() });
        let wide = detect_turnings(&poses, &TurningConfig { window: 80, ..Default::default() });
        assert!(narrow.len() < wide.len(), "narrow {narrow:?} vs wide {wide:?}");
        assert_eq!(wide.len(), 1);
    }

    #[test]
    fn segment_extraction_counts_and_contains_origin() {
        // Straight poses 0.1 m apart, window 40 -> span 4 m -> 41 points.
        let cfg = TurningConfig::default();
        let poses: Vec<Pose2> = (0..80).map(|i| Pose2::new(i as f64 * 0.1, 0.0, 0.0)).collect();
        let seg = extract_segment(&poses, 40, &cfg).unwrap();
        assert_eq!(seg.points.len(), cfg.window + 1);
        assert_eq!(seg.resampled.len(), 41);
        assert!(seg.resampled.iter().any(|p| p[0].abs() < 1e-12 && p[1].abs() < 1e-12));
        // All collinear in the center frame.
        assert!(seg.resampled.iter().all(|p| p[1].abs() < 1e-9));
        // Uniform spacing within 1%.
        for w in seg.resampled.windows(2) {
            let d = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            assert!((d - 0.1).abs() < 0.001, "spacing {d}");
        }
    }

    #[test]
    fn segment_window_bounds_are_checked() {
        let cfg = TurningConfig::default();
        let poses = straight_track(30, 0.0);
        assert!(matches!(extract_segment(&poses, 5, &cfg), Err(TurningError::WindowOutOfBounds(..))));
    }

    #[test]
    fn resampled_arc_length_tracks_the_polyline() {
        // L-shaped window: resampled length matches the original polyline
        // within half a spacing.
        let cfg = TurningConfig::default();
        let track = l_track(40);
        let seg = extract_segment(&track, 40, &cfg).unwrap();
        let original: f64 = seg.points.windows(2).map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1])).sum();
        let resampled: f64 =
            seg.resampled.windows(2).map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1])).sum();
        assert!((original - resampled).abs() < cfg.resample_spacing / 2.0, "{original} vs {resampled}");
    }

    #[test]
    fn icp_identical_segments_give_identity() {
        let cfg = TurningConfig::default();
        let track = l_track(30);
        let seg = extract_segment(&track, 30, &cfg).unwrap();
        let (t, fitness) = icp_match(&seg, &seg, &cfg).unwrap();
        assert!(fitness < 1e-12);
        assert!(t.dx.abs() < 1e-9 && t.dy.abs() < 1e-9 && t.dtheta.abs() < 1e-9);
    }

    /// Staircase track: alternating east/north strokes, one pose per meter.
    /// Corner-rich, so rigid registration is fully locked.
    fn staircase_track(stroke: usize, strokes: usize) -> Vec<Pose2> {
        let mut poses = vec![Pose2::origin()];
        let (mut x, mut y) = (0.0, 0.0);
        for s in 0..strokes {
            let east = s % 2 == 0;
            for _ in 0..stroke {
                if east {
                    x += 1.0;
                } else {
                    y += 1.0;
                }
                poses.push(Pose2::new(x, y, if east { 0.0 } else { FRAC_PI_2 }));
            }
        }
        poses
    }

    #[test]
    fn icp_recovers_a_known_offset() {
        // Known-offset oracle on a corner-rich segment; a single long-legged
        // corner can stall in a grid-aliasing local minimum, which is why
        // the matcher is only trusted to a 0.5 m^2 fitness gate in the
        // pipeline.
        let cfg = TurningConfig::default();
        let track = staircase_track(4, 10);
        let seg = extract_segment(&track, 20, &cfg).unwrap();
        let mut shifted = seg.clone();
        for p in shifted.resampled.iter_mut().chain(shifted.points.iter_mut()) {
            p[0] += 0.5;
            p[1] += 0.3;
        }
        let (t, fitness) = icp_match(&seg, &shifted, &cfg).unwrap();
        assert!(fitness < 1e-3, "fitness {fitness}");
        assert!((t.dx - 0.5).abs() < 0.05, "dx {}", t.dx);
        assert!((t.dy - 0.3).abs() < 0.05, "dy {}", t.dy);
    }

    #[test]
    fn perpendicular_straight_segments_do_not_match() {
        // Geometric lower bound: from the identity prior every point of an
        // east-west line pairs to the crossing region of a north-south
        // line, so the mean squared distance stays near span^2 / 12 and
        // ICP must not discover the 90-degree rotation.
        let cfg = TurningConfig::default();
        let line = |along_y: bool| -> Segment {
            let points: Vec<[f64; 2]> = (-20..=20)
                .map(|k| {
                    let v = k as f64 * 0.1;
                    if along_y { [0.0, v] } else { [v, 0.0] }
                })
                .collect();
            Segment { center: 0, points: points.clone(), resampled: points }
        };
        let (_, fitness) = icp_match(&line(false), &line(true), &cfg).unwrap();
        assert!(fitness > 0.5, "fitness {fitness}");
    }

    #[test]
    fn icp_fitness_is_monotone_per_iteration() {
        // Re-run ICP manually with increasing iteration caps; the reported
        // fitness must never rise.
        let track = l_track(30);
        let cfg = TurningConfig::default();
        let seg = extract_segment(&track, 30, &cfg).unwrap();
        let mut shifted = seg.clone();
        for p in shifted.resampled.iter_mut() {
            p[0] += 0.8;
            p[1] -= 0.4;
        }
        let mut prev = f64::INFINITY;
        for iters in 1..12 {
            let cfg_k = TurningConfig { icp_max_iterations: iters, icp_tolerance: 0.0, ..Default::default() };
            let (_, fitness) = icp_match(&seg, &shifted, &cfg_k).unwrap();
            assert!(fitness <= prev + 1e-9, "fitness rose from {prev} to {fitness} at {iters}");
            prev = fitness;
        }
    }

    #[test]
    fn degenerate_segment_is_rejected() {
        let cfg = TurningConfig::default();
        let seg = Segment { center: 0, points: vec![[0.0, 0.0]; 5], resampled: vec![[0.0, 0.0]; 5] };
        assert_eq!(icp_match(&seg, &seg, &cfg).unwrap_err(), TurningError::DegenerateSegment);
    }

    #[test]
    fn classification_partitions_candidates() {
        let cfg = TurningConfig::default();
        // Track 0 and track 1 both walk the same L; a third straight track
        // provides a candidate far from any turning.
        let l0 = l_track(60);
        let l1 = l_track(60);
        let straight = straight_track(130, 0.0);
        let mut tracks = BTreeMap::new();
        tracks.insert(0u32, l0.clone());
        tracks.insert(1u32, l1);
        tracks.insert(2u32, straight);
        let mut turnings = BTreeMap::new();
        for (user, poses) in &tracks {
            turnings.insert(*user, detect_turnings(poses, &cfg));
        }

        let corner_pair = LoopCandidate { a: NodeId::new(0, 60), b: NodeId::new(1, 60), similarity: 0.9 };
        let off_corner = LoopCandidate { a: NodeId::new(0, 60), b: NodeId::new(2, 60), similarity: 0.9 };
        let (turning_loops, fingerprint_loops) =
            classify_loops(&[corner_pair, off_corner], &tracks, &turnings, &cfg);

        assert_eq!(turning_loops.len() + fingerprint_loops.len(), 2);
        assert_eq!(turning_loops.len(), 1);
        assert_eq!(turning_loops[0].b.user, 1);
        assert_eq!(fingerprint_loops[0].b.user, 2);
    }

    #[test]
    fn mirrored_corner_stays_a_fingerprint_loop() {
        let cfg = TurningConfig::default();
        let l = l_track(60);
        // Mirror image: east then south.
        let mut mirror = Vec::new();
        for i in 0..=60 {
            mirror.push(Pose2::new(i as f64, 0.0, 0.0));
        }
        for i in 1..=60 {
            mirror.push(Pose2::new(60.0, -(i as f64), -FRAC_PI_2));
        }
        let mut tracks = BTreeMap::new();
        tracks.insert(0u32, l);
        tracks.insert(1u32, mirror);
        let mut turnings = BTreeMap::new();
        for (user, poses) in &tracks {
            let found = detect_turnings(poses, &cfg);
            assert_eq!(found.len(), 1);
            turnings.insert(*user, found);
        }
        let cand = LoopCandidate { a: NodeId::new(0, 60), b: NodeId::new(1, 60), similarity: 0.95 };
        let (turning_loops, fingerprint_loops) = classify_loops(&[cand], &tracks, &turnings, &cfg);
        assert!(turning_loops.is_empty());
        assert_eq!(fingerprint_loops.len(), 1);
    }

    #[test]
    fn half_turn_collapses_to_pi() {
        // A heading reversal is still a single turning.
        let mut poses = Vec::new();
        for i in 0..=60 {
            poses.push(Pose2::new(i as f64, 0.0, 0.0));
        }
        for i in 1..=60 {
            poses.push(Pose2::new(60.0 - i as f64, 0.0, PI));
        }
        let cfg = TurningConfig::default();
        let found = detect_turnings(&poses, &cfg);
        assert_eq!(found.len(), 1);
    }
}
