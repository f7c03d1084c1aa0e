//! Planar poses, relative transforms, and angle handling.
//!
//! Everything downstream (dead reckoning, loop gating, graph residuals)
//! works on SE(2). Angles are stored normalized to `(-pi, pi]` at
//! construction so heading residuals never see a wrap artifact.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Wraps an angle into `(-pi, pi]`. The result is congruent to the input
/// modulo 2*pi.
///
/// Panics on non-finite input.
pub fn normalize_angle(theta: f64) -> f64 {
    assert!(theta.is_finite(), "angle must be finite, got {theta}");
    let a = (theta + PI).rem_euclid(2.0 * PI);
    // rem_euclid lands in [0, 2*pi); map the 0 boundary to +pi, not -pi.
    if a == 0.0 {
        PI
    } else {
        a - PI
    }
}

/// A planar pose: position in meters, heading in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    /// Builds a pose with the heading normalized to `(-pi, pi]`.
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        assert!(x.is_finite() && y.is_finite(), "pose coordinates must be finite");
        Self { x, y, theta: normalize_angle(theta) }
    }

    pub fn origin() -> Self {
        Self { x: 0.0, y: 0.0, theta: 0.0 }
    }

    /// The transform that takes this pose to `other`, expressed in this
    /// pose's frame: rotate the world-frame delta by `-theta` and take the
    /// normalized heading difference.
    pub fn between(&self, other: &Pose2) -> Transform2 {
        let dx = other.x - self.x;
        let dy = other.y - self.y;
        let (s, c) = self.theta.sin_cos();
        Transform2::new(c * dx + s * dy, -s * dx + c * dy, other.theta - self.theta)
    }

    /// Applies a body-frame transform to this pose.
    pub fn apply(&self, t: &Transform2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(
            self.x + c * t.dx - s * t.dy,
            self.y + s * t.dx + c * t.dy,
            self.theta + t.dtheta,
        )
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    /// Euclidean distance between the positions of two poses.
    pub fn distance(&self, other: &Pose2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A relative rigid-body motion on the plane: translation in the source
/// frame plus a heading change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform2 {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
}

impl Transform2 {
    pub fn new(dx: f64, dy: f64, dtheta: f64) -> Self {
        assert!(dx.is_finite() && dy.is_finite(), "transform must be finite");
        Self { dx, dy, dtheta: normalize_angle(dtheta) }
    }

    pub fn identity() -> Self {
        Self { dx: 0.0, dy: 0.0, dtheta: 0.0 }
    }

    /// Composition `self (+) other`: first move by `self`, then by `other`
    /// in the frame `self` ends in.
    pub fn compose(&self, other: &Transform2) -> Transform2 {
        let (s, c) = self.dtheta.sin_cos();
        Transform2::new(
            self.dx + c * other.dx - s * other.dy,
            self.dy + s * other.dx + c * other.dy,
            self.dtheta + other.dtheta,
        )
    }

    /// The inverse motion: composing with it yields the identity.
    pub fn inverse(&self) -> Transform2 {
        let (s, c) = self.dtheta.sin_cos();
        Transform2::new(-(c * self.dx + s * self.dy), -(-s * self.dx + c * self.dy), -self.dtheta)
    }

    pub fn norm(&self) -> f64 {
        self.dx.hypot(self.dy)
    }
}

/// Interpolates a time-ordered trajectory at `t`: linear in position,
/// shortest-path in heading, clamped at both ends.
pub fn interpolate_pose(trajectory: &[(f64, Pose2)], t: f64) -> Option<Pose2> {
    if trajectory.is_empty() {
        return None;
    }
    if t <= trajectory[0].0 {
        return Some(trajectory[0].1);
    }
    if t >= trajectory[trajectory.len() - 1].0 {
        return Some(trajectory[trajectory.len() - 1].1);
    }
    let idx = trajectory.partition_point(|(ts, _)| *ts <= t);
    let (t0, p0) = trajectory[idx - 1];
    let (t1, p1) = trajectory[idx];
    let span = t1 - t0;
    if span <= 0.0 {
        return Some(p0);
    }
    let w = (t - t0) / span;
    let dtheta = normalize_angle(p1.theta - p0.theta);
    Some(Pose2::new(
        p0.x + w * (p1.x - p0.x),
        p0.y + w * (p1.y - p0.y),
        p0.theta + w * dtheta,
    ))
}
