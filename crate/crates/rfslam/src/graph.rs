//! The typed SE(2) pose graph: nodes, measurement edges with information
//! matrices, and the residual/Jacobian machinery the optimizer consumes.

use crate::fingerprint::LoopCandidate;
use crate::geom::{normalize_angle, Pose2, Transform2};
use crate::varmodel::VarianceModel;
use nalgebra::{Matrix3, Vector3};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum EdgeKind {
    Odometry,
    Merge,
    FingerprintLoop,
    TurningLoop,
}

pub use crate::types::NodeId;

/// One measurement constraint between two nodes. Loop and merge edges carry
/// the zero transform: they assert co-location, weighted by the information
/// matrix.
#[derive(Debug, Clone)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub kind: EdgeKind,
    pub measurement: Transform2,
    /// Inverse covariance; diagonal throughout this pipeline.
    pub information: Matrix3<f64>,
}

/// Nodes with current estimates, typed edges, and the gauge-fixing anchor.
#[derive(Debug, Clone)]
pub struct PoseGraph {
    pub nodes: BTreeMap<NodeId, Pose2>,
    pub edges: Vec<Edge>,
    pub anchor: NodeId,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("no traces to merge")]
    NoTracks,
    #[error("loop edge references unknown node {0}")]
    UnknownNode(NodeId),
    #[error("turning variance {turning} must stay below the model's variance at maximum similarity ({model})")]
    TurningVarianceTooLarge { turning: f64, model: f64 },
    #[error("graph is not connected: node {0} is unreachable from the anchor (user {1} has no merge edge or loop)")]
    Disconnected(NodeId, u32),
}

/// Covariances assigned to each edge kind when the graph is assembled.
#[derive(Debug, Clone)]
pub struct EdgeCovariancePolicy {
    /// Turning-loop x/y variance, m^2. Tighter than any fingerprint loop.
    pub turning_xy_variance: f64,
    /// Heading variance for loop and merge edges: radio observations carry
    /// no orientation information.
    pub orientation_variance: f64,
    /// Odometry edge translational sigma, meters.
    pub odom_xy_sigma: f64,
    /// Odometry edge heading sigma, radians.
    pub odom_theta_sigma: f64,
    /// Queried variances are clamped below at this to keep information
    /// matrices finite when training pairs sit at distance zero.
    pub min_variance: f64,
    pub variance_model: VarianceModel,
}

impl EdgeCovariancePolicy {
    /// Builds the policy, checking that turning loops really are tighter
    /// than the best fingerprint loop the model can produce.
    pub fn new(
        turning_xy_variance: f64,
        orientation_variance: f64,
        odom_xy_sigma: f64,
        odom_theta_sigma: f64,
        variance_model: VarianceModel,
    ) -> Result<Self, GraphError> {
        let policy = Self {
            turning_xy_variance,
            orientation_variance,
            odom_xy_sigma,
            odom_theta_sigma,
            min_variance: 1e-4,
            variance_model,
        };
        let at_max = policy.fingerprint_variance(1.0);
        if turning_xy_variance >= at_max {
            return Err(GraphError::TurningVarianceTooLarge { turning: turning_xy_variance, model: at_max });
        }
        Ok(policy)
    }

    /// x/y variance for a fingerprint loop of the given similarity.
    pub fn fingerprint_variance(&self, similarity: f64) -> f64 {
        self.variance_model
            .query(similarity.clamp(0.0, 1.0))
            .unwrap_or(self.variance_model.fallback_variance)
            .max(self.min_variance)
    }

    fn information_from_variances(vx: f64, vy: f64, vtheta: f64) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(1.0 / vx, 1.0 / vy, 1.0 / vtheta))
    }

    pub fn odometry_information(&self) -> Matrix3<f64> {
        let vxy = self.odom_xy_sigma * self.odom_xy_sigma;
        let vth = self.odom_theta_sigma * self.odom_theta_sigma;
        Self::information_from_variances(vxy, vxy, vth)
    }

    pub fn fingerprint_information(&self, similarity: f64) -> Matrix3<f64> {
        let v = self.fingerprint_variance(similarity);
        Self::information_from_variances(v, v, self.orientation_variance)
    }

    pub fn turning_information(&self) -> Matrix3<f64> {
        Self::information_from_variances(self.turning_xy_variance, self.turning_xy_variance, self.orientation_variance)
    }
}

/// One user's odometric pose sequence; the step index within `poses` is the
/// node's step id.
#[derive(Debug, Clone)]
pub struct TrackOdometry {
    pub user: u32,
    pub poses: Vec<Pose2>,
}

/// Assembles nodes at their raw odometric poses, per-track odometry edges,
/// and one zero-measurement merge edge from track 0's first node to every
/// other track's first node (all users pass the same starting place).
///
/// `start_similarities[k]` is the fingerprint similarity between track `k`'s
/// first scan and track 0's, used to look up the merge-edge x/y variance;
/// entry 0 is ignored.
pub fn merge_tracks(
    tracks: &[TrackOdometry],
    start_similarities: &[f64],
    policy: &EdgeCovariancePolicy,
) -> Result<PoseGraph, GraphError> {
    if tracks.is_empty() || tracks.iter().all(|t| t.poses.is_empty()) {
        return Err(GraphError::NoTracks);
    }
    let mut nodes = BTreeMap::new();
    let mut edges = Vec::new();
    let odom_info = policy.odometry_information();

    for track in tracks {
        for (step, pose) in track.poses.iter().enumerate() {
            nodes.insert(NodeId::new(track.user, step as u32), *pose);
        }
        for (step, pair) in track.poses.windows(2).enumerate() {
            edges.push(Edge {
                from: NodeId::new(track.user, step as u32),
                to: NodeId::new(track.user, step as u32 + 1),
                kind: EdgeKind::Odometry,
                measurement: pair[0].between(&pair[1]),
                information: odom_info,
            });
        }
    }

    let first = tracks.iter().position(|t| !t.poses.is_empty()).expect("checked non-empty");
    let anchor = NodeId::new(tracks[first].user, 0);
    for (k, track) in tracks.iter().enumerate() {
        if k == first || track.poses.is_empty() {
            continue;
        }
        let sim = start_similarities.get(k).copied().unwrap_or(0.0);
        let vxy = policy.fingerprint_variance(sim);
        edges.push(Edge {
            from: anchor,
            to: NodeId::new(track.user, 0),
            kind: EdgeKind::Merge,
            measurement: Transform2::identity(),
            information: EdgeCovariancePolicy::information_from_variances(vxy, vxy, policy.orientation_variance),
        });
    }

    Ok(PoseGraph { nodes, edges, anchor })
}

/// Adds zero-measurement loop edges: turning loops with the fixed tight
/// covariance, fingerprint loops weighted by the variance model at their
/// similarity.
pub fn add_loop_edges(
    graph: &mut PoseGraph,
    turning_loops: &[LoopCandidate],
    fingerprint_loops: &[LoopCandidate],
    policy: &EdgeCovariancePolicy,
) -> Result<(), GraphError> {
    let check = |g: &PoseGraph, id: NodeId| -> Result<(), GraphError> {
        if g.nodes.contains_key(&id) {
            Ok(())
        } else {
            Err(GraphError::UnknownNode(id))
        }
    };
    for loop_ in turning_loops {
        check(graph, loop_.a)?;
        check(graph, loop_.b)?;
        graph.edges.push(Edge {
            from: loop_.a,
            to: loop_.b,
            kind: EdgeKind::TurningLoop,
            measurement: Transform2::identity(),
            information: policy.turning_information(),
        });
    }
    for loop_ in fingerprint_loops {
        check(graph, loop_.a)?;
        check(graph, loop_.b)?;
        graph.edges.push(Edge {
            from: loop_.a,
            to: loop_.b,
            kind: EdgeKind::FingerprintLoop,
            measurement: Transform2::identity(),
            information: policy.fingerprint_information(loop_.similarity),
        });
    }
    Ok(())
}

/// Residual of an edge at the given endpoint estimates: measurement minus
/// prediction, heading component normalized.
pub fn residual(edge: &Edge, xi: &Pose2, xj: &Pose2) -> Vector3<f64> {
    let predicted = xi.between(xj);
    Vector3::new(
        edge.measurement.dx - predicted.dx,
        edge.measurement.dy - predicted.dy,
        normalize_angle(edge.measurement.dtheta - predicted.dtheta),
    )
}

/// Analytic Jacobians of the residual with respect to the two endpoint
/// poses, matching `residual`'s sign convention.
pub(crate) fn residual_jacobians(xi: &Pose2, xj: &Pose2) -> (Matrix3<f64>, Matrix3<f64>) {
    let (s, c) = xi.theta.sin_cos();
    let dx = xj.x - xi.x;
    let dy = xj.y - xi.y;
    // d(residual)/d(xi)
    let ji = Matrix3::new(
        c, s, s * dx - c * dy,
        -s, c, c * dx + s * dy,
        0.0, 0.0, 1.0,
    );
    // d(residual)/d(xj)
    let jj = Matrix3::new(
        -c, -s, 0.0,
        s, -c, 0.0,
        0.0, 0.0, -1.0,
    );
    (ji, jj)
}

impl PoseGraph {
    /// The weighted squared residual objective over all edges.
    pub fn chi2(&self) -> f64 {
        self.edges
            .iter()
            .map(|e| {
                let r = residual(e, &self.nodes[&e.from], &self.nodes[&e.to]);
                (r.transpose() * e.information * r)[(0, 0)]
            })
            .sum()
    }

    /// Checks that every node is reachable from the anchor through edges.
    pub fn check_connected(&self) -> Result<(), GraphError> {
        let index: BTreeMap<NodeId, usize> = self.nodes.keys().enumerate().map(|(i, id)| (*id, i)).collect();
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); index.len()];
        for e in &self.edges {
            let (a, b) = (index[&e.from], index[&e.to]);
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; index.len()];
        let mut stack = vec![index[&self.anchor]];
        seen[index[&self.anchor]] = true;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        for (id, &i) in &index {
            if !seen[i] {
                return Err(GraphError::Disconnected(*id, id.user));
            }
        }
        Ok(())
    }

    pub fn edge_count(&self, kind: EdgeKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }
}
