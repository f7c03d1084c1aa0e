//! Collaborative radio-fingerprint SLAM for indoor pedestrian trajectories.
//!
//! This crate reconstructs the tracks of multiple pedestrians and a Wi-Fi
//! radio map from odometry and RSS traces. Loop closures are claimed from
//! the cosine similarity of radio fingerprints, verified against detected
//! turnings by ICP segment matching, weighted by a trained
//! similarity-to-distance-variance model, and fed into an SE(2) pose graph
//! optimized with Levenberg-Marquardt. A deterministic simulator generates
//! multi-user walking scenarios with ground truth for evaluation.
//!
//! The `examples/` directory holds one runnable example per capability;
//! the `rfslam` binary exposes the batch pipeline
//! (`simulate` / `train` / `slam` / `eval` / `sweep`).

pub mod fingerprint;
pub mod g2o;
pub mod geom;
pub mod graph;
pub mod io;
pub mod optimizer;
pub mod pdr;
pub mod pipeline;
pub mod plot;
pub mod sim;
pub mod turning;
pub mod types;
pub mod varmodel;

pub use fingerprint::{apply_rss_threshold, find_loop_candidates, similarity, LoopCandidate, SimilarityConfig};
pub use geom::{normalize_angle, Pose2, Transform2};
pub use graph::{add_loop_edges, merge_tracks, residual, Edge, EdgeCovariancePolicy, EdgeKind, PoseGraph, TrackOdometry};
pub use optimizer::{optimize, OptimizeConfig, OptimizeReport};
pub use pdr::{autocorrelation, count_steps, dead_reckon, odometry_edges, HeadingInit, PdrConfig};
pub use turning::{classify_loops, detect_turnings, extract_segment, icp_match, Segment, TurningConfig};
pub use types::{Fingerprint, Mac, NodeId, Trace};
pub use varmodel::{collect_training_pairs, train, TrainingSample, VarianceModel};
