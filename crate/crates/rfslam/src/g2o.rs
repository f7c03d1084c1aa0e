//! Pose graph import/export in the g2o text format (`VERTEX_SE2` /
//! `EDGE_SE2` / `FIX` lines), for cross-validation against external
//! solvers.
//!
//! Node ids map to consecutive integers in node order on export. Imported
//! graphs get synthetic node ids `(user 0, step id)`; consecutive-id edges
//! are tagged as odometry, everything else as fingerprint loops. Edge-kind
//! tags are not part of the format, so a round trip preserves geometry and
//! information, not kinds.

use crate::geom::{Pose2, Transform2};
use crate::graph::{Edge, EdgeKind, NodeId, PoseGraph};
use nalgebra::Matrix3;
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum G2oError {
    #[error("line {0}: {1}")]
    Parse(usize, String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn export_g2o(graph: &PoseGraph, mut w: impl Write) -> std::io::Result<()> {
    let ids: BTreeMap<NodeId, usize> = graph.nodes.keys().enumerate().map(|(i, id)| (*id, i)).collect();
    for (id, pose) in &graph.nodes {
        writeln!(w, "VERTEX_SE2 {} {} {} {}", ids[id], pose.x, pose.y, pose.theta)?;
    }
    writeln!(w, "FIX {}", ids[&graph.anchor])?;
    for e in &graph.edges {
        let i = e.information;
        writeln!(
            w,
            "EDGE_SE2 {} {} {} {} {} {} {} {} {} {} {}",
            ids[&e.from],
            ids[&e.to],
            e.measurement.dx,
            e.measurement.dy,
            e.measurement.dtheta,
            i[(0, 0)],
            i[(0, 1)],
            i[(0, 2)],
            i[(1, 1)],
            i[(1, 2)],
            i[(2, 2)],
        )?;
    }
    Ok(())
}

pub fn import_g2o(r: impl BufRead) -> Result<PoseGraph, G2oError> {
    let mut nodes = BTreeMap::new();
    let mut edges = Vec::new();
    let mut fixed: Option<usize> = None;

    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parse = |s: &str| -> Result<f64, G2oError> {
            s.parse().map_err(|_| G2oError::Parse(lineno, format!("bad number {s:?}")))
        };
        match fields.first().copied() {
            Some("VERTEX_SE2") => {
                if fields.len() != 5 {
                    return Err(G2oError::Parse(lineno, "VERTEX_SE2 needs id x y theta".into()));
                }
                let id: u32 = fields[1]
                    .parse()
                    .map_err(|_| G2oError::Parse(lineno, format!("bad vertex id {:?}", fields[1])))?;
                nodes.insert(
                    NodeId::new(0, id),
                    Pose2::new(parse(fields[2])?, parse(fields[3])?, parse(fields[4])?),
                );
            }
            Some("EDGE_SE2") => {
                if fields.len() != 12 {
                    return Err(G2oError::Parse(lineno, "EDGE_SE2 needs ids, measurement, upper-triangular information".into()));
                }
                let from: u32 = fields[1]
                    .parse()
                    .map_err(|_| G2oError::Parse(lineno, format!("bad edge id {:?}", fields[1])))?;
                let to: u32 = fields[2]
                    .parse()
                    .map_err(|_| G2oError::Parse(lineno, format!("bad edge id {:?}", fields[2])))?;
                let m = Transform2::new(parse(fields[3])?, parse(fields[4])?, parse(fields[5])?);
                let (i11, i12, i13) = (parse(fields[6])?, parse(fields[7])?, parse(fields[8])?);
                let (i22, i23, i33) = (parse(fields[9])?, parse(fields[10])?, parse(fields[11])?);
                let information = Matrix3::new(i11, i12, i13, i12, i22, i23, i13, i23, i33);
                let kind = if from.abs_diff(to) == 1 { EdgeKind::Odometry } else { EdgeKind::FingerprintLoop };
                edges.push(Edge {
                    from: NodeId::new(0, from),
                    to: NodeId::new(0, to),
                    kind,
                    measurement: m,
                    information,
                });
            }
            Some("FIX") => {
                let id: u32 = fields
                    .get(1)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| G2oError::Parse(lineno, "FIX needs a vertex id".into()))?;
                fixed = Some(id as usize);
            }
            // Unknown records and blank lines are skipped.
            _ => {}
        }
    }

    let anchor = fixed
        .map(|id| NodeId::new(0, id as u32))
        .or_else(|| nodes.keys().next().copied())
        .ok_or_else(|| G2oError::Parse(0, "no vertices".into()))?;
    Ok(PoseGraph { nodes, edges, anchor })
}
