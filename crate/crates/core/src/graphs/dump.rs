//! JSON Lines mission dump. The first line is a header, every following line
//! is one mission node:
//!
//! ```text
//! {"wvn_mission_dump":1,"embedding_dim":90,"d_mis":0.5}
//! {"frame_id":3,"pose":[1.0,2.0,0.0],"odometer":1.5,"split":"train","segments":[{"id":0,"embedding":[..],"label":0.8,"cells":[[4,8]]}]}
//! ```
//!
//! `odometer`, `split` and `cells` are optional on input so that externally
//! produced feature logs can be replayed.

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use super::{MissionGraph, MissionNode, Split};
use crate::error::{Error, Result};
use crate::geometry::{Cell, Pose2};
use crate::world::{Segment, SegmentFrame};

const FORMAT: &str = "mission dump";
const VERSION: u32 = 1;
/// Longest accepted line, bounding memory on hostile input.
const MAX_LINE: usize = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumpHeader {
    pub wvn_mission_dump: u32,
    pub embedding_dim: usize,
    pub d_mis: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    frame_id: u64,
    pose: [f64; 3],
    #[serde(default)]
    odometer: f64,
    #[serde(default = "default_split")]
    split: Split,
    segments: Vec<SegmentRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentRecord {
    id: usize,
    embedding: Vec<f64>,
    label: Option<f64>,
    #[serde(default)]
    cells: Vec<[usize; 2]>,
}

fn default_split() -> Split {
    Split::Train
}

pub fn write_mission_dump<W: Write>(graph: &MissionGraph, embedding_dim: usize, mut w: W) -> Result<()> {
    let header = DumpHeader { wvn_mission_dump: VERSION, embedding_dim, d_mis: graph.d_mis() };
    let to_io = |e: serde_json::Error| Error::Io(e.into());
    serde_json::to_writer(&mut w, &header).map_err(to_io)?;
    w.write_all(b"\n")?;
    for node in graph.nodes() {
        let p = node.frame.pose;
        let rec = NodeRecord {
            frame_id: node.frame.frame_id,
            pose: [p.x, p.y, p.yaw],
            odometer: node.odometer,
            split: node.split,
            segments: node
                .frame
                .segments
                .iter()
                .map(|s| SegmentRecord {
                    id: s.id,
                    embedding: s.embedding.clone(),
                    label: s.label,
                    cells: s.cells.iter().map(|c| [c.x, c.y]).collect(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(to_io)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a dump, returning its header and the reconstructed graph.
pub fn read_mission_dump<R: BufRead>(mut r: R) -> Result<(DumpHeader, MissionGraph)> {
    let mut line = String::new();
    let mut lineno = 0usize;
    let mut next_line = |line: &mut String| -> Result<bool> {
        line.clear();
        let n = r.by_ref().take(MAX_LINE as u64 + 1).read_line(line)?;
        if n > MAX_LINE {
            return Err(Error::format(FORMAT, "line too long"));
        }
        Ok(n > 0)
    };

    let header: DumpHeader = loop {
        if !next_line(&mut line)? {
            return Err(Error::format(FORMAT, "missing header"));
        }
        lineno += 1;
        if !line.trim().is_empty() {
            break serde_json::from_str(line.trim())
                .map_err(|e| Error::format(FORMAT, format!("header: {e}")))?;
        }
    };
    if header.wvn_mission_dump != VERSION {
        return Err(Error::format(FORMAT, format!("unsupported version {}", header.wvn_mission_dump)));
    }
    if header.embedding_dim == 0 {
        return Err(Error::format(FORMAT, "embedding_dim must be positive"));
    }
    if !(header.d_mis.is_finite() && header.d_mis >= 0.0) {
        return Err(Error::format(FORMAT, "d_mis must be finite and >= 0"));
    }

    let mut nodes = Vec::new();
    while next_line(&mut line)? {
        lineno += 1;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let rec: NodeRecord =
            serde_json::from_str(text).map_err(|e| Error::format(FORMAT, format!("line {lineno}: {e}")))?;
        nodes.push(node_from_record(rec, header.embedding_dim, lineno)?);
    }
    Ok((header, MissionGraph::from_nodes(nodes, header.d_mis)))
}

fn node_from_record(rec: NodeRecord, dim: usize, lineno: usize) -> Result<MissionNode> {
    let bad = |reason: String| Error::format(FORMAT, format!("line {lineno}: {reason}"));
    if !rec.pose.iter().all(|v| v.is_finite()) || !rec.odometer.is_finite() {
        return Err(bad("non-finite pose or odometer".into()));
    }
    let mut segments = Vec::with_capacity(rec.segments.len());
    for s in rec.segments {
        if s.embedding.len() != dim {
            return Err(bad(format!("segment {} has dim {}, expected {dim}", s.id, s.embedding.len())));
        }
        if !s.embedding.iter().all(|v| v.is_finite()) {
            return Err(bad(format!("segment {} has a non-finite embedding", s.id)));
        }
        if let Some(l) = s.label {
            if !(0.0..=1.0).contains(&l) {
                return Err(bad(format!("segment {} label {l} outside [0, 1]", s.id)));
            }
        }
        segments.push(Segment {
            id: s.id,
            cells: s.cells.into_iter().map(|[x, y]| Cell::new(x, y)).collect(),
            embedding: s.embedding,
            label: s.label,
        });
    }
    let pose = Pose2::new(rec.pose[0], rec.pose[1], rec.pose[2]);
    Ok(MissionNode::new(SegmentFrame { frame_id: rec.frame_id, pose, segments }, rec.odometer, rec.split))
}
