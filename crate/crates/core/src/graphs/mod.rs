//! Short-horizon supervision ring buffer, mission-long training store, and
//! the reprojection that turns footprint scores into per-segment labels.

mod dump;

pub use dump::{read_mission_dump, write_mission_dump, DumpHeader};

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::geometry::{Cell, GridGeometry, Pose2};
use crate::world::SegmentFrame;

/// Lower clamp for genuine labels, keeping them distinct from "absent".
pub const LABEL_EPS: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    pub n_sup: usize,
    pub d_sup: f64,
    pub d_mis: f64,
    pub footprint_radius: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self { n_sup: 50, d_sup: 0.1, d_mis: 0.5, footprint_radius: 0.3 }
    }
}

impl GraphConfig {
    /// Physical length covered by a full supervision buffer.
    pub fn window_length(&self) -> f64 {
        self.n_sup as f64 * self.d_sup
    }
}

/// Cells within `radius` of the pose, always including the cell under it.
pub fn footprint_cells(geom: &GridGeometry, pose: &Pose2, radius: f64) -> Vec<Cell> {
    let cs = geom.cell_size;
    let lo = |v: f64| ((v - radius) / cs).floor().max(0.0) as usize;
    let hi = |v: f64, n: usize| (((v + radius) / cs).ceil().max(0.0) as usize).min(n);
    let own = geom.cell_of(pose.x, pose.y);
    let mut out = Vec::new();
    for y in lo(pose.y)..hi(pose.y, geom.height) {
        for x in lo(pose.x)..hi(pose.x, geom.width) {
            let c = Cell::new(x, y);
            let (cx, cy) = geom.center(c);
            if Some(c) == own || (cx - pose.x).hypot(cy - pose.y) <= radius {
                out.push(c);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisionNode {
    pub time: f64,
    pub pose: Pose2,
    /// Distance travelled since the start of the mission.
    pub odometer: f64,
    pub footprint_cells: Vec<Cell>,
    pub trav_score: f64,
}

#[derive(Debug, Clone)]
pub struct SupervisionGraph {
    nodes: VecDeque<SupervisionNode>,
    capacity: usize,
    d_sup: f64,
}

impl SupervisionGraph {
    pub fn new(capacity: usize, d_sup: f64) -> Self {
        let capacity = capacity.max(1);
        Self { nodes: VecDeque::with_capacity(capacity), capacity, d_sup }
    }

    pub fn nodes(&self) -> impl ExactSizeIterator<Item = &SupervisionNode> + DoubleEndedIterator {
        self.nodes.iter()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn newest(&self) -> Option<&SupervisionNode> {
        self.nodes.back()
    }

    /// Adds the node if it is at least `d_sup` from the newest one, evicting
    /// the oldest node at capacity.
    pub fn add(&mut self, node: SupervisionNode) -> bool {
        if let Some(last) = self.nodes.back() {
            if last.pose.distance(&node.pose) < self.d_sup {
                return false;
            }
        }
        if self.nodes.len() == self.capacity {
            self.nodes.pop_front();
        }
        self.nodes.push_back(node);
        true
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionNode {
    pub pose: Pose2,
    pub odometer: f64,
    pub split: Split,
    pub frame: SegmentFrame,
    pub valid: bool,
}

impl MissionNode {
    pub fn new(frame: SegmentFrame, odometer: f64, split: Split) -> Self {
        let valid = frame.has_label();
        Self { pose: frame.pose, odometer, split, frame, valid }
    }

    pub fn refresh_validity(&mut self) {
        self.valid = self.frame.has_label();
    }
}

#[derive(Debug, Clone)]
pub struct MissionGraph {
    nodes: Vec<MissionNode>,
    d_mis: f64,
}

impl MissionGraph {
    pub fn new(d_mis: f64) -> Self {
        Self { nodes: Vec::new(), d_mis }
    }

    pub fn from_nodes(nodes: Vec<MissionNode>, d_mis: f64) -> Self {
        Self { nodes, d_mis }
    }

    pub fn nodes(&self) -> &[MissionNode] {
        &self.nodes
    }

    pub fn nodes_mut(&mut self) -> &mut [MissionNode] {
        &mut self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn d_mis(&self) -> f64 {
        self.d_mis
    }

    /// Whether a node at `pose` would satisfy the spacing rule.
    pub fn accepts(&self, pose: &Pose2) -> bool {
        self.nodes.last().is_none_or(|last| last.pose.distance(pose) >= self.d_mis)
    }

    pub fn add(&mut self, node: MissionNode) -> bool {
        if !self.accepts(&node.pose) {
            return false;
        }
        self.nodes.push(node);
        true
    }

    /// Indices of valid nodes in the given split.
    pub fn valid_indices(&self, split: Split) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.valid && n.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Keeps only the first `fraction` of nodes of `split` (others untouched).
    pub fn truncate_split(&mut self, split: Split, fraction: f64) {
        let total = self.nodes.iter().filter(|n| n.split == split).count();
        let keep = ((total as f64 * fraction).ceil() as usize).min(total);
        let mut seen = 0;
        self.nodes.retain(|n| {
            if n.split != split {
                return true;
            }
            seen += 1;
            seen <= keep
        });
    }
}

/// Relabels every mission node within the supervision window from the current
/// footprint track. Returns the number of nodes updated.
///
/// Footprints are painted oldest to newest, so overlapping footprints take the
/// newest score. A segment's label is the mean painted score over its covered
/// member cells, clamped to `[LABEL_EPS, 1]`; uncovered segments become
/// unlabeled.
pub fn reproject_supervision(sup: &SupervisionGraph, mission: &mut MissionGraph, window_length: f64) -> usize {
    let Some(newest) = sup.newest() else {
        return 0;
    };
    let mut painted: HashMap<Cell, f64> = HashMap::new();
    for node in sup.nodes() {
        for c in &node.footprint_cells {
            painted.insert(*c, node.trav_score);
        }
    }
    let mut updated = 0;
    for node in mission.nodes.iter_mut().rev() {
        if (newest.odometer - node.odometer).abs() > window_length {
            // Nodes are stored in odometer order, so everything older is out too.
            if node.odometer < newest.odometer {
                break;
            }
            continue;
        }
        for seg in &mut node.frame.segments {
            let (sum, n) = seg
                .cells
                .iter()
                .filter_map(|c| painted.get(c))
                .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
            seg.label = (n > 0).then(|| (sum / n as f64).clamp(LABEL_EPS, 1.0));
        }
        node.refresh_validity();
        updated += 1;
    }
    updated
}

/// Supervision and mission graphs updated together.
#[derive(Debug, Clone)]
pub struct Graphs {
    pub cfg: GraphConfig,
    pub supervision: SupervisionGraph,
    pub mission: MissionGraph,
}

impl Graphs {
    pub fn new(cfg: GraphConfig) -> Self {
        Self {
            supervision: SupervisionGraph::new(cfg.n_sup, cfg.d_sup),
            mission: MissionGraph::new(cfg.d_mis),
            cfg,
        }
    }

    pub fn add_supervision(&mut self, geom: &GridGeometry, time: f64, pose: Pose2, odometer: f64, score: f64) -> bool {
        let footprint_cells = footprint_cells(geom, &pose, self.cfg.footprint_radius);
        self.supervision.add(SupervisionNode {
            time,
            pose,
            odometer,
            footprint_cells,
            trav_score: score.clamp(0.0, 1.0),
        })
    }

    /// Adds an unlabeled frame as a mission node and, on success, reprojects
    /// the footprint track.
    pub fn add_mission_node(&mut self, frame: SegmentFrame, odometer: f64, split: Split) -> bool {
        debug_assert!(!frame.has_label(), "mission frames must arrive unlabeled");
        if !self.mission.add(MissionNode::new(frame, odometer, split)) {
            return false;
        }
        self.reproject();
        true
    }

    pub fn reproject(&mut self) -> usize {
        reproject_supervision(&self.supervision, &mut self.mission, self.cfg.window_length())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Segment;
    use proptest::prelude::*;

    fn sup_node(x: f64, odo: f64, cells: &[(usize, usize)], score: f64) -> SupervisionNode {
        SupervisionNode {
            time: odo,
            pose: Pose2::new(x, 0.0, 0.0),
            odometer: odo,
            footprint_cells: cells.iter().map(|&(x, y)| Cell::new(x, y)).collect(),
            trav_score: score,
        }
    }

    fn frame(segments: Vec<Vec<(usize, usize)>>) -> SegmentFrame {
        SegmentFrame {
            frame_id: 0,
            pose: Pose2::new(0.0, 0.0, 0.0),
            segments: segments
                .into_iter()
                .enumerate()
                .map(|(id, cells)| Segment {
                    id,
                    cells: cells.into_iter().map(|(x, y)| Cell::new(x, y)).collect(),
                    embedding: vec![0.0; 2],
                    label: None,
                })
                .collect(),
        }
    }

    #[test]
    fn supervision_spacing_and_eviction() {
        let mut g = SupervisionGraph::new(3, 0.1);
        assert!(g.add(sup_node(0.0, 0.0, &[(0, 0)], 1.0)));
        assert!(!g.add(sup_node(0.0, 0.0, &[(0, 0)], 1.0)));
        assert!(g.add(sup_node(0.2, 0.2, &[(0, 0)], 1.0)));
        assert!(g.add(sup_node(0.4, 0.4, &[(0, 0)], 1.0)));
        assert!(g.add(sup_node(0.6, 0.6, &[(0, 0)], 1.0)));
        let xs: Vec<f64> = g.nodes().map(|n| n.pose.x).collect();
        assert_eq!(xs, vec![0.2, 0.4, 0.6]);
    }

    #[test]
    fn mission_spacing() {
        let mut m = MissionGraph::new(0.5);
        let mut f = frame(vec![vec![(0, 0)]]);
        assert!(m.add(MissionNode::new(f.clone(), 0.0, Split::Train)));
        assert!(!m.add(MissionNode::new(f.clone(), 0.0, Split::Train)));
        f.pose.x = 0.3;
        assert!(!m.add(MissionNode::new(f.clone(), 0.3, Split::Train)));
        f.pose.x = 0.5;
        assert!(m.add(MissionNode::new(f.clone(), 0.5, Split::Train)));
        f.pose.x = 1.2;
        assert!(m.add(MissionNode::new(f, 1.2, Split::Train)));
        assert_eq!(m.len(), 3);
    }

    #[test]
    fn empty_supervision_updates_nothing() {
        let sup = SupervisionGraph::new(5, 0.1);
        let mut m = MissionGraph::new(0.5);
        m.add(MissionNode::new(frame(vec![vec![(0, 0)]]), 0.0, Split::Train));
        assert_eq!(reproject_supervision(&sup, &mut m, 5.0), 0);
        assert!(!m.nodes()[0].valid);
    }

    #[test]
    fn single_overlap_labels_one_segment() {
        let mut sup = SupervisionGraph::new(5, 0.1);
        sup.add(sup_node(1.0, 1.0, &[(3, 0)], 0.8));
        let mut m = MissionGraph::new(0.5);
        m.add(MissionNode::new(frame(vec![vec![(0, 0), (1, 0)], vec![(2, 0), (3, 0)], vec![(4, 0)]]), 0.0, Split::Train));
        assert_eq!(reproject_supervision(&sup, &mut m, 5.0), 1);
        let segs = &m.nodes()[0].frame.segments;
        assert_eq!(segs[0].label, None);
        assert_eq!(segs[1].label, Some(0.8));
        assert_eq!(segs[2].label, None);
        assert!(m.nodes()[0].valid);
    }

    #[test]
    fn mean_over_overlapped_cells() {
        let mut sup = SupervisionGraph::new(5, 0.1);
        sup.add(sup_node(1.0, 1.0, &[(0, 0)], 0.6));
        sup.add(sup_node(1.5, 1.5, &[(1, 0)], 1.0));
        let mut m = MissionGraph::new(0.5);
        m.add(MissionNode::new(frame(vec![vec![(0, 0), (1, 0), (2, 0)]]), 0.0, Split::Train));
        reproject_supervision(&sup, &mut m, 5.0);
        assert!((m.nodes()[0].frame.segments[0].label.unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn later_pass_replaces_labels() {
        let mut sup = SupervisionGraph::new(5, 0.1);
        sup.add(sup_node(1.0, 1.0, &[(0, 0)], 0.6));
        let mut m = MissionGraph::new(0.5);
        m.add(MissionNode::new(frame(vec![vec![(0, 0)]]), 0.0, Split::Train));
        reproject_supervision(&sup, &mut m, 5.0);
        assert_eq!(m.nodes()[0].frame.segments[0].label, Some(0.6));
        sup.add(sup_node(1.5, 1.5, &[(0, 0)], 0.9));
        reproject_supervision(&sup, &mut m, 5.0);
        assert_eq!(m.nodes()[0].frame.segments[0].label, Some(0.9));
    }

    #[test]
    fn nodes_outside_window_untouched_and_zero_clamped() {
        let mut sup = SupervisionGraph::new(5, 0.1);
        sup.add(sup_node(10.0, 10.0, &[(0, 0)], 0.0));
        let mut m = MissionGraph::new(0.5);
        m.add(MissionNode::new(frame(vec![vec![(0, 0)]]), 0.0, Split::Train));
        let mut near = frame(vec![vec![(0, 0)]]);
        near.pose.x = 9.0;
        m.add(MissionNode::new(near, 9.0, Split::Train));
        assert_eq!(reproject_supervision(&sup, &mut m, 5.0), 1);
        assert_eq!(m.nodes()[0].frame.segments[0].label, None);
        assert_eq!(m.nodes()[1].frame.segments[0].label, Some(LABEL_EPS));
    }

    #[test]
    fn footprint_contains_own_cell() {
        let g = GridGeometry::new(10, 10, 0.25);
        let cells = footprint_cells(&g, &Pose2::new(1.1, 1.1, 0.0), 0.3);
        assert!(cells.contains(&Cell::new(4, 4)));
        // Radius 0.3 m on 0.25 m cells: own cell plus 4-neighbourhood-ish.
        assert!(cells.len() >= 4 && cells.len() <= 9, "{cells:?}");
        let tiny = footprint_cells(&GridGeometry::new(4, 4, 2.0), &Pose2::new(1.9, 1.9, 0.0), 0.01);
        assert_eq!(tiny, vec![Cell::new(0, 0)]);
    }

    proptest! {
        #[test]
        fn ring_buffer_bound(cap in 1usize..10, steps in proptest::collection::vec(0.0f64..0.3, 0..100)) {
            let mut g = SupervisionGraph::new(cap, 0.1);
            let mut x = 0.0;
            for d in steps {
                x += d;
                g.add(sup_node(x, x, &[(0, 0)], 0.5));
                prop_assert!(g.len() <= cap);
            }
            let xs: Vec<f64> = g.nodes().map(|n| n.pose.x).collect();
            for w in xs.windows(2) {
                prop_assert!(w[1] - w[0] >= 0.1 - 1e-12);
            }
        }

        #[test]
        fn reprojection_provenance_range_idempotence(
            scores in proptest::collection::vec(0.0f64..=1.0, 1..8),
            cells in proptest::collection::vec((0usize..6, 0usize..3), 1..8),
        ) {
            let mut sup = SupervisionGraph::new(20, 0.1);
            for (i, (s, c)) in scores.iter().zip(cells.iter().cycle()).enumerate() {
                sup.add(sup_node(i as f64 * 0.2, i as f64 * 0.2, &[*c], *s));
            }
            let all: Vec<Vec<(usize, usize)>> = (0..3).map(|y| (0..6).map(|x| (x, y)).collect()).collect();
            let mut m = MissionGraph::new(0.5);
            m.add(MissionNode::new(frame(all), 0.0, Split::Train));
            reproject_supervision(&sup, &mut m, 100.0);
            let first = m.nodes()[0].clone();
            reproject_supervision(&sup, &mut m, 100.0);
            prop_assert_eq!(&first, &m.nodes()[0]);
            let footprint: Vec<Cell> = sup.nodes().flat_map(|n| n.footprint_cells.clone()).collect();
            for seg in &first.frame.segments {
                if let Some(l) = seg.label {
                    prop_assert!((LABEL_EPS..=1.0).contains(&l));
                    prop_assert!(seg.cells.iter().any(|c| footprint.contains(c)));
                }
            }
        }
    }
}
