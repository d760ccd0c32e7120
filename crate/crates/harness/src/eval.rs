//! Cell-wise evaluation of a predictor against ground truth, self-supervised
//! labels, and two reference classifiers.
//!
//! A segment's prediction applies to every member cell, so each segment is
//! reduced once to the counts of GT-traversable and GT-blocked cells it
//! covers. Accuracy for any decision rule is then a weighted sum.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use wvn_core::graphs::{MissionNode, Split};
use wvn_core::learner::Predictor;
use wvn_core::world::{geometric_trav, TerrainGrid, GT_TRAVERSABLE};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub gt_accuracy: f64,
}

/// Accuracies are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub frames: usize,
    pub cells: usize,
    pub gt_accuracy: f64,
    /// Over cells of labeled segments; NaN-free: 0 cells reports 0.
    pub self_accuracy: f64,
    pub self_cells: usize,
    /// Slope-threshold baseline on the same cells.
    pub geometric_accuracy: f64,
    /// Nearest class prototype per segment; bounds what any embedding
    /// classifier can reach on the world.
    pub prototype_accuracy: f64,
    pub roc: Vec<RocPoint>,
    pub curve: Vec<CurvePoint>,
}

/// Flattened evaluation data for one split.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub split: Split,
    pub frames: usize,
    x: Array2<f64>,
    trav_cells: Vec<u32>,
    blocked_cells: Vec<u32>,
    /// Binarized self label per segment.
    self_label: Vec<Option<bool>>,
    geometric_correct: u64,
    prototype_correct: u64,
}

impl EvalSet {
    pub fn build(grid: &TerrainGrid, nodes: &[MissionNode], split: Split, slope_max: f64) -> Result<Self> {
        let dim = grid.embedding_dim();
        let geom = grid.geometry();
        let geometric = geometric_trav(grid, slope_max);
        let protos: Vec<(&[f64], bool)> = (0..grid.classes().len())
            .map(|i| (grid.prototype(i as u16), grid.classes()[i].gt_trav >= GT_TRAVERSABLE))
            .collect();

        let mut flat = Vec::new();
        let (mut trav_cells, mut blocked_cells, mut self_label) = (Vec::new(), Vec::new(), Vec::new());
        let (mut geometric_correct, mut prototype_correct) = (0, 0);
        let mut frames = 0;
        for node in nodes.iter().filter(|n| n.split == split) {
            frames += 1;
            for seg in &node.frame.segments {
                if seg.embedding.len() != dim {
                    return Err(HarnessError::Run(format!(
                        "segment embedding has dimension {}, world uses {dim}",
                        seg.embedding.len()
                    )));
                }
                flat.extend_from_slice(&seg.embedding);
                let proto_trav = nearest(&protos, &seg.embedding);
                let (mut t, mut b) = (0u32, 0u32);
                for &c in &seg.cells {
                    let gt = grid.gt_trav_at(c) >= GT_TRAVERSABLE;
                    if gt {
                        t += 1;
                    } else {
                        b += 1;
                    }
                    geometric_correct += u64::from((geometric[geom.index(c)] >= GT_TRAVERSABLE) == gt);
                    prototype_correct += u64::from(proto_trav == gt);
                }
                trav_cells.push(t);
                blocked_cells.push(b);
                self_label.push(seg.label.map(|l| l >= GT_TRAVERSABLE));
            }
        }
        let n = trav_cells.len();
        let x = Array2::from_shape_vec((n, dim), flat).expect("rows have the world dimension");
        Ok(Self { split, frames, x, trav_cells, blocked_cells, self_label, geometric_correct, prototype_correct })
    }

    pub fn segments(&self) -> usize {
        self.trav_cells.len()
    }

    pub fn cells(&self) -> u64 {
        self.trav_cells.iter().chain(&self.blocked_cells).map(|&c| u64::from(c)).sum()
    }

    fn decisions(&self, predictor: &Predictor) -> Result<(Vec<bool>, Vec<f64>)> {
        if self.segments() == 0 {
            return Ok((Vec::new(), Vec::new()));
        }
        let preds = predictor.predict_embeddings(self.x.view())?;
        Ok((preds.iter().map(|p| p.traversable).collect(), preds.iter().map(|p| p.trav).collect()))
    }

    /// GT accuracy in percent; 0 for an empty set.
    pub fn gt_accuracy(&self, predictor: &Predictor) -> Result<f64> {
        let (flags, _) = self.decisions(predictor)?;
        Ok(self.accuracy_of(&flags))
    }

    fn accuracy_of(&self, flags: &[bool]) -> f64 {
        let correct: u64 = flags
            .iter()
            .zip(self.trav_cells.iter().zip(&self.blocked_cells))
            .map(|(&f, (&t, &b))| u64::from(if f { t } else { b }))
            .sum();
        percent(correct, self.cells())
    }

    pub fn report(&self, predictor: &Predictor, curve: Vec<CurvePoint>) -> Result<EvalReport> {
        let (flags, trav) = self.decisions(predictor)?;
        let gt_accuracy = self.accuracy_of(&flags);

        let (mut self_correct, mut self_cells) = (0u64, 0u64);
        for (i, label) in self.self_label.iter().enumerate() {
            if let Some(l) = label {
                let cells = u64::from(self.trav_cells[i] + self.blocked_cells[i]);
                self_cells += cells;
                self_correct += if flags[i] == *l { cells } else { 0 };
            }
        }

        let pos: u64 = self.trav_cells.iter().map(|&c| u64::from(c)).sum();
        let neg: u64 = self.blocked_cells.iter().map(|&c| u64::from(c)).sum();
        let roc = (0..=20)
            .map(|k| {
                let threshold = k as f64 / 20.0;
                let (mut tp, mut fp) = (0u64, 0u64);
                for (i, &p) in trav.iter().enumerate() {
                    if p >= threshold {
                        tp += u64::from(self.trav_cells[i]);
                        fp += u64::from(self.blocked_cells[i]);
                    }
                }
                RocPoint { threshold, fpr: ratio(fp, neg), tpr: ratio(tp, pos) }
            })
            .collect();

        let cells = self.cells();
        Ok(EvalReport {
            split: self.split,
            frames: self.frames,
            cells: cells as usize,
            gt_accuracy,
            self_accuracy: percent(self_correct, self_cells),
            self_cells: self_cells as usize,
            geometric_accuracy: percent(self.geometric_correct, cells),
            prototype_accuracy: percent(self.prototype_correct, cells),
            roc,
            curve,
        })
    }
}

fn nearest(protos: &[(&[f64], bool)], e: &[f64]) -> bool {
    let d2 = |p: &[f64]| p.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    protos
        .iter()
        .map(|(p, t)| (d2(p), *t))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, t)| t)
        .unwrap_or(false)
}

fn percent(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use wvn_core::geometry::{Cell, Pose2};
    use wvn_core::learner::{ConfidenceStats, MlpModel, Mode};
    use wvn_core::world::{Segment, SegmentFrame, TerrainClass};
    use wvn_core::geometry::GridGeometry;

    fn grid() -> TerrainGrid {
        let classes = vec![
            TerrainClass { name: "ground".into(), gt_trav: 1.0, prototype: vec![1.0, 0.0] },
            TerrainClass { name: "rock".into(), gt_trav: 0.0, prototype: vec![0.0, 1.0] },
        ];
        let mut g = TerrainGrid::new(GridGeometry::new(4, 1, 1.0), classes, 0, 0.0, 0).unwrap();
        g.paint(Cell::new(3, 0), 1).unwrap();
        g
    }

    fn node(segments: Vec<Segment>) -> MissionNode {
        MissionNode::new(SegmentFrame { frame_id: 0, pose: Pose2::default(), segments }, 0.0, Split::Val)
    }

    fn seg(id: usize, cells: &[usize], e: [f64; 2], label: Option<f64>) -> Segment {
        Segment { id, cells: cells.iter().map(|&x| Cell::new(x, 0)).collect(), embedding: e.to_vec(), label }
    }

    /// Zero weights: every output is sigmoid(0) = 0.5.
    fn constant_half(mode: Mode) -> Predictor {
        Predictor { model: MlpModel::zeros(2, &[3]).unwrap(), stats: ConfidenceStats::new(2.0), tau_thr: 0.5, mode }
    }

    #[test]
    fn constant_predictor_counts_traversable_cells() {
        let g = grid();
        let nodes = vec![node(vec![seg(0, &[0, 1], [1.0, 0.0], Some(0.9)), seg(1, &[2, 3], [0.5, 0.5], None)])];
        let set = EvalSet::build(&g, &nodes, Split::Val, 1.0).unwrap();
        assert_eq!(set.cells(), 4);
        // 0.5 >= 0.5: everything predicted traversable, 3 of 4 cells are.
        let r = set.report(&constant_half(Mode::Full), Vec::new()).unwrap();
        assert_eq!(r.gt_accuracy, 75.0);
        assert_eq!(r.self_accuracy, 100.0);
        assert_eq!(r.self_cells, 2);
        assert_eq!(r.geometric_accuracy, 75.0);
        // ROC at threshold 0 accepts all.
        assert_eq!((r.roc[0].fpr, r.roc[0].tpr), (1.0, 1.0));
        assert_eq!((r.roc[20].fpr, r.roc[20].tpr), (0.0, 0.0));
    }

    #[test]
    fn prototype_classifier_is_cellwise() {
        let g = grid();
        let nodes = vec![node(vec![seg(0, &[0, 1, 2], [0.9, 0.1], None), seg(1, &[3], [0.1, 0.9], None)])];
        let r = EvalSet::build(&g, &nodes, Split::Val, 1.0).unwrap().report(&constant_half(Mode::Full), Vec::new()).unwrap();
        assert_eq!(r.prototype_accuracy, 100.0);
    }

    #[test]
    fn other_split_and_empty_sets() {
        let g = grid();
        let nodes = vec![node(vec![seg(0, &[0], [1.0, 0.0], None)])];
        let set = EvalSet::build(&g, &nodes, Split::Train, 1.0).unwrap();
        assert_eq!(set.segments(), 0);
        let r = set.report(&constant_half(Mode::Full), Vec::new()).unwrap();
        assert_eq!((r.gt_accuracy, r.cells), (0.0, 0));
    }
}
