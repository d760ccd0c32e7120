//! Run artifacts. Every writer here targets a path under the run's output
//! directory.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use wvn_core::graphs::{write_mission_dump, MissionGraph};
use wvn_core::learner::{write_checkpoint, Checkpoint, TrainMetrics};
use wvn_core::navstack::{sdf, to_u8, write_pgm, Costmap};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::sim::Simulation;

pub const METRICS_HEADER: &str = "step,wall_ms,L_total,L_trav,L_reco,mu_pos,sigma_pos,tau_thr,val_acc";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricRow {
    pub step: u64,
    pub wall_ms: u64,
    pub l_total: f64,
    pub l_trav: f64,
    pub l_reco: f64,
    pub mu_pos: f64,
    pub sigma_pos: f64,
    pub tau_thr: f64,
    /// Empty in the CSV when no validation data existed yet.
    pub val_acc: Option<f64>,
}

impl MetricRow {
    pub fn new(m: &TrainMetrics, wall_ms: u64, val_acc: Option<f64>) -> Self {
        Self {
            step: m.step,
            wall_ms,
            l_total: m.l_total,
            l_trav: m.l_trav,
            l_reco: m.l_reco,
            mu_pos: m.mu_pos,
            sigma_pos: m.sigma_pos,
            tau_thr: m.tau_thr,
            val_acc,
        }
    }
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},",
            r.step, r.wall_ms, r.l_total, r.l_trav, r.l_reco, r.mu_pos, r.sigma_pos, r.tau_thr
        );
        if let Some(a) = r.val_acc {
            let _ = write!(s, "{a}");
        }
        s.push('\n');
    }
    s
}

/// Output directory of one run.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
    written: Vec<String>,
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root, written: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    fn open(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.written.push(name.to_owned());
        Ok(BufWriter::new(File::create(self.root.join(name))?))
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let mut w = self.open(name)?;
        w.write_all(text.as_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| crate::error::HarnessError::Run(e.to_string()))?;
        self.write_text(name, &(text + "\n"))
    }

    pub fn write_metrics(&mut self, rows: &[MetricRow]) -> Result<()> {
        self.write_text("metrics.csv", &metrics_csv(rows))
    }

    pub fn write_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let mut w = self.open("checkpoint.wvn")?;
        write_checkpoint(ckpt, &mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_mission(&mut self, graph: &MissionGraph, embedding_dim: usize) -> Result<()> {
        let mut w = self.open("mission.jsonl")?;
        write_mission_dump(graph, embedding_dim, &mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Writes the gt, fused, confidence, costmap and sdf layers as
    /// `{step}_{layer}.pgm`.
    pub fn dump_maps(&mut self, step: u64, sim: &Simulation, costmap: &Costmap) -> Result<()> {
        let g = *sim.world.grid.geometry();
        let field = sdf(costmap);
        let max = field.max_finite().max(g.cell_size);
        let sdf_px: Vec<f64> = field.dist.iter().map(|&d| if d.is_finite() { d } else { max }).collect();
        let cost_px: Vec<f64> = costmap.blocked.iter().map(|&b| if b { 0.0 } else { 1.0 }).collect();
        let layers: [(&str, Vec<u8>); 5] = [
            ("gt", to_u8(&sim.gt_layer(), 0.0, 1.0)),
            ("fused", to_u8(&sim.map.trav_layer(0.0), 0.0, 1.0)),
            ("confidence", to_u8(&sim.map.conf_layer(0.0), 0.0, 1.0)),
            ("costmap", to_u8(&cost_px, 0.0, 1.0)),
            ("sdf", to_u8(&sdf_px, 0.0, max)),
        ];
        for (name, px) in layers {
            let mut w = self.open(&format!("{step}_{name}.pgm"))?;
            write_pgm(&mut w, g.width, g.height, &px)?;
            w.flush()?;
        }
        Ok(())
    }

    /// Config echo, seed and format versions: enough to replay the run.
    pub fn write_manifest(&mut self, cfg: &ExperimentConfig, extra: serde_json::Value) -> Result<()> {
        let mut files = self.written.clone();
        files.push("manifest.json".into());
        let manifest = serde_json::json!({
            "mode": cfg.run.mode.name(),
            "seed": cfg.run.seed,
            "world": cfg.run.world,
            "deterministic": cfg.run.deterministic,
            "versions": {
                "wvn": env!("CARGO_PKG_VERSION"),
                "checkpoint_format": 1,
                "mission_dump_format": 1,
                "telemetry_protocol": wvn_telemetry::PROTOCOL_VERSION,
            },
            "config": cfg.to_toml(),
            "files": files,
            "summary": extra,
        });
        self.write_json("manifest.json", &manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let m = TrainMetrics {
            step: 3,
            l_total: 0.5,
            l_trav: 0.25,
            l_reco: 1.0,
            mu_pos: 0.1,
            sigma_pos: 0.2,
            tau_thr: 0.5,
            batch_segments: 4,
        };
        let csv = metrics_csv(&[MetricRow::new(&m, 300, None), MetricRow::new(&m, 400, Some(87.5))]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines[1], "3,300,0.5,0.25,1,0.1,0.2,0.5,");
        assert_eq!(lines[2], "3,400,0.5,0.25,1,0.1,0.2,0.5,87.5");
        assert_eq!(metrics_csv(&[]), format!("{METRICS_HEADER}\n"));
    }
}
