use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{psnr, Image};
use crate::math::v3;
use crate::mesh::{mean_edge_length, Topology};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameError {
    pub frame: usize,
    /// Vertex errors against ground truth, as fractions of the mean frame-0 edge.
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    /// RMS vertex motion from the previous tracked frame (scene units).
    pub adjacent_rmse: f64,
    /// Same quantity for the ground truth.
    pub gt_adjacent_rmse: f64,
    /// PSNR between this frame's texture and the previous one.
    pub texture_adjacent_psnr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingReport {
    pub mean_edge_length: f64,
    pub frames: Vec<FrameError>,
}

/// Root-mean-square distance between matching vertices.
pub fn adjacent_rmse(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let s: f64 = a
        .iter()
        .zip(b)
        .map(|(p, q)| (v3(*p) - v3(*q)).norm_squared())
        .sum();
    (s / a.len() as f64).sqrt()
}

pub fn tracking_error(
    topology: &Topology,
    tracked: &[Vec<[f64; 3]>],
    ground_truth: &[Vec<[f64; 3]>],
) -> Result<TrackingReport> {
    if tracked.len() != ground_truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} tracked frames vs {} ground-truth frames",
            tracked.len(),
            ground_truth.len()
        )));
    }
    for (t, (a, b)) in tracked.iter().zip(ground_truth).enumerate() {
        if a.len() != topology.n_v() || b.len() != topology.n_v() {
            return Err(Error::ShapeMismatch(format!(
                "frame {t} does not have {} vertices",
                topology.n_v()
            )));
        }
    }
    let edge = ground_truth
        .first()
        .map(|f| mean_edge_length(topology, f))
        .unwrap_or(0.0);
    if tracked.is_empty() {
        return Ok(TrackingReport {
            mean_edge_length: edge,
            frames: Vec::new(),
        });
    }
    if !(edge > 0.0) {
        return Err(Error::DegenerateMesh("mean frame-0 edge length is zero".into()));
    }
    let frames = (0..tracked.len())
        .map(|t| {
            let mut errs: Vec<f64> = tracked[t]
                .iter()
                .zip(&ground_truth[t])
                .map(|(a, b)| (v3(*a) - v3(*b)).norm() / edge)
                .collect();
            let mean = errs.iter().sum::<f64>() / errs.len().max(1) as f64;
            errs.sort_by(f64::total_cmp);
            let median = match errs.len() {
                0 => 0.0,
                n if n % 2 == 1 => errs[n / 2],
                n => 0.5 * (errs[n / 2 - 1] + errs[n / 2]),
            };
            let (adj, gt_adj) = if t == 0 {
                (0.0, 0.0)
            } else {
                (
                    adjacent_rmse(&tracked[t], &tracked[t - 1]),
                    adjacent_rmse(&ground_truth[t], &ground_truth[t - 1]),
                )
            };
            FrameError {
                frame: t,
                mean,
                median,
                max: errs.last().copied().unwrap_or(0.0),
                adjacent_rmse: adj,
                gt_adjacent_rmse: gt_adj,
                texture_adjacent_psnr: None,
            }
        })
        .collect();
    Ok(TrackingReport {
        mean_edge_length: edge,
        frames,
    })
}

impl TrackingReport {
    /// Fills the adjacent-frame texture PSNR, restricted to `coverage`.
    pub fn set_texture_psnr(&mut self, textures: &[Image], coverage: Option<&[bool]>) -> Result<()> {
        if textures.len() != self.frames.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} textures for {} frames",
                textures.len(),
                self.frames.len()
            )));
        }
        for t in 1..textures.len() {
            self.frames[t].texture_adjacent_psnr = Some(psnr(&textures[t], &textures[t - 1], coverage)?);
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "frame,mean,median,max,adjacent_rmse,gt_adjacent_rmse,texture_adjacent_psnr\n",
        );
        for f in &self.frames {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                f.frame,
                f.mean,
                f.median,
                f.max,
                f.adjacent_rmse,
                f.gt_adjacent_rmse,
                f.texture_adjacent_psnr.map(|p| p.to_string()).unwrap_or_default()
            ));
        }
        s
    }
}
