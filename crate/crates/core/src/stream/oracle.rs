use serde::{Deserialize, Serialize};

use super::partition::PartitionPlan;
use super::scene::SyntheticScene;
use crate::alignment::ChunkPrediction;
use crate::error::{Error, Result};
use crate::geometry::linalg3 as la;
use crate::geometry::{sim3_apply, PoseSE3, SimilaritySim3};
use crate::numerics::RngState;
use crate::ttt::reset_due;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaugeMode {
    /// Predictions share the ground-truth frame.
    #[default]
    None,
    PerChunkSe3,
    PerChunkSim3,
}

impl std::str::FromStr for GaugeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "per_chunk_se3" | "se3" => Ok(Self::PerChunkSe3),
            "per_chunk_sim3" | "sim3" => Ok(Self::PerChunkSim3),
            other => Err(Error::Config(format!("unknown gauge mode `{other}`"))),
        }
    }
}

/// Ground truth re-expressed in random per-chunk gauges, optionally noised.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub gauge_mode: GaugeMode,
    /// Translation noise per frame, in scene units.
    pub sigma_t: f64,
    /// Rotation noise per frame, in radians.
    pub sigma_r: f64,
    /// Log-normal scale noise applied to each frame's pointmap.
    pub sigma_s: f64,
    /// 0 draws a fresh gauge for every chunk; `p > 0` keeps one gauge until the
    /// next chunk where a state reset with period `p` is due.
    pub gauge_period: usize,
    pub seed: u64,
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sigma_t", self.sigma_t), ("sigma_r", self.sigma_r), ("sigma_s", self.sigma_s)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be finite and non-negative")));
            }
        }
        Ok(())
    }

    /// Index of the gauge used by chunk `m`.
    pub fn gauge_epoch(&self, m: usize) -> usize {
        if self.gauge_period == 0 {
            return m;
        }
        (1..=m).filter(|&j| reset_due(j, self.gauge_period)).count()
    }

    /// Gauge of chunk `m`: identity, a random rigid motion or a random similarity.
    pub fn gauge(&self, m: usize) -> SimilaritySim3 {
        let mut rng = RngState::new(self.seed).derive(0x6A09_E667 + self.gauge_epoch(m) as u64);
        let rotation = la::random_rotation(&mut rng);
        let translation = [3.0 * rng.normal(), 3.0 * rng.normal(), 3.0 * rng.normal()];
        match self.gauge_mode {
            GaugeMode::None => SimilaritySim3::IDENTITY,
            GaugeMode::PerChunkSe3 => SimilaritySim3 {
                scale: 1.0,
                rotation,
                translation,
            },
            GaugeMode::PerChunkSim3 => SimilaritySim3 {
                scale: rng.uniform(-1.0, 1.0).exp(),
                rotation,
                translation,
            },
        }
    }
}

/// Prediction for chunk `m` of `plan`.
pub fn oracle_chunk(scene: &SyntheticScene, plan: &PartitionPlan, m: usize, cfg: &OracleConfig) -> Result<ChunkPrediction> {
    cfg.validate()?;
    let span = plan
        .chunks
        .get(m)
        .ok_or_else(|| Error::Config(format!("chunk {m} outside a {}-chunk plan", plan.len())))?;
    if span.end > scene.len() {
        return Err(Error::Config(format!(
            "plan covers {} frames, scene has {}",
            span.end,
            scene.len()
        )));
    }
    let g = cfg.gauge(m);
    let mut noise = RngState::new(cfg.seed).derive(0xBB67_AE85 + m as u64);
    let gt = scene.trajectory.entries();
    let mut poses = Vec::with_capacity(span.len());
    let mut pointmaps = Vec::with_capacity(span.len());
    for f in span.frames() {
        let mut pose = gt[f].1;
        if cfg.sigma_r > 0.0 {
            let w = [noise.normal(), noise.normal(), noise.normal()];
            pose.rotation = la::mat_mul(&la::rotation_from_axis_angle(la::scale(w, cfg.sigma_r)), &pose.rotation);
        }
        if cfg.sigma_t > 0.0 {
            let d = [noise.normal(), noise.normal(), noise.normal()];
            pose.translation = la::add(pose.translation, la::scale(d, cfg.sigma_t));
        }
        let local_scale = if cfg.sigma_s > 0.0 {
            (cfg.sigma_s * noise.normal()).exp()
        } else {
            1.0
        };
        poses.push(sim3_apply(&g, &pose));
        pointmaps.push(scene.pointmaps[f].scaled(g.scale * local_scale));
    }
    Ok(ChunkPrediction {
        chunk_index: m,
        frame_ids: span.frame_ids(),
        poses,
        pointmaps,
    })
}

/// Every chunk of `plan`, each in its own gauge.
pub fn oracle_predict(scene: &SyntheticScene, plan: &PartitionPlan, cfg: &OracleConfig) -> Result<Vec<ChunkPrediction>> {
    (0..plan.len()).map(|m| oracle_chunk(scene, plan, m, cfg)).collect()
}

/// Ground-truth poses of chunk `m` mapped through `g`.
pub fn gauge_poses(poses: &[PoseSE3], g: &SimilaritySim3) -> Vec<PoseSE3> {
    poses.iter().map(|p| sim3_apply(g, p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::{stitch_stream, AlignMode};
    use crate::stream::partition::partition_chunks;
    use crate::stream::scene::{generate_scene, MotionModel};

    #[test]
    fn no_gauge_no_noise_is_truth() {
        let scene = generate_scene(30, MotionModel::Turn, 1).unwrap();
        let plan = partition_chunks(30, 8, 2).unwrap();
        let preds = oracle_predict(&scene, &plan, &OracleConfig::default()).unwrap();
        for (c, span) in preds.iter().zip(&plan.chunks) {
            for (i, f) in span.frames().enumerate() {
                assert_eq!(c.poses[i], scene.trajectory.entries()[f].1);
                assert_eq!(c.pointmaps[i], scene.pointmaps[f]);
            }
        }
    }

    #[test]
    fn rigid_gauges_are_undone_by_rigid_stitching() {
        let scene = generate_scene(60, MotionModel::Loop, 2).unwrap();
        let plan = partition_chunks(60, 10, 2).unwrap();
        let cfg = OracleConfig {
            gauge_mode: GaugeMode::PerChunkSe3,
            seed: 5,
            ..OracleConfig::default()
        };
        let preds = oracle_predict(&scene, &plan, &cfg).unwrap();
        let stitched = stitch_stream(&preds, AlignMode::Rigid).unwrap();
        // the result is ground truth in the first chunk's gauge
        let g = cfg.gauge(0);
        let expect = gauge_poses(&scene.poses(), &g);
        for ((_, p), q) in stitched.trajectory.entries().iter().zip(&expect) {
            assert!(p.max_abs_diff(q) < 1e-9);
        }
    }

    #[test]
    fn gauge_period_shares_gauges_between_resets() {
        let cfg = OracleConfig {
            gauge_mode: GaugeMode::PerChunkSe3,
            gauge_period: 3,
            ..OracleConfig::default()
        };
        let epochs: Vec<usize> = (0..8).map(|m| cfg.gauge_epoch(m)).collect();
        assert_eq!(epochs, vec![0, 0, 0, 1, 1, 1, 2, 2]);
        assert_eq!(cfg.gauge(1), cfg.gauge(2));
        assert_ne!(cfg.gauge(2), cfg.gauge(3));
    }

    #[test]
    fn noise_is_per_chunk_and_reproducible() {
        let scene = generate_scene(30, MotionModel::Straight, 3).unwrap();
        let plan = partition_chunks(30, 8, 2).unwrap();
        let cfg = OracleConfig {
            gauge_mode: GaugeMode::PerChunkSim3,
            sigma_t: 0.01,
            sigma_r: 0.01,
            sigma_s: 0.02,
            seed: 9,
            ..OracleConfig::default()
        };
        let a = oracle_predict(&scene, &plan, &cfg).unwrap();
        assert_eq!(a, oracle_predict(&scene, &plan, &cfg).unwrap());
        assert_eq!(a[1], oracle_chunk(&scene, &plan, 1, &cfg).unwrap());
        for c in &a {
            for p in &c.poses {
                p.validate().unwrap();
            }
        }
        let bad = OracleConfig { sigma_s: -1.0, ..cfg };
        assert!(oracle_predict(&scene, &plan, &bad).is_err());
    }
}
