use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::partition::ChunkSpan;
use crate::error::{Error, Result};
use crate::geometry::linalg3::{self as la, Vec3};
use crate::geometry::{Pointmap, PoseSE3, Trajectory};
use crate::numerics::{RngState, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionModel {
    #[default]
    Straight,
    Turn,
    Loop,
}

impl std::str::FromStr for MotionModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "straight" => Ok(Self::Straight),
            "turn" => Ok(Self::Turn),
            "loop" => Ok(Self::Loop),
            other => Err(Error::Config(format!("unknown motion model `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub z_min: f64,
    pub z_max: f64,
    /// Camera travel per frame.
    pub step: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 4,
            width: 4,
            z_min: 1.0,
            z_max: 4.0,
            step: 0.1,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("scene frames need at least one pixel".into()));
        }
        if !(self.z_min > 0.0 && self.z_max > self.z_min && self.z_max.is_finite()) {
            return Err(Error::Config(format!(
                "depth range [{}, {}] must be positive and non-empty",
                self.z_min, self.z_max
            )));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Config(format!("step {} must be positive", self.step)));
        }
        Ok(())
    }
}

/// Ground-truth camera path and per-frame pointmaps of a static scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub trajectory: Trajectory,
    pub pointmaps: Vec<Pointmap>,
    pub motion: MotionModel,
    pub config: SceneConfig,
    pub seed: u64,
}

impl SyntheticScene {
    pub fn len(&self) -> usize {
        self.pointmaps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pointmaps.is_empty()
    }

    pub fn poses(&self) -> Vec<PoseSE3> {
        self.trajectory.poses()
    }

    /// Ground truth restricted to the frames of `span`.
    pub fn sub_trajectory(&self, span: &ChunkSpan) -> Trajectory {
        Trajectory::new(self.trajectory.entries()[span.frames()].to_vec()).expect("increasing ids")
    }

    /// Patch tokens of every frame in `span`, frame-major.
    pub fn chunk_features(&self, span: &ChunkSpan, grid: (usize, usize)) -> Result<Tensor> {
        let parts = self.pointmaps[span.frames()]
            .iter()
            .map(|pm| frame_features(pm, grid))
            .collect::<Result<Vec<_>>>()?;
        Tensor::concat_rows(&parts.iter().collect::<Vec<_>>())
    }
}

/// Cut a pointmap into a `rows × cols` grid of patches; each token lists the
/// patch's points row by row.
pub fn frame_features(pm: &Pointmap, grid: (usize, usize)) -> Result<Tensor> {
    let (gr, gc) = grid;
    if gr == 0 || gc == 0 || pm.height % gr != 0 || pm.width % gc != 0 {
        return Err(Error::Config(format!(
            "{}x{} pointmap does not split into a {gr}x{gc} patch grid",
            pm.height, pm.width
        )));
    }
    let (ph, pw) = (pm.height / gr, pm.width / gc);
    let mut data = Vec::with_capacity(pm.len() * 3);
    for r in 0..gr {
        for c in 0..gc {
            for y in r * ph..(r + 1) * ph {
                for x in c * pw..(c + 1) * pw {
                    data.extend_from_slice(&pm.points[y * pm.width + x]);
                }
            }
        }
    }
    Tensor::matrix(gr * gc, 3 * ph * pw, data)
}

/// Features per token for a frame of `config` cut into `grid`.
pub fn features_per_token(config: &SceneConfig, grid: (usize, usize)) -> usize {
    3 * (config.height / grid.0.max(1)) * (config.width / grid.1.max(1))
}

fn yaw_pitch(yaw: f64, pitch: f64) -> la::Mat3 {
    la::mat_mul(
        &la::rotation_from_axis_angle([0.0, yaw, 0.0]),
        &la::rotation_from_axis_angle([pitch, 0.0, 0.0]),
    )
}

fn centers_and_headings(n: usize, motion: MotionModel, step: f64, rng: &mut RngState) -> Vec<(Vec3, f64, f64)> {
    let phase = rng.uniform(0.0, 2.0 * PI);
    let sway = rng.uniform(0.5, 1.5);
    match motion {
        MotionModel::Straight => (0..n)
            .map(|i| {
                let t = i as f64;
                let c = [
                    0.3 * sway * (0.05 * t + phase).sin(),
                    0.05 * (0.11 * t + phase).sin(),
                    step * t,
                ];
                (c, 0.05 * (0.03 * t + phase).sin(), 0.02 * (0.07 * t + phase).cos())
            })
            .collect(),
        MotionModel::Turn => {
            let total = rng.uniform(0.5 * PI, PI) * if rng.uniform(0.0, 1.0) < 0.5 { -1.0 } else { 1.0 };
            let mut c: Vec3 = [0.0; 3];
            let denom = n.saturating_sub(1).max(1) as f64;
            (0..n)
                .map(|i| {
                    let u = i as f64 / denom;
                    let yaw = total * u * u * (3.0 - 2.0 * u);
                    let out = (c, yaw, 0.02 * (0.07 * i as f64 + phase).sin());
                    c = la::add(c, [step * yaw.sin(), 0.0, step * yaw.cos()]);
                    out
                })
                .collect()
        }
        MotionModel::Loop => {
            let radius = (step * n.saturating_sub(1) as f64 / (2.0 * PI)).max(0.5);
            let denom = n.saturating_sub(1).max(1) as f64;
            (0..n)
                .map(|i| {
                    let theta = 2.0 * PI * i as f64 / denom;
                    let c = [
                        radius * (1.0 - theta.cos()),
                        0.05 * radius * (2.0 * theta + phase).sin(),
                        radius * theta.sin(),
                    ];
                    (c, theta, 0.02 * (theta + phase).sin())
                })
                .collect()
        }
    }
}

fn surface(config: &SceneConfig, frame: usize, params: &[f64; 5]) -> Result<Pointmap> {
    let [fu, fv, phase, drift, mix] = *params;
    let mid = 0.5 * (config.z_min + config.z_max);
    let amp = 0.45 * (config.z_max - config.z_min);
    let t = drift * frame as f64 + phase;
    let mut pts = Vec::with_capacity(config.height * config.width);
    for y in 0..config.height {
        for x in 0..config.width {
            let u = (x as f64 + 0.5) / config.width as f64 - 0.5;
            let v = (y as f64 + 0.5) / config.height as f64 - 0.5;
            let wave = mix * (fu * u + fv * v + t).sin() + (1.0 - mix) * (fv * u - fu * v + 0.5 * t).cos();
            let z = mid + amp * wave;
            pts.push([u * z, v * z, z]);
        }
    }
    Pointmap::from_points(config.height, config.width, pts)
}

pub fn generate_scene(n_frames: usize, motion: MotionModel, seed: u64) -> Result<SyntheticScene> {
    generate_scene_with(n_frames, motion, &SceneConfig::default(), seed)
}

/// Reproducible smooth camera path with a smooth depth surface in front of
/// every camera.
pub fn generate_scene_with(n_frames: usize, motion: MotionModel, config: &SceneConfig, seed: u64) -> Result<SyntheticScene> {
    config.validate()?;
    if n_frames == 0 {
        return Err(Error::Config("a scene needs at least one frame".into()));
    }
    let root = RngState::new(seed);
    let mut path_rng = root.derive(1);
    let mut surf_rng = root.derive(2);
    let poses = centers_and_headings(n_frames, motion, config.step, &mut path_rng)
        .into_iter()
        .map(|(c, yaw, pitch)| PoseSE3 {
            rotation: yaw_pitch(yaw, pitch),
            translation: c,
        })
        .collect();
    let params = [
        surf_rng.uniform(2.0, 6.0),
        surf_rng.uniform(2.0, 6.0),
        surf_rng.uniform(0.0, 2.0 * PI),
        surf_rng.uniform(0.02, 0.1),
        surf_rng.uniform(0.3, 0.7),
    ];
    let pointmaps = (0..n_frames)
        .map(|f| surface(config, f, &params))
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticScene {
        trajectory: Trajectory::from_poses(poses),
        pointmaps,
        motion,
        config: *config,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible() {
        for motion in [MotionModel::Straight, MotionModel::Turn, MotionModel::Loop] {
            let a = generate_scene(40, motion, 7).unwrap();
            let b = generate_scene(40, motion, 7).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, generate_scene(40, motion, 8).unwrap());
        }
    }

    #[test]
    fn loop_closes() {
        for seed in 0..10 {
            let s = generate_scene(120, MotionModel::Loop, seed).unwrap();
            let c = s.trajectory.centers();
            let diameter = c
                .iter()
                .flat_map(|a| c.iter().map(move |b| la::norm(la::sub(*a, *b))))
                .fold(0.0, f64::max);
            assert!(la::norm(la::sub(c[0], c[119])) <= 0.01 * diameter);
        }
    }

    #[test]
    fn depths_in_range_and_motion_bounded() {
        let cfg = SceneConfig::default();
        for motion in [MotionModel::Straight, MotionModel::Turn, MotionModel::Loop] {
            let s = generate_scene(200, motion, 3).unwrap();
            for pm in &s.pointmaps {
                assert_eq!(pm.valid_count(), pm.len());
                for p in &pm.points {
                    assert!(p[2] >= cfg.z_min && p[2] <= cfg.z_max);
                }
            }
            for w in s.trajectory.poses().windows(2) {
                assert!(la::norm(la::sub(w[0].translation, w[1].translation)) < 3.0 * cfg.step);
                w[1].validate().unwrap();
            }
        }
    }

    #[test]
    fn patch_features_tile_the_frame() {
        let s = generate_scene(3, MotionModel::Straight, 1).unwrap();
        let f = frame_features(&s.pointmaps[0], (2, 2)).unwrap();
        assert_eq!(f.shape(), &[4, 12]);
        // top-left patch holds pixels (0,0), (0,1), (1,0), (1,1)
        assert_eq!(&f.row(0)[..3], &s.pointmaps[0].points[0]);
        assert_eq!(&f.row(0)[6..9], &s.pointmaps[0].points[4]);
        assert_eq!(&f.row(3)[9..12], &s.pointmaps[0].points[15]);
        let span = ChunkSpan { index: 0, start: 1, end: 3 };
        assert_eq!(s.chunk_features(&span, (2, 2)).unwrap().shape(), &[8, 12]);
        assert!(frame_features(&s.pointmaps[0], (3, 2)).is_err());
    }
}
