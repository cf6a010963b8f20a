use serde::{Deserialize, Serialize};

use super::linalg3::Vec3;
use super::pose::{PoseSE3, SimilaritySim3};
use crate::error::{Error, Result};

/// Per-pixel 3D points in the frame's own camera coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pointmap {
    pub height: usize,
    pub width: usize,
    /// Row-major, `height × width` entries.
    pub points: Vec<Vec3>,
    pub valid: Vec<bool>,
}

impl Pointmap {
    pub fn new(height: usize, width: usize, points: Vec<Vec3>, valid: Vec<bool>) -> Result<Self> {
        let n = height * width;
        if points.len() != n || valid.len() != n {
            return Err(Error::shape(format!(
                "pointmap {height}x{width} with {} points and {} flags",
                points.len(),
                valid.len()
            )));
        }
        for (i, (p, ok)) in points.iter().zip(&valid).enumerate() {
            if *ok && !(p.iter().all(|v| v.is_finite()) && p[2] > 0.0) {
                return Err(Error::Data(format!("pixel {i} marked valid with point {p:?}")));
            }
        }
        Ok(Self {
            height,
            width,
            points,
            valid,
        })
    }

    /// Validity derived from the points: finite with positive depth.
    pub fn from_points(height: usize, width: usize, points: Vec<Vec3>) -> Result<Self> {
        let valid = points
            .iter()
            .map(|p| p.iter().all(|v| v.is_finite()) && p[2] > 0.0)
            .collect();
        Self::new(height, width, points, valid)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn depth(&self, i: usize) -> f64 {
        self.points[i][2]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn scaled(&self, s: f64) -> Pointmap {
        Pointmap {
            height: self.height,
            width: self.width,
            points: self.points.iter().map(|p| super::linalg3::scale(*p, s)).collect(),
            valid: self.valid.clone(),
        }
    }

    /// Average the valid points of each block to reach `height × width`.
    /// Blocks without a valid pixel stay invalid.
    pub fn downsample(&self, height: usize, width: usize) -> Result<Pointmap> {
        if height == 0 || width == 0 || self.height % height != 0 || self.width % width != 0 {
            return Err(Error::shape(format!(
                "cannot pool {}x{} into {height}x{width}",
                self.height, self.width
            )));
        }
        let (bh, bw) = (self.height / height, self.width / width);
        let mut points = Vec::with_capacity(height * width);
        let mut valid = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                let mut acc = [0.0; 3];
                let mut n = 0usize;
                for i in r * bh..(r + 1) * bh {
                    for j in c * bw..(c + 1) * bw {
                        let k = i * self.width + j;
                        if self.valid[k] {
                            acc = super::linalg3::add(acc, self.points[k]);
                            n += 1;
                        }
                    }
                }
                if n > 0 {
                    points.push(super::linalg3::scale(acc, 1.0 / n as f64));
                } else {
                    points.push([0.0; 3]);
                }
                valid.push(n > 0);
            }
        }
        Pointmap::new(height, width, points, valid)
    }
}

/// Points after mapping into world coordinates; invalid entries keep their
/// local values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldPoints {
    pub points: Vec<Vec3>,
    pub valid: Vec<bool>,
}

pub fn transform_pointmap(pose: &PoseSE3, pm: &Pointmap) -> WorldPoints {
    let points = pm
        .points
        .iter()
        .zip(&pm.valid)
        .map(|(p, ok)| if *ok { pose.transform_point(*p) } else { *p })
        .collect();
    WorldPoints {
        points,
        valid: pm.valid.clone(),
    }
}

pub fn transform_world_points(g: &SimilaritySim3, w: &WorldPoints) -> WorldPoints {
    WorldPoints {
        points: w
            .points
            .iter()
            .zip(&w.valid)
            .map(|(p, ok)| if *ok { g.transform_point(*p) } else { *p })
            .collect(),
        valid: w.valid.clone(),
    }
}

/// Ordered `(frame_id, pose)` sequence with strictly increasing ids.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    entries: Vec<(usize, PoseSE3)>,
}

impl Trajectory {
    pub fn new(entries: Vec<(usize, PoseSE3)>) -> Result<Self> {
        if let Some(w) = entries.windows(2).find(|w| w[0].0 >= w[1].0) {
            return Err(Error::Data(format!(
                "frame ids must increase strictly ({} then {})",
                w[0].0, w[1].0
            )));
        }
        Ok(Self { entries })
    }

    /// Frames numbered `0..poses.len()`.
    pub fn from_poses(poses: Vec<PoseSE3>) -> Self {
        Self {
            entries: poses.into_iter().enumerate().collect(),
        }
    }

    pub fn entries(&self) -> &[(usize, PoseSE3)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn frame_ids(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn poses(&self) -> Vec<PoseSE3> {
        self.entries.iter().map(|e| e.1).collect()
    }

    pub fn centers(&self) -> Vec<Vec3> {
        self.entries.iter().map(|e| e.1.center()).collect()
    }

    pub fn map_poses(&self, f: impl Fn(&PoseSE3) -> PoseSE3) -> Trajectory {
        Trajectory {
            entries: self.entries.iter().map(|(i, p)| (*i, f(p))).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::linalg3 as la;
    use super::*;
    use crate::numerics::RngState;

    fn random_pointmap(rng: &mut RngState, h: usize, w: usize) -> Pointmap {
        let pts = (0..h * w)
            .map(|_| [rng.normal(), rng.normal(), rng.uniform(1.0, 5.0)])
            .collect();
        Pointmap::from_points(h, w, pts).unwrap()
    }

    #[test]
    fn downsample_averages_valid_blocks() {
        let mut rng = RngState::new(3);
        let mut pm = random_pointmap(&mut rng, 4, 6);
        pm.valid[0] = false;
        for k in [1, 6, 7] {
            pm.valid[k] = false;
        }
        let small = pm.downsample(2, 3).unwrap();
        assert!(!small.valid[0]);
        let expect = la::scale(la::add(la::add(pm.points[2], pm.points[3]), la::add(pm.points[8], pm.points[9])), 0.25);
        assert!(la::norm(la::sub(small.points[1], expect)) < 1e-15);
        let full = random_pointmap(&mut rng, 4, 6);
        assert_eq!(full.downsample(4, 6).unwrap(), full);
        assert!(pm.downsample(3, 3).is_err());
    }

    #[test]
    fn identity_pose_leaves_points() {
        let mut rng = RngState::new(1);
        let pm = random_pointmap(&mut rng, 3, 4);
        assert_eq!(transform_pointmap(&PoseSE3::IDENTITY, &pm).points, pm.points);
    }

    #[test]
    fn translation_shifts_points() {
        let mut rng = RngState::new(2);
        let pm = random_pointmap(&mut rng, 2, 2);
        let t = [1.0, -2.0, 0.5];
        let w = transform_pointmap(&PoseSE3::from_translation(t), &pm);
        for (a, b) in w.points.iter().zip(&pm.points) {
            assert_eq!(*a, la::add(*b, t));
        }
    }

    #[test]
    fn round_trip_through_inverse() {
        let mut rng = RngState::new(3);
        let pm = random_pointmap(&mut rng, 4, 4);
        let pose = PoseSE3::random(&mut rng, 3.0);
        let w = transform_pointmap(&pose, &pm);
        let inv = pose.inverse();
        for (wp, p) in w.points.iter().zip(&pm.points) {
            assert!(la::norm(la::sub(inv.transform_point(*wp), *p)) < 1e-12);
        }
    }

    #[test]
    fn invalid_pixels_untouched() {
        let pm = Pointmap::from_points(1, 2, vec![[1.0, 1.0, -1.0], [0.0, 0.0, 2.0]]).unwrap();
        assert_eq!(pm.valid, vec![false, true]);
        let w = transform_pointmap(&PoseSE3::from_translation([5.0, 0.0, 0.0]), &pm);
        assert_eq!(w.points[0], [1.0, 1.0, -1.0]);
        assert_eq!(w.points[1], [5.0, 0.0, 2.0]);
    }

    #[test]
    fn sim3_pose_consistent_with_point_mapping() {
        let mut rng = RngState::new(4);
        let pm = random_pointmap(&mut rng, 3, 3);
        let pose = PoseSE3::random(&mut rng, 2.0);
        let g = SimilaritySim3::new(1.7, la::random_rotation(&mut rng), [0.3, 1.0, -2.0]).unwrap();
        // mapping local points through g∘T with the pointmap scaled by g.s
        let moved = super::super::pose::sim3_apply(&g, &pose);
        let via_pose = transform_pointmap(&moved, &pm.scaled(g.scale));
        let via_points = transform_world_points(&g, &transform_pointmap(&pose, &pm));
        for (a, b) in via_pose.points.iter().zip(&via_points.points) {
            assert!(la::norm(la::sub(*a, *b)) < 1e-12);
        }
    }

    #[test]
    fn malformed_pointmaps_are_rejected() {
        assert!(Pointmap::new(2, 2, vec![[0.0, 0.0, 1.0]; 3], vec![true; 3]).is_err());
        assert!(matches!(
            Pointmap::new(1, 1, vec![[0.0, 0.0, -1.0]], vec![true]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn trajectory_ids_must_increase() {
        let p = PoseSE3::IDENTITY;
        assert!(Trajectory::new(vec![(0, p), (2, p)]).is_ok());
        assert!(Trajectory::new(vec![(1, p), (1, p)]).is_err());
    }
}
