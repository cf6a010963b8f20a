use serde::{Deserialize, Serialize};

use super::linalg3::{self as la, Mat3, Vec3, IDENTITY3};
use crate::error::{Error, Result};
use crate::numerics::RngState;

pub const ROTATION_TOL: f64 = 1e-9;

/// Camera-to-world rigid transform: a local point `x` lands at `R x + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSE3 {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl PoseSE3 {
    pub const IDENTITY: PoseSE3 = PoseSE3 {
        rotation: IDENTITY3,
        translation: [0.0; 3],
    };

    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let pose = Self { rotation, translation };
        pose.validate()?;
        Ok(pose)
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self {
            rotation: IDENTITY3,
            translation: t,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rotation.iter().flatten().chain(&self.translation).all(|v| v.is_finite()) {
            return Err(Error::Pose("non-finite entries".into()));
        }
        let defect = la::rotation_defect(&self.rotation);
        if defect > ROTATION_TOL {
            return Err(Error::Pose(format!("rotation off SO(3) by {defect:.3e}")));
        }
        Ok(())
    }

    pub fn random(rng: &mut RngState, translation_std: f64) -> Self {
        Self {
            rotation: la::random_rotation(rng),
            translation: [
                translation_std * rng.normal(),
                translation_std * rng.normal(),
                translation_std * rng.normal(),
            ],
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &PoseSE3) -> PoseSE3 {
        PoseSE3 {
            rotation: la::mat_mul(&self.rotation, &other.rotation),
            translation: la::add(la::mat_vec(&self.rotation, other.translation), self.translation),
        }
    }

    pub fn inverse(&self) -> PoseSE3 {
        let rt = la::transpose(&self.rotation);
        PoseSE3 {
            rotation: rt,
            translation: la::scale(la::mat_vec(&rt, self.translation), -1.0),
        }
    }

    pub fn transform_point(&self, x: Vec3) -> Vec3 {
        la::add(la::mat_vec(&self.rotation, x), self.translation)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        self.translation
    }

    /// Row-major `[R | t]`, the layout of one line of a KITTI pose file.
    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0], r[0][1], r[0][2], t[0], r[1][0], r[1][1], r[1][2], t[1], r[2][0], r[2][1], r[2][2], t[2],
        ]
    }

    /// Inverse of [`to_row_major_3x4`](Self::to_row_major_3x4), without validation.
    pub fn from_row_major_3x4(v: &[f64; 12]) -> Self {
        Self {
            rotation: [[v[0], v[1], v[2]], [v[4], v[5], v[6]], [v[8], v[9], v[10]]],
            translation: [v[3], v[7], v[11]],
        }
    }

    pub fn max_abs_diff(&self, other: &PoseSE3) -> f64 {
        self.to_row_major_3x4()
            .iter()
            .zip(other.to_row_major_3x4().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn se3_compose(a: &PoseSE3, b: &PoseSE3) -> Result<PoseSE3> {
    a.validate()?;
    b.validate()?;
    Ok(a.compose(b))
}

pub fn se3_inverse(a: &PoseSE3) -> Result<PoseSE3> {
    a.validate()?;
    Ok(a.inverse())
}

/// `x ↦ s R x + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilaritySim3 {
    pub scale: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl SimilaritySim3 {
    pub const IDENTITY: SimilaritySim3 = SimilaritySim3 {
        scale: 1.0,
        rotation: IDENTITY3,
        translation: [0.0; 3],
    };

    pub fn new(scale: f64, rotation: Mat3, translation: Vec3) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Pose(format!("similarity scale {scale} must be positive")));
        }
        PoseSE3::new(rotation, translation)?;
        Ok(Self {
            scale,
            rotation,
            translation,
        })
    }

    pub fn from_rigid(p: &PoseSE3) -> Self {
        Self {
            scale: 1.0,
            rotation: p.rotation,
            translation: p.translation,
        }
    }

    pub fn rigid_part(&self) -> PoseSE3 {
        PoseSE3 {
            rotation: self.rotation,
            translation: self.translation,
        }
    }

    pub fn transform_point(&self, x: Vec3) -> Vec3 {
        la::add(la::scale(la::mat_vec(&self.rotation, x), self.scale), self.translation)
    }

    pub fn compose(&self, other: &SimilaritySim3) -> SimilaritySim3 {
        SimilaritySim3 {
            scale: self.scale * other.scale,
            rotation: la::mat_mul(&self.rotation, &other.rotation),
            translation: self.transform_point(other.translation),
        }
    }

    pub fn inverse(&self) -> SimilaritySim3 {
        let rt = la::transpose(&self.rotation);
        let inv_s = 1.0 / self.scale;
        SimilaritySim3 {
            scale: inv_s,
            rotation: rt,
            translation: la::scale(la::mat_vec(&rt, self.translation), -inv_s),
        }
    }

    /// Sum of squared residuals `Σ ‖g(srcᵢ) − dstᵢ‖²`.
    pub fn residual(&self, src: &[Vec3], dst: &[Vec3]) -> f64 {
        src.iter()
            .zip(dst)
            .map(|(s, d)| {
                let e = la::sub(self.transform_point(*s), *d);
                la::dot(e, e)
            })
            .sum()
    }
}

/// Re-express a camera-to-world pose in the world frame mapped by `g`.
///
/// Rotation becomes `g.R · T.R`, translation `g.s · g.R · T.t + g.t`.
pub fn sim3_apply(g: &SimilaritySim3, pose: &PoseSE3) -> PoseSE3 {
    PoseSE3 {
        rotation: la::mat_mul(&g.rotation, &pose.rotation),
        translation: g.transform_point(pose.translation),
    }
}
