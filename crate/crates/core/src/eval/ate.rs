use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::linalg3 as la;
use crate::geometry::{umeyama_align, SimilaritySim3, Trajectory};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AteAlignment {
    #[default]
    Sim3,
    Se3,
}

impl std::str::FromStr for AteAlignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sim3" => Ok(Self::Sim3),
            "se3" => Ok(Self::Se3),
            other => Err(Error::Config(format!("unknown ATE alignment `{other}` (sim3 or se3)"))),
        }
    }
}

/// Camera-center error after the best alignment of prediction onto ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AteReport {
    pub rmse: f64,
    pub mean: f64,
    pub max: f64,
    pub n_frames: usize,
    pub alignment: AteAlignment,
    /// Maps predicted centers into the ground-truth frame.
    pub transform: SimilaritySim3,
    pub frame_ids: Vec<usize>,
    pub errors: Vec<f64>,
}

pub fn compute_ate(pred: &Trajectory, gt: &Trajectory, alignment: AteAlignment) -> Result<AteReport> {
    if pred.frame_ids() != gt.frame_ids() {
        return Err(Error::Alignment(format!(
            "predicted trajectory has {} frames, ground truth {}, or their ids differ",
            pred.len(),
            gt.len()
        )));
    }
    let n = gt.len();
    if n < 3 {
        return Err(Error::Degenerate(format!("ATE needs at least 3 frames, got {n}")));
    }
    let src = pred.centers();
    let dst = gt.centers();
    let mut g = umeyama_align(&src, &dst, alignment == AteAlignment::Sim3)?;
    if src == dst {
        // the fit is exactly the identity; skip its rounding residue
        g = SimilaritySim3::IDENTITY;
    }
    let errors: Vec<f64> = src
        .iter()
        .zip(&dst)
        .map(|(p, q)| la::norm(la::sub(g.transform_point(*p), *q)))
        .collect();
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n as f64).sqrt();
    Ok(AteReport {
        rmse,
        mean: errors.iter().sum::<f64>() / n as f64,
        max: errors.iter().copied().fold(0.0, f64::max),
        n_frames: n,
        alignment,
        transform: g,
        frame_ids: gt.frame_ids(),
        errors,
    })
}
