//! Training objective: scale-aligned local pointmaps, relative poses, world points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::linalg3::{self as la, Mat3, Vec3};
use crate::geometry::{Pointmap, PoseSE3};

/// Smallest scale the solver returns; the objective is convex, so clamping is exact.
pub const MIN_SCALE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationLoss {
    #[default]
    Frobenius,
    Geodesic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_r: f64,
    pub lambda_t: f64,
    pub lambda_global: f64,
    pub huber_delta: f64,
    pub rotation: RotationLoss,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_r: 0.1,
            lambda_t: 10.0,
            lambda_global: 1.0,
            huber_delta: 1.0,
            rotation: RotationLoss::Frobenius,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        if !(ok(self.lambda_r) && ok(self.lambda_t) && ok(self.lambda_global)) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if !(self.huber_delta > 0.0) {
            return Err(Error::Config(format!("huber_delta {} must be positive", self.huber_delta)));
        }
        Ok(())
    }
}

/// Predictions and ground truth for one sequence. Pixel validity comes from
/// the ground-truth pointmaps.
#[derive(Clone, Debug, PartialEq)]
pub struct SupervisionBatch {
    pub pred_pointmaps: Vec<Pointmap>,
    pub gt_pointmaps: Vec<Pointmap>,
    pub pred_poses: Vec<PoseSE3>,
    pub gt_poses: Vec<PoseSE3>,
    pub pairs: Vec<(usize, usize)>,
}

/// Consecutive-frame pairs `(i, i + 1)`.
pub fn adjacent_pairs(n_frames: usize) -> Vec<(usize, usize)> {
    (1..n_frames).map(|i| (i - 1, i)).collect()
}

impl SupervisionBatch {
    pub fn validate(&self) -> Result<()> {
        let n = self.gt_pointmaps.len();
        if self.pred_pointmaps.len() != n || self.pred_poses.len() != n || self.gt_poses.len() != n {
            return Err(Error::shape(format!(
                "batch with {}/{} pointmaps and {}/{} poses",
                self.pred_pointmaps.len(),
                n,
                self.pred_poses.len(),
                self.gt_poses.len()
            )));
        }
        for (p, g) in self.pred_pointmaps.iter().zip(&self.gt_pointmaps) {
            if p.len() != g.len() {
                return Err(Error::shape("predicted and ground-truth pointmaps differ in size"));
            }
        }
        if let Some(&(i, j)) = self.pairs.iter().find(|(i, j)| *i >= n || *j >= n) {
            return Err(Error::shape(format!("pair ({i}, {j}) outside {n} frames")));
        }
        Ok(())
    }

    fn valid_pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.gt_pointmaps
            .iter()
            .enumerate()
            .flat_map(|(f, g)| (0..g.len()).filter(move |&p| g.valid[p]).map(move |p| (f, p)))
    }

    fn valid_count(&self) -> usize {
        self.gt_pointmaps.iter().map(Pointmap::valid_count).sum()
    }

    fn check_depths(&self) -> Result<()> {
        for (f, p) in self.valid_pixels() {
            let z = self.gt_pointmaps[f].depth(p);
            if !(z > 0.0) {
                return Err(Error::Data(format!("frame {f} pixel {p}: depth {z} on a valid pixel")));
            }
        }
        Ok(())
    }
}

/// Weighted-median minimizer of `Σ w |s − r|`, returned with its index.
fn weighted_median(mut items: Vec<(f64, f64, usize)>) -> Option<(f64, usize)> {
    items.retain(|(_, w, _)| *w > 0.0);
    if items.is_empty() {
        return None;
    }
    items.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = items.iter().map(|i| i.1).sum();
    let mut acc = 0.0;
    for (r, w, tag) in &items {
        acc += w;
        if acc >= 0.5 * total {
            return Some((*r, *tag));
        }
    }
    items.last().map(|(r, _, tag)| (*r, *tag))
}

/// Entry `(frame, pixel, component)` whose ratio is the solved scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScalePivot {
    pub frame: usize,
    pub pixel: usize,
    pub component: usize,
}

/// `s* = argmin_s Σ (1/z) ‖s x̂ − x‖₁` over valid pixels, with its pivot entry.
pub fn solve_sequence_scale_with_pivot(batch: &SupervisionBatch) -> Result<(f64, Option<ScalePivot>)> {
    batch.validate()?;
    batch.check_depths()?;
    let mut items = Vec::new();
    let mut tags = Vec::new();
    for (f, p) in batch.valid_pixels() {
        let xh = batch.pred_pointmaps[f].points[p];
        let x = batch.gt_pointmaps[f].points[p];
        let z = batch.gt_pointmaps[f].depth(p);
        for c in 0..3 {
            if xh[c] != 0.0 {
                items.push((x[c] / xh[c], xh[c].abs() / z, tags.len()));
                tags.push(ScalePivot {
                    frame: f,
                    pixel: p,
                    component: c,
                });
            }
        }
    }
    if batch.valid_count() == 0 {
        return Err(Error::Degenerate("no valid pixels in the batch".into()));
    }
    match weighted_median(items) {
        Some((s, tag)) if s >= MIN_SCALE => Ok((s, Some(tags[tag]))),
        Some(_) => Ok((MIN_SCALE, None)),
        None => Err(Error::Degenerate("all predicted points are zero".into())),
    }
}

pub fn solve_sequence_scale(batch: &SupervisionBatch) -> Result<f64> {
    Ok(solve_sequence_scale_with_pivot(batch)?.0)
}

fn check_scale(s: f64) -> Result<()> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Data(format!("scale {s} must be positive")));
    }
    Ok(())
}

/// One pixel's contribution `(1/z) ‖s x̂ − x‖₁`.
pub fn pixel_local_term(s: f64, pred: Vec3, gt: Vec3, z: f64) -> f64 {
    (0..3).map(|c| (s * pred[c] - gt[c]).abs()).sum::<f64>() / z
}

/// `(1/(N|Ω|)) Σ (1/z) ‖s x̂ − x‖₁`.
pub fn local_pointmap_loss(batch: &SupervisionBatch, s: f64) -> Result<f64> {
    batch.validate()?;
    batch.check_depths()?;
    check_scale(s)?;
    let n = batch.valid_count();
    if n == 0 {
        return Err(Error::Degenerate("no valid pixels in the batch".into()));
    }
    let mut total = 0.0;
    for (f, p) in batch.valid_pixels() {
        let xh = batch.pred_pointmaps[f].points[p];
        let x = batch.gt_pointmaps[f].points[p];
        let z = batch.gt_pointmaps[f].depth(p);
        total += pixel_local_term(s, xh, x, z);
    }
    Ok(total / n as f64)
}

/// `R_ij = R_iᵀ R_j`, `t_ij = R_iᵀ (t_j − t_i)`.
pub fn relative_motion(a: &PoseSE3, b: &PoseSE3) -> (Mat3, Vec3) {
    let rt = la::transpose(&a.rotation);
    (la::mat_mul(&rt, &b.rotation), la::mat_vec(&rt, la::sub(b.translation, a.translation)))
}

fn huber(r: f64, delta: f64) -> f64 {
    if r <= delta {
        0.5 * r * r
    } else {
        delta * (r - 0.5 * delta)
    }
}

fn rotation_term(pred: &Mat3, gt: &Mat3, kind: RotationLoss) -> f64 {
    match kind {
        RotationLoss::Frobenius => la::frobenius(&la::mat_sub(pred, gt)),
        RotationLoss::Geodesic => la::rotation_angle(&la::mat_mul(&la::transpose(pred), gt)),
    }
}

/// `Σ_P λ_r L_rot(R̂_ij, R_ij) + λ_t Huber(s t̂_ij − t_ij)`.
pub fn pose_loss(batch: &SupervisionBatch, s: f64, w: &LossWeights) -> Result<f64> {
    batch.validate()?;
    check_scale(s)?;
    w.validate()?;
    if batch.pairs.is_empty() {
        return Err(Error::Data("pose loss needs at least one frame pair".into()));
    }
    for p in batch.pred_poses.iter().chain(&batch.gt_poses) {
        p.validate()?;
    }
    let mut total = 0.0;
    for &(i, j) in &batch.pairs {
        let (rh, th) = relative_motion(&batch.pred_poses[i], &batch.pred_poses[j]);
        let (r, t) = relative_motion(&batch.gt_poses[i], &batch.gt_poses[j]);
        let e = la::sub(la::scale(th, s), t);
        total += w.lambda_r * rotation_term(&rh, &r, w.rotation) + w.lambda_t * huber(la::norm(e), w.huber_delta);
    }
    Ok(total)
}

fn world_point(pose: &PoseSE3, x: Vec3, s: f64) -> Vec3 {
    la::scale(pose.transform_point(x), s)
}

/// Mean absolute difference per coordinate between `s·Π(T̂, x̂)` and `Π(T, x)`.
///
/// Scaling the whole world point applies `s` to both the local point and the
/// camera translation.
pub fn global_pointmap_loss(batch: &SupervisionBatch, s: f64) -> Result<f64> {
    batch.validate()?;
    check_scale(s)?;
    for p in batch.pred_poses.iter().chain(&batch.gt_poses) {
        p.validate()?;
    }
    let n = batch.valid_count();
    if n == 0 {
        return Err(Error::Degenerate("no valid pixels in the batch".into()));
    }
    let mut total = 0.0;
    for (f, p) in batch.valid_pixels() {
        let a = world_point(&batch.pred_poses[f], batch.pred_pointmaps[f].points[p], s);
        let b = batch.gt_poses[f].transform_point(batch.gt_pointmaps[f].points[p]);
        total += (0..3).map(|c| (a[c] - b[c]).abs()).sum::<f64>();
    }
    Ok(total / (3 * n) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub scale: f64,
    pub local: f64,
    pub pose: f64,
    pub global: f64,
    pub lambda_global: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn recombine(&self) -> f64 {
        self.local + self.pose + self.lambda_global * self.global
    }
}

pub fn total_loss(batch: &SupervisionBatch, w: &LossWeights) -> Result<LossBreakdown> {
    let s = solve_sequence_scale(batch)?;
    total_loss_at_scale(batch, s, w)
}

pub fn total_loss_at_scale(batch: &SupervisionBatch, s: f64, w: &LossWeights) -> Result<LossBreakdown> {
    let local = local_pointmap_loss(batch, s)?;
    let pose = pose_loss(batch, s, w)?;
    let global = global_pointmap_loss(batch, s)?;
    let mut b = LossBreakdown {
        scale: s,
        local,
        pose,
        global,
        lambda_global: w.lambda_global,
        total: 0.0,
    };
    b.total = b.recombine();
    Ok(b)
}

/// Subgradients of the total loss with the solved scale held fixed.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    /// Per frame, per pixel, with respect to the predicted local point.
    pub points: Vec<Vec<Vec3>>,
    /// Per frame, with respect to the predicted camera translation.
    pub translations: Vec<Vec3>,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Analytic gradient of [`total_loss_at_scale`] for fixed `s`.
///
/// Away from the scale pivot the solved scale is locally constant, so this is
/// also the gradient of [`total_loss`] there.
pub fn total_loss_grad(batch: &SupervisionBatch, s: f64, w: &LossWeights) -> Result<LossGrad> {
    batch.validate()?;
    check_scale(s)?;
    let n = batch.valid_count();
    if n == 0 {
        return Err(Error::Degenerate("no valid pixels in the batch".into()));
    }
    let mut points: Vec<Vec<Vec3>> = batch.pred_pointmaps.iter().map(|pm| vec![[0.0; 3]; pm.len()]).collect();
    let mut translations = vec![[0.0; 3]; batch.pred_poses.len()];

    for (f, p) in batch.valid_pixels() {
        let xh = batch.pred_pointmaps[f].points[p];
        let x = batch.gt_pointmaps[f].points[p];
        let z = batch.gt_pointmaps[f].depth(p);
        let pose = &batch.pred_poses[f];
        let g = &mut points[f][p];
        for c in 0..3 {
            g[c] += s * sign(s * xh[c] - x[c]) / (z * n as f64);
        }
        let a = world_point(pose, xh, s);
        let b = batch.gt_poses[f].transform_point(x);
        let coef = w.lambda_global * s / (3 * n) as f64;
        let sg: Vec3 = [sign(a[0] - b[0]), sign(a[1] - b[1]), sign(a[2] - b[2])];
        // d/dx̂ of s·(R x̂ + t) is s·R; transpose applies it to the sign vector
        let back = la::mat_vec(&la::transpose(&pose.rotation), sg);
        for c in 0..3 {
            g[c] += coef * back[c];
            translations[f][c] += coef * sg[c];
        }
    }

    for &(i, j) in &batch.pairs {
        let (_, th) = relative_motion(&batch.pred_poses[i], &batch.pred_poses[j]);
        let (_, t) = relative_motion(&batch.gt_poses[i], &batch.gt_poses[j]);
        let e = la::sub(la::scale(th, s), t);
        let r = la::norm(e);
        let k = if r <= w.huber_delta { 1.0 } else { w.huber_delta / r };
        // t̂_ij = R_iᵀ (t_j − t_i), so ∂/∂t_j = s R_i · ∇Huber
        let dir = la::scale(la::mat_vec(&batch.pred_poses[i].rotation, la::scale(e, k)), w.lambda_t * s);
        translations[j] = la::add(translations[j], dir);
        translations[i] = la::sub(translations[i], dir);
    }
    Ok(LossGrad { points, translations })
}
