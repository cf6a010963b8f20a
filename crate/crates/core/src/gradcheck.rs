//! Finite-difference checks of every analytic gradient in the crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pointmap, PoseSE3};
use crate::losses::{
    adjacent_pairs, solve_sequence_scale_with_pivot, total_loss, total_loss_grad, LossWeights, SupervisionBatch,
};
use crate::numerics::{finite_diff_grad, relative_error, swiglu_grad, swiglu_loss, LossKind, RngState, SwigluParams, Tensor};
use crate::ttt::{inner_loss, FastWeightState};

pub const GRADCHECK_TOL: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub name: String,
    pub seed: u64,
    pub entries: usize,
    pub relative_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub checks: Vec<GradCheck>,
    pub max_relative_error: f64,
    pub passed: bool,
}

/// SwiGLU fast-weight inner loss over every parameter.
pub fn check_swiglu(seed: u64) -> Result<GradCheck> {
    let mut rng = RngState::new(seed);
    let p = SwigluParams::random(6, 24, false, &mut rng);
    let k = Tensor::randn(8, 6, 1.0, &mut rng);
    let v = Tensor::randn(8, 6, 1.0, &mut rng);
    let analytic = swiglu_grad(&p, &k, &v, LossKind::SquaredError)?.grads.flatten();
    let numeric = finite_diff_grad(
        |theta| {
            p.with_flat(theta)
                .and_then(|q| swiglu_loss(&q, &k, &v, LossKind::SquaredError))
                .unwrap_or(f64::NAN)
        },
        &p.flatten(),
        1e-5,
    )?;
    Ok(GradCheck {
        name: "swiglu_inner_loss".into(),
        seed,
        entries: analytic.len(),
        relative_error: relative_error(&analytic, &numeric),
    })
}

/// Head-averaged inner loss of a multi-head fast-weight state.
pub fn check_multihead_inner_loss(seed: u64) -> Result<GradCheck> {
    let mut rng = RngState::new(seed);
    let heads = 3;
    let state = FastWeightState::new((0..heads).map(|_| SwigluParams::random(4, 16, false, &mut rng)).collect());
    let keys: Vec<Tensor> = (0..heads).map(|_| Tensor::randn(5, 4, 1.0, &mut rng)).collect();
    let values: Vec<Tensor> = (0..heads).map(|_| Tensor::randn(5, 4, 1.0, &mut rng)).collect();
    let mut analytic = Vec::new();
    for h in 0..heads {
        let g = swiglu_grad(&state.params[h], &keys[h], &values[h], LossKind::SquaredError)?;
        analytic.extend(g.grads.flatten().iter().map(|v| v / heads as f64));
    }
    let flat: Vec<f64> = state.params.iter().flat_map(SwigluParams::flatten).collect();
    let per = state.params[0].num_params();
    let numeric = finite_diff_grad(
        |theta| {
            let params: Result<Vec<SwigluParams>> =
                (0..heads).map(|h| state.params[h].with_flat(&theta[h * per..(h + 1) * per])).collect();
            params
                .and_then(|p| inner_loss(&FastWeightState::new(p), &keys, &values))
                .unwrap_or(f64::NAN)
        },
        &flat,
        1e-5,
    )?;
    Ok(GradCheck {
        name: "ttt_multihead_inner_loss".into(),
        seed,
        entries: analytic.len(),
        relative_error: relative_error(&analytic, &numeric),
    })
}

fn random_batch(rng: &mut RngState, frames: usize, pixels: usize) -> SupervisionBatch {
    let mut gt = Vec::new();
    let mut pred = Vec::new();
    for _ in 0..frames {
        let pts: Vec<[f64; 3]> = (0..pixels)
            .map(|_| [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(1.0, 4.0)])
            .collect();
        let noisy: Vec<[f64; 3]> = pts
            .iter()
            .map(|p| [1.4 * p[0] + 0.3 * rng.normal(), 1.4 * p[1] + 0.3 * rng.normal(), 1.4 * p[2] + 0.3 * rng.normal()])
            .collect();
        gt.push(Pointmap::from_points(1, pixels, pts).expect("positive depths"));
        pred.push(Pointmap {
            height: 1,
            width: pixels,
            valid: vec![true; pixels],
            points: noisy,
        });
    }
    let gt_poses: Vec<PoseSE3> = (0..frames).map(|_| PoseSE3::random(rng, 2.0)).collect();
    let pred_poses: Vec<PoseSE3> = gt_poses
        .iter()
        .map(|p| {
            let mut q = PoseSE3::random(rng, 0.3).compose(p);
            // push some translation residuals past the Huber threshold
            q.translation[0] += 2.0 * rng.normal();
            q
        })
        .collect();
    SupervisionBatch {
        pred_pointmaps: pred,
        gt_pointmaps: gt,
        pred_poses,
        gt_poses,
        pairs: adjacent_pairs(frames),
    }
}

/// Distance from `v` to the nearest L1 kink along every coordinate it enters.
fn kink_margin(batch: &SupervisionBatch, s: f64, f: usize, p: usize) -> f64 {
    let xh = batch.pred_pointmaps[f].points[p];
    let x = batch.gt_pointmaps[f].points[p];
    let a = batch.pred_poses[f].transform_point(xh);
    let b = batch.gt_poses[f].transform_point(x);
    (0..3)
        .map(|c| (s * xh[c] - x[c]).abs().min((s * a[c] - b[c]).abs()))
        .fold(f64::INFINITY, f64::min)
}

/// Total loss with respect to predicted pointmap entries, scale re-solved inside.
pub fn check_loss_points(seed: u64) -> Result<GradCheck> {
    let mut rng = RngState::new(seed);
    let batch = random_batch(&mut rng, 4, 6);
    let w = LossWeights::default();
    let (s, pivot) = solve_sequence_scale_with_pivot(&batch)?;
    let grad = total_loss_grad(&batch, s, &w)?;

    let step = 1e-5;
    let mut entries = Vec::new();
    for f in 0..batch.pred_pointmaps.len() {
        for p in 0..batch.pred_pointmaps[f].len() {
            if pivot.is_some_and(|pv| pv.frame == f && pv.pixel == p) {
                continue;
            }
            if kink_margin(&batch, s, f, p) > 1e-3 {
                entries.push((f, p));
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::Degenerate("no pointmap entry away from L1 kinks".into()));
    }
    let theta: Vec<f64> = entries
        .iter()
        .flat_map(|&(f, p)| batch.pred_pointmaps[f].points[p])
        .collect();
    let eval = |theta: &[f64]| {
        let mut b = batch.clone();
        for (n, &(f, p)) in entries.iter().enumerate() {
            b.pred_pointmaps[f].points[p] = [theta[3 * n], theta[3 * n + 1], theta[3 * n + 2]];
        }
        total_loss(&b, &w).map(|l| l.total).unwrap_or(f64::NAN)
    };
    let numeric = finite_diff_grad(eval, &theta, step)?;
    let analytic: Vec<f64> = entries.iter().flat_map(|&(f, p)| grad.points[f][p]).collect();
    Ok(GradCheck {
        name: "loss_pointmap_entries".into(),
        seed,
        entries: analytic.len(),
        relative_error: relative_error(&analytic, &numeric),
    })
}

/// Total loss with respect to predicted camera translations.
pub fn check_loss_translations(seed: u64) -> Result<GradCheck> {
    let mut rng = RngState::new(seed.wrapping_add(1_000_003));
    let batch = random_batch(&mut rng, 5, 4);
    let w = LossWeights::default();
    let (s, _) = solve_sequence_scale_with_pivot(&batch)?;
    let grad = total_loss_grad(&batch, s, &w)?;
    let theta: Vec<f64> = batch.pred_poses.iter().flat_map(|p| p.translation).collect();
    let eval = |theta: &[f64]| {
        let mut b = batch.clone();
        for (i, p) in b.pred_poses.iter_mut().enumerate() {
            p.translation = [theta[3 * i], theta[3 * i + 1], theta[3 * i + 2]];
        }
        total_loss(&b, &w).map(|l| l.total).unwrap_or(f64::NAN)
    };
    let numeric = finite_diff_grad(eval, &theta, 1e-5)?;
    let analytic: Vec<f64> = grad.translations.iter().flatten().copied().collect();
    Ok(GradCheck {
        name: "loss_pose_translations".into(),
        seed,
        entries: analytic.len(),
        relative_error: relative_error(&analytic, &numeric),
    })
}

/// Every check over `seeds` consecutive seeds starting at `base_seed`.
pub fn run_gradcheck(base_seed: u64, seeds: usize) -> Result<GradcheckReport> {
    let mut checks = Vec::new();
    for i in 0..seeds as u64 {
        let seed = base_seed.wrapping_add(i);
        checks.push(check_swiglu(seed)?);
        checks.push(check_multihead_inner_loss(seed)?);
        checks.push(check_loss_points(seed)?);
        checks.push(check_loss_translations(seed)?);
    }
    let max_relative_error = checks.iter().map(|c| c.relative_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        tolerance: GRADCHECK_TOL,
        passed: checks.iter().all(|c| c.relative_error < GRADCHECK_TOL),
        checks,
        max_relative_error,
    })
}
