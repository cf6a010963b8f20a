//! Feedforward stitching of per-chunk predictions into one world frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::linalg3 as la;
use crate::geometry::{se3_compose, se3_inverse, transform_pointmap, Pointmap, PoseSE3, Trajectory, WorldPoints};
use crate::ttt::reset_due;

/// Ratios with either norm at or below this are ignored.
pub const SCALE_EPS: f64 = 1e-9;

/// Raw output of one chunk, in that chunk's own gauge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChunkPrediction {
    pub chunk_index: usize,
    pub frame_ids: Vec<usize>,
    pub poses: Vec<PoseSE3>,
    /// Empty for pose-only predictions; otherwise one per frame.
    pub pointmaps: Vec<Pointmap>,
}

impl ChunkPrediction {
    pub fn validate(&self) -> Result<()> {
        if self.frame_ids.len() != self.poses.len() {
            return Err(Error::shape(format!(
                "chunk {}: {} frame ids for {} poses",
                self.chunk_index,
                self.frame_ids.len(),
                self.poses.len()
            )));
        }
        if !self.pointmaps.is_empty() && self.pointmaps.len() != self.poses.len() {
            return Err(Error::shape(format!(
                "chunk {}: {} pointmaps for {} poses",
                self.chunk_index,
                self.pointmaps.len(),
                self.poses.len()
            )));
        }
        if self.frame_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data(format!("chunk {}: frame ids not increasing", self.chunk_index)));
        }
        Ok(())
    }

    fn position(&self, frame_id: usize) -> Option<usize> {
        self.frame_ids.binary_search(&frame_id).ok()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    /// SE(3) alignment at every seam.
    #[default]
    Rigid,
    /// Median scale recovery followed by SE(3) alignment at every seam.
    Similarity,
    /// Trust the predictor's shared frame; re-anchor rigidly only after a state reset.
    None,
}

impl std::str::FromStr for AlignMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rigid" | "se3" => Ok(Self::Rigid),
            "sim3" | "similarity" => Ok(Self::Similarity),
            "none" => Ok(Self::None),
            other => Err(Error::Config(format!("unknown alignment mode `{other}` (rigid, sim3 or none)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ScaleEstimator {
    /// Lower median of the pooled ratios.
    Median,
    /// Mean after dropping `trim` of the sorted ratios from each end.
    TruncatedMean { trim: f64 },
}

impl Default for ScaleEstimator {
    fn default() -> Self {
        Self::Median
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StitchOptions {
    pub mode: AlignMode,
    pub scale_estimator: ScaleEstimator,
    /// Only consulted in [`AlignMode::None`].
    pub reset_period: usize,
}

/// `A_m = T̃_k^{(m−1)} · (T̂_k^{(m)})^{-1}`.
pub fn align_chunk_se3(prev_aligned: &PoseSE3, cur_raw: &PoseSE3) -> Result<PoseSE3> {
    se3_compose(prev_aligned, &se3_inverse(cur_raw)?)
}

fn lower_median(sorted: &[f64]) -> f64 {
    sorted[(sorted.len() - 1) / 2]
}

fn reduce_ratios(mut ratios: Vec<f64>, estimator: ScaleEstimator) -> Result<f64> {
    if ratios.is_empty() {
        return Err(Error::Degenerate("no pixel valid in both overlap pointmaps".into()));
    }
    ratios.sort_by(f64::total_cmp);
    match estimator {
        ScaleEstimator::Median => Ok(lower_median(&ratios)),
        ScaleEstimator::TruncatedMean { trim } => {
            if !(0.0..0.5).contains(&trim) {
                return Err(Error::Config(format!("trim fraction {trim} outside [0, 0.5)")));
            }
            let cut = (trim * ratios.len() as f64).floor() as usize;
            let kept = &ratios[cut..ratios.len() - cut];
            Ok(kept.iter().sum::<f64>() / kept.len() as f64)
        }
    }
}

fn push_ratios(prev: &Pointmap, cur: &Pointmap, out: &mut Vec<f64>) -> Result<()> {
    if prev.len() != cur.len() {
        return Err(Error::shape(format!(
            "overlap pointmaps with {} and {} pixels",
            prev.len(),
            cur.len()
        )));
    }
    for i in 0..prev.len() {
        if !(prev.valid[i] && cur.valid[i]) {
            continue;
        }
        let a = la::norm(prev.points[i]);
        let b = la::norm(cur.points[i]);
        if a > SCALE_EPS && b > SCALE_EPS {
            out.push(a / b);
        }
    }
    Ok(())
}

/// Lower median of `‖x̃^{(m−1)}‖ / ‖x̂^{(m)}‖` over jointly valid pixels.
pub fn estimate_chunk_scale(prev_adjusted: &Pointmap, cur_raw: &Pointmap) -> Result<f64> {
    estimate_scale_pooled(&[(prev_adjusted, cur_raw)], ScaleEstimator::Median)
}

/// Scale from the ratios of every overlap frame pooled together.
pub fn estimate_scale_pooled(pairs: &[(&Pointmap, &Pointmap)], estimator: ScaleEstimator) -> Result<f64> {
    let mut ratios = Vec::new();
    for (p, c) in pairs {
        push_ratios(p, c, &mut ratios)?;
    }
    reduce_ratios(ratios, estimator)
}

/// Result of aligning one chunk in similarity mode.
#[derive(Clone, Debug, PartialEq)]
pub struct SimAlignedChunk {
    pub transform: PoseSE3,
    pub scale: f64,
    pub poses: Vec<PoseSE3>,
    pub pointmaps: Vec<Pointmap>,
}

/// Scale-adjust every frame by `s_m`, then rigidly align on frame `k`.
///
/// `prev_overlap` pairs the previous chunk's aligned pose and adjusted pointmap
/// for each overlap frame, in the same order as `overlap_ids`; the last entry
/// is the anchor frame.
pub fn align_chunk_sim3(
    prev_overlap: &[(PoseSE3, &Pointmap)],
    overlap_ids: &[usize],
    cur: &ChunkPrediction,
    estimator: ScaleEstimator,
) -> Result<SimAlignedChunk> {
    if prev_overlap.is_empty() || prev_overlap.len() != overlap_ids.len() {
        return Err(Error::Degenerate("similarity alignment needs at least one overlap frame".into()));
    }
    if cur.pointmaps.is_empty() {
        return Err(Error::Degenerate(format!("chunk {} has no pointmaps", cur.chunk_index)));
    }
    let mut pairs = Vec::with_capacity(overlap_ids.len());
    for ((_, pm), id) in prev_overlap.iter().zip(overlap_ids) {
        let j = cur
            .position(*id)
            .ok_or_else(|| Error::Degenerate(format!("overlap frame {id} missing from chunk {}", cur.chunk_index)))?;
        pairs.push((*pm, &cur.pointmaps[j]));
    }
    let s = estimate_scale_pooled(&pairs, estimator)?;

    let adjusted: Vec<PoseSE3> = cur
        .poses
        .iter()
        .map(|p| PoseSE3 {
            rotation: p.rotation,
            translation: la::scale(p.translation, s),
        })
        .collect();
    let k_id = *overlap_ids.last().expect("non-empty overlap");
    let k = cur.position(k_id).expect("checked above");
    let anchor = prev_overlap.last().expect("non-empty overlap").0;
    let a = align_chunk_se3(&anchor, &adjusted[k])?;
    Ok(SimAlignedChunk {
        transform: a,
        scale: s,
        poses: adjusted.iter().map(|p| a.compose(p)).collect(),
        pointmaps: cur.pointmaps.iter().map(|pm| pm.scaled(s)).collect(),
    })
}

/// Stitched stream: per-chunk aligned poses plus the deduplicated trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedStream {
    pub trajectory: Trajectory,
    pub chunk_frame_ids: Vec<Vec<usize>>,
    pub chunk_poses: Vec<Vec<PoseSE3>>,
    /// Local pointmaps after scale adjustment (equal to the raw ones unless in similarity mode).
    pub chunk_pointmaps: Vec<Vec<Pointmap>>,
    pub transforms: Vec<PoseSE3>,
    pub scales: Vec<f64>,
}

impl AlignedStream {
    /// Largest pose disagreement on shared frames between consecutive chunks.
    pub fn seam_errors(&self) -> Vec<f64> {
        (1..self.chunk_poses.len())
            .map(|m| {
                let mut worst: f64 = 0.0;
                for (i, id) in self.chunk_frame_ids[m].iter().enumerate() {
                    if let Ok(j) = self.chunk_frame_ids[m - 1].binary_search(id) {
                        worst = worst.max(self.chunk_poses[m][i].max_abs_diff(&self.chunk_poses[m - 1][j]));
                    }
                }
                worst
            })
            .collect()
    }

    /// World points of every frame, taken from the chunk that contributes its pose.
    pub fn world_points(&self) -> Vec<(usize, WorldPoints)> {
        let mut out: Vec<(usize, WorldPoints)> = Vec::new();
        for m in 0..self.chunk_poses.len() {
            if self.chunk_pointmaps[m].is_empty() {
                continue;
            }
            for (i, id) in self.chunk_frame_ids[m].iter().enumerate() {
                if out.last().is_some_and(|(last, _)| last >= id) {
                    continue;
                }
                out.push((*id, transform_pointmap(&self.chunk_poses[m][i], &self.chunk_pointmaps[m][i])));
            }
        }
        out
    }
}

fn overlap_ids(prev: &ChunkPrediction, cur: &ChunkPrediction) -> Vec<usize> {
    cur.frame_ids
        .iter()
        .copied()
        .filter(|id| prev.position(*id).is_some())
        .collect()
}

pub fn stitch_stream(chunks: &[ChunkPrediction], mode: AlignMode) -> Result<AlignedStream> {
    stitch_stream_with(
        chunks,
        &StitchOptions {
            mode,
            ..StitchOptions::default()
        },
    )
}

pub fn stitch_stream_with(chunks: &[ChunkPrediction], opts: &StitchOptions) -> Result<AlignedStream> {
    let mut stream = AlignedStream {
        trajectory: Trajectory::default(),
        chunk_frame_ids: Vec::with_capacity(chunks.len()),
        chunk_poses: Vec::with_capacity(chunks.len()),
        chunk_pointmaps: Vec::with_capacity(chunks.len()),
        transforms: Vec::with_capacity(chunks.len()),
        scales: Vec::with_capacity(chunks.len()),
    };
    let mut current_a = PoseSE3::IDENTITY;
    for (m, cur) in chunks.iter().enumerate() {
        cur.validate()?;
        if m == 0 {
            stream.transforms.push(PoseSE3::IDENTITY);
            stream.scales.push(1.0);
            stream.chunk_poses.push(cur.poses.clone());
            stream.chunk_pointmaps.push(cur.pointmaps.clone());
            stream.chunk_frame_ids.push(cur.frame_ids.clone());
            continue;
        }
        let prev = &chunks[m - 1];
        let shared = overlap_ids(prev, cur);
        let stitch_err = |reason: String| Error::Stitch {
            prev: prev.chunk_index,
            cur: cur.chunk_index,
            reason,
        };
        if shared.is_empty() {
            return Err(stitch_err("chunks share no overlap frame".into()));
        }
        let prev_poses = &stream.chunk_poses[m - 1];
        let prev_pos = |id: usize| prev.position(id).expect("shared frame");
        let k = *shared.last().expect("non-empty");
        let k_cur = cur.position(k).expect("shared frame");

        let (a, s, poses, pointmaps) = match opts.mode {
            AlignMode::Rigid => {
                let a = align_chunk_se3(&prev_poses[prev_pos(k)], &cur.poses[k_cur])?;
                (a, 1.0, cur.poses.iter().map(|p| a.compose(p)).collect(), cur.pointmaps.clone())
            }
            AlignMode::Similarity => {
                let prev_pms = &stream.chunk_pointmaps[m - 1];
                if prev_pms.is_empty() {
                    return Err(stitch_err("previous chunk has no pointmaps".into()));
                }
                let overlap: Vec<(PoseSE3, &Pointmap)> = shared
                    .iter()
                    .map(|&id| (prev_poses[prev_pos(id)], &prev_pms[prev_pos(id)]))
                    .collect();
                let r = align_chunk_sim3(&overlap, &shared, cur, opts.scale_estimator).map_err(|e| match e {
                    Error::Degenerate(msg) => stitch_err(msg),
                    other => other,
                })?;
                (r.transform, r.scale, r.poses, r.pointmaps)
            }
            AlignMode::None => {
                if reset_due(m, opts.reset_period) {
                    current_a = align_chunk_se3(&prev_poses[prev_pos(k)], &cur.poses[k_cur])?;
                }
                let a = current_a;
                (a, 1.0, cur.poses.iter().map(|p| a.compose(p)).collect(), cur.pointmaps.clone())
            }
        };
        stream.transforms.push(a);
        stream.scales.push(s);
        stream.chunk_poses.push(poses);
        stream.chunk_pointmaps.push(pointmaps);
        stream.chunk_frame_ids.push(cur.frame_ids.clone());
    }

    let mut entries: Vec<(usize, PoseSE3)> = Vec::new();
    for (ids, poses) in stream.chunk_frame_ids.iter().zip(&stream.chunk_poses) {
        for (id, pose) in ids.iter().zip(poses) {
            if entries.last().map_or(true, |(last, _)| last < id) {
                entries.push((*id, *pose));
            }
        }
    }
    stream.trajectory = Trajectory::new(entries)?;
    Ok(stream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sim3_apply, SimilaritySim3};
    use crate::numerics::RngState;

    fn pm(points: Vec<la::Vec3>) -> Pointmap {
        let n = points.len();
        Pointmap::from_points(1, n, points).unwrap()
    }

    fn random_pm(rng: &mut RngState) -> Pointmap {
        pm((0..6)
            .map(|_| [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(1.0, 5.0)])
            .collect())
    }

    /// Ground truth for `frames` frames split into chunks of 4 with overlap 2,
    /// each chunk expressed in its own random similarity gauge.
    fn gauged_chunks(frames: usize, with_scale: bool, rng: &mut RngState) -> (Vec<PoseSE3>, Vec<ChunkPrediction>) {
        let truth: Vec<PoseSE3> = (0..frames).map(|_| PoseSE3::random(rng, 3.0)).collect();
        let maps: Vec<Pointmap> = (0..frames).map(|_| random_pm(rng)).collect();
        let mut chunks = Vec::new();
        let mut start = 0;
        let mut m = 0;
        loop {
            let end = (start + 4).min(frames);
            let g = if m == 0 {
                SimilaritySim3::IDENTITY
            } else {
                let s = if with_scale { rng.uniform(0.5, 2.0) } else { 1.0 };
                SimilaritySim3::new(s, la::random_rotation(rng), [rng.normal(), rng.normal(), rng.normal()]).unwrap()
            };
            chunks.push(ChunkPrediction {
                chunk_index: m,
                frame_ids: (start..end).collect(),
                poses: truth[start..end].iter().map(|t| sim3_apply(&g, t)).collect(),
                pointmaps: maps[start..end].iter().map(|p| p.scaled(g.scale)).collect(),
            });
            if end == frames {
                break;
            }
            start = end - 2;
            m += 1;
        }
        (truth, chunks)
    }

    #[test]
    fn se3_alignment_basics() {
        let mut rng = RngState::new(1);
        let t = PoseSE3::random(&mut rng, 2.0);
        assert!(align_chunk_se3(&t, &t).unwrap().max_abs_diff(&PoseSE3::IDENTITY) < 1e-12);
        let g = PoseSE3::random(&mut rng, 2.0);
        let raw = g.inverse().compose(&t);
        let a = align_chunk_se3(&t, &raw).unwrap();
        assert!(a.max_abs_diff(&g) < 1e-12);
        assert!(a.compose(&raw).max_abs_diff(&t) < 1e-12);
        let mut bad = t;
        bad.rotation[0][0] += 0.1;
        assert!(matches!(align_chunk_se3(&bad, &t), Err(Error::Pose(_))));
    }

    #[test]
    fn scale_estimates() {
        let prev = pm(vec![[0.0, 0.0, 2.0], [1.0, 0.0, 2.0], [0.0, 3.0, 4.0]]);
        assert_eq!(estimate_chunk_scale(&prev, &prev.scaled(0.5)).unwrap(), 2.0);

        let cur = pm(vec![[0.0, 0.0, 1.0], [0.0, 0.0, 1.0], [0.0, 0.0, 1.0]]);
        let prev = pm(vec![[0.0, 0.0, 1.0], [0.0, 0.0, 2.0], [0.0, 0.0, 100.0]]);
        assert_eq!(estimate_chunk_scale(&prev, &cur).unwrap(), 2.0);

        let cur = pm(vec![[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]]);
        let prev = pm(vec![[0.0, 0.0, 1.0], [0.0, 0.0, 4.0]]);
        assert_eq!(estimate_chunk_scale(&prev, &cur).unwrap(), 1.0);
        let mean = estimate_scale_pooled(&[(&prev, &cur)], ScaleEstimator::TruncatedMean { trim: 0.0 }).unwrap();
        assert_eq!(mean, 2.5);
    }

    #[test]
    fn scale_needs_jointly_valid_pixels() {
        let a = Pointmap::new(1, 2, vec![[0.0, 0.0, 1.0]; 2], vec![true, false]).unwrap();
        let b = Pointmap::new(1, 2, vec![[0.0, 0.0, 1.0]; 2], vec![false, true]).unwrap();
        assert!(matches!(estimate_chunk_scale(&a, &b), Err(Error::Degenerate(_))));
    }

    #[test]
    fn rigid_stitch_recovers_truth() {
        let mut rng = RngState::new(2);
        let (truth, chunks) = gauged_chunks(20, false, &mut rng);
        let out = stitch_stream(&chunks, AlignMode::Rigid).unwrap();
        assert_eq!(out.trajectory.frame_ids(), (0..20).collect::<Vec<_>>());
        for (p, t) in out.trajectory.poses().iter().zip(&truth) {
            assert!(p.max_abs_diff(t) < 1e-10);
        }
        assert!(out.seam_errors().iter().all(|e| *e < 1e-10));
    }

    #[test]
    fn similarity_stitch_recovers_truth() {
        let mut rng = RngState::new(3);
        let (truth, chunks) = gauged_chunks(20, true, &mut rng);
        let out = stitch_stream(&chunks, AlignMode::Similarity).unwrap();
        for (p, t) in out.trajectory.poses().iter().zip(&truth) {
            assert!(p.max_abs_diff(t) < 1e-10);
        }
        for (m, c) in chunks.iter().enumerate() {
            for (i, raw) in c.poses.iter().enumerate() {
                let expect = la::mat_mul(&out.transforms[m].rotation, &raw.rotation);
                assert!(la::frobenius(&la::mat_sub(&expect, &out.chunk_poses[m][i].rotation)) < 1e-14);
            }
        }
    }

    #[test]
    fn unit_scale_similarity_matches_rigid() {
        let mut rng = RngState::new(4);
        let (_, chunks) = gauged_chunks(12, false, &mut rng);
        let a = stitch_stream(&chunks, AlignMode::Rigid).unwrap();
        let b = stitch_stream(&chunks, AlignMode::Similarity).unwrap();
        for (p, q) in a.trajectory.poses().iter().zip(b.trajectory.poses()) {
            assert!(p.max_abs_diff(&q) < 1e-12);
        }
        assert!(b.scales.iter().all(|s| (s - 1.0).abs() < 1e-12));
    }

    #[test]
    fn single_chunk_passes_through() {
        let mut rng = RngState::new(5);
        let (_, chunks) = gauged_chunks(4, true, &mut rng);
        assert_eq!(chunks.len(), 1);
        let out = stitch_stream(&chunks, AlignMode::Similarity).unwrap();
        assert_eq!(out.trajectory.poses(), chunks[0].poses);
    }

    #[test]
    fn missing_overlap_names_the_seam() {
        let mut rng = RngState::new(6);
        let (_, mut chunks) = gauged_chunks(12, false, &mut rng);
        for c in &mut chunks[2..] {
            c.frame_ids.iter_mut().for_each(|id| *id += 100);
        }
        match stitch_stream(&chunks, AlignMode::Rigid) {
            Err(Error::Stitch { prev: 1, cur: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn none_mode_only_realigns_after_resets() {
        let mut rng = RngState::new(7);
        let truth: Vec<PoseSE3> = (0..14).map(|_| PoseSE3::random(&mut rng, 3.0)).collect();
        // gauge changes only at chunk 3 (0-based), matching reset_period 3
        let g = PoseSE3::random(&mut rng, 3.0);
        let mut chunks = Vec::new();
        for m in 0..6 {
            let ids: Vec<usize> = (2 * m..2 * m + 4).collect();
            let gauge = if m >= 3 { g } else { PoseSE3::IDENTITY };
            chunks.push(ChunkPrediction {
                chunk_index: m,
                poses: ids.iter().map(|&i| gauge.compose(&truth[i])).collect(),
                frame_ids: ids,
                pointmaps: vec![],
            });
        }
        let opts = StitchOptions {
            mode: AlignMode::None,
            reset_period: 3,
            ..StitchOptions::default()
        };
        let out = stitch_stream_with(&chunks, &opts).unwrap();
        for (p, t) in out.trajectory.poses().iter().zip(&truth) {
            assert!(p.max_abs_diff(t) < 1e-10);
        }
        assert_eq!(out.transforms[1], PoseSE3::IDENTITY);
        assert_eq!(out.transforms[4], out.transforms[3]);
    }
}
