//! KITTI odometry pose files: one camera-to-world `[R|t]` per line, twelve
//! whitespace-separated floats in row-major order.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::linalg3 as la;
use crate::geometry::{PoseSE3, Trajectory, ROTATION_TOL};

/// Rotations further than this from SO(3) are rejected rather than repaired.
pub const REORTHONORMALIZE_TOL: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseFile {
    pub trajectory: Trajectory,
    /// Lines whose rotation was projected back onto SO(3).
    pub reorthonormalized: usize,
}

/// Parse pose lines; blank lines are skipped, frames are numbered in order.
pub fn parse_poses(text: &str) -> Result<PoseFile> {
    let mut entries = Vec::new();
    let mut reorthonormalized = 0;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 12 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 12 values, found {}", tokens.len()),
            });
        }
        let mut v = [0.0; 12];
        for (slot, tok) in v.iter_mut().zip(&tokens) {
            *slot = tok.parse::<f64>().map_err(|e| Error::Parse {
                line: line_no,
                msg: format!("`{tok}`: {e}"),
            })?;
            if !slot.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("non-finite value `{tok}`"),
                });
            }
        }
        let mut pose = PoseSE3::from_row_major_3x4(&v);
        let defect = la::rotation_defect(&pose.rotation);
        if defect > REORTHONORMALIZE_TOL || la::det(&pose.rotation) <= 0.0 {
            return Err(Error::Pose(format!(
                "line {line_no}: rotation off SO(3) by {defect:.3e}, beyond {REORTHONORMALIZE_TOL:e}"
            )));
        }
        if defect > ROTATION_TOL {
            pose.rotation = la::nearest_rotation(&pose.rotation);
            reorthonormalized += 1;
        }
        entries.push(pose);
    }
    Ok(PoseFile {
        trajectory: Trajectory::from_poses(entries),
        reorthonormalized,
    })
}

pub fn parse_pose_file(path: &Path) -> Result<PoseFile> {
    parse_poses(&std::fs::read_to_string(path)?)
}

/// Seventeen significant digits, enough to reproduce every `f64` exactly.
pub fn format_poses(traj: &Trajectory) -> String {
    let mut out = String::new();
    for (_, pose) in traj.entries() {
        let row: Vec<String> = pose.to_row_major_3x4().iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(out, "{}", row.join(" ")).expect("writing to a String");
    }
    out
}

pub fn write_pose_file(traj: &Trajectory, path: &Path) -> Result<()> {
    std::fs::write(path, format_poses(traj))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngState;

    #[test]
    fn identity_line() {
        let f = parse_poses("1 0 0 0 0 1 0 0 0 0 1 0\n").unwrap();
        assert_eq!(f.trajectory.poses(), vec![PoseSE3::IDENTITY]);
        assert_eq!(f.reorthonormalized, 0);
    }

    #[test]
    fn wrong_token_count_names_the_line() {
        match parse_poses("1 0 0 0 0 1 0 0 0 0 1\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
        let text = "1 0 0 0 0 1 0 0 0 0 1 0\n\n1 0 0 0 0 1 0 0 0 0 x 0\n";
        assert!(matches!(parse_poses(text), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn round_trip_is_exact() {
        let mut rng = RngState::new(1);
        let t = Trajectory::from_poses((0..100).map(|_| PoseSE3::random(&mut rng, 50.0)).collect());
        let back = parse_poses(&format_poses(&t)).unwrap();
        assert_eq!(back.trajectory, t);
        assert_eq!(back.reorthonormalized, 0);
    }

    #[test]
    fn small_defects_are_repaired_large_ones_rejected() {
        let mut v = PoseSE3::IDENTITY.to_row_major_3x4();
        v[0] = 1.0 + 1e-5;
        let line = |v: &[f64; 12]| v.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(" ");
        let f = parse_poses(&line(&v)).unwrap();
        assert_eq!(f.reorthonormalized, 1);
        f.trajectory.poses()[0].validate().unwrap();
        v[0] = 1.1;
        assert!(matches!(parse_poses(&line(&v)), Err(Error::Pose(_))));
        let mut mirror = PoseSE3::IDENTITY.to_row_major_3x4();
        mirror[0] = -1.0;
        assert!(matches!(parse_poses(&line(&mirror)), Err(Error::Pose(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poses.txt");
        let mut rng = RngState::new(2);
        let t = Trajectory::from_poses((0..5).map(|_| PoseSE3::random(&mut rng, 1.0)).collect());
        write_pose_file(&t, &path).unwrap();
        assert_eq!(parse_pose_file(&path).unwrap().trajectory, t);
    }
}
