//! Trajectory evaluation, pose and prediction file formats, and scaling
//! benchmarks.

mod ate;
mod bench;
mod dump;
mod posefile;

pub use ate::{compute_ate, AteAlignment, AteReport};
pub use bench::{bench_point, bench_scaling, loglog_slope, BenchConfig, BenchEntry, BenchOptions, BenchReport, SlopeFit};
pub use dump::{
    read_prediction_dump, read_records, records_to_trajectory, trajectory_records, write_prediction_dump, write_records,
    FrameRecord,
};
pub use posefile::{format_poses, parse_pose_file, parse_poses, write_pose_file, PoseFile, REORTHONORMALIZE_TOL};
