//! Rigid and similarity transforms, pointmap coordinate changes and
//! closed-form Umeyama alignment. Poses are camera-to-world throughout.

pub mod linalg3;
mod pointmap;
mod pose;
mod umeyama;

pub use linalg3::{Mat3, Vec3};
pub use pointmap::{transform_pointmap, transform_world_points, Pointmap, Trajectory, WorldPoints};
pub use pose::{se3_compose, se3_inverse, sim3_apply, PoseSE3, SimilaritySim3, ROTATION_TOL};
pub use umeyama::umeyama_align;
