//! Rotation algebra, pose sampling and the synthetic depth camera.

mod camera;
mod render;
mod rotation;
mod sampling;

pub use camera::{CameraIntrinsics, DepthImage, MASKED, OBJECT_RADIUS};
pub use render::{render_depth, render_depth_matrix};
pub use rotation::{
    angular_error, compose_vertical_flip, rotvec_to_matrix, vertical_flip, RotVec,
    RotationMatrix, ViewAngles,
};
pub use sampling::{sample_pose, sample_view_angles, PoseMode, ROLL_SIGMA_DEG};
