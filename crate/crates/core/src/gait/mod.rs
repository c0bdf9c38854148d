//! Condition spaces, poses and gait patterns, the 6D rotation codec and the distances
//! between poses and patterns.

mod condition;
mod pose;
mod rotation;

pub(crate) use condition::text_hash;
pub use condition::{
    denormalize_condition, normalize_condition, AnatomyCondition, ConditionSpace, GaitCondition,
    ParamGroup, ParamSpec,
};
pub use pose::{
    d_gait, d_pose, d_pose_flat, frame_phase, joint_angle_error_deg, joint_angle_errors_deg,
    AngleStats, GaitPattern, Pose, PoseLayout, PoseWeights, FRAMES,
};
pub(crate) use pose::{d_pose_grad, decode_joints};
pub use rotation::{d_rot, geodesic_angle, joint_rotation, rot_decode, rot_encode, Rot6};
