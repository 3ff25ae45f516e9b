//! Real-time multi-target tracking that interleaves detection-driven
//! association keyframes with cheap optical-flow propagation on the frames in
//! between.
//!
//! The crate is organized bottom-up:
//!
//! * [`imgcore`]: grayscale images, bilinear sampling, image pyramids
//! * [`features`]: FAST corner detection and per-box keypoint harvesting
//! * [`optflow`]: pyramidal Lucas-Kanade point tracking
//! * [`geometry`]: boxes, IoU, similarity transforms, RANSAC
//! * [`motion`]: constant-velocity Kalman filtering over box states
//! * [`association`]: Hungarian assignment and two-stage (high/low confidence)
//!   detection association
//! * [`pipeline`]: the keyframe/flow-frame scheduler and track lifecycle
//! * [`heads`]: detection/re-id training losses (heatmap focal, box L1,
//!   identity cross-entropy, uncertainty-weighted total)
//! * [`evaluation`]: CLEAR metrics (MOTA/MOTP) and a synthetic sequence
//!   generator
//! * [`motio`]: MOT-Challenge sequence/detection/result file I/O

pub mod association;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod geometry;
pub mod heads;
pub mod imgcore;
pub mod motio;
pub mod motion;
pub mod optflow;
pub mod pipeline;

pub use association::{
    byte_associate, fused_cost, hungarian_solve, iou_cost, AssociationOutcome, CostMatrix,
    Detection, Track, TrackState, FORBIDDEN,
};
pub use error::Error;
pub use evaluation::{
    evaluate_sequence, generate_synthetic, mota, motp, ClearCounts, FrameBoxes, ObjectScript,
    Occlusion, SyntheticData, SyntheticSpec,
};
pub use features::{detect_in_box, fast_detect, Keypoint};
pub use geometry::{
    estimate_similarity_ransac, iou, solve_similarity_minimal, warp_bbox, BoundingBox, Point,
    RansacParams, SimilarityTransform,
};
pub use heads::{
    box_loss, box_loss_grad, heatmap_focal_grad, heatmap_focal_loss, identity_loss,
    identity_loss_grad, render_heatmap_target, total_loss, total_loss_grad, FocalParams, Grid,
    HeatmapObject, HeatmapPair, SigmaRule,
};
pub use imgcore::{build_pyramid, to_grayscale, ColorImage, GrayImage, Pyramid};
pub use motio::{
    parse_seqinfo, read_embeddings, read_mot_detections, read_mot_ground_truth, write_results,
    FileDetections, SeqInfo, SequenceFrames,
};
pub use motion::{
    kalman_init, kalman_predict, kalman_update, mahalanobis_gate, measurement_from_box,
    KalmanState, CHI2_GATE_4D,
};
pub use optflow::{lk_track_points, FlowParams, FlowResult, FlowStatus};
pub use pipeline::{
    run_sequence, DetectionSource, FrameMode, FrameResult, FrameSource, MemoryDetections,
    MemoryFrames, RunError, TrackLog, Tracker, TrackerConfig,
};
