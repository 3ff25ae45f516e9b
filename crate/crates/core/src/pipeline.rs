//! The hybrid tracking loop: detector-driven association on keyframes,
//! feature-flow propagation on the frames in between.
//!
//! With a frame skip of `s`, frames `1, s+2, 2s+3, ...` are keyframes — the
//! detector runs, detections are associated to tracks in two stages, and new
//! tracks are born. Each intervening frame propagates every active track by
//! tracking its keypoints with pyramidal flow, fitting a robust similarity
//! transform to the moved points, and warping the track's box. A track whose
//! propagation fails coasts on its motion model until the next keyframe.

use crate::association::{byte_associate, Detection, Track, TrackState};
use crate::error::Error;
use crate::evaluation::FrameBoxes;
use crate::features::{detect_in_box, Keypoint};
use crate::geometry::{estimate_similarity_ransac, warp_bbox, Point, RansacParams};
use crate::imgcore::{build_pyramid, GrayImage, Pyramid};
use crate::motion::kalman_update;
use crate::optflow::{lk_track_points, FlowParams, FlowStatus};
use std::collections::BTreeMap;
use std::time::Instant;

/// Supplies detections per frame (frame numbers are 1-based). Called only on
/// keyframes.
pub trait DetectionSource {
    fn detections(&mut self, frame: u32) -> Result<Vec<Detection>, Error>;
}

/// Supplies grayscale frames (1-based). Only decoded when flow propagation
/// actually needs pixels.
pub trait FrameSource {
    fn num_frames(&self) -> u32;
    fn frame(&mut self, frame: u32) -> Result<GrayImage, Error>;
}

/// Tracker configuration; the defaults match the reference setup.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    /// Flow frames between consecutive keyframes (0 = detector every frame).
    pub skip: u32,
    /// Confidence split between the high and low detection bands.
    pub tau: f64,
    /// Minimum confidence for an unmatched detection to seed a new track.
    pub tau_init: f64,
    pub flow: FlowParams,
    pub ransac: RansacParams,
    /// Keypoints harvested per track box on keyframes.
    pub keypoint_budget: usize,
    /// Corner detector threshold used for harvesting.
    pub fast_threshold: f64,
    /// Keyframe misses tolerated (as frames since the last confirmation)
    /// before a lost track is dropped.
    pub max_lost: u32,
    /// Base seed; per-track propagation seeds are derived from it.
    pub seed: u64,
    /// Disable to coast between keyframes on the motion model alone.
    pub use_flow: bool,
    /// Disable to skip the second (low-confidence) association stage.
    pub two_stage: bool,
    /// Fold flow-warped boxes into the motion filter as pseudo-measurements.
    pub flow_kalman_update: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            skip: 0,
            tau: 0.5,
            tau_init: 0.6,
            flow: FlowParams::default(),
            ransac: RansacParams::default(),
            keypoint_budget: 20,
            fast_threshold: 20.0,
            max_lost: 30,
            seed: 0,
            use_flow: true,
            two_stage: true,
            flow_kalman_update: true,
        }
    }
}

/// How a frame was processed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameMode {
    Keyframe,
    Flow,
}

/// Reported boxes for one frame: `(track id, box)`, sorted by id. Only
/// active tracks are reported.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub frame: u32,
    pub mode: FrameMode,
    pub entries: Vec<(u64, crate::geometry::BoundingBox)>,
}

/// Full output of a sequence run.
#[derive(Debug, Clone, Default)]
pub struct TrackLog {
    pub frames: Vec<FrameResult>,
    pub detector_invocations: u32,
    /// Wall-clock compute time per frame.
    pub frame_times_ms: Vec<f64>,
    pub tracks_created: u64,
}

impl TrackLog {
    /// Per-frame identified boxes, in the shape the evaluator consumes.
    pub fn frame_boxes(&self) -> FrameBoxes {
        let mut out = FrameBoxes::new();
        for frame in &self.frames {
            out.insert(frame.frame, frame.entries.clone());
        }
        out
    }
}

/// A failure partway through a run, carrying everything tracked so far.
#[derive(Debug)]
pub struct RunError {
    pub partial: TrackLog,
    /// Frame being processed when the failure happened.
    pub frame: u32,
    pub source: Error,
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "frame {}: {}", self.frame, self.source)
    }
}

impl std::error::Error for RunError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

fn mix(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// The tracker state machine. Drive it with [`Tracker::step_keyframe`] and
/// [`Tracker::step_flow`] in frame order, or use [`run_sequence`].
#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    tracks: Vec<Track>,
    next_id: u64,
    frame: u32,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Self {
        Tracker {
            config,
            tracks: Vec::new(),
            next_id: 1,
            frame: 0,
        }
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    /// All live (active or lost) tracks.
    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn tracks_created(&self) -> u64 {
        self.next_id - 1
    }

    fn begin_frame(&mut self) -> u32 {
        self.frame += 1;
        for track in &mut self.tracks {
            track.age += 1;
            track.frames_since_update = track.frames_since_update.saturating_add(1);
        }
        self.frame
    }

    fn report(&self, frame: u32, mode: FrameMode) -> FrameResult {
        let mut entries: Vec<(u64, crate::geometry::BoundingBox)> = self
            .tracks
            .iter()
            .filter(|t| t.state == TrackState::Active)
            .map(|t| (t.id, t.bbox))
            .collect();
        entries.sort_unstable_by_key(|(id, _)| *id);
        FrameResult {
            frame,
            mode,
            entries,
        }
    }

    /// Processes a detector frame: predicts every track forward, runs the
    /// two-stage association, updates matched tracks, demotes misses (and
    /// drops those lost beyond the tolerance), seeds new tracks from
    /// confident leftovers, and harvests fresh keypoints for the upcoming
    /// flow frames. The image is only needed when flow frames follow.
    pub fn step_keyframe(
        &mut self,
        image: Option<&GrayImage>,
        detections: &[Detection],
    ) -> Result<FrameResult, Error> {
        let frame = self.begin_frame();
        for track in &mut self.tracks {
            track.predict();
        }
        let usable: Vec<Detection> = detections
            .iter()
            .filter(|d| d.bbox.w > 0.0 && d.bbox.h > 0.0)
            .cloned()
            .collect();

        let (outcome, candidates) = byte_associate(
            &self.tracks,
            &usable,
            self.config.tau,
            self.config.tau_init,
            self.config.two_stage,
        );
        for &(track_index, det_index) in &outcome.matches {
            self.tracks[track_index].apply_detection(&usable[det_index])?;
        }
        for &track_index in &outcome.unmatched_tracks {
            self.tracks[track_index].state = TrackState::Lost;
        }
        let max_lost = self.config.max_lost;
        self.tracks
            .retain(|t| t.state == TrackState::Active || t.frames_since_update <= max_lost);
        for &det_index in &candidates {
            let track = Track::new(self.next_id, &usable[det_index])?;
            self.next_id += 1;
            self.tracks.push(track);
        }

        if self.config.use_flow && self.config.skip > 0 {
            if let Some(image) = image {
                for track in &mut self.tracks {
                    if track.state == TrackState::Active {
                        track.keypoints = detect_in_box(
                            image,
                            &track.bbox,
                            self.config.keypoint_budget,
                            self.config.fast_threshold,
                        );
                    }
                }
            }
        }
        Ok(self.report(frame, FrameMode::Keyframe))
    }

    /// Processes one detector-free frame. Active tracks are propagated by
    /// point flow from `prev` to `cur` plus a robust similarity fit; a track
    /// falls back to coasting on its motion model when pixels are
    /// unavailable, too few points survive, or no consensus transform
    /// exists. Lost tracks advance silently.
    pub fn step_flow(
        &mut self,
        pyramids: Option<(&Pyramid, &Pyramid)>,
    ) -> Result<FrameResult, Error> {
        let frame = self.begin_frame();
        let base_seed = self.config.seed;
        for track in &mut self.tracks {
            if track.state != TrackState::Active {
                track.predict();
                continue;
            }
            let propagated = match pyramids {
                Some((prev, cur)) if track.keypoints.len() >= 2 => propagate_track(
                    track,
                    prev,
                    cur,
                    &self.config.flow,
                    &self.config.ransac,
                    derive_seed(base_seed, frame, track.id),
                ),
                _ => None,
            };
            match propagated {
                Some((warped, survivors)) => {
                    track.kalman = crate::motion::kalman_predict(&track.kalman);
                    if self.config.flow_kalman_update {
                        if let Ok(updated) = kalman_update(&track.kalman, &warped) {
                            track.kalman = updated;
                        }
                    }
                    track.bbox = warped;
                    track.keypoints = survivors;
                }
                None => {
                    // Coast: motion model only; stale keypoints are useless
                    // for the next frame pair, so drop them.
                    track.predict();
                    track.keypoints.clear();
                }
            }
        }
        Ok(self.report(frame, FrameMode::Flow))
    }
}

fn derive_seed(base: u64, frame: u32, track_id: u64) -> u64 {
    mix(base ^ mix(frame as u64) ^ mix(track_id).rotate_left(17))
}

/// Flow + robust fit for one track. Returns the warped box and the surviving
/// (inlier) keypoints at their new positions, or `None` if propagation is
/// not trustworthy.
fn propagate_track(
    track: &Track,
    prev: &Pyramid,
    cur: &Pyramid,
    flow: &FlowParams,
    ransac: &RansacParams,
    seed: u64,
) -> Option<(crate::geometry::BoundingBox, Vec<Keypoint>)> {
    let results = lk_track_points(prev, cur, &track.keypoints, flow).ok()?;
    let mut src = Vec::new();
    let mut dst = Vec::new();
    let mut moved: Vec<Keypoint> = Vec::new();
    for (origin, result) in track.keypoints.iter().zip(&results) {
        if result.status == FlowStatus::Tracked {
            src.push(Point::new(origin.x, origin.y));
            dst.push(Point::new(result.point.x, result.point.y));
            moved.push(result.point);
        }
    }
    if src.len() < 2 {
        return None;
    }
    let mut params = ransac.clone();
    params.min_inliers = RansacParams::adaptive_min_inliers(src.len());
    params.seed = seed;
    let (transform, inlier_mask) = estimate_similarity_ransac(&src, &dst, &params).ok()?;
    let warped = warp_bbox(&track.bbox, &transform);
    if !(warped.w > 1e-6 && warped.h > 1e-6) || !warped.x.is_finite() || !warped.y.is_finite() {
        return None;
    }
    let survivors: Vec<Keypoint> = moved
        .into_iter()
        .zip(&inlier_mask)
        .filter(|(_, keep)| **keep)
        .map(|(kp, _)| kp)
        .collect();
    Some((warped, survivors))
}

/// Runs the tracker over a whole sequence. Frames are decoded lazily: with
/// flow disabled or no frames to skip, no pixels are ever read. On failure
/// the partially built log is returned inside the error.
pub fn run_sequence(
    frames: &mut dyn FrameSource,
    detections: &mut dyn DetectionSource,
    config: &TrackerConfig,
) -> Result<TrackLog, Box<RunError>> {
    let mut tracker = Tracker::new(config.clone());
    let mut log = TrackLog::default();
    let total = frames.num_frames();
    let need_pixels = config.use_flow && config.skip > 0;
    let mut prev_pyramid: Option<Pyramid> = None;

    let fail = |log: &TrackLog, frame: u32, source: Error| {
        Box::new(RunError {
            partial: log.clone(),
            frame,
            source,
        })
    };

    for frame in 1..=total {
        let started = Instant::now();
        let is_keyframe = (frame - 1) % (config.skip + 1) == 0;
        let cur_pyramid = if need_pixels {
            let image = frames.frame(frame).map_err(|e| fail(&log, frame, e))?;
            Some(build_pyramid(&image, config.flow.levels))
        } else {
            None
        };
        let result = if is_keyframe {
            let dets = detections
                .detections(frame)
                .map_err(|e| fail(&log, frame, e))?;
            log.detector_invocations += 1;
            tracker
                .step_keyframe(cur_pyramid.as_ref().map(|p| p.base()), &dets)
                .map_err(|e| fail(&log, frame, e))?
        } else {
            let pair = match (&prev_pyramid, &cur_pyramid) {
                (Some(prev), Some(cur)) => Some((prev, cur)),
                _ => None,
            };
            tracker.step_flow(pair).map_err(|e| fail(&log, frame, e))?
        };
        log.frame_times_ms
            .push(started.elapsed().as_secs_f64() * 1000.0);
        log.frames.push(result);
        if need_pixels {
            prev_pyramid = cur_pyramid;
        }
    }
    log.tracks_created = tracker.tracks_created();
    Ok(log)
}

/// In-memory [`FrameSource`]; index 0 holds frame 1.
#[derive(Debug, Clone)]
pub struct MemoryFrames {
    pub images: Vec<GrayImage>,
}

impl FrameSource for MemoryFrames {
    fn num_frames(&self) -> u32 {
        self.images.len() as u32
    }

    fn frame(&mut self, frame: u32) -> Result<GrayImage, Error> {
        self.images
            .get(frame as usize - 1)
            .cloned()
            .ok_or_else(|| Error::InvalidInput(format!("no frame {frame} in memory")))
    }
}

/// In-memory [`DetectionSource`]; frames without an entry yield no
/// detections.
#[derive(Debug, Clone, Default)]
pub struct MemoryDetections {
    pub frames: BTreeMap<u32, Vec<Detection>>,
}

impl DetectionSource for MemoryDetections {
    fn detections(&mut self, frame: u32) -> Result<Vec<Detection>, Error> {
        Ok(self.frames.get(&frame).cloned().unwrap_or_default())
    }
}
