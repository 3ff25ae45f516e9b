//! Tracking quality metrics (multi-object accuracy and precision) and a
//! deterministic synthetic sequence generator used by the end-to-end tests
//! and the benchmark command.

use crate::association::{hungarian_solve, CostMatrix, Detection, FORBIDDEN};
use crate::error::Error;
use crate::geometry::{iou, BoundingBox};
use crate::imgcore::GrayImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

/// Identified boxes per frame (frame numbers are 1-based).
pub type FrameBoxes = BTreeMap<u32, Vec<(u64, BoundingBox)>>;

/// Accumulated matching statistics over a sequence.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ClearCounts {
    /// Hypothesis boxes with no ground-truth partner.
    pub false_positives: usize,
    /// Ground-truth boxes with no hypothesis partner.
    pub misses: usize,
    /// Matches where a ground-truth object changed hypothesis identity
    /// relative to its last known partner (gaps included).
    pub id_switches: usize,
    /// Total ground-truth boxes seen.
    pub gt_boxes: usize,
    /// Total matched pairs.
    pub matches: usize,
    /// Summed `1 - IoU` over matched pairs.
    pub sum_distance: f64,
}

/// Multi-object tracking accuracy:
/// `1 - (FP + FN + IDS) / GT`. Undefined without ground truth.
pub fn mota(counts: &ClearCounts) -> Result<f64, Error> {
    if counts.gt_boxes == 0 {
        return Err(Error::UndefinedMetric {
            metric: "MOTA",
            reason: "no ground-truth boxes".into(),
        });
    }
    let errors = (counts.false_positives + counts.misses + counts.id_switches) as f64;
    Ok(1.0 - errors / counts.gt_boxes as f64)
}

/// Multi-object tracking precision: mean `1 - IoU` over matched pairs
/// (lower is better). Undefined without matches.
pub fn motp(counts: &ClearCounts) -> Result<f64, Error> {
    if counts.matches == 0 {
        return Err(Error::UndefinedMetric {
            metric: "MOTP",
            reason: "no matched boxes".into(),
        });
    }
    Ok(counts.sum_distance / counts.matches as f64)
}

fn check_unique_ids(boxes: &[(u64, BoundingBox)]) -> Result<(), Error> {
    let mut seen = HashSet::new();
    for (id, _) in boxes {
        if !seen.insert(*id) {
            return Err(Error::DuplicateId { id: *id });
        }
    }
    Ok(())
}

/// Matches one frame and folds the result into `counts`.
///
/// Pairs still valid from the previous frames (same identities, overlap at
/// least `iou_min`) are locked first; the remainder is assigned by minimum
/// total `1 - IoU`. `mapping` holds each ground-truth object's last known
/// hypothesis partner and persists across frames and gaps, so a switch is
/// counted even when the object was unseen in between.
fn match_frame(
    gt: &[(u64, BoundingBox)],
    hyp: &[(u64, BoundingBox)],
    iou_min: f64,
    mapping: &mut HashMap<u64, u64>,
    counts: &mut ClearCounts,
) -> Result<(), Error> {
    check_unique_ids(gt)?;
    check_unique_ids(hyp)?;
    counts.gt_boxes += gt.len();

    let hyp_index: HashMap<u64, usize> = hyp
        .iter()
        .enumerate()
        .map(|(i, (id, _))| (*id, i))
        .collect();
    let mut gt_matched = vec![false; gt.len()];
    let mut hyp_matched = vec![false; hyp.len()];
    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();

    // Keep persisting pairs before any fresh assignment.
    for (gi, (gid, gbox)) in gt.iter().enumerate() {
        if let Some(hid) = mapping.get(gid) {
            if let Some(&hi) = hyp_index.get(hid) {
                if !hyp_matched[hi] {
                    let overlap = iou(gbox, &hyp[hi].1);
                    if overlap >= iou_min {
                        gt_matched[gi] = true;
                        hyp_matched[hi] = true;
                        pairs.push((gi, hi, 1.0 - overlap));
                    }
                }
            }
        }
    }

    let free_gt: Vec<usize> = (0..gt.len()).filter(|&i| !gt_matched[i]).collect();
    let free_hyp: Vec<usize> = (0..hyp.len()).filter(|&i| !hyp_matched[i]).collect();
    let costs = CostMatrix::from_fn(free_gt.len(), free_hyp.len(), |r, c| {
        let overlap = iou(&gt[free_gt[r]].1, &hyp[free_hyp[c]].1);
        if overlap >= iou_min {
            1.0 - overlap
        } else {
            FORBIDDEN
        }
    });
    for (r, c) in hungarian_solve(&costs) {
        let (gi, hi) = (free_gt[r], free_hyp[c]);
        gt_matched[gi] = true;
        hyp_matched[hi] = true;
        pairs.push((gi, hi, costs.get(r, c)));
    }

    pairs.sort_unstable_by(|a, b| a.0.cmp(&b.0));
    for (gi, hi, distance) in pairs {
        let gid = gt[gi].0;
        let hid = hyp[hi].0;
        if let Some(&previous) = mapping.get(&gid) {
            if previous != hid {
                counts.id_switches += 1;
            }
        }
        mapping.insert(gid, hid);
        counts.matches += 1;
        counts.sum_distance += distance;
    }
    counts.misses += gt_matched.iter().filter(|m| !**m).count();
    counts.false_positives += hyp_matched.iter().filter(|m| !**m).count();
    Ok(())
}

/// Scores a hypothesis track set against ground truth over every frame
/// present in either side. `iou_min` is the minimum overlap for a valid
/// correspondence (rejects matched pairs below it).
pub fn evaluate_sequence(
    gt: &FrameBoxes,
    hypotheses: &FrameBoxes,
    iou_min: f64,
) -> Result<ClearCounts, Error> {
    let mut counts = ClearCounts::default();
    let mut mapping: HashMap<u64, u64> = HashMap::new();
    let frames: BTreeSet<u32> = gt.keys().chain(hypotheses.keys()).copied().collect();
    let empty: Vec<(u64, BoundingBox)> = Vec::new();
    for frame in frames {
        let g = gt.get(&frame).unwrap_or(&empty);
        let h = hypotheses.get(&frame).unwrap_or(&empty);
        match_frame(g, h, iou_min, &mut mapping, &mut counts)?;
    }
    Ok(counts)
}

/// A detector dropout window: between `from` and `to` (inclusive) the
/// object's detections carry `confidence` instead of the sequence default;
/// zero or negative suppresses them entirely.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Occlusion {
    pub from: u32,
    pub to: u32,
    pub confidence: f64,
}

/// Scripted motion of one synthetic object. Positions are exact (fractional)
/// in the ground truth; rendering rounds to whole pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectScript {
    /// First frame the object exists on (1-based, inclusive).
    pub start_frame: u32,
    /// Last frame the object exists on (inclusive).
    pub end_frame: u32,
    /// Box at `start_frame`.
    pub bbox: BoundingBox,
    /// Per-frame displacement applied from `start_frame` onward.
    pub velocity: (f64, f64),
    /// `(frame, velocity)` pairs: from each listed frame onward the object
    /// moves with the new velocity (applied to the step leaving that frame).
    pub velocity_changes: Vec<(u32, (f64, f64))>,
    pub occlusions: Vec<Occlusion>,
}

impl ObjectScript {
    pub fn constant_velocity(
        start_frame: u32,
        end_frame: u32,
        bbox: BoundingBox,
        vx: f64,
        vy: f64,
    ) -> Self {
        ObjectScript {
            start_frame,
            end_frame,
            bbox,
            velocity: (vx, vy),
            velocity_changes: Vec::new(),
            occlusions: Vec::new(),
        }
    }

    pub fn with_velocity_change(mut self, at_frame: u32, vx: f64, vy: f64) -> Self {
        self.velocity_changes.push((at_frame, (vx, vy)));
        self.velocity_changes.sort_unstable_by_key(|(f, _)| *f);
        self
    }

    pub fn with_occlusion(mut self, occlusion: Occlusion) -> Self {
        self.occlusions.push(occlusion);
        self
    }

    fn velocity_leaving(&self, frame: u32) -> (f64, f64) {
        let mut v = self.velocity;
        for (change_frame, new_v) in &self.velocity_changes {
            if *change_frame <= frame {
                v = *new_v;
            }
        }
        v
    }

    /// Box on `frame`, or `None` outside the object's lifetime.
    pub fn bbox_at(&self, frame: u32) -> Option<BoundingBox> {
        if frame < self.start_frame || frame > self.end_frame {
            return None;
        }
        let mut bbox = self.bbox;
        for t in self.start_frame..frame {
            let (vx, vy) = self.velocity_leaving(t);
            bbox.x += vx;
            bbox.y += vy;
        }
        Some(bbox)
    }

    fn occluded_confidence(&self, frame: u32) -> Option<f64> {
        self.occlusions
            .iter()
            .find(|o| o.from <= frame && frame <= o.to)
            .map(|o| o.confidence)
    }
}

/// Parameters of a synthetic sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub frames: u32,
    pub width: usize,
    pub height: usize,
    pub objects: Vec<ObjectScript>,
    pub seed: u64,
    /// Standard deviation of the Gaussian jitter added to every detected
    /// box edge coordinate.
    pub detection_noise: f64,
    /// Confidence of unoccluded detections.
    pub detection_confidence: f64,
}

impl SyntheticSpec {
    pub fn new(frames: u32, width: usize, height: usize, objects: Vec<ObjectScript>) -> Self {
        SyntheticSpec {
            frames,
            width,
            height,
            objects,
            seed: 0,
            detection_noise: 1.0,
            detection_confidence: 0.9,
        }
    }
}

/// A rendered synthetic sequence: one grayscale image per frame (index 0 is
/// frame 1), exact ground-truth boxes, and jittered detections. Object ids
/// are script indices plus one.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub images: Vec<GrayImage>,
    pub gt: FrameBoxes,
    pub detections: BTreeMap<u32, Vec<Detection>>,
}

const BACKGROUND: f64 = 24.0;
const MIN_DETECTION_SIZE: f64 = 4.0;

fn mix(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn unit_phase(seed: u64) -> f64 {
    (mix(seed) >> 11) as f64 / (1u64 << 53) as f64
}

/// Textured intensity at patch-local coordinates. Layered rotated sinusoid
/// products give structure at several scales, so both corner detection and
/// coarse-to-fine flow have something to lock onto.
fn patch_value(object_seed: u64, u: f64, v: f64) -> f64 {
    const OCTAVES: [(f64, f64); 3] = [(17.0, 55.0), (7.3, 35.0), (3.1, 20.0)];
    let mut value = 150.0;
    for (k, (wavelength, amplitude)) in OCTAVES.iter().enumerate() {
        let s = object_seed.wrapping_add(k as u64);
        let angle = unit_phase(s) * std::f64::consts::PI;
        let (sin_a, cos_a) = angle.sin_cos();
        let a = (u * cos_a + v * sin_a) / wavelength;
        let b = (-u * sin_a + v * cos_a) / (wavelength * 1.7);
        let p1 = unit_phase(s.wrapping_add(101)) * std::f64::consts::TAU;
        let p2 = unit_phase(s.wrapping_add(202)) * std::f64::consts::TAU;
        value += amplitude
            * (std::f64::consts::TAU * a + p1).sin()
            * (std::f64::consts::TAU * b + p2).cos();
    }
    value.clamp(0.0, 255.0)
}

/// Renders a sequence from a spec. Every scripted box must stay entirely on
/// the canvas for its whole lifetime; lifetimes must fit inside the frame
/// range and sizes must be at least 4x4.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData, Error> {
    if spec.frames == 0 {
        return Err(Error::InvalidInput(
            "a sequence needs at least one frame".into(),
        ));
    }
    if spec.width < 16 || spec.height < 16 {
        return Err(Error::InvalidInput(format!(
            "canvas {}x{} is too small to render",
            spec.width, spec.height
        )));
    }
    if !(spec.detection_noise >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "detection noise {} must be nonnegative",
            spec.detection_noise
        )));
    }
    for (index, object) in spec.objects.iter().enumerate() {
        if object.start_frame == 0
            || object.start_frame > object.end_frame
            || object.end_frame > spec.frames
        {
            return Err(Error::InvalidInput(format!(
                "object {} lifetime {}..={} outside 1..={}",
                index + 1,
                object.start_frame,
                object.end_frame,
                spec.frames
            )));
        }
        for frame in object.start_frame..=object.end_frame {
            let bbox = object.bbox_at(frame).expect("frame is within lifetime");
            if bbox.w < MIN_DETECTION_SIZE || bbox.h < MIN_DETECTION_SIZE {
                return Err(Error::InvalidInput(format!(
                    "object {} is {}x{} on frame {frame}; minimum is 4x4",
                    index + 1,
                    bbox.w,
                    bbox.h
                )));
            }
            if bbox.x < 0.0
                || bbox.y < 0.0
                || bbox.right() > spec.width as f64
                || bbox.bottom() > spec.height as f64
            {
                return Err(Error::InvalidInput(format!(
                    "object {} leaves the {}x{} canvas on frame {frame}",
                    index + 1,
                    spec.width,
                    spec.height
                )));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let jitter = Normal::new(0.0, spec.detection_noise)
        .map_err(|e| Error::InvalidInput(format!("detection noise: {e}")))?;

    let mut images = Vec::with_capacity(spec.frames as usize);
    let mut gt: FrameBoxes = BTreeMap::new();
    let mut detections: BTreeMap<u32, Vec<Detection>> = BTreeMap::new();
    for frame in 1..=spec.frames {
        let mut image = GrayImage::filled(spec.width, spec.height, BACKGROUND);
        let mut frame_gt = Vec::new();
        let mut frame_dets = Vec::new();
        for (index, object) in spec.objects.iter().enumerate() {
            let Some(bbox) = object.bbox_at(frame) else {
                continue;
            };
            let object_seed = mix(spec.seed ^ (index as u64 + 1));
            let left = bbox.x.round() as usize;
            let top = bbox.y.round() as usize;
            let pw = (bbox.w.round() as usize).min(spec.width - left);
            let ph = (bbox.h.round() as usize).min(spec.height - top);
            for py in 0..ph {
                for px in 0..pw {
                    image.set(
                        left + px,
                        top + py,
                        patch_value(object_seed, px as f64, py as f64),
                    );
                }
            }
            frame_gt.push((index as u64 + 1, bbox));

            let confidence = object
                .occluded_confidence(frame)
                .unwrap_or(spec.detection_confidence);
            if confidence > 0.0 {
                let dx = jitter.sample(&mut rng);
                let dy = jitter.sample(&mut rng);
                let dw = jitter.sample(&mut rng);
                let dh = jitter.sample(&mut rng);
                let detected = BoundingBox {
                    x: bbox.x + dx,
                    y: bbox.y + dy,
                    w: (bbox.w + dw).max(MIN_DETECTION_SIZE),
                    h: (bbox.h + dh).max(MIN_DETECTION_SIZE),
                };
                frame_dets.push(Detection::new(detected, confidence));
            }
        }
        images.push(image);
        gt.insert(frame, frame_gt);
        detections.insert(frame, frame_dets);
    }
    Ok(SyntheticData {
        images,
        gt,
        detections,
    })
}
