//! Detection-to-track assignment.
//!
//! Keyframe matching runs in two stages: confident detections are matched
//! against all live tracks under a fused appearance + motion cost, then the
//! leftover low-confidence detections get a second chance against the
//! remaining tracks under pure box overlap. New tracks are seeded only from
//! confident detections that stayed unmatched.

use crate::error::Error;
use crate::features::Keypoint;
use crate::geometry::{iou, BoundingBox};
use crate::motion::{
    kalman_init, kalman_predict, kalman_update, mahalanobis_gate, KalmanState, CHI2_GATE_4D,
};

/// Marks a pairing as inadmissible in a cost matrix. The solver never reports
/// a pair whose cost is this value.
pub const FORBIDDEN: f64 = f64::INFINITY;

/// Weight of the appearance term in the fused cost (the motion term gets the
/// complement).
pub const APPEARANCE_WEIGHT: f64 = 0.98;
/// A first-stage match is kept only if its fused cost is at most this.
pub const STAGE1_MAX_COST: f64 = 0.7;
/// A second-stage match is kept only if its overlap cost is at most this.
pub const STAGE2_MAX_COST: f64 = 0.5;
/// Detections at or below this confidence are discarded outright.
pub const MIN_DETECTION_CONF: f64 = 0.1;
/// Pairs overlapping less than this are inadmissible in overlap matrices.
pub const IOU_FLOOR: f64 = 0.1;
/// Appearance memory: the retained fraction of the previous embedding when a
/// fresh one arrives.
pub const EMBEDDING_MOMENTUM: f64 = 0.9;

/// One detector output on a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub confidence: f64,
    /// Appearance descriptor, unit-normalized when present.
    pub embedding: Option<Vec<f64>>,
}

impl Detection {
    pub fn new(bbox: BoundingBox, confidence: f64) -> Self {
        Detection {
            bbox,
            confidence,
            embedding: None,
        }
    }

    pub fn with_embedding(bbox: BoundingBox, confidence: f64, embedding: Vec<f64>) -> Self {
        Detection {
            bbox,
            confidence,
            embedding: Some(embedding),
        }
    }
}

/// Lifecycle stage of a track.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackState {
    /// Matched or propagated recently; reported every frame.
    Active,
    /// Missed at the latest keyframe; kept alive silently for re-association.
    Lost,
    /// Lost for too long; dropped from the tracker.
    Removed,
}

/// One tracked object.
#[derive(Debug, Clone)]
pub struct Track {
    pub id: u64,
    pub state: TrackState,
    pub kalman: KalmanState,
    /// Box reported for the current frame (posterior on keyframes, warped or
    /// predicted elsewhere).
    pub bbox: BoundingBox,
    /// Smoothed appearance descriptor, unit-normalized when present.
    pub embedding: Option<Vec<f64>>,
    /// Feature points inside the box, used to estimate inter-frame motion.
    pub keypoints: Vec<Keypoint>,
    /// Frames elapsed since the last detector confirmation.
    pub frames_since_update: u32,
    /// Frames elapsed since creation.
    pub age: u32,
}

impl Track {
    /// Seeds a track from a detection; fails on a degenerate box.
    pub fn new(id: u64, detection: &Detection) -> Result<Self, Error> {
        Ok(Track {
            id,
            state: TrackState::Active,
            kalman: kalman_init(&detection.bbox)?,
            bbox: detection.bbox,
            embedding: detection.embedding.clone().map(unit_normalized),
            keypoints: Vec::new(),
            frames_since_update: 0,
            age: 1,
        })
    }

    /// Advances the motion model one frame and refreshes the reported box
    /// from the predicted mean.
    pub fn predict(&mut self) {
        self.kalman = kalman_predict(&self.kalman);
        self.bbox = self.kalman.bbox();
    }

    /// Folds a confirming detection into the track: measurement update,
    /// posterior box, appearance blend, and counter reset.
    pub fn apply_detection(&mut self, detection: &Detection) -> Result<(), Error> {
        self.kalman = kalman_update(&self.kalman, &detection.bbox)?;
        self.bbox = self.kalman.bbox();
        if let Some(new) = &detection.embedding {
            self.embedding = Some(match &self.embedding {
                Some(old) => blended_embedding(old, new),
                None => unit_normalized(new.clone()),
            });
        }
        self.state = TrackState::Active;
        self.frames_since_update = 0;
        Ok(())
    }
}

fn unit_normalized(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 1e-12 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

/// Exponential moving average of unit embeddings, renormalized. If the blend
/// cancels to (numerically) zero the previous embedding is kept.
fn blended_embedding(old: &[f64], new: &[f64]) -> Vec<f64> {
    let fresh = unit_normalized(new.to_vec());
    let mut out: Vec<f64> = old
        .iter()
        .zip(&fresh)
        .map(|(o, n)| EMBEDDING_MOMENTUM * o + (1.0 - EMBEDDING_MOMENTUM) * n)
        .collect();
    let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 1e-12 {
        for x in &mut out {
            *x /= norm;
        }
        out
    } else {
        old.to_vec()
    }
}

fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na > 1e-12 && nb > 1e-12 {
        dot / (na * nb)
    } else {
        0.0
    }
}

/// Dense rectangular cost matrix. Entries are finite nonnegative costs or
/// [`FORBIDDEN`].
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    /// Validates that `data` is row-major `rows * cols` and every entry is
    /// either a finite nonnegative cost or [`FORBIDDEN`].
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, Error> {
        if data.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "cost matrix {}x{} needs {} entries, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| v.is_nan() || **v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "cost entries must be nonnegative or FORBIDDEN, got {bad}"
            )));
        }
        Ok(CostMatrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        CostMatrix::new(rows, cols, data).expect("generator produced an invalid cost")
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        CostMatrix::from_fn(rows, cols, |_, _| value)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        assert!(
            row < self.rows && col < self.cols,
            "cost index out of range"
        );
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        assert!(
            row < self.rows && col < self.cols,
            "cost index out of range"
        );
        assert!(!value.is_nan() && value >= 0.0, "invalid cost {value}");
        self.data[row * self.cols + col] = value;
    }

    pub fn transposed(&self) -> CostMatrix {
        CostMatrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }
}

/// Finite surrogate for [`FORBIDDEN`] entries: a power of two strictly larger
/// than any possible sum of admissible costs, so that minimizing total cost
/// first maximizes the number of admissible pairs, and integer-valued inputs
/// keep exact arithmetic.
fn forbidden_surrogate(costs: &CostMatrix) -> f64 {
    let max_finite = costs
        .data
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let bound = costs.rows.max(costs.cols) as f64 * max_finite + 1.0;
    f64::powi(2.0, bound.log2().ceil() as i32)
}

/// Minimum-cost assignment via shortest augmenting paths with potentials.
///
/// Returns `(row, col)` pairs sorted by row. Among assignments of maximal
/// admissible cardinality the result has minimal total cost; [`FORBIDDEN`]
/// pairs are never reported. Ties are broken deterministically toward lower
/// indices.
pub fn hungarian_solve(costs: &CostMatrix) -> Vec<(usize, usize)> {
    let (rows, cols) = (costs.rows, costs.cols);
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    if rows > cols {
        // The path construction below needs at least as many columns as rows;
        // solve the transpose and swap the pair order back.
        let mut pairs: Vec<(usize, usize)> = hungarian_solve(&costs.transposed())
            .into_iter()
            .map(|(r, c)| (c, r))
            .collect();
        pairs.sort_unstable();
        return pairs;
    }

    let big = forbidden_surrogate(costs);
    let cost_at = |row: usize, col: usize| -> f64 {
        let v = costs.get(row - 1, col - 1);
        if v.is_finite() {
            v
        } else {
            big
        }
    };

    // 1-based arrays; index 0 is the virtual unmatched column.
    let (n, m) = (rows, cols);
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut matched_row = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost_at(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        // Augment along the recorded path.
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs = Vec::new();
    for j in 1..=m {
        let i = matched_row[j];
        if i != 0 && costs.get(i - 1, j - 1).is_finite() {
            pairs.push((i - 1, j - 1));
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Overlap cost `1 - IoU`, with pairs overlapping less than [`IOU_FLOOR`]
/// marked [`FORBIDDEN`].
pub fn iou_cost(track_boxes: &[BoundingBox], detection_boxes: &[BoundingBox]) -> CostMatrix {
    CostMatrix::from_fn(track_boxes.len(), detection_boxes.len(), |r, c| {
        let overlap = iou(&track_boxes[r], &detection_boxes[c]);
        if overlap < IOU_FLOOR {
            FORBIDDEN
        } else {
            1.0 - overlap
        }
    })
}

/// Appearance + motion cost for confident detections:
/// `0.98 * (1 - cos) + 0.02 * (d^2 / 9.4877)`, with pairs whose squared
/// Mahalanobis distance exceeds the gate marked [`FORBIDDEN`]. If any track
/// or detection lacks an embedding the whole matrix falls back to
/// [`iou_cost`]. A track whose innovation covariance cannot be factorized
/// keeps an all-[`FORBIDDEN`] row rather than failing the frame.
pub fn fused_cost(tracks: &[Track], detections: &[Detection]) -> CostMatrix {
    let missing_embedding = tracks.iter().any(|t| t.embedding.is_none())
        || detections.iter().any(|d| d.embedding.is_none());
    if missing_embedding {
        let track_boxes: Vec<BoundingBox> = tracks.iter().map(|t| t.bbox).collect();
        let det_boxes: Vec<BoundingBox> = detections.iter().map(|d| d.bbox).collect();
        return iou_cost(&track_boxes, &det_boxes);
    }

    let det_boxes: Vec<BoundingBox> = detections.iter().map(|d| d.bbox).collect();
    let mut costs = CostMatrix::filled(tracks.len(), detections.len(), FORBIDDEN);
    for (ti, track) in tracks.iter().enumerate() {
        let distances = match mahalanobis_gate(&track.kalman, &det_boxes) {
            Ok(d) => d,
            Err(_) => continue,
        };
        let track_embedding = track.embedding.as_deref().expect("checked above");
        for (di, detection) in detections.iter().enumerate() {
            if distances[di] > CHI2_GATE_4D {
                continue;
            }
            let cos = cosine_similarity(
                track_embedding,
                detection.embedding.as_deref().expect("checked above"),
            );
            let appearance = 1.0 - cos;
            let motion = distances[di] / CHI2_GATE_4D;
            costs.set(
                ti,
                di,
                APPEARANCE_WEIGHT * appearance + (1.0 - APPEARANCE_WEIGHT) * motion,
            );
        }
    }
    costs
}

/// Result of one keyframe association. Indices refer to the input slices;
/// every track appears exactly once in `matches` or `unmatched_tracks`, and
/// every detection above the confidence floor exactly once in `matches` or
/// `unmatched_detections`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssociationOutcome {
    /// `(track index, detection index)` pairs, sorted by track index.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Two-stage assignment. Stage one matches detections with confidence above
/// `tau` against all tracks under [`fused_cost`], keeping pairs at cost at
/// most [`STAGE1_MAX_COST`]. Stage two (when `two_stage` is set) matches the
/// remaining detections with confidence in `(0.1, tau]` against the tracks
/// left over, under [`iou_cost`] with acceptance [`STAGE2_MAX_COST`]. A pair
/// rejected by an acceptance threshold leaves both endpoints unmatched.
///
/// The second return value lists unmatched confident detections with
/// confidence at least `tau_init` — the candidates allowed to seed new
/// tracks.
pub fn byte_associate(
    tracks: &[Track],
    detections: &[Detection],
    tau: f64,
    tau_init: f64,
    two_stage: bool,
) -> (AssociationOutcome, Vec<usize>) {
    let high: Vec<usize> = (0..detections.len())
        .filter(|&i| detections[i].confidence > tau)
        .collect();
    let low: Vec<usize> = (0..detections.len())
        .filter(|&i| {
            let c = detections[i].confidence;
            c > MIN_DETECTION_CONF && c <= tau
        })
        .collect();

    let mut track_matched = vec![false; tracks.len()];
    let mut high_matched = vec![false; high.len()];
    let mut low_matched = vec![false; low.len()];
    let mut matches: Vec<(usize, usize)> = Vec::new();

    let high_dets: Vec<Detection> = high.iter().map(|&i| detections[i].clone()).collect();
    let stage1 = fused_cost(tracks, &high_dets);
    for (t, d) in hungarian_solve(&stage1) {
        if stage1.get(t, d) <= STAGE1_MAX_COST {
            matches.push((t, high[d]));
            track_matched[t] = true;
            high_matched[d] = true;
        }
    }

    if two_stage && !low.is_empty() {
        let remaining: Vec<usize> = (0..tracks.len()).filter(|&t| !track_matched[t]).collect();
        let remaining_boxes: Vec<BoundingBox> = remaining.iter().map(|&t| tracks[t].bbox).collect();
        let low_boxes: Vec<BoundingBox> = low.iter().map(|&i| detections[i].bbox).collect();
        let stage2 = iou_cost(&remaining_boxes, &low_boxes);
        for (r, d) in hungarian_solve(&stage2) {
            if stage2.get(r, d) <= STAGE2_MAX_COST {
                matches.push((remaining[r], low[d]));
                track_matched[remaining[r]] = true;
                low_matched[d] = true;
            }
        }
    }

    let unmatched_tracks: Vec<usize> = (0..tracks.len()).filter(|&t| !track_matched[t]).collect();
    let mut unmatched_detections: Vec<usize> = high
        .iter()
        .zip(&high_matched)
        .filter(|(_, m)| !**m)
        .map(|(&i, _)| i)
        .chain(
            low.iter()
                .zip(&low_matched)
                .filter(|(_, m)| !**m)
                .map(|(&i, _)| i),
        )
        .collect();
    unmatched_detections.sort_unstable();

    let candidates: Vec<usize> = high
        .iter()
        .zip(&high_matched)
        .filter(|(&i, m)| !**m && detections[i].confidence >= tau_init)
        .map(|(&i, _)| i)
        .collect();

    matches.sort_unstable();
    (
        AssociationOutcome {
            matches,
            unmatched_tracks,
            unmatched_detections,
        },
        candidates,
    )
}
