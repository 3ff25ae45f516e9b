//! FAST segment-test corner detection and per-box keypoint harvesting.

use crate::geometry::BoundingBox;
use crate::imgcore::GrayImage;

/// Subpixel-capable image position with a detector score. Synthetic fallback
/// points carry score 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

// The 16-pixel Bresenham circle of radius 3 around p, indexed clockwise from
// the top:
//
//           15 00 01
//        14          02
//     13                03
//     12        p      04
//     11                05
//        10          06
//           09 08 07
const CIRCLE: [(i32, i32); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

/// Segment-test result for one pixel: the corner score, if the pixel is a
/// corner.
///
/// A pixel is a corner when at least `arc` contiguous circle pixels (wrapping)
/// are all brighter than `center + threshold` or all darker than
/// `center - threshold`. The score is the maximum over such maximal runs of
/// the summed margins `|circle - center| - threshold`; each qualifying pixel
/// contributes a strictly positive term, so extending a run only raises the
/// score and the maximal runs dominate all sub-arcs.
fn segment_score(img: &GrayImage, x: usize, y: usize, threshold: f64, arc: usize) -> Option<f64> {
    let center = img.get(x, y);
    let mut bright = [false; 16];
    let mut dark = [false; 16];
    let mut margin = [0.0f64; 16];
    for (i, (dx, dy)) in CIRCLE.iter().enumerate() {
        let v = img.get((x as i32 + dx) as usize, (y as i32 + dy) as usize);
        if v > center + threshold {
            bright[i] = true;
        } else if v < center - threshold {
            dark[i] = true;
        }
        margin[i] = (v - center).abs() - threshold;
    }
    let bright_best = best_run(&bright, &margin, arc);
    let dark_best = best_run(&dark, &margin, arc);
    match (bright_best, dark_best) {
        (None, None) => None,
        (a, b) => Some(a.unwrap_or(f64::MIN).max(b.unwrap_or(f64::MIN))),
    }
}

/// Maximum summed margin over maximal circular runs of qualifying pixels with
/// length >= `arc`. Runs are enumerated from each run start (a qualifying
/// index whose predecessor does not qualify); a fully qualifying circle is a
/// single run summed from index 0.
fn best_run(qualifies: &[bool; 16], margin: &[f64; 16], arc: usize) -> Option<f64> {
    if qualifies.iter().all(|q| *q) {
        return Some(margin.iter().sum());
    }
    let mut best: Option<f64> = None;
    for start in 0..16 {
        if !qualifies[start] || qualifies[(start + 15) % 16] {
            continue;
        }
        let mut len = 0;
        let mut sum = 0.0;
        while len < 16 && qualifies[(start + len) % 16] {
            sum += margin[(start + len) % 16];
            len += 1;
        }
        if len >= arc && best.map_or(true, |b| sum > b) {
            best = Some(sum);
        }
    }
    best
}

/// FAST corner detection over the whole image, excluding a 3 px border.
///
/// `threshold` is the intensity delta of the segment test (strict
/// comparisons), `arc` the required contiguous run length (9 for FAST-9, up
/// to 12 for FAST-12). With `nonmax` set, only corners whose score is a
/// strict maximum over their 3x3 neighborhood survive.
///
/// Returned keypoints are in scan order (y, then x). Images smaller than 7x7
/// have no interior and yield an empty list.
pub fn fast_detect(img: &GrayImage, threshold: f64, arc: usize, nonmax: bool) -> Vec<Keypoint> {
    assert!(threshold > 0.0, "threshold must be positive");
    assert!((9..=12).contains(&arc), "arc must be within [9, 12]");
    let (w, h) = (img.width(), img.height());
    if w < 7 || h < 7 {
        return Vec::new();
    }
    let mut scores = vec![f64::NEG_INFINITY; w * h];
    let mut corners = Vec::new();
    for y in 3..h - 3 {
        for x in 3..w - 3 {
            if let Some(score) = segment_score(img, x, y, threshold, arc) {
                scores[y * w + x] = score;
                corners.push((x, y, score));
            }
        }
    }
    if !nonmax {
        return corners
            .into_iter()
            .map(|(x, y, score)| Keypoint {
                x: x as f64,
                y: y as f64,
                score,
            })
            .collect();
    }
    corners
        .into_iter()
        .filter(|&(x, y, score)| {
            for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let nx = (x as i32 + dx) as usize;
                    let ny = (y as i32 + dy) as usize;
                    if scores[ny * w + nx] >= score {
                        return false;
                    }
                }
            }
            true
        })
        .map(|(x, y, score)| Keypoint {
            x: x as f64,
            y: y as f64,
            score,
        })
        .collect()
}

/// Harvests up to `budget` corners inside a track's box.
///
/// The box is shrunk by 10% per side (box-edge pixels are usually background,
/// not object texture), intersected with the image, and the detector runs on
/// that crop with non-maximum suppression. Corners are ranked by score
/// descending (ties: y, then x, ascending) and truncated to the budget. A
/// textureless crop falls back to a single synthetic keypoint at the box
/// center with score 0, so every live box keeps at least one point to
/// propagate. A zero budget or a degenerate box yields an empty list.
pub fn detect_in_box(
    img: &GrayImage,
    bbox: &BoundingBox,
    budget: usize,
    threshold: f64,
) -> Vec<Keypoint> {
    if budget == 0 || bbox.w <= 0.0 || bbox.h <= 0.0 {
        return Vec::new();
    }
    let sx = bbox.x + 0.1 * bbox.w;
    let sy = bbox.y + 0.1 * bbox.h;
    let sw = 0.8 * bbox.w;
    let sh = 0.8 * bbox.h;
    let x0 = sx.floor().max(0.0) as usize;
    let y0 = sy.floor().max(0.0) as usize;
    let x1 = ((sx + sw).ceil().min(img.width() as f64)).max(0.0) as usize;
    let y1 = ((sy + sh).ceil().min(img.height() as f64)).max(0.0) as usize;

    let mut picked = Vec::new();
    if x1 > x0 && y1 > y0 {
        let (cw, ch) = (x1 - x0, y1 - y0);
        let mut crop = GrayImage::filled(cw, ch, 0.0);
        for y in 0..ch {
            for x in 0..cw {
                crop.set(x, y, img.get(x0 + x, y0 + y));
            }
        }
        picked = fast_detect(&crop, threshold, 9, true);
        for kp in &mut picked {
            kp.x += x0 as f64;
            kp.y += y0 as f64;
        }
        picked.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap()
                .then(a.y.partial_cmp(&b.y).unwrap())
                .then(a.x.partial_cmp(&b.x).unwrap())
        });
        picked.truncate(budget);
    }
    if picked.is_empty() {
        let c = bbox.center();
        picked.push(Keypoint {
            x: c.x.clamp(0.0, (img.width() - 1) as f64),
            y: c.y.clamp(0.0, (img.height() - 1) as f64),
            score: 0.0,
        });
    }
    picked
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Isolated bright 2x2 blob on a dark field: each blob pixel sees a
    /// mostly-darker circle, so the segment test fires. Intensities differ
    /// per pixel so non-maximum suppression has a strict winner.
    fn blob_image() -> GrayImage {
        let mut img = GrayImage::filled(21, 21, 20.0);
        img.set(10, 10, 230.0);
        img.set(11, 10, 210.0);
        img.set(10, 11, 205.0);
        img.set(11, 11, 220.0);
        img
    }

    #[test]
    fn flat_image_has_no_corners() {
        let img = GrayImage::filled(32, 32, 128.0);
        assert!(fast_detect(&img, 20.0, 9, false).is_empty());
    }

    #[test]
    fn too_small_image_yields_empty() {
        let img = GrayImage::filled(6, 6, 0.0);
        assert!(fast_detect(&img, 20.0, 9, false).is_empty());
    }

    #[test]
    fn isolated_blob_fires_segment_test() {
        let found = fast_detect(&blob_image(), 20.0, 9, false);
        assert!(!found.is_empty());
        assert!(found
            .iter()
            .any(|k| (k.x - 10.0).abs() <= 1.0 && (k.y - 10.0).abs() <= 1.0));
        for k in &found {
            assert!(k.score > 0.0);
        }
    }

    #[test]
    fn border_pixels_are_never_reported() {
        // Strong structure pressed into the corner of the image: anything the
        // detector returns must still respect the 3 px margin.
        let mut img = GrayImage::filled(16, 16, 10.0);
        for y in 0..5 {
            for x in 0..5 {
                img.set(x, y, 250.0);
            }
        }
        for k in fast_detect(&img, 20.0, 9, false) {
            assert!(k.x >= 3.0 && k.y >= 3.0);
            assert!(k.x <= 12.0 && k.y <= 12.0);
        }
    }

    #[test]
    fn raising_threshold_shrinks_the_corner_set() {
        let img = blob_image();
        let loose: Vec<_> = fast_detect(&img, 10.0, 9, false)
            .iter()
            .map(|k| (k.x as usize, k.y as usize))
            .collect();
        let tight = fast_detect(&img, 60.0, 9, false);
        for k in &tight {
            assert!(loose.contains(&(k.x as usize, k.y as usize)));
        }
        assert!(tight.len() <= loose.len());
    }

    #[test]
    fn nonmax_output_is_a_subset_with_identical_scores() {
        let img = blob_image();
        let all = fast_detect(&img, 20.0, 9, false);
        let kept = fast_detect(&img, 20.0, 9, true);
        assert!(!kept.is_empty());
        assert!(kept.len() <= all.len());
        for k in &kept {
            assert!(all
                .iter()
                .any(|a| a.x == k.x && a.y == k.y && a.score == k.score));
        }
    }

    #[test]
    fn nonmax_keeps_strict_local_maxima_only() {
        let img = blob_image();
        let kept = fast_detect(&img, 20.0, 9, true);
        let all = fast_detect(&img, 20.0, 9, false);
        for k in &kept {
            for a in &all {
                let (dx, dy) = ((a.x - k.x).abs(), (a.y - k.y).abs());
                if dx <= 1.0 && dy <= 1.0 && (dx, dy) != (0.0, 0.0) {
                    assert!(a.score < k.score);
                }
            }
        }
    }

    fn textured(w: usize, h: usize) -> GrayImage {
        let mut img = GrayImage::filled(w, h, 0.0);
        let mut state = 42u64;
        for y in 0..h {
            for x in 0..w {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
                img.set(x, y, (state >> 56) as f64);
            }
        }
        img
    }

    #[test]
    fn detect_in_box_respects_budget_and_ordering() {
        let img = textured(64, 64);
        let bbox = BoundingBox::new(8.0, 8.0, 48.0, 48.0);
        let kps = detect_in_box(&img, &bbox, 20, 20.0);
        assert_eq!(kps.len(), 20);
        for pair in kps.windows(2) {
            assert!(pair[0].score >= pair[1].score);
        }
        // All inside the shrunken box.
        for k in &kps {
            assert!(k.x >= 12.0 && k.x <= 52.0);
            assert!(k.y >= 12.0 && k.y <= 52.0);
        }
    }

    #[test]
    fn detect_in_box_returns_fewer_when_scarce() {
        let mut img = GrayImage::filled(40, 40, 20.0);
        for y in 18..20 {
            for x in 18..20 {
                img.set(x, y, 220.0);
            }
        }
        let bbox = BoundingBox::new(5.0, 5.0, 30.0, 30.0);
        let kps = detect_in_box(&img, &bbox, 50, 20.0);
        assert!(!kps.is_empty());
        assert!(kps.len() < 50);
    }

    #[test]
    fn detect_in_box_flat_region_falls_back_to_center() {
        let img = GrayImage::filled(40, 40, 100.0);
        let bbox = BoundingBox::new(10.0, 10.0, 20.0, 16.0);
        let kps = detect_in_box(&img, &bbox, 10, 20.0);
        assert_eq!(kps.len(), 1);
        assert_eq!((kps[0].x, kps[0].y, kps[0].score), (20.0, 18.0, 0.0));
    }

    #[test]
    fn detect_in_box_degenerate_inputs() {
        let img = textured(32, 32);
        let bbox = BoundingBox::new(4.0, 4.0, 20.0, 20.0);
        assert!(detect_in_box(&img, &bbox, 0, 20.0).is_empty());
        let degenerate = BoundingBox::new(4.0, 4.0, 0.0, 10.0);
        assert!(detect_in_box(&img, &degenerate, 5, 20.0).is_empty());
    }

    #[test]
    fn detect_in_box_clamps_fallback_into_image() {
        let img = GrayImage::filled(40, 40, 100.0);
        // Box hangs off the right edge; the fallback center is clamped inside.
        let bbox = BoundingBox::new(30.0, 10.0, 30.0, 20.0);
        let kps = detect_in_box(&img, &bbox, 5, 20.0);
        assert_eq!(kps.len(), 1);
        assert!(kps[0].x <= 39.0);
    }
}
