//! Cross-checks the corner detector against a naive per-pixel
//! reimplementation of the segment test that shares no code with the
//! production detector: positions and scores must agree exactly.

use hybrid_mot::imgcore::GrayImage;
use hybrid_mot::{fast_detect, Keypoint};

/// The 16 circle offsets, clockwise from straight up.
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

/// Naive corner test at one pixel: for each of the 16 rotations, check
/// whether a contiguous arc of the required length is entirely brighter than
/// `center + t` (or entirely darker than `center - t`). The score is the
/// maximum, over all qualifying maximal runs, of the run's summed margins
/// `|I - center| - t`.
fn naive_corner(img: &GrayImage, x: usize, y: usize, t: f64, arc: usize) -> Option<f64> {
    let center = img.get(x, y);
    let ring: Vec<f64> = CIRCLE
        .iter()
        .map(|&(dx, dy)| img.get((x as i32 + dx) as usize, (y as i32 + dy) as usize))
        .collect();

    let mut best: Option<f64> = None;
    for side in 0..2 {
        let qualifies: Vec<bool> = ring
            .iter()
            .map(|&v| {
                if side == 0 {
                    v > center + t
                } else {
                    v < center - t
                }
            })
            .collect();
        // All rotations: a run of `arc` consecutive qualifying pixels,
        // wrapping around.
        for start in 0..16 {
            if (0..arc).all(|k| qualifies[(start + k) % 16]) {
                // Extend to the maximal run containing this window, then sum
                // its margins. Walk back to the run start first.
                let mut begin = start;
                if qualifies.iter().all(|q| *q) {
                    // Full circle: one run covering everything.
                    begin = 0;
                } else {
                    while qualifies[(begin + 15) % 16] {
                        begin = (begin + 15) % 16;
                    }
                }
                let mut len = 0;
                while len < 16 && qualifies[(begin + len) % 16] {
                    len += 1;
                }
                let sum: f64 = (0..len)
                    .map(|k| (ring[(begin + k) % 16] - center).abs() - t)
                    .sum();
                if best.map_or(true, |b| sum > b) {
                    best = Some(sum);
                }
            }
        }
    }
    best
}

fn naive_detect(img: &GrayImage, t: f64, arc: usize) -> Vec<Keypoint> {
    let mut out = Vec::new();
    if img.width() < 7 || img.height() < 7 {
        return out;
    }
    for y in 3..img.height() - 3 {
        for x in 3..img.width() - 3 {
            if let Some(score) = naive_corner(img, x, y, t, arc) {
                out.push(Keypoint {
                    x: x as f64,
                    y: y as f64,
                    score,
                });
            }
        }
    }
    out
}

struct Lcg(u64);

impl Lcg {
    fn next(&mut self) -> u64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        self.0
    }
}

fn random_image(rng: &mut Lcg, width: usize, height: usize) -> GrayImage {
    let mut img = GrayImage::filled(width, height, 0.0);
    for y in 0..height {
        for x in 0..width {
            img.set(x, y, (rng.next() >> 56) as f64);
        }
    }
    img
}

#[test]
fn detector_matches_the_naive_oracle_exactly() {
    let mut rng = Lcg(42);
    let mut total_corners = 0usize;
    for case in 0..50 {
        let img = random_image(&mut rng, 64, 64);
        let threshold = 5.0 + (case % 7) as f64 * 10.0;
        let arc = 9 + case % 4;
        let expected = naive_detect(&img, threshold, arc);
        let got = fast_detect(&img, threshold, arc, false);
        assert_eq!(got.len(), expected.len(), "case {case}: corner count");
        for (g, e) in got.iter().zip(&expected) {
            assert_eq!((g.x, g.y), (e.x, e.y), "case {case}: position");
            assert_eq!(g.score, e.score, "case {case}: score at ({}, {})", g.x, g.y);
        }
        total_corners += expected.len();
    }
    assert!(
        total_corners > 1000,
        "noise images should produce plenty of corners, got {total_corners}"
    );
}

#[test]
fn detector_matches_the_oracle_on_structured_images() {
    // Step edges, ramps, and blobs — cases where runs wrap and tie.
    let mut img = GrayImage::filled(32, 32, 80.0);
    for y in 0..32 {
        for x in 16..32 {
            img.set(x, y, 200.0);
        }
    }
    for i in 0..8 {
        img.set(4 + i, 20, 240.0);
    }
    img.set(8, 8, 255.0);
    img.set(9, 8, 30.0);
    for (threshold, arc) in [(20.0, 9), (20.0, 12), (60.0, 10)] {
        let expected = naive_detect(&img, threshold, arc);
        let got = fast_detect(&img, threshold, arc, false);
        assert_eq!(got.len(), expected.len(), "t={threshold} arc={arc}");
        for (g, e) in got.iter().zip(&expected) {
            assert_eq!((g.x, g.y, g.score), (e.x, e.y, e.score));
        }
    }
}
