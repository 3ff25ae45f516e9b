//! Boxes, IoU, and 4-DOF similarity transforms (rotation, uniform scale,
//! translation) with RANSAC estimation from point correspondences.

use crate::error::Error;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Axis-aligned box in pixel coordinates: top-left corner plus extent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        debug_assert!(w >= 0.0 && h >= 0.0);
        BoundingBox { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> Point {
        Point {
            x: self.x + self.w / 2.0,
            y: self.y + self.h / 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Intersection-over-union of two boxes. Degenerate (zero-area) input yields
/// zero rather than NaN. The result is clamped into `[0, 1]`: for boxes with
/// equal fractional coordinates the ratio can land one rounding step above 1,
/// and downstream costs of the form `1 - iou` must stay nonnegative.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.right().min(b.right()) - a.x.max(b.x)).max(0.0);
    let iy = (a.bottom().min(b.bottom()) - a.y.max(b.y)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Rotation by `theta`, uniform scale `s > 0`, then translation `(tx, ty)`.
///
/// As a 2x3 matrix:
///
/// ```text
/// [ cos(theta)*s  -sin(theta)*s  tx ]
/// [ sin(theta)*s   cos(theta)*s  ty ]
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub theta: f64,
    pub s: f64,
    pub tx: f64,
    pub ty: f64,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            theta: 0.0,
            s: 1.0,
            tx: 0.0,
            ty: 0.0,
        }
    }

    pub fn matrix(&self) -> [[f64; 3]; 2] {
        let (sin, cos) = self.theta.sin_cos();
        [
            [cos * self.s, -sin * self.s, self.tx],
            [sin * self.s, cos * self.s, self.ty],
        ]
    }

    pub fn apply(&self, p: &Point) -> Point {
        let m = self.matrix();
        Point {
            x: m[0][0] * p.x + m[0][1] * p.y + m[0][2],
            y: m[1][0] * p.x + m[1][1] * p.y + m[1][2],
        }
    }
}

/// Wraps an angle into `(-pi, pi]`.
fn normalize_angle(theta: f64) -> f64 {
    let mut t = theta % (2.0 * std::f64::consts::PI);
    if t <= -std::f64::consts::PI {
        t += 2.0 * std::f64::consts::PI;
    } else if t > std::f64::consts::PI {
        t -= 2.0 * std::f64::consts::PI;
    }
    t
}

const DEGENERATE_SPREAD: f64 = 1e-9;

/// Exact similarity from two point correspondences, via the complex ratio
/// `(dst1 - dst0) / (src1 - src0)`: its magnitude is the scale and its
/// argument the rotation. Source points closer than ~1e-9 are rejected.
pub fn solve_similarity_minimal(
    src: &[Point; 2],
    dst: &[Point; 2],
) -> Result<SimilarityTransform, Error> {
    let dx = src[1].x - src[0].x;
    let dy = src[1].y - src[0].y;
    let norm2 = dx * dx + dy * dy;
    if norm2.sqrt() < DEGENERATE_SPREAD {
        return Err(Error::DegenerateSample(
            "source points are coincident".into(),
        ));
    }
    let ex = dst[1].x - dst[0].x;
    let ey = dst[1].y - dst[0].y;
    // (ex + i ey) / (dx + i dy)
    let rx = (ex * dx + ey * dy) / norm2;
    let ry = (ey * dx - ex * dy) / norm2;
    let s = rx.hypot(ry);
    if s < DEGENERATE_SPREAD {
        return Err(Error::DegenerateSample(
            "destination points are coincident".into(),
        ));
    }
    let theta = normalize_angle(ry.atan2(rx));
    let (sin, cos) = theta.sin_cos();
    let cx = (src[0].x + src[1].x) / 2.0;
    let cy = (src[0].y + src[1].y) / 2.0;
    let mx = (dst[0].x + dst[1].x) / 2.0;
    let my = (dst[0].y + dst[1].y) / 2.0;
    Ok(SimilarityTransform {
        theta,
        s,
        tx: mx - s * (cos * cx - sin * cy),
        ty: my - s * (sin * cx + cos * cy),
    })
}

/// Least-squares similarity over paired points: rotation and scale come from
/// cross/dot-product sums of the centered clouds, translation from the
/// centroids.
pub fn fit_similarity_least_squares(
    src: &[Point],
    dst: &[Point],
) -> Result<SimilarityTransform, Error> {
    if src.len() != dst.len() {
        return Err(Error::InvalidInput(format!(
            "correspondence lists differ in length: {} vs {}",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 2 {
        return Err(Error::NotEnoughPoints {
            needed: 2,
            got: src.len(),
        });
    }
    let n = src.len() as f64;
    let (mut sx, mut sy, mut dx, mut dy) = (0.0, 0.0, 0.0, 0.0);
    for (p, q) in src.iter().zip(dst) {
        sx += p.x;
        sy += p.y;
        dx += q.x;
        dy += q.y;
    }
    let (sx, sy, dx, dy) = (sx / n, sy / n, dx / n, dy / n);
    let mut dot = 0.0;
    let mut cross = 0.0;
    let mut spread = 0.0;
    for (p, q) in src.iter().zip(dst) {
        let (px, py) = (p.x - sx, p.y - sy);
        let (qx, qy) = (q.x - dx, q.y - dy);
        dot += px * qx + py * qy;
        cross += px * qy - py * qx;
        spread += px * px + py * py;
    }
    if spread < DEGENERATE_SPREAD {
        return Err(Error::DegenerateSample(
            "source points have no spread".into(),
        ));
    }
    let s = dot.hypot(cross) / spread;
    if s < DEGENERATE_SPREAD {
        return Err(Error::DegenerateSample(
            "destination points have no spread".into(),
        ));
    }
    let theta = normalize_angle(cross.atan2(dot));
    let (sin, cos) = theta.sin_cos();
    Ok(SimilarityTransform {
        theta,
        s,
        tx: dx - s * (cos * sx - sin * sy),
        ty: dy - s * (sin * sx + cos * sy),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    pub iterations: usize,
    /// Maximum reprojection distance (px) for a correspondence to count as an
    /// inlier.
    pub inlier_threshold: f64,
    /// Minimum consensus size; callers typically raise this to half the
    /// correspondence count.
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        RansacParams {
            iterations: 100,
            inlier_threshold: 2.0,
            min_inliers: 2,
            seed: 0,
        }
    }
}

impl RansacParams {
    /// The usual consensus floor for `n` correspondences: half of them, and
    /// never fewer than two.
    pub fn adaptive_min_inliers(n: usize) -> usize {
        ((n + 1) / 2).max(2)
    }
}

/// Robust similarity estimation. Each trial draws two distinct
/// correspondences with a seeded generator, solves exactly, and scores by
/// consensus size; the best consensus (first found on ties) is refit by least
/// squares over its inliers.
///
/// Returns the refit transform and the winning inlier mask.
pub fn estimate_similarity_ransac(
    src: &[Point],
    dst: &[Point],
    params: &RansacParams,
) -> Result<(SimilarityTransform, Vec<bool>), Error> {
    if src.len() != dst.len() {
        return Err(Error::InvalidInput(format!(
            "correspondence lists differ in length: {} vs {}",
            src.len(),
            dst.len()
        )));
    }
    let n = src.len();
    if n < 2 {
        return Err(Error::NotEnoughPoints { needed: 2, got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best_count = 0usize;
    let mut best_mask: Option<Vec<bool>> = None;
    for _ in 0..params.iterations {
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let model = match solve_similarity_minimal(&[src[i], src[j]], &[dst[i], dst[j]]) {
            Ok(m) => m,
            Err(_) => continue,
        };
        let mask: Vec<bool> = src
            .iter()
            .zip(dst)
            .map(|(p, q)| model.apply(p).distance(q) <= params.inlier_threshold)
            .collect();
        let count = mask.iter().filter(|m| **m).count();
        if count > best_count {
            best_count = count;
            best_mask = Some(mask);
        }
    }
    let required = params.min_inliers.max(2);
    if best_count < required {
        return Err(Error::NoConsensus {
            best: best_count,
            required,
        });
    }
    let mask = best_mask.unwrap();
    let inlier_src: Vec<Point> = src
        .iter()
        .zip(&mask)
        .filter_map(|(p, m)| m.then_some(*p))
        .collect();
    let inlier_dst: Vec<Point> = dst
        .iter()
        .zip(&mask)
        .filter_map(|(q, m)| m.then_some(*q))
        .collect();
    let refit = fit_similarity_least_squares(&inlier_src, &inlier_dst)?;
    Ok((refit, mask))
}

/// Warps a box by transforming only its top-left and bottom-right corners,
/// then renormalizing so width and height stay non-negative. Cheap, and exact
/// for pure scale/translation; under rotation it is the usual two-corner
/// approximation rather than the hull of all four corners.
pub fn warp_bbox(bbox: &BoundingBox, transform: &SimilarityTransform) -> BoundingBox {
    let tl = transform.apply(&Point::new(bbox.x, bbox.y));
    let br = transform.apply(&Point::new(bbox.right(), bbox.bottom()));
    let x0 = tl.x.min(br.x);
    let y0 = tl.y.min(br.y);
    BoundingBox {
        x: x0,
        y: y0,
        w: (br.x - tl.x).abs(),
        h: (br.y - tl.y).abs(),
    }
}
