//! Pyramidal Lucas-Kanade point tracking.
//!
//! Coarse-to-fine: the displacement estimated at each pyramid level is doubled
//! and used as the starting guess one level down. Per level the classic
//! iteration `d <- d + G^-1 b` runs with the structure tensor `G` built once
//! from spatial gradients of the previous frame (central differences, sampled
//! bilinearly) and `b` the gradient-weighted intensity difference of the two
//! windows.

use crate::error::Error;
use crate::features::Keypoint;
use crate::imgcore::{GrayImage, Pyramid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    /// Pyramid levels to use (clamped to what both pyramids provide).
    pub levels: usize,
    /// Integration window spans `2 * window_radius + 1` pixels per side.
    pub window_radius: usize,
    /// Iteration cap per level.
    pub max_iterations: usize,
    /// Convergence threshold on the per-iteration update norm, in pixels.
    pub epsilon: f64,
    /// Minimum eigenvalue of `G` per window pixel; below this the window has
    /// too little texture to solve.
    pub min_eigenvalue: f64,
    /// Maximum mean absolute intensity difference at the converged position.
    pub max_error: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            levels: 3,
            window_radius: 7,
            max_iterations: 10,
            epsilon: 0.01,
            min_eigenvalue: 1e-4,
            max_error: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowStatus {
    Tracked,
    /// Integration window (or its gradient support) left the image at some
    /// level. Out-of-image pixels invalidate the point rather than being
    /// clamped; clamping drifts silently at borders.
    LostOutOfBounds,
    /// Structure tensor too close to singular (flat or line-like window).
    LostLowTexture,
    /// Converged, but the residual window difference exceeds `max_error`.
    LostHighError,
}

/// One tracked point: position in the next frame (best effort for lost
/// points), status, and the final mean absolute window residual (infinite
/// when it was never measured).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowResult {
    pub point: Keypoint,
    pub status: FlowStatus,
    pub error: f64,
}

/// Tracks `points` from `prev` into `next`.
///
/// Both pyramids must agree on per-level dimensions; the level count used is
/// `params.levels` clamped to what both provide. Results are returned in
/// input order.
pub fn lk_track_points(
    prev: &Pyramid,
    next: &Pyramid,
    points: &[Keypoint],
    params: &FlowParams,
) -> Result<Vec<FlowResult>, Error> {
    assert!(params.levels >= 1 && params.window_radius >= 1);
    let levels = params.levels.min(prev.num_levels()).min(next.num_levels());
    for l in 0..levels {
        let (p, n) = (prev.level(l), next.level(l));
        if p.width() != n.width() || p.height() != n.height() {
            return Err(Error::PyramidMismatch(format!(
                "level {l}: {}x{} vs {}x{}",
                p.width(),
                p.height(),
                n.width(),
                n.height()
            )));
        }
    }
    let mut scratch = Scratch::new(params.window_radius);
    Ok(points
        .iter()
        .map(|p| track_one(prev, next, p, params, levels, &mut scratch))
        .collect())
}

struct Scratch {
    template: Vec<f64>,
    grad_x: Vec<f64>,
    grad_y: Vec<f64>,
}

impl Scratch {
    fn new(radius: usize) -> Self {
        let n = (2 * radius + 1) * (2 * radius + 1);
        Scratch {
            template: vec![0.0; n],
            grad_x: vec![0.0; n],
            grad_y: vec![0.0; n],
        }
    }
}

fn window_supported(img: &GrayImage, x: f64, y: f64, radius: f64) -> bool {
    x - radius >= 0.0
        && y - radius >= 0.0
        && x + radius <= (img.width() - 1) as f64
        && y + radius <= (img.height() - 1) as f64
}

fn track_one(
    prev: &Pyramid,
    next: &Pyramid,
    point: &Keypoint,
    params: &FlowParams,
    levels: usize,
    scratch: &mut Scratch,
) -> FlowResult {
    let r = params.window_radius as i32;
    let area = ((2 * r + 1) * (2 * r + 1)) as f64;
    // Displacement carried between levels, expressed at the current level's
    // scale.
    let mut flow = (0.0f64, 0.0f64);

    let lost = |status, fx: f64, fy: f64, scale: f64, error: f64| FlowResult {
        point: Keypoint {
            x: point.x + fx * scale,
            y: point.y + fy * scale,
            score: point.score,
        },
        status,
        error,
    };

    for level in (0..levels).rev() {
        let scale = (1u32 << level) as f64;
        let pimg = prev.level(level);
        let nimg = next.level(level);
        let ux = point.x / scale;
        let uy = point.y / scale;

        // Gradient support needs one extra pixel beyond the window.
        if !window_supported(pimg, ux, uy, (r + 1) as f64) {
            return lost(
                FlowStatus::LostOutOfBounds,
                flow.0,
                flow.1,
                scale,
                f64::INFINITY,
            );
        }

        let mut gxx = 0.0;
        let mut gxy = 0.0;
        let mut gyy = 0.0;
        let mut idx = 0;
        for oy in -r..=r {
            for ox in -r..=r {
                let sx = ux + ox as f64;
                let sy = uy + oy as f64;
                let t = pimg.sample_bilinear_unchecked(sx, sy);
                let ix = (pimg.sample_bilinear_unchecked(sx + 1.0, sy)
                    - pimg.sample_bilinear_unchecked(sx - 1.0, sy))
                    / 2.0;
                let iy = (pimg.sample_bilinear_unchecked(sx, sy + 1.0)
                    - pimg.sample_bilinear_unchecked(sx, sy - 1.0))
                    / 2.0;
                scratch.template[idx] = t;
                scratch.grad_x[idx] = ix;
                scratch.grad_y[idx] = iy;
                gxx += ix * ix;
                gxy += ix * iy;
                gyy += iy * iy;
                idx += 1;
            }
        }

        let trace = gxx + gyy;
        let disc = ((gxx - gyy) * (gxx - gyy) + 4.0 * gxy * gxy).sqrt();
        let min_eig = (trace - disc) / 2.0;
        if min_eig / area < params.min_eigenvalue {
            return lost(
                FlowStatus::LostLowTexture,
                flow.0,
                flow.1,
                scale,
                f64::INFINITY,
            );
        }
        let det = gxx * gyy - gxy * gxy;

        let mut d = flow;
        for _ in 0..params.max_iterations {
            let vx = ux + d.0;
            let vy = uy + d.1;
            if !window_supported(nimg, vx, vy, r as f64) {
                return lost(FlowStatus::LostOutOfBounds, d.0, d.1, scale, f64::INFINITY);
            }
            let mut bx = 0.0;
            let mut by = 0.0;
            let mut idx = 0;
            for oy in -r..=r {
                for ox in -r..=r {
                    let diff = scratch.template[idx]
                        - nimg.sample_bilinear_unchecked(vx + ox as f64, vy + oy as f64);
                    bx += diff * scratch.grad_x[idx];
                    by += diff * scratch.grad_y[idx];
                    idx += 1;
                }
            }
            let nx = (gyy * bx - gxy * by) / det;
            let ny = (gxx * by - gxy * bx) / det;
            d.0 += nx;
            d.1 += ny;
            if nx.hypot(ny) < params.epsilon {
                break;
            }
        }
        flow = d;

        if level > 0 {
            flow.0 *= 2.0;
            flow.1 *= 2.0;
        } else {
            // Residual check at the finest level, at the final position.
            let vx = ux + flow.0;
            let vy = uy + flow.1;
            if !window_supported(nimg, vx, vy, r as f64) {
                return lost(
                    FlowStatus::LostOutOfBounds,
                    flow.0,
                    flow.1,
                    scale,
                    f64::INFINITY,
                );
            }
            let mut err = 0.0;
            let mut idx = 0;
            for oy in -r..=r {
                for ox in -r..=r {
                    err += (scratch.template[idx]
                        - nimg.sample_bilinear_unchecked(vx + ox as f64, vy + oy as f64))
                    .abs();
                    idx += 1;
                }
            }
            err /= area;
            let status = if err > params.max_error {
                FlowStatus::LostHighError
            } else {
                FlowStatus::Tracked
            };
            return FlowResult {
                point: Keypoint {
                    x: point.x + flow.0,
                    y: point.y + flow.1,
                    score: point.score,
                },
                status,
                error: err,
            };
        }
    }
    unreachable!("level 0 always returns");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgcore::build_pyramid;

    /// Deterministic multi-octave texture: coarse waves guide the pyramid's
    /// top levels, fine waves dominate the gradients, like natural imagery.
    fn noise_image(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut img = GrayImage::filled(w, h, 0.0);
        let octaves: [(f64, f64); 4] = [(64.0, 25.0), (24.0, 30.0), (9.0, 45.0), (4.0, 15.0)];
        let phase = |k: u64| {
            let mixed = (seed.wrapping_add(k).wrapping_mul(0x9E3779B97F4A7C15)) >> 11;
            mixed as f64 / (1u64 << 53) as f64 * std::f64::consts::TAU
        };
        for y in 0..h {
            for x in 0..w {
                let mut v = 127.0;
                for (i, (wavelen, amp)) in octaves.iter().enumerate() {
                    let f = std::f64::consts::TAU / wavelen;
                    let rot = phase(i as u64 * 2 + 17);
                    let u = x as f64 * rot.cos() - y as f64 * rot.sin();
                    let t = x as f64 * rot.sin() + y as f64 * rot.cos();
                    v += amp
                        * (f * u + phase(i as u64 * 2)).sin()
                        * (f * t + phase(i as u64 * 2 + 1)).cos();
                }
                img.set(x, y, v.clamp(0.0, 255.0));
            }
        }
        img
    }

    /// Shifts an image by an integer offset; vacated pixels copy the source
    /// border (points under test stay away from them).
    fn shifted(img: &GrayImage, dx: i32, dy: i32) -> GrayImage {
        let (w, h) = (img.width(), img.height());
        let mut out = GrayImage::filled(w, h, 0.0);
        for y in 0..h {
            for x in 0..w {
                let sx = (x as i32 - dx).clamp(0, w as i32 - 1) as usize;
                let sy = (y as i32 - dy).clamp(0, h as i32 - 1) as usize;
                out.set(x, y, img.get(sx, sy));
            }
        }
        out
    }

    fn grid_points(x0: f64, x1: f64, y0: f64, y1: f64, step: f64) -> Vec<Keypoint> {
        let mut pts = Vec::new();
        let mut y = y0;
        while y <= y1 {
            let mut x = x0;
            while x <= x1 {
                pts.push(Keypoint { x, y, score: 1.0 });
                x += step;
            }
            y += step;
        }
        pts
    }

    #[test]
    fn identical_frames_converge_in_place() {
        let img = noise_image(96, 96, 5);
        let pyr = build_pyramid(&img, 3);
        let pts = grid_points(40.0, 56.0, 40.0, 56.0, 8.0);
        let results = lk_track_points(&pyr, &pyr, &pts, &FlowParams::default()).unwrap();
        for (p, r) in pts.iter().zip(&results) {
            assert_eq!(r.status, FlowStatus::Tracked);
            assert!((r.point.x - p.x).hypot(r.point.y - p.y) < 0.01);
            assert!(r.error < 1e-9);
        }
    }

    #[test]
    fn integer_translation_is_recovered() {
        let a = noise_image(128, 128, 9);
        let b = shifted(&a, 3, 2);
        let pa = build_pyramid(&a, 3);
        let pb = build_pyramid(&b, 3);
        let pts = grid_points(44.0, 76.0, 44.0, 76.0, 8.0);
        let results = lk_track_points(&pa, &pb, &pts, &FlowParams::default()).unwrap();
        let mut good = 0;
        for (p, r) in pts.iter().zip(&results) {
            if r.status == FlowStatus::Tracked {
                let err = (r.point.x - (p.x + 3.0)).hypot(r.point.y - (p.y + 2.0));
                if err <= 0.25 {
                    good += 1;
                }
            }
        }
        assert!(
            good * 100 >= pts.len() * 95,
            "only {good}/{} points recovered",
            pts.len()
        );
    }

    #[test]
    fn flat_window_reports_low_texture() {
        let img = GrayImage::filled(64, 64, 90.0);
        let pyr = build_pyramid(&img, 1);
        let pts = vec![Keypoint {
            x: 32.0,
            y: 32.0,
            score: 0.0,
        }];
        let results = lk_track_points(&pyr, &pyr, &pts, &FlowParams::default()).unwrap();
        assert_eq!(results[0].status, FlowStatus::LostLowTexture);
        assert!(results[0].error.is_infinite());
    }

    #[test]
    fn border_point_reports_out_of_bounds() {
        let img = noise_image(64, 64, 3);
        let pyr = build_pyramid(&img, 1);
        let pts = vec![Keypoint {
            x: 4.0,
            y: 30.0,
            score: 0.0,
        }];
        let results = lk_track_points(&pyr, &pyr, &pts, &FlowParams::default()).unwrap();
        assert_eq!(results[0].status, FlowStatus::LostOutOfBounds);
    }

    #[test]
    fn unrelated_frames_report_high_error() {
        let a = noise_image(96, 96, 1);
        let b = noise_image(96, 96, 2);
        let pa = build_pyramid(&a, 1);
        let pb = build_pyramid(&b, 1);
        let pts = grid_points(40.0, 56.0, 40.0, 56.0, 8.0);
        let results = lk_track_points(&pa, &pb, &pts, &FlowParams::default()).unwrap();
        assert!(results
            .iter()
            .any(|r| r.status == FlowStatus::LostHighError));
        for r in &results {
            assert_ne!(r.status, FlowStatus::Tracked);
        }
    }

    #[test]
    fn mismatched_pyramids_are_rejected() {
        let a = build_pyramid(&noise_image(64, 64, 1), 2);
        let b = build_pyramid(&noise_image(80, 64, 1), 2);
        let pts = vec![Keypoint {
            x: 32.0,
            y: 32.0,
            score: 0.0,
        }];
        assert!(matches!(
            lk_track_points(&a, &b, &pts, &FlowParams::default()),
            Err(Error::PyramidMismatch(_))
        ));
    }

    #[test]
    fn results_preserve_input_order_and_score() {
        let img = noise_image(96, 96, 8);
        let pyr = build_pyramid(&img, 2);
        let pts = vec![
            Keypoint {
                x: 40.0,
                y: 40.0,
                score: 7.0,
            },
            Keypoint {
                x: 56.0,
                y: 48.0,
                score: 3.0,
            },
        ];
        let results = lk_track_points(&pyr, &pyr, &pts, &FlowParams::default()).unwrap();
        assert_eq!(results.len(), 2);
        assert_eq!(results[0].point.score, 7.0);
        assert_eq!(results[1].point.score, 3.0);
    }

    #[test]
    fn large_displacement_needs_the_pyramid() {
        let a = noise_image(160, 160, 21);
        let b = shifted(&a, 12, 0);
        let pa3 = build_pyramid(&a, 3);
        let pb3 = build_pyramid(&b, 3);
        let pts = grid_points(60.0, 84.0, 60.0, 84.0, 8.0);

        let single = FlowParams {
            levels: 1,
            ..Default::default()
        };
        let r1 = lk_track_points(&pa3, &pb3, &pts, &single).unwrap();
        let ok1 = r1
            .iter()
            .zip(&pts)
            .filter(|(r, p)| {
                r.status == FlowStatus::Tracked
                    && (r.point.x - (p.x + 12.0)).hypot(r.point.y - p.y) <= 0.5
            })
            .count();

        let r3 = lk_track_points(&pa3, &pb3, &pts, &FlowParams::default()).unwrap();
        let ok3 = r3
            .iter()
            .zip(&pts)
            .filter(|(r, p)| {
                r.status == FlowStatus::Tracked
                    && (r.point.x - (p.x + 12.0)).hypot(r.point.y - p.y) <= 0.5
            })
            .count();

        assert!(
            ok1 * 2 < pts.len(),
            "single level should fail on a 12 px shift, got {ok1}/{}",
            pts.len()
        );
        assert!(
            ok3 * 100 >= pts.len() * 95,
            "three levels should recover a 12 px shift, got {ok3}/{}",
            pts.len()
        );
    }

    #[test]
    fn forward_backward_consistency() {
        let a = noise_image(128, 128, 31);
        let b = shifted(&a, 5, -3);
        let pa = build_pyramid(&a, 3);
        let pb = build_pyramid(&b, 3);
        let pts = grid_points(48.0, 72.0, 48.0, 72.0, 8.0);
        let fwd = lk_track_points(&pa, &pb, &pts, &FlowParams::default()).unwrap();
        let tracked: Vec<Keypoint> = fwd
            .iter()
            .filter(|r| r.status == FlowStatus::Tracked)
            .map(|r| r.point)
            .collect();
        assert!(tracked.len() * 10 >= pts.len() * 9);
        let back = lk_track_points(&pb, &pa, &tracked, &FlowParams::default()).unwrap();
        let mut consistent = 0;
        let mut total = 0;
        for (orig, r) in fwd
            .iter()
            .zip(&pts)
            .filter(|(f, _)| f.status == FlowStatus::Tracked)
            .map(|(_, p)| p)
            .zip(&back)
        {
            total += 1;
            if r.status == FlowStatus::Tracked
                && (r.point.x - orig.x).hypot(r.point.y - orig.y) <= 0.5
            {
                consistent += 1;
            }
        }
        assert!(
            consistent * 10 >= total * 9,
            "round trip held for {consistent}/{total}"
        );
    }
}
