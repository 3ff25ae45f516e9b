//! Grayscale image storage, bilinear sampling, and binomial image pyramids.
//!
//! Intensities are kept as `f64` in `[0, 255]`; subpixel work elsewhere in the
//! crate (flow, corner scores) stays in the same scale so thresholds read like
//! 8-bit intensity deltas.

use crate::error::Error;

/// Interleaved 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl ColorImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, Error> {
        if data.len() != width * height * 3 {
            return Err(Error::InvalidInput(format!(
                "color buffer length {} does not match {}x{}x3",
                data.len(),
                width,
                height
            )));
        }
        Ok(ColorImage {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }
}

/// Row-major grayscale image with `f64` intensities in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    /// Builds an image from a row-major buffer. Every intensity must be
    /// finite and within `[0, 255]`.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, Error> {
        if data.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "gray buffer length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        if let Some(bad) = data
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 255.0)
        {
            return Err(Error::InvalidInput(format!(
                "intensity {bad} outside [0, 255]"
            )));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!((0.0..=255.0).contains(&value));
        GrayImage {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x] = value;
    }

    /// Bilinear sample at a subpixel position. The valid domain is
    /// `[0, width-1] x [0, height-1]`; pixel centers sit on integer
    /// coordinates, so sampling at an integer position returns that pixel
    /// exactly.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Result<f64, Error> {
        if !x.is_finite()
            || !y.is_finite()
            || x < 0.0
            || y < 0.0
            || x > (self.width - 1) as f64
            || y > (self.height - 1) as f64
        {
            return Err(Error::OutOfBounds {
                x,
                y,
                width: self.width,
                height: self.height,
            });
        }
        Ok(self.sample_bilinear_unchecked(x, y))
    }

    /// Caller guarantees `0 <= x <= width-1` and `0 <= y <= height-1`.
    #[inline]
    pub(crate) fn sample_bilinear_unchecked(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

/// ITU-R BT.601 luma conversion: `0.299 R + 0.587 G + 0.114 B`.
pub fn to_grayscale(image: &ColorImage) -> GrayImage {
    let mut data = Vec::with_capacity(image.width * image.height);
    for px in image.data.chunks_exact(3) {
        data.push(0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64);
    }
    GrayImage {
        width: image.width,
        height: image.height,
        data,
    }
}

/// Coarse-to-fine image stack. Level 0 is the full-resolution frame; level
/// `L+1` is level `L` blurred with the 5-tap binomial kernel
/// `[1, 4, 6, 4, 1] / 16` (separably, borders clamped) and decimated by two.
///
/// Halving stops once the next level would be smaller than 16 px in both
/// dimensions (or thinner than 8 px in either), so requesting more levels than
/// the image supports yields a shorter stack. Level 0 is always present.
#[derive(Debug, Clone)]
pub struct Pyramid {
    levels: Vec<GrayImage>,
}

impl Pyramid {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, index: usize) -> &GrayImage {
        &self.levels[index]
    }

    pub fn base(&self) -> &GrayImage {
        &self.levels[0]
    }
}

const MIN_LEVEL_MAX_DIM: usize = 16;
const MIN_LEVEL_MIN_DIM: usize = 8;

fn halving_allowed(width: usize, height: usize) -> bool {
    let (nw, nh) = (width / 2, height / 2);
    (nw >= MIN_LEVEL_MAX_DIM || nh >= MIN_LEVEL_MAX_DIM)
        && nw >= MIN_LEVEL_MIN_DIM
        && nh >= MIN_LEVEL_MIN_DIM
}

/// Builds a pyramid with up to `levels` levels (at least one).
pub fn build_pyramid(image: &GrayImage, levels: usize) -> Pyramid {
    assert!(levels >= 1, "a pyramid has at least one level");
    let mut stack = vec![image.clone()];
    while stack.len() < levels {
        let top = stack.last().unwrap();
        if !halving_allowed(top.width(), top.height()) {
            break;
        }
        stack.push(blur_decimate(top));
    }
    Pyramid { levels: stack }
}

const KERNEL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

fn blur_decimate(image: &GrayImage) -> GrayImage {
    let (w, h) = (image.width(), image.height());
    // Horizontal pass with clamped borders.
    let mut tmp = GrayImage::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, weight) in KERNEL.iter().enumerate() {
                let sx = (x as isize + k as isize - 2).clamp(0, w as isize - 1) as usize;
                acc += weight * image.get(sx, y);
            }
            tmp.set(x, y, acc);
        }
    }
    // Vertical pass, then decimation by keeping even coordinates.
    let (ow, oh) = (w / 2, h / 2);
    let mut out = GrayImage::filled(ow, oh, 0.0);
    for oy in 0..oh {
        for ox in 0..ow {
            let x = ox * 2;
            let y = oy * 2;
            let mut acc = 0.0;
            for (k, weight) in KERNEL.iter().enumerate() {
                let sy = (y as isize + k as isize - 2).clamp(0, h as isize - 1) as usize;
                acc += weight * tmp.get(x, sy);
            }
            out.set(ox, oy, acc.clamp(0.0, 255.0));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(w: usize, h: usize) -> GrayImage {
        let data = (0..w * h)
            .map(|i| {
                let (x, y) = (i % w, i / w);
                ((x * 3 + y * 5) % 256) as f64
            })
            .collect();
        GrayImage::new(w, h, data).unwrap()
    }

    #[test]
    fn luma_of_pure_red() {
        let img = ColorImage::new(1, 1, vec![255, 0, 0]).unwrap();
        let gray = to_grayscale(&img);
        assert!((gray.get(0, 0) - 76.245).abs() < 1e-9);
    }

    #[test]
    fn luma_stays_in_range() {
        let img = ColorImage::new(2, 1, vec![255, 255, 255, 0, 0, 0]).unwrap();
        let gray = to_grayscale(&img);
        assert!((gray.get(0, 0) - 255.0).abs() < 1e-9);
        assert_eq!(gray.get(1, 0), 0.0);
    }

    #[test]
    fn bilinear_matches_four_term_sum() {
        // Independent four-term weighted sum over the enclosing pixel quad.
        let img = gradient_image(9, 7);
        let cases: [(f64, f64); 4] = [(0.5, 0.5), (3.25, 2.75), (7.99, 5.01), (1.0, 4.0)];
        for (x, y) in cases {
            let (x0, y0) = (x.floor() as usize, y.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(8), (y0 + 1).min(6));
            let (fx, fy) = (x - x0 as f64, y - y0 as f64);
            let expect = img.get(x0, y0) * (1.0 - fx) * (1.0 - fy)
                + img.get(x1, y0) * fx * (1.0 - fy)
                + img.get(x0, y1) * (1.0 - fx) * fy
                + img.get(x1, y1) * fx * fy;
            assert!((img.sample_bilinear(x, y).unwrap() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn bilinear_at_integer_coordinates_is_exact() {
        let img = gradient_image(5, 5);
        for y in 0..5 {
            for x in 0..5 {
                let got = img.sample_bilinear(x as f64, y as f64).unwrap();
                assert_eq!(got, img.get(x, y));
            }
        }
    }

    #[test]
    fn bilinear_rejects_out_of_domain() {
        let img = gradient_image(4, 4);
        assert!(img.sample_bilinear(-0.001, 0.0).is_err());
        assert!(img.sample_bilinear(3.001, 1.0).is_err());
        assert!(img.sample_bilinear(1.0, 3.5).is_err());
        assert!(img.sample_bilinear(3.0, 3.0).is_ok());
    }

    #[test]
    fn bilinear_stays_within_corner_bounds() {
        // Interpolation is a convex combination, so every sample lies within
        // the min/max of the four surrounding pixels.
        let img = gradient_image(8, 8);
        let mut k = 0u32;
        for _ in 0..500 {
            k = k.wrapping_mul(1664525).wrapping_add(1013904223);
            let x = (k >> 8) as f64 / u32::MAX as f64 * 7.0 / 256.0 * 256.0;
            k = k.wrapping_mul(1664525).wrapping_add(1013904223);
            let y = (k >> 8) as f64 / u32::MAX as f64 * 7.0 / 256.0 * 256.0;
            let x = x.clamp(0.0, 7.0);
            let y = y.clamp(0.0, 7.0);
            let v = img.sample_bilinear(x, y).unwrap();
            let (x0, y0) = (x.floor() as usize, y.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(7), (y0 + 1).min(7));
            let quad = [
                img.get(x0, y0),
                img.get(x1, y0),
                img.get(x0, y1),
                img.get(x1, y1),
            ];
            let lo = quad.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = quad.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
        }
    }

    #[test]
    fn pyramid_level_dimensions_halve() {
        let img = gradient_image(64, 48);
        let pyr = build_pyramid(&img, 3);
        assert_eq!(pyr.num_levels(), 3);
        let dims: Vec<_> = (0..3)
            .map(|l| (pyr.level(l).width(), pyr.level(l).height()))
            .collect();
        assert_eq!(dims, vec![(64, 48), (32, 24), (16, 12)]);
    }

    #[test]
    fn pyramid_stops_when_too_small() {
        let img = gradient_image(64, 48);
        let pyr = build_pyramid(&img, 6);
        // (16, 12) cannot halve again: (8, 6) is below the floor.
        assert_eq!(pyr.num_levels(), 3);
    }

    #[test]
    fn tiny_image_yields_single_level() {
        let img = gradient_image(15, 15);
        let pyr = build_pyramid(&img, 4);
        assert_eq!(pyr.num_levels(), 1);
    }

    #[test]
    fn pyramid_construction_is_deterministic_per_level() {
        // Rebuilding from level L reproduces level L+1 bit for bit.
        let img = gradient_image(64, 64);
        let pyr = build_pyramid(&img, 3);
        let rebuilt = build_pyramid(pyr.level(1), 2);
        assert_eq!(rebuilt.level(1).data(), pyr.level(2).data());
        assert_eq!(rebuilt.level(1).width(), pyr.level(2).width());
    }

    #[test]
    fn step_edge_position_halves_per_level() {
        // Vertical step edge at x = 32 in a 64x64 image; after each halving
        // the 50% crossing should land near 32 / 2^L, within a pixel.
        let mut img = GrayImage::filled(64, 64, 10.0);
        for y in 0..64 {
            for x in 32..64 {
                img.set(x, y, 200.0);
            }
        }
        let pyr = build_pyramid(&img, 3);
        for l in 0..3 {
            let level = pyr.level(l);
            let row = level.height() / 2;
            let mid = 105.0;
            let mut crossing = None;
            for x in 0..level.width() - 1 {
                if level.get(x, row) < mid && level.get(x + 1, row) >= mid {
                    crossing = Some(x as f64 + 1.0);
                    break;
                }
            }
            let expect = 32.0 / (1 << l) as f64;
            let got = crossing.expect("edge must survive blurring");
            assert!(
                (got - expect).abs() <= 1.0,
                "level {l}: edge at {got}, expected near {expect}"
            );
        }
    }

    #[test]
    fn blur_preserves_constant_images() {
        let img = GrayImage::filled(32, 32, 77.0);
        let pyr = build_pyramid(&img, 2);
        for v in pyr.level(1).data() {
            assert!((v - 77.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gray_image_validates_buffer() {
        assert!(GrayImage::new(3, 3, vec![0.0; 8]).is_err());
        assert!(GrayImage::new(2, 2, vec![0.0, 1.0, 2.0, 300.0]).is_err());
        assert!(GrayImage::new(2, 2, vec![0.0, 1.0, 2.0, f64::NAN]).is_err());
        assert!(GrayImage::new(2, 2, vec![0.0, 1.0, 2.0, 255.0]).is_ok());
    }
}
