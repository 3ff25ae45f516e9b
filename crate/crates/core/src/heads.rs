//! Training losses for the detection and re-identification heads: penalty-
//! reduced focal loss on center heatmaps, L1 box regression, identity
//! cross-entropy, and an uncertainty-weighted combination.
//!
//! Every loss comes with its analytic gradient so the pair can be checked
//! against finite differences.

use crate::error::Error;
use crate::geometry::Point;

/// Numerical floor/ceiling applied to predicted probabilities before any
/// logarithm.
pub const PROB_EPSILON: f64 = 1e-12;

/// Dense scalar field over a pixel grid (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, Error> {
        if data.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "grid {}x{} needs {} values, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Grid {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Grid {
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

    pub fn get(&self, x: usize, y: usize) -> f64 {
        assert!(x < self.width && y < self.height, "grid index out of range");
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        assert!(x < self.width && y < self.height, "grid index out of range");
        self.data[y * self.width + x] = value;
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }
}

/// A predicted heatmap and its target, shape-checked, with the prediction
/// clamped into `[PROB_EPSILON, 1 - PROB_EPSILON]` so logarithms stay finite.
#[derive(Debug, Clone)]
pub struct HeatmapPair {
    prediction: Grid,
    target: Grid,
}

impl HeatmapPair {
    pub fn new(mut prediction: Grid, target: Grid) -> Result<Self, Error> {
        if prediction.width != target.width || prediction.height != target.height {
            return Err(Error::InvalidInput(format!(
                "prediction {}x{} vs target {}x{}",
                prediction.width, prediction.height, target.width, target.height
            )));
        }
        if target.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput(
                "heatmap target values must lie in [0, 1]".into(),
            ));
        }
        for v in &mut prediction.data {
            *v = v.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON);
        }
        Ok(HeatmapPair { prediction, target })
    }

    pub fn prediction(&self) -> &Grid {
        &self.prediction
    }

    pub fn target(&self) -> &Grid {
        &self.target
    }
}

/// Focusing exponents of the heatmap loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalParams {
    /// Exponent on the prediction error (down-weights easy pixels).
    pub alpha: f64,
    /// Exponent on `1 - target` (reduces the penalty near peaks).
    pub beta: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        FocalParams {
            alpha: 2.0,
            beta: 4.0,
        }
    }
}

/// Maps an object's size to the Gaussian spread used when rendering targets:
/// `sigma = max(min_sigma, diagonal_fraction * sqrt(w^2 + h^2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaRule {
    pub min_sigma: f64,
    pub diagonal_fraction: f64,
}

impl Default for SigmaRule {
    fn default() -> Self {
        SigmaRule {
            min_sigma: 1.0,
            diagonal_fraction: 1.0 / 6.0,
        }
    }
}

impl SigmaRule {
    pub fn sigma(&self, width: f64, height: f64) -> f64 {
        self.min_sigma
            .max(self.diagonal_fraction * width.hypot(height))
    }
}

/// An object to render into a heatmap target: center in grid coordinates and
/// box size used for the spread rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatmapObject {
    pub center: Point,
    pub width: f64,
    pub height: f64,
}

/// Renders the training target: per object an unnormalized Gaussian centered
/// at the pixel nearest its center (that pixel is exactly 1.0), combined
/// across objects by pointwise maximum. A center whose nearest pixel falls
/// outside the grid is an error.
pub fn render_heatmap_target(
    width: usize,
    height: usize,
    objects: &[HeatmapObject],
    rule: &SigmaRule,
) -> Result<Grid, Error> {
    let mut grid = Grid::filled(width, height, 0.0);
    for object in objects {
        let cx = object.center.x.round();
        let cy = object.center.y.round();
        if cx < 0.0 || cy < 0.0 || cx >= width as f64 || cy >= height as f64 {
            return Err(Error::CenterOutsideGrid {
                x: object.center.x,
                y: object.center.y,
                width,
                height,
            });
        }
        let sigma = rule.sigma(object.width, object.height);
        let denom = 2.0 * sigma * sigma;
        for y in 0..height {
            for x in 0..width {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                let value = (-(dx * dx + dy * dy) / denom).exp();
                if value > grid.get(x, y) {
                    grid.set(x, y, value);
                }
            }
        }
    }
    Ok(grid)
}

fn peak_count(target: &Grid) -> Result<f64, Error> {
    let n = target.data.iter().filter(|v| **v == 1.0).count();
    if n == 0 {
        return Err(Error::NoPeaks);
    }
    Ok(n as f64)
}

/// Penalty-reduced pixelwise focal loss, averaged over the number of peak
/// pixels (`target == 1`). Peaks contribute `-(1-p)^alpha * ln p`; all other
/// pixels contribute `-(1-target)^beta * p^alpha * ln(1-p)`.
pub fn heatmap_focal_loss(pair: &HeatmapPair, params: &FocalParams) -> Result<f64, Error> {
    let n = peak_count(&pair.target)?;
    let mut total = 0.0;
    for (p, m) in pair.prediction.data.iter().zip(&pair.target.data) {
        if *m == 1.0 {
            total -= (1.0 - p).powf(params.alpha) * p.ln();
        } else {
            total -= (1.0 - m).powf(params.beta) * p.powf(params.alpha) * (1.0 - p).ln();
        }
    }
    Ok(total / n)
}

/// Gradient of [`heatmap_focal_loss`] with respect to each (clamped)
/// prediction pixel.
pub fn heatmap_focal_grad(pair: &HeatmapPair, params: &FocalParams) -> Result<Grid, Error> {
    let n = peak_count(&pair.target)?;
    let mut grad = Grid::filled(pair.target.width, pair.target.height, 0.0);
    for (i, (p, m)) in pair
        .prediction
        .data
        .iter()
        .zip(&pair.target.data)
        .enumerate()
    {
        let g = if *m == 1.0 {
            params.alpha * (1.0 - p).powf(params.alpha - 1.0) * p.ln()
                - (1.0 - p).powf(params.alpha) / p
        } else {
            -(1.0 - m).powf(params.beta)
                * (params.alpha * p.powf(params.alpha - 1.0) * (1.0 - p).ln()
                    - p.powf(params.alpha) / (1.0 - p))
        };
        grad.data[i] = g / n;
    }
    Ok(grad)
}

fn check_same_len(name: &str, a: usize, b: usize) -> Result<(), Error> {
    if a != b {
        return Err(Error::InvalidInput(format!(
            "{name}: prediction count {a} does not match target count {b}"
        )));
    }
    Ok(())
}

/// Weight of the size term relative to the center-offset term.
pub const SIZE_WEIGHT: f64 = 0.1;

/// L1 regression loss over per-object center offsets and sizes:
/// `sum |o - o_hat| + 0.1 * sum |s - s_hat|` (each term summed over both
/// components of every object).
pub fn box_loss(
    pred_offsets: &[[f64; 2]],
    gt_offsets: &[[f64; 2]],
    pred_sizes: &[[f64; 2]],
    gt_sizes: &[[f64; 2]],
) -> Result<f64, Error> {
    check_same_len("box offsets", pred_offsets.len(), gt_offsets.len())?;
    check_same_len("box sizes", pred_sizes.len(), gt_sizes.len())?;
    let l1 = |pred: &[[f64; 2]], gt: &[[f64; 2]]| -> f64 {
        pred.iter()
            .zip(gt)
            .map(|(p, g)| (p[0] - g[0]).abs() + (p[1] - g[1]).abs())
            .sum()
    };
    Ok(l1(pred_offsets, gt_offsets) + SIZE_WEIGHT * l1(pred_sizes, gt_sizes))
}

/// Gradient of [`box_loss`] with respect to the predicted offsets and sizes
/// (`sign` of each residual, the size half scaled by [`SIZE_WEIGHT`]).
pub fn box_loss_grad(
    pred_offsets: &[[f64; 2]],
    gt_offsets: &[[f64; 2]],
    pred_sizes: &[[f64; 2]],
    gt_sizes: &[[f64; 2]],
) -> Result<(Vec<[f64; 2]>, Vec<[f64; 2]>), Error> {
    check_same_len("box offsets", pred_offsets.len(), gt_offsets.len())?;
    check_same_len("box sizes", pred_sizes.len(), gt_sizes.len())?;
    let sign = |d: f64| {
        if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    let offsets = pred_offsets
        .iter()
        .zip(gt_offsets)
        .map(|(p, g)| [sign(p[0] - g[0]), sign(p[1] - g[1])])
        .collect();
    let sizes = pred_sizes
        .iter()
        .zip(gt_sizes)
        .map(|(p, g)| {
            [
                SIZE_WEIGHT * sign(p[0] - g[0]),
                SIZE_WEIGHT * sign(p[1] - g[1]),
            ]
        })
        .collect();
    Ok((offsets, sizes))
}

/// Identity classification loss: summed cross-entropy between one-hot labels
/// and predicted class distributions, with probabilities floored at
/// [`PROB_EPSILON`] inside the logarithm.
pub fn identity_loss(predictions: &[Vec<f64>], labels: &[usize]) -> Result<f64, Error> {
    check_same_len("identity", predictions.len(), labels.len())?;
    let mut total = 0.0;
    for (probs, &label) in predictions.iter().zip(labels) {
        if label >= probs.len() {
            return Err(Error::InvalidInput(format!(
                "identity label {label} out of range for {} classes",
                probs.len()
            )));
        }
        total -= probs[label].max(PROB_EPSILON).ln();
    }
    Ok(total)
}

/// Gradient of [`identity_loss`] with respect to each predicted probability:
/// `-1/p` at the labeled class (zero below the floor), zero elsewhere.
pub fn identity_loss_grad(
    predictions: &[Vec<f64>],
    labels: &[usize],
) -> Result<Vec<Vec<f64>>, Error> {
    check_same_len("identity", predictions.len(), labels.len())?;
    predictions
        .iter()
        .zip(labels)
        .map(|(probs, &label)| {
            if label >= probs.len() {
                return Err(Error::InvalidInput(format!(
                    "identity label {label} out of range for {} classes",
                    probs.len()
                )));
            }
            let mut g = vec![0.0; probs.len()];
            if probs[label] > PROB_EPSILON {
                g[label] = -1.0 / probs[label];
            }
            Ok(g)
        })
        .collect()
}

/// Uncertainty-weighted combination of the detection and identity losses:
/// `0.5 * (exp(-w1) * l_det + exp(-w2) * l_id + w1 + w2)`, where `w1`, `w2`
/// are learned log-variances.
pub fn total_loss(l_det: f64, l_id: f64, w1: f64, w2: f64) -> f64 {
    0.5 * ((-w1).exp() * l_det + (-w2).exp() * l_id + w1 + w2)
}

/// Gradient of [`total_loss`] with respect to `(w1, w2)`.
pub fn total_loss_grad(l_det: f64, l_id: f64, w1: f64, w2: f64) -> (f64, f64) {
    (
        0.5 * (-(-w1).exp() * l_det + 1.0),
        0.5 * (-(-w2).exp() * l_id + 1.0),
    )
}
