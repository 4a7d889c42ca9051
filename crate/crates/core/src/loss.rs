//! Masked losses and the DICE metric.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryImage, Grid};
use crate::scalar::Scalar;

/// Pixels within `border` of any edge are excluded from losses and metrics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossMask {
    pub border: usize,
}

impl LossMask {
    pub fn new(border: usize) -> Self {
        Self { border }
    }

    /// Border accumulated over layers with the given kernel sides.
    pub fn for_kernels(sides: impl IntoIterator<Item = usize>) -> Self {
        Self {
            border: sides.into_iter().map(|s| s / 2).sum(),
        }
    }

    pub fn check(&self, shape: (usize, usize)) -> Result<()> {
        if 2 * self.border >= shape.0 || 2 * self.border >= shape.1 {
            return Err(Error::Dimension(format!(
                "border {} leaves nothing of a {}x{} image",
                self.border, shape.0, shape.1
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn keeps(&self, shape: (usize, usize), i: usize, j: usize) -> bool {
        i >= self.border && j >= self.border && i + self.border < shape.0 && j + self.border < shape.1
    }

    /// Row-major indices of the unmasked pixels.
    pub fn indices(&self, shape: (usize, usize)) -> impl Iterator<Item = usize> + '_ {
        let b = self.border;
        let (h, w) = shape;
        (b..h.saturating_sub(b)).flat_map(move |i| (b..w.saturating_sub(b)).map(move |j| i * w + j))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Dice,
    Mse,
}

const DICE_SMOOTH: f64 = 1e-6;

fn check_pair<T: Scalar>(pred: &Grid<T>, target: &BinaryImage, mask: &LossMask) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            expected: target.shape(),
            got: pred.shape(),
        });
    }
    mask.check(pred.shape())
}

/// Soft Dice loss `1 − (2Σp·t + ε)/(Σp² + Σt² + ε)` over unmasked pixels,
/// with its gradient (zero on the mask).
pub fn dice_loss<T: Scalar>(pred: &Grid<T>, target: &BinaryImage, mask: &LossMask) -> Result<(T, Grid<T>)> {
    check_pair(pred, target, mask)?;
    let eps = T::lit(DICE_SMOOTH);
    let two = T::lit(2.0);
    let (mut inter, mut pp, mut tt) = (T::zero(), T::zero(), T::zero());
    for idx in mask.indices(pred.shape()) {
        let p = pred.data()[idx];
        let t = if target.data()[idx] { T::one() } else { T::zero() };
        inter = inter + p * t;
        pp = pp + p * p;
        tt = tt + t;
    }
    let num = two * inter + eps;
    let den = pp + tt + eps;
    let loss = T::one() - num / den;
    let mut grad = Grid::zeros(pred.height(), pred.width());
    let den2 = den * den;
    for idx in mask.indices(pred.shape()) {
        let p = pred.data()[idx];
        let t = if target.data()[idx] { T::one() } else { T::zero() };
        grad.data_mut()[idx] = -(two * t * den - num * two * p) / den2;
    }
    Ok((loss, grad))
}

/// Mean squared error over unmasked pixels, with its gradient.
pub fn mse_loss<T: Scalar>(pred: &Grid<T>, target: &BinaryImage, mask: &LossMask) -> Result<(T, Grid<T>)> {
    check_pair(pred, target, mask)?;
    let count = T::lit(mask.indices(pred.shape()).count() as f64);
    let mut sum = T::zero();
    let mut grad = Grid::zeros(pred.height(), pred.width());
    for idx in mask.indices(pred.shape()) {
        let t = if target.data()[idx] { T::one() } else { T::zero() };
        let d = pred.data()[idx] - t;
        sum = sum + d * d;
        grad.data_mut()[idx] = T::lit(2.0) * d / count;
    }
    Ok((sum / count, grad))
}

pub fn loss<T: Scalar>(kind: LossKind, pred: &Grid<T>, target: &BinaryImage, mask: &LossMask) -> Result<(T, Grid<T>)> {
    match kind {
        LossKind::Dice => dice_loss(pred, target, mask),
        LossKind::Mse => mse_loss(pred, target, mask),
    }
}

/// `2|A∩B| / (|A| + |B|)` over unmasked pixels; 1 when both are empty.
pub fn dice_metric(pred: &BinaryImage, target: &BinaryImage, mask: &LossMask) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            expected: target.shape(),
            got: pred.shape(),
        });
    }
    mask.check(pred.shape())?;
    let (mut inter, mut a, mut b) = (0usize, 0usize, 0usize);
    for idx in mask.indices(pred.shape()) {
        let (p, t) = (pred.data()[idx], target.data()[idx]);
        inter += (p && t) as usize;
        a += p as usize;
        b += t as usize;
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (a + b) as f64)
}
