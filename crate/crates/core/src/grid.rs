//! Dense 2-D grids, zero-padded "same" cross-correlation and the scalar
//! activation functions shared by every layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major real-valued image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> Grid<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "{} values for a {height}x{width} grid",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, T::zero())
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.width + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.width + j] = v;
    }

    /// Value at a signed position, zero outside the grid.
    #[inline]
    pub fn get_padded(&self, i: isize, j: isize) -> T {
        if i < 0 || j < 0 || i >= self.height as isize || j >= self.width as isize {
            T::zero()
        } else {
            self.data[i as usize * self.width + j as usize]
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Pixels strictly above `level` become foreground.
    pub fn threshold(&self, level: T) -> BinaryImage {
        BinaryImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| v > level).collect(),
        }
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                got: other.shape(),
            });
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }
}

/// Boolean image; `true` is foreground.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryImage {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryImage {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "{} values for a {height}x{width} image",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![true; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    /// Parses rows of `0`/`1` (or `.`/`#`) characters; whitespace is ignored.
    pub fn from_ascii(text: &str) -> Result<Self> {
        let rows: Vec<Vec<bool>> = text
            .lines()
            .map(|l| {
                l.chars()
                    .filter(|c| !c.is_whitespace())
                    .map(|c| matches!(c, '1' | '#'))
                    .collect::<Vec<_>>()
            })
            .filter(|r| !r.is_empty())
            .collect();
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::new(height, width, rows.concat())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.width + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.data[i * self.width + j] = v;
    }

    /// Value at a signed position, background outside the grid.
    #[inline]
    pub fn get_padded(&self, i: isize, j: isize) -> bool {
        if i < 0 || j < 0 || i >= self.height as isize || j >= self.width as isize {
            false
        } else {
            self.data[i as usize * self.width + j as usize]
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn foreground_fraction(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.data.len() as f64
        }
    }

    pub fn to_real<T: Scalar>(&self) -> Grid<T> {
        Grid {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .map(|&b| if b { T::one() } else { T::zero() })
                .collect(),
        }
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.shape() == other.shape() && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    /// Copy with a band of `border` pixels cleared on every side.
    pub fn interior(&self, border: usize) -> Self {
        Self::from_fn(self.height, self.width, |i, j| {
            i >= border
                && j >= border
                && i + border < self.height
                && j + border < self.width
                && self.get(i, j)
        })
    }

    /// Equality restricted to pixels at least `border` away from every edge.
    pub fn eq_interior(&self, other: &Self, border: usize) -> bool {
        if self.shape() != other.shape() {
            return false;
        }
        (border..self.height.saturating_sub(border)).all(|i| {
            (border..self.width.saturating_sub(border)).all(|j| self.get(i, j) == other.get(i, j))
        })
    }

    pub fn to_ascii(&self) -> String {
        let mut s = String::with_capacity(self.height * (self.width + 1));
        for i in 0..self.height {
            for j in 0..self.width {
                s.push(if self.get(i, j) { '1' } else { '0' });
            }
            s.push('\n');
        }
        s
    }
}

/// Square window `[-n, n]²` of per-offset values, stored row-major with the
/// origin at the center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelWindow<T> {
    n: usize,
    values: Vec<T>,
}

impl<T: Scalar> KernelWindow<T> {
    pub fn new(n: usize, values: Vec<T>) -> Result<Self> {
        let side = 2 * n + 1;
        if values.len() != side * side {
            return Err(Error::Dimension(format!(
                "{} values for a {side}x{side} window",
                values.len()
            )));
        }
        Ok(Self { n, values })
    }

    pub fn zeros(n: usize) -> Self {
        let side = 2 * n + 1;
        Self {
            n,
            values: vec![T::zero(); side * side],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(isize, isize) -> T) -> Self {
        let r = n as isize;
        let mut values = Vec::with_capacity((2 * n + 1) * (2 * n + 1));
        for a in -r..=r {
            for b in -r..=r {
                values.push(f(a, b));
            }
        }
        Self { n, values }
    }

    /// Kernel with `1` at the origin and `0` elsewhere.
    pub fn delta(n: usize) -> Self {
        Self::from_fn(n, |a, b| if a == 0 && b == 0 { T::one() } else { T::zero() })
    }

    pub fn half_width(&self) -> usize {
        self.n
    }

    pub fn side(&self) -> usize {
        2 * self.n + 1
    }

    /// `|Ω|`
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    #[inline]
    pub fn at(&self, a: isize, b: isize) -> T {
        let r = self.n as isize;
        self.values[((a + r) as usize) * self.side() + (b + r) as usize]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            n: self.n,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Point reflection through the origin.
    pub fn reflect(&self) -> Self {
        Self {
            n: self.n,
            values: self.values.iter().rev().copied().collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.values.iter().copied().sum()
    }

    /// Iterates `((a, b), value)` in row-major order.
    pub fn offsets(&self) -> impl Iterator<Item = ((isize, isize), T)> + '_ {
        let r = self.n as isize;
        let side = self.side();
        self.values.iter().enumerate().map(move |(idx, &v)| {
            (((idx / side) as isize - r, (idx % side) as isize - r), v)
        })
    }
}

/// Border handling for [`correlate2d`]. Only zero padding is supported.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PadMode {
    #[default]
    Zero,
}

fn check_kernel_fits<T: Scalar>(x: &Grid<T>, k: &KernelWindow<T>) -> Result<()> {
    if k.side() > x.height.min(x.width) {
        return Err(Error::Dimension(format!(
            "kernel side {} exceeds image {}x{}",
            k.side(),
            x.height,
            x.width
        )));
    }
    Ok(())
}

/// Range of output indices `i` for which `i + offset` lies in `[0, len)`.
#[inline]
fn valid_range(len: usize, offset: isize) -> std::ops::Range<usize> {
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset).clamp(0, len as isize) as usize;
    lo..hi.max(lo)
}

/// "Same" cross-correlation: `out(i,j) = Σ_{(a,b)∈Ω} x(i+a, j+b)·k(a,b)`,
/// with zero outside the image. No kernel flip.
pub fn correlate2d<T: Scalar>(x: &Grid<T>, k: &KernelWindow<T>, padding: PadMode) -> Result<Grid<T>> {
    let PadMode::Zero = padding;
    check_kernel_fits(x, k)?;
    let (h, w) = x.shape();
    let mut out = Grid::zeros(h, w);
    // Offsets are visited in row-major order for every pixel, so each output
    // accumulates its terms in the same order as a per-pixel double loop.
    for ((a, b), kv) in k.offsets() {
        let rows = valid_range(h, a);
        let cols = valid_range(w, b);
        let shifted = (cols.start as isize + b) as usize;
        for i in rows {
            let dst = &mut out.data[i * w + cols.start..i * w + cols.end];
            let src = &x.data[((i as isize + a) as usize) * w + shifted..][..dst.len()];
            for (d, sv) in dst.iter_mut().zip(src) {
                *d = *d + *sv * kv;
            }
        }
    }
    Ok(out)
}

/// Gradients of `Σ grad_out ⊙ correlate2d(x, k)` with respect to `x` and `k`.
pub fn correlate2d_backward<T: Scalar>(
    grad_out: &Grid<T>,
    x: &Grid<T>,
    k: &KernelWindow<T>,
) -> Result<(Grid<T>, KernelWindow<T>)> {
    x.check_same_shape(grad_out)?;
    Ok((correlate2d_grad_input(grad_out, k)?, correlate2d_grad_kernel(grad_out, x, k.half_width())?))
}

/// Input gradient alone: full correlation of `grad_out` with the reflected kernel.
pub fn correlate2d_grad_input<T: Scalar>(grad_out: &Grid<T>, k: &KernelWindow<T>) -> Result<Grid<T>> {
    check_kernel_fits(grad_out, k)?;
    let (h, w) = grad_out.shape();
    let mut grad_x = Grid::zeros(h, w);
    for ((a, b), kv) in k.offsets() {
        // x(i+a, j+b) received grad_out(i, j)·k(a, b)
        let rows = valid_range(h, a);
        let cols = valid_range(w, b);
        for i in rows {
            let src = &grad_out.data[i * w..(i + 1) * w];
            let dst = &mut grad_x.data[((i as isize + a) as usize) * w..][..w];
            for j in cols.clone() {
                let t = (j as isize + b) as usize;
                dst[t] = dst[t] + src[j] * kv;
            }
        }
    }
    Ok(grad_x)
}

/// Kernel gradient alone: `grad_k(a,b) = Σ_{i,j} grad_out(i,j)·x(i+a, j+b)`.
pub fn correlate2d_grad_kernel<T: Scalar>(
    grad_out: &Grid<T>,
    x: &Grid<T>,
    n: usize,
) -> Result<KernelWindow<T>> {
    x.check_same_shape(grad_out)?;
    let mut grad_k = KernelWindow::zeros(n);
    check_kernel_fits(x, &grad_k)?;
    let (h, w) = x.shape();
    let r = n as isize;
    let side = 2 * n + 1;
    for a in -r..=r {
        for b in -r..=r {
            let mut acc = T::zero();
            let cols = valid_range(w, b);
            let shifted = (cols.start as isize + b) as usize;
            for i in valid_range(h, a) {
                let g = &grad_out.data[i * w + cols.start..i * w + cols.end];
                let src = &x.data[((i as isize + a) as usize) * w + shifted..][..g.len()];
                // four partial sums let the loop vectorize
                let mut part = [T::zero(); 4];
                let mut gc = g.chunks_exact(4);
                let mut sc = src.chunks_exact(4);
                for (gq, sq) in (&mut gc).zip(&mut sc) {
                    for l in 0..4 {
                        part[l] = part[l] + gq[l] * sq[l];
                    }
                }
                for (gv, sv) in gc.remainder().iter().zip(sc.remainder()) {
                    acc = acc + *gv * *sv;
                }
                acc = acc + (part[0] + part[1]) + (part[2] + part[3]);
            }
            grad_k.values[((a + r) as usize) * side + (b + r) as usize] = acc;
        }
    }
    Ok(grad_k)
}

/// Smooth threshold `ξ(x) = ½·tanh(x) + ½`.
#[inline]
pub fn xi<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    half * x.tanh() + half
}

#[inline]
pub fn xi_grad<T: Scalar>(x: T) -> T {
    let t = x.tanh();
    T::lit(0.5) * (T::one() - t * t)
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Overflow-safe `ln(1 + eˣ)`.
#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Shifted softplus `f⁺(x) = ln(1 + eˣ) + ½`, always above ½.
#[inline]
pub fn softplus_half<T: Scalar>(x: T) -> T {
    softplus(x) + T::lit(0.5)
}

#[inline]
pub fn softplus_half_grad<T: Scalar>(x: T) -> T {
    sigmoid(x)
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse<T: Scalar>(y: T) -> T {
    // ln(e^y - 1) = y + ln(1 - e^{-y})
    y + (-(-y).exp()).ln_1p()
}
