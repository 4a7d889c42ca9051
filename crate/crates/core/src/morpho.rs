//! Reference binary morphology on [`BinaryImage`]s.
//!
//! Conventions: dilation is `δ_S(X) = ⋃_{s∈S} (X + s)`, i.e. `out(i)` is set
//! when `x(i − a)` is set for some `a ∈ S`; erosion is the fit test
//! `out(i) = ∀ a ∈ S, x(i + a)`. Pixels outside the image are background.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{correlate2d, BinaryImage, Grid, KernelWindow, PadMode};

/// Boolean mask on an odd-sided window with the origin at the center.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "SeRecord", into = "SeRecord")]
pub struct StructuringElement {
    n: usize,
    mask: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct SeRecord {
    n: usize,
    mask: Vec<Vec<u8>>,
}

impl TryFrom<SeRecord> for StructuringElement {
    type Error = Error;

    fn try_from(r: SeRecord) -> Result<Self> {
        let flat: Vec<bool> = r.mask.iter().flatten().map(|&v| v != 0).collect();
        if r.mask.iter().any(|row| row.len() != 2 * r.n + 1) {
            return Err(Error::Dimension("ragged structuring element".into()));
        }
        Self::new(r.n, flat)
    }
}

impl From<StructuringElement> for SeRecord {
    fn from(se: StructuringElement) -> Self {
        let side = se.side();
        SeRecord {
            n: se.n,
            mask: se
                .mask
                .chunks(side)
                .map(|row| row.iter().map(|&b| b as u8).collect())
                .collect(),
        }
    }
}

impl StructuringElement {
    pub fn new(n: usize, mask: Vec<bool>) -> Result<Self> {
        let side = 2 * n + 1;
        if mask.len() != side * side {
            return Err(Error::Dimension(format!(
                "{} entries for a {side}x{side} structuring element",
                mask.len()
            )));
        }
        if !mask.iter().any(|&b| b) {
            return Err(Error::InvalidArgument("empty structuring element".into()));
        }
        Ok(Self { n, mask })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(isize, isize) -> bool) -> Result<Self> {
        let r = n as isize;
        let mut mask = Vec::with_capacity((2 * n + 1) * (2 * n + 1));
        for a in -r..=r {
            for b in -r..=r {
                mask.push(f(a, b));
            }
        }
        Self::new(n, mask)
    }

    /// `{origin}` in a window of half-width `n`.
    pub fn origin(n: usize) -> Self {
        Self::from_fn(n, |a, b| a == 0 && b == 0).expect("origin is nonempty")
    }

    /// Every offset of the window.
    pub fn full(n: usize) -> Self {
        Self::from_fn(n, |_, _| true).expect("window is nonempty")
    }

    /// Parses a square grid of `0`/`1` characters.
    pub fn from_ascii(text: &str) -> Result<Self> {
        let img = BinaryImage::from_ascii(text)?;
        if img.height() != img.width() || img.height() % 2 == 0 {
            return Err(Error::Dimension(format!(
                "structuring element must be odd and square, got {}x{}",
                img.height(),
                img.width()
            )));
        }
        Self::new(img.height() / 2, img.data().to_vec())
    }

    pub fn half_width(&self) -> usize {
        self.n
    }

    pub fn side(&self) -> usize {
        2 * self.n + 1
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// `|S|`
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn contains(&self, a: isize, b: isize) -> bool {
        let r = self.n as isize;
        if a.abs() > r || b.abs() > r {
            return false;
        }
        self.mask[((a + r) as usize) * self.side() + (b + r) as usize]
    }

    pub fn contains_origin(&self) -> bool {
        self.contains(0, 0)
    }

    /// Offsets `(a, b)` of every element, row-major.
    pub fn offsets(&self) -> Vec<(isize, isize)> {
        let r = self.n as isize;
        let side = self.side();
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(idx, _)| ((idx / side) as isize - r, (idx % side) as isize - r))
            .collect()
    }

    /// Same element in a window of half-width `n ≥ self.half_width()`.
    pub fn embed(&self, n: usize) -> Result<Self> {
        if n < self.n {
            return Err(Error::Dimension(format!(
                "cannot embed a {}x{} element into a {}x{} window",
                self.side(),
                self.side(),
                2 * n + 1,
                2 * n + 1
            )));
        }
        Self::from_fn(n, |a, b| self.contains(a, b))
    }

    /// Smallest window holding every element.
    pub fn cropped(&self) -> Self {
        let reach = self
            .offsets()
            .iter()
            .map(|&(a, b)| a.unsigned_abs().max(b.unsigned_abs()))
            .max()
            .unwrap_or(0);
        Self::from_fn(reach, |a, b| self.contains(a, b)).expect("nonempty")
    }

    /// `Š = {−s : s ∈ S}`
    pub fn reflect(&self) -> Self {
        Self {
            n: self.n,
            mask: self.mask.iter().rev().copied().collect(),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        *self == self.reflect()
    }

    /// Indicator kernel `1_S`.
    pub fn indicator<T: crate::Scalar>(&self) -> KernelWindow<T> {
        KernelWindow::new(
            self.n,
            self.mask
                .iter()
                .map(|&b| if b { T::one() } else { T::zero() })
                .collect(),
        )
        .expect("mask has window size")
    }

    /// The mask as a `side × side` binary image.
    pub fn to_image(&self) -> BinaryImage {
        BinaryImage::new(self.side(), self.side(), self.mask.clone()).expect("square mask")
    }

    pub fn to_ascii(&self) -> String {
        self.to_image().to_ascii()
    }

    /// Binary PGM (P5) rendering, foreground white.
    pub fn to_pgm(&self) -> Vec<u8> {
        let side = self.side();
        let mut out = format!("P5\n{side} {side}\n255\n").into_bytes();
        out.extend(self.mask.iter().map(|&b| if b { 255u8 } else { 0 }));
        out
    }
}

impl fmt::Display for StructuringElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_ascii())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Horizontal,
    Vertical,
    /// Top-left to bottom-right.
    Diagonal,
    /// Bottom-left to top-right.
    AntiDiagonal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SeShape {
    /// Lattice points with `a² + b² ≤ radius²`.
    Disk { radius: f64 },
    /// Centered straight segment.
    Stick { length: usize, orientation: Orientation },
    /// Two centered perpendicular segments; `diagonal` uses both diagonals.
    Cross { arm_length: usize, diagonal: bool },
}

impl SeShape {
    /// The shape that fills a window of the given side, as used for the
    /// experiment targets: disk of radius `side/2`, horizontal stick and
    /// diagonal cross spanning the window.
    pub fn default_for(kind: SeKind, side: usize) -> Self {
        let half = side / 2;
        match kind {
            SeKind::Disk => SeShape::Disk {
                radius: half as f64,
            },
            SeKind::Stick => SeShape::Stick {
                length: side,
                orientation: Orientation::Horizontal,
            },
            SeKind::Cross => SeShape::Cross {
                arm_length: half,
                diagonal: true,
            },
        }
    }
}

/// Shape family without parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeKind {
    Disk,
    Stick,
    Cross,
}

impl SeKind {
    pub const ALL: [SeKind; 3] = [SeKind::Disk, SeKind::Stick, SeKind::Cross];

    pub fn name(self) -> &'static str {
        match self {
            SeKind::Disk => "disk",
            SeKind::Stick => "stick",
            SeKind::Cross => "cross",
        }
    }
}

impl std::str::FromStr for SeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disk" => Ok(SeKind::Disk),
            "stick" | "hstick" => Ok(SeKind::Stick),
            "cross" | "dcross" => Ok(SeKind::Cross),
            other => Err(Error::Config(format!("unknown structuring element `{other}`"))),
        }
    }
}

/// Renders `shape` into a `size × size` window (`size` odd).
pub fn make_se(shape: SeShape, size: usize) -> Result<StructuringElement> {
    if size.is_multiple_of(2) || size == 0 {
        return Err(Error::InvalidArgument(format!("window size {size} is not odd")));
    }
    let n = size / 2;
    let r = n as isize;
    match shape {
        SeShape::Disk { radius } => {
            if radius < 0.0 || radius.ceil() as isize > r {
                return Err(Error::InvalidArgument(format!(
                    "disk radius {radius} does not fit a {size}x{size} window"
                )));
            }
            let r2 = radius * radius;
            StructuringElement::from_fn(n, |a, b| ((a * a + b * b) as f64) <= r2)
        }
        SeShape::Stick {
            length,
            orientation,
        } => {
            if length == 0 || length > size {
                return Err(Error::InvalidArgument(format!(
                    "stick length {length} does not fit a {size}x{size} window"
                )));
            }
            // centered segment of `length` cells; even lengths extend towards +t
            let lo = -((length as isize - 1) / 2);
            let hi = lo + length as isize - 1;
            StructuringElement::from_fn(n, |a, b| {
                let on = |t: isize| t >= lo && t <= hi;
                match orientation {
                    Orientation::Horizontal => a == 0 && on(b),
                    Orientation::Vertical => b == 0 && on(a),
                    Orientation::Diagonal => a == b && on(a),
                    Orientation::AntiDiagonal => a == -b && on(b),
                }
            })
        }
        SeShape::Cross {
            arm_length,
            diagonal,
        } => {
            let arm = arm_length as isize;
            if arm > r {
                return Err(Error::InvalidArgument(format!(
                    "cross arm {arm_length} does not fit a {size}x{size} window"
                )));
            }
            StructuringElement::from_fn(n, |a, b| {
                if diagonal {
                    (a == b || a == -b) && a.abs() <= arm
                } else {
                    (a == 0 && b.abs() <= arm) || (b == 0 && a.abs() <= arm)
                }
            })
        }
    }
}

/// `out(i) = ∃ a ∈ S : x(i − a)`.
pub fn dilate(x: &BinaryImage, s: &StructuringElement) -> BinaryImage {
    let offsets = s.offsets();
    BinaryImage::from_fn(x.height(), x.width(), |i, j| {
        offsets
            .iter()
            .any(|&(a, b)| x.get_padded(i as isize - a, j as isize - b))
    })
}

/// `out(i) = ∀ a ∈ S : x(i + a)`; the outside is background.
pub fn erode(x: &BinaryImage, s: &StructuringElement) -> BinaryImage {
    let offsets = s.offsets();
    BinaryImage::from_fn(x.height(), x.width(), |i, j| {
        offsets
            .iter()
            .all(|&(a, b)| x.get_padded(i as isize + a, j as isize + b))
    })
}

/// Erosion followed by dilation.
pub fn open(x: &BinaryImage, s: &StructuringElement) -> BinaryImage {
    dilate(&erode(x, s), s)
}

/// Dilation followed by erosion.
pub fn close(x: &BinaryImage, s: &StructuringElement) -> BinaryImage {
    erode(&dilate(x, s), s)
}

pub fn complement(x: &BinaryImage) -> BinaryImage {
    BinaryImage::from_fn(x.height(), x.width(), |i, j| !x.get(i, j))
}

/// Dilation through a correlation count: `1_X ⋆ 1_Š ≥ 1`.
///
/// Correlation reads `x(i + a)`, so the reflected element recovers
/// `x(i − a)` for `a ∈ S`.
pub fn dilate_by_correlation(x: &BinaryImage, s: &StructuringElement) -> Result<BinaryImage> {
    let counts = correlate2d(&x.to_real::<f64>(), &s.reflect().indicator(), PadMode::Zero)?;
    Ok(counts.threshold(0.75))
}

/// Erosion through a correlation count: `1_X ⋆ 1_S ≥ |S|`.
pub fn erode_by_correlation(x: &BinaryImage, s: &StructuringElement) -> Result<BinaryImage> {
    let counts: Grid<f64> = correlate2d(&x.to_real(), &s.indicator(), PadMode::Zero)?;
    Ok(counts.threshold(s.count() as f64 - 0.75))
}

/// Evaluates `X ⊆ ε_S(Y) ⟺ δ_S(X) ⊆ Y`.
pub fn adjunction_check(x: &BinaryImage, y: &BinaryImage, s: &StructuringElement) -> bool {
    let lhs = x.is_subset_of(&erode(y, s));
    let rhs = dilate(x, s).is_subset_of(y);
    lhs == rhs
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MorphOp {
    Dilation,
    Erosion,
    Opening,
    Closing,
}

impl MorphOp {
    pub const ALL: [MorphOp; 4] = [
        MorphOp::Dilation,
        MorphOp::Erosion,
        MorphOp::Opening,
        MorphOp::Closing,
    ];

    pub fn apply(self, x: &BinaryImage, s: &StructuringElement) -> BinaryImage {
        match self {
            MorphOp::Dilation => dilate(x, s),
            MorphOp::Erosion => erode(x, s),
            MorphOp::Opening => open(x, s),
            MorphOp::Closing => close(x, s),
        }
    }

    /// The operator `ψ*` with `ψ*(X) = complement(ψ(complement(X)))`.
    pub fn dual(self) -> Self {
        match self {
            MorphOp::Dilation => MorphOp::Erosion,
            MorphOp::Erosion => MorphOp::Dilation,
            MorphOp::Opening => MorphOp::Closing,
            MorphOp::Closing => MorphOp::Opening,
        }
    }

    /// Number of elementary dilations/erosions.
    pub fn depth(self) -> usize {
        match self {
            MorphOp::Dilation | MorphOp::Erosion => 1,
            MorphOp::Opening | MorphOp::Closing => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MorphOp::Dilation => "dilation",
            MorphOp::Erosion => "erosion",
            MorphOp::Opening => "opening",
            MorphOp::Closing => "closing",
        }
    }
}

impl std::str::FromStr for MorphOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dilation" => Ok(MorphOp::Dilation),
            "erosion" => Ok(MorphOp::Erosion),
            "opening" => Ok(MorphOp::Opening),
            "closing" => Ok(MorphOp::Closing),
            other => Err(Error::Config(format!("unknown operation `{other}`"))),
        }
    }
}
