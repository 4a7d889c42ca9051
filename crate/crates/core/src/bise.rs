//! The BiSE neuron `x ↦ ξ(p·(x ⋆ ξ(W) − f⁺(b)))`, its gradients, and the
//! checks that decide whether a parameter set is exactly a dilation or an
//! erosion.
//!
//! All activation checks work on effective quantities: weights `ξ(W) ∈ (0,1)`
//! and bias `f⁺(b) > ½`.
//!
//! The neuron correlates its input with the weights, so a weight support `K`
//! reads `x(i + a)` for `a ∈ K`. Read as an erosion this is the fit test by
//! `K`; read as a dilation it is the dilation by the reflected set `Ǩ`.
//! [`ActivationStatus`] always reports the element in the convention of
//! [`crate::morpho`], so `dilate(x, se)` / `erode(x, se)` reproduce the neuron.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    correlate2d, correlate2d_grad_input, correlate2d_grad_kernel, sigmoid, softplus_half,
    softplus_inverse, xi, xi_grad, Grid, KernelWindow, PadMode,
};
use crate::morpho::{MorphOp, StructuringElement};
use crate::scalar::Scalar;

/// Certified gap `(u, v)`: no pixel lies strictly between `u` and `v`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlmostBinaryBounds<T> {
    u: T,
    v: T,
}

impl<T: Scalar> AlmostBinaryBounds<T> {
    pub fn new(u: T, v: T) -> Result<Self> {
        if !(u >= T::zero() && v <= T::one() && u < v) {
            return Err(Error::InvalidArgument(format!(
                "almost-binary bounds need 0 <= u < v <= 1, got u={u}, v={v}"
            )));
        }
        Ok(Self { u, v })
    }

    /// `(0, 1)`: exactly binary images.
    pub fn binary() -> Self {
        Self {
            u: T::zero(),
            v: T::one(),
        }
    }

    pub fn u(&self) -> T {
        self.u
    }

    pub fn v(&self) -> T {
        self.v
    }

    pub fn contains(&self, value: T) -> bool {
        value <= self.u || value >= self.v
    }
}

/// True iff no pixel lies in the open interval `(u, v)`.
pub fn verify_almost_binary<T: Scalar>(img: &Grid<T>, bounds: &AlmostBinaryBounds<T>) -> bool {
    img.data().iter().all(|&x| bounds.contains(x))
}

/// Image paired with its certified bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct AlmostBinaryImage<T> {
    image: Grid<T>,
    bounds: AlmostBinaryBounds<T>,
}

impl<T: Scalar> AlmostBinaryImage<T> {
    pub fn new(image: Grid<T>, bounds: AlmostBinaryBounds<T>) -> Result<Self> {
        if image.data().iter().any(|&x| x < T::zero() || x > T::one()) {
            return Err(Error::InvalidArgument("almost-binary image outside [0, 1]".into()));
        }
        if !verify_almost_binary(&image, &bounds) {
            return Err(Error::InvalidArgument(format!(
                "image has values inside ({}, {})",
                bounds.u, bounds.v
            )));
        }
        Ok(Self { image, bounds })
    }

    pub fn image(&self) -> &Grid<T> {
        &self.image
    }

    pub fn bounds(&self) -> &AlmostBinaryBounds<T> {
        &self.bounds
    }
}

/// Raw parameters of one neuron.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiseParams<T> {
    /// Pre-threshold weights `W`, row-major over `Ω`.
    pub w_raw: KernelWindow<T>,
    /// Pre-softplus bias `b`.
    pub b_raw: T,
    /// Output scaling `p`.
    pub p: T,
}

impl<T: Scalar> BiseParams<T> {
    pub fn new(w_raw: KernelWindow<T>, b_raw: T, p: T) -> Self {
        Self { w_raw, b_raw, p }
    }

    pub fn half_width(&self) -> usize {
        self.w_raw.half_width()
    }

    /// `ξ(W)`
    pub fn effective_weights(&self) -> KernelWindow<T> {
        self.w_raw.map(xi)
    }

    /// `f⁺(b)`
    pub fn effective_bias(&self) -> T {
        softplus_half(self.b_raw)
    }

    /// Parameters realizing `op` by `se` exactly: raw weights `+margin` on the
    /// support and `−margin` elsewhere, with the effective bias placed inside
    /// the activation interval for `bounds`.
    pub fn ideal(
        op: MorphOp,
        se: &StructuringElement,
        n: usize,
        bounds: &AlmostBinaryBounds<T>,
        margin: T,
        p: T,
    ) -> Result<Self> {
        let support = weight_support(op, se)?.embed(n)?;
        let w_raw = KernelWindow::new(
            n,
            support
                .mask()
                .iter()
                .map(|&m| if m { margin } else { -margin })
                .collect(),
        )?;
        let check = check_activation(&w_raw.map(xi), T::zero(), &support, bounds)?;
        let (lo, hi) = match op {
            MorphOp::Dilation => check.dilation_interval,
            _ => check.erosion_interval,
        };
        let half = T::lit(0.5);
        let lo = lo.max(half);
        if lo >= hi {
            return Err(Error::InvalidArgument(format!(
                "no bias above 0.5 activates {} for these bounds",
                op.name()
            )));
        }
        let bias = (lo + hi) * half;
        Ok(Self::with_effective_bias(w_raw, bias, p))
    }

    /// Builds parameters whose `f⁺(b_raw)` equals `effective_bias` (> ½).
    pub fn with_effective_bias(w_raw: KernelWindow<T>, effective_bias: T, p: T) -> Self {
        Self {
            w_raw,
            b_raw: softplus_inverse(effective_bias - T::lit(0.5)),
            p,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.w_raw.len() + 1
    }
}

/// Weight support realizing `op` by the oracle element `se`.
pub fn weight_support(op: MorphOp, se: &StructuringElement) -> Result<StructuringElement> {
    match op {
        MorphOp::Dilation => Ok(se.reflect()),
        MorphOp::Erosion => Ok(se.clone()),
        other => Err(Error::InvalidArgument(format!(
            "a single neuron cannot realize {}",
            other.name()
        ))),
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct BiseCache<T> {
    version: u64,
    input: Grid<T>,
    weights: KernelWindow<T>,
    conv: Grid<T>,
    output: Grid<T>,
}

impl<T: Scalar> BiseCache<T> {
    pub fn output(&self) -> &Grid<T> {
        &self.output
    }

    pub fn into_output(self) -> Grid<T> {
        self.output
    }

    pub fn conv(&self) -> &Grid<T> {
        &self.conv
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiseGrads<T> {
    pub input: Option<Grid<T>>,
    pub w_raw: KernelWindow<T>,
    pub b_raw: T,
    pub p: T,
}

/// A neuron owning its parameters. Every mutable borrow of the parameters
/// bumps a version counter, so a cache from an older snapshot is refused by
/// [`Bise::backward`].
#[derive(Clone, Debug, PartialEq)]
pub struct Bise<T> {
    params: BiseParams<T>,
    version: u64,
}

impl<T: Scalar> From<BiseParams<T>> for Bise<T> {
    fn from(params: BiseParams<T>) -> Self {
        Self { params, version: 0 }
    }
}

impl<T: Scalar> Bise<T> {
    pub fn new(params: BiseParams<T>) -> Self {
        params.into()
    }

    pub fn params(&self) -> &BiseParams<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut BiseParams<T> {
        self.version += 1;
        &mut self.params
    }

    pub fn into_params(self) -> BiseParams<T> {
        self.params
    }

    pub fn forward(&self, x: &Grid<T>) -> Result<(Grid<T>, BiseCache<T>)> {
        let (out, mut cache) = bise_forward(x, &self.params)?;
        cache.version = self.version;
        Ok((out, cache))
    }

    /// Gradients with respect to the input (when `want_input`) and all
    /// parameters, including `p` even when it is kept fixed.
    pub fn backward(
        &self,
        grad_out: &Grid<T>,
        cache: &BiseCache<T>,
        want_input: bool,
    ) -> Result<BiseGrads<T>> {
        if cache.version != self.version {
            return Err(Error::StaleCache);
        }
        bise_backward(grad_out, cache, &self.params, want_input)
    }

    /// Sign of the pre-activation: the `p → ∞` output thresholded at ½.
    pub fn hard_forward(&self, x: &Grid<T>) -> Result<crate::BinaryImage> {
        bise_hard_forward(x, &self.params)
    }

    pub fn find_activation(&self, bounds: &AlmostBinaryBounds<T>) -> ActivationStatus<T> {
        find_activation(&self.params, bounds)
    }
}

/// `ξ(p·(x ⋆ ξ(W) − f⁺(b)))` plus the cache for [`Bise::backward`].
pub fn bise_forward<T: Scalar>(x: &Grid<T>, params: &BiseParams<T>) -> Result<(Grid<T>, BiseCache<T>)> {
    let weights = params.effective_weights();
    let conv = correlate2d(x, &weights, PadMode::Zero)?;
    let bias = params.effective_bias();
    let p = params.p;
    let output = conv.map(|c| xi(p * (c - bias)));
    Ok((
        output.clone(),
        BiseCache {
            version: 0,
            input: x.clone(),
            weights,
            conv,
            output,
        },
    ))
}

/// Thresholded neuron output: foreground where `p·(x ⋆ ξ(W) − f⁺(b)) > 0`,
/// which is `ξ(·) > ½` without the rounding of `ξ` near ½.
pub fn bise_hard_forward<T: Scalar>(x: &Grid<T>, params: &BiseParams<T>) -> Result<crate::BinaryImage> {
    let conv = correlate2d(x, &params.effective_weights(), PadMode::Zero)?;
    let bias = params.effective_bias();
    Ok(conv.map(|c| params.p * (c - bias)).threshold(T::zero()))
}

fn bise_backward<T: Scalar>(
    grad_out: &Grid<T>,
    cache: &BiseCache<T>,
    params: &BiseParams<T>,
    want_input: bool,
) -> Result<BiseGrads<T>> {
    cache.output.check_same_shape(grad_out)?;
    let p = params.p;
    let bias = params.effective_bias();
    // dL/dz with z = p·(conv − bias)
    let grad_z = grad_out.zip_map(&cache.conv, |g, c| g * xi_grad(p * (c - bias)))?;
    let grad_p = grad_z
        .data()
        .iter()
        .zip(cache.conv.data())
        .map(|(&g, &c)| g * (c - bias))
        .sum();
    let grad_bias: T = -p * grad_z.sum();
    let grad_conv = grad_z.map(|g| g * p);
    let grad_weights = correlate2d_grad_kernel(&grad_conv, &cache.input, params.half_width())?;
    let mut grad_w_raw = grad_weights;
    for (g, &w) in grad_w_raw.values_mut().iter_mut().zip(params.w_raw.values()) {
        *g = *g * xi_grad(w);
    }
    let input = if want_input {
        Some(correlate2d_grad_input(&grad_conv, &cache.weights)?)
    } else {
        None
    };
    Ok(BiseGrads {
        input,
        w_raw: grad_w_raw,
        b_raw: grad_bias * sigmoid(params.b_raw),
        p: grad_p,
    })
}

/// Inequality verdicts for one candidate support.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActivationCheck<T> {
    pub is_dilation: bool,
    pub is_erosion: bool,
    /// `[lower, upper)` that the bias must fall in for a dilation.
    pub dilation_interval: (T, T),
    /// `[lower, upper)` that the bias must fall in for an erosion.
    pub erosion_interval: (T, T),
}

impl<T: Scalar> ActivationCheck<T> {
    /// Signed distance of `bias` to the nearer end of the interval; negative
    /// when an inequality is violated.
    pub fn dilation_margin(&self, bias: T) -> T {
        interval_margin(self.dilation_interval, bias)
    }

    pub fn erosion_margin(&self, bias: T) -> T {
        interval_margin(self.erosion_interval, bias)
    }
}

fn interval_margin<T: Scalar>((lo, hi): (T, T), bias: T) -> T {
    (bias - lo).min(hi - bias)
}

/// Checks whether effective `weights` and `bias` make the neuron a dilation or
/// an erosion with weight support `support`, for inputs in `B(u, v)`.
///
/// Dilation: `Σ_{Ω∖K} w + u·Σ_K w ≤ b < v·min_K w`.
/// Erosion: `Σ_{Ω∖K} w + max_{j∈K}(Σ_{K∖j} w + u·w_j) ≤ b < v·Σ_K w`.
///
/// The erosion lower bound counts the weights outside the support: a pixel
/// that fails the fit test may still see foreground everywhere off `K`.
pub fn check_activation<T: Scalar>(
    weights: &KernelWindow<T>,
    bias: T,
    support: &StructuringElement,
    bounds: &AlmostBinaryBounds<T>,
) -> Result<ActivationCheck<T>> {
    if support.half_width() != weights.half_width() {
        return Err(Error::Dimension(format!(
            "support window {}x{} does not match weights {}x{}",
            support.side(),
            support.side(),
            weights.side(),
            weights.side()
        )));
    }
    let (u, v) = (bounds.u, bounds.v);
    let mut sum_in = T::zero();
    let mut sum_out = T::zero();
    let mut min_in = T::infinity();
    for (&w, &m) in weights.values().iter().zip(support.mask()) {
        if m {
            sum_in = sum_in + w;
            min_in = min_in.min(w);
        } else {
            sum_out = sum_out + w;
        }
    }
    let dilation_interval = (sum_out + u * sum_in, v * min_in);
    // max_j (Σ_{K∖j} w + u·w_j) is reached at the smallest w_j
    let worst_partial_fit = weights
        .values()
        .iter()
        .zip(support.mask())
        .filter(|(_, &m)| m)
        .map(|(&w, _)| sum_in - w + u * w)
        .fold(T::neg_infinity(), T::max);
    let erosion_interval = (sum_out + worst_partial_fit, v * sum_in);
    let inside = |(lo, hi): (T, T)| lo <= bias && bias < hi;
    Ok(ActivationCheck {
        is_dilation: inside(dilation_interval),
        is_erosion: inside(erosion_interval),
        dilation_interval,
        erosion_interval,
    })
}

impl<T: Scalar> BiseParams<T> {
    /// [`check_activation`] on this neuron's effective weights and bias.
    pub fn check_activation(
        &self,
        support: &StructuringElement,
        bounds: &AlmostBinaryBounds<T>,
    ) -> Result<ActivationCheck<T>> {
        check_activation(&self.effective_weights(), self.effective_bias(), support, bounds)
    }
}

/// Verdict of the linear check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ActivationStatus<T> {
    /// `out = dilate(x, se)` for every input in the bounds.
    Dilation {
        se: StructuringElement,
        margin: T,
        output_bounds: AlmostBinaryBounds<T>,
    },
    /// `out = erode(x, se)` for every input in the bounds.
    Erosion {
        se: StructuringElement,
        margin: T,
        output_bounds: AlmostBinaryBounds<T>,
    },
    NotActivated {
        dilation_margin: T,
        erosion_margin: T,
    },
}

impl<T: Scalar> ActivationStatus<T> {
    pub fn is_activated(&self) -> bool {
        !matches!(self, ActivationStatus::NotActivated { .. })
    }

    pub fn operation(&self) -> Option<(MorphOp, &StructuringElement)> {
        match self {
            ActivationStatus::Dilation { se, .. } => Some((MorphOp::Dilation, se)),
            ActivationStatus::Erosion { se, .. } => Some((MorphOp::Erosion, se)),
            ActivationStatus::NotActivated { .. } => None,
        }
    }

    /// Bounds certified for the neuron output, when activated.
    pub fn output_bounds(&self) -> Option<AlmostBinaryBounds<T>> {
        match self {
            ActivationStatus::Dilation { output_bounds, .. }
            | ActivationStatus::Erosion { output_bounds, .. } => Some(*output_bounds),
            ActivationStatus::NotActivated { .. } => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ActivationStatus::Dilation { .. } => "dilation",
            ActivationStatus::Erosion { .. } => "erosion",
            ActivationStatus::NotActivated { .. } => "not_activated",
        }
    }
}

/// Output bounds of an activated neuron.
///
/// With the bias in `[lower, upper)`, every background pixel has a
/// correlation of at most `lower` and every foreground pixel at least
/// `upper`, so outputs avoid `(ξ(p·(lower − b)), ξ(p·(upper − b)))`.
pub fn propagate_bounds<T: Scalar>((lower, upper): (T, T), bias: T, p: T) -> Result<AlmostBinaryBounds<T>> {
    if p <= T::zero() {
        return Err(Error::InvalidArgument(format!(
            "bound propagation needs p > 0, got {p}"
        )));
    }
    let u = xi(p * (lower - bias));
    let v = xi(p * (upper - bias));
    if u < v {
        AlmostBinaryBounds::new(u, v)
    } else {
        // margins too small to separate after rounding
        Err(Error::InvalidArgument("degenerate output bounds".into()))
    }
}

/// Finds the operation and element of an activated neuron, if any.
///
/// Tries `K_d = {w ≥ b/v}` for a dilation and `K_e = {w ≥ (Σw − b)/(1 − u)}`
/// for an erosion; each candidate is accepted only if it passes
/// [`check_activation`].
pub fn find_activation<T: Scalar>(params: &BiseParams<T>, bounds: &AlmostBinaryBounds<T>) -> ActivationStatus<T> {
    let mut visits = 0;
    find_activation_counted(&params.effective_weights(), params.effective_bias(), params.p, bounds, &mut visits)
}

/// [`find_activation`] on effective quantities, counting weight visits.
pub fn find_activation_counted<T: Scalar>(
    weights: &KernelWindow<T>,
    bias: T,
    p: T,
    bounds: &AlmostBinaryBounds<T>,
    visits: &mut usize,
) -> ActivationStatus<T> {
    let (u, v) = (bounds.u, bounds.v);
    let n = weights.half_width();
    let total: T = weights.values().iter().copied().sum();
    *visits += weights.len();

    let threshold_support = |tau: T, visits: &mut usize| {
        *visits += weights.len();
        StructuringElement::new(n, weights.values().iter().map(|&w| w >= tau).collect()).ok()
    };

    let mut dilation_margin = T::neg_infinity();
    let mut erosion_margin = T::neg_infinity();

    if let Some(support) = threshold_support(bias / v, visits) {
        // check_activation makes two passes over the window
        *visits += 2 * weights.len();
        if let Ok(check) = check_activation(weights, bias, &support, bounds) {
            dilation_margin = check.dilation_margin(bias);
            if check.is_dilation {
                if let Ok(output_bounds) = propagate_bounds(check.dilation_interval, bias, p) {
                    return ActivationStatus::Dilation {
                        se: support.reflect(),
                        margin: dilation_margin,
                        output_bounds,
                    };
                }
            }
        }
    }
    if let Some(support) = threshold_support((total - bias) / (T::one() - u), visits) {
        *visits += 2 * weights.len();
        if let Ok(check) = check_activation(weights, bias, &support, bounds) {
            erosion_margin = check.erosion_margin(bias);
            if check.is_erosion {
                if let Ok(output_bounds) = propagate_bounds(check.erosion_interval, bias, p) {
                    return ActivationStatus::Erosion {
                        se: support,
                        margin: erosion_margin,
                        output_bounds,
                    };
                }
            }
        }
    }
    ActivationStatus::NotActivated {
        dilation_margin,
        erosion_margin,
    }
}

/// Erosion bias interval obtained from the dilation one by complementation:
/// `u_e = Σw − v_d`, `v_e = Σw − u_d`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualBounds<T> {
    pub u_e: T,
    pub v_e: T,
    /// Zero weight mass or an empty interval.
    pub degenerate: bool,
}

pub fn dual_bounds<T: Scalar>(weights: &[T], u_d: T, v_d: T) -> DualBounds<T> {
    let total: T = weights.iter().copied().sum();
    let u_e = total - v_d;
    let v_e = total - u_d;
    DualBounds {
        u_e,
        v_e,
        degenerate: total <= T::zero() || u_e >= v_e,
    }
}

/// Exact morphological replacement of an activated neuron.
pub fn binarize_bise<T: Scalar>(
    params: &BiseParams<T>,
    bounds: &AlmostBinaryBounds<T>,
) -> Result<(MorphOp, StructuringElement)> {
    match find_activation(params, bounds) {
        ActivationStatus::Dilation { se, .. } => Ok((MorphOp::Dilation, se)),
        ActivationStatus::Erosion { se, .. } => Ok((MorphOp::Erosion, se)),
        ActivationStatus::NotActivated {
            dilation_margin,
            erosion_margin,
        } => Err(Error::NotActivated(format!(
            "dilation margin {dilation_margin}, erosion margin {erosion_margin}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morpho::{dilate, erode, make_se, SeShape};
    use crate::BinaryImage;

    fn bounds(u: f64, v: f64) -> AlmostBinaryBounds<f64> {
        AlmostBinaryBounds::new(u, v).unwrap()
    }

    /// 3×3 weights: 0.9 on the middle row, 0.01 elsewhere.
    fn row_weights() -> (KernelWindow<f64>, StructuringElement) {
        let support = StructuringElement::from_fn(1, |a, _| a == 0).unwrap();
        let w = KernelWindow::from_fn(1, |a, _| if a == 0 { 0.9 } else { 0.01 });
        (w, support)
    }

    #[test]
    fn check_activation_hand_examples() {
        let (w, s) = row_weights();
        let b = bounds(0.1, 0.9);
        // 0.06 + 0.1·2.7 = 0.33 ≤ 0.6 < 0.9·0.9 = 0.81
        let c = check_activation(&w, 0.6, &s, &b).unwrap();
        assert!(c.is_dilation && !c.is_erosion);
        assert!((c.dilation_interval.0 - 0.33).abs() < 1e-12);
        assert!((c.dilation_interval.1 - 0.81).abs() < 1e-12);
        // 0.06 + (1.8 + 0.09) = 1.95 ≤ 2.0 < 0.9·2.7 = 2.43
        let c = check_activation(&w, 2.0, &s, &b).unwrap();
        assert!(c.is_erosion && !c.is_dilation);
        assert!((c.erosion_interval.0 - 1.95).abs() < 1e-12);
        assert!((c.erosion_interval.1 - 2.43).abs() < 1e-12);
        let c = check_activation(&w, 1.2, &s, &b).unwrap();
        assert!(!c.is_dilation && !c.is_erosion);
    }

    #[test]
    fn check_activation_rejects_mismatched_window() {
        let (w, _) = row_weights();
        let s = StructuringElement::origin(2);
        assert!(check_activation(&w, 0.6, &s, &bounds(0.0, 1.0)).is_err());
    }

    #[test]
    fn single_element_support_may_be_both() {
        let w = KernelWindow::from_fn(1, |a, b| if a == 0 && b == 0 { 0.99 } else { 1e-4 });
        let s = StructuringElement::origin(1);
        let c = check_activation(&w, 0.5, &s, &bounds(0.0, 1.0)).unwrap();
        assert!(c.is_dilation && c.is_erosion);
    }

    #[test]
    fn zero_input_gives_constant_low_output() {
        let params = BiseParams::new(KernelWindow::from_fn(1, |a, b| (a + b) as f64), 0.3, 4.0);
        let (out, _) = bise_forward(&Grid::zeros(6, 6), &params).unwrap();
        let expected = xi(-4.0 * softplus_half(0.3));
        assert!(expected < 0.5);
        assert!(out.data().iter().all(|&v| v == expected));
    }

    #[test]
    fn zero_scaling_gives_half() {
        let params = BiseParams::new(KernelWindow::from_fn(1, |a, b| (a - b) as f64), 1.0, 0.0);
        let x = Grid::from_fn(5, 5, |i, j| ((i + j) % 2) as f64);
        let (out, _) = bise_forward(&x, &params).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn ideal_dilation_on_single_pixel() {
        let s = make_se(SeShape::Cross { arm_length: 1, diagonal: false }, 3).unwrap();
        let support = weight_support(MorphOp::Dilation, &s).unwrap();
        let w_raw = KernelWindow::<f64>::new(1, support.mask().iter().map(|&m| if m { 10.0 } else { -10.0 }).collect()).unwrap();
        let params = BiseParams::with_effective_bias(w_raw, 0.75, 4.0);
        assert!((params.effective_bias() - 0.75).abs() < 1e-12);
        let x = BinaryImage::from_fn(9, 9, |i, j| (i, j) == (4, 4));
        let (out, _) = bise_forward(&x.to_real(), &params).unwrap();
        assert_eq!(out.threshold(0.5), dilate(&x, &s));
    }

    #[test]
    fn find_activation_recovers_ideal_dilation_and_erosion() {
        let s = StructuringElement::from_fn(1, |a, b| (a, b) == (0, 0) || (a, b) == (0, 1) || (a, b) == (-1, 1)).unwrap();
        let b01 = bounds(0.0, 1.0);
        let params = BiseParams::ideal(MorphOp::Dilation, &s, 1, &b01, 5.0, 4.0).unwrap();
        match find_activation(&params, &b01) {
            ActivationStatus::Dilation { se, .. } => assert_eq!(se, s),
            other => panic!("expected dilation, got {other:?}"),
        }
        // |S| = 3, bias 2.5: Σ_{Ω∖S} w + max_j Σ_{S∖j} w ≈ 2 ≤ 2.5 < 3
        let support = weight_support(MorphOp::Erosion, &s).unwrap();
        let w_raw = KernelWindow::new(1, support.mask().iter().map(|&m| if m { 5.0 } else { -5.0 }).collect()).unwrap();
        let params = BiseParams::with_effective_bias(w_raw, 2.5, 4.0);
        match find_activation(&params, &b01) {
            ActivationStatus::Erosion { se, .. } => assert_eq!(se, s),
            other => panic!("expected erosion, got {other:?}"),
        }
    }

    #[test]
    fn uniform_weights_are_not_activated() {
        let w = KernelWindow::from_fn(1, |_, _| 0.5);
        let mut visits = 0;
        let status = find_activation_counted(&w, 0.7, 4.0, &bounds(0.0, 1.0), &mut visits);
        assert!(!status.is_activated());
    }

    #[test]
    fn find_activation_is_linear_in_window_size() {
        let mut per_weight = Vec::new();
        for n in [1usize, 2, 3] {
            let w = KernelWindow::from_fn(n, |a, b| if a == b { 0.97 } else { 0.001 });
            let mut visits = 0;
            find_activation_counted(&w, 0.8, 4.0, &bounds(0.0, 1.0), &mut visits);
            per_weight.push(visits as f64 / w.len() as f64);
        }
        assert!(per_weight.iter().all(|&r| r <= 7.0));
        assert!(per_weight.windows(2).all(|p| (p[0] - p[1]).abs() < 1e-12));
    }

    #[test]
    fn binarize_refuses_untrained_neuron() {
        let params = BiseParams::new(KernelWindow::from_fn(1, |_, _| 0.0), 2.0, 4.0);
        assert!(matches!(binarize_bise(&params, &bounds(0.0, 1.0)), Err(Error::NotActivated(_))));
    }

    #[test]
    fn dual_bounds_identities() {
        let w = [1.0f64; 9];
        let d = dual_bounds(&w, 0.0, 1.0);
        assert_eq!(d.v_e, 9.0);
        assert_eq!(d.u_e, 8.0);
        assert!(!d.degenerate);
        let d = dual_bounds(&[0.0f64; 9], 0.0, 0.0);
        assert!(d.degenerate);
    }

    #[test]
    fn verify_almost_binary_cases() {
        let b = bounds(0.2, 0.7);
        let img = BinaryImage::from_fn(4, 4, |i, j| i == j).to_real::<f64>();
        assert!(verify_almost_binary(&img, &b));
        let mut img2 = img.clone();
        img2.set(0, 1, 0.45);
        assert!(!verify_almost_binary(&img2, &b));
        assert!(AlmostBinaryImage::new(img2, b).is_err());
        assert!(AlmostBinaryBounds::new(0.6, 0.4).is_err());
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut neuron = Bise::new(BiseParams::new(KernelWindow::from_fn(1, |_, _| 0.1), 2.0, 4.0));
        let x = Grid::from_fn(5, 5, |i, _| (i % 2) as f64);
        let (out, cache) = neuron.forward(&x).unwrap();
        neuron.params_mut().b_raw = 1.0;
        assert!(matches!(neuron.backward(&out, &cache, true), Err(Error::StaleCache)));
        let (out, cache) = neuron.forward(&x).unwrap();
        assert!(neuron.backward(&out, &cache, true).is_ok());
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let neuron = Bise::new(BiseParams::new(KernelWindow::from_fn(1, |a, b| 0.3 * (a - b) as f64), 0.4, 4.0));
        let x = Grid::from_fn(6, 6, |i, j| ((i * j) % 3) as f64 / 2.0);
        let (_, cache) = neuron.forward(&x).unwrap();
        let g = neuron.backward(&Grid::zeros(6, 6), &cache, true).unwrap();
        assert!(g.input.unwrap().data().iter().all(|&v| v == 0.0));
        assert!(g.w_raw.values().iter().all(|&v| v == 0.0));
        assert_eq!(g.b_raw, 0.0);
        assert_eq!(g.p, 0.0);
    }

    #[test]
    fn saturated_weights_have_vanishing_gradient() {
        let w_raw = KernelWindow::from_fn(1, |_, _| 12.0);
        let neuron = Bise::new(BiseParams::new(w_raw, 0.0, 4.0));
        let x = Grid::from_fn(7, 7, |i, j| ((i + 2 * j) % 3 == 0) as u8 as f64);
        let (out, cache) = neuron.forward(&x).unwrap();
        let grad_out = out.map(|o| 2.0 * o);
        let g = neuron.backward(&grad_out, &cache, false).unwrap();
        // |dL/dw_raw| ≤ p·½(1 − tanh²(12))·Σ|grad_out·ξ'(z)|·max x
        let bound = 4.0 * xi_grad(12.0) * grad_out.data().iter().map(|v| v.abs() * 0.5).sum::<f64>();
        assert!(g.w_raw.values().iter().all(|v| v.abs() <= bound));
        assert!(bound < 1e-6);
    }

    #[test]
    fn erosion_needs_off_support_mass_in_lower_bound() {
        // a pixel whose fit test fails at one support element but sees
        // foreground everywhere off the support still reaches Σ_{Ω∖K} w + Σ_{K∖j} w
        let s = StructuringElement::from_fn(1, |a, b| a == 0 && b >= 0).unwrap();
        let w = KernelWindow::from_fn(1, |a, b| if a == 0 && b >= 0 { 0.9 } else { 0.3 });
        let c = check_activation(&w, 1.9, &s, &bounds(0.0, 1.0)).unwrap();
        // without the off-support mass the lower bound would be 1.8 ≤ 1.9
        assert!(!c.is_erosion);
        let x = BinaryImage::from_fn(5, 5, |i, j| !(i == 2 && j == 3));
        let hard = bise_hard_forward(&x.to_real(), &BiseParams::with_effective_bias(w.map(|v| (2.0 * v - 1.0f64).atanh()), 1.9, 4.0)).unwrap();
        assert_ne!(hard, erode(&x, &s));
    }
}
