//! Channel aggregation: the LUI unit `x ↦ ξ(p·(Σ_k β_k·x_k − f⁺(b)))`, which
//! realizes unions and intersections of almost-binary channels, and the
//! BiSEL layer that feeds one BiSE per (input, output) channel pair into one
//! LUI per output channel.

use serde::{Deserialize, Serialize};

use crate::bise::{ActivationStatus, AlmostBinaryBounds, Bise, BiseCache, BiseParams};
use crate::error::{Error, Result};
use crate::grid::{sigmoid, softplus, softplus_half, softplus_inverse, xi, xi_grad, Grid};
use crate::scalar::Scalar;

/// Raw LUI parameters. Effective coefficients are `β = softplus(β_raw) ≥ 0`
/// and the effective bias is `f⁺(b_raw)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LuiParams<T> {
    pub beta_raw: Vec<T>,
    pub b_raw: T,
    pub p: T,
}

impl<T: Scalar> LuiParams<T> {
    pub fn new(beta_raw: Vec<T>, b_raw: T, p: T) -> Self {
        Self { beta_raw, b_raw, p }
    }

    /// Parameters with the given effective coefficients (each > 0) and
    /// effective bias (> ½).
    pub fn from_effective(beta: &[T], bias: T, p: T) -> Self {
        Self {
            beta_raw: beta.iter().map(|&b| softplus_inverse(b)).collect(),
            b_raw: softplus_inverse(bias - T::lit(0.5)),
            p,
        }
    }

    pub fn channels(&self) -> usize {
        self.beta_raw.len()
    }

    pub fn effective_beta(&self) -> Vec<T> {
        self.beta_raw.iter().map(|&b| softplus(b)).collect()
    }

    pub fn effective_bias(&self) -> T {
        softplus_half(self.b_raw)
    }
}

#[derive(Clone, Debug)]
pub struct LuiCache<T> {
    inputs: Vec<Grid<T>>,
    beta: Vec<T>,
    /// `Σ_k β_k·x_k`
    combined: Grid<T>,
}

impl<T: Scalar> LuiCache<T> {
    pub fn combined(&self) -> &Grid<T> {
        &self.combined
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LuiGrads<T> {
    pub channels: Vec<Grid<T>>,
    pub beta_raw: Vec<T>,
    pub b_raw: T,
    pub p: T,
}

fn check_channels<T: Scalar>(channels: &[Grid<T>], expected: usize) -> Result<()> {
    let first = channels
        .first()
        .ok_or_else(|| Error::InvalidArgument("LUI needs at least one channel".into()))?;
    if channels.len() != expected {
        return Err(Error::InvalidArgument(format!(
            "LUI expects {expected} channels, got {}",
            channels.len()
        )));
    }
    for c in &channels[1..] {
        first.check_same_shape(c)?;
    }
    Ok(())
}

pub fn lui_forward<T: Scalar>(channels: &[Grid<T>], params: &LuiParams<T>) -> Result<(Grid<T>, LuiCache<T>)> {
    check_channels(channels, params.channels())?;
    let beta = params.effective_beta();
    let (h, w) = channels[0].shape();
    let mut combined = Grid::zeros(h, w);
    for (c, &b) in channels.iter().zip(&beta) {
        for (acc, &x) in combined.data_mut().iter_mut().zip(c.data()) {
            *acc = *acc + b * x;
        }
    }
    let bias = params.effective_bias();
    let out = combined.map(|s| xi(params.p * (s - bias)));
    Ok((
        out,
        LuiCache {
            inputs: channels.to_vec(),
            beta,
            combined,
        },
    ))
}

pub fn lui_backward<T: Scalar>(grad_out: &Grid<T>, cache: &LuiCache<T>, params: &LuiParams<T>) -> Result<LuiGrads<T>> {
    cache.combined.check_same_shape(grad_out)?;
    if cache.beta.len() != params.channels() {
        return Err(Error::StaleCache);
    }
    let p = params.p;
    let bias = params.effective_bias();
    let grad_z = grad_out.zip_map(&cache.combined, |g, s| g * xi_grad(p * (s - bias)))?;
    let grad_p = grad_z
        .data()
        .iter()
        .zip(cache.combined.data())
        .map(|(&g, &s)| g * (s - bias))
        .sum();
    let grad_sum = grad_z.map(|g| g * p);
    let channels = cache.beta.iter().map(|&b| grad_sum.map(|g| g * b)).collect();
    let beta_raw = cache
        .inputs
        .iter()
        .zip(&params.beta_raw)
        .map(|(x, &br)| {
            let dot: T = grad_sum.data().iter().zip(x.data()).map(|(&g, &v)| g * v).sum();
            dot * sigmoid(br)
        })
        .collect();
    Ok(LuiGrads {
        channels,
        beta_raw,
        b_raw: -grad_sum.sum() * sigmoid(params.b_raw),
        p: grad_p,
    })
}

/// Pixelwise aggregate of an activated LUI.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    Union,
    Intersection,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LuiCheck<T> {
    pub is_intersection: bool,
    pub is_union: bool,
    pub intersection_interval: (T, T),
    pub union_interval: (T, T),
}

/// Verdicts for channel subset `c_set` given effective coefficients `beta`,
/// effective bias and per-channel bounds.
///
/// Intersection: `Σ_k β_k − min_{k∈C}(1 − u_k)β_k ≤ b < Σ_{k∈C} β_k·v_k`.
/// Union: `Σ_{k∈C} β_k·u_k + Σ_{k∉C} β_k ≤ b < min_{k∈C} β_k·v_k`.
pub fn check_lui_activation<T: Scalar>(
    beta: &[T],
    bias: T,
    c_set: &[bool],
    bounds: &[AlmostBinaryBounds<T>],
) -> Result<LuiCheck<T>> {
    if beta.len() != c_set.len() || beta.len() != bounds.len() {
        return Err(Error::InvalidArgument(format!(
            "{} coefficients, {} subset flags, {} bounds",
            beta.len(),
            c_set.len(),
            bounds.len()
        )));
    }
    if !c_set.iter().any(|&c| c) {
        return Err(Error::InvalidArgument("empty channel subset".into()));
    }
    if beta.iter().any(|&b| b < T::zero()) {
        return Err(Error::InvalidArgument("negative LUI coefficient".into()));
    }
    let total: T = beta.iter().copied().sum();
    let mut min_gap = T::infinity();
    let mut sum_v = T::zero();
    let mut union_low = T::zero();
    let mut min_v = T::infinity();
    for ((&b, &inside), bd) in beta.iter().zip(c_set).zip(bounds) {
        if inside {
            min_gap = min_gap.min((T::one() - bd.u()) * b);
            sum_v = sum_v + b * bd.v();
            union_low = union_low + b * bd.u();
            min_v = min_v.min(b * bd.v());
        } else {
            union_low = union_low + b;
        }
    }
    let intersection_interval = (total - min_gap, sum_v);
    let union_interval = (union_low, min_v);
    let inside = |(lo, hi): (T, T)| lo <= bias && bias < hi;
    Ok(LuiCheck {
        is_intersection: inside(intersection_interval),
        is_union: inside(union_interval),
        intersection_interval,
        union_interval,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum LuiStatus<T> {
    Intersection {
        channels: Vec<usize>,
        output_bounds: AlmostBinaryBounds<T>,
    },
    Union {
        channels: Vec<usize>,
        output_bounds: AlmostBinaryBounds<T>,
    },
    NotActivated,
}

impl<T: Scalar> LuiStatus<T> {
    pub fn is_activated(&self) -> bool {
        !matches!(self, LuiStatus::NotActivated)
    }

    pub fn output_bounds(&self) -> Option<AlmostBinaryBounds<T>> {
        match self {
            LuiStatus::Intersection { output_bounds, .. } | LuiStatus::Union { output_bounds, .. } => {
                Some(*output_bounds)
            }
            LuiStatus::NotActivated => None,
        }
    }

    pub fn aggregate(&self) -> Option<(Aggregate, &[usize])> {
        match self {
            LuiStatus::Intersection { channels, .. } => Some((Aggregate::Intersection, channels)),
            LuiStatus::Union { channels, .. } => Some((Aggregate::Union, channels)),
            LuiStatus::NotActivated => None,
        }
    }
}

/// Sweeps the distinct values of `β` from the largest down; each threshold
/// gives a candidate `C = {k : β_k ≥ τ}` that is validated with
/// [`check_lui_activation`]. A single-channel `C` is reported as a union.
pub fn find_lui_activation<T: Scalar>(params: &LuiParams<T>, bounds: &[AlmostBinaryBounds<T>]) -> LuiStatus<T> {
    let beta = params.effective_beta();
    let bias = params.effective_bias();
    let mut order: Vec<usize> = (0..beta.len()).collect();
    order.sort_by(|&a, &b| beta[b].partial_cmp(&beta[a]).unwrap_or(std::cmp::Ordering::Equal));
    let mut tried = None;
    for &k in &order {
        let tau = beta[k];
        if tried == Some(tau) {
            continue;
        }
        tried = Some(tau);
        let c_set: Vec<bool> = beta.iter().map(|&b| b >= tau).collect();
        let Ok(check) = check_lui_activation(&beta, bias, &c_set, bounds) else {
            continue;
        };
        let channels: Vec<usize> = (0..beta.len()).filter(|&i| c_set[i]).collect();
        let propagate = |(lo, hi): (T, T)| {
            crate::bise::propagate_bounds((lo, hi), bias, params.p).ok()
        };
        if check.is_union {
            if let Some(output_bounds) = propagate(check.union_interval) {
                return LuiStatus::Union {
                    channels,
                    output_bounds,
                };
            }
        }
        if check.is_intersection {
            if let Some(output_bounds) = propagate(check.intersection_interval) {
                return LuiStatus::Intersection {
                    channels,
                    output_bounds,
                };
            }
        }
    }
    LuiStatus::NotActivated
}

/// `N × K` BiSE neurons and `K` LUIs. Output channel `k` is
/// `LUI_k(bise[k][0](x_0), …, bise[k][N−1](x_{N−1}))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Bisel<T> {
    in_channels: usize,
    /// Row-major `[k][n]`.
    bises: Vec<Bise<T>>,
    luis: Vec<LuiParams<T>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiselParams<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Row-major `[k][n]`.
    pub bises: Vec<BiseParams<T>>,
    pub luis: Vec<LuiParams<T>>,
}

impl<T: Scalar> BiselParams<T> {
    /// Parameter count as enumerated per (input, output) pair: `|Ω|` weights,
    /// one BiSE bias, one `β` and one LUI bias share, i.e. `NK(|Ω| + 3)`.
    pub fn parameter_count(&self) -> usize {
        let per_bise: usize = self.bises.iter().map(|b| b.w_raw.len() + 1).sum();
        let per_lui: usize = self.luis.iter().map(|l| 2 * l.channels()).sum();
        per_bise + per_lui
    }

    /// Distinct trainable scalars: `NK(|Ω| + 2) + K` (scales excluded).
    pub fn trainable_scalars(&self) -> usize {
        let per_bise: usize = self.bises.iter().map(|b| b.w_raw.len() + 1).sum();
        let per_lui: usize = self.luis.iter().map(|l| l.channels() + 1).sum();
        per_bise + per_lui
    }
}

#[derive(Clone, Debug)]
pub struct BiselCache<T> {
    bises: Vec<BiseCache<T>>,
    luis: Vec<LuiCache<T>>,
}

impl<T: Scalar> BiselCache<T> {
    pub fn lui_caches(&self) -> &[LuiCache<T>] {
        &self.luis
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiselGrads<T> {
    pub inputs: Option<Vec<Grid<T>>>,
    /// Row-major `[k][n]`.
    pub bises: Vec<crate::bise::BiseGrads<T>>,
    pub luis: Vec<LuiGrads<T>>,
}

/// Activation verdicts for a whole layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiselStatus<T> {
    /// Row-major `[k][n]`.
    pub bises: Vec<ActivationStatus<T>>,
    pub luis: Vec<LuiStatus<T>>,
}

impl<T: Scalar> BiselStatus<T> {
    pub fn is_activated(&self) -> bool {
        self.bises.iter().all(ActivationStatus::is_activated) && self.luis.iter().all(LuiStatus::is_activated)
    }

    pub fn output_bounds(&self) -> Option<Vec<AlmostBinaryBounds<T>>> {
        self.luis.iter().map(LuiStatus::output_bounds).collect()
    }
}

impl<T: Scalar> Bisel<T> {
    pub fn new(params: BiselParams<T>) -> Result<Self> {
        let BiselParams {
            in_channels,
            out_channels,
            bises,
            luis,
        } = params;
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::InvalidArgument("BiSEL needs at least one input and output channel".into()));
        }
        if bises.len() != in_channels * out_channels || luis.len() != out_channels {
            return Err(Error::InvalidArgument(format!(
                "BiSEL {in_channels}->{out_channels} needs {} neurons and {out_channels} LUIs, got {} and {}",
                in_channels * out_channels,
                bises.len(),
                luis.len()
            )));
        }
        if luis.iter().any(|l| l.channels() != in_channels) {
            return Err(Error::InvalidArgument("LUI width differs from input channel count".into()));
        }
        Ok(Self {
            in_channels,
            bises: bises.into_iter().map(Bise::new).collect(),
            luis,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.luis.len()
    }

    pub fn bise(&self, k: usize, n: usize) -> &Bise<T> {
        &self.bises[k * self.in_channels + n]
    }

    pub fn bises(&self) -> &[Bise<T>] {
        &self.bises
    }

    pub fn bises_mut(&mut self) -> &mut [Bise<T>] {
        &mut self.bises
    }

    pub fn luis(&self) -> &[LuiParams<T>] {
        &self.luis
    }

    pub fn luis_mut(&mut self) -> &mut [LuiParams<T>] {
        &mut self.luis
    }

    pub fn params(&self) -> BiselParams<T> {
        BiselParams {
            in_channels: self.in_channels,
            out_channels: self.out_channels(),
            bises: self.bises.iter().map(|b| b.params().clone()).collect(),
            luis: self.luis.clone(),
        }
    }

    pub fn forward(&self, x: &[Grid<T>]) -> Result<(Vec<Grid<T>>, BiselCache<T>)> {
        if x.len() != self.in_channels {
            return Err(Error::InvalidArgument(format!(
                "BiSEL expects {} input channels, got {}",
                self.in_channels,
                x.len()
            )));
        }
        let mut bise_caches = Vec::with_capacity(self.bises.len());
        let mut lui_caches = Vec::with_capacity(self.luis.len());
        let mut outputs = Vec::with_capacity(self.luis.len());
        for (k, lui) in self.luis.iter().enumerate() {
            let mut mids = Vec::with_capacity(self.in_channels);
            for (n, xn) in x.iter().enumerate() {
                let (y, cache) = self.bise(k, n).forward(xn)?;
                mids.push(y);
                bise_caches.push(cache);
            }
            let (out, cache) = lui_forward(&mids, lui)?;
            outputs.push(out);
            lui_caches.push(cache);
        }
        Ok((
            outputs,
            BiselCache {
                bises: bise_caches,
                luis: lui_caches,
            },
        ))
    }

    /// Pre-activations `p·(Σ β·y − f⁺(b))` of each output channel.
    pub fn pre_activation(&self, cache: &BiselCache<T>) -> Vec<Grid<T>> {
        self.luis
            .iter()
            .zip(&cache.luis)
            .map(|(l, c)| {
                let bias = l.effective_bias();
                c.combined.map(|s| l.p * (s - bias))
            })
            .collect()
    }

    pub fn backward(&self, grad_out: &[Grid<T>], cache: &BiselCache<T>, want_input: bool) -> Result<BiselGrads<T>> {
        if grad_out.len() != self.out_channels() {
            return Err(Error::InvalidArgument("gradient channel count mismatch".into()));
        }
        let mut inputs: Option<Vec<Grid<T>>> = None;
        let mut bise_grads = Vec::with_capacity(self.bises.len());
        let mut lui_grads = Vec::with_capacity(self.luis.len());
        for (k, lui) in self.luis.iter().enumerate() {
            let lg = lui_backward(&grad_out[k], &cache.luis[k], lui)?;
            for n in 0..self.in_channels {
                let idx = k * self.in_channels + n;
                let bg = self.bises[idx].backward(&lg.channels[n], &cache.bises[idx], want_input)?;
                if let Some(gx) = &bg.input {
                    let acc = inputs.get_or_insert_with(|| {
                        vec![Grid::zeros(gx.height(), gx.width()); self.in_channels]
                    });
                    for (a, &g) in acc[n].data_mut().iter_mut().zip(gx.data()) {
                        *a = *a + g;
                    }
                }
                bise_grads.push(bg);
            }
            lui_grads.push(lg);
        }
        Ok(BiselGrads {
            inputs,
            bises: bise_grads,
            luis: lui_grads,
        })
    }

    /// Checks every neuron against `input_bounds[n]`, then every LUI against
    /// the bounds its neurons certify. A LUI whose neurons are not all
    /// activated is checked against binary channels.
    pub fn find_activation(&self, input_bounds: &[AlmostBinaryBounds<T>]) -> BiselStatus<T> {
        let mut bises = Vec::with_capacity(self.bises.len());
        let mut luis = Vec::with_capacity(self.luis.len());
        for (k, lui) in self.luis.iter().enumerate() {
            let statuses: Vec<_> = (0..self.in_channels)
                .map(|n| self.bise(k, n).find_activation(&input_bounds[n]))
                .collect();
            let channel_bounds: Vec<_> = statuses
                .iter()
                .map(|s| s.output_bounds().unwrap_or_else(AlmostBinaryBounds::binary))
                .collect();
            luis.push(find_lui_activation(lui, &channel_bounds));
            bises.extend(statuses);
        }
        BiselStatus { bises, luis }
    }
}
