//! BiMoNN: a stack of BiSE / BiSEL layers with flat parameter access for
//! the optimizer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bise::{ActivationStatus, AlmostBinaryBounds, Bise, BiseCache, BiseParams};
use crate::error::{Error, Result};
use crate::grid::{BinaryImage, Grid, KernelWindow};
use crate::loss::LossMask;
use crate::lui::{Bisel, BiselCache, BiselParams, BiselStatus};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Weight,
    Bias,
    Scale,
    LuiBeta,
    LuiBias,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Bise(Bise<T>),
    Bisel(Bisel<T>),
}

#[derive(Clone, Debug)]
pub enum LayerCache<T> {
    Bise(BiseCache<T>),
    Bisel(BiselCache<T>),
}

/// Per-layer activation verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case")]
pub enum LayerStatus<T> {
    Bise {
        status: ActivationStatus<T>,
        input_bounds: AlmostBinaryBounds<T>,
    },
    Bisel {
        status: BiselStatus<T>,
        input_bounds: Vec<AlmostBinaryBounds<T>>,
    },
}

impl<T: Scalar> LayerStatus<T> {
    pub fn is_activated(&self) -> bool {
        match self {
            LayerStatus::Bise { status, .. } => status.is_activated(),
            LayerStatus::Bisel { status, .. } => status.is_activated(),
        }
    }

    /// One flag per BiSE neuron, then one per LUI.
    pub fn flags(&self) -> Vec<bool> {
        match self {
            LayerStatus::Bise { status, .. } => vec![status.is_activated()],
            LayerStatus::Bisel { status, .. } => status
                .bises
                .iter()
                .map(ActivationStatus::is_activated)
                .chain(status.luis.iter().map(|l| l.is_activated()))
                .collect(),
        }
    }
}

impl<T: Scalar> Layer<T> {
    pub fn in_channels(&self) -> usize {
        match self {
            Layer::Bise(_) => 1,
            Layer::Bisel(l) => l.in_channels(),
        }
    }

    pub fn out_channels(&self) -> usize {
        match self {
            Layer::Bise(_) => 1,
            Layer::Bisel(l) => l.out_channels(),
        }
    }

    /// Largest kernel side in the layer.
    pub fn kernel_side(&self) -> usize {
        match self {
            Layer::Bise(b) => b.params().w_raw.side(),
            Layer::Bisel(l) => l.bises().iter().map(|b| b.params().w_raw.side()).max().unwrap_or(1),
        }
    }

    pub fn forward(&self, x: &[Grid<T>]) -> Result<(Vec<Grid<T>>, LayerCache<T>)> {
        match self {
            Layer::Bise(b) => {
                if x.len() != 1 {
                    return Err(Error::InvalidArgument(format!(
                        "BiSE layer expects 1 channel, got {}",
                        x.len()
                    )));
                }
                let (out, cache) = b.forward(&x[0])?;
                Ok((vec![out], LayerCache::Bise(cache)))
            }
            Layer::Bisel(l) => {
                let (out, cache) = l.forward(x)?;
                Ok((out, LayerCache::Bisel(cache)))
            }
        }
    }

    /// Pre-activations of the layer outputs, recomputed from a cache.
    pub fn pre_activation(&self, cache: &LayerCache<T>) -> Result<Vec<Grid<T>>> {
        match (self, cache) {
            (Layer::Bise(b), LayerCache::Bise(c)) => {
                let p = b.params();
                let bias = p.effective_bias();
                Ok(vec![c.conv().map(|v| p.p * (v - bias))])
            }
            (Layer::Bisel(l), LayerCache::Bisel(c)) => Ok(l.pre_activation(c)),
            _ => Err(Error::StaleCache),
        }
    }

    /// Returns input gradients (when requested) and appends parameter
    /// gradients to `grads` in [`Layer::parameters`] order.
    pub fn backward(
        &self,
        grad_out: &[Grid<T>],
        cache: &LayerCache<T>,
        want_input: bool,
        grads: &mut Vec<T>,
    ) -> Result<Option<Vec<Grid<T>>>> {
        match (self, cache) {
            (Layer::Bise(b), LayerCache::Bise(c)) => {
                let g = b.backward(&grad_out[0], c, want_input)?;
                grads.extend_from_slice(g.w_raw.values());
                grads.push(g.b_raw);
                grads.push(g.p);
                Ok(g.input.map(|gi| vec![gi]))
            }
            (Layer::Bisel(l), LayerCache::Bisel(c)) => {
                let g = l.backward(grad_out, c, want_input)?;
                for bg in &g.bises {
                    grads.extend_from_slice(bg.w_raw.values());
                    grads.push(bg.b_raw);
                    grads.push(bg.p);
                }
                for lg in &g.luis {
                    grads.extend_from_slice(&lg.beta_raw);
                    grads.push(lg.b_raw);
                    grads.push(lg.p);
                }
                Ok(g.inputs)
            }
            _ => Err(Error::StaleCache),
        }
    }

    pub fn parameters(&self, out: &mut Vec<T>, roles: &mut Vec<ParamRole>) {
        let mut push_bise = |p: &BiseParams<T>, out: &mut Vec<T>| {
            out.extend_from_slice(p.w_raw.values());
            out.push(p.b_raw);
            out.push(p.p);
            roles.extend(std::iter::repeat_n(ParamRole::Weight, p.w_raw.len()));
            roles.push(ParamRole::Bias);
            roles.push(ParamRole::Scale);
        };
        match self {
            Layer::Bise(b) => push_bise(b.params(), out),
            Layer::Bisel(l) => {
                for b in l.bises() {
                    push_bise(b.params(), out);
                }
                for lui in l.luis() {
                    out.extend_from_slice(&lui.beta_raw);
                    out.push(lui.b_raw);
                    out.push(lui.p);
                    roles.extend(std::iter::repeat_n(ParamRole::LuiBeta, lui.beta_raw.len()));
                    roles.push(ParamRole::LuiBias);
                    roles.push(ParamRole::Scale);
                }
            }
        }
    }

    /// Reads parameters from the front of `values`; returns how many were used.
    pub fn set_parameters(&mut self, values: &[T]) -> usize {
        fn set_bise<T: Scalar>(b: &mut Bise<T>, values: &[T]) -> usize {
            let p = b.params_mut();
            let n = p.w_raw.len();
            p.w_raw.values_mut().copy_from_slice(&values[..n]);
            p.b_raw = values[n];
            p.p = values[n + 1];
            n + 2
        }
        match self {
            Layer::Bise(b) => set_bise(b, values),
            Layer::Bisel(l) => {
                let mut used = 0;
                for b in l.bises_mut() {
                    used += set_bise(b, &values[used..]);
                }
                for lui in l.luis_mut() {
                    let c = lui.beta_raw.len();
                    lui.beta_raw.copy_from_slice(&values[used..used + c]);
                    lui.b_raw = values[used + c];
                    lui.p = values[used + c + 1];
                    used += c + 2;
                }
                used
            }
        }
    }

    pub fn find_activation(&self, input_bounds: &[AlmostBinaryBounds<T>]) -> LayerStatus<T> {
        match self {
            Layer::Bise(b) => LayerStatus::Bise {
                status: b.find_activation(&input_bounds[0]),
                input_bounds: input_bounds[0],
            },
            Layer::Bisel(l) => LayerStatus::Bisel {
                status: l.find_activation(input_bounds),
                input_bounds: input_bounds.to_vec(),
            },
        }
    }
}

/// Composition `ε_L ∘ … ∘ ε_1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Bimonn<T> {
    layers: Vec<Layer<T>>,
}

#[derive(Clone, Debug)]
pub struct NetCache<T> {
    layers: Vec<LayerCache<T>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// `U(−a, a)` with `a = √(6 / fan_in)`.
    #[default]
    KaimingUniform,
    /// `U(−a, a)` with `a = √(6 / (fan_in + fan_out))`.
    GlorotUniform,
}

impl<T: Scalar> Bimonn<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network has no layers".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_channels() != pair[1].in_channels() {
                return Err(Error::InvalidArgument(format!(
                    "layer with {} outputs feeds a layer with {} inputs",
                    pair[0].out_channels(),
                    pair[1].in_channels()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// `depth` single-neuron layers with `(2n+1)²` windows, zero-initialized.
    pub fn chain(depth: usize, n: usize, p: T) -> Result<Self> {
        Self::new(
            (0..depth)
                .map(|_| Layer::Bise(Bise::new(BiseParams::new(KernelWindow::zeros(n), T::zero(), p))))
                .collect(),
        )
    }

    /// Single-neuron chain with the given parameters.
    pub fn from_bises(params: Vec<BiseParams<T>>) -> Result<Self> {
        Self::new(params.into_iter().map(|p| Layer::Bise(Bise::new(p))).collect())
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.layers[self.layers.len() - 1].out_channels()
    }

    /// Mask of `Σ floor(side / 2)` over layers.
    pub fn loss_mask(&self) -> LossMask {
        LossMask::for_kernels(self.layers.iter().map(Layer::kernel_side))
    }

    pub fn forward(&self, x: &[Grid<T>]) -> Result<(Vec<Grid<T>>, NetCache<T>)> {
        let mut current = x.to_vec();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, cache) = layer.forward(&current)?;
            caches.push(cache);
            current = out;
        }
        Ok((current, NetCache { layers: caches }))
    }

    /// Flat parameter gradient (same order as [`Bimonn::parameters`]).
    pub fn backward(&self, grad_out: &[Grid<T>], cache: &NetCache<T>) -> Result<Vec<T>> {
        if cache.layers.len() != self.layers.len() {
            return Err(Error::StaleCache);
        }
        let mut per_layer: Vec<Vec<T>> = vec![Vec::new(); self.layers.len()];
        let mut grad = grad_out.to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let want_input = idx > 0;
            let gi = layer.backward(&grad, &cache.layers[idx], want_input, &mut per_layer[idx])?;
            if let Some(gi) = gi {
                grad = gi;
            }
        }
        Ok(per_layer.concat())
    }

    /// Final layer's output thresholded at ½, decided on the sign of its
    /// pre-activation.
    pub fn predict_binary(&self, x: &[Grid<T>]) -> Result<Vec<BinaryImage>> {
        let (_, cache) = self.forward(x)?;
        let last = self.layers.len() - 1;
        Ok(self.layers[last]
            .pre_activation(&cache.layers[last])?
            .iter()
            .map(|z| z.threshold(T::zero()))
            .collect())
    }

    pub fn parameters(&self) -> Vec<T> {
        let mut out = Vec::new();
        let mut roles = Vec::new();
        for l in &self.layers {
            l.parameters(&mut out, &mut roles);
        }
        out
    }

    pub fn roles(&self) -> Vec<ParamRole> {
        let mut out = Vec::new();
        let mut roles = Vec::new();
        for l in &self.layers {
            l.parameters(&mut out, &mut roles);
        }
        roles
    }

    pub fn set_parameters(&mut self, values: &[T]) -> Result<()> {
        let expected = self.parameters().len();
        if values.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "expected {expected} parameters, got {}",
                values.len()
            )));
        }
        let mut used = 0;
        for l in &mut self.layers {
            used += l.set_parameters(&values[used..]);
        }
        Ok(())
    }

    /// Random weights, `b_raw = bias_raw` everywhere, all scales set to `p`.
    pub fn init<R: Rng>(&mut self, scheme: InitScheme, bias_raw: T, p: T, rng: &mut R) {
        let bound = |fan_in: usize, fan_out: usize| match scheme {
            InitScheme::KaimingUniform => (6.0 / fan_in as f64).sqrt(),
            InitScheme::GlorotUniform => (6.0 / (fan_in + fan_out) as f64).sqrt(),
        };
        let roles = self.roles();
        let mut values = self.parameters();
        // fan-in per parameter block: the window size for weights, the
        // channel count for LUI coefficients
        let mut i = 0;
        while i < values.len() {
            let role = roles[i];
            let run = roles[i..].iter().take_while(|&&r| r == role).count();
            match role {
                ParamRole::Weight | ParamRole::LuiBeta => {
                    let a = bound(run, run);
                    for v in &mut values[i..i + run] {
                        *v = T::lit(rng.gen_range(-a..a));
                    }
                }
                ParamRole::Bias | ParamRole::LuiBias => values[i..i + run].fill(bias_raw),
                ParamRole::Scale => values[i..i + run].fill(p),
            }
            i += run;
        }
        self.set_parameters(&values).expect("same layout");
    }

    /// Activation verdicts, layer by layer. Layer `l` is checked against the
    /// output bounds certified by layer `l − 1`; when a channel of the
    /// previous layer is not activated, that channel is assumed binary.
    pub fn find_activation(&self) -> Vec<LayerStatus<T>> {
        let mut bounds = vec![AlmostBinaryBounds::binary(); self.in_channels()];
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let status = layer.find_activation(&bounds);
            bounds = match &status {
                LayerStatus::Bise { status, .. } => {
                    vec![status.output_bounds().unwrap_or_else(AlmostBinaryBounds::binary)]
                }
                LayerStatus::Bisel { status, .. } => status
                    .luis
                    .iter()
                    .map(|l| l.output_bounds().unwrap_or_else(AlmostBinaryBounds::binary))
                    .collect(),
            };
            out.push(status);
        }
        out
    }

    /// True when every neuron is activated under propagated bounds (so the
    /// fallback to binary bounds never applied).
    pub fn fully_activated(&self) -> bool {
        self.find_activation().iter().all(LayerStatus::is_activated)
    }

    pub fn neuron_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Bise(_) => 1,
                Layer::Bisel(b) => b.bises().len() + b.luis().len(),
            })
            .sum()
    }

    pub fn bisel_params(&self) -> Vec<Option<BiselParams<T>>> {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Bisel(b) => Some(b.params()),
                Layer::Bise(_) => None,
            })
            .collect()
    }
}
