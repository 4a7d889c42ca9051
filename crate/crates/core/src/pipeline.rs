//! Binarization: an activated network rewritten as a sequence of exact
//! morphological operations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::BinaryImage;
use crate::lui::Aggregate;
use crate::morpho::{MorphOp, StructuringElement};
use crate::net::{Bimonn, LayerStatus};
use crate::scalar::Scalar;

/// One input channel's operation inside a BiSEL output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelOp {
    pub channel: usize,
    pub op: MorphOp,
    pub se: StructuringElement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregatedOutput {
    pub aggregate: Aggregate,
    pub inputs: Vec<ChannelOp>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PipelineStep {
    Morph { op: MorphOp, se: StructuringElement },
    Bisel { outputs: Vec<AggregatedOutput> },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub steps: Vec<PipelineStep>,
}

/// A neuron that blocked binarization, with its activation margins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Blocker {
    pub layer: usize,
    /// BiSE index inside the layer, or the LUI index when `lui` is set.
    pub neuron: usize,
    pub lui: bool,
    pub dilation_margin: Option<f64>,
    pub erosion_margin: Option<f64>,
}

impl Pipeline {
    /// Runs the pipeline with the set-definition operators.
    pub fn apply(&self, inputs: &[BinaryImage]) -> Result<Vec<BinaryImage>> {
        let mut current = inputs.to_vec();
        for step in &self.steps {
            current = match step {
                PipelineStep::Morph { op, se } => {
                    if current.len() != 1 {
                        return Err(Error::InvalidArgument(format!(
                            "single-channel step applied to {} channels",
                            current.len()
                        )));
                    }
                    vec![op.apply(&current[0], se)]
                }
                PipelineStep::Bisel { outputs } => outputs
                    .iter()
                    .map(|out| {
                        let parts: Vec<BinaryImage> = out
                            .inputs
                            .iter()
                            .map(|c| {
                                current
                                    .get(c.channel)
                                    .map(|x| c.op.apply(x, &c.se))
                                    .ok_or_else(|| Error::InvalidArgument(format!("no input channel {}", c.channel)))
                            })
                            .collect::<Result<_>>()?;
                        let (h, w) = current[0].shape();
                        Ok(combine(out.aggregate, &parts, h, w))
                    })
                    .collect::<Result<_>>()?,
            };
        }
        Ok(current)
    }

    /// The single-channel operations, in order, if every step is one.
    pub fn morph_ops(&self) -> Option<Vec<(MorphOp, &StructuringElement)>> {
        self.steps
            .iter()
            .map(|s| match s {
                PipelineStep::Morph { op, se } => Some((*op, se)),
                PipelineStep::Bisel { .. } => None,
            })
            .collect()
    }
}

fn combine(aggregate: Aggregate, parts: &[BinaryImage], h: usize, w: usize) -> BinaryImage {
    BinaryImage::from_fn(h, w, |i, j| match aggregate {
        Aggregate::Union => parts.iter().any(|p| p.get(i, j)),
        Aggregate::Intersection => parts.iter().all(|p| p.get(i, j)),
    })
}

/// Exports the pipeline of a fully activated network, or lists every
/// neuron that is not activated.
pub fn binarize_network<T: Scalar>(net: &Bimonn<T>) -> std::result::Result<Pipeline, Vec<Blocker>> {
    let statuses = net.find_activation();
    let mut steps = Vec::new();
    let mut blockers = Vec::new();
    let margins = |s: &crate::bise::ActivationStatus<T>| match s {
        crate::bise::ActivationStatus::NotActivated {
            dilation_margin,
            erosion_margin,
        } => (Some(dilation_margin.to_f64_lossy()), Some(erosion_margin.to_f64_lossy())),
        _ => (None, None),
    };
    for (layer, status) in statuses.iter().enumerate() {
        match status {
            LayerStatus::Bise { status, .. } => match status.operation() {
                Some((op, se)) => steps.push(PipelineStep::Morph { op, se: se.clone() }),
                None => {
                    let (d, e) = margins(status);
                    blockers.push(Blocker {
                        layer,
                        neuron: 0,
                        lui: false,
                        dilation_margin: d,
                        erosion_margin: e,
                    });
                }
            },
            LayerStatus::Bisel { status, .. } => {
                let n_in = net.layers()[layer].in_channels();
                let mut outputs = Vec::new();
                for (k, lui) in status.luis.iter().enumerate() {
                    let Some((aggregate, channels)) = lui.aggregate() else {
                        blockers.push(Blocker {
                            layer,
                            neuron: k,
                            lui: true,
                            dilation_margin: None,
                            erosion_margin: None,
                        });
                        continue;
                    };
                    let mut inputs = Vec::new();
                    for &n in channels {
                        let bise = &status.bises[k * n_in + n];
                        match bise.operation() {
                            Some((op, se)) => inputs.push(ChannelOp {
                                channel: n,
                                op,
                                se: se.clone(),
                            }),
                            None => {
                                let (d, e) = margins(bise);
                                blockers.push(Blocker {
                                    layer,
                                    neuron: k * n_in + n,
                                    lui: false,
                                    dilation_margin: d,
                                    erosion_margin: e,
                                });
                            }
                        }
                    }
                    outputs.push(AggregatedOutput { aggregate, inputs });
                }
                steps.push(PipelineStep::Bisel { outputs });
            }
        }
    }
    if blockers.is_empty() {
        Ok(Pipeline { steps })
    } else {
        Err(blockers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bise::{AlmostBinaryBounds, BiseParams};
    use crate::lui::{Bisel, BiselParams, LuiParams};
    use crate::morpho::{dilate, erode};
    use crate::net::Layer;

    #[test]
    fn ideal_dilation_exports_one_step() {
        let se = StructuringElement::from_ascii("..#\n.#.\n...").unwrap();
        let p = BiseParams::ideal(MorphOp::Dilation, &se, 1, &AlmostBinaryBounds::binary(), 6.0, 4.0).unwrap();
        let net = Bimonn::from_bises(vec![p]).unwrap();
        let pipe = binarize_network(&net).unwrap();
        assert_eq!(pipe.morph_ops().unwrap(), vec![(MorphOp::Dilation, &se)]);
        let x = BinaryImage::from_fn(10, 10, |i, j| (i + 2 * j) % 5 == 0);
        assert_eq!(pipe.apply(std::slice::from_ref(&x)).unwrap()[0], dilate(&x, &se));
    }

    #[test]
    fn zero_network_is_refused_with_margins() {
        let net = Bimonn::<f64>::chain(2, 1, 4.0).unwrap();
        let blockers = binarize_network(&net).unwrap_err();
        assert_eq!(blockers.len(), 2);
        assert!(blockers.iter().all(|b| b.dilation_margin.is_some()));
    }

    #[test]
    fn bisel_pipeline_matches_hand_composition() {
        // two inputs, one output: dilate channel 0, erode channel 1, intersect
        let b = AlmostBinaryBounds::binary();
        let s0 = StructuringElement::from_ascii(".#.\n###\n.#.").unwrap();
        let s1 = StructuringElement::from_ascii("...\n##.\n...").unwrap();
        let d = BiseParams::ideal(MorphOp::Dilation, &s0, 1, &b, 6.0, 4.0).unwrap();
        let e = BiseParams::ideal(MorphOp::Erosion, &s1, 1, &b, 6.0, 4.0).unwrap();
        let lui = LuiParams::from_effective(&[1.0, 1.0], 1.5, 4.0);
        let layer = Bisel::new(BiselParams {
            in_channels: 2,
            out_channels: 1,
            bises: vec![d, e],
            luis: vec![lui],
        })
        .unwrap();
        let net = Bimonn::new(vec![Layer::Bisel(layer)]).unwrap();
        let pipe = binarize_network(&net).unwrap();
        let x0 = BinaryImage::from_fn(9, 9, |i, j| (i * j) % 5 == 1);
        let x1 = BinaryImage::from_fn(9, 9, |i, j| (i + j) % 3 != 0);
        let want = dilate(&x0, &s0);
        let want1 = erode(&x1, &s1);
        let want = BinaryImage::from_fn(9, 9, |i, j| want.get(i, j) && want1.get(i, j));
        assert_eq!(pipe.apply(&[x0.clone(), x1.clone()]).unwrap()[0], want);
        let net_out = net.predict_binary(&[x0.to_real(), x1.to_real()]).unwrap();
        assert_eq!(net_out[0], want);
    }
}
