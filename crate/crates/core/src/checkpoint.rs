//! Versioned JSON checkpoints of raw network parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bise::{Bise, BiseParams};
use crate::error::{Error, Result};
use crate::grid::KernelWindow;
use crate::lui::{Bisel, BiselParams, LuiParams};
use crate::net::{Bimonn, Layer};

pub const FORMAT: &str = "bimonn-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiseRecord {
    pub n: usize,
    pub w_raw: Vec<f64>,
    pub b_raw: f64,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LuiRecord {
    pub beta_raw: Vec<f64>,
    pub b_raw: f64,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerRecord {
    Bise(BiseRecord),
    Bisel {
        in_channels: usize,
        out_channels: usize,
        bises: Vec<BiseRecord>,
        luis: Vec<LuiRecord>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub layers: Vec<LayerRecord>,
    /// Free-form description of how the network was produced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

fn bise_record(p: &BiseParams<f64>) -> BiseRecord {
    BiseRecord {
        n: p.w_raw.half_width(),
        w_raw: p.w_raw.values().to_vec(),
        b_raw: p.b_raw,
        p: p.p,
    }
}

fn bise_params(r: &BiseRecord) -> Result<BiseParams<f64>> {
    Ok(BiseParams::new(KernelWindow::new(r.n, r.w_raw.clone())?, r.b_raw, r.p))
}

impl Checkpoint {
    pub fn from_network(net: &Bimonn<f64>) -> Self {
        let layers = net
            .layers()
            .iter()
            .map(|l| match l {
                Layer::Bise(b) => LayerRecord::Bise(bise_record(b.params())),
                Layer::Bisel(b) => LayerRecord::Bisel {
                    in_channels: b.in_channels(),
                    out_channels: b.out_channels(),
                    bises: b.bises().iter().map(|x| bise_record(x.params())).collect(),
                    luis: b
                        .luis()
                        .iter()
                        .map(|u| LuiRecord {
                            beta_raw: u.beta_raw.clone(),
                            b_raw: u.b_raw,
                            p: u.p,
                        })
                        .collect(),
                },
            })
            .collect();
        Self {
            format: FORMAT.into(),
            version: VERSION,
            layers,
            meta: None,
        }
    }

    pub fn to_network(&self) -> Result<Bimonn<f64>> {
        if self.format != FORMAT {
            return Err(Error::Config(format!("not a checkpoint: format {:?}", self.format)));
        }
        if self.version != VERSION {
            return Err(Error::Config(format!("unsupported checkpoint version {}", self.version)));
        }
        let layers = self
            .layers
            .iter()
            .map(|r| {
                Ok(match r {
                    LayerRecord::Bise(b) => Layer::Bise(Bise::new(bise_params(b)?)),
                    LayerRecord::Bisel {
                        in_channels,
                        out_channels,
                        bises,
                        luis,
                    } => Layer::Bisel(Bisel::new(BiselParams {
                        in_channels: *in_channels,
                        out_channels: *out_channels,
                        bises: bises.iter().map(bise_params).collect::<Result<_>>()?,
                        luis: luis.iter().map(|u| LuiParams::new(u.beta_raw.clone(), u.b_raw, u.p)).collect(),
                    })?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Bimonn::new(layers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}
