//! PNG panels and CSV dumps of learned weights.

use std::path::Path;

use image::{GrayImage, Luma};

use crate::bise::{ActivationStatus, Bise};
use crate::error::Result;
use crate::experiments::ExperimentReport;
use crate::grid::KernelWindow;
use crate::morpho::StructuringElement;
use crate::net::{Bimonn, Layer, LayerStatus};

const SCALE: u32 = 16;
const GAP: u32 = 4;

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn weights_image(w: &KernelWindow<f64>) -> GrayImage {
    let side = w.side() as u32;
    GrayImage::from_fn(side, side, |x, y| Luma([to_byte(w.values()[(y * side + x) as usize])]))
}

pub fn se_image(se: &StructuringElement) -> GrayImage {
    let side = se.side() as u32;
    GrayImage::from_fn(side, side, |x, y| Luma([if se.mask()[(y * side + x) as usize] { 255 } else { 0 }]))
}

/// Panels upscaled by nearest neighbour and laid out left to right.
pub fn side_by_side(panels: &[&GrayImage]) -> GrayImage {
    let h = panels.iter().map(|p| p.height()).max().unwrap_or(0) * SCALE;
    let w: u32 = panels.iter().map(|p| p.width() * SCALE).sum::<u32>() + GAP * panels.len().saturating_sub(1) as u32;
    let mut out = GrayImage::from_pixel(w.max(1), h.max(1), Luma([128]));
    let mut x0 = 0;
    for p in panels {
        for y in 0..p.height() * SCALE {
            for x in 0..p.width() * SCALE {
                out.put_pixel(x0 + x, y, *p.get_pixel(x / SCALE, y / SCALE));
            }
        }
        x0 += p.width() * SCALE + GAP;
    }
    out
}

/// Effective weights in the set convention of the status: a dilation
/// correlates with the reflected element, so its window is flipped back.
fn display_weights(neuron: &Bise<f64>, status: &ActivationStatus<f64>) -> KernelWindow<f64> {
    let w = neuron.params().effective_weights();
    match status {
        ActivationStatus::Dilation { .. } => w.reflect(),
        _ => w,
    }
}

/// Writes, per BiSE neuron, `neuron_L_K_{weights,extracted,target,panel}.png`
/// and a `weights.csv` with every effective weight.
pub fn render_report(report: &ExperimentReport, net: &Bimonn<f64>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut csv = csv::Writer::from_path(dir.join("weights.csv"))?;
    csv.write_record(["layer", "neuron", "row", "col", "weight", "status"])?;
    for (l, (layer, status)) in net.layers().iter().zip(&report.statuses).enumerate() {
        let neurons: Vec<(&Bise<f64>, &ActivationStatus<f64>)> = match (layer, status) {
            (Layer::Bise(b), LayerStatus::Bise { status, .. }) => vec![(b, status)],
            (Layer::Bisel(b), LayerStatus::Bisel { status, .. }) => b.bises().iter().zip(&status.bises).collect(),
            _ => Vec::new(),
        };
        for (k, (neuron, st)) in neurons.into_iter().enumerate() {
            let w = display_weights(neuron, st);
            let stem = format!("neuron_{l}_{k}");
            let wi = weights_image(&w);
            wi.save(dir.join(format!("{stem}_weights.png")))?;
            let mut panels = vec![wi];
            if let Some((_, se)) = st.operation() {
                let ei = se_image(se);
                ei.save(dir.join(format!("{stem}_extracted.png")))?;
                panels.push(ei);
            }
            if let Some(target) = report.targets.get(l).filter(|_| matches!(layer, Layer::Bise(_))) {
                let ti = se_image(&target.se);
                ti.save(dir.join(format!("{stem}_target.png")))?;
                panels.push(ti);
            }
            side_by_side(&panels.iter().collect::<Vec<_>>()).save(dir.join(format!("{stem}_panel.png")))?;
            let half = w.half_width() as isize;
            for ((a, b), v) in w.offsets() {
                csv.write_record([
                    l.to_string(),
                    k.to_string(),
                    (a + half).to_string(),
                    (b + half).to_string(),
                    format!("{v:.6}"),
                    st.label().to_string(),
                ])?;
            }
        }
    }
    csv.flush()?;
    Ok(())
}
