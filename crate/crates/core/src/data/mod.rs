//! Image sources and input/target pairs built with the morphology oracle.

pub mod diskorect;
pub mod mnist;

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::BinaryImage;
use crate::morpho::{complement, MorphOp, StructuringElement};

pub use diskorect::DiskorectConfig;

/// Where input images come from.
#[derive(Clone, Debug)]
pub enum ImageSource {
    /// Infinite generated stream.
    Diskorect(DiskorectConfig),
    /// Finite list, indexed modulo its length.
    Images(Arc<Vec<BinaryImage>>),
    Inverted(Box<ImageSource>),
}

impl ImageSource {
    pub fn images(images: Vec<BinaryImage>) -> Self {
        ImageSource::Images(Arc::new(images))
    }

    pub fn image(&self, index: u64) -> BinaryImage {
        match self {
            ImageSource::Diskorect(cfg) => cfg.sample(index),
            ImageSource::Images(v) => v[(index % v.len() as u64) as usize].clone(),
            ImageSource::Inverted(inner) => complement(&inner.image(index)),
        }
    }

    /// `None` for infinite sources.
    pub fn len(&self) -> Option<usize> {
        match self {
            ImageSource::Diskorect(_) => None,
            ImageSource::Images(v) => Some(v.len()),
            ImageSource::Inverted(inner) => inner.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == Some(0)
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            ImageSource::Diskorect(cfg) => (cfg.image_size, cfg.image_size),
            ImageSource::Images(v) => v.first().map_or((0, 0), BinaryImage::shape),
            ImageSource::Inverted(inner) => inner.shape(),
        }
    }
}

/// Pixelwise complement of every image.
pub fn invert_dataset(source: ImageSource) -> ImageSource {
    match source {
        ImageSource::Inverted(inner) => *inner,
        other => ImageSource::Inverted(Box::new(other)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePair {
    pub input: BinaryImage,
    pub target: BinaryImage,
    pub op: MorphOp,
    pub se: StructuringElement,
}

impl SamplePair {
    pub fn verify(&self) -> Result<()> {
        if self.op.apply(&self.input, &self.se) != self.target {
            return Err(Error::InvalidArgument(format!(
                "target is not the {} of its input",
                self.op.name()
            )));
        }
        Ok(())
    }
}

/// A source paired with the operator producing its targets.
#[derive(Clone, Debug)]
pub struct Task {
    pub source: ImageSource,
    pub op: MorphOp,
    pub se: StructuringElement,
}

pub fn make_task(source: ImageSource, op: MorphOp, se: StructuringElement) -> Result<Task> {
    let (h, w) = source.shape();
    if source.is_empty() {
        return Err(Error::Config("task has no images".into()));
    }
    if se.side() > h || se.side() > w {
        return Err(Error::Config(format!(
            "structuring element of side {} does not fit {h}x{w} images",
            se.side()
        )));
    }
    Ok(Task { source, op, se })
}

impl Task {
    pub fn pair(&self, index: u64) -> SamplePair {
        let input = self.source.image(index);
        let target = self.op.apply(&input, &self.se);
        SamplePair {
            input,
            target,
            op: self.op,
            se: self.se.clone(),
        }
    }

    pub fn pairs(&self, start: u64, count: usize) -> Vec<SamplePair> {
        (start..start + count as u64).map(|i| self.pair(i)).collect()
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    count: usize,
    op: &'a str,
    se: &'a StructuringElement,
    generator: Option<&'a DiskorectConfig>,
    assumptions: &'a [&'a str],
    files: Vec<(String, String)>,
}

/// Writes `input_XXXXX.png` / `target_XXXXX.png` and a `manifest.json`.
pub fn export_task(task: &Task, start: u64, count: usize, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(count);
    for (k, pair) in task.pairs(start, count).iter().enumerate() {
        let input = format!("input_{k:05}.png");
        let target = format!("target_{k:05}.png");
        save_binary_png(&pair.input, &dir.join(&input))?;
        save_binary_png(&pair.target, &dir.join(&target))?;
        files.push((input, target));
    }
    let generator = match &task.source {
        ImageSource::Diskorect(c) => Some(c),
        ImageSource::Inverted(inner) => match inner.as_ref() {
            ImageSource::Diskorect(c) => Some(c),
            _ => None,
        },
        ImageSource::Images(_) => None,
    };
    let assumptions: &[&str] = if generator.is_some() {
        &["n_shapes, rect_side, disk_radius and noise_p are assumed values"]
    } else {
        &[]
    };
    let manifest = Manifest {
        count,
        op: task.op.name(),
        se: &task.se,
        generator,
        assumptions,
        files,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn save_binary_png(img: &BinaryImage, path: &Path) -> Result<()> {
    let buf = image::GrayImage::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        image::Luma([if img.get(y as usize, x as usize) { 255 } else { 0 }])
    });
    buf.save(path)?;
    Ok(())
}
