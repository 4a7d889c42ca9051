//! MNIST ingestion: IDX parsing (optionally gzipped), bicubic upscaling and
//! binarization.

use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use image::imageops::{self, FilterType};
use image::{ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::grid::BinaryImage;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const MNIST_ENV: &str = "BIMONN_MNIST";
pub const TARGET_SIZE: usize = 50;

/// Raw grey images as stored in an IDX file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn len(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols).max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image(&self, index: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[index * n..(index + 1) * n]
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::InvalidIdx("truncated header".into()))
}

/// Parses an IDX image file. Gzip input is detected by its magic bytes.
pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut raw = Vec::new();
        GzDecoder::new(bytes).read_to_end(&mut raw)?;
        return parse_idx_images(&raw);
    }
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::InvalidIdx(format!("bad magic number {magic:#010x}")));
    }
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let needed = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::InvalidIdx("header sizes overflow".into()))?;
    let body = &bytes[16..];
    if body.len() < needed {
        return Err(Error::InvalidIdx(format!(
            "truncated file: header promises {count} images of {rows}x{cols}, found {} bytes",
            body.len()
        )));
    }
    Ok(IdxImages {
        rows,
        cols,
        pixels: body[..needed].to_vec(),
    })
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IDX_IMAGES_MAGIC, images.len() as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn read_idx_images(path: &Path) -> Result<IdxImages> {
    parse_idx_images(&std::fs::read(path)?)
}

/// Scales to `[0, 1]`, resizes to `size × size` with a Catmull-Rom cubic
/// (Keys, a = −0.5), and keeps pixels strictly above ½.
pub fn binarize_digit(pixels: &[u8], rows: usize, cols: usize, size: usize) -> BinaryImage {
    let grey: ImageBuffer<Luma<f32>, Vec<f32>> =
        ImageBuffer::from_fn(cols as u32, rows as u32, |x, y| Luma([pixels[y as usize * cols + x as usize] as f32 / 255.0]));
    let resized = if rows == size && cols == size {
        grey
    } else {
        imageops::resize(&grey, size as u32, size as u32, FilterType::CatmullRom)
    };
    BinaryImage::from_fn(size, size, |i, j| resized.get_pixel(j as u32, i as u32).0[0] > 0.5)
}

pub fn binarize_all(images: &IdxImages, size: usize) -> Vec<BinaryImage> {
    (0..images.len())
        .map(|k| binarize_digit(images.image(k), images.rows, images.cols, size))
        .collect()
}

/// Training and held-out binary digits.
#[derive(Clone, Debug)]
pub struct MnistSplit {
    pub train: Vec<BinaryImage>,
    pub valid: Vec<BinaryImage>,
    pub test: Vec<BinaryImage>,
}

const TRAIN_NAMES: [&str; 2] = ["train-images-idx3-ubyte", "train-images.idx3-ubyte"];
const TEST_NAMES: [&str; 2] = ["t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"];

fn find_file(dir: &Path, names: &[&str]) -> Option<PathBuf> {
    names
        .iter()
        .flat_map(|n| [dir.join(n), dir.join(format!("{n}.gz"))])
        .find(|p| p.is_file())
}

/// Loads MNIST from `path`.
///
/// A directory is expected to hold the standard train and t10k image files;
/// the last 5000 training images become the validation set. A single file
/// is split 80/10/10 in file order.
pub fn load_mnist(path: &Path, size: usize, limit: Option<usize>) -> Result<MnistSplit> {
    let cap = |mut v: IdxImages| {
        if let Some(l) = limit {
            let keep = l.min(v.len()) * v.rows * v.cols;
            v.pixels.truncate(keep);
        }
        v
    };
    if path.is_dir() {
        let train_path = find_file(path, &TRAIN_NAMES)
            .ok_or_else(|| Error::Config(format!("no MNIST training images under {}", path.display())))?;
        let test_path = find_file(path, &TEST_NAMES)
            .ok_or_else(|| Error::Config(format!("no MNIST test images under {}", path.display())))?;
        let mut train = binarize_all(&read_idx_images(&train_path)?, size);
        let valid_len = 5000.min(train.len() / 10);
        let valid = train.split_off(train.len() - valid_len);
        let test = binarize_all(&cap(read_idx_images(&test_path)?), size);
        if let Some(l) = limit {
            train.truncate(l);
        }
        return Ok(MnistSplit { train, valid, test });
    }
    let mut all = binarize_all(&cap(read_idx_images(path)?), size);
    if all.len() < 10 {
        return Err(Error::Config(format!("{} holds too few images to split", path.display())));
    }
    let tenth = all.len() / 10;
    let test = all.split_off(all.len() - tenth);
    let valid = all.split_off(all.len() - tenth);
    Ok(MnistSplit { train: all, valid, test })
}

/// Path from the `BIMONN_MNIST` environment variable, if set.
pub fn mnist_path_from_env() -> Option<PathBuf> {
    std::env::var_os(MNIST_ENV).map(PathBuf::from)
}
