//! Diskorect: random rotated rectangles and disks with pixel noise and
//! random complementation.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::BinaryImage;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiskorectConfig {
    pub image_size: usize,
    /// Inclusive range of shapes drawn per image.
    pub n_shapes: (usize, usize),
    /// Inclusive range of rectangle side lengths, in pixels.
    pub rect_side: (usize, usize),
    /// Inclusive range of disk radii, in pixels.
    pub disk_radius: (usize, usize),
    pub rotate: bool,
    pub noise_p: f64,
    pub invert_p: f64,
    pub seed: u64,
}

impl Default for DiskorectConfig {
    fn default() -> Self {
        Self {
            image_size: 50,
            n_shapes: (8, 20),
            rect_side: (3, 15),
            disk_radius: (2, 7),
            rotate: true,
            noise_p: 0.02,
            invert_p: 0.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Centre in pixel coordinates, sides along the rotated axes, angle in
    /// radians.
    Rect {
        center: (f64, f64),
        height: f64,
        width: f64,
        angle: f64,
    },
    Disk {
        center: (f64, f64),
        radius: f64,
    },
}

impl Shape {
    /// Axis-aligned rectangle covering rows `top..top+height` and columns
    /// `left..left+width`.
    pub fn aligned_rect(top: usize, left: usize, height: usize, width: usize) -> Self {
        Shape::Rect {
            center: (top as f64 + (height as f64 - 1.0) / 2.0, left as f64 + (width as f64 - 1.0) / 2.0),
            height: height as f64,
            width: width as f64,
            angle: 0.0,
        }
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        const SLACK: f64 = 1e-9;
        match *self {
            Shape::Rect {
                center,
                height,
                width,
                angle,
            } => {
                let (di, dj) = (i as f64 - center.0, j as f64 - center.1);
                let (s, c) = angle.sin_cos();
                let along = di * c + dj * s;
                let across = -di * s + dj * c;
                along.abs() <= (height - 1.0) / 2.0 + SLACK && across.abs() <= (width - 1.0) / 2.0 + SLACK
            }
            Shape::Disk { center, radius } => {
                let (di, dj) = (i as f64 - center.0, j as f64 - center.1);
                di * di + dj * dj <= radius * radius + SLACK
            }
        }
    }
}

impl Shape {
    /// Inclusive pixel box outside of which [`Shape::contains`] is false.
    fn bounding_box(&self, size: usize) -> (usize, usize, usize, usize) {
        let (center, reach) = match *self {
            Shape::Rect {
                center, height, width, ..
            } => (center, 0.5 * (height * height + width * width).sqrt()),
            Shape::Disk { center, radius } => (center, radius),
        };
        let lo = |c: f64| (c - reach - 1.0).floor().max(0.0) as usize;
        let hi = |c: f64| ((c + reach + 1.0).ceil().max(0.0) as usize).min(size - 1);
        (lo(center.0), hi(center.0), lo(center.1), hi(center.1))
    }
}

/// Union of the shapes on an empty `size × size` canvas.
pub fn render_shapes(size: usize, shapes: &[Shape]) -> BinaryImage {
    let mut img = BinaryImage::empty(size, size);
    if size == 0 {
        return img;
    }
    for shape in shapes {
        let (i0, i1, j0, j1) = shape.bounding_box(size);
        for i in i0..=i1 {
            for j in j0..=j1 {
                if shape.contains(i, j) {
                    img.set(i, j, true);
                }
            }
        }
    }
    img
}

/// Everything drawn for one sample, before noise is applied.
#[derive(Clone, Debug, PartialEq)]
pub struct DiskorectDraw {
    pub shapes: Vec<Shape>,
    pub inverted: bool,
}

impl DiskorectConfig {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (usize, usize)| lo >= 1 && lo <= hi && hi < self.image_size;
        let prob_ok = |p: f64| (0.0..=1.0).contains(&p);
        if self.image_size == 0 {
            return Err(Error::Config("diskorect image_size must be positive".into()));
        }
        if !(self.n_shapes.0 <= self.n_shapes.1 && self.n_shapes.1 > 0) {
            return Err(Error::Config(format!("bad n_shapes range {:?}", self.n_shapes)));
        }
        if !range_ok(self.rect_side) {
            return Err(Error::Config(format!("bad rect_side range {:?}", self.rect_side)));
        }
        if !range_ok(self.disk_radius) {
            return Err(Error::Config(format!("bad disk_radius range {:?}", self.disk_radius)));
        }
        if !prob_ok(self.noise_p) || !prob_ok(self.invert_p) {
            return Err(Error::Config("diskorect probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }

    fn draw_shapes(&self, rng: &mut ChaCha8Rng) -> Vec<Shape> {
        let size = self.image_size as f64;
        let k = rng.gen_range(self.n_shapes.0..=self.n_shapes.1);
        (0..k)
            .map(|_| {
                let center = (rng.gen_range(0.0..size), rng.gen_range(0.0..size));
                if rng.gen_bool(0.5) {
                    let height = rng.gen_range(self.rect_side.0..=self.rect_side.1) as f64;
                    let width = rng.gen_range(self.rect_side.0..=self.rect_side.1) as f64;
                    let angle = rng.gen_range(0.0..std::f64::consts::PI);
                    Shape::Rect {
                        center,
                        height,
                        width,
                        angle: if self.rotate { angle } else { 0.0 },
                    }
                } else {
                    let radius = rng.gen_range(self.disk_radius.0..=self.disk_radius.1) as f64;
                    Shape::Disk { center, radius }
                }
            })
            .collect()
    }

    /// Image number `index` of the stream, a pure function of
    /// `(seed, index)`.
    pub fn sample(&self, index: u64) -> BinaryImage {
        self.sample_with_draw(index).0
    }

    pub fn sample_with_draw(&self, index: u64) -> (BinaryImage, DiskorectDraw) {
        let mut rng = self.rng(index);
        let shapes = self.draw_shapes(&mut rng);
        let mut img = render_shapes(self.image_size, &shapes);
        for i in 0..self.image_size {
            for j in 0..self.image_size {
                // always consume the draw so streams stay aligned across noise_p
                let flip = rng.gen::<f64>() < self.noise_p;
                if flip {
                    img.set(i, j, !img.get(i, j));
                }
            }
        }
        let inverted = rng.gen::<f64>() < self.invert_p;
        if inverted {
            img = crate::morpho::complement(&img);
        }
        (img, DiskorectDraw { shapes, inverted })
    }

    pub fn generate(&self, start: u64, count: usize) -> Vec<BinaryImage> {
        (start..start + count as u64).map(|i| self.sample(i)).collect()
    }
}
