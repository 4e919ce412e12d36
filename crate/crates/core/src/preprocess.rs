//! Gradient-magnitude images and the max-pooled pyramid that feeds the
//! supplementary branch.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// A normalized single-channel frame with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pixels: Array2<f32>,
}

impl GrayImage {
    pub fn new(pixels: Array2<f32>) -> Result<Self> {
        let (h, w) = pixels.dim();
        if h == 0 || w == 0 {
            return Err(Error::InvalidInput("empty image".into()));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
        Ok(Self { pixels })
    }

    pub fn pixels(&self) -> &Array2<f32> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array2<f32> {
        self.pixels
    }

    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }
}

/// Gradient magnitude scaled so its maximum is 1 (or all zero).
#[derive(Clone, Debug, PartialEq)]
pub struct GradientImage {
    pixels: Array2<f32>,
}

impl GradientImage {
    pub fn pixels(&self) -> &Array2<f32> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array2<f32> {
        self.pixels
    }
}

/// Derivative kernel pair used for the magnitude.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GradientOperator {
    #[default]
    Sobel,
    Scharr,
    /// `(I[x+1] − I[x−1]) / 2` with no smoothing.
    CentralDifference,
}

impl GradientOperator {
    /// Horizontal-derivative kernel, row-major 3×3 and antisymmetric
    /// (`k[i][0] == -k[i][2]`). The vertical kernel is its transpose.
    fn kernel_x(self) -> [[f32; 3]; 3] {
        match self {
            GradientOperator::Sobel => [[-1., 0., 1.], [-2., 0., 2.], [-1., 0., 1.]],
            GradientOperator::Scharr => [[-3., 0., 3.], [-10., 0., 10.], [-3., 0., 3.]],
            GradientOperator::CentralDifference => {
                [[0., 0., 0.], [-0.5, 0., 0.5], [0., 0., 0.]]
            }
        }
    }
}

/// Raw `sqrt(gx² + gy²)` with replicate borders, before normalization.
pub fn raw_gradient_magnitude(
    img: ArrayView2<'_, f32>,
    op: GradientOperator,
) -> Result<Array2<f32>> {
    if img.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite pixel in gradient input".into()));
    }
    let (h, w) = img.dim();
    let kx = op.kernel_x();
    let at = |y: isize, x: isize| {
        let yy = y.clamp(0, h as isize - 1) as usize;
        let xx = x.clamp(0, w as isize - 1) as usize;
        img[[yy, xx]]
    };
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let (yi, xi) = (y as isize, x as isize);
            let (mut gx, mut gy) = (0.0f32, 0.0f32);
            // antisymmetric kernels: difference opposite taps first so a
            // flat neighbourhood gives exactly zero
            for (i, row) in kx.iter().enumerate() {
                let k = row[2];
                if k == 0.0 {
                    continue;
                }
                let d = i as isize - 1;
                gx += k * (at(yi + d, xi + 1) - at(yi + d, xi - 1));
                gy += k * (at(yi + 1, xi + d) - at(yi - 1, xi + d));
            }
            out[[y, x]] = (gx * gx + gy * gy).sqrt();
        }
    }
    Ok(out)
}

/// Sobel gradient magnitude normalized by its global maximum.
pub fn gradient_magnitude(img: &GrayImage) -> Result<GradientImage> {
    gradient_magnitude_with(img.pixels.view(), GradientOperator::Sobel)
}

pub fn gradient_magnitude_with(
    img: ArrayView2<'_, f32>,
    op: GradientOperator,
) -> Result<GradientImage> {
    let mut pixels = raw_gradient_magnitude(img, op)?;
    let max = pixels.iter().copied().fold(0.0f32, f32::max);
    if max > 0.0 {
        pixels.mapv_inplace(|v| v / max);
    }
    Ok(GradientImage { pixels })
}

/// Successive 2×2 max-pooled copies of a base image.
#[derive(Clone, Debug, PartialEq)]
pub struct Pyramid {
    levels: Vec<Array2<f32>>,
}

impl Pyramid {
    pub fn levels(&self) -> &[Array2<f32>] {
        &self.levels
    }

    pub fn level(&self, k: usize) -> &Array2<f32> {
        &self.levels[k]
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// Number of scales the encoder works at.
pub const PYRAMID_LEVELS: usize = 5;

/// Level 0 is `base`; level `k+1` is the 2×2/stride-2 max pool of level `k`.
pub fn build_pyramid(base: ArrayView2<'_, f32>, levels: usize) -> Result<Pyramid> {
    if levels == 0 {
        return Err(Error::Config("pyramid needs at least one level".into()));
    }
    let (h, w) = base.dim();
    let factor = 1usize << (levels - 1);
    if h == 0 || w == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::Shape(format!(
            "{h}x{w} is not divisible by {factor} for {levels} pyramid levels"
        )));
    }
    let mut out = Vec::with_capacity(levels);
    out.push(base.to_owned());
    for _ in 1..levels {
        let prev = out.last().unwrap();
        out.push(max_pool2(prev.view()));
    }
    Ok(Pyramid { levels: out })
}

fn max_pool2(a: ArrayView2<'_, f32>) -> Array2<f32> {
    let (h, w) = a.dim();
    Array2::from_shape_fn((h / 2, w / 2), |(y, x)| {
        let (y0, x0) = (2 * y, 2 * x);
        a[[y0, x0]]
            .max(a[[y0, x0 + 1]])
            .max(a[[y0 + 1, x0]])
            .max(a[[y0 + 1, x0 + 1]])
    })
}
