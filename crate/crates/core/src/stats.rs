//! Multi-scale pixel and gradient statistics.
//!
//! A "pixel on length scale N" is the mean of an N-by-N patch of the
//! contrast field. Gradients at scale N are half central differences of
//! the four non-overlapping neighbor patches. Samples pooled over an
//! ensemble are standardized and binned into normalized histograms.

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::ContrastImage;

/// Location and side length of a square patch inside a host image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSpec {
    pub origin_x: usize,
    pub origin_y: usize,
    pub size: usize,
}

/// A pooled sample of coarse-grained pixel values at one scale.
#[derive(Debug, Clone)]
pub struct ScaleSample {
    pub scale: usize,
    pub values: Vec<f64>,
    pub standardized: bool,
    /// Standard deviation (population convention) divided out.
    pub sigma: f64,
}

/// Directional half central differences and their magnitudes at one scale.
#[derive(Debug, Clone, Default)]
pub struct GradientSample {
    pub scale: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
    pub magnitudes: Vec<f64>,
}

/// Binned empirical distribution normalized over the in-range samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// Monotonically increasing edges; `bins = edges.len() - 1`.
    pub bin_edges: Vec<f64>,
    /// One mass per bin; sums to one when any sample fell in range.
    pub masses: Vec<f64>,
    /// Samples that landed inside `[lo, hi)`.
    pub in_range: usize,
    /// Samples below the first edge.
    pub below: usize,
    /// Samples at or above the last edge.
    pub above: usize,
}

impl Histogram {
    /// True when no sample fell inside the binning range.
    pub fn is_empty(&self) -> bool {
        self.in_range == 0
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        self.bin_edges
            .windows(2)
            .map(|e| 0.5 * (e[0] + e[1]))
            .collect()
    }

    /// Writes `bin_center,mass` rows.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut out = String::from("bin_center,mass\n");
        for (center, mass) in self.bin_centers().iter().zip(&self.masses) {
            out.push_str(&format!("{center},{mass}\n"));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Reference densities drawn alongside the empirical histograms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferencePdf {
    StandardGaussian,
    Rayleigh,
}

/// Draws `count` patch origins uniformly over all admissible interior
/// positions. `margin` keeps room for neighbor patches on every side.
pub fn sample_patches(
    width: usize,
    height: usize,
    size: usize,
    count: usize,
    margin: usize,
    rng: &mut impl Rng,
) -> Result<Vec<PatchSpec>> {
    if size == 0 {
        return Err(Error::Geometry("patch size must be at least 1".into()));
    }
    let fits = |dim: usize| dim.checked_sub(2 * margin).is_some_and(|room| room >= size);
    if !fits(width) || !fits(height) {
        return Err(Error::Geometry(format!(
            "no admissible position for a {size}x{size} patch with margin {margin} in a {width}x{height} image"
        )));
    }
    let max_x = width - margin - size;
    let max_y = height - margin - size;
    let mut patches = Vec::with_capacity(count);
    for _ in 0..count {
        let origin_x = rng.random_range(margin..=max_x);
        let origin_y = rng.random_range(margin..=max_y);
        patches.push(PatchSpec {
            origin_x,
            origin_y,
            size,
        });
    }
    Ok(patches)
}

fn check_patch(img: &ContrastImage, patch: &PatchSpec) -> Result<()> {
    if patch.size == 0
        || patch.origin_x + patch.size > img.width
        || patch.origin_y + patch.size > img.height
    {
        return Err(Error::Geometry(format!(
            "patch {}x{} at ({}, {}) outside {}x{} image",
            patch.size, patch.size, patch.origin_x, patch.origin_y, img.width, img.height
        )));
    }
    Ok(())
}

/// Mean of the contrast field over a patch: the pixel value on length
/// scale `patch.size`.
pub fn coarse_pixel(img: &ContrastImage, patch: &PatchSpec) -> Result<f64> {
    check_patch(img, patch)?;
    let mut sum = 0.0;
    for dy in 0..patch.size {
        let row = (patch.origin_y + dy) * img.width + patch.origin_x;
        sum += img.data[row..row + patch.size].iter().sum::<f64>();
    }
    Ok(sum / (patch.size * patch.size) as f64)
}

/// Shifts to zero mean and divides by the population standard deviation.
pub fn standardize(scale: usize, values: &[f64]) -> Result<ScaleSample> {
    if values.len() < 2 {
        return Err(Error::Degenerate(
            "need at least 2 values to standardize".into(),
        ));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var == 0.0 {
        return Err(Error::Degenerate(
            "sample has zero variance, cannot standardize".into(),
        ));
    }
    let sigma = var.sqrt();
    let out = values.iter().map(|v| (v - mean) / sigma).collect();
    Ok(ScaleSample {
        scale,
        values: out,
        standardized: true,
        sigma,
    })
}

/// Half central differences of the four neighbor patches of `center`,
/// returned as `(dx, dy, magnitude)`. Neighbors are non-overlapping
/// patches of the same size whose origins are offset by exactly the patch
/// size in each cardinal direction.
pub fn gradient_at(img: &ContrastImage, center: &PatchSpec) -> Result<(f64, f64, f64)> {
    let n = center.size;
    let shifted = |dx: isize, dy: isize| -> Result<PatchSpec> {
        let x = center.origin_x as isize + dx * n as isize;
        let y = center.origin_y as isize + dy * n as isize;
        if x < 0 || y < 0 {
            return Err(Error::Geometry(format!(
                "neighbor patch of ({}, {}) size {} outside image",
                center.origin_x, center.origin_y, n
            )));
        }
        Ok(PatchSpec {
            origin_x: x as usize,
            origin_y: y as usize,
            size: n,
        })
    };
    let right = coarse_pixel(img, &shifted(1, 0)?)?;
    let left = coarse_pixel(img, &shifted(-1, 0)?)?;
    let bottom = coarse_pixel(img, &shifted(0, 1)?)?;
    let top = coarse_pixel(img, &shifted(0, -1)?)?;
    let dx = (right - left) / 2.0;
    let dy = (bottom - top) / 2.0;
    Ok((dx, dy, (dx * dx + dy * dy).sqrt()))
}

/// Bins values into `bins` uniform half-open bins over `[lo, hi)` and
/// normalizes the masses by the in-range count.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::Input("histogram needs at least one bin".into()));
    }
    if !(lo < hi) {
        return Err(Error::Input(format!(
            "histogram range [{lo}, {hi}) is empty"
        )));
    }
    let width = (hi - lo) / bins as f64;
    let bin_edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0usize; bins];
    let mut below = 0usize;
    let mut above = 0usize;
    for &v in values {
        if v < lo {
            below += 1;
        } else if v >= hi {
            above += 1;
        } else {
            let idx = (((v - lo) / width) as usize).min(bins - 1);
            counts[idx] += 1;
        }
    }
    let in_range = values.len() - below - above;
    let masses = if in_range == 0 {
        vec![0.0; bins]
    } else {
        counts
            .iter()
            .map(|&c| c as f64 / in_range as f64)
            .collect()
    };
    Ok(Histogram {
        bin_edges,
        masses,
        in_range,
        below,
        above,
    })
}

/// Density of the comparison curve at `x`: the standard normal or the
/// unit Rayleigh `x exp(-x^2/2)`.
pub fn reference_pdf(kind: ReferencePdf, x: f64) -> Result<f64> {
    match kind {
        ReferencePdf::StandardGaussian => {
            Ok((-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt())
        }
        ReferencePdf::Rayleigh => {
            if x < 0.0 {
                Err(Error::Domain(format!(
                    "Rayleigh density undefined for negative x = {x}"
                )))
            } else {
                Ok(x * (-0.5 * x * x).exp())
            }
        }
    }
}
