//! Ensemble-averaged 2D power spectra and their radial reduction.
//!
//! Patches are transformed with an in-house radix-2 FFT (verified against
//! a direct DFT), squared magnitudes are normalized by M² so Parseval
//! reads Σ|F|²/M² = ΣF², averaged pointwise over the ensemble, and
//! shifted so zero frequency sits at the grid center. Azimuthal rings
//! then give a 1D spectrum whose log-log slope is fit by least squares.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::ContrastImage;
use crate::stats::PatchSpec;

/// Fixed accumulation chunk so partial sums are grouped identically for
/// every thread count (bit-stable ensemble averages).
const ACC_CHUNK: usize = 32;

/// Row-major M×M real grid, the unit of spectral work.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareField {
    pub size: usize,
    pub data: Vec<f64>,
}

impl SquareField {
    pub fn new(size: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != size * size {
            return Err(Error::Geometry(format!(
                "square field of side {size} needs {} values, got {}",
                size * size,
                data.len()
            )));
        }
        Ok(Self { size, data })
    }

    /// Copies a patch of a contrast image into its own field.
    pub fn from_patch(img: &ContrastImage, patch: &PatchSpec) -> Result<Self> {
        if patch.size == 0
            || patch.origin_x + patch.size > img.width
            || patch.origin_y + patch.size > img.height
        {
            return Err(Error::Geometry(format!(
                "patch {}x{} at ({}, {}) outside {}x{} image",
                patch.size, patch.size, patch.origin_x, patch.origin_y, img.width, img.height
            )));
        }
        let mut data = Vec::with_capacity(patch.size * patch.size);
        for dy in 0..patch.size {
            let row = (patch.origin_y + dy) * img.width + patch.origin_x;
            data.extend_from_slice(&img.data[row..row + patch.size]);
        }
        Ok(Self {
            size: patch.size,
            data,
        })
    }
}

/// Ensemble-averaged power grid with zero frequency at the center.
#[derive(Debug, Clone)]
pub struct PowerSpectrum2D {
    pub size: usize,
    /// Row-major M×M nonnegative values, DC at (M/2, M/2).
    pub power: Vec<f64>,
    /// Patches averaged.
    pub count: usize,
}

/// Radial spectrum over integer ring indices 1..=M/2.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum1D {
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
    /// Grid cells contributing to each ring.
    pub counts: Vec<usize>,
}

/// Least-squares line through (log₁₀ f, log₁₀ S) over a fit range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub f_lo: f64,
    pub f_hi: f64,
}

/// Apodization applied to each patch before transforming.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    #[default]
    None,
    Hann,
}

/// Direct O(M⁴) evaluation of the unnormalized forward DFT,
/// e^(−2πi(ux+vy)/M). Oracle for `fft2`; any M ≥ 1.
pub fn dft2_naive(field: &SquareField) -> Vec<Complex64> {
    let m = field.size;
    let twiddles: Vec<Complex64> = (0..m)
        .map(|k| {
            let angle = -2.0 * PI * k as f64 / m as f64;
            Complex64::new(angle.cos(), angle.sin())
        })
        .collect();
    let mut out = vec![Complex64::new(0.0, 0.0); m * m];
    for v in 0..m {
        for u in 0..m {
            let mut acc = Complex64::new(0.0, 0.0);
            for y in 0..m {
                for x in 0..m {
                    acc += field.data[y * m + x] * twiddles[(u * x + v * y) % m];
                }
            }
            out[v * m + u] = acc;
        }
    }
    out
}

// Iterative radix-2 Cooley-Tukey on one line; twiddles[k] = e^(-2πik/n).
fn fft_line(buf: &mut [Complex64], twiddles: &[Complex64]) {
    let n = buf.len();
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let stride = n / len;
        let half = len / 2;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let w = twiddles[k * stride];
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

/// Radix-2 2D FFT, same convention and layout as `dft2_naive`.
/// M must be a power of two.
pub fn fft2(field: &SquareField) -> Result<Vec<Complex64>> {
    let m = field.size;
    if m == 0 || !m.is_power_of_two() {
        return Err(Error::UnsupportedSize(m));
    }
    let mut grid: Vec<Complex64> = field
        .data
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect();
    if m == 1 {
        return Ok(grid);
    }
    let twiddles: Vec<Complex64> = (0..m / 2)
        .map(|k| {
            let angle = -2.0 * PI * k as f64 / m as f64;
            Complex64::new(angle.cos(), angle.sin())
        })
        .collect();
    for row in grid.chunks_exact_mut(m) {
        fft_line(row, &twiddles);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); m];
    for x in 0..m {
        for y in 0..m {
            column[y] = grid[y * m + x];
        }
        fft_line(&mut column, &twiddles);
        for y in 0..m {
            grid[y * m + x] = column[y];
        }
    }
    Ok(grid)
}

/// Moves zero frequency from (0,0) to (M/2, M/2).
pub fn fftshift(size: usize, grid: &[f64]) -> Vec<f64> {
    let half = size / 2;
    let mut out = vec![0.0; grid.len()];
    for y in 0..size {
        for x in 0..size {
            out[((y + half) % size) * size + (x + half) % size] = grid[y * size + x];
        }
    }
    out
}

// Multiplies the field by a separable Hann window and returns the
// window's mean square, which the power grid is divided by so broadband
// levels survive apodization.
fn apply_hann(m: usize, data: &mut [f64]) -> f64 {
    if m < 2 {
        return 1.0;
    }
    let line: Vec<f64> = (0..m)
        .map(|n| 0.5 * (1.0 - (2.0 * PI * n as f64 / (m - 1) as f64).cos()))
        .collect();
    let mut sum_sq = 0.0;
    for y in 0..m {
        for x in 0..m {
            let w = line[y] * line[x];
            data[y * m + x] *= w;
            sum_sq += w * w;
        }
    }
    sum_sq / (m * m) as f64
}

fn single_power(field: &SquareField, demean: bool, window: Window) -> Result<Vec<f64>> {
    let m = field.size;
    let mut work = field.data.clone();
    if demean {
        let mean = work.iter().sum::<f64>() / work.len() as f64;
        for v in &mut work {
            *v -= mean;
        }
    }
    let window_norm = match window {
        Window::None => 1.0,
        Window::Hann => apply_hann(m, &mut work),
    };
    let spectrum = fft2(&SquareField { size: m, data: work })?;
    let scale = 1.0 / ((m * m) as f64 * window_norm);
    Ok(spectrum.iter().map(|c| c.norm_sqr() * scale).collect())
}

/// Averages |fft2|²/M² pointwise over the patch ensemble (per-patch mean
/// removed when `demean` is set) and centers the result.
pub fn power_spectrum_2d(patches: &[SquareField], demean: bool) -> Result<PowerSpectrum2D> {
    power_spectrum_2d_windowed(patches, demean, Window::None)
}

/// `power_spectrum_2d` with an optional apodization window.
pub fn power_spectrum_2d_windowed(
    patches: &[SquareField],
    demean: bool,
    window: Window,
) -> Result<PowerSpectrum2D> {
    let first = patches
        .first()
        .ok_or_else(|| Error::Input("power spectrum needs at least one patch".into()))?;
    let m = first.size;
    if let Some(bad) = patches.iter().find(|p| p.size != m) {
        return Err(Error::Geometry(format!(
            "mixed patch sizes in spectrum ensemble: {m} and {}",
            bad.size
        )));
    }
    let partials: Vec<Vec<f64>> = patches
        .par_chunks(ACC_CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; m * m];
            for patch in chunk {
                let grid = single_power(patch, demean, window)?;
                for (a, g) in acc.iter_mut().zip(&grid) {
                    *a += g;
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut power = vec![0.0; m * m];
    for partial in &partials {
        for (a, p) in power.iter_mut().zip(partial) {
            *a += p;
        }
    }
    let inv = 1.0 / patches.len() as f64;
    for v in &mut power {
        *v *= inv;
    }
    Ok(PowerSpectrum2D {
        size: m,
        power: fftshift(m, &power),
        count: patches.len(),
    })
}

/// Combines per-batch spectra into the spectrum of the pooled ensemble
/// (count-weighted mean, summed in slice order). Lets callers process
/// large ensembles one batch at a time instead of holding every patch.
pub fn merge_power_spectra(parts: &[PowerSpectrum2D]) -> Result<PowerSpectrum2D> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Input("spectrum merge needs at least one part".into()))?;
    let m = first.size;
    if let Some(bad) = parts.iter().find(|p| p.size != m) {
        return Err(Error::Geometry(format!(
            "mixed spectrum sizes in merge: {m} and {}",
            bad.size
        )));
    }
    let mut power = vec![0.0; m * m];
    let mut count = 0usize;
    for part in parts {
        let weight = part.count as f64;
        for (acc, &p) in power.iter_mut().zip(&part.power) {
            *acc += weight * p;
        }
        count += part.count;
    }
    if count == 0 {
        return Err(Error::Input("spectrum merge covers zero patches".into()));
    }
    let inv = 1.0 / count as f64;
    for v in &mut power {
        *v *= inv;
    }
    Ok(PowerSpectrum2D {
        size: m,
        power,
        count,
    })
}

/// Averages the centered grid over rings of constant rounded radius.
/// Rings run 1..=M/2; `exclude_axes` drops cells on the central
/// horizontal and vertical lines.
pub fn azimuthal_average(spec: &PowerSpectrum2D, exclude_axes: bool) -> Spectrum1D {
    let m = spec.size;
    let center = (m / 2) as isize;
    let rings = m / 2;
    let mut sums = vec![0.0; rings + 1];
    let mut counts = vec![0usize; rings + 1];
    for iy in 0..m {
        let v = iy as isize - center;
        for ix in 0..m {
            let u = ix as isize - center;
            if exclude_axes && (u == 0 || v == 0) {
                continue;
            }
            let ring = ((u * u + v * v) as f64).sqrt().round() as usize;
            if ring >= 1 && ring <= rings {
                sums[ring] += spec.power[iy * m + ix];
                counts[ring] += 1;
            }
        }
    }
    let mut freqs = Vec::with_capacity(rings);
    let mut power = Vec::with_capacity(rings);
    let mut out_counts = Vec::with_capacity(rings);
    for ring in 1..=rings {
        freqs.push(ring as f64);
        power.push(if counts[ring] > 0 {
            sums[ring] / counts[ring] as f64
        } else {
            0.0
        });
        out_counts.push(counts[ring]);
    }
    Spectrum1D {
        freqs,
        power,
        counts: out_counts,
    }
}

/// Default log-log fit window: rings 4 through M/4.
pub fn default_fit_range(m: usize) -> (f64, f64) {
    (4.0, (m / 4) as f64)
}

/// Ordinary least squares of log₁₀(power) on log₁₀(freq) over rings in
/// [f_lo, f_hi] with positive power. Needs at least 3 such rings.
pub fn fit_slope(spec: &Spectrum1D, f_lo: f64, f_hi: f64) -> Result<SlopeFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, &f) in spec.freqs.iter().enumerate() {
        if f >= f_lo && f <= f_hi && spec.power[i] > 0.0 {
            xs.push(f.log10());
            ys.push(spec.power[i].log10());
        }
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "slope fit over [{f_lo}, {f_hi}] has {n} usable rings, needs 3"
        )));
    }
    let nf = n as f64;
    let mean_x = xs.iter().sum::<f64>() / nf;
    let mean_y = ys.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(&ys) {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx == 0.0 {
        return Err(Error::InsufficientData(
            "slope fit needs at least two distinct frequencies".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (&x, &y) in xs.iter().zip(&ys) {
        let fit = intercept + slope * x;
        ss_res += (y - fit) * (y - fit);
        ss_tot += (y - mean_y) * (y - mean_y);
    }
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(SlopeFit {
        slope,
        intercept,
        r_squared,
        f_lo,
        f_hi,
    })
}

/// Divides power by f^gamma ring by ring; frequencies unchanged.
pub fn rescale_spectrum(spec: &Spectrum1D, gamma: f64) -> Spectrum1D {
    Spectrum1D {
        freqs: spec.freqs.clone(),
        power: spec
            .freqs
            .iter()
            .zip(&spec.power)
            .map(|(&f, &p)| p / f.powf(gamma))
            .collect(),
        counts: spec.counts.clone(),
    }
}

impl Spectrum1D {
    /// Writes `freq,power,count` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("freq,power,count\n");
        for i in 0..self.freqs.len() {
            out.push_str(&format!(
                "{},{},{}\n",
                self.freqs[i], self.power[i], self.counts[i]
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

impl SlopeFit {
    /// Writes a single `slope,intercept,r2,f_lo,f_hi` row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let out = format!(
            "slope,intercept,r2,f_lo,f_hi\n{},{},{},{},{}\n",
            self.slope, self.intercept, self.r_squared, self.f_lo, self.f_hi
        );
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

impl PowerSpectrum2D {
    /// Writes the centered grid as M rows of M comma-separated values.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for row in self.power.chunks_exact(self.size) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}
