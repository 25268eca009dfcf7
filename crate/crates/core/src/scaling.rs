//! Sweeps over the source exponent and the spectral collapse law.
//!
//! Stationary spectra for a family of exponents γ are rescaled by f^γ
//! and checked for a common slope of −5, per S(f) ~ A/f^(5−γ). Delta
//! sources get a peak detector for the periodic spectral structure their
//! fixed size imprints.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::path::Path;

use crate::deadleaves::{
    run_until_stationary, EnsembleMember, ModelState, Palette, ProbeSettings, SizeSampler,
    SourceSpec,
};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, MEASURE_STREAM};
use crate::spectral::{
    azimuthal_average, fit_slope, merge_power_spectra, power_spectrum_2d, rescale_spectrum,
    PowerSpectrum2D, SlopeFit, Spectrum1D, SquareField,
};
use crate::stats::sample_patches;

/// The four characteristic lengths of a run: system L, probe l, mean
/// patch size M, and the lattice pixel s (always 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingContext {
    pub system_size: usize,
    pub probe_size: usize,
    pub mean_patch_size: f64,
    pub pixel_size: f64,
}

/// Stationary spectrum and fits for one source exponent.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub gamma: f64,
    pub spectrum: Spectrum1D,
    pub rescaled: Spectrum1D,
    /// Fits are absent when the spectrum had too little mass to fit
    /// (e.g. a zero step cap).
    pub slope_raw: Option<SlopeFit>,
    pub slope_rescaled: Option<SlopeFit>,
    pub context: ScalingContext,
    pub converged: bool,
    pub steps: u64,
}

/// Everything a γ sweep holds fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSettings {
    pub side: usize,
    pub palette: Palette,
    pub n_min: usize,
    pub n_max: usize,
    pub probe: ProbeSettings,
    /// Patches pooled for the final stationary spectrum.
    pub measure_count: usize,
    pub tol: f64,
    pub step_cap: u64,
    /// Band for the reported raw and rescaled fits; `None` reuses the
    /// probe band. Stationarity detection always uses the probe band.
    pub fit_band: Option<(f64, f64)>,
}

impl SweepSettings {
    /// Binary palette, sizes 1..side/2, 128-pixel probes.
    pub fn for_side(side: usize) -> Self {
        let patch = 128.min(side);
        Self {
            side,
            palette: Palette::Binary,
            n_min: 1,
            n_max: side / 2,
            probe: ProbeSettings::for_patch(patch, 30),
            measure_count: 120,
            tol: 0.05,
            step_cap: 100_000_000,
            fit_band: None,
        }
    }
}

/// E[N] of the size source.
pub fn mean_patch_size(source: &SourceSpec) -> Result<f64> {
    Ok(SizeSampler::new(source)?.mean())
}

fn measure_spectrum(
    state: &ModelState,
    patch: usize,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(PowerSpectrum2D, Spectrum1D)> {
    let origins = sample_patches(state.side(), state.side(), patch, count, 0, rng)?;
    let fields: Vec<SquareField> = origins
        .iter()
        .map(|p| state.extract_patch(p))
        .collect::<Result<_>>()?;
    let spec2 = power_spectrum_2d(&fields, true)?;
    let radial = azimuthal_average(&spec2, false);
    Ok((spec2, radial))
}

fn fit_or_none(spec: &Spectrum1D, f_lo: f64, f_hi: f64) -> Result<Option<SlopeFit>> {
    match fit_slope(spec, f_lo, f_hi) {
        Ok(f) => Ok(Some(f)),
        Err(Error::InsufficientData(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Pools probe patches from every member (one reserved measurement
/// stream per image) into a single averaged spectrum and slope fit. The
/// fit is absent when the pooled spectrum has too little mass. Members
/// are measured in parallel, one batch per image, so memory stays
/// bounded by a single image's patches.
pub fn ensemble_spectrum(
    members: &[EnsembleMember],
    probe: &ProbeSettings,
    master_seed: u64,
) -> Result<(PowerSpectrum2D, Spectrum1D, Option<SlopeFit>)> {
    if members.is_empty() {
        return Err(Error::Input("ensemble spectrum needs at least one image".into()));
    }
    let parts: Vec<PowerSpectrum2D> = members
        .par_iter()
        .enumerate()
        .map(|(index, member)| {
            let mut rng = stream_rng(master_seed, index as u64 | MEASURE_STREAM);
            let side = member.state.side();
            let origins = sample_patches(side, side, probe.patch, probe.count, 0, &mut rng)?;
            let fields: Vec<SquareField> = origins
                .iter()
                .map(|origin| member.state.extract_patch(origin))
                .collect::<Result<_>>()?;
            power_spectrum_2d(&fields, true)
        })
        .collect::<Result<_>>()?;
    let spec2 = merge_power_spectra(&parts)?;
    let radial = azimuthal_average(&spec2, false);
    let fit = fit_or_none(&radial, probe.f_lo, probe.f_hi)?;
    Ok((spec2, radial, fit))
}

/// Runs each exponent to stationarity and fits raw and f^γ-rescaled
/// slopes over the same band. Non-convergence lands in the result, not
/// an error; γ jobs run in parallel on derived streams.
pub fn gamma_sweep(
    gammas: &[f64],
    settings: &SweepSettings,
    master_seed: u64,
) -> Result<Vec<SweepResult>> {
    if gammas.is_empty() {
        return Err(Error::Input("sweep needs at least one exponent".into()));
    }
    gammas
        .par_iter()
        .enumerate()
        .map(|(index, &gamma)| {
            let source = SourceSpec::PowerLaw {
                gamma,
                n_min: settings.n_min,
                n_max: settings.n_max,
            };
            let rng = stream_rng(master_seed, index as u64);
            let (state, report) = run_until_stationary(
                settings.side,
                &source,
                &settings.palette,
                &settings.probe,
                settings.tol,
                settings.step_cap,
                rng,
            )?;
            let mut measure_rng = stream_rng(master_seed, index as u64 | MEASURE_STREAM);
            let (_, spectrum) = measure_spectrum(
                &state,
                settings.probe.patch,
                settings.measure_count,
                &mut measure_rng,
            )?;
            let rescaled = rescale_spectrum(&spectrum, gamma);
            let (fit_lo, fit_hi) = settings
                .fit_band
                .unwrap_or((settings.probe.f_lo, settings.probe.f_hi));
            let slope_raw = fit_or_none(&spectrum, fit_lo, fit_hi)?;
            let slope_rescaled = fit_or_none(&rescaled, fit_lo, fit_hi)?;
            Ok(SweepResult {
                gamma,
                spectrum,
                rescaled,
                slope_raw,
                slope_rescaled,
                context: ScalingContext {
                    system_size: settings.side,
                    probe_size: settings.probe.patch,
                    mean_patch_size: mean_patch_size(&source)?,
                    pixel_size: 1.0,
                },
                converged: report.converged,
                steps: state.steps_taken(),
            })
        })
        .collect()
}

/// One sweep entry measured against the collapse target.
#[derive(Debug, Clone, Copy)]
pub struct CollapseEntry {
    pub gamma: f64,
    /// NaN when the sweep produced no fit.
    pub slope_rescaled: f64,
    pub deviation: f64,
    pub pass: bool,
}

/// Verdict of the collapse law over a sweep.
#[derive(Debug, Clone)]
pub struct CollapseReport {
    pub target: f64,
    pub tol: f64,
    pub entries: Vec<CollapseEntry>,
    pub max_deviation: f64,
    /// Largest pairwise difference between rescaled slopes.
    pub spread: f64,
    pub pass: bool,
}

/// Checks every rescaled slope against `target` within `tol`.
pub fn collapse_check(results: &[SweepResult], target: f64, tol: f64) -> Result<CollapseReport> {
    if results.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "collapse check needs at least 2 sweep results, got {}",
            results.len()
        )));
    }
    let mut entries = Vec::with_capacity(results.len());
    let mut max_deviation: f64 = 0.0;
    let mut slopes = Vec::new();
    for result in results {
        let (slope, deviation) = match result.slope_rescaled {
            Some(f) => (f.slope, (f.slope - target).abs()),
            None => (f64::NAN, f64::INFINITY),
        };
        if slope.is_finite() {
            slopes.push(slope);
        }
        max_deviation = max_deviation.max(deviation);
        entries.push(CollapseEntry {
            gamma: result.gamma,
            slope_rescaled: slope,
            deviation,
            pass: deviation <= tol,
        });
    }
    let spread = if slopes.len() == results.len() && slopes.len() > 1 {
        let lo = slopes.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = slopes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    } else {
        f64::INFINITY
    };
    let pass = entries.iter().all(|e| e.pass);
    Ok(CollapseReport {
        target,
        tol,
        entries,
        max_deviation,
        spread,
        pass,
    })
}

impl CollapseReport {
    /// Writes `gamma,slope_rescaled,target,tol,deviation,pass` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("gamma,slope_rescaled,target,tol,deviation,pass\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.gamma, e.slope_rescaled, self.target, self.tol, e.deviation, e.pass
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Human-readable verdict.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "collapse target {} within ±{}: {}\n",
            self.target,
            self.tol,
            if self.pass { "pass" } else { "FAIL" }
        );
        for e in &self.entries {
            out.push_str(&format!(
                "  gamma {}: rescaled slope {} (deviation {}) {}\n",
                e.gamma,
                e.slope_rescaled,
                e.deviation,
                if e.pass { "ok" } else { "out of band" }
            ));
        }
        out.push_str(&format!(
            "max deviation {}, pairwise spread {}\n",
            self.max_deviation, self.spread
        ));
        out
    }
}

/// Writes the sweep summary table,
/// `gamma,slope_raw,slope_rescaled,intercept,r2,converged,steps`.
pub fn write_sweep_summary(results: &[SweepResult], path: &Path) -> Result<()> {
    let mut out = String::from("gamma,slope_raw,slope_rescaled,intercept,r2,converged,steps\n");
    for r in results {
        let (raw, intercept, r2) = match r.slope_raw {
            Some(f) => (f.slope, f.intercept, f.r_squared),
            None => (f64::NAN, f64::NAN, f64::NAN),
        };
        let rescaled = r.slope_rescaled.map(|f| f.slope).unwrap_or(f64::NAN);
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.gamma, raw, rescaled, intercept, r2, r.converged, r.steps
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Ring indices of local spectral maxima and their modal spacing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeakReport {
    pub peaks: Vec<usize>,
    /// Most common gap between consecutive peaks (smallest on ties);
    /// absent with fewer than two peaks.
    pub modal_spacing: Option<usize>,
}

/// Finds rings whose power exceeds both neighbors by at least the
/// multiplicative `min_prominence` factor.
pub fn detect_periodic_peaks(spec: &Spectrum1D, min_prominence: f64) -> PeakReport {
    let n = spec.power.len();
    let mut peaks = Vec::new();
    for i in 1..n.saturating_sub(1) {
        let p = spec.power[i];
        if p >= min_prominence * spec.power[i - 1] && p >= min_prominence * spec.power[i + 1] {
            peaks.push(spec.freqs[i] as usize);
        }
    }
    let modal_spacing = modal_gap(&peaks);
    PeakReport {
        peaks,
        modal_spacing,
    }
}

/// Peak detection on the axis profile of a centered 2D spectrum: the
/// four half-axes are averaged into one radial line first.
pub fn detect_periodic_peaks_2d(spec: &PowerSpectrum2D, min_prominence: f64) -> PeakReport {
    let m = spec.size;
    let center = m / 2;
    let rings = m / 2;
    let mut freqs = Vec::with_capacity(rings);
    let mut power = Vec::with_capacity(rings);
    let mut counts = Vec::with_capacity(rings);
    for r in 1..=rings {
        let mut sum = 0.0;
        let mut count = 0usize;
        if center + r < m {
            sum += spec.power[center * m + center + r];
            sum += spec.power[(center + r) * m + center];
            count += 2;
        }
        sum += spec.power[center * m + center - r];
        sum += spec.power[(center - r) * m + center];
        count += 2;
        freqs.push(r as f64);
        power.push(sum / count as f64);
        counts.push(count);
    }
    detect_periodic_peaks(
        &Spectrum1D {
            freqs,
            power,
            counts,
        },
        min_prominence,
    )
}

fn modal_gap(peaks: &[usize]) -> Option<usize> {
    if peaks.len() < 2 {
        return None;
    }
    let mut tally = std::collections::BTreeMap::new();
    for pair in peaks.windows(2) {
        *tally.entry(pair[1] - pair[0]).or_insert(0usize) += 1;
    }
    // BTreeMap order makes the smallest gap win ties.
    let mut best: Option<(usize, usize)> = None;
    for (&gap, &count) in &tally {
        if best.map_or(true, |(_, c)| count > c) {
            best = Some((gap, count));
        }
    }
    best.map(|(gap, _)| gap)
}
