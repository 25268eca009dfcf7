//! Occlusion model: opaque square patches stamped onto a torus.
//!
//! Each step draws a side length from the configured source (power law
//! p(N) ∝ N^(−γ) or a fixed size), a level from the palette, and a
//! uniform origin, then overwrites an N×N block with periodic wrap.
//! Stationarity is detected by probing the ensemble power spectrum at
//! geometrically doubling step counts until slope and amplitude settle.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{write_pgm, IntensityImage};
use crate::rng::{stream_rng, PROBE_STREAM};
use crate::spectral::{
    azimuthal_average, default_fit_range, fit_slope, power_spectrum_2d, SlopeFit, SquareField,
};
use crate::stats::{sample_patches, PatchSpec};

/// Patch side-length law: power law over an inclusive support, or a
/// single fixed size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceSpec {
    PowerLaw { gamma: f64, n_min: usize, n_max: usize },
    Delta { fixed_size: usize },
}

impl SourceSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SourceSpec::PowerLaw { gamma, n_min, n_max } => {
                if !(gamma > 1.0) || !gamma.is_finite() {
                    return Err(Error::Config(format!(
                        "power-law exponent must exceed 1, got {gamma}"
                    )));
                }
                if n_min < 1 || n_min > n_max {
                    return Err(Error::Config(format!(
                        "size support [{n_min}, {n_max}] is not a valid range"
                    )));
                }
            }
            SourceSpec::Delta { fixed_size } => {
                if fixed_size < 1 {
                    return Err(Error::Config("fixed size must be at least 1".into()));
                }
            }
        }
        Ok(())
    }

    /// Validity against a host lattice: sizes may not exceed half the side.
    pub fn validate_for(&self, side: usize) -> Result<()> {
        self.validate()?;
        let (_, hi) = self.bounds();
        if hi > side / 2 {
            return Err(Error::Config(format!(
                "largest patch size {hi} exceeds floor({side}/2)"
            )));
        }
        Ok(())
    }

    /// Inclusive size support.
    pub fn bounds(&self) -> (usize, usize) {
        match *self {
            SourceSpec::PowerLaw { n_min, n_max, .. } => (n_min, n_max),
            SourceSpec::Delta { fixed_size } => (fixed_size, fixed_size),
        }
    }
}

/// Exact inverse-CDF sampler over the normalized discrete size law.
#[derive(Debug, Clone)]
pub struct SizeSampler {
    n_min: usize,
    pmf: Vec<f64>,
    cdf: Vec<f64>,
}

impl SizeSampler {
    pub fn new(source: &SourceSpec) -> Result<Self> {
        source.validate()?;
        let (n_min, n_max) = source.bounds();
        let weights: Vec<f64> = match *source {
            SourceSpec::PowerLaw { gamma, .. } => {
                (n_min..=n_max).map(|n| (n as f64).powf(-gamma)).collect()
            }
            SourceSpec::Delta { .. } => vec![1.0],
        };
        let z: f64 = weights.iter().sum();
        let pmf: Vec<f64> = weights.iter().map(|w| w / z).collect();
        let mut cdf = Vec::with_capacity(pmf.len());
        let mut acc = 0.0;
        for &p in &pmf {
            acc += p;
            cdf.push(acc);
        }
        // Guard the top edge against rounding so a draw of u → 1 cannot
        // fall off the table.
        *cdf.last_mut().expect("nonempty support") = 1.0;
        Ok(Self { n_min, pmf, cdf })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        self.n_min + self.cdf.partition_point(|&c| c <= u)
    }

    /// Exact probability of size `n` (zero off support).
    pub fn pmf(&self, n: usize) -> f64 {
        n.checked_sub(self.n_min)
            .and_then(|i| self.pmf.get(i))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn support(&self) -> (usize, usize) {
        (self.n_min, self.n_min + self.pmf.len() - 1)
    }

    /// E[N] over the support.
    pub fn mean(&self) -> f64 {
        self.pmf
            .iter()
            .enumerate()
            .map(|(i, p)| (self.n_min + i) as f64 * p)
            .sum()
    }

    /// E[N²] over the support (expected cells covered per stamp).
    pub fn mean_square(&self) -> f64 {
        self.pmf
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let n = (self.n_min + i) as f64;
                n * n * p
            })
            .sum()
    }
}

/// Level law for stamped patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Palette {
    /// Uniform integer levels on [0, i_max].
    Grayscale { i_max: u16 },
    /// Black or white with equal probability.
    Binary,
}

impl Palette {
    pub fn max_level(&self) -> u16 {
        match *self {
            Palette::Grayscale { i_max } => i_max,
            Palette::Binary => 1,
        }
    }

    pub fn sample_level(&self, rng: &mut impl Rng) -> u16 {
        rng.random_range(0..=self.max_level())
    }
}

/// L×L lattice of levels plus the generator that drives it.
#[derive(Debug, Clone)]
pub struct ModelState {
    side: usize,
    lattice: Vec<u16>,
    steps_taken: u64,
    max_level: u16,
    rng: ChaCha8Rng,
    touched: Vec<bool>,
    touched_cells: usize,
}

impl ModelState {
    /// All-zero lattice; the initial condition is erased by stationarity.
    pub fn new(side: usize, palette: &Palette, rng: ChaCha8Rng) -> Result<Self> {
        if side < 2 {
            return Err(Error::Config(format!(
                "lattice side must be at least 2, got {side}"
            )));
        }
        Ok(Self {
            side,
            lattice: vec![0; side * side],
            steps_taken: 0,
            max_level: palette.max_level(),
            rng,
            touched: vec![false; side * side],
            touched_cells: 0,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps_taken
    }

    pub fn lattice(&self) -> &[u16] {
        &self.lattice
    }

    /// Fraction of cells never written since construction.
    pub fn uncovered_fraction(&self) -> f64 {
        1.0 - self.touched_cells as f64 / (self.side * self.side) as f64
    }

    /// Overwrites the size×size block at (x, y) with periodic wrap.
    pub fn stamp(&mut self, size: usize, level: u16, x: usize, y: usize) -> Result<()> {
        let l = self.side;
        if size < 1 || size > l / 2 {
            return Err(Error::Geometry(format!(
                "stamp size {size} outside [1, {}]",
                l / 2
            )));
        }
        if x >= l || y >= l {
            return Err(Error::Geometry(format!(
                "stamp origin ({x}, {y}) outside [0, {l})²"
            )));
        }
        if level > self.max_level {
            return Err(Error::Input(format!(
                "level {level} exceeds palette maximum {}",
                self.max_level
            )));
        }
        // The wrapped block is one or two contiguous column runs per row.
        let x_end = x + size;
        let (run_a, run_b) = if x_end <= l {
            ((x, x_end), (0, 0))
        } else {
            ((x, l), (0, x_end - l))
        };
        let fully_touched = self.touched_cells == l * l;
        for dy in 0..size {
            let mut yy = y + dy;
            if yy >= l {
                yy -= l;
            }
            let row = yy * l;
            self.lattice[row + run_a.0..row + run_a.1].fill(level);
            self.lattice[row + run_b.0..row + run_b.1].fill(level);
            if !fully_touched {
                for xx in (run_a.0..run_a.1).chain(run_b.0..run_b.1) {
                    if !self.touched[row + xx] {
                        self.touched[row + xx] = true;
                        self.touched_cells += 1;
                    }
                }
            }
        }
        self.steps_taken += 1;
        Ok(())
    }

    /// One generative step. Draw order is fixed — size, level, x, y — so
    /// runs are reproducible from the seed alone.
    pub fn step(&mut self, sampler: &SizeSampler, palette: &Palette) -> Result<()> {
        let size = sampler.sample(&mut self.rng);
        let level = palette.sample_level(&mut self.rng);
        let x = self.rng.random_range(0..self.side);
        let y = self.rng.random_range(0..self.side);
        self.stamp(size, level, x, y)
    }

    pub fn run_steps(&mut self, sampler: &SizeSampler, palette: &Palette, n: u64) -> Result<()> {
        for _ in 0..n {
            self.step(sampler, palette)?;
        }
        Ok(())
    }

    /// Copies a patch of the lattice into a real-valued field for the
    /// spectral pipeline (levels cast as they are; no log transform).
    pub fn extract_patch(&self, patch: &PatchSpec) -> Result<SquareField> {
        if patch.size == 0
            || patch.origin_x + patch.size > self.side
            || patch.origin_y + patch.size > self.side
        {
            return Err(Error::Geometry(format!(
                "patch {0}x{0} at ({1}, {2}) outside {3}x{3} lattice",
                patch.size, patch.origin_x, patch.origin_y, self.side
            )));
        }
        let mut data = Vec::with_capacity(patch.size * patch.size);
        for dy in 0..patch.size {
            let row = (patch.origin_y + dy) * self.side + patch.origin_x;
            data.extend(self.lattice[row..row + patch.size].iter().map(|&v| v as f64));
        }
        SquareField::new(patch.size, data)
    }

    /// Writes the lattice as a binary graymap. Binary palettes map level
    /// 1 to the graymap maximum so snapshots are visible.
    pub fn write_snapshot(&self, path: &Path, palette: &Palette) -> Result<()> {
        let (maxval, scale) = match palette {
            Palette::Binary => (255u16, 255.0),
            Palette::Grayscale { i_max } => ((*i_max).max(1), 1.0),
        };
        let data: Vec<f64> = self.lattice.iter().map(|&v| v as f64 * scale).collect();
        let img = IntensityImage::new(self.side, self.side, data)?;
        write_pgm(&img, path, maxval, true)
    }
}

/// How the ensemble probe slices a lattice into spectra.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeSettings {
    /// Probe patch side l.
    pub patch: usize,
    /// Patches per checkpoint.
    pub count: usize,
    pub f_lo: f64,
    pub f_hi: f64,
    /// Relative amplitude change allowed at the reference ring.
    pub amp_tol: f64,
    /// Steps before the first spectrum probe.
    pub first_checkpoint: u64,
}

impl ProbeSettings {
    /// Probe with the default fit band (rings 4..l/4) and 5% amplitude
    /// tolerance, first checkpoint at 10⁴ steps.
    pub fn for_patch(patch: usize, count: usize) -> Self {
        let (f_lo, f_hi) = default_fit_range(patch);
        Self {
            patch,
            count,
            f_lo,
            f_hi,
            amp_tol: 0.05,
            first_checkpoint: 10_000,
        }
    }

    /// Ring probed for amplitude stability: the log-midpoint of the fit
    /// band, clamped to the available rings.
    pub fn reference_ring(&self) -> usize {
        let mid = (self.f_lo * self.f_hi).sqrt().round() as usize;
        mid.clamp(1, (self.patch / 2).max(1))
    }
}

/// One spectrum probe along the way to stationarity. A checkpoint with
/// too little spectral mass to fit carries no slope.
#[derive(Debug, Clone, Copy)]
pub struct Checkpoint {
    pub steps: u64,
    pub fit: Option<SlopeFit>,
    pub amp_ref: f64,
}

/// Trace of the stationarity search.
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub checkpoints: Vec<Checkpoint>,
    pub converged: bool,
    /// Slope at the last checkpoint (NaN when no fit was possible).
    pub final_slope: f64,
}

impl ConvergenceReport {
    /// Writes `steps,slope,intercept,r2,amp_ref` rows, one per checkpoint.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("steps,slope,intercept,r2,amp_ref\n");
        for cp in &self.checkpoints {
            let (slope, intercept, r2) = match cp.fit {
                Some(f) => (f.slope, f.intercept, f.r_squared),
                None => (f64::NAN, f64::NAN, f64::NAN),
            };
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                cp.steps, slope, intercept, r2, cp.amp_ref
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn relative_change(new: f64, old: f64) -> f64 {
    if old == 0.0 {
        if new == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        ((new - old) / old).abs()
    }
}

fn probe_checkpoint(
    state: &ModelState,
    probe: &ProbeSettings,
    probe_rng: &mut ChaCha8Rng,
) -> Result<Checkpoint> {
    let patches = sample_patches(
        state.side(),
        state.side(),
        probe.patch,
        probe.count,
        0,
        probe_rng,
    )?;
    let fields: Vec<SquareField> = patches
        .iter()
        .map(|p| state.extract_patch(p))
        .collect::<Result<_>>()?;
    let spec2 = power_spectrum_2d(&fields, true)?;
    let radial = azimuthal_average(&spec2, false);
    let fit = match fit_slope(&radial, probe.f_lo, probe.f_hi) {
        Ok(f) => Some(f),
        Err(Error::InsufficientData(_)) => None,
        Err(e) => return Err(e),
    };
    let amp_ref = radial.power[probe.reference_ring() - 1];
    Ok(Checkpoint {
        steps: state.steps_taken(),
        fit,
        amp_ref,
    })
}

/// Stamps until the probe spectrum is stationary: checkpoints at
/// geometrically doubling step counts, convergence when two successive
/// slopes differ by less than `tol` and the reference-ring amplitude
/// moves by less than the probe's relative tolerance. A reached step cap
/// yields `converged = false`, not an error.
pub fn run_until_stationary(
    side: usize,
    source: &SourceSpec,
    palette: &Palette,
    probe: &ProbeSettings,
    tol: f64,
    step_cap: u64,
    rng: ChaCha8Rng,
) -> Result<(ModelState, ConvergenceReport)> {
    source.validate_for(side)?;
    if probe.patch > side {
        return Err(Error::Geometry(format!(
            "probe patch {} exceeds lattice side {side}",
            probe.patch
        )));
    }
    let sampler = SizeSampler::new(source)?;
    // Probes draw from a reserved stream so measurement never perturbs
    // the generative sequence.
    let mut probe_rng = rng.clone();
    probe_rng.set_stream(rng.get_stream() | PROBE_STREAM);
    let mut state = ModelState::new(side, palette, rng)?;

    let mut checkpoints: Vec<Checkpoint> = Vec::new();
    let mut converged = false;
    let mut next_checkpoint = probe.first_checkpoint.max(1);
    loop {
        let target = next_checkpoint.min(step_cap);
        while state.steps_taken() < target {
            state.step(&sampler, palette)?;
        }
        let cp = probe_checkpoint(&state, probe, &mut probe_rng)?;
        if let Some(prev) = checkpoints.last() {
            if let (Some(pf), Some(cf)) = (prev.fit, cp.fit) {
                if (cf.slope - pf.slope).abs() < tol
                    && relative_change(cp.amp_ref, prev.amp_ref) < probe.amp_tol
                {
                    converged = true;
                }
            }
        }
        checkpoints.push(cp);
        if converged || state.steps_taken() >= step_cap {
            break;
        }
        next_checkpoint = next_checkpoint.saturating_mul(2);
    }
    let final_slope = checkpoints
        .last()
        .and_then(|c| c.fit)
        .map(|f| f.slope)
        .unwrap_or(f64::NAN);
    Ok((
        state,
        ConvergenceReport {
            checkpoints,
            converged,
            final_slope,
        },
    ))
}

/// Step budget for ensemble members.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepsPolicy {
    Fixed(u64),
    UntilStationary {
        probe: ProbeSettings,
        tol: f64,
        step_cap: u64,
    },
}

/// One ensemble image plus its convergence trace when stationarity was
/// requested.
#[derive(Debug, Clone)]
pub struct EnsembleMember {
    pub state: ModelState,
    pub report: Option<ConvergenceReport>,
}

/// Generates `count` independent images, one ChaCha stream per index, in
/// parallel with deterministic results.
pub fn generate_ensemble(
    count: usize,
    side: usize,
    source: &SourceSpec,
    palette: &Palette,
    steps: &StepsPolicy,
    master_seed: u64,
) -> Result<Vec<EnsembleMember>> {
    if count == 0 {
        return Err(Error::Input("ensemble needs at least one image".into()));
    }
    source.validate_for(side)?;
    (0..count)
        .into_par_iter()
        .map(|index| {
            let rng = stream_rng(master_seed, index as u64);
            match *steps {
                StepsPolicy::Fixed(n) => {
                    let sampler = SizeSampler::new(source)?;
                    let mut state = ModelState::new(side, palette, rng)?;
                    state.run_steps(&sampler, palette, n)?;
                    Ok(EnsembleMember {
                        state,
                        report: None,
                    })
                }
                StepsPolicy::UntilStationary {
                    ref probe,
                    tol,
                    step_cap,
                } => {
                    let (state, report) =
                        run_until_stationary(side, source, palette, probe, tol, step_cap, rng)?;
                    Ok(EnsembleMember {
                        state,
                        report: Some(report),
                    })
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn delta_source_always_fixed() {
        let sampler = SizeSampler::new(&SourceSpec::Delta { fixed_size: 32 }).unwrap();
        let mut r = rng(1);
        for _ in 0..100 {
            assert_eq!(sampler.sample(&mut r), 32);
        }
    }

    #[test]
    fn single_atom_power_law() {
        let source = SourceSpec::PowerLaw {
            gamma: 3.0,
            n_min: 7,
            n_max: 7,
        };
        let sampler = SizeSampler::new(&source).unwrap();
        let mut r = rng(2);
        for _ in 0..100 {
            assert_eq!(sampler.sample(&mut r), 7);
        }
    }

    #[test]
    fn pmf_normalized_and_exact_at_one() {
        let sampler = SizeSampler::new(&SourceSpec::PowerLaw {
            gamma: 3.0,
            n_min: 1,
            n_max: 4,
        })
        .unwrap();
        let z = 1.0 + 1.0 / 8.0 + 1.0 / 27.0 + 1.0 / 64.0;
        assert!((sampler.pmf(1) - 1.0 / z).abs() < 1e-12);
        assert!((sampler.pmf(4) - (1.0 / 64.0) / z).abs() < 1e-12);
        assert_eq!(sampler.pmf(5), 0.0);
        let total: f64 = (1..=4).map(|n| sampler.pmf(n)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empirical_small_support_frequency() {
        let sampler = SizeSampler::new(&SourceSpec::PowerLaw {
            gamma: 3.0,
            n_min: 1,
            n_max: 4,
        })
        .unwrap();
        let mut r = rng(3);
        let draws = 1_000_000;
        let ones = (0..draws).filter(|_| sampler.sample(&mut r) == 1).count();
        let p1 = ones as f64 / draws as f64;
        let exact = 1.0 / (1.0 + 1.0 / 8.0 + 1.0 / 27.0 + 1.0 / 64.0);
        assert!(
            (p1 - exact).abs() < 0.002,
            "empirical {p1} vs exact {exact}"
        );
    }

    #[test]
    fn sampler_moments() {
        let sampler = SizeSampler::new(&SourceSpec::PowerLaw {
            gamma: 3.0,
            n_min: 1,
            n_max: 4,
        })
        .unwrap();
        let z = 1.0 + 1.0 / 8.0 + 1.0 / 27.0 + 1.0 / 64.0;
        let mean = (1.0 + 1.0 / 4.0 + 1.0 / 9.0 + 1.0 / 16.0) / z;
        let mean_sq = (1.0 + 1.0 / 2.0 + 1.0 / 3.0 + 1.0 / 4.0) / z;
        assert!((sampler.mean() - mean).abs() < 1e-12);
        assert!((sampler.mean_square() - mean_sq).abs() < 1e-12);
    }

    #[test]
    fn invalid_sources_rejected() {
        assert!(SourceSpec::PowerLaw {
            gamma: 1.0,
            n_min: 1,
            n_max: 4
        }
        .validate()
        .is_err());
        assert!(SourceSpec::PowerLaw {
            gamma: 3.0,
            n_min: 5,
            n_max: 4
        }
        .validate()
        .is_err());
        assert!(SourceSpec::Delta { fixed_size: 0 }.validate().is_err());
        // Size bound against the host lattice.
        assert!(SourceSpec::Delta { fixed_size: 300 }.validate_for(512).is_err());
        assert!(SourceSpec::Delta { fixed_size: 256 }.validate_for(512).is_ok());
    }

    #[test]
    fn stamp_wraps_around_both_edges() {
        let palette = Palette::Grayscale { i_max: 255 };
        let mut state = ModelState::new(4, &palette, rng(4)).unwrap();
        state.stamp(2, 9, 3, 3).unwrap();
        let expected: Vec<(usize, usize)> = vec![(3, 3), (0, 3), (3, 0), (0, 0)];
        for y in 0..4 {
            for x in 0..4 {
                let want = if expected.contains(&(x, y)) { 9 } else { 0 };
                assert_eq!(state.lattice()[y * 4 + x], want, "cell ({x}, {y})");
            }
        }
        assert_eq!(state.steps_taken(), 1);
    }

    #[test]
    fn stamp_overwrite_is_idempotent() {
        let palette = Palette::Grayscale { i_max: 255 };
        let mut state = ModelState::new(8, &palette, rng(5)).unwrap();
        state.stamp(4, 7, 0, 0).unwrap();
        let first = state.lattice().to_vec();
        state.stamp(4, 7, 0, 0).unwrap();
        assert_eq!(state.lattice(), &first[..]);
        assert_eq!(state.steps_taken(), 2);
    }

    #[test]
    fn unit_stamp_changes_one_cell() {
        let palette = Palette::Grayscale { i_max: 255 };
        let mut state = ModelState::new(8, &palette, rng(6)).unwrap();
        state.stamp(1, 3, 2, 1).unwrap();
        let changed = state.lattice().iter().filter(|&&v| v != 0).count();
        assert_eq!(changed, 1);
        assert_eq!(state.lattice()[8 + 2], 3);
    }

    #[test]
    fn oversized_stamp_rejected() {
        let palette = Palette::Binary;
        let mut state = ModelState::new(8, &palette, rng(7)).unwrap();
        assert!(matches!(
            state.stamp(5, 1, 0, 0),
            Err(Error::Geometry(_))
        ));
        assert!(matches!(
            state.stamp(2, 1, 8, 0),
            Err(Error::Geometry(_))
        ));
        assert!(matches!(state.stamp(2, 2, 0, 0), Err(Error::Input(_))));
    }

    #[test]
    fn steps_are_deterministic() {
        let source = SourceSpec::PowerLaw {
            gamma: 3.0,
            n_min: 1,
            n_max: 8,
        };
        let palette = Palette::Grayscale { i_max: 255 };
        let sampler = SizeSampler::new(&source).unwrap();
        let mut a = ModelState::new(32, &palette, rng(8)).unwrap();
        let mut b = ModelState::new(32, &palette, rng(8)).unwrap();
        a.run_steps(&sampler, &palette, 500).unwrap();
        b.run_steps(&sampler, &palette, 500).unwrap();
        assert_eq!(a.lattice(), b.lattice());
    }

    #[test]
    fn binary_palette_closure() {
        let source = SourceSpec::PowerLaw {
            gamma: 2.5,
            n_min: 1,
            n_max: 16,
        };
        let palette = Palette::Binary;
        let sampler = SizeSampler::new(&source).unwrap();
        let mut state = ModelState::new(32, &palette, rng(9)).unwrap();
        state.run_steps(&sampler, &palette, 2000).unwrap();
        assert!(state.lattice().iter().all(|&v| v <= 1));
        // Both colors must have landed by now.
        assert!(state.lattice().iter().any(|&v| v == 0));
        assert!(state.lattice().iter().any(|&v| v == 1));
    }

    // Uniform origins on the torus cover any fixed cell with probability
    // N²/L² per stamp, so the expected uncovered fraction after T steps
    // is exactly (1 − E[N²]/L²)^T.
    #[test]
    fn coverage_matches_analytic_expectation() {
        let source = SourceSpec::PowerLaw {
            gamma: 3.0,
            n_min: 1,
            n_max: 16,
        };
        let palette = Palette::Grayscale { i_max: 255 };
        let sampler = SizeSampler::new(&source).unwrap();
        let side = 32usize;
        let steps = 200u64;
        let q = sampler.mean_square() / (side * side) as f64;
        let analytic = (1.0 - q).powi(steps as i32);
        let runs = 25;
        let mut total = 0.0;
        for seed in 0..runs {
            let mut state = ModelState::new(side, &palette, rng(100 + seed)).unwrap();
            state.run_steps(&sampler, &palette, steps).unwrap();
            total += state.uncovered_fraction();
        }
        let mean_frac = total / runs as f64;
        assert!(
            (mean_frac - analytic).abs() < 0.05 * analytic + 0.005,
            "empirical {mean_frac} vs analytic {analytic}"
        );
    }

    #[test]
    fn vacuous_tolerance_converges_at_second_checkpoint() {
        let source = SourceSpec::PowerLaw {
            gamma: 3.0,
            n_min: 1,
            n_max: 16,
        };
        let probe = ProbeSettings {
            patch: 32,
            count: 8,
            f_lo: 2.0,
            f_hi: 8.0,
            amp_tol: f64::INFINITY,
            first_checkpoint: 1000,
        };
        let (_, report) = run_until_stationary(
            64,
            &source,
            &Palette::Grayscale { i_max: 255 },
            &probe,
            f64::INFINITY,
            1_000_000,
            rng(10),
        )
        .unwrap();
        assert!(report.converged);
        assert_eq!(report.checkpoints.len(), 2);
        assert_eq!(report.checkpoints[0].steps, 1000);
        assert_eq!(report.checkpoints[1].steps, 2000);
    }

    #[test]
    fn step_cap_reports_not_converged() {
        let source = SourceSpec::PowerLaw {
            gamma: 3.0,
            n_min: 1,
            n_max: 8,
        };
        let probe = ProbeSettings {
            patch: 16,
            count: 4,
            f_lo: 2.0,
            f_hi: 8.0,
            amp_tol: 0.0,
            first_checkpoint: 100,
        };
        let (state, report) = run_until_stationary(
            32,
            &source,
            &Palette::Binary,
            &probe,
            0.0,
            500,
            rng(11),
        )
        .unwrap();
        assert!(!report.converged);
        assert_eq!(state.steps_taken(), 500);
        assert!(report.checkpoints.last().unwrap().steps == 500);
    }

    #[test]
    fn stationary_slope_sanity_small_lattice() {
        let source = SourceSpec::PowerLaw {
            gamma: 3.0,
            n_min: 1,
            n_max: 64,
        };
        // Sixteen probes on a 128 lattice give a noisy amplitude estimate,
        // so the stability tolerances here are loose; the defaults suit
        // production probe counts.
        let mut probe = ProbeSettings::for_patch(64, 16);
        probe.amp_tol = 0.25;
        let (state, report) = run_until_stationary(
            128,
            &source,
            &Palette::Grayscale { i_max: 255 },
            &probe,
            0.15,
            2_000_000,
            rng(12),
        )
        .unwrap();
        assert!(report.converged, "no stationarity before cap");
        assert!(
            report.final_slope < -1.0 && report.final_slope > -3.5,
            "slope {}",
            report.final_slope
        );
        assert!(state.uncovered_fraction() < 1e-3);
        // Checkpoints double.
        for pair in report.checkpoints.windows(2) {
            assert!(pair[1].steps > pair[0].steps);
        }
    }

    #[test]
    fn ensemble_is_reproducible_and_diverse() {
        let source = SourceSpec::PowerLaw {
            gamma: 3.0,
            n_min: 1,
            n_max: 8,
        };
        let palette = Palette::Grayscale { i_max: 255 };
        let steps = StepsPolicy::Fixed(400);
        let a = generate_ensemble(2, 24, &source, &palette, &steps, 77).unwrap();
        let b = generate_ensemble(2, 24, &source, &palette, &steps, 77).unwrap();
        assert_eq!(a[0].state.lattice(), b[0].state.lattice());
        assert_eq!(a[1].state.lattice(), b[1].state.lattice());
        assert_ne!(a[0].state.lattice(), a[1].state.lattice());
    }

    #[test]
    fn convergence_report_csv_layout() {
        let report = ConvergenceReport {
            checkpoints: vec![
                Checkpoint {
                    steps: 100,
                    fit: None,
                    amp_ref: 0.0,
                },
                Checkpoint {
                    steps: 200,
                    fit: Some(SlopeFit {
                        slope: -2.0,
                        intercept: 3.0,
                        r_squared: 0.5,
                        f_lo: 4.0,
                        f_hi: 16.0,
                    }),
                    amp_ref: 1.25,
                },
            ],
            converged: false,
            final_slope: -2.0,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("conv.csv");
        report.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "steps,slope,intercept,r2,amp_ref\n100,NaN,NaN,NaN,0\n200,-2,3,0.5,1.25\n"
        );
    }

    #[test]
    fn snapshot_round_trips_through_pgm() {
        let palette = Palette::Grayscale { i_max: 255 };
        let source = SourceSpec::PowerLaw {
            gamma: 3.0,
            n_min: 1,
            n_max: 8,
        };
        let sampler = SizeSampler::new(&source).unwrap();
        let mut state = ModelState::new(16, &palette, rng(13)).unwrap();
        state.run_steps(&sampler, &palette, 300).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.pgm");
        state.write_snapshot(&path, &palette).unwrap();
        let img = crate::image::read_pgm(&path).unwrap();
        let back: Vec<u16> = img.data.iter().map(|&v| v as u16).collect();
        assert_eq!(back, state.lattice());
    }
}
