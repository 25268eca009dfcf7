//! Command-line orchestration.
//!
//! One subcommand per figure family: `pixstats` and `gradstats` for the
//! multi-scale distributions, `spectrum` for slope fits on datasets,
//! `simulate` for the occlusion model, `sweep` and `collapse` for the
//! exponent scans. Every run writes its resolved configuration next to
//! its outputs and is bit-reproducible from (config, seed), independent
//! of the thread count.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

use crate::config::{parse_kv, write_resolved, SimConfig};
use crate::deadleaves::{generate_ensemble, Palette, ProbeSettings, SourceSpec, StepsPolicy};
use crate::error::{Error, Result};
use crate::image::{
    read_pgm, read_raw_u16, to_contrast, ByteOrder, ContrastImage, ZeroPolicy,
};
use crate::rng::stream_rng;
use crate::scaling::{
    collapse_check, ensemble_spectrum, gamma_sweep, write_sweep_summary, SweepResult,
    SweepSettings,
};
use crate::spectral::{
    azimuthal_average, default_fit_range, fit_slope, merge_power_spectra,
    power_spectrum_2d_windowed, PowerSpectrum2D, SquareField, Window,
};
use crate::stats::{
    coarse_pixel, gradient_at, histogram, reference_pdf, sample_patches, standardize,
    ReferencePdf,
};

#[derive(Debug, Parser)]
#[command(
    name = "scalestats",
    version,
    about = "Multi-scale image statistics, power spectra, and a patch-stamping image model"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Standardized pixel histograms across length scales
    Pixstats(PixstatsArgs),
    /// Gradient-magnitude histograms across length scales
    Gradstats(GradstatsArgs),
    /// Averaged 2D/1D power spectrum and log-log slope of a dataset
    Spectrum(SpectrumArgs),
    /// Generate occlusion-model images until spectral stationarity
    Simulate(SimulateArgs),
    /// Stationary spectra over a grid of source exponents
    Sweep(SweepArgs),
    /// Exponent sweep plus the f^gamma collapse verdict
    Collapse(CollapseArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ByteOrderArg {
    Big,
    Little,
}

impl From<ByteOrderArg> for ByteOrder {
    fn from(v: ByteOrderArg) -> Self {
        match v {
            ByteOrderArg::Big => ByteOrder::Big,
            ByteOrderArg::Little => ByteOrder::Little,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ZeroPolicyArg {
    Clamp,
    AddOne,
}

impl From<ZeroPolicyArg> for ZeroPolicy {
    fn from(v: ZeroPolicyArg) -> Self {
        match v {
            ZeroPolicyArg::Clamp => ZeroPolicy::ClampToMinPositive,
            ZeroPolicyArg::AddOne => ZeroPolicy::AddOne,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ContrastArg {
    /// Zero-mean log contrast (natural images)
    Log,
    /// Mean-centered raw levels (synthetic lattices)
    Linear,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PaletteArg {
    Grayscale,
    Binary,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum WindowArg {
    None,
    Hann,
}

impl From<WindowArg> for Window {
    fn from(v: WindowArg) -> Self {
        match v {
            WindowArg::None => Window::None,
            WindowArg::Hann => Window::Hann,
        }
    }
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Output directory, created if missing
    #[arg(long)]
    pub out: PathBuf,
    /// Master seed (default 1, or the config file's seed)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses all cores
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Image files and/or directories (.pgm, or raw 16-bit frames)
    #[arg(long, num_args = 1.., required = true)]
    pub input: Vec<PathBuf>,
    /// Raw frame width
    #[arg(long, default_value_t = 1536)]
    pub width: usize,
    /// Raw frame height
    #[arg(long, default_value_t = 1024)]
    pub height: usize,
    /// Raw frame byte order
    #[arg(long, value_enum, default_value_t = ByteOrderArg::Big)]
    pub byte_order: ByteOrderArg,
    /// Replacement for zero intensities before the log
    #[arg(long, value_enum, default_value_t = ZeroPolicyArg::Clamp)]
    pub zero_policy: ZeroPolicyArg,
    /// Field fed to the pipeline
    #[arg(long, value_enum, default_value_t = ContrastArg::Log)]
    pub contrast: ContrastArg,
}

#[derive(Debug, Args)]
pub struct PixstatsArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    /// Pixel sizes N, comma separated
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4, 8, 16, 32])]
    pub scales: Vec<usize>,
    /// Patches sampled per image at each scale
    #[arg(long, default_value_t = 32)]
    pub patches_per_image: usize,
    /// Histogram lower edge
    #[arg(long, default_value_t = -6.0, allow_hyphen_values = true)]
    pub hist_lo: f64,
    /// Histogram upper edge
    #[arg(long, default_value_t = 6.0)]
    pub hist_hi: f64,
    /// Histogram bin count
    #[arg(long, default_value_t = 121)]
    pub bins: usize,
}

#[derive(Debug, Args)]
pub struct GradstatsArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    /// Pixel sizes N, comma separated
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4, 8, 16, 32])]
    pub scales: Vec<usize>,
    /// Patches sampled per image at each scale
    #[arg(long, default_value_t = 32)]
    pub patches_per_image: usize,
    /// Divide each derivative component by its pooled standard deviation
    #[arg(long, action = ArgAction::SetTrue)]
    pub standardize_components: bool,
    /// Histogram lower edge
    #[arg(long, default_value_t = 0.0)]
    pub hist_lo: f64,
    /// Histogram upper edge
    #[arg(long, default_value_t = 6.0)]
    pub hist_hi: f64,
    /// Histogram bin count
    #[arg(long, default_value_t = 121)]
    pub bins: usize,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    /// Patch side M (power of two)
    #[arg(long, default_value_t = 128)]
    pub patch_size: usize,
    /// Patches sampled per image
    #[arg(long, default_value_t = 32)]
    pub patches_per_image: usize,
    /// Subtract each patch's mean before transforming
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub demean: bool,
    /// Apodization window
    #[arg(long, value_enum, default_value_t = WindowArg::None)]
    pub window: WindowArg,
    /// Omit the central axes from ring averages (dataset edge artifacts)
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub exclude_axes: bool,
    /// Lowest ring of the slope fit (default 4)
    #[arg(long)]
    pub fit_lo: Option<f64>,
    /// Highest ring of the slope fit (default patch-size/4)
    #[arg(long)]
    pub fit_hi: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Key-value config file; flags below override its keys
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Lattice side L
    #[arg(long)]
    pub side: Option<usize>,
    /// Power-law source exponent
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Smallest patch size
    #[arg(long)]
    pub n_min: Option<usize>,
    /// Largest patch size (default side/2)
    #[arg(long)]
    pub n_max: Option<usize>,
    /// Fixed patch size; switches to the delta source
    #[arg(long)]
    pub fixed_size: Option<usize>,
    #[arg(long, value_enum)]
    pub palette: Option<PaletteArg>,
    /// Largest grayscale level
    #[arg(long)]
    pub i_max: Option<u16>,
    /// Probe patch side l
    #[arg(long)]
    pub probe_patch: Option<usize>,
    /// Probe patches per checkpoint
    #[arg(long)]
    pub probe_count: Option<usize>,
    /// Slope tolerance for stationarity
    #[arg(long)]
    pub tol: Option<f64>,
    /// Hard cap on stamps per image
    #[arg(long)]
    pub step_cap: Option<u64>,
    /// Images to generate
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Fixed stamps per image instead of stationarity detection
    #[arg(long)]
    pub steps: Option<u64>,
    /// Relative amplitude stability required at the reference ring
    #[arg(long, default_value_t = 0.05)]
    pub amp_tol: f64,
    /// Steps before the first stationarity probe
    #[arg(long)]
    pub first_checkpoint: Option<u64>,
    /// Lowest ring of the reported slope fit (default: probe band)
    #[arg(long)]
    pub fit_lo: Option<f64>,
    /// Highest ring of the reported slope fit (default: probe band)
    #[arg(long)]
    pub fit_hi: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Key-value config file; flags below override its keys
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Source exponents, comma separated
    #[arg(long, value_delimiter = ',', default_values_t = [2.5f64, 3.0, 3.5])]
    pub gammas: Vec<f64>,
    /// Lattice side L (default 1024)
    #[arg(long)]
    pub side: Option<usize>,
    #[arg(long)]
    pub n_min: Option<usize>,
    #[arg(long)]
    pub n_max: Option<usize>,
    /// Palette (default binary)
    #[arg(long, value_enum)]
    pub palette: Option<PaletteArg>,
    #[arg(long)]
    pub i_max: Option<u16>,
    #[arg(long)]
    pub probe_patch: Option<usize>,
    #[arg(long)]
    pub probe_count: Option<usize>,
    /// Patches pooled for the final stationary spectrum
    #[arg(long)]
    pub measure_count: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    pub amp_tol: f64,
    /// Steps before the first stationarity probe
    #[arg(long)]
    pub first_checkpoint: Option<u64>,
    #[arg(long)]
    pub step_cap: Option<u64>,
    /// Lowest ring of the reported slope fits (default: probe band)
    #[arg(long)]
    pub fit_lo: Option<f64>,
    /// Highest ring of the reported slope fits (default: probe band)
    #[arg(long)]
    pub fit_hi: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CollapseArgs {
    #[command(flatten)]
    pub sweep: SweepArgs,
    /// Common slope the rescaled spectra must share
    #[arg(long, default_value_t = -5.0, allow_hyphen_values = true)]
    pub target: f64,
    /// Allowed deviation from the target
    #[arg(long, default_value_t = 0.5)]
    pub tolerance: f64,
}

impl Command {
    fn threads(&self) -> usize {
        match self {
            Command::Pixstats(a) => a.common.threads,
            Command::Gradstats(a) => a.common.threads,
            Command::Spectrum(a) => a.common.threads,
            Command::Simulate(a) => a.common.threads,
            Command::Sweep(a) => a.common.threads,
            Command::Collapse(a) => a.sweep.common.threads,
        }
    }
}

/// Parses argv-style arguments and runs the selected command.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Input(e.to_string()))?;
    run(cli)
}

/// Runs a parsed invocation inside its own thread pool.
pub fn run(cli: Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.command.threads())
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Pixstats(a) => cmd_pixstats(a),
        Command::Gradstats(a) => cmd_gradstats(a),
        Command::Spectrum(a) => cmd_spectrum(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Collapse(a) => cmd_collapse(a),
    })
}

const RAW_EXTENSIONS: [&str; 5] = ["iml", "imc", "raw", "img", "bin"];

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| {
            let e = e.to_ascii_lowercase();
            e == "pgm" || RAW_EXTENSIONS.contains(&e.as_str())
        })
        .unwrap_or(false)
}

/// Expands directories (sorted) and keeps explicit files as given.
fn resolve_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for item in inputs {
        let meta = fs::metadata(item).map_err(|e| Error::io(item, e))?;
        if meta.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(item)
                .map_err(|e| Error::io(item, e))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && is_image_file(p))
                .collect();
            entries.sort();
            files.extend(entries);
        } else {
            files.push(item.clone());
        }
    }
    if files.is_empty() {
        return Err(Error::Input("no input images found".into()));
    }
    Ok(files)
}

fn load_field(path: &Path, dataset: &DatasetArgs) -> Result<ContrastImage> {
    let is_pgm = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.eq_ignore_ascii_case("pgm"))
        .unwrap_or(false);
    let img = if is_pgm {
        read_pgm(path)?
    } else {
        read_raw_u16(path, dataset.width, dataset.height, dataset.byte_order.into())?
    };
    match dataset.contrast {
        ContrastArg::Log => to_contrast(&img, dataset.zero_policy.into()),
        ContrastArg::Linear => {
            ContrastImage::from_centered_levels(img.width, img.height, &img.data)
        }
    }
}

fn checked_scales(scales: &[usize]) -> Result<()> {
    if scales.is_empty() {
        return Err(Error::Input("need at least one scale".into()));
    }
    for (i, s) in scales.iter().enumerate() {
        if scales[..i].contains(s) {
            return Err(Error::Input(format!("duplicate scale {s}")));
        }
    }
    Ok(())
}

fn out_dir(common: &CommonArgs) -> Result<&Path> {
    fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
    Ok(&common.out)
}

fn write_reference_csv(
    path: &Path,
    kind: ReferencePdf,
    lo: f64,
    hi: f64,
    bins: usize,
) -> Result<()> {
    let width = (hi - lo) / bins as f64;
    let mut out = String::from("bin_center,mass\n");
    for i in 0..bins {
        let center = lo + (i as f64 + 0.5) * width;
        let mass = reference_pdf(kind, center)? * width;
        out.push_str(&format!("{center},{mass}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn joined_paths(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(";")
}

fn joined<T: std::fmt::Display>(values: &[T]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn dataset_pairs(dataset: &DatasetArgs, files: &[PathBuf]) -> Vec<(&'static str, String)> {
    vec![
        ("input", joined_paths(files)),
        ("width", dataset.width.to_string()),
        ("height", dataset.height.to_string()),
        (
            "byte_order",
            match dataset.byte_order {
                ByteOrderArg::Big => "big".into(),
                ByteOrderArg::Little => "little".into(),
            },
        ),
        (
            "zero_policy",
            match dataset.zero_policy {
                ZeroPolicyArg::Clamp => "clamp".into(),
                ZeroPolicyArg::AddOne => "add-one".into(),
            },
        ),
        (
            "contrast",
            match dataset.contrast {
                ContrastArg::Log => "log".into(),
                ContrastArg::Linear => "linear".into(),
            },
        ),
    ]
}

fn cmd_pixstats(a: PixstatsArgs) -> Result<()> {
    use rayon::prelude::*;
    checked_scales(&a.scales)?;
    let out = out_dir(&a.common)?;
    let seed = a.common.seed.unwrap_or(1);
    let files = resolve_inputs(&a.dataset.input)?;
    // One task per image; scales consume the image's stream in order.
    let per_image: Vec<Vec<Vec<f64>>> = files
        .par_iter()
        .enumerate()
        .map(|(index, path)| {
            let field = load_field(path, &a.dataset)?;
            let mut rng = stream_rng(seed, index as u64);
            let mut columns = Vec::with_capacity(a.scales.len());
            for &scale in &a.scales {
                let patches = sample_patches(
                    field.width,
                    field.height,
                    scale,
                    a.patches_per_image,
                    0,
                    &mut rng,
                )?;
                let values = patches
                    .iter()
                    .map(|p| coarse_pixel(&field, p))
                    .collect::<Result<Vec<f64>>>()?;
                columns.push(values);
            }
            Ok(columns)
        })
        .collect::<Result<_>>()?;
    for (k, &scale) in a.scales.iter().enumerate() {
        let pooled: Vec<f64> = per_image
            .iter()
            .flat_map(|columns| columns[k].iter().copied())
            .collect();
        let sample = standardize(scale, &pooled)?;
        let hist = histogram(&sample.values, a.hist_lo, a.hist_hi, a.bins)?;
        hist.write_csv(&out.join(format!("pixels_N{scale}.csv")))?;
        println!(
            "pixels_N{scale}: {} samples in range, sigma {:.6}",
            hist.in_range, sample.sigma
        );
    }
    write_reference_csv(
        &out.join("gaussian_reference.csv"),
        ReferencePdf::StandardGaussian,
        a.hist_lo,
        a.hist_hi,
        a.bins,
    )?;
    let mut pairs = vec![("command", "pixstats".to_string())];
    pairs.extend(dataset_pairs(&a.dataset, &files));
    pairs.extend([
        ("scales", joined(&a.scales)),
        ("patches_per_image", a.patches_per_image.to_string()),
        ("hist_lo", a.hist_lo.to_string()),
        ("hist_hi", a.hist_hi.to_string()),
        ("bins", a.bins.to_string()),
        ("seed", seed.to_string()),
    ]);
    write_resolved(&out.join("run.cfg"), &pairs)
}

fn cmd_gradstats(a: GradstatsArgs) -> Result<()> {
    use rayon::prelude::*;
    checked_scales(&a.scales)?;
    let out = out_dir(&a.common)?;
    let seed = a.common.seed.unwrap_or(1);
    let files = resolve_inputs(&a.dataset.input)?;
    // Per scale: (dx, dy, magnitude) triples pooled over images.
    let per_image: Vec<Vec<Vec<(f64, f64, f64)>>> = files
        .par_iter()
        .enumerate()
        .map(|(index, path)| {
            let field = load_field(path, &a.dataset)?;
            let mut rng = stream_rng(seed, index as u64);
            let mut columns = Vec::with_capacity(a.scales.len());
            for &scale in &a.scales {
                // Margin = scale keeps all four neighbor patches inside.
                let patches = sample_patches(
                    field.width,
                    field.height,
                    scale,
                    a.patches_per_image,
                    scale,
                    &mut rng,
                )?;
                let values = patches
                    .iter()
                    .map(|p| gradient_at(&field, p))
                    .collect::<Result<Vec<_>>>()?;
                columns.push(values);
            }
            Ok(columns)
        })
        .collect::<Result<_>>()?;
    for (k, &scale) in a.scales.iter().enumerate() {
        let pooled: Vec<(f64, f64, f64)> = per_image
            .iter()
            .flat_map(|columns| columns[k].iter().copied())
            .collect();
        let magnitudes: Vec<f64> = if a.standardize_components {
            let dx: Vec<f64> = pooled.iter().map(|v| v.0).collect();
            let dy: Vec<f64> = pooled.iter().map(|v| v.1).collect();
            let sx = standardize(scale, &dx)?.sigma;
            let sy = standardize(scale, &dy)?.sigma;
            pooled
                .iter()
                .map(|v| ((v.0 / sx).powi(2) + (v.1 / sy).powi(2)).sqrt())
                .collect()
        } else {
            pooled.iter().map(|v| v.2).collect()
        };
        let hist = histogram(&magnitudes, a.hist_lo, a.hist_hi, a.bins)?;
        hist.write_csv(&out.join(format!("gradients_N{scale}.csv")))?;
        println!(
            "gradients_N{scale}: {} samples in range (above range: {})",
            hist.in_range, hist.above
        );
    }
    write_reference_csv(
        &out.join("rayleigh_reference.csv"),
        ReferencePdf::Rayleigh,
        a.hist_lo.max(0.0),
        a.hist_hi,
        a.bins,
    )?;
    let mut pairs = vec![("command", "gradstats".to_string())];
    pairs.extend(dataset_pairs(&a.dataset, &files));
    pairs.extend([
        ("scales", joined(&a.scales)),
        ("patches_per_image", a.patches_per_image.to_string()),
        (
            "standardize_components",
            a.standardize_components.to_string(),
        ),
        ("hist_lo", a.hist_lo.to_string()),
        ("hist_hi", a.hist_hi.to_string()),
        ("bins", a.bins.to_string()),
        ("seed", seed.to_string()),
    ]);
    write_resolved(&out.join("run.cfg"), &pairs)
}

fn cmd_spectrum(a: SpectrumArgs) -> Result<()> {
    use rayon::prelude::*;
    let out = out_dir(&a.common)?;
    let seed = a.common.seed.unwrap_or(1);
    let files = resolve_inputs(&a.dataset.input)?;
    let window: Window = a.window.into();
    let parts: Vec<PowerSpectrum2D> = files
        .par_iter()
        .enumerate()
        .map(|(index, path)| {
            let field = load_field(path, &a.dataset)?;
            let mut rng = stream_rng(seed, index as u64);
            let patches = sample_patches(
                field.width,
                field.height,
                a.patch_size,
                a.patches_per_image,
                0,
                &mut rng,
            )?;
            let fields: Vec<SquareField> = patches
                .iter()
                .map(|p| SquareField::from_patch(&field, p))
                .collect::<Result<_>>()?;
            power_spectrum_2d_windowed(&fields, a.demean, window)
        })
        .collect::<Result<_>>()?;
    let merged = merge_power_spectra(&parts)?;
    let radial = azimuthal_average(&merged, a.exclude_axes);
    let (default_lo, default_hi) = default_fit_range(a.patch_size);
    let f_lo = a.fit_lo.unwrap_or(default_lo);
    let f_hi = a.fit_hi.unwrap_or(default_hi);
    let fit = fit_slope(&radial, f_lo, f_hi)?;
    merged.write_csv(&out.join("spectrum2d.csv"))?;
    radial.write_csv(&out.join("spectrum1d.csv"))?;
    fit.write_csv(&out.join("slope.csv"))?;
    println!(
        "spectrum: {} patches, slope {:.4} (r2 {:.4}) over rings {}..{}",
        merged.count, fit.slope, fit.r_squared, f_lo, f_hi
    );
    let mut pairs = vec![("command", "spectrum".to_string())];
    pairs.extend(dataset_pairs(&a.dataset, &files));
    pairs.extend([
        ("patch_size", a.patch_size.to_string()),
        ("patches_per_image", a.patches_per_image.to_string()),
        ("demean", a.demean.to_string()),
        (
            "window",
            match a.window {
                WindowArg::None => "none".into(),
                WindowArg::Hann => "hann".into(),
            },
        ),
        ("exclude_axes", a.exclude_axes.to_string()),
        ("fit_lo", f_lo.to_string()),
        ("fit_hi", f_hi.to_string()),
        ("seed", seed.to_string()),
    ]);
    write_resolved(&out.join("run.cfg"), &pairs)
}

/// Merges the config file (if any) with flag overrides at key level and
/// re-validates the result. Flags switching the source or palette kind
/// clear the other kind's keys.
#[allow(clippy::too_many_arguments)]
fn resolve_sim_config(
    config: Option<&PathBuf>,
    side: Option<usize>,
    gamma: Option<f64>,
    n_min: Option<usize>,
    n_max: Option<usize>,
    fixed_size: Option<usize>,
    palette: Option<PaletteArg>,
    i_max: Option<u16>,
    probe_patch: Option<usize>,
    probe_count: Option<usize>,
    tol: Option<f64>,
    step_cap: Option<u64>,
    seed: Option<u64>,
) -> Result<SimConfig> {
    let mut map = match config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_kv(&text)?
        }
        None => BTreeMap::new(),
    };
    if fixed_size.is_some() && (gamma.is_some() || n_min.is_some() || n_max.is_some()) {
        return Err(Error::Config(
            "--fixed-size conflicts with --gamma/--n-min/--n-max".into(),
        ));
    }
    if i_max.is_some() && matches!(palette, Some(PaletteArg::Binary)) {
        return Err(Error::Config("--i-max conflicts with --palette binary".into()));
    }
    if fixed_size.is_some() {
        map.insert("source.kind".into(), "delta".into());
        for key in ["gamma", "n_min", "n_max"] {
            map.remove(key);
        }
    } else if gamma.is_some() || n_min.is_some() || n_max.is_some() {
        map.insert("source.kind".into(), "power_law".into());
        map.remove("fixed_size");
    }
    match palette {
        Some(PaletteArg::Binary) => {
            map.insert("palette.kind".into(), "binary".into());
            map.remove("i_max");
        }
        Some(PaletteArg::Grayscale) => {
            map.insert("palette.kind".into(), "grayscale".into());
        }
        None => {}
    }
    if i_max.is_some() {
        map.insert("palette.kind".into(), "grayscale".into());
    }
    let mut set = |key: &str, value: Option<String>| {
        if let Some(value) = value {
            map.insert(key.to_string(), value);
        }
    };
    set("side", side.map(|v| v.to_string()));
    set("gamma", gamma.map(|v| v.to_string()));
    set("n_min", n_min.map(|v| v.to_string()));
    set("n_max", n_max.map(|v| v.to_string()));
    set("fixed_size", fixed_size.map(|v| v.to_string()));
    set("i_max", i_max.map(|v| v.to_string()));
    set("probe.l", probe_patch.map(|v| v.to_string()));
    set("probe.count", probe_count.map(|v| v.to_string()));
    set("tol", tol.map(|v| v.to_string()));
    set("step_cap", step_cap.map(|v| v.to_string()));
    set("seed", seed.map(|v| v.to_string()));
    let text: String = map
        .iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect();
    SimConfig::from_text(&text)
}

fn palette_name(palette: &Palette) -> String {
    match palette {
        Palette::Grayscale { .. } => "grayscale".into(),
        Palette::Binary => "binary".into(),
    }
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let cfg = resolve_sim_config(
        a.config.as_ref(),
        a.side,
        a.gamma,
        a.n_min,
        a.n_max,
        a.fixed_size,
        a.palette,
        a.i_max,
        a.probe_patch,
        a.probe_count,
        a.tol,
        a.step_cap,
        a.common.seed,
    )?;
    let out = out_dir(&a.common)?;
    let mut probe = ProbeSettings::for_patch(cfg.probe_l, cfg.probe_count);
    probe.amp_tol = a.amp_tol;
    if let Some(first) = a.first_checkpoint {
        probe.first_checkpoint = first;
    }
    let steps = match a.steps {
        Some(n) => StepsPolicy::Fixed(n),
        None => StepsPolicy::UntilStationary {
            probe,
            tol: cfg.tol,
            step_cap: cfg.step_cap,
        },
    };
    let members = generate_ensemble(
        a.count,
        cfg.side,
        &cfg.source,
        &cfg.palette,
        &steps,
        cfg.seed,
    )?;
    for (index, member) in members.iter().enumerate() {
        member
            .state
            .write_snapshot(&out.join(format!("snapshot_{index:03}.pgm")), &cfg.palette)?;
        if let Some(report) = &member.report {
            report.write_csv(&out.join(format!("convergence_{index:03}.csv")))?;
            println!(
                "image {index}: {} after {} steps (final slope {:.4})",
                if report.converged {
                    "stationary"
                } else {
                    "NOT stationary"
                },
                member.state.steps_taken(),
                report.final_slope
            );
        } else {
            println!(
                "image {index}: {} steps (fixed budget)",
                member.state.steps_taken()
            );
        }
    }
    let mut measure_probe = probe;
    if let Some(lo) = a.fit_lo {
        measure_probe.f_lo = lo;
    }
    if let Some(hi) = a.fit_hi {
        measure_probe.f_hi = hi;
    }
    let (spec2, radial, fit) = ensemble_spectrum(&members, &measure_probe, cfg.seed)?;
    spec2.write_csv(&out.join("spectrum2d.csv"))?;
    radial.write_csv(&out.join("spectrum1d.csv"))?;
    match fit {
        Some(fit) => {
            fit.write_csv(&out.join("slope.csv"))?;
            println!(
                "ensemble spectrum: slope {:.4} (r2 {:.4}) over rings {}..{}",
                fit.slope, fit.r_squared, fit.f_lo, fit.f_hi
            );
        }
        None => println!("ensemble spectrum has too little mass to fit a slope"),
    }
    cfg.write(&out.join("config.cfg"))?;
    let pairs = vec![
        ("command", "simulate".to_string()),
        ("count", a.count.to_string()),
        (
            "steps",
            match a.steps {
                Some(n) => n.to_string(),
                None => "until-stationary".into(),
            },
        ),
        ("amp_tol", a.amp_tol.to_string()),
        ("first_checkpoint", probe.first_checkpoint.to_string()),
        ("fit_lo", measure_probe.f_lo.to_string()),
        ("fit_hi", measure_probe.f_hi.to_string()),
    ];
    write_resolved(&out.join("run.cfg"), &pairs)
}

fn sweep_settings_from(a: &SweepArgs) -> Result<(SweepSettings, SimConfig)> {
    if a.gammas.is_empty() {
        return Err(Error::Input("need at least one gamma".into()));
    }
    for (i, g) in a.gammas.iter().enumerate() {
        if a.gammas[..i].contains(g) {
            return Err(Error::Input(format!("duplicate gamma {g}")));
        }
    }
    // Binary palette is the sweep default unless a config file or flag
    // says otherwise.
    let palette = a.palette.or(if a.config.is_none() {
        Some(PaletteArg::Binary)
    } else {
        None
    });
    let cfg = resolve_sim_config(
        a.config.as_ref(),
        a.side.or(Some(1024)),
        None,
        a.n_min,
        a.n_max,
        None,
        palette,
        a.i_max,
        a.probe_patch,
        a.probe_count,
        a.tol,
        a.step_cap,
        a.common.seed,
    )?;
    let (n_min, n_max) = match cfg.source {
        SourceSpec::PowerLaw { n_min, n_max, .. } => (n_min, n_max),
        SourceSpec::Delta { .. } => (1, cfg.side / 2),
    };
    let mut probe = ProbeSettings::for_patch(cfg.probe_l, cfg.probe_count);
    probe.amp_tol = a.amp_tol;
    if let Some(first) = a.first_checkpoint {
        probe.first_checkpoint = first;
    }
    let fit_band = if a.fit_lo.is_some() || a.fit_hi.is_some() {
        Some((
            a.fit_lo.unwrap_or(probe.f_lo),
            a.fit_hi.unwrap_or(probe.f_hi),
        ))
    } else {
        None
    };
    let settings = SweepSettings {
        side: cfg.side,
        palette: cfg.palette,
        n_min,
        n_max,
        probe,
        measure_count: a.measure_count.unwrap_or(4 * cfg.probe_count),
        tol: cfg.tol,
        step_cap: cfg.step_cap,
        fit_band,
    };
    Ok((settings, cfg))
}

fn write_sweep_outputs(
    out: &Path,
    results: &[SweepResult],
    settings: &SweepSettings,
    a: &SweepArgs,
    seed: u64,
) -> Result<()> {
    for r in results {
        r.spectrum
            .write_csv(&out.join(format!("spectrum_gamma{}.csv", r.gamma)))?;
        r.rescaled
            .write_csv(&out.join(format!("rescaled_gamma{}.csv", r.gamma)))?;
        let raw = r.slope_raw.map(|f| f.slope).unwrap_or(f64::NAN);
        let rescaled = r.slope_rescaled.map(|f| f.slope).unwrap_or(f64::NAN);
        println!(
            "gamma {}: slope {raw:.4}, rescaled {rescaled:.4}, {} at {} steps",
            r.gamma,
            if r.converged {
                "stationary"
            } else {
                "NOT stationary"
            },
            r.steps
        );
    }
    write_sweep_summary(results, &out.join("sweep_summary.csv"))?;
    let (fit_lo, fit_hi) = settings
        .fit_band
        .unwrap_or((settings.probe.f_lo, settings.probe.f_hi));
    let pairs = vec![
        ("command", "sweep".to_string()),
        ("gammas", joined(&a.gammas)),
        ("side", settings.side.to_string()),
        ("palette", palette_name(&settings.palette)),
        ("n_min", settings.n_min.to_string()),
        ("n_max", settings.n_max.to_string()),
        ("probe.l", settings.probe.patch.to_string()),
        ("probe.count", settings.probe.count.to_string()),
        ("measure_count", settings.measure_count.to_string()),
        ("tol", settings.tol.to_string()),
        ("amp_tol", settings.probe.amp_tol.to_string()),
        ("first_checkpoint", settings.probe.first_checkpoint.to_string()),
        ("step_cap", settings.step_cap.to_string()),
        ("fit_lo", fit_lo.to_string()),
        ("fit_hi", fit_hi.to_string()),
        ("seed", seed.to_string()),
    ];
    write_resolved(&out.join("run.cfg"), &pairs)
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let (settings, cfg) = sweep_settings_from(&a)?;
    let out = out_dir(&a.common)?;
    let results = gamma_sweep(&a.gammas, &settings, cfg.seed)?;
    write_sweep_outputs(out, &results, &settings, &a, cfg.seed)
}

fn cmd_collapse(a: CollapseArgs) -> Result<()> {
    let (settings, cfg) = sweep_settings_from(&a.sweep)?;
    let out = out_dir(&a.sweep.common)?;
    let results = gamma_sweep(&a.sweep.gammas, &settings, cfg.seed)?;
    write_sweep_outputs(out, &results, &settings, &a.sweep, cfg.seed)?;
    let report = collapse_check(&results, a.target, a.tolerance)?;
    report.write_csv(&out.join("collapse.csv"))?;
    fs::write(out.join("collapse.txt"), report.to_text())
        .map_err(|e| Error::io(&out.join("collapse.txt"), e))?;
    print!("{}", report.to_text());
    Ok(())
}
