//! Acceptance gate. One test per criterion; each prints a single
//! `acceptance N (name): PASS/FAIL — detail` line (shown with
//! `--nocapture`) and asserts the stated tolerance, so the harness
//! verdict per test is the pass/fail record.
//!
//! Numeric criteria run through the public CLI into scratch
//! directories under `CARGO_TARGET_TMPDIR`. Every pipeline run is
//! cached per process and reused by the determinism criterion, which
//! repeats the identical command with a different `--threads` value
//! and requires byte-identical outputs.
//!
//! The natural-image criterion needs a locally supplied van Hateren
//! directory (`VAN_HATEREN_DIR`); without one it falls back, as
//! specified, to the same pipeline on a γ = 3 patch-stamping
//! ensemble.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, LazyLock, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use scalestats::cli::run_from;
use scalestats::deadleaves::{SizeSampler, SourceSpec};
use scalestats::image::{write_pgm, IntensityImage};
use scalestats::scaling::{detect_periodic_peaks, detect_periodic_peaks_2d};
use scalestats::spectral::{dft2_naive, fft2, PowerSpectrum2D, Spectrum1D, SquareField};
use statrs::distribution::{ChiSquared, ContinuousCDF};

const MASTER_SEED: &str = "20260816";
const PRIMARY_THREADS: &str = "1";
const ALT_THREADS: &str = "2";

fn report(criterion: usize, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("acceptance {criterion} ({name}): {verdict} — {detail}");
    assert!(pass, "acceptance {criterion} ({name}): {verdict} — {detail}");
}

// ---------------------------------------------------------------------------
// Shared pipeline runs
// ---------------------------------------------------------------------------

type ArgBuilder = fn(&Path, &str) -> Vec<String>;

fn scratch_root() -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn fresh_dir(name: &str) -> PathBuf {
    let dir = scratch_root().join(name);
    if dir.exists() {
        fs::remove_dir_all(&dir).unwrap();
    }
    fs::create_dir_all(dir.parent().unwrap()).unwrap();
    dir
}

fn run_cli(args: Vec<String>) {
    let mut argv = vec!["scalestats".to_string()];
    argv.extend(args);
    run_from(argv).unwrap();
}

static RUNS: LazyLock<Mutex<HashMap<&'static str, Arc<OnceLock<PathBuf>>>>> =
    LazyLock::new(Default::default);

/// Runs the named pipeline once per process with the primary thread
/// count and returns its output directory.
fn shared_run(key: &'static str, build: ArgBuilder) -> PathBuf {
    let cell = RUNS.lock().unwrap().entry(key).or_default().clone();
    cell.get_or_init(|| {
        let out = fresh_dir(key);
        run_cli(build(&out, PRIMARY_THREADS));
        out
    })
    .clone()
}

/// Four 512×512 frames of quantized white Gaussian intensities.
fn noise_inputs() -> PathBuf {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = fresh_dir("inputs_noise");
        fs::create_dir_all(&dir).unwrap();
        for index in 0..4u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(9_000 + index);
            let law = Normal::new(32_768.0, 4_096.0).unwrap();
            let data: Vec<f64> = (0..512 * 512)
                .map(|_| {
                    let v: f64 = law.sample(&mut rng);
                    v.round().clamp(0.0, 65_535.0)
                })
                .collect();
            let img = IntensityImage::new(512, 512, data).unwrap();
            write_pgm(&img, &dir.join(format!("noise_{index}.pgm")), 65_535, true).unwrap();
        }
        dir
    })
    .clone()
}

fn args_noise_spectrum(out: &Path, threads: &str) -> Vec<String> {
    let inputs = noise_inputs();
    svec(&[
        "spectrum",
        "--input",
        inputs.to_str().unwrap(),
        "--patch-size",
        "128",
        "--patches-per-image",
        "50",
        "--contrast",
        "linear",
        "--seed",
        "4242",
        "--threads",
        threads,
        "--out",
        out.to_str().unwrap(),
    ])
}

fn args_gray_stationary(out: &Path, threads: &str) -> Vec<String> {
    svec(&[
        "simulate",
        "--side",
        "512",
        "--gamma",
        "3",
        "--n-min",
        "1",
        "--n-max",
        "256",
        "--palette",
        "grayscale",
        "--i-max",
        "255",
        "--probe-patch",
        "128",
        "--probe-count",
        "30",
        "--tol",
        "0.05",
        "--amp-tol",
        "0.05",
        "--first-checkpoint",
        "1000000",
        "--step-cap",
        "32000000",
        "--count",
        "100",
        "--fit-lo",
        "3",
        "--fit-hi",
        "12",
        "--seed",
        MASTER_SEED,
        "--threads",
        threads,
        "--out",
        out.to_str().unwrap(),
    ])
}

fn args_collapse_sweep(out: &Path, threads: &str) -> Vec<String> {
    svec(&[
        "collapse",
        "--gammas",
        "2.5,3,3.5",
        "--side",
        "1024",
        "--n-min",
        "1",
        "--n-max",
        "512",
        "--probe-patch",
        "128",
        "--probe-count",
        "30",
        "--measure-count",
        "120",
        "--tol",
        "0.05",
        "--amp-tol",
        "0.05",
        "--first-checkpoint",
        "8000000",
        "--step-cap",
        "64000000",
        "--fit-lo",
        "3",
        "--fit-hi",
        "12",
        "--target",
        "-5",
        "--tolerance",
        "0.5",
        "--seed",
        MASTER_SEED,
        "--threads",
        threads,
        "--out",
        out.to_str().unwrap(),
    ])
}

fn args_delta_peaks(out: &Path, threads: &str) -> Vec<String> {
    svec(&[
        "simulate",
        "--side",
        "1024",
        "--fixed-size",
        "32",
        "--palette",
        "grayscale",
        "--i-max",
        "255",
        "--probe-patch",
        "256",
        "--probe-count",
        "40",
        "--count",
        "8",
        "--tol",
        "0.05",
        "--amp-tol",
        "0.05",
        "--step-cap",
        "2000000",
        "--seed",
        MASTER_SEED,
        "--threads",
        threads,
        "--out",
        out.to_str().unwrap(),
    ])
}

/// Fixed-size runs share every knob except the size and the fit band,
/// which starts safely above the knee ring (probe/size) where the
/// spectrum turns over.
fn delta_slope_args(out: &Path, threads: &str, size: &str, fit_lo: &str) -> Vec<String> {
    svec(&[
        "simulate",
        "--side",
        "1024",
        "--fixed-size",
        size,
        "--palette",
        "grayscale",
        "--i-max",
        "255",
        "--probe-patch",
        "512",
        "--probe-count",
        "12",
        "--count",
        "3",
        "--tol",
        "0.05",
        "--amp-tol",
        "0.05",
        "--step-cap",
        "2000000",
        "--fit-lo",
        fit_lo,
        "--fit-hi",
        "128",
        "--seed",
        MASTER_SEED,
        "--threads",
        threads,
        "--out",
        out.to_str().unwrap(),
    ])
}

fn args_delta_slope_16(out: &Path, threads: &str) -> Vec<String> {
    delta_slope_args(out, threads, "16", "48")
}

fn args_delta_slope_32(out: &Path, threads: &str) -> Vec<String> {
    delta_slope_args(out, threads, "32", "24")
}

fn args_delta_slope_64(out: &Path, threads: &str) -> Vec<String> {
    delta_slope_args(out, threads, "64", "12")
}

/// γ = 3 ensemble for the dataset-free fallback. The minimum size is
/// raised to 10 because with single-pixel patches the scale-1
/// histogram is exactly the raw color law and cannot collapse onto the
/// coarse-grained scales; see the README's acceptance notes.
fn args_fallback_ensemble(out: &Path, threads: &str) -> Vec<String> {
    svec(&[
        "simulate",
        "--side",
        "512",
        "--gamma",
        "3",
        "--n-min",
        "10",
        "--n-max",
        "256",
        "--palette",
        "grayscale",
        "--i-max",
        "255",
        "--probe-patch",
        "128",
        "--probe-count",
        "30",
        "--count",
        "30",
        "--tol",
        "0.05",
        "--amp-tol",
        "0.05",
        "--first-checkpoint",
        "200000",
        "--step-cap",
        "6400000",
        "--fit-lo",
        "2",
        "--fit-hi",
        "8",
        "--seed",
        MASTER_SEED,
        "--threads",
        threads,
        "--out",
        out.to_str().unwrap(),
    ])
}

fn args_fallback_pixstats(out: &Path, threads: &str) -> Vec<String> {
    let ensemble = shared_run("fallback_ensemble", args_fallback_ensemble);
    svec(&[
        "pixstats",
        "--input",
        ensemble.to_str().unwrap(),
        "--scales",
        "1,2,4,8",
        "--patches-per-image",
        "2000",
        "--contrast",
        "linear",
        "--seed",
        "11",
        "--threads",
        threads,
        "--out",
        out.to_str().unwrap(),
    ])
}

fn van_hateren_dir() -> Option<PathBuf> {
    let dir = PathBuf::from(std::env::var_os("VAN_HATEREN_DIR")?);
    dir.is_dir().then_some(dir)
}

fn args_vh_spectrum(out: &Path, threads: &str) -> Vec<String> {
    let data = van_hateren_dir().expect("VAN_HATEREN_DIR");
    svec(&[
        "spectrum",
        "--input",
        data.to_str().unwrap(),
        "--patch-size",
        "128",
        "--patches-per-image",
        "30",
        "--fit-lo",
        "4",
        "--fit-hi",
        "40",
        "--seed",
        MASTER_SEED,
        "--threads",
        threads,
        "--out",
        out.to_str().unwrap(),
    ])
}

fn args_vh_pixstats(out: &Path, threads: &str) -> Vec<String> {
    let data = van_hateren_dir().expect("VAN_HATEREN_DIR");
    svec(&[
        "pixstats",
        "--input",
        data.to_str().unwrap(),
        "--scales",
        "1,2,4,8",
        "--patches-per-image",
        "200",
        "--seed",
        MASTER_SEED,
        "--threads",
        threads,
        "--out",
        out.to_str().unwrap(),
    ])
}

fn args_vh_gradstats(out: &Path, threads: &str) -> Vec<String> {
    let data = van_hateren_dir().expect("VAN_HATEREN_DIR");
    svec(&[
        "gradstats",
        "--input",
        data.to_str().unwrap(),
        "--scales",
        "1,2,4,8",
        "--patches-per-image",
        "200",
        "--standardize-components",
        "--seed",
        MASTER_SEED,
        "--threads",
        threads,
        "--out",
        out.to_str().unwrap(),
    ])
}

fn svec(parts: &[&str]) -> Vec<String> {
    parts.iter().map(|s| s.to_string()).collect()
}

/// Every CLI run the suite performs, in execution order.
fn all_pipelines() -> Vec<(&'static str, ArgBuilder)> {
    let mut list: Vec<(&'static str, ArgBuilder)> = vec![
        ("noise_spectrum", args_noise_spectrum),
        ("gray_stationary", args_gray_stationary),
        ("collapse_sweep", args_collapse_sweep),
        ("delta_peaks", args_delta_peaks),
        ("delta_slope_16", args_delta_slope_16),
        ("delta_slope_32", args_delta_slope_32),
        ("delta_slope_64", args_delta_slope_64),
    ];
    if van_hateren_dir().is_some() {
        list.push(("vh_spectrum", args_vh_spectrum));
        list.push(("vh_pixstats", args_vh_pixstats));
        list.push(("vh_gradstats", args_vh_gradstats));
    } else {
        list.push(("fallback_ensemble", args_fallback_ensemble));
        list.push(("fallback_pixstats", args_fallback_pixstats));
    }
    list
}

// ---------------------------------------------------------------------------
// CSV helpers
// ---------------------------------------------------------------------------

fn read_csv_column(path: &Path, column: usize) -> Vec<f64> {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|line| {
            line.split(',')
                .nth(column)
                .unwrap()
                .parse::<f64>()
                .unwrap()
        })
        .collect()
}

fn read_slope(dir: &Path) -> f64 {
    read_csv_column(&dir.join("slope.csv"), 0)[0]
}

fn read_spectrum_1d(path: &Path) -> Spectrum1D {
    Spectrum1D {
        freqs: read_csv_column(path, 0),
        power: read_csv_column(path, 1),
        counts: read_csv_column(path, 2).iter().map(|&c| c as usize).collect(),
    }
}

fn read_spectrum_2d(path: &Path) -> PowerSpectrum2D {
    let text = fs::read_to_string(path).unwrap();
    let mut power = Vec::new();
    let mut rows = 0usize;
    for line in text.lines() {
        rows += 1;
        power.extend(line.split(',').map(|v| v.parse::<f64>().unwrap()));
    }
    assert_eq!(power.len(), rows * rows, "spectrum grid must be square");
    PowerSpectrum2D {
        size: rows,
        power,
        count: 1,
    }
}

/// Largest cumulative-mass gap between two histograms on one bin grid.
fn ks_between(a: &Path, b: &Path) -> f64 {
    let ma = read_csv_column(a, 1);
    let mb = read_csv_column(b, 1);
    assert_eq!(ma.len(), mb.len());
    let mut gap: f64 = 0.0;
    let (mut ca, mut cb) = (0.0, 0.0);
    for (x, y) in ma.iter().zip(&mb) {
        ca += x;
        cb += y;
        gap = gap.max((ca - cb).abs());
    }
    gap
}

/// Histogram mass in bins whose center lies beyond `cut`.
fn tail_mass_beyond(path: &Path, cut: f64, two_sided: bool) -> f64 {
    let centers = read_csv_column(path, 0);
    let masses = read_csv_column(path, 1);
    centers
        .iter()
        .zip(&masses)
        .filter(|(c, _)| if two_sided { c.abs() > cut } else { **c > cut })
        .map(|(_, m)| m)
        .sum()
}

fn random_field(size: usize, seed: u64) -> SquareField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..size * size)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    SquareField::new(size, data).unwrap()
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

#[test]
fn a1_fft_oracle_equivalence() {
    let mut worst: f64 = 0.0;
    for &size in &[2usize, 4, 8, 16, 32, 64] {
        for rep in 0..200u64 {
            let field = random_field(size, size as u64 * 1_000 + rep);
            let fast = fft2(&field).unwrap();
            let slow = dft2_naive(&field);
            let norm = slow.iter().map(|c| c.norm()).fold(0.0, f64::max);
            let diff = fast
                .iter()
                .zip(&slow)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max)
                / norm;
            worst = worst.max(diff);
        }
    }
    report(
        1,
        "fft oracle equivalence",
        worst < 1e-9,
        &format!("max relative deviation {worst:.3e} over 200 fields × sizes 2..64 (tol 1e-9)"),
    );
}

#[test]
fn a2_parseval_identity() {
    let mut worst: f64 = 0.0;
    for rep in 0..100u64 {
        let field = random_field(128, 70_000 + rep);
        let spatial: f64 = field.data.iter().map(|x| x * x).sum();
        let spectral: f64 = fft2(&field)
            .unwrap()
            .iter()
            .map(|c| c.norm_sqr())
            .sum::<f64>()
            / (128.0 * 128.0);
        worst = worst.max((spatial - spectral).abs() / spatial);
    }
    report(
        2,
        "parseval identity",
        worst < 1e-9,
        &format!("max relative deviation {worst:.3e} over 100 128×128 patches (tol 1e-9)"),
    );
}

#[test]
fn a3_white_noise_slope_is_flat() {
    let dir = shared_run("noise_spectrum", args_noise_spectrum);
    let slope = read_slope(&dir);
    report(
        3,
        "white-noise control",
        slope.abs() < 0.1,
        &format!("pipeline slope {slope:.4} on 200 Gaussian 128×128 patches (|slope| < 0.1)"),
    );
}

#[test]
fn a4_power_law_sampler_distribution() {
    let source = SourceSpec::PowerLaw {
        gamma: 3.0,
        n_min: 1,
        n_max: 256,
    };
    let sampler = SizeSampler::new(&source).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE);
    let draws = 1_000_000usize;
    let mut counts = vec![0u64; 257];
    for _ in 0..draws {
        counts[sampler.sample(&mut rng)] += 1;
    }

    // Independent pmf: p(n) = n^{-3} / Σ_{1..256} k^{-3}.
    let z: f64 = (1..=256).map(|n| (n as f64).powi(-3)).sum();
    let pmf = |n: usize| (n as f64).powi(-3) / z;

    // Pool the monotone tail so every chi-square bin expects ≥ 5.
    let total = draws as f64;
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut tail_obs, mut tail_exp) = (0.0, 0.0);
    for n in 1..=256 {
        let expected = total * pmf(n);
        if expected >= 5.0 && tail_exp == 0.0 {
            bins.push((counts[n] as f64, expected));
        } else {
            tail_obs += counts[n] as f64;
            tail_exp += expected;
        }
    }
    bins.push((tail_obs, tail_exp));
    let chi2: f64 = bins.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = (bins.len() - 1) as f64;
    let p_value = 1.0 - ChiSquared::new(dof).unwrap().cdf(chi2);

    let p1_exact = pmf(1);
    let p1_hat = counts[1] as f64 / total;
    let p1_err = (p1_hat - p1_exact).abs();

    report(
        4,
        "power-law sampler",
        p_value > 0.001 && p1_err <= 0.002,
        &format!(
            "chi-square p {p_value:.3} over {} bins (need > 0.001); \
             |p̂(1) − p(1)| = {p1_err:.5} (tol 0.002)",
            bins.len()
        ),
    );
}

#[test]
fn a5_stationary_grayscale_slope() {
    let dir = shared_run("gray_stationary", args_gray_stationary);
    let slope = read_slope(&dir);
    report(
        5,
        "stationary grayscale slope",
        (-2.3..=-1.7).contains(&slope),
        &format!("γ = 3, 100 images of 512²: ensemble slope {slope:.4} (band [−2.3, −1.7])"),
    );
}

#[test]
fn a6_collapse_law() {
    let dir = shared_run("collapse_sweep", args_collapse_sweep);
    let gammas = read_csv_column(&dir.join("collapse.csv"), 0);
    let deviations = read_csv_column(&dir.join("collapse.csv"), 4);
    assert_eq!(gammas.len(), 3);
    let max_dev = deviations.iter().fold(0.0f64, |a, &b| a.max(b));
    let all_pass = fs::read_to_string(dir.join("collapse.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .all(|line| line.ends_with(",true"));

    let raw = read_csv_column(&dir.join("sweep_summary.csv"), 1);
    let rescaled = read_csv_column(&dir.join("sweep_summary.csv"), 2);
    let summary_gammas = read_csv_column(&dir.join("sweep_summary.csv"), 0);
    let identity_err = summary_gammas
        .iter()
        .zip(raw.iter().zip(&rescaled))
        .map(|(g, (r, s))| ((s - r) + g).abs())
        .fold(0.0f64, f64::max);

    report(
        6,
        "collapse law",
        all_pass && identity_err <= 1e-9,
        &format!(
            "rescaled slopes within ±0.5 of −5 for γ ∈ {{2.5, 3, 3.5}}: max deviation \
             {max_dev:.3}; identity slope_rescaled = slope_raw − γ to {identity_err:.2e} \
             (tol 1e-9)"
        ),
    );
}

#[test]
fn a7_delta_source_periodicity_and_slope() {
    // The periodic modulation of an occluded fixed-size source is a few
    // percent deep, so detection runs at a matching prominence on a
    // 320-patch averaged spectrum.
    let peaks_dir = shared_run("delta_peaks", args_delta_peaks);
    let radial = read_spectrum_1d(&peaks_dir.join("spectrum1d.csv"));
    let spacing_1d = detect_periodic_peaks(&radial, 1.02).modal_spacing;
    let grid = read_spectrum_2d(&peaks_dir.join("spectrum2d.csv"));
    let spacing_2d = detect_periodic_peaks_2d(&grid, 1.02).modal_spacing;

    let mut slopes = Vec::new();
    for (size, key, build) in [
        (16, "delta_slope_16", args_delta_slope_16 as ArgBuilder),
        (32, "delta_slope_32", args_delta_slope_32),
        (64, "delta_slope_64", args_delta_slope_64),
    ] {
        let dir = shared_run(key, build);
        slopes.push((size, read_slope(&dir)));
    }
    let max_slope_dev = slopes
        .iter()
        .map(|(_, s)| (s + 3.0).abs())
        .fold(0.0f64, f64::max);

    let pass = spacing_1d == Some(8) && spacing_2d == Some(8) && max_slope_dev <= 0.4;
    report(
        7,
        "delta source",
        pass,
        &format!(
            "fixed size 32 at probe 256: modal peak spacing 1D {spacing_1d:?} / 2D \
             {spacing_2d:?} (need 8 ring indices); probe-512 slopes {:?} within ±0.4 of −3 \
             (max deviation {max_slope_dev:.3})",
            slopes
                .iter()
                .map(|(n, s)| format!("n={n}: {s:.3}"))
                .collect::<Vec<_>>()
        ),
    );
}

#[test]
fn a8_natural_image_reproduction() {
    match van_hateren_dir() {
        Some(_) => a8_with_dataset(),
        None => a8_fallback(),
    }
}

fn a8_with_dataset() {
    let spec_dir = shared_run("vh_spectrum", args_vh_spectrum);
    let slope = read_slope(&spec_dir);
    let slope_ok = (-2.3..=-1.7).contains(&slope);

    let pix_dir = shared_run("vh_pixstats", args_vh_pixstats);
    let scales = [1usize, 2, 4, 8];
    let mut worst_ks: f64 = 0.0;
    for (i, a) in scales.iter().enumerate() {
        for b in &scales[i + 1..] {
            worst_ks = worst_ks.max(ks_between(
                &pix_dir.join(format!("pixels_N{a}.csv")),
                &pix_dir.join(format!("pixels_N{b}.csv")),
            ));
        }
    }

    let gauss_tail = 2.0 * statrs::distribution::Normal::new(0.0, 1.0).unwrap().cdf(-3.0);
    let pixel_tails_ok = scales.iter().all(|n| {
        tail_mass_beyond(&pix_dir.join(format!("pixels_N{n}.csv")), 3.0, true) > gauss_tail
    });

    let grad_dir = shared_run("vh_gradstats", args_vh_gradstats);
    let rayleigh_tail = (-4.5f64).exp();
    let gradient_tails_ok = scales.iter().all(|n| {
        tail_mass_beyond(&grad_dir.join(format!("gradients_N{n}.csv")), 3.0, false)
            > rayleigh_tail
    });

    report(
        8,
        "natural images",
        slope_ok && worst_ks < 0.05 && pixel_tails_ok && gradient_tails_ok,
        &format!(
            "slope {slope:.4} in [−2.3, −1.7]; worst pairwise KS {worst_ks:.4} < 0.05; \
             pixel tails beyond |3| exceed Gaussian {gauss_tail:.5}: {pixel_tails_ok}; \
             gradient tails beyond 3 exceed Rayleigh {rayleigh_tail:.5}: {gradient_tails_ok}"
        ),
    );
}

fn a8_fallback() {
    let ensemble = shared_run("fallback_ensemble", args_fallback_ensemble);
    let slope = read_slope(&ensemble);
    let slope_ok = (-2.3..=-1.7).contains(&slope);

    let pix_dir = shared_run("fallback_pixstats", args_fallback_pixstats);
    let scales = [1usize, 2, 4, 8];
    let mut worst_ks: f64 = 0.0;
    for (i, a) in scales.iter().enumerate() {
        for b in &scales[i + 1..] {
            worst_ks = worst_ks.max(ks_between(
                &pix_dir.join(format!("pixels_N{a}.csv")),
                &pix_dir.join(format!("pixels_N{b}.csv")),
            ));
        }
    }

    report(
        8,
        "natural images (dataset absent — γ = 3 ensemble fallback)",
        slope_ok && worst_ks < 0.05,
        &format!(
            "ensemble slope {slope:.4} in [−2.3, −1.7]; pixel histograms at scales \
             {{1, 2, 4, 8}}: worst pairwise KS {worst_ks:.4} < 0.05"
        ),
    );
}

#[test]
fn a9_thread_count_determinism() {
    let mut files_compared = 0usize;
    for (key, build) in all_pipelines() {
        let primary = shared_run(key, build);
        let alt = fresh_dir(&format!("{key}_alt"));
        run_cli(build(&alt, ALT_THREADS));

        let mut names: Vec<String> = fs::read_dir(&primary)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        let mut alt_names: Vec<String> = fs::read_dir(&alt)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        alt_names.sort();
        assert_eq!(names, alt_names, "{key}: file sets differ across thread counts");
        assert!(
            names.iter().any(|n| n.ends_with(".csv")),
            "{key}: run produced no CSV output"
        );
        for name in &names {
            let a = fs::read(primary.join(name)).unwrap();
            let b = fs::read(alt.join(name)).unwrap();
            assert_eq!(
                a, b,
                "{key}/{name}: bytes differ between --threads {PRIMARY_THREADS} and \
                 --threads {ALT_THREADS}"
            );
            files_compared += 1;
        }
        fs::remove_dir_all(&alt).unwrap();
    }
    report(
        9,
        "thread-count determinism",
        true,
        &format!(
            "{files_compared} output files byte-identical between --threads \
             {PRIMARY_THREADS} and --threads {ALT_THREADS} across {} pipeline runs",
            all_pipelines().len()
        ),
    );
}
