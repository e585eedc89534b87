//! Simulation harness: noise, metrics, phantoms, patches and datasets.

use rayon::prelude::*;

use crate::haar4;
use crate::linops::ConvOperator;
use crate::rng::SeededRng;
use crate::solver::{fppa_reconstruct, FppaConfig};
use crate::{Error, Image, Result};

/// Ground truth and its blurred, noisy measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub truth: Image,
    pub measured: Image,
}

/// `signal + e` with i.i.d. Gaussian `e` rescaled after drawing so that
/// `10 log₁₀(‖signal‖² / ‖e‖²)` equals `snr_db`. `+∞` adds no noise.
pub fn add_awgn(signal: &Image, snr_db: f64, seed: u64) -> Result<Image> {
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::invalid(format!("SNR must be a number or +inf, got {snr_db}")));
    }
    let energy = signal.norm_sq();
    if energy == 0.0 {
        return Err(Error::invalid("cannot set an SNR for an all-zero signal"));
    }
    if !energy.is_finite() {
        return Err(Error::invalid("signal has non-finite energy"));
    }
    if snr_db == f64::INFINITY {
        return Ok(signal.clone());
    }
    let mut rng = SeededRng::new(seed);
    let (rows, cols) = signal.dims();
    let noise = Image::from_fn(rows, cols, |_, _| rng.gaussian());
    let target = energy * 10f64.powf(-snr_db / 10.0);
    let drawn = noise.norm_sq();
    if drawn == 0.0 {
        return Err(Error::invalid("noise draw has zero energy"));
    }
    let scale = (target / drawn).sqrt();
    Ok(Image::lin_comb(1.0, signal, scale, &noise))
}

/// `10 log₁₀(‖reference‖² / ‖reference − estimate‖²)`; `+∞` when they agree.
pub fn snr_db(reference: &Image, estimate: &Image) -> Result<f64> {
    estimate.ensure_dims(reference.dims())?;
    let err = reference.dist_sq(estimate);
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (reference.norm_sq() / err).log10())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PhantomKind {
    /// Piecewise-constant elliptic nuclei on a dark background.
    Cells,
    /// Sum of smooth Gaussian blobs.
    Blobs,
    /// Cells with smooth blobs and a faint oriented texture on top.
    Texture,
    /// A single constant level.
    Flat,
}

impl std::str::FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cells" => Ok(PhantomKind::Cells),
            "blobs" => Ok(PhantomKind::Blobs),
            "texture" => Ok(PhantomKind::Texture),
            "flat" => Ok(PhantomKind::Flat),
            _ => Err(Error::invalid(format!(
                "unknown phantom kind {s:?} (expected cells, blobs, texture or flat)"
            ))),
        }
    }
}

impl std::fmt::Display for PhantomKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PhantomKind::Cells => "cells",
            PhantomKind::Blobs => "blobs",
            PhantomKind::Texture => "texture",
            PhantomKind::Flat => "flat",
        })
    }
}

fn add_cells(img: &mut Image, rng: &mut SeededRng) {
    let (rows, cols) = img.dims();
    let scale = rows.min(cols) as f64;
    let count = 3 + rng.below(1 + (rows * cols) / 256).min(12);
    for _ in 0..count {
        let ci = rng.uniform_in(0.0, rows as f64);
        let cj = rng.uniform_in(0.0, cols as f64);
        let a = scale * rng.uniform_in(0.06, 0.18);
        let b = a * rng.uniform_in(0.6, 1.0);
        let theta = rng.uniform_in(0.0, std::f64::consts::PI);
        let level = rng.uniform_in(0.45, 1.0);
        let (s, c) = theta.sin_cos();
        for i in 0..rows {
            for j in 0..cols {
                let di = i as f64 - ci;
                let dj = j as f64 - cj;
                let u = c * di + s * dj;
                let v = -s * di + c * dj;
                if (u / a).powi(2) + (v / b).powi(2) <= 1.0 && img[(i, j)] < level {
                    img[(i, j)] = level;
                }
            }
        }
    }
}

fn blob_field(rows: usize, cols: usize, rng: &mut SeededRng) -> Image {
    let scale = rows.min(cols) as f64;
    let count = 4 + rng.below(6);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..count)
        .map(|_| {
            (
                rng.uniform_in(0.0, rows as f64),
                rng.uniform_in(0.0, cols as f64),
                scale * rng.uniform_in(0.05, 0.2),
                rng.uniform_in(0.3, 1.0),
            )
        })
        .collect();
    let mut img = Image::from_fn(rows, cols, |i, j| {
        blobs
            .iter()
            .map(|&(ci, cj, w, amp)| {
                let d2 = (i as f64 - ci).powi(2) + (j as f64 - cj).powi(2);
                amp * (-d2 / (2.0 * w * w)).exp()
            })
            .sum()
    });
    let peak = img.max_abs();
    if peak > 1.0 {
        img = img.scaled(1.0 / peak);
    }
    img
}

/// Synthetic test image with intensities in `[0, 1]`, deterministic in `seed`.
pub fn phantom(kind: PhantomKind, rows: usize, cols: usize, seed: u64) -> Result<Image> {
    if rows == 0 || cols == 0 || rows % 2 != 0 || cols % 2 != 0 {
        return Err(Error::invalid(format!(
            "phantom dims must be even and nonzero, got {rows}×{cols}"
        )));
    }
    let mut rng = SeededRng::new(seed);
    let img = match kind {
        PhantomKind::Flat => Image::filled(rows, cols, rng.uniform()),
        PhantomKind::Cells => {
            let mut img = Image::filled(rows, cols, rng.uniform_in(0.0, 0.1));
            add_cells(&mut img, &mut rng);
            img
        }
        PhantomKind::Blobs => blob_field(rows, cols, &mut rng),
        PhantomKind::Texture => {
            let mut img = Image::filled(rows, cols, rng.uniform_in(0.0, 0.1));
            add_cells(&mut img, &mut rng);
            let blobs = blob_field(rows, cols, &mut rng);
            let freq = rng.uniform_in(0.3, 0.9);
            let angle = rng.uniform_in(0.0, std::f64::consts::PI);
            let (s, c) = angle.sin_cos();
            Image::from_fn(rows, cols, |i, j| {
                let wave = (freq * (c * i as f64 + s * j as f64)).sin();
                0.7 * img[(i, j)] + 0.3 * blobs[(i, j)] + 0.05 * wave
            })
        }
    };
    Ok(img.map(|v| v.clamp(0.0, 1.0)))
}

/// Centered `size × size` crop. An odd margin puts the extra pixel on the
/// bottom/right, i.e. the start index is `(dim − size) / 2` rounded down.
pub fn extract_patch(x: &Image, size: usize) -> Result<Image> {
    let (rows, cols) = x.dims();
    if size == 0 || size % 2 != 0 {
        return Err(Error::invalid(format!(
            "patch size must be even and nonzero, got {size}"
        )));
    }
    if size > rows || size > cols {
        return Err(Error::invalid(format!("patch size {size} exceeds image {rows}×{cols}")));
    }
    x.crop((rows - size) / 2, (cols - size) / 2, size, size)
}

/// Runs `f` on `x` padded to even dims by edge replication, then crops back.
pub fn with_even_padding(x: &Image, f: impl FnOnce(&Image) -> Result<Image>) -> Result<Image> {
    let (rows, cols) = x.dims();
    let (padded, changed) = x.pad_to_even();
    let out = f(&padded)?;
    if changed {
        out.crop(0, 0, rows, cols)
    } else {
        Ok(out)
    }
}

/// Where a dataset came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Provenance {
    pub seed: u64,
    pub snr_db: f64,
    pub patch: Option<usize>,
}

/// Training pairs sharing one operator.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub pairs: Vec<TrainingPair>,
    pub op: ConvOperator,
    pub provenance: Provenance,
}

/// Per-item seeds drawn from one master seed.
pub fn derive_seeds(seed: u64, count: usize) -> Vec<u64> {
    let mut rng = SeededRng::new(seed);
    (0..count).map(|_| rng.next_u64()).collect()
}

impl Dataset {
    /// `y_ℓ = H x_ℓ + e_ℓ`, with noise seeds derived from `seed`.
    pub fn simulate(truths: Vec<Image>, op: ConvOperator, snr_db: f64, seed: u64) -> Result<Self> {
        let seeds = derive_seeds(seed, truths.len());
        let pairs = truths
            .into_iter()
            .zip(seeds)
            .map(|(truth, s)| {
                let measured = add_awgn(&op.apply(&truth)?, snr_db, s)?;
                Ok(TrainingPair { truth, measured })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            pairs,
            op,
            provenance: Provenance {
                seed,
                snr_db,
                patch: None,
            },
        })
    }

    /// `count` phantoms of one kind with seeds derived from `seed`.
    pub fn phantoms(
        kind: PhantomKind,
        count: usize,
        size: usize,
        op: &ConvOperator,
        snr_db: f64,
        seed: u64,
    ) -> Result<Self> {
        let seeds = derive_seeds(seed, 2);
        let truths = derive_seeds(seeds[0], count)
            .into_iter()
            .map(|s| phantom(kind, size, size, s))
            .collect::<Result<Vec<_>>>()?;
        let mut ds = Dataset::simulate(truths, op.resized(size, size)?, snr_db, seeds[1])?;
        ds.provenance.seed = seed;
        ds.provenance.patch = Some(size);
        Ok(ds)
    }

    pub fn measurements(&self) -> Vec<&Image> {
        self.pairs.iter().map(|p| &p.measured).collect()
    }
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) || count == 0 {
        return Err(Error::invalid(format!("bad log grid [{lo}, {hi}] × {count}")));
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    let ratio = (hi / lo).ln() / (count - 1) as f64;
    Ok((0..count).map(|i| lo * (ratio * i as f64).exp()).collect())
}

/// Default regularization sweep for images scaled to `[0, 1]`.
pub fn default_tau_grid() -> Vec<f64> {
    log_grid(1e-4, 1e-1, 10).expect("constant grid is valid")
}

/// Best FPPA reconstruction over a τ grid, judged against the truth.
#[derive(Clone, Debug)]
pub struct OracleFppa {
    pub tau: f64,
    pub snr_db: f64,
    pub x: Image,
}

pub fn oracle_tau_fppa(
    op: &ConvOperator,
    pair: &TrainingPair,
    taus: &[f64],
    max_iters: usize,
    rel_tol: f64,
) -> Result<OracleFppa> {
    if taus.is_empty() {
        return Err(Error::invalid("τ grid is empty"));
    }
    let runs = taus
        .par_iter()
        .map(|&tau| {
            let cfg = FppaConfig {
                max_iters,
                rel_tol,
                ..FppaConfig::with_default_step(op, tau)
            };
            let out = fppa_reconstruct(op, &pair.measured, cfg)?;
            let snr = snr_db(&pair.truth, &out.x)?;
            Ok(OracleFppa {
                tau,
                snr_db: snr,
                x: out.x,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = None::<OracleFppa>;
    for run in runs {
        if best.as_ref().map_or(true, |b| run.snr_db > b.snr_db) {
            best = Some(run);
        }
    }
    Ok(best.expect("grid is non-empty"))
}

/// Anisotropic TV of an image; re-exported for callers checking phantoms.
pub fn total_variation(x: &Image) -> f64 {
    haar4::anisotropic_tv(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::gaussian_psf;

    fn ramp() -> Image {
        Image::from_fn(6, 8, |i, j| 0.1 + (i * 8 + j) as f64 / 50.0)
    }

    #[test]
    fn awgn_hits_requested_snr() {
        let x = ramp();
        for &snr in &[0.0, 12.5, 30.0, 80.0] {
            let y = add_awgn(&x, snr, 11).unwrap();
            let realized = 10.0 * (x.norm_sq() / y.dist_sq(&x)).log10();
            assert!((realized - snr).abs() <= 1e-9, "{realized} vs {snr}");
        }
        assert_eq!(add_awgn(&x, f64::INFINITY, 3).unwrap(), x);
        assert_eq!(add_awgn(&x, 30.0, 3).unwrap(), add_awgn(&x, 30.0, 3).unwrap());
        assert_ne!(add_awgn(&x, 30.0, 3).unwrap(), add_awgn(&x, 30.0, 4).unwrap());
        assert!(add_awgn(&Image::zeros(4, 4), 30.0, 1).is_err());
        assert!(add_awgn(&x, f64::NAN, 1).is_err());
    }

    #[test]
    fn snr_examples() {
        let x = ramp();
        let close = x.scaled(1.0 + 1e-3);
        assert!((snr_db(&x, &close).unwrap() - 60.0).abs() < 1e-9);
        assert!(snr_db(&x, &Image::zeros(6, 8)).unwrap().abs() < 1e-12);
        assert_eq!(snr_db(&x, &x).unwrap(), f64::INFINITY);
        assert!(snr_db(&x, &Image::zeros(2, 2)).is_err());

        let mut rng = SeededRng::new(2);
        let a = Image::from_fn(4, 6, |_, _| rng.gaussian());
        let b = Image::from_fn(4, 6, |_, _| rng.gaussian());
        let (mut num, mut den) = (0.0, 0.0);
        for n in 0..a.len() {
            num += a.as_slice()[n] * a.as_slice()[n];
            den += (a.as_slice()[n] - b.as_slice()[n]).powi(2);
        }
        assert!((snr_db(&a, &b).unwrap() - 10.0 * (num / den).log10()).abs() < 1e-12);
    }

    #[test]
    fn phantoms_are_bounded_and_seeded() {
        for kind in [
            PhantomKind::Cells,
            PhantomKind::Blobs,
            PhantomKind::Texture,
            PhantomKind::Flat,
        ] {
            for seed in 0..100 {
                let p = phantom(kind, 16, 20, seed).unwrap();
                assert!(p.as_slice().iter().all(|v| (0.0..=1.0).contains(v)), "{kind} {seed}");
            }
            assert_eq!(phantom(kind, 16, 16, 9).unwrap(), phantom(kind, 16, 16, 9).unwrap());
            assert_ne!(phantom(kind, 16, 16, 9).unwrap(), phantom(kind, 16, 16, 10).unwrap());
        }
        let flat = phantom(PhantomKind::Flat, 8, 8, 5).unwrap();
        assert_eq!(total_variation(&flat), 0.0);
        let cells = phantom(PhantomKind::Cells, 32, 32, 1).unwrap();
        assert!(total_variation(&cells) > 0.0);
        assert!(phantom(PhantomKind::Cells, 7, 8, 1).is_err());
        assert_eq!("texture".parse::<PhantomKind>().unwrap(), PhantomKind::Texture);
        assert!("stripes".parse::<PhantomKind>().is_err());
    }

    #[test]
    fn patch_geometry() {
        let x = Image::from_fn(8, 8, |i, j| (i * 8 + j) as f64);
        assert_eq!(extract_patch(&x, 8).unwrap(), x);
        let p = extract_patch(&x, 4).unwrap();
        assert_eq!(p[(0, 0)], x[(2, 2)]);
        assert_eq!(p[(3, 3)], x[(5, 5)]);
        let big = Image::from_fn(256, 256, |i, j| (i * 256 + j) as f64);
        let p = extract_patch(&big, 64).unwrap();
        assert_eq!(p[(0, 0)], big[(96, 96)]);
        assert_eq!(p[(63, 63)], big[(159, 159)]);
        let odd = Image::from_fn(7, 9, |i, j| (i * 9 + j) as f64);
        assert_eq!(extract_patch(&odd, 4).unwrap()[(0, 0)], odd[(1, 2)]);
        assert!(extract_patch(&x, 10).is_err());
        assert!(extract_patch(&x, 3).is_err());
    }

    #[test]
    fn padding_round_trip() {
        let x = Image::from_fn(5, 7, |i, j| (i + j) as f64);
        let seen = with_even_padding(&x, |p| {
            assert_eq!(p.dims(), (6, 8));
            Ok(p.clone())
        })
        .unwrap();
        assert_eq!(seen, x);
    }

    #[test]
    fn dataset_is_consistent() {
        let op = ConvOperator::new(gaussian_psf(5, 1.0).unwrap(), 16, 16).unwrap();
        let ds = Dataset::phantoms(PhantomKind::Cells, 3, 16, &op, 30.0, 4).unwrap();
        assert_eq!(ds.pairs.len(), 3);
        for p in &ds.pairs {
            let clean = ds.op.apply(&p.truth).unwrap();
            let snr = 10.0 * (clean.norm_sq() / p.measured.dist_sq(&clean)).log10();
            assert!((snr - 30.0).abs() < 1e-9);
        }
        let again = Dataset::phantoms(PhantomKind::Cells, 3, 16, &op, 30.0, 4).unwrap();
        assert_eq!(ds.pairs, again.pairs);
        assert_ne!(ds.pairs[0].truth, ds.pairs[1].truth);
    }

    #[test]
    fn log_grid_endpoints() {
        let g = default_tau_grid();
        assert_eq!(g.len(), 10);
        assert!((g[0] - 1e-4).abs() < 1e-18 && (g[9] - 1e-1).abs() < 1e-15);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        assert!(log_grid(0.0, 1.0, 3).is_err());
    }

    #[test]
    fn oracle_picks_the_best_tau() {
        let op = ConvOperator::new(gaussian_psf(5, 1.0).unwrap(), 16, 16).unwrap();
        let ds = Dataset::phantoms(PhantomKind::Cells, 1, 16, &op, 20.0, 2).unwrap();
        let taus = [1e-3, 1e-2];
        let best = oracle_tau_fppa(&ds.op, &ds.pairs[0], &taus, 30, 1e-6).unwrap();
        for &tau in &taus {
            let cfg = FppaConfig {
                max_iters: 30,
                rel_tol: 1e-6,
                ..FppaConfig::with_default_step(&ds.op, tau)
            };
            let x = fppa_reconstruct(&ds.op, &ds.pairs[0].measured, cfg).unwrap().x;
            assert!(snr_db(&ds.pairs[0].truth, &x).unwrap() <= best.snr_db);
        }
        assert!(oracle_tau_fppa(&ds.op, &ds.pairs[0], &[], 10, 1e-6).is_err());
    }
}
