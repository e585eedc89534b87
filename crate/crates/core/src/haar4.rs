//! The four-channel Haar tight frame.
//!
//! `W = ½ [W₁; W₂; W₃; W₄]` where each `W_k` is a single-level orthogonal
//! Haar transform applied along one axis with one pairing offset. Every
//! pair `(a, b)` maps to an approximation `(a + b)/√2` and a detail
//! `(b − a)/√2`; the approximation is stored at the position of `a` and the
//! detail at the position of `b`:
//!
//! | channel | axis       | pairs                    | detail positions |
//! |---------|------------|--------------------------|------------------|
//! | 0       | horizontal | `(2n, 2n+1)`             | odd columns      |
//! | 1       | horizontal | `(2n+1, (2n+2) mod C)`   | even columns     |
//! | 2       | vertical   | `(2m, 2m+1)`             | odd rows         |
//! | 3       | vertical   | `(2m+1, (2m+2) mod R)`   | even rows        |
//!
//! This layout is part of the checkpoint contract: spline coefficients are
//! learned against it.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::{Error, Image, Result};

pub const CHANNELS: usize = 4;

/// Per-channel coefficients `W_k x`, each with the image's dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameCoeffs {
    pub channels: [Image; CHANNELS],
}

impl FrameCoeffs {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        FrameCoeffs {
            channels: std::array::from_fn(|_| Image::zeros(rows, cols)),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.channels[0].dims()
    }

    pub fn norm_sq(&self) -> f64 {
        self.channels.iter().map(Image::norm_sq).sum()
    }
}

fn check_even(rows: usize, cols: usize) -> Result<()> {
    if rows == 0 || cols == 0 || rows % 2 != 0 || cols % 2 != 0 {
        return Err(Error::invalid(format!(
            "Haar frame needs even, non-zero dimensions, got {rows}x{cols} (pad first)"
        )));
    }
    Ok(())
}

/// Whether `(i, j)` holds a detail coefficient in channel `k`.
#[inline]
pub fn is_detail(k: usize, i: usize, j: usize) -> bool {
    match k {
        0 => j % 2 == 1,
        1 => j % 2 == 0,
        2 => i % 2 == 1,
        _ => i % 2 == 0,
    }
}

/// Boolean mask of the detail positions `H_k` of channel `k` (0-based).
pub fn detail_mask(k: usize, rows: usize, cols: usize) -> Result<Vec<bool>> {
    if k >= CHANNELS {
        return Err(Error::invalid(format!("channel index {k} out of range 0..4")));
    }
    check_even(rows, cols)?;
    Ok((0..rows * cols).map(|n| is_detail(k, n / cols, n % cols)).collect())
}

/// Pair `(first, second)` index of each butterfly along an axis of length
/// `len` with the given offset.
#[inline]
fn pairs(len: usize, offset: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..len / 2).map(move |n| {
        let a = 2 * n + offset;
        (a, (a + 1) % len)
    })
}

/// `W_k x` for a single channel.
pub fn analysis_channel(x: &Image, k: usize) -> Result<Image> {
    let (rows, cols) = x.dims();
    check_even(rows, cols)?;
    if k >= CHANNELS {
        return Err(Error::invalid(format!("channel index {k} out of range 0..4")));
    }
    let mut u = Image::zeros(rows, cols);
    let offset = k % 2;
    if k < 2 {
        for i in 0..rows {
            for (a, b) in pairs(cols, offset) {
                let (va, vb) = (x[(i, a)], x[(i, b)]);
                u[(i, a)] = (va + vb) * FRAC_1_SQRT_2;
                u[(i, b)] = (vb - va) * FRAC_1_SQRT_2;
            }
        }
    } else {
        for (a, b) in pairs(rows, offset) {
            for j in 0..cols {
                let (va, vb) = (x[(a, j)], x[(b, j)]);
                u[(a, j)] = (va + vb) * FRAC_1_SQRT_2;
                u[(b, j)] = (vb - va) * FRAC_1_SQRT_2;
            }
        }
    }
    Ok(u)
}

/// `out += W_kᵀ u`
pub fn synthesis_channel_into(u: &Image, k: usize, out: &mut Image) -> Result<()> {
    let (rows, cols) = u.dims();
    check_even(rows, cols)?;
    out.ensure_dims((rows, cols))?;
    if k >= CHANNELS {
        return Err(Error::invalid(format!("channel index {k} out of range 0..4")));
    }
    let offset = k % 2;
    if k < 2 {
        for i in 0..rows {
            for (a, b) in pairs(cols, offset) {
                let (approx, detail) = (u[(i, a)], u[(i, b)]);
                out[(i, a)] += (approx - detail) * FRAC_1_SQRT_2;
                out[(i, b)] += (approx + detail) * FRAC_1_SQRT_2;
            }
        }
    } else {
        for (a, b) in pairs(rows, offset) {
            for j in 0..cols {
                let (approx, detail) = (u[(a, j)], u[(b, j)]);
                out[(a, j)] += (approx - detail) * FRAC_1_SQRT_2;
                out[(b, j)] += (approx + detail) * FRAC_1_SQRT_2;
            }
        }
    }
    Ok(())
}

/// All four channels `W_k x`.
pub fn analysis(x: &Image) -> Result<FrameCoeffs> {
    Ok(FrameCoeffs {
        channels: [
            analysis_channel(x, 0)?,
            analysis_channel(x, 1)?,
            analysis_channel(x, 2)?,
            analysis_channel(x, 3)?,
        ],
    })
}

/// `Σ_k W_kᵀ u_k`, without the ¼ tight-frame factor.
pub fn synthesis(u: &FrameCoeffs) -> Result<Image> {
    let (rows, cols) = u.dims();
    let mut out = Image::zeros(rows, cols);
    for (k, ch) in u.channels.iter().enumerate() {
        ch.ensure_dims((rows, cols))?;
        synthesis_channel_into(ch, k, &mut out)?;
    }
    Ok(out)
}

/// Anisotropic TV with periodic differences, `Σ |∇ₓx| + |∇ᵧx|`.
pub fn anisotropic_tv(x: &Image) -> f64 {
    let (rows, cols) = x.dims();
    let mut tv = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            let v = x[(i, j)];
            tv += (x[(i, (j + 1) % cols)] - v).abs() + (x[((i + 1) % rows, j)] - v).abs();
        }
    }
    tv
}

/// `Σ_k Σ_{n ∈ H_k} |[W_k x]_n|`, which equals `anisotropic_tv(x) / √2`.
pub fn detail_l1(coeffs: &FrameCoeffs) -> f64 {
    let (_, cols) = coeffs.dims();
    coeffs
        .channels
        .iter()
        .enumerate()
        .map(|(k, ch)| {
            ch.as_slice()
                .iter()
                .enumerate()
                .filter(|(n, _)| is_detail(k, n / cols, n % cols))
                .map(|(_, v)| v.abs())
                .sum::<f64>()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use approx::assert_relative_eq;

    fn random_image(rows: usize, cols: usize, seed: u64) -> Image {
        let mut rng = SeededRng::new(seed);
        Image::from_fn(rows, cols, |_, _| rng.gaussian())
    }

    /// Dense `W_k` from the pairing rule, built row by row of the output.
    fn dense_channel(k: usize, rows: usize, cols: usize) -> Vec<Vec<f64>> {
        let n = rows * cols;
        let s = 0.5f64.sqrt();
        let mut w = vec![vec![0.0; n]; n];
        let idx = |i: usize, j: usize| i * cols + j;
        for i in 0..rows {
            for j in 0..cols {
                let (first, second) = match k {
                    0 if j % 2 == 0 => ((i, j), (i, j + 1)),
                    0 => ((i, j - 1), (i, j)),
                    1 if j % 2 == 1 => ((i, j), (i, (j + 1) % cols)),
                    1 => ((i, (j + cols - 1) % cols), (i, j)),
                    2 if i % 2 == 0 => ((i, j), (i + 1, j)),
                    2 => ((i - 1, j), (i, j)),
                    3 if i % 2 == 1 => ((i, j), ((i + 1) % rows, j)),
                    _ => (((i + rows - 1) % rows, j), (i, j)),
                };
                let row = &mut w[idx(i, j)];
                if (i, j) == first {
                    row[idx(first.0, first.1)] += s;
                    row[idx(second.0, second.1)] += s;
                } else {
                    row[idx(first.0, first.1)] -= s;
                    row[idx(second.0, second.1)] += s;
                }
            }
        }
        w
    }

    #[test]
    fn constant_image_has_zero_details() {
        let x = Image::filled(4, 6, 0.7);
        let u = analysis(&x).unwrap();
        for (k, ch) in u.channels.iter().enumerate() {
            for i in 0..4 {
                for j in 0..6 {
                    let expected = if is_detail(k, i, j) { 0.0 } else { 0.7 * 2f64.sqrt() };
                    assert_relative_eq!(ch[(i, j)], expected, epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn two_by_two_butterfly() {
        let x = Image::from_vec(2, 2, vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let u = analysis_channel(&x, 0).unwrap();
        let s = 2f64.sqrt();
        assert_relative_eq!(u[(0, 0)], 4.0 / s, epsilon = 1e-15);
        assert_relative_eq!(u[(0, 1)], 2.0 / s, epsilon = 1e-15);
        assert_relative_eq!(u[(1, 0)], 12.0 / s, epsilon = 1e-15);
        assert_relative_eq!(u[(1, 1)], 2.0 / s, epsilon = 1e-15);
    }

    #[test]
    fn channels_are_norm_preserving() {
        let x = random_image(8, 8, 1);
        for k in 0..CHANNELS {
            let u = analysis_channel(&x, k).unwrap();
            assert_relative_eq!(u.norm(), x.norm(), max_relative = 1e-12);
        }
    }

    #[test]
    fn synthesis_of_analysis_is_four_x() {
        let x = random_image(6, 10, 2);
        let back = synthesis(&analysis(&x).unwrap()).unwrap();
        assert!(back.max_abs_diff(&x.scaled(4.0)) <= 1e-12 * x.max_abs());
        assert_eq!(synthesis(&FrameCoeffs::zeros(4, 4)).unwrap(), Image::zeros(4, 4));
    }

    #[test]
    fn synthesis_matches_dense_transpose() {
        let (rows, cols) = (8, 8);
        let mut rng = SeededRng::new(3);
        let u = FrameCoeffs {
            channels: std::array::from_fn(|_| Image::from_fn(rows, cols, |_, _| rng.gaussian())),
        };
        let fast = synthesis(&u).unwrap();
        let mut dense = vec![0.0; rows * cols];
        for k in 0..CHANNELS {
            let w = dense_channel(k, rows, cols);
            for (m, row) in w.iter().enumerate() {
                for (n, &v) in row.iter().enumerate() {
                    dense[n] += v * u.channels[k].as_slice()[m];
                }
            }
        }
        for (a, b) in fast.as_slice().iter().zip(&dense) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn analysis_matches_dense() {
        let x = random_image(4, 6, 8);
        for k in 0..CHANNELS {
            let w = dense_channel(k, 4, 6);
            let u = analysis_channel(&x, k).unwrap();
            for (m, row) in w.iter().enumerate() {
                let v: f64 = row.iter().zip(x.as_slice()).map(|(a, b)| a * b).sum();
                assert!((v - u.as_slice()[m]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn frame_is_redundant() {
        let mut u = FrameCoeffs::zeros(4, 4);
        u.channels[0][(0, 1)] = 1.0;
        let round = analysis(&synthesis(&u).unwrap()).unwrap();
        let quarter = FrameCoeffs {
            channels: round.channels.map(|c| c.scaled(0.25)),
        };
        assert_ne!(quarter, u);
        let err: f64 = (0..CHANNELS).map(|k| quarter.channels[k].dist_sq(&u.channels[k])).sum();
        assert!(err > 0.1);
    }

    #[test]
    fn masks_have_half_details() {
        for k in 0..CHANNELS {
            let mask = detail_mask(k, 6, 8).unwrap();
            assert_eq!(mask.iter().filter(|&&m| m).count(), 24);
        }
        assert_eq!(detail_mask(0, 2, 2).unwrap(), vec![false, true, false, true]);
        assert_eq!(detail_mask(1, 2, 2).unwrap(), vec![true, false, true, false]);
        assert!(detail_mask(4, 2, 2).is_err());
        assert!(detail_mask(0, 3, 2).is_err());
    }

    #[test]
    fn horizontal_masks_cover_each_difference_once() {
        // Enumerate each periodic horizontal neighbor pair on a 4x4 grid and
        // count how many detail positions (over channels 0 and 1) encode it.
        let (rows, cols) = (4, 4);
        let mut count = vec![0usize; rows * cols];
        for k in 0..2 {
            let mask = detail_mask(k, rows, cols).unwrap();
            for (n, &is_d) in mask.iter().enumerate() {
                if is_d {
                    let (i, j) = (n / cols, n % cols);
                    // detail at column j is the difference x[j] - x[j-1]
                    let left = (j + cols - 1) % cols;
                    count[i * cols + left] += 1;
                }
            }
        }
        assert!(count.iter().all(|&c| c == 1));
    }

    #[test]
    fn detail_l1_matches_tv() {
        for seed in 0..5 {
            let x = random_image(8, 8, 40 + seed);
            let lhs = detail_l1(&analysis(&x).unwrap());
            let rhs = anisotropic_tv(&x) * FRAC_1_SQRT_2;
            assert!((lhs - rhs).abs() <= 1e-10 * rhs.max(1.0));
        }
    }

    #[test]
    fn odd_dimensions_are_rejected() {
        assert!(analysis(&Image::zeros(3, 4)).is_err());
        assert!(analysis(&Image::zeros(4, 5)).is_err());
    }
}
