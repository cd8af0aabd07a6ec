//! Wavelet kernels: 1D lifting, multilevel 2D Mallat pyramids, and
//! mask-restricted synthesis.

mod mask;
mod pyramid;
mod region;

pub(crate) use mask::closure_chain;
pub use mask::{dilate_for_synthesis, BitGrid, LevelMaskSet};
pub use pyramid::{
    analyze_2d, level_of_position, synthesize_2d, CoefficientPyramid, Rect, Subband,
};
pub(crate) use pyramid::{band_of, check_dims};
pub use region::{synthesize_2d_region, RegionPlan};

use std::ops::Range;

use crate::error::{Error, Result};

// CDF 9/7 lifting factorization (irreversible JPEG2000 filter pair).
#[allow(clippy::excessive_precision)]
const ALPHA: f32 = -1.586_134_342_059_924;
#[allow(clippy::excessive_precision)]
const BETA: f32 = -0.052_980_118_572_961;
#[allow(clippy::excessive_precision)]
const GAMMA: f32 = 0.882_911_075_530_934;
#[allow(clippy::excessive_precision)]
const DELTA: f32 = 0.443_506_852_043_971;
#[allow(clippy::excessive_precision)]
const K: f32 = 1.230_174_104_914_001;
const INV_K: f32 = 1.0 / K;

/// Halo, in coefficient samples, read around a synthesis window. Every
/// output inside the window depends on at most 2 coefficients per side;
/// one more keeps clamped edge reads away from the valid outputs.
const WINDOW_HALO: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WaveletKind {
    /// Biorthogonal CDF 9/7 pair, symmetric boundary extension.
    Cdf97,
    /// Two-tap pair with approx = (a+b)/2, detail = (a-b)/2.
    Haar,
}

impl WaveletKind {
    /// Half-width of the synthesis filter support, in samples.
    pub fn synthesis_half_width(self) -> usize {
        match self {
            WaveletKind::Cdf97 => 4,
            WaveletKind::Haar => 0,
        }
    }

    /// Radius, in coefficient samples, of the coefficients one output sample
    /// of a single synthesis step depends on.
    pub(crate) fn dependency_radius(self) -> usize {
        match self {
            WaveletKind::Cdf97 => 2,
            WaveletKind::Haar => 0,
        }
    }
}

/// One analysis step. `low` and `high` must each hold `signal.len() / 2` samples.
pub(crate) fn forward_line(kind: WaveletKind, signal: &[f32], low: &mut [f32], high: &mut [f32]) {
    let half = signal.len() / 2;
    debug_assert!(low.len() == half && high.len() == half);
    match kind {
        WaveletKind::Haar => {
            for n in 0..half {
                let (a, b) = (signal[2 * n], signal[2 * n + 1]);
                low[n] = (a + b) * 0.5;
                high[n] = (a - b) * 0.5;
            }
        }
        WaveletKind::Cdf97 => {
            for n in 0..half {
                low[n] = signal[2 * n];
                high[n] = signal[2 * n + 1];
            }
            lift_forward(low, high);
        }
    }
}

// Whole-sample symmetric extension reduces to clamping the one-sided
// neighbour index: d[-1] mirrors to d[0] and s[len] to s[len-1].
fn lift_forward(s: &mut [f32], d: &mut [f32]) {
    let n = s.len();
    for i in 0..n {
        d[i] += ALPHA * (s[i] + s[(i + 1).min(n - 1)]);
    }
    for i in 0..n {
        s[i] += BETA * (d[i.saturating_sub(1)] + d[i]);
    }
    for i in 0..n {
        d[i] += GAMMA * (s[i] + s[(i + 1).min(n - 1)]);
    }
    for i in 0..n {
        s[i] += DELTA * (d[i.saturating_sub(1)] + d[i]);
    }
    for v in s.iter_mut() {
        *v *= INV_K;
    }
    for v in d.iter_mut() {
        *v *= K;
    }
}

fn lift_inverse(s: &mut [f32], d: &mut [f32]) {
    let n = s.len();
    for v in s.iter_mut() {
        *v *= K;
    }
    for v in d.iter_mut() {
        *v *= INV_K;
    }
    for i in 0..n {
        s[i] -= DELTA * (d[i.saturating_sub(1)] + d[i]);
    }
    for i in 0..n {
        d[i] -= GAMMA * (s[i] + s[(i + 1).min(n - 1)]);
    }
    for i in 0..n {
        s[i] -= BETA * (d[i.saturating_sub(1)] + d[i]);
    }
    for i in 0..n {
        d[i] -= ALPHA * (s[i] + s[(i + 1).min(n - 1)]);
    }
}

/// Scratch buffers for windowed synthesis.
#[derive(Default)]
pub(crate) struct SynthScratch {
    s: Vec<f32>,
    d: Vec<f32>,
}

/// Synthesizes the output samples `out` of a line of `2 * half` samples.
///
/// Only coefficients within a small halo of `out` are read, and each output
/// is computed by the same arithmetic regardless of the window, so a partial
/// window reproduces the full-line result bit for bit.
pub(crate) fn synthesize_window(
    kind: WaveletKind,
    half: usize,
    low: impl Fn(usize) -> f32,
    high: impl Fn(usize) -> f32,
    out: Range<usize>,
    scratch: &mut SynthScratch,
    mut put: impl FnMut(usize, f32),
) {
    if out.is_empty() {
        return;
    }
    debug_assert!(out.end <= 2 * half);
    match kind {
        WaveletKind::Haar => {
            for p in out {
                let n = p / 2;
                let (a, d) = (low(n), high(n));
                put(p, if p % 2 == 0 { a + d } else { a - d });
            }
        }
        WaveletKind::Cdf97 => {
            let w0 = (out.start / 2).saturating_sub(WINDOW_HALO);
            let w1 = (out.end.div_ceil(2) + WINDOW_HALO).min(half);
            scratch.s.clear();
            scratch.d.clear();
            scratch.s.extend((w0..w1).map(&low));
            scratch.d.extend((w0..w1).map(&high));
            lift_inverse(&mut scratch.s, &mut scratch.d);
            for p in out {
                let i = p / 2 - w0;
                put(
                    p,
                    if p % 2 == 0 {
                        scratch.s[i]
                    } else {
                        scratch.d[i]
                    },
                );
            }
        }
    }
}

/// Single-level 1D analysis.
pub fn analyze_1d(signal: &[f32], wavelet: WaveletKind) -> Result<(Vec<f32>, Vec<f32>)> {
    if signal.len() < 2 || signal.len() % 2 != 0 {
        return Err(Error::Length(signal.len()));
    }
    let half = signal.len() / 2;
    let mut low = vec![0.0; half];
    let mut high = vec![0.0; half];
    forward_line(wavelet, signal, &mut low, &mut high);
    Ok((low, high))
}

/// Single-level 1D synthesis, the exact inverse of [`analyze_1d`].
pub fn synthesize_1d(approx: &[f32], detail: &[f32], wavelet: WaveletKind) -> Result<Vec<f32>> {
    if approx.len() != detail.len() {
        return Err(Error::LengthMismatch {
            approx: approx.len(),
            detail: detail.len(),
        });
    }
    if approx.is_empty() {
        return Err(Error::Length(0));
    }
    let half = approx.len();
    let mut out = vec![0.0; 2 * half];
    synthesize_window(
        wavelet,
        half,
        |i| approx[i],
        |i| detail[i],
        0..2 * half,
        &mut SynthScratch::default(),
        |p, v| out[p] = v,
    );
    Ok(out)
}

/// Full-depth Haar transform of a power-of-two series, in place.
///
/// Layout afterwards: `[approx, d_L, d_{L-1} (2), ..., d_1 (n/2)]`, where
/// `d_k` starts at index `n >> k`.
pub fn haar_forward_full(series: &mut [f32]) {
    let n = series.len();
    debug_assert!(n.is_power_of_two());
    let mut tmp = vec![0.0; n];
    let mut len = n;
    while len > 1 {
        let half = len / 2;
        for i in 0..half {
            let (a, b) = (series[2 * i], series[2 * i + 1]);
            tmp[i] = (a + b) * 0.5;
            tmp[half + i] = (a - b) * 0.5;
        }
        series[..len].copy_from_slice(&tmp[..len]);
        len = half;
    }
}

/// Dense inverse of [`haar_forward_full`], coarsest level first.
pub fn haar_inverse_full(series: &mut [f32]) {
    let n = series.len();
    debug_assert!(n.is_power_of_two());
    let mut tmp = vec![0.0; n];
    let mut len = 1;
    while len < n {
        for i in 0..len {
            let (a, d) = (series[i], series[len + i]);
            tmp[2 * i] = a + d;
            tmp[2 * i + 1] = a - d;
        }
        series[..2 * len].copy_from_slice(&tmp[..2 * len]);
        len *= 2;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Published CDF 9/7 analysis taps (JPEG2000 irreversible filter):
    // 9-tap low pass centred on even samples, 7-tap high pass on odd ones.
    const H0: [f64; 9] = [
        0.026_748_757_410_810,
        -0.016_864_118_442_875,
        -0.078_223_266_528_990,
        0.266_864_118_442_875,
        0.602_949_018_236_360,
        0.266_864_118_442_875,
        -0.078_223_266_528_990,
        -0.016_864_118_442_875,
        0.026_748_757_410_810,
    ];
    const G0: [f64; 7] = [
        0.091_271_763_114_250,
        -0.057_543_526_228_500,
        -0.591_271_763_114_250,
        1.115_087_052_456_994,
        -0.591_271_763_114_250,
        -0.057_543_526_228_500,
        0.091_271_763_114_250,
    ];

    fn mirror(i: isize, len: usize) -> usize {
        let len = len as isize;
        let mut i = i;
        loop {
            if i < 0 {
                i = -i;
            } else if i >= len {
                i = 2 * (len - 1) - i;
            } else {
                return i as usize;
            }
        }
    }

    fn convolution_oracle(x: &[f32]) -> (Vec<f64>, Vec<f64>) {
        let half = x.len() / 2;
        let at = |i: isize| x[mirror(i, x.len())] as f64;
        let low = (0..half)
            .map(|n| {
                let c = 2 * n as isize;
                H0.iter()
                    .enumerate()
                    .map(|(k, h)| h * at(c + k as isize - 4))
                    .sum()
            })
            .collect();
        let high = (0..half)
            .map(|n| {
                let c = 2 * n as isize + 1;
                G0.iter()
                    .enumerate()
                    .map(|(k, g)| g * at(c + k as isize - 3))
                    .sum()
            })
            .collect();
        (low, high)
    }

    #[test]
    fn haar_pair_definition() {
        let (a, d) = analyze_1d(&[3.0, 1.0], WaveletKind::Haar).unwrap();
        assert_eq!((a, d), (vec![2.0], vec![1.0]));
        assert_eq!(
            synthesize_1d(&[2.0], &[1.0], WaveletKind::Haar).unwrap(),
            vec![3.0, 1.0]
        );
        assert_eq!(
            synthesize_1d(&[0.7], &[0.0], WaveletKind::Haar).unwrap(),
            vec![0.7, 0.7]
        );
    }

    #[test]
    fn cdf97_kills_constants() {
        let (a, d) = analyze_1d(&[0.37; 16], WaveletKind::Cdf97).unwrap();
        assert!(d.iter().all(|v| v.abs() < 1e-6), "{d:?}");
        assert!(a.iter().all(|v| (v - 0.37).abs() < 1e-6));
    }

    #[test]
    fn cdf97_ramp_matches_convolution() {
        let x: Vec<f32> = (1..=16).map(|v| v as f32).collect();
        let (a, d) = analyze_1d(&x, WaveletKind::Cdf97).unwrap();
        let (oa, od) = convolution_oracle(&x);
        for (n, v) in d.iter().enumerate().take(6).skip(1) {
            assert!(v.abs() < 1e-5, "interior detail {n}: {v}");
        }
        for n in 0..8 {
            assert!(
                (a[n] as f64 - oa[n]).abs() < 1e-4,
                "approx {n}: {} vs {}",
                a[n],
                oa[n]
            );
            assert!(
                (d[n] as f64 - od[n]).abs() < 1e-4,
                "detail {n}: {} vs {}",
                d[n],
                od[n]
            );
        }
    }

    #[test]
    fn cdf97_matches_convolution_on_random_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for len in [2usize, 4, 6, 10, 32] {
            let x: Vec<f32> = (0..len).map(|_| rng.gen()).collect();
            let (a, d) = analyze_1d(&x, WaveletKind::Cdf97).unwrap();
            let (oa, od) = convolution_oracle(&x);
            for n in 0..len / 2 {
                assert!((a[n] as f64 - oa[n]).abs() < 1e-5);
                assert!((d[n] as f64 - od[n]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn perfect_reconstruction_both_kinds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for kind in [WaveletKind::Cdf97, WaveletKind::Haar] {
            let x: Vec<f32> = (0..64).map(|_| rng.gen()).collect();
            let (a, d) = analyze_1d(&x, kind).unwrap();
            let y = synthesize_1d(&a, &d, kind).unwrap();
            for (p, q) in x.iter().zip(&y) {
                assert!((p - q).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn length_errors() {
        assert!(matches!(
            analyze_1d(&[], WaveletKind::Haar),
            Err(Error::Length(0))
        ));
        assert!(matches!(
            analyze_1d(&[1.0; 5], WaveletKind::Cdf97),
            Err(Error::Length(5))
        ));
        assert!(matches!(
            synthesize_1d(&[1.0; 2], &[1.0; 3], WaveletKind::Haar),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn windowed_synthesis_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let half = 40;
        let low: Vec<f32> = (0..half).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let high: Vec<f32> = (0..half).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let full = synthesize_1d(&low, &high, WaveletKind::Cdf97).unwrap();
        let mut scratch = SynthScratch::default();
        for (a, b) in [
            (0, 1),
            (0, 80),
            (5, 9),
            (17, 18),
            (30, 80),
            (79, 80),
            (11, 60),
        ] {
            synthesize_window(
                WaveletKind::Cdf97,
                half,
                |i| low[i],
                |i| high[i],
                a..b,
                &mut scratch,
                |p, v| assert_eq!(v.to_bits(), full[p].to_bits(), "sample {p} of {a}..{b}"),
            );
        }
    }

    #[test]
    fn temporal_haar_example() {
        let mut s = [4.0, 2.0, 6.0, 8.0];
        haar_forward_full(&mut s);
        assert_eq!(s, [5.0, -2.0, 1.0, -1.0]);
        haar_inverse_full(&mut s);
        assert_eq!(s, [4.0, 2.0, 6.0, 8.0]);
    }
}
