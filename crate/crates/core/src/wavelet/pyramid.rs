use super::{forward_line, synthesize_window, SynthScratch, WaveletKind};
use crate::error::{Error, Result};
use crate::frame::Plane;

/// Subband of one decomposition level. The first letter is the horizontal
/// filter, so `HL` sits in the top-right quadrant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Subband {
    LL,
    HL,
    LH,
    HH,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// Multilevel 2D wavelet coefficients in Mallat layout: the approximation
/// occupies the top-left `(N >> L) x (M >> L)` corner, and the detail
/// quadrants of level `k` occupy `(N >> (k-1)) x (M >> (k-1))` minus its
/// top-left quarter. Level 1 is the finest.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientPyramid {
    pub width: usize,
    pub height: usize,
    pub levels: usize,
    pub data: Vec<f32>,
}

pub(crate) fn check_dims(width: usize, height: usize, levels: usize) -> Result<()> {
    let max_levels = width.min(height).max(1).ilog2() as usize;
    if levels == 0 || levels > max_levels {
        return Err(Error::OutOfRange {
            what: "levels",
            value: levels,
            limit: max_levels,
        });
    }
    let step = 1usize << levels;
    if width % step != 0 || height % step != 0 {
        return Err(Error::Dimension {
            width,
            height,
            levels,
        });
    }
    Ok(())
}

impl CoefficientPyramid {
    pub fn zeros(width: usize, height: usize, levels: usize) -> Result<Self> {
        check_dims(width, height, levels)?;
        Ok(Self {
            width,
            height,
            levels,
            data: vec![0.0; width * height],
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn approx_dims(&self) -> (usize, usize) {
        (self.width >> self.levels, self.height >> self.levels)
    }

    /// Dimensions of every subband of `level` (level `levels` for LL).
    pub fn subband_dims(&self, level: usize) -> (usize, usize) {
        (self.width >> level, self.height >> level)
    }

    pub fn subband_rect(&self, level: usize, band: Subband) -> Rect {
        let (w, h) = self.subband_dims(level);
        let (x, y) = match band {
            Subband::LL => (0, 0),
            Subband::HL => (w, 0),
            Subband::LH => (0, h),
            Subband::HH => (w, h),
        };
        Rect {
            x,
            y,
            width: w,
            height: h,
        }
    }

    /// Level and subband of a Mallat-layout position.
    pub fn band_of(&self, x: usize, y: usize) -> (usize, Subband) {
        band_of(x, y, self.levels, self.width, self.height)
    }

    /// True for positions inside the approximation band.
    #[inline]
    pub fn is_approx(&self, x: usize, y: usize) -> bool {
        x < self.width >> self.levels && y < self.height >> self.levels
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height && self.levels == other.levels
    }

    /// Copy with every detail coefficient zeroed.
    pub fn approx_only(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.is_approx(x, y) {
                    out.set(x, y, 0.0);
                }
            }
        }
        out
    }
}

#[inline]
pub(crate) fn band_of(
    x: usize,
    y: usize,
    levels: usize,
    width: usize,
    height: usize,
) -> (usize, Subband) {
    for k in 1..=levels {
        let (w, h) = (width >> k, height >> k);
        if x >= w || y >= h {
            let band = match (x >= w, y >= h) {
                (true, false) => Subband::HL,
                (false, true) => Subband::LH,
                _ => Subband::HH,
            };
            return (k, band);
        }
    }
    (levels, Subband::LL)
}

/// Maps a Mallat-layout position to its `(level, subband)`.
pub fn level_of_position(
    x: usize,
    y: usize,
    levels: usize,
    dims: (usize, usize),
) -> Result<(usize, Subband)> {
    let (width, height) = dims;
    if x >= width {
        return Err(Error::OutOfRange {
            what: "column",
            value: x,
            limit: width,
        });
    }
    if y >= height {
        return Err(Error::OutOfRange {
            what: "row",
            value: y,
            limit: height,
        });
    }
    Ok(band_of(x, y, levels, width, height))
}

/// Separable multilevel analysis: rows then columns, recursing into the
/// approximation quadrant.
pub fn analyze_2d(
    frame: &Plane,
    levels: usize,
    wavelet: WaveletKind,
) -> Result<CoefficientPyramid> {
    let (width, height) = (frame.width, frame.height);
    check_dims(width, height, levels)?;
    let mut data = frame.data.clone();
    let mut line = vec![0.0f32; width.max(height)];
    let mut low = vec![0.0f32; width.max(height) / 2];
    let mut high = low.clone();
    for k in 0..levels {
        let (w, h) = (width >> k, height >> k);
        for y in 0..h {
            let row = &mut data[y * width..y * width + w];
            line[..w].copy_from_slice(row);
            forward_line(wavelet, &line[..w], &mut low[..w / 2], &mut high[..w / 2]);
            row[..w / 2].copy_from_slice(&low[..w / 2]);
            row[w / 2..].copy_from_slice(&high[..w / 2]);
        }
        for x in 0..w {
            for y in 0..h {
                line[y] = data[y * width + x];
            }
            forward_line(wavelet, &line[..h], &mut low[..h / 2], &mut high[..h / 2]);
            for i in 0..h / 2 {
                data[i * width + x] = low[i];
                data[(h / 2 + i) * width + x] = high[i];
            }
        }
    }
    Ok(CoefficientPyramid {
        width,
        height,
        levels,
        data,
    })
}

/// Full inverse of [`analyze_2d`]: columns then rows, coarsest level first.
pub fn synthesize_2d(pyramid: &CoefficientPyramid, wavelet: WaveletKind) -> Plane {
    let (width, height) = (pyramid.width, pyramid.height);
    let mut data = pyramid.data.clone();
    let mut column = vec![0.0f32; height];
    let mut scratch = SynthScratch::default();
    for k in (1..=pyramid.levels).rev() {
        let (w2, h2) = (width >> (k - 1), height >> (k - 1));
        let (w, h) = (w2 / 2, h2 / 2);
        for x in 0..w2 {
            synthesize_window(
                wavelet,
                h,
                |i| data[i * width + x],
                |i| data[(h + i) * width + x],
                0..h2,
                &mut scratch,
                |p, v| column[p] = v,
            );
            for y in 0..h2 {
                data[y * width + x] = column[y];
            }
        }
        let mut row = vec![0.0f32; w2];
        for y in 0..h2 {
            let base = y * width;
            synthesize_window(
                wavelet,
                w,
                |i| data[base + i],
                |i| data[base + w + i],
                0..w2,
                &mut scratch,
                |p, v| row[p] = v,
            );
            data[base..base + w2].copy_from_slice(&row);
        }
    }
    Plane {
        width,
        height,
        data,
    }
}
