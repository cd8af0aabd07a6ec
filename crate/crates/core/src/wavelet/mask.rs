use super::WaveletKind;
use crate::error::{Error, Result};

/// Dense binary grid, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BitGrid {
    pub width: usize,
    pub height: usize,
    cells: Vec<bool>,
}

impl BitGrid {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            cells: vec![false; width * height],
        }
    }

    pub fn filled(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            cells: vec![true; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut cells = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                cells.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            cells,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.cells[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.cells[y * self.width + x] = v;
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.cells.iter().any(|&c| c)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn and(&self, other: &Self) -> Self {
        debug_assert_eq!(self.dims(), other.dims());
        Self {
            width: self.width,
            height: self.height,
            cells: self
                .cells
                .iter()
                .zip(&other.cells)
                .map(|(a, b)| *a && *b)
                .collect(),
        }
    }

    pub fn or(&self, other: &Self) -> Self {
        debug_assert_eq!(self.dims(), other.dims());
        Self {
            width: self.width,
            height: self.height,
            cells: self
                .cells
                .iter()
                .zip(&other.cells)
                .map(|(a, b)| *a || *b)
                .collect(),
        }
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.dims() == other.dims() && self.cells.iter().zip(&other.cells).all(|(a, b)| !*a || *b)
    }

    /// Half-resolution grid: a cell is set if any of its 2x2 children is.
    pub fn down_map(&self) -> Self {
        let (w, h) = (self.width.div_ceil(2), self.height.div_ceil(2));
        let mut out = Self::new(w, h);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    out.set(x / 2, y / 2, true);
                }
            }
        }
        out
    }

    /// Double-resolution grid: every cell expands to 2x2.
    pub fn up_map(&self) -> Self {
        Self::from_fn(self.width * 2, self.height * 2, |x, y| {
            self.get(x / 2, y / 2)
        })
    }

    /// Expands every cell to a `fx x fy` block.
    pub fn upscale(&self, fx: usize, fy: usize) -> Self {
        Self::from_fn(self.width * fx, self.height * fy, |x, y| {
            self.get(x / fx, y / fy)
        })
    }

    /// Chebyshev dilation clamped at the borders.
    pub fn dilate(&self, radius: usize) -> Self {
        if radius == 0 {
            return self.clone();
        }
        self.window_filter(radius, |count, _| count > 0)
    }

    /// Chebyshev erosion; the window is clipped at the borders, so cells
    /// near an edge only need the in-range part of their neighbourhood set.
    pub fn erode(&self, radius: usize) -> Self {
        if radius == 0 {
            return self.clone();
        }
        self.window_filter(radius, |count, len| count == len)
    }

    // Separable box filter over counts of set cells.
    fn window_filter(&self, radius: usize, keep: impl Fn(usize, usize) -> bool) -> Self {
        let (w, h) = (self.width, self.height);
        let mut prefix = vec![0usize; w.max(h) + 1];
        let mut tmp = Self::new(w, h);
        for y in 0..h {
            for x in 0..w {
                prefix[x + 1] = prefix[x] + self.get(x, y) as usize;
            }
            for x in 0..w {
                let (a, b) = (x.saturating_sub(radius), (x + radius + 1).min(w));
                tmp.set(x, y, keep(prefix[b] - prefix[a], b - a));
            }
        }
        let mut out = Self::new(w, h);
        for x in 0..w {
            for y in 0..h {
                prefix[y + 1] = prefix[y] + tmp.get(x, y) as usize;
            }
            for y in 0..h {
                let (a, b) = (y.saturating_sub(radius), (y + radius + 1).min(h));
                out.set(x, y, keep(prefix[b] - prefix[a], b - a));
            }
        }
        out
    }

    /// Maximal runs of set cells in row `y`, as half-open column ranges.
    pub fn row_runs(&self, y: usize) -> Vec<(usize, usize)> {
        runs(
            self.cells[y * self.width..(y + 1) * self.width]
                .iter()
                .copied(),
        )
    }

    /// Maximal runs of set cells in column `x`, as half-open row ranges.
    pub fn column_runs(&self, x: usize) -> Vec<(usize, usize)> {
        runs((0..self.height).map(|y| self.get(x, y)))
    }
}

fn runs(cells: impl Iterator<Item = bool>) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    let mut len = 0;
    for (i, c) in cells.enumerate() {
        match (c, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            _ => {}
        }
        len = i + 1;
    }
    if let Some(s) = start {
        out.push((s, len));
    }
    out
}

/// Grows a mask so every set cell's synthesis neighbourhood is included.
pub fn dilate_for_synthesis(mask: &BitGrid, wavelet: WaveletKind) -> BitGrid {
    mask.dilate(wavelet.synthesis_half_width())
}

/// Per-level reconstruction masks for a pyramid of `levels` levels.
///
/// `details[k - 1]` selects, at level `k`'s subband resolution, the detail
/// coefficients that synthesis uses; unselected ones are taken as zero.
/// `approx` selects approximation-band samples, and it also seeds the
/// region that synthesis computes at every finer level.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelMaskSet {
    pub approx: BitGrid,
    pub details: Vec<BitGrid>,
}

impl LevelMaskSet {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    pub fn full(width: usize, height: usize, levels: usize) -> Self {
        Self {
            approx: BitGrid::filled(width >> levels, height >> levels),
            details: (1..=levels)
                .map(|k| BitGrid::filled(width >> k, height >> k))
                .collect(),
        }
    }

    /// Approximation band only; every detail coefficient reads as zero.
    pub fn approx_only(width: usize, height: usize, levels: usize) -> Self {
        Self {
            approx: BitGrid::filled(width >> levels, height >> levels),
            details: (1..=levels)
                .map(|k| BitGrid::new(width >> k, height >> k))
                .collect(),
        }
    }

    /// Dependency closure of a full-resolution target region: each level's
    /// mask is the finer mask down-mapped by two and dilated by the
    /// synthesis half-width.
    pub fn closure(target: &BitGrid, levels: usize, wavelet: WaveletKind) -> Self {
        let chain = closure_chain(target, levels, wavelet);
        let approx = dilate_for_synthesis(chain.last().expect("levels >= 1"), wavelet);
        Self {
            approx,
            details: chain,
        }
    }

    pub fn check_shape(&self, width: usize, height: usize, levels: usize) -> Result<()> {
        let bad = |what: String| Err(Error::Shape(what));
        if self.details.len() != levels {
            return bad(format!(
                "{} detail masks for {levels} levels",
                self.details.len()
            ));
        }
        if self.approx.dims() != (width >> levels, height >> levels) {
            return bad(format!("approximation mask is {:?}", self.approx.dims()));
        }
        for (i, m) in self.details.iter().enumerate() {
            let k = i + 1;
            if m.dims() != (width >> k, height >> k) {
                return bad(format!("level {k} mask is {:?}", m.dims()));
            }
        }
        Ok(())
    }
}

/// `R_k = dilate(down_map(R_{k-1}))` for `k = 1..=levels`, `R_0 = target`.
pub(crate) fn closure_chain(target: &BitGrid, levels: usize, wavelet: WaveletKind) -> Vec<BitGrid> {
    let mut out: Vec<BitGrid> = Vec::with_capacity(levels);
    let mut current = target.clone();
    for _ in 0..levels {
        current = dilate_for_synthesis(&current.down_map(), wavelet);
        out.push(current.clone());
    }
    out
}
