//! Frames to coefficient records: spatial analysis, spatial thresholding,
//! temporal Haar over inter-frame sets, temporal thresholding, quantization.

use rayon::prelude::*;
use std::io::Write;
use std::path::Path;

use crate::bitstream::{
    assemble_sets, write_video, BandExtrema, BlockGrid, EncodedSet, Precision, RecordKey,
    SparseCoefficients, VideoHeader, FLAG_FLOAT, FLAG_STEREO, VERSION,
};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::projection::mapping_factors;
use crate::wavelet::{analyze_2d, haar_forward_full, CoefficientPyramid, WaveletKind};

/// Frame threshold constant of the high-quality setting.
pub const HQ_ALPHA: f32 = 0.1;
/// Frame threshold constant of the low-quality setting.
pub const LQ_ALPHA: f32 = 0.25;
pub const DEFAULT_INTER_THRESHOLD: f32 = 0.005;
pub const DEFAULT_INTER_SIZE: usize = 4;
pub const DEFAULT_BLOCK_SIZE: usize = 32;

/// Spatial wavelet of every stream this encoder writes.
pub const SPATIAL_WAVELET: WaveletKind = WaveletKind::Cdf97;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mapping {
    #[default]
    None,
    Equirectangular,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodeParams {
    pub alpha: f32,
    pub inter_threshold: f32,
    /// `None` picks [`auto_levels`].
    pub levels: Option<usize>,
    pub inter_size: usize,
    pub block_size: usize,
    pub mapping: Mapping,
    pub precision: Precision,
    /// `None` picks [`default_mask_dims`].
    pub mask_dims: Option<(usize, usize)>,
    pub fps: f32,
    pub stereo: bool,
}

impl Default for EncodeParams {
    fn default() -> Self {
        Self {
            alpha: HQ_ALPHA,
            inter_threshold: DEFAULT_INTER_THRESHOLD,
            levels: None,
            inter_size: DEFAULT_INTER_SIZE,
            block_size: DEFAULT_BLOCK_SIZE,
            mapping: Mapping::None,
            precision: Precision::Quantized,
            mask_dims: None,
            fps: 30.0,
            stereo: false,
        }
    }
}

impl EncodeParams {
    /// Zero thresholds and float records: decoding reproduces the input.
    pub fn lossless() -> Self {
        Self {
            alpha: 0.0,
            inter_threshold: 0.0,
            precision: Precision::Float,
            ..Self::default()
        }
    }

    /// Checks the parameters against a frame size and builds the header
    /// fields that do not depend on the frame count.
    fn resolve(&self, width: usize, height: usize) -> Result<Resolved> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad(format!("alpha {}", self.alpha));
        }
        if !(self.inter_threshold.is_finite() && self.inter_threshold >= 0.0) {
            return bad(format!("inter threshold {}", self.inter_threshold));
        }
        if !self.inter_size.is_power_of_two() || self.inter_size > 256 {
            return bad(format!(
                "inter-frame set size {} is not a power of two <= 256",
                self.inter_size
            ));
        }
        if !self.block_size.is_power_of_two() || !(2..=256).contains(&self.block_size) {
            return bad(format!(
                "block size {} is not a power of two in [2, 256]",
                self.block_size
            ));
        }
        if width % self.block_size != 0 || height % self.block_size != 0 {
            return bad(format!(
                "block size {} does not divide {width}x{height}",
                self.block_size
            ));
        }
        if self.stereo && height % 2 != 0 {
            return bad("stereo frames need an even height".into());
        }
        let levels = match self.levels {
            Some(l) => l,
            None => auto_levels(width, height),
        };
        crate::wavelet::check_dims(width, height, levels)?;
        let mask = match self.mask_dims {
            Some(m) => m,
            None => default_mask_dims(width, height),
        };
        if mask.0 == 0
            || mask.1 == 0
            || width % mask.0 != 0
            || height % mask.1 != 0
            || mask.0 > 65535
            || mask.1 > 65535
        {
            return bad(format!(
                "mask {}x{} does not divide {width}x{height}",
                mask.0, mask.1
            ));
        }
        if self.stereo && mask.1 % 2 != 0 {
            return bad("stereo mask height must be even".into());
        }
        Ok(Resolved { levels, mask })
    }
}

struct Resolved {
    levels: usize,
    mask: (usize, usize),
}

/// `round(log2(N/32)) - 2` levels for frame width N, clamped to
/// `[1, log2(min dim)]` and lowered until `2^levels` divides both sides.
pub fn auto_levels(width: usize, height: usize) -> usize {
    let max = width.min(height).max(2).ilog2() as usize;
    let guess = ((width as f64 / 32.0).log2().round() as i64 - 2).clamp(1, max as i64) as usize;
    (1..=guess)
        .rev()
        .find(|&l| width % (1 << l) == 0 && height % (1 << l) == 0)
        .unwrap_or(1)
}

/// Viewport mask resolution: an eighth of the frame, at most 256 per side,
/// lowered to a divisor of the frame size.
pub fn default_mask_dims(width: usize, height: usize) -> (usize, usize) {
    let pick = |n: usize| {
        let target = (n / 8).clamp(1, 256);
        (1..=target).rev().find(|d| n % d == 0).unwrap_or(1)
    };
    (pick(width), pick(height))
}

/// `alpha * ((l_max - l) / l_max)^2 + h`, with `l = 0` the finest level.
pub fn threshold_value(alpha: f64, level: usize, l_max: usize, h: f64) -> Result<f64> {
    if l_max == 0 || level > l_max {
        return Err(Error::OutOfRange {
            what: "threshold level",
            value: level,
            limit: l_max,
        });
    }
    let w = (l_max - level) as f64 / l_max as f64;
    Ok(alpha * w * w + h)
}

/// Frame row a subband row of `level` stands for (center of its span).
fn frame_row(row: usize, level: usize, height: usize) -> usize {
    ((row << level) + (1 << (level - 1))).min(height - 1)
}

/// Spatial thresholding of one frame's channel pyramids: a position keeps
/// all channels when any channel's magnitude exceeds the threshold of its
/// level and row. The approximation band is never thresholded.
pub fn sparsify(
    pyramids: &[CoefficientPyramid],
    alpha: f32,
    mapping: &[f32],
) -> Result<Vec<CoefficientPyramid>> {
    let first = pyramids
        .first()
        .ok_or_else(|| Error::InvalidParams("no channels".into()))?;
    if pyramids.iter().any(|p| !p.same_shape(first)) {
        return Err(Error::Shape("channel pyramids differ in shape".into()));
    }
    if mapping.len() != first.height {
        return Err(Error::Shape(format!(
            "{} mapping factors for {} rows",
            mapping.len(),
            first.height
        )));
    }
    let (w, h, levels) = (first.width, first.height, first.levels);
    let level_terms: Vec<f64> = (1..=levels)
        .map(|k| threshold_value(alpha as f64, k - 1, levels, 0.0))
        .collect::<Result<_>>()?;
    let mut out = pyramids.to_vec();
    for y in 0..h {
        for x in 0..w {
            let (k, band) = first.band_of(x, y);
            if band == crate::wavelet::Subband::LL {
                continue;
            }
            let sub_h = h >> k;
            let row = if y >= sub_h { y - sub_h } else { y };
            let t = level_terms[k - 1] + mapping[frame_row(row, k, h)] as f64;
            let keep = pyramids.iter().any(|p| (p.get(x, y).abs() as f64) > t);
            if !keep {
                for p in out.iter_mut() {
                    p.set(x, y, 0.0);
                }
            }
        }
    }
    Ok(out)
}

/// Coefficients of one inter-frame set after the temporal transform.
#[derive(Clone, Debug, PartialEq)]
pub struct InterFrameSet {
    /// `pyramids[t][c]`: temporal index `t` (0 = approximation, then detail
    /// levels coarse to fine), channel `c`.
    pub pyramids: Vec<Vec<CoefficientPyramid>>,
    /// Indexed `t * channels + c`.
    pub extrema: Vec<BandExtrema>,
}

/// Temporal level of index `t` in a full Haar decomposition of length `n`
/// (0 for the approximation, 1 for the finest details).
pub fn temporal_level(t: usize, n: usize) -> usize {
    if t == 0 {
        0
    } else {
        (n.ilog2() - t.ilog2()) as usize
    }
}

impl InterFrameSet {
    pub fn inter_size(&self) -> usize {
        self.pyramids.len()
    }

    pub fn channels(&self) -> usize {
        self.pyramids.first().map_or(0, Vec::len)
    }

    /// A position is a record when any channel is non-zero.
    #[inline]
    pub fn is_record(&self, t: usize, x: usize, y: usize) -> bool {
        self.pyramids[t].iter().any(|p| p.get(x, y) != 0.0)
    }

    /// Recomputes the per-band ranges over the values that become records.
    pub fn update_extrema(&mut self) {
        let c = self.channels();
        let mut extrema = Vec::with_capacity(self.inter_size() * c);
        for t in 0..self.inter_size() {
            let first = &self.pyramids[t][0];
            let mut ranges = vec![
                [
                    f32::INFINITY,
                    f32::NEG_INFINITY,
                    f32::INFINITY,
                    f32::NEG_INFINITY
                ];
                c
            ];
            for y in 0..first.height {
                for x in 0..first.width {
                    if !self.is_record(t, x, y) {
                        continue;
                    }
                    let base = if first.is_approx(x, y) { 0 } else { 2 };
                    for (r, p) in ranges.iter_mut().zip(&self.pyramids[t]) {
                        let v = p.get(x, y);
                        r[base] = r[base].min(v);
                        r[base + 1] = r[base + 1].max(v);
                    }
                }
            }
            for r in ranges {
                let fix = |lo: f32, hi: f32| if lo <= hi { (lo, hi) } else { (0.0, 0.0) };
                let (approx_min, approx_max) = fix(r[0], r[1]);
                let (detail_min, detail_max) = fix(r[2], r[3]);
                extrema.push(BandExtrema {
                    approx_min,
                    approx_max,
                    detail_min,
                    detail_max,
                });
            }
        }
        self.extrema = extrema;
    }

    pub fn extrema(&self, t: usize, c: usize) -> &BandExtrema {
        &self.extrema[t * self.channels() + c]
    }
}

/// Full-depth temporal Haar transform of `n` frames' channel pyramids at
/// every coefficient position.
pub fn temporal_forward(frames: Vec<Vec<CoefficientPyramid>>) -> Result<InterFrameSet> {
    let n = frames.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::InvalidParams(format!(
            "inter-frame set of {n} frames"
        )));
    }
    let reference = frames[0]
        .first()
        .ok_or_else(|| Error::InvalidParams("no channels".into()))?
        .clone();
    let channels = frames[0].len();
    if frames
        .iter()
        .any(|f| f.len() != channels || f.iter().any(|p| !p.same_shape(&reference)))
    {
        return Err(Error::Shape(
            "pyramids of an inter-frame set differ in shape".into(),
        ));
    }
    let mut pyramids = frames;
    if n > 1 {
        let len = reference.data.len();
        let mut series = vec![0.0f32; n];
        // Transposed access across frames; iterators would not read clearer.
        #[allow(clippy::needless_range_loop)]
        for c in 0..channels {
            for i in 0..len {
                for (t, s) in series.iter_mut().enumerate() {
                    *s = pyramids[t][c].data[i];
                }
                haar_forward_full(&mut series);
                for (t, s) in series.iter().enumerate() {
                    pyramids[t][c].data[i] = *s;
                }
            }
        }
    }
    let mut set = InterFrameSet {
        pyramids,
        extrema: Vec::new(),
    };
    set.update_extrema();
    Ok(set)
}

/// Temporal thresholding: detail frame `t` of temporal level `k` drops
/// positions whose channel magnitudes all stay within
/// `threshold_value(inter_threshold, k - 1, log2 n, 0)`. The temporal
/// approximation frame is kept whole.
pub fn temporal_threshold(mut set: InterFrameSet, inter_threshold: f32) -> InterFrameSet {
    let n = set.inter_size();
    if n > 1 {
        let l_max = n.ilog2() as usize;
        for t in 1..n {
            let k = temporal_level(t, n);
            let thr =
                threshold_value(inter_threshold as f64, k - 1, l_max, 0.0).expect("k <= log2 n");
            let frame = &mut set.pyramids[t];
            let len = frame[0].data.len();
            for i in 0..len {
                if !frame.iter().any(|p| (p.data[i].abs() as f64) > thr) {
                    for p in frame.iter_mut() {
                        p.data[i] = 0.0;
                    }
                }
            }
        }
    }
    set.update_extrema();
    set
}

/// `round((c - min) / (max - min) * 255)`, rounding half away from zero;
/// constant bands map to 0.
#[inline]
pub fn quantize_value(c: f32, min: f32, max: f32) -> u8 {
    if max <= min {
        return 0;
    }
    let q = ((c as f64 - min as f64) / (max as f64 - min as f64) * 255.0).round();
    q.clamp(0.0, 255.0) as u8
}

#[inline]
pub fn dequantize_value(code: u8, min: f32, max: f32) -> f32 {
    (min as f64 + code as f64 * ((max as f64 - min as f64) / 255.0)) as f32
}

/// Converts a set into storage-ordered records: per temporal frame, per
/// block, level-ascending, omitting all-zero positions.
pub fn quantize(set: &InterFrameSet, grid: &BlockGrid, precision: Precision) -> SparseCoefficients {
    let orders: Vec<Vec<u16>> = (0..grid.blocks() as u32)
        .map(|b| grid.storage_order(b))
        .collect();
    quantize_with_orders(set, grid, precision, &orders)
}

fn quantize_with_orders(
    set: &InterFrameSet,
    grid: &BlockGrid,
    precision: Precision,
    orders: &[Vec<u16>],
) -> SparseCoefficients {
    let c = set.channels();
    let mut out = SparseCoefficients::new(c, precision);
    let mut codes = vec![0u8; c];
    let mut values = vec![0.0f32; c];
    for t in 0..set.inter_size() {
        let frame = &set.pyramids[t];
        for (block, order) in orders.iter().enumerate() {
            for &offset in order {
                let (x, y) = grid.position(block as u32, offset);
                if !set.is_record(t, x, y) {
                    continue;
                }
                let key = RecordKey {
                    temporal: t as u16,
                    block: block as u32,
                    offset,
                };
                let approx = frame[0].is_approx(x, y);
                match precision {
                    Precision::Quantized => {
                        for (ch, code) in codes.iter_mut().enumerate() {
                            let (lo, hi) = set.extrema(t, ch).range(approx);
                            *code = quantize_value(frame[ch].get(x, y), lo, hi);
                        }
                        out.push_quantized(key, &codes);
                    }
                    Precision::Float => {
                        for (ch, v) in values.iter_mut().enumerate() {
                            *v = frame[ch].get(x, y);
                        }
                        out.push_float(key, &values);
                    }
                }
            }
        }
    }
    out
}

/// A complete encoded stream, ready to be written.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedVideo {
    pub header: VideoHeader,
    pub sets: Vec<EncodedSet>,
}

impl EncodedVideo {
    pub fn write_to<W: Write>(&self, sink: &mut W) -> Result<u64> {
        write_video(&self.header, &self.sets, sink)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<u64> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let n = self.write_to(&mut f)?;
        f.flush()?;
        Ok(n)
    }

    pub fn record_count(&self) -> u64 {
        self.sets.iter().map(|s| s.meta.record_count).sum()
    }
}

/// Encodes a clip. A final partial inter-frame set is padded by repeating
/// the last frame; the padding count is stored in the header.
pub fn encode_video(frames: &[Frame], params: &EncodeParams) -> Result<EncodedVideo> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidParams("no frames to encode".into()))?;
    let (w, h, channels) = (first.width, first.height, first.channels);
    if let Some((i, f)) = frames
        .iter()
        .enumerate()
        .find(|(_, f)| (f.width, f.height, f.channels) != (w, h, channels))
    {
        return Err(Error::Shape(format!(
            "frame {i} is {}x{}x{}, frame 0 is {w}x{h}x{channels}",
            f.width, f.height, f.channels
        )));
    }
    if !(1..=4).contains(&channels) {
        return Err(Error::InvalidParams(format!("{channels} channels")));
    }
    let Resolved { levels, mask } = params.resolve(w, h)?;
    let n = params.inter_size;
    let pad = (n - frames.len() % n) % n;
    let frame_count =
        u32::try_from(frames.len()).map_err(|_| Error::InvalidParams("too many frames".into()))?;
    if !(params.fps.is_finite() && params.fps >= 0.0) {
        return Err(Error::InvalidParams(format!("fps {}", params.fps)));
    }
    let mut flags = 0;
    if params.stereo {
        flags |= FLAG_STEREO;
    }
    if params.precision == Precision::Float {
        flags |= FLAG_FLOAT;
    }
    let header = VideoHeader {
        version: VERSION,
        flags,
        width: w as u32,
        height: h as u32,
        frame_count,
        fps: params.fps,
        channels: channels as u8,
        levels: levels as u8,
        inter_size_log2: n.ilog2() as u8,
        block_size_log2: params.block_size.ilog2() as u8,
        mask_w: mask.0 as u16,
        mask_h: mask.1 as u16,
        pad_frames: pad as u8,
    };
    header.validate()?;

    let factors = match params.mapping {
        Mapping::None => vec![0.0; h],
        Mapping::Equirectangular => mapping_factors(h, params.stereo),
    };
    let grid = header.grid();
    let orders: Vec<Vec<u16>> = (0..grid.blocks() as u32)
        .map(|b| grid.storage_order(b))
        .collect();
    let set_count = header.set_count();
    let encoded: Vec<(Vec<BandExtrema>, SparseCoefficients)> = (0..set_count)
        .into_par_iter()
        .map(|s| {
            let members: Vec<&Frame> = (0..n)
                .map(|t| &frames[(s * n + t).min(frames.len() - 1)])
                .collect();
            let analyzed = members
                .par_iter()
                .map(|f| {
                    let pyramids = f
                        .to_planes()
                        .iter()
                        .map(|p| analyze_2d(p, levels, SPATIAL_WAVELET))
                        .collect::<Result<Vec<_>>>()?;
                    sparsify(&pyramids, params.alpha, &factors)
                })
                .collect::<Result<Vec<_>>>()?;
            let set = temporal_threshold(temporal_forward(analyzed)?, params.inter_threshold);
            let records = quantize_with_orders(&set, &grid, params.precision, &orders);
            Ok((set.extrema, records))
        })
        .collect::<Result<_>>()?;
    let sets = assemble_sets(&header, encoded)?;
    Ok(EncodedVideo { header, sets })
}
