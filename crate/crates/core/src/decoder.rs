//! Viewport-dependent and foveated reconstruction.

use rayon::prelude::*;
use std::path::Path;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Instant;

use crate::bitstream::{
    BandExtrema, LoadedBlocks, Payload, SparseCoefficients, VideoFile, VideoHeader,
};
use crate::encoder::{dequantize_value, temporal_level, SPATIAL_WAVELET};
use crate::error::{Error, Result};
use crate::frame::{Frame, Plane};
use crate::projection::ViewportMask;
use crate::wavelet::{
    closure_chain, dilate_for_synthesis, BitGrid, CoefficientPyramid, LevelMaskSet, RegionPlan,
};

/// Per-level retained fraction of the viewport, approximation first, then
/// detail levels coarse to fine, with the gaze point in viewport
/// coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct FoveationSchedule {
    pub fractions: Vec<f64>,
    pub gaze: (f64, f64),
}

/// Fractions for six levels, ending in a fovea 2% of the viewport wide.
pub const DEFAULT_FRACTIONS_6: [f64; 7] = [1.0, 0.65, 0.40, 0.22, 0.10, 0.04, 0.02];
pub const FOVEA_FRACTION: f64 = 0.02;

impl FoveationSchedule {
    /// The six-level table for six levels, otherwise a geometric decay from
    /// 1 to the fovea fraction.
    pub fn default_for(levels: usize, gaze: (f64, f64)) -> Self {
        let fractions = if levels == 6 {
            DEFAULT_FRACTIONS_6.to_vec()
        } else {
            (0..=levels)
                .map(|i| FOVEA_FRACTION.powf(i as f64 / levels.max(1) as f64))
                .collect()
        };
        Self { fractions, gaze }
    }

    /// Every level at full viewport size.
    pub fn uniform(levels: usize, gaze: (f64, f64)) -> Self {
        Self {
            fractions: vec![1.0; levels + 1],
            gaze,
        }
    }

    pub fn validate(&self, levels: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if self.fractions.len() != levels + 1 {
            return bad(format!(
                "{} fractions for {levels} levels",
                self.fractions.len()
            ));
        }
        if self.fractions[0] != 1.0 {
            return bad("coarsest fraction must be 1".into());
        }
        if self
            .fractions
            .iter()
            .any(|f| !(f.is_finite() && *f > 0.0 && *f <= 1.0))
            || self.fractions.windows(2).any(|w| w[1] > w[0])
        {
            return bad("fractions must be in (0, 1] and non-increasing".into());
        }
        let (u, v) = self.gaze;
        if !((0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v)) {
            return bad(format!("gaze ({u}, {v}) outside the viewport"));
        }
        Ok(())
    }
}

/// Bounding box of a mask region, circular in x: `(x0, width, y0, height)`.
fn circular_bbox(
    target: &BitGrid,
    rows: std::ops::Range<usize>,
) -> Option<(usize, usize, usize, usize)> {
    let w = target.width;
    let cols: Vec<bool> = (0..w)
        .map(|x| rows.clone().any(|y| target.get(x, y)))
        .collect();
    let used_rows: Vec<usize> = rows
        .clone()
        .filter(|&y| (0..w).any(|x| target.get(x, y)))
        .collect();
    let (&y0, &y1) = (used_rows.first()?, used_rows.last()?);
    // Start just after the longest circular run of empty columns.
    let (mut best_len, mut best_end, mut run) = (0, 0, 0);
    for i in 0..2 * w {
        if cols[i % w] {
            run = 0;
        } else {
            run += 1;
            if run > best_len && run <= w {
                best_len = run;
                best_end = i % w;
            }
        }
    }
    let (x0, width) = if best_len == 0 {
        (0, w)
    } else {
        ((best_end + 1) % w, w - best_len)
    };
    Some((x0, width, y0, y1 + 1 - y0))
}

/// Window of `fraction` of the bounding box, centered on the gaze and
/// shifted to stay inside the box.
fn gaze_window(
    bbox: (usize, usize, usize, usize),
    gaze: (f64, f64),
    fraction: f64,
    (width, height): (usize, usize),
    rows: std::ops::Range<usize>,
) -> BitGrid {
    let (x0, bw, y0, bh) = bbox;
    let span = |len: usize, g: f64| {
        let size = (fraction * len as f64).max(1.0);
        let start = (g * len as f64 - size / 2.0).clamp(0.0, len as f64 - size);
        (start, start + size)
    };
    let (sx, ex) = span(bw, gaze.0);
    let (sy, ey) = span(bh, gaze.1);
    let mut out = BitGrid::new(width, height);
    for y in rows {
        let fy = (y as f64 + 0.5) - y0 as f64;
        if fy < sy || fy > ey {
            continue;
        }
        for x in 0..width {
            let fx = ((x + width - x0) % width) as f64 + 0.5;
            if fx >= sx && fx <= ex {
                out.set(x, y, true);
            }
        }
    }
    out
}

/// Level masks for foveated decoding: level `k` keeps the dependency
/// closure of the viewport restricted to its gaze window; the approximation
/// covers the whole viewport. Stereo viewports get a window per eye.
pub fn foveation_masks(
    viewport: &ViewportMask,
    schedule: &FoveationSchedule,
    levels: usize,
    frame_dims: (usize, usize),
) -> Result<LevelMaskSet> {
    schedule.validate(levels)?;
    crate::wavelet::check_dims(frame_dims.0, frame_dims.1, levels)?;
    let target = viewport.to_frame(frame_dims)?;
    let (w, h) = frame_dims;
    let eyes = if viewport.stereo { 2 } else { 1 };
    let eye_h = h / eyes;
    let bboxes: Vec<_> = (0..eyes)
        .map(|e| circular_bbox(&target, e * eye_h..(e + 1) * eye_h))
        .collect();
    let window = |fraction: f64| {
        let mut grid = BitGrid::new(w, h);
        for (e, bbox) in bboxes.iter().enumerate() {
            if let Some(b) = bbox {
                let rows = e * eye_h..(e + 1) * eye_h;
                grid = grid.or(&gaze_window(*b, schedule.gaze, fraction, (w, h), rows));
            }
        }
        target.and(&grid)
    };
    let mut details = Vec::with_capacity(levels);
    for k in 1..=levels {
        let fraction = schedule.fractions[levels + 1 - k];
        let region = if fraction >= 1.0 {
            target.clone()
        } else {
            window(fraction)
        };
        details.push(
            closure_chain(&region, k, SPATIAL_WAVELET)
                .pop()
                .expect("k >= 1"),
        );
    }
    let coarse = closure_chain(&target, levels, SPATIAL_WAVELET)
        .pop()
        .expect("levels >= 1");
    Ok(LevelMaskSet {
        approx: dilate_for_synthesis(&coarse, SPATIAL_WAVELET),
        details,
    })
}

/// Dequantized temporal-domain coefficients of one set: `out[j][c]` holds
/// temporal index `j` of channel `c`. Positions without records are zero.
pub fn dequantize_records(
    records: &SparseCoefficients,
    extrema: &[BandExtrema],
    header: &VideoHeader,
) -> Result<Vec<Vec<CoefficientPyramid>>> {
    let (w, h) = header.dims();
    let zero = CoefficientPyramid::zeros(w, h, header.levels())?;
    let mut out = vec![vec![zero; header.channels()]; header.inter_size()];
    let grid = header.grid();
    for (i, key) in records.keys.iter().enumerate() {
        check_key(
            header,
            key.temporal as usize,
            key.block as usize,
            key.offset as usize,
        )?;
        let (x, y) = grid.position(key.block, key.offset);
        let approx = x < w >> header.levels() && y < h >> header.levels();
        let t = key.temporal as usize;
        for (c, pyramid) in out[t].iter_mut().enumerate() {
            pyramid.set(x, y, value(records, extrema, header, i, t, c, approx));
        }
    }
    Ok(out)
}

fn check_key(header: &VideoHeader, t: usize, block: usize, offset: usize) -> Result<()> {
    let b = header.block_size();
    if t >= header.inter_size() || block >= header.blocks_per_frame() || offset >= b * b {
        return Err(Error::Corrupt(format!(
            "record ({t}, {block}, {offset}) outside the set"
        )));
    }
    Ok(())
}

#[inline]
fn value(
    records: &SparseCoefficients,
    extrema: &[BandExtrema],
    header: &VideoHeader,
    i: usize,
    t: usize,
    c: usize,
    approx: bool,
) -> f32 {
    match &records.payload {
        Payload::Quantized(codes) => {
            let (lo, hi) = extrema[t * header.channels() + c].range(approx);
            dequantize_value(codes[i * header.channels() + c], lo, hi)
        }
        Payload::Float(v) => v[i * header.channels() + c],
    }
}

/// Reconstructs frame `t` of a set from its records: every position gets
/// the temporal approximation plus, per temporal level, the one detail
/// whose support covers `t`, signed by which half of that support `t` is
/// in. Terms are summed coarsest first, matching a dense inverse bit for
/// bit.
pub fn temporal_inverse_sparse(
    records: &SparseCoefficients,
    extrema: &[BandExtrema],
    header: &VideoHeader,
    t: usize,
) -> Result<Vec<CoefficientPyramid>> {
    temporal_inverse_filtered(records, extrema, header, t, None)
}

fn temporal_inverse_filtered(
    records: &SparseCoefficients,
    extrema: &[BandExtrema],
    header: &VideoHeader,
    t: usize,
    wanted: Option<&[bool]>,
) -> Result<Vec<CoefficientPyramid>> {
    let n = header.inter_size();
    if t >= n {
        return Err(Error::OutOfRange {
            what: "frame in set",
            value: t,
            limit: n,
        });
    }
    if records.channels != header.channels() || extrema.len() != n * header.channels() {
        return Err(Error::Corrupt(
            "records or extrema do not match the header".into(),
        ));
    }
    let (w, h) = header.dims();
    let levels = header.levels();
    let grid = header.grid();
    let blocks = header.blocks_per_frame();

    // Indices contributing to frame t, with their sign, coarsest first.
    let mut sign = vec![0.0f32; n];
    sign[0] = 1.0;
    for (j, s) in sign.iter_mut().enumerate().skip(1) {
        let k = temporal_level(j, n);
        if t >> k == j - (n >> k) {
            *s = if (t >> (k - 1)) & 1 == 0 { 1.0 } else { -1.0 };
        }
    }
    let mut by_index: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, key) in records.keys.iter().enumerate() {
        let j = key.temporal as usize;
        check_key(header, j, key.block as usize, key.offset as usize)?;
        if sign[j] == 0.0 {
            continue;
        }
        if let Some(wanted) = wanted {
            if !wanted[j * blocks + key.block as usize] {
                continue;
            }
        }
        by_index[j].push(i);
    }

    let channels = header.channels();
    let mut out = vec![CoefficientPyramid::zeros(w, h, levels)?; channels];
    for (j, list) in by_index.iter().enumerate() {
        for &i in list {
            let key = records.keys[i];
            let (x, y) = grid.position(key.block, key.offset);
            let approx = x < w >> levels && y < h >> levels;
            for (c, p) in out.iter_mut().enumerate() {
                let v = value(records, extrema, header, i, j, c, approx);
                let cell = &mut p.data[y * w + x];
                *cell += sign[j] * v;
            }
        }
    }
    Ok(out)
}

/// Per-call decode statistics. Byte and record counts describe the blocks
/// the frame needs, independent of what earlier calls already cached.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize)]
pub struct FrameStats {
    pub frame: usize,
    pub set: usize,
    pub bytes_loaded: u64,
    pub records: u64,
    /// Bytes this call actually read from storage.
    pub io_bytes: u64,
    pub load_ms: f64,
    pub temporal_ms: f64,
    pub synthesis_ms: f64,
    pub total_ms: f64,
}

/// Cumulative counters of a session; all monotone.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize)]
pub struct SessionStats {
    pub frames_decoded: u64,
    pub bytes_loaded: u64,
    pub records_processed: u64,
    pub io_bytes: u64,
    pub set_loads: u64,
    pub delta_loads: u64,
    pub prefetches: u64,
    pub decode_ms: f64,
}

/// Decoded frame: pixels (zero outside `computed`), the pixels guaranteed
/// equal to a full decode, and the call's statistics.
#[derive(Clone, Debug)]
pub struct DecodedFrame {
    pub pixels: Frame,
    pub footprint: BitGrid,
    pub computed: BitGrid,
    pub stats: FrameStats,
}

struct Pending {
    set: usize,
    handle: JoinHandle<Result<LoadedBlocks>>,
}

/// Holds the current set's loaded blocks and at most one prefetched set.
pub struct DecodeSession {
    file: Arc<VideoFile>,
    current: Option<LoadedBlocks>,
    pending: Option<Pending>,
    plan: Option<(LevelMaskSet, Option<BitGrid>, Arc<RegionPlan>)>,
    stats: SessionStats,
    read_gap: u64,
}

impl std::fmt::Debug for DecodeSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DecodeSession")
            .field("current", &self.current.as_ref().map(|l| l.set))
            .field("pending", &self.pending.as_ref().map(|p| p.set))
            .field("stats", &self.stats)
            .finish()
    }
}

impl DecodeSession {
    pub fn new(file: Arc<VideoFile>) -> Self {
        Self {
            file,
            current: None,
            pending: None,
            plan: None,
            stats: SessionStats::default(),
            read_gap: 0,
        }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::new(Arc::new(VideoFile::open(path)?)))
    }

    /// Reads through gaps of up to `gap` unrequested bytes between blocks.
    pub fn with_read_gap(mut self, gap: u64) -> Self {
        self.read_gap = gap;
        self
    }

    pub fn file(&self) -> &Arc<VideoFile> {
        &self.file
    }

    pub fn header(&self) -> &VideoHeader {
        self.file.header()
    }

    pub fn stats(&self) -> &SessionStats {
        &self.stats
    }

    /// Sets held in memory: the current one plus a pending prefetch.
    pub fn cached_sets(&self) -> usize {
        self.current.is_some() as usize + self.pending.is_some() as usize
    }

    fn check_frame(&self, frame: usize) -> Result<()> {
        let count = self.header().frame_count as usize;
        if frame >= count {
            return Err(Error::OutOfRange {
                what: "frame",
                value: frame,
                limit: count,
            });
        }
        Ok(())
    }

    pub fn decode_full(&mut self, frame: usize) -> Result<DecodedFrame> {
        let (w, h) = self.header().dims();
        let masks = LevelMaskSet::full(w, h, self.header().levels());
        self.decode_with_masks(frame, &masks)
    }

    pub fn decode_viewport(&mut self, frame: usize, mask: &ViewportMask) -> Result<DecodedFrame> {
        self.check_frame(frame)?;
        let masks = self.file.masks_for_viewport(mask)?;
        let target = mask.to_frame(self.header().dims())?;
        self.decode_targeted(frame, &masks, Some(&target))
    }

    pub fn decode_foveated(
        &mut self,
        frame: usize,
        mask: &ViewportMask,
        schedule: &FoveationSchedule,
    ) -> Result<DecodedFrame> {
        self.check_frame(frame)?;
        if mask.dims() != self.header().mask_dims() {
            return Err(Error::Shape(format!("mask {:?}", mask.dims())));
        }
        let masks = foveation_masks(mask, schedule, self.header().levels(), self.header().dims())?;
        let target = mask.to_frame(self.header().dims())?;
        self.decode_targeted(frame, &masks, Some(&target))
    }

    /// Starts loading `set` for `masks` on a background thread. A pending
    /// prefetch of another set is finished and dropped first.
    pub fn prefetch(&mut self, set: usize, masks: &LevelMaskSet) -> Result<()> {
        if set >= self.header().set_count() {
            return Err(Error::OutOfRange {
                what: "set",
                value: set,
                limit: self.header().set_count(),
            });
        }
        if self.current.as_ref().is_some_and(|c| c.set == set)
            || self.pending.as_ref().is_some_and(|p| p.set == set)
        {
            return Ok(());
        }
        if let Some(old) = self.pending.take() {
            let _ = old.handle.join();
        }
        let wanted = self.file.wanted_blocks(masks);
        let file = Arc::clone(&self.file);
        let gap = self.read_gap;
        let handle = std::thread::spawn(move || file.load_blocks(set, None, &wanted, gap));
        self.pending = Some(Pending { set, handle });
        self.stats.prefetches += 1;
        Ok(())
    }

    /// Prefetches the set after the current one; returns its index.
    pub fn advance(&mut self, next_masks: &LevelMaskSet) -> Result<Option<usize>> {
        let next = self.current.as_ref().map_or(0, |c| c.set + 1);
        if next >= self.header().set_count() {
            return Ok(None);
        }
        self.prefetch(next, next_masks)?;
        Ok(Some(next))
    }

    fn take_pending(&mut self, set: usize) -> Result<Option<LoadedBlocks>> {
        match self.pending.take() {
            Some(p) if p.set == set => {
                let loaded = p
                    .handle
                    .join()
                    .map_err(|_| Error::Corrupt("prefetch worker panicked".into()))??;
                self.stats.io_bytes += loaded.bytes_read;
                self.stats.set_loads += 1;
                Ok(Some(loaded))
            }
            other => {
                self.pending = other;
                Ok(None)
            }
        }
    }

    fn obtain(&mut self, set: usize, wanted: &[bool]) -> Result<u64> {
        let base = match self.current.take() {
            Some(c) if c.set == set => Some(c),
            _ => self.take_pending(set)?,
        };
        let before = base.as_ref().map_or(0, |b| b.bytes_read);
        let fresh = base.is_none();
        let loaded = match base {
            Some(b) if b.covers(wanted) => b,
            other => {
                let had = other.is_some();
                let l = self.file.load_blocks(set, other, wanted, self.read_gap)?;
                if had {
                    self.stats.delta_loads += 1;
                }
                l
            }
        };
        if fresh {
            self.stats.set_loads += 1;
        }
        let io = loaded.bytes_read - before;
        self.stats.io_bytes += io;
        self.current = Some(loaded);
        Ok(io)
    }

    fn plan_for(
        &mut self,
        masks: &LevelMaskSet,
        target: Option<&BitGrid>,
    ) -> Result<Arc<RegionPlan>> {
        if let Some((m, t, p)) = &self.plan {
            if m == masks && t.as_ref() == target {
                return Ok(Arc::clone(p));
            }
        }
        let (w, h) = self.header().dims();
        let plan = Arc::new(match target {
            Some(t) => RegionPlan::with_target(masks, t, w, h, SPATIAL_WAVELET)?,
            None => RegionPlan::new(masks, w, h, SPATIAL_WAVELET)?,
        });
        self.plan = Some((masks.clone(), target.cloned(), Arc::clone(&plan)));
        Ok(plan)
    }

    /// Decodes `frame` reading only detail coefficients selected by `masks`.
    pub fn decode_with_masks(
        &mut self,
        frame: usize,
        masks: &LevelMaskSet,
    ) -> Result<DecodedFrame> {
        self.decode_targeted(frame, masks, None)
    }

    /// Like [`Self::decode_with_masks`], but synthesis only computes what
    /// the full-resolution `target` pixels depend on.
    pub fn decode_targeted(
        &mut self,
        frame: usize,
        masks: &LevelMaskSet,
        target: Option<&BitGrid>,
    ) -> Result<DecodedFrame> {
        self.check_frame(frame)?;
        let start = Instant::now();
        let header = self.header().clone();
        let (w, h) = header.dims();
        masks.check_shape(w, h, header.levels())?;
        let n = header.inter_size();
        let (set, t) = (frame / n, frame % n);

        let wanted = self.file.wanted_blocks(masks);
        let io_bytes = self.obtain(set, &wanted)?;
        let loaded = self.current.as_ref().expect("just loaded");
        let bytes_loaded: u64 = wanted
            .iter()
            .enumerate()
            .filter(|(_, &w)| w)
            .map(|(i, _)| loaded.table.end(i) - loaded.table.start(i))
            .sum();
        let load_done = Instant::now();

        let meta = self.file.set_meta(set);
        let pyramids =
            temporal_inverse_filtered(&loaded.records, &meta.extrema, &header, t, Some(&wanted))?;
        let temporal_done = Instant::now();

        let plan = self.plan_for(masks, target)?;
        let planes: Vec<Plane> = pyramids
            .par_iter()
            .map(|p| plan.synthesize(p))
            .collect::<Result<_>>()?;
        let pixels = Frame::from_planes(&planes)?;
        let end = Instant::now();

        let ms = |a: Instant, b: Instant| (b - a).as_secs_f64() * 1e3;
        let stats = FrameStats {
            frame,
            set,
            bytes_loaded,
            records: bytes_loaded / header.record_size() as u64,
            io_bytes,
            load_ms: ms(start, load_done),
            temporal_ms: ms(load_done, temporal_done),
            synthesis_ms: ms(temporal_done, end),
            total_ms: ms(start, end),
        };
        self.stats.frames_decoded += 1;
        self.stats.bytes_loaded += stats.bytes_loaded;
        self.stats.records_processed += stats.records;
        self.stats.decode_ms += stats.total_ms;
        Ok(DecodedFrame {
            pixels,
            footprint: plan.footprint().clone(),
            computed: plan.compute_region().clone(),
            stats,
        })
    }
}

impl Drop for DecodeSession {
    fn drop(&mut self) {
        if let Some(p) = self.pending.take() {
            let _ = p.handle.join();
        }
    }
}
