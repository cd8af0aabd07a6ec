//! The `.wvv` container: a fixed header, a per-set metadata table, then for
//! every inter-frame set a BlockEnd pointer table followed by the set's
//! coefficient records, stored block after block. Little-endian throughout.

mod read;
mod write;

pub use read::{block_range_bytes, read_header, ByteSource, IoEvent, LoadedBlocks, VideoFile};
pub use write::{assemble_sets, write_video};

use crate::error::{Error, Result};
use crate::wavelet::{BitGrid, LevelMaskSet};

pub const MAGIC: [u8; 4] = *b"WVVC";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 64;

/// Frames hold two eyes stacked top (left) over bottom (right).
pub const FLAG_STEREO: u16 = 1;
/// Records carry unquantized 32-bit floats (lossless test mode).
pub const FLAG_FLOAT: u16 = 1 << 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    Quantized,
    Float,
}

impl Precision {
    pub fn value_bytes(self) -> usize {
        match self {
            Precision::Quantized => 1,
            Precision::Float => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoHeader {
    pub version: u16,
    pub flags: u16,
    pub width: u32,
    pub height: u32,
    pub frame_count: u32,
    pub fps: f32,
    pub channels: u8,
    pub levels: u8,
    pub inter_size_log2: u8,
    pub block_size_log2: u8,
    pub mask_w: u16,
    pub mask_h: u16,
    pub pad_frames: u8,
}

impl VideoHeader {
    pub fn inter_size(&self) -> usize {
        1 << self.inter_size_log2
    }

    pub fn block_size(&self) -> usize {
        1 << self.block_size_log2
    }

    pub fn levels(&self) -> usize {
        self.levels as usize
    }

    pub fn channels(&self) -> usize {
        self.channels as usize
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width as usize, self.height as usize)
    }

    pub fn mask_dims(&self) -> (usize, usize) {
        (self.mask_w as usize, self.mask_h as usize)
    }

    pub fn stereo(&self) -> bool {
        self.flags & FLAG_STEREO != 0
    }

    pub fn precision(&self) -> Precision {
        if self.flags & FLAG_FLOAT != 0 {
            Precision::Float
        } else {
            Precision::Quantized
        }
    }

    pub fn set_count(&self) -> usize {
        (self.frame_count as usize + self.pad_frames as usize) / self.inter_size()
    }

    pub fn record_size(&self) -> usize {
        2 + self.channels() * self.precision().value_bytes()
    }

    pub fn blocks_per_frame(&self) -> usize {
        let b = self.block_size();
        (self.width as usize / b) * (self.height as usize / b)
    }

    pub fn meta_entry_len(&self) -> usize {
        24 + self.inter_size() * self.channels() * 16
    }

    pub fn block_table_len(&self) -> usize {
        8 * self.inter_size() * self.blocks_per_frame()
    }

    /// Offset of the first set's BlockEnd table.
    pub fn data_start(&self) -> u64 {
        (HEADER_LEN + self.set_count() * self.meta_entry_len()) as u64
    }

    pub fn raw_bytes(&self) -> u64 {
        self.width as u64 * self.height as u64 * self.channels as u64 * self.frame_count as u64
    }

    pub fn grid(&self) -> BlockGrid {
        BlockGrid::new(self.dims(), self.levels(), self.block_size())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidHeader(msg));
        if self.version != VERSION {
            return Err(Error::UnsupportedVersion(self.version));
        }
        if self.flags & !(FLAG_STEREO | FLAG_FLOAT) != 0 {
            return bad(format!("unknown flags {:#06x}", self.flags));
        }
        if !(1..=4).contains(&self.channels) {
            return bad(format!("{} channels", self.channels));
        }
        if self.levels == 0 || self.levels > 16 {
            return bad(format!("{} levels", self.levels));
        }
        if self.inter_size_log2 > 8 {
            return bad(format!("inter-frame set of 2^{}", self.inter_size_log2));
        }
        if self.block_size_log2 == 0 || self.block_size_log2 > 8 {
            return bad(format!("block size 2^{}", self.block_size_log2));
        }
        let (w, h) = self.dims();
        let step = 1usize << self.levels;
        if w == 0 || h == 0 || w % step != 0 || h % step != 0 {
            return bad(format!("{w}x{h} not divisible by 2^{}", self.levels));
        }
        let b = self.block_size();
        if w % b != 0 || h % b != 0 {
            return bad(format!("block size {b} does not divide {w}x{h}"));
        }
        let (mw, mh) = self.mask_dims();
        if mw == 0 || mh == 0 || w % mw != 0 || h % mh != 0 {
            return bad(format!("mask {mw}x{mh} does not divide {w}x{h}"));
        }
        if self.stereo() && mh % 2 != 0 {
            return bad("stereo mask height must be even".into());
        }
        if !self.fps.is_finite() || self.fps < 0.0 {
            return bad(format!("fps {}", self.fps));
        }
        let total = self.frame_count as usize + self.pad_frames as usize;
        if total % self.inter_size() != 0 {
            return bad(format!(
                "{} frames + {} padding not divisible by {}",
                self.frame_count,
                self.pad_frames,
                self.inter_size()
            ));
        }
        if self.pad_frames as usize >= self.inter_size() {
            return bad(format!("{} padding frames", self.pad_frames));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(&MAGIC);
        b[4..6].copy_from_slice(&self.version.to_le_bytes());
        b[6..8].copy_from_slice(&self.flags.to_le_bytes());
        b[8..12].copy_from_slice(&self.width.to_le_bytes());
        b[12..16].copy_from_slice(&self.height.to_le_bytes());
        b[16..20].copy_from_slice(&self.frame_count.to_le_bytes());
        b[20..24].copy_from_slice(&self.fps.to_le_bytes());
        b[24] = self.channels;
        b[25] = self.levels;
        b[26] = self.inter_size_log2;
        b[27] = self.block_size_log2;
        b[28..30].copy_from_slice(&self.mask_w.to_le_bytes());
        b[30..32].copy_from_slice(&self.mask_h.to_le_bytes());
        b[32] = self.pad_frames;
        b
    }

    /// Parses and validates a header.
    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        if b.len() < HEADER_LEN {
            return Err(Error::MalformedHeader(format!(
                "{} bytes, expected {HEADER_LEN}",
                b.len()
            )));
        }
        let magic = [b[0], b[1], b[2], b[3]];
        if magic != MAGIC {
            return Err(Error::UnsupportedFormat(magic));
        }
        let u16_at = |i: usize| u16::from_le_bytes([b[i], b[i + 1]]);
        let u32_at = |i: usize| u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]]);
        let header = Self {
            version: u16_at(4),
            flags: u16_at(6),
            width: u32_at(8),
            height: u32_at(12),
            frame_count: u32_at(16),
            fps: f32::from_bits(u32_at(20)),
            channels: b[24],
            levels: b[25],
            inter_size_log2: b[26],
            block_size_log2: b[27],
            mask_w: u16_at(28),
            mask_h: u16_at(30),
            pad_frames: b[32],
        };
        header.validate()?;
        Ok(header)
    }
}

/// Normalization range of one temporal frame and channel.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BandExtrema {
    pub approx_min: f32,
    pub approx_max: f32,
    pub detail_min: f32,
    pub detail_max: f32,
}

impl BandExtrema {
    /// `(min, max)` of the approximation or detail band.
    pub fn range(&self, approx: bool) -> (f32, f32) {
        if approx {
            (self.approx_min, self.approx_max)
        } else {
            (self.detail_min, self.detail_max)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SetMeta {
    pub payload_offset: u64,
    pub payload_length: u64,
    pub record_count: u64,
    /// Indexed `temporal * channels + channel`.
    pub extrema: Vec<BandExtrema>,
}

impl SetMeta {
    pub fn extrema(&self, temporal: usize, channel: usize, channels: usize) -> &BandExtrema {
        &self.extrema[temporal * channels + channel]
    }
}

/// Cumulative end offsets of every (temporal frame, block), relative to the
/// start of the set's coefficient data.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockEndTable {
    pub blocks_per_frame: usize,
    pub ends: Vec<u64>,
}

impl BlockEndTable {
    #[inline]
    pub fn start(&self, flat: usize) -> u64 {
        if flat == 0 {
            0
        } else {
            self.ends[flat - 1]
        }
    }

    #[inline]
    pub fn end(&self, flat: usize) -> u64 {
        self.ends[flat]
    }

    pub fn total(&self) -> u64 {
        self.ends.last().copied().unwrap_or(0)
    }
}

/// One inter-frame set as stored in the file.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSet {
    pub meta: SetMeta,
    pub block_ends: BlockEndTable,
    pub records: SparseCoefficients,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RecordKey {
    pub temporal: u16,
    pub block: u32,
    pub offset: u16,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Quantized(Vec<u8>),
    Float(Vec<f32>),
}

/// Stored coefficient records: keys plus `channels` values per record.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseCoefficients {
    pub channels: usize,
    pub keys: Vec<RecordKey>,
    pub payload: Payload,
}

impl SparseCoefficients {
    pub fn new(channels: usize, precision: Precision) -> Self {
        Self {
            channels,
            keys: Vec::new(),
            payload: match precision {
                Precision::Quantized => Payload::Quantized(Vec::new()),
                Precision::Float => Payload::Float(Vec::new()),
            },
        }
    }

    pub fn precision(&self) -> Precision {
        match self.payload {
            Payload::Quantized(_) => Precision::Quantized,
            Payload::Float(_) => Precision::Float,
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn push_quantized(&mut self, key: RecordKey, codes: &[u8]) {
        debug_assert_eq!(codes.len(), self.channels);
        match &mut self.payload {
            Payload::Quantized(v) => v.extend_from_slice(codes),
            Payload::Float(_) => panic!("quantized record pushed into float payload"),
        }
        self.keys.push(key);
    }

    pub fn push_float(&mut self, key: RecordKey, values: &[f32]) {
        debug_assert_eq!(values.len(), self.channels);
        match &mut self.payload {
            Payload::Float(v) => v.extend_from_slice(values),
            Payload::Quantized(_) => panic!("float record pushed into quantized payload"),
        }
        self.keys.push(key);
    }

    /// Stored value of record `i`, channel `c`: the 8-bit code, or the float.
    #[inline]
    pub fn stored(&self, i: usize, c: usize) -> f32 {
        match &self.payload {
            Payload::Quantized(v) => v[i * self.channels + c] as f32,
            Payload::Float(v) => v[i * self.channels + c],
        }
    }

    /// Records of one (temporal frame, block) pair.
    pub fn block_records(&self, temporal: u16, block: u32) -> impl Iterator<Item = usize> + '_ {
        let lo = self
            .keys
            .partition_point(|k| (k.temporal, k.block) < (temporal, block));
        let hi = self
            .keys
            .partition_point(|k| (k.temporal, k.block) <= (temporal, block));
        lo..hi
    }
}

/// Logical grid of square blocks over the Mallat-layout coefficient plane.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockGrid {
    pub width: usize,
    pub height: usize,
    pub levels: usize,
    pub block_size: usize,
    pub blocks_x: usize,
    pub blocks_y: usize,
}

impl BlockGrid {
    pub fn new(dims: (usize, usize), levels: usize, block_size: usize) -> Self {
        Self {
            width: dims.0,
            height: dims.1,
            levels,
            block_size,
            blocks_x: dims.0 / block_size,
            blocks_y: dims.1 / block_size,
        }
    }

    pub fn blocks(&self) -> usize {
        self.blocks_x * self.blocks_y
    }

    #[inline]
    pub fn locate(&self, x: usize, y: usize) -> (u32, u16) {
        let b = self.block_size;
        let block = (y / b) * self.blocks_x + x / b;
        let offset = (y % b) * b + x % b;
        (block as u32, offset as u16)
    }

    #[inline]
    pub fn position(&self, block: u32, offset: u16) -> (usize, usize) {
        let b = self.block_size;
        let (block, offset) = (block as usize, offset as usize);
        (
            (block % self.blocks_x) * b + offset % b,
            (block / self.blocks_x) * b + offset / b,
        )
    }

    /// 0 for the approximation band, then 1 for the coarsest detail level
    /// up to `levels` for the finest.
    #[inline]
    pub fn rank(&self, x: usize, y: usize) -> usize {
        let (level, band) = crate::wavelet::band_of(x, y, self.levels, self.width, self.height);
        if band == crate::wavelet::Subband::LL {
            0
        } else {
            self.levels + 1 - level
        }
    }

    /// Local offsets of `block` in storage order: lowest-frequency level
    /// first, row-major within a level.
    pub fn storage_order(&self, block: u32) -> Vec<u16> {
        let b = self.block_size;
        let (bx, by) = (
            block as usize % self.blocks_x,
            block as usize / self.blocks_x,
        );
        let mut order: Vec<(usize, u16)> = (0..b * b)
            .map(|off| (self.rank(bx * b + off % b, by * b + off / b), off as u16))
            .collect();
        order.sort_unstable();
        order.into_iter().map(|(_, off)| off).collect()
    }

    /// Per-block flags: blocks holding any coefficient the masks select,
    /// plus the whole approximation band so every decode has a defined
    /// low-resolution base.
    pub fn blocks_for_masks(&self, masks: &LevelMaskSet) -> Vec<bool> {
        let mut needed = vec![false; self.blocks()];
        let (aw, ah) = (self.width >> self.levels, self.height >> self.levels);
        for y in 0..ah {
            for x in 0..aw {
                needed[self.locate(x, y).0 as usize] = true;
            }
        }
        for (i, mask) in masks.details.iter().enumerate() {
            let k = i + 1;
            let (w, h) = (self.width >> k, self.height >> k);
            mark_mask(mask, |x, y| {
                for (qx, qy) in [(w + x, y), (x, h + y), (w + x, h + y)] {
                    needed[self.locate(qx, qy).0 as usize] = true;
                }
            });
        }
        needed
    }
}

fn mark_mask(mask: &BitGrid, mut f: impl FnMut(usize, usize)) {
    for y in 0..mask.height {
        for (x0, x1) in mask.row_runs(y) {
            for x in x0..x1 {
                f(x, y);
            }
        }
    }
}
