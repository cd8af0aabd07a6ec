use std::fs::File;
use std::io::{Read, Seek, SeekFrom};
use std::path::Path;
use std::sync::{Arc, Mutex};

use super::{
    BandExtrema, BlockEndTable, EncodedSet, Payload, Precision, RecordKey, SetMeta,
    SparseCoefficients, VideoHeader, HEADER_LEN,
};
use crate::encoder::SPATIAL_WAVELET;
use crate::error::{Error, Result};
use crate::projection::ViewportMask;
use crate::wavelet::LevelMaskSet;

/// Random-access byte storage behind a [`VideoFile`].
pub trait ByteSource: Send + Sync {
    fn len(&self) -> u64;
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> Result<()>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

struct FileSource {
    file: Mutex<File>,
    len: u64,
}

impl ByteSource for FileSource {
    fn len(&self) -> u64 {
        self.len
    }

    fn read_at(&self, offset: u64, buf: &mut [u8]) -> Result<()> {
        let mut f = self.file.lock().unwrap_or_else(|e| e.into_inner());
        f.seek(SeekFrom::Start(offset))?;
        f.read_exact(buf)?;
        Ok(())
    }
}

impl ByteSource for Vec<u8> {
    fn len(&self) -> u64 {
        self.as_slice().len() as u64
    }

    fn read_at(&self, offset: u64, buf: &mut [u8]) -> Result<()> {
        let start =
            usize::try_from(offset).map_err(|_| Error::Corrupt("offset overflow".into()))?;
        let src = start
            .checked_add(buf.len())
            .and_then(|end| self.get(start..end))
            .ok_or_else(|| {
                Error::Corrupt(format!("read of {} bytes at {offset} past end", buf.len()))
            })?;
        buf.copy_from_slice(src);
        Ok(())
    }
}

/// One physical read issued against the source.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IoEvent {
    pub offset: u64,
    pub len: u64,
}

/// Reads the header and the per-set metadata table.
pub fn read_header<R: Read>(reader: &mut R) -> Result<(VideoHeader, Vec<SetMeta>)> {
    let mut head = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match reader.read(&mut head[got..])? {
            0 => break,
            n => got += n,
        }
    }
    let header = VideoHeader::from_bytes(&head[..got])?;
    let mut table = vec![0u8; header.set_count() * header.meta_entry_len()];
    reader
        .read_exact(&mut table)
        .map_err(|_| Error::Corrupt("truncated metadata table".into()))?;
    let metas = parse_meta_table(&header, &table)?;
    Ok((header, metas))
}

fn parse_meta_table(header: &VideoHeader, table: &[u8]) -> Result<Vec<SetMeta>> {
    let n = header.inter_size();
    let c = header.channels();
    let u64_at = |b: &[u8], i: usize| u64::from_le_bytes(b[i..i + 8].try_into().expect("8 bytes"));
    let f32_at = |b: &[u8], i: usize| f32::from_le_bytes(b[i..i + 4].try_into().expect("4 bytes"));
    let table_len = header.block_table_len() as u64;
    let record_size = header.record_size() as u64;
    let mut expected = header.data_start();
    let mut out = Vec::with_capacity(header.set_count());
    for (s, entry) in table.chunks_exact(header.meta_entry_len()).enumerate() {
        let meta = SetMeta {
            payload_offset: u64_at(entry, 0),
            payload_length: u64_at(entry, 8),
            record_count: u64_at(entry, 16),
            extrema: (0..n * c)
                .map(|i| {
                    let base = 24 + i * 16;
                    BandExtrema {
                        approx_min: f32_at(entry, base),
                        approx_max: f32_at(entry, base + 4),
                        detail_min: f32_at(entry, base + 8),
                        detail_max: f32_at(entry, base + 12),
                    }
                })
                .collect(),
        };
        if meta.payload_offset != expected {
            return Err(Error::Corrupt(format!(
                "set {s} starts at {}, expected {expected}",
                meta.payload_offset
            )));
        }
        let records_len = meta.record_count.checked_mul(record_size);
        if records_len.and_then(|r| r.checked_add(table_len)) != Some(meta.payload_length) {
            return Err(Error::Corrupt(format!(
                "set {s}: {} records do not fill {} payload bytes",
                meta.record_count, meta.payload_length
            )));
        }
        let finite = meta.extrema.iter().all(|e| {
            [e.approx_min, e.approx_max, e.detail_min, e.detail_max]
                .iter()
                .all(|v| v.is_finite())
        });
        if !finite {
            return Err(Error::Corrupt(format!("set {s} has non-finite extrema")));
        }
        expected += meta.payload_length;
        out.push(meta);
    }
    Ok(out)
}

/// Byte span `(start, end)` of blocks `first..=last` of one temporal frame,
/// relative to the set's coefficient data.
pub fn block_range_bytes(
    table: &BlockEndTable,
    temporal: usize,
    first: usize,
    last: usize,
) -> Result<(u64, u64)> {
    let per = table.blocks_per_frame;
    let frames = table.ends.len() / per.max(1);
    if temporal >= frames {
        return Err(Error::OutOfRange {
            what: "temporal frame",
            value: temporal,
            limit: frames,
        });
    }
    if last >= per || first > last {
        return Err(Error::OutOfRange {
            what: "block",
            value: last.max(first),
            limit: per,
        });
    }
    Ok(flat_range_bytes(
        table,
        temporal * per + first..temporal * per + last + 1,
    ))
}

fn flat_range_bytes(table: &BlockEndTable, flat: std::ops::Range<usize>) -> (u64, u64) {
    if flat.is_empty() {
        return (0, 0);
    }
    (table.start(flat.start), table.end(flat.end - 1))
}

/// Records of one set loaded block by block. Keys are grouped per block but
/// blocks appear in load order.
#[derive(Clone, Debug)]
pub struct LoadedBlocks {
    pub set: usize,
    pub table: BlockEndTable,
    /// Flat `temporal * blocks_per_frame + block` flags.
    pub present: Vec<bool>,
    pub records: SparseCoefficients,
    /// Bytes of coefficient data read into this set so far.
    pub bytes_read: u64,
}

impl LoadedBlocks {
    pub fn covers(&self, wanted: &[bool]) -> bool {
        wanted.iter().zip(&self.present).all(|(w, p)| !*w || *p)
    }
}

/// An opened `.wvv` stream.
pub struct VideoFile {
    source: Arc<dyn ByteSource>,
    header: VideoHeader,
    metas: Vec<SetMeta>,
    trace: Mutex<Vec<IoEvent>>,
}

impl std::fmt::Debug for VideoFile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VideoFile")
            .field("header", &self.header)
            .field("sets", &self.metas.len())
            .finish()
    }
}

impl VideoFile {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path)?;
        let len = file.metadata()?.len();
        Self::from_source(Arc::new(FileSource {
            file: Mutex::new(file),
            len,
        }))
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self> {
        Self::from_source(Arc::new(bytes))
    }

    pub fn from_source(source: Arc<dyn ByteSource>) -> Result<Self> {
        let len = source.len();
        let mut head = vec![0u8; (len as usize).min(HEADER_LEN)];
        source.read_at(0, &mut head)?;
        let header = VideoHeader::from_bytes(&head)?;
        let table_len = (header.set_count() * header.meta_entry_len()) as u64;
        if len < HEADER_LEN as u64 + table_len {
            return Err(Error::Corrupt("truncated metadata table".into()));
        }
        let mut table = vec![0u8; table_len as usize];
        source.read_at(HEADER_LEN as u64, &mut table)?;
        let metas = parse_meta_table(&header, &table)?;
        let end = metas
            .last()
            .map_or(header.data_start(), |m| m.payload_offset + m.payload_length);
        if len < end {
            return Err(Error::Corrupt(format!(
                "stream is {len} bytes, payload ends at {end}"
            )));
        }
        Ok(Self {
            source,
            header,
            metas,
            trace: Mutex::new(vec![IoEvent {
                offset: 0,
                len: HEADER_LEN as u64 + table_len,
            }]),
        })
    }

    pub fn header(&self) -> &VideoHeader {
        &self.header
    }

    pub fn set_meta(&self, set: usize) -> &SetMeta {
        &self.metas[set]
    }

    pub fn set_metas(&self) -> &[SetMeta] {
        &self.metas
    }

    pub fn file_len(&self) -> u64 {
        self.source.len()
    }

    /// Every read issued so far, header included.
    pub fn trace(&self) -> Vec<IoEvent> {
        self.trace.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn clear_trace(&self) {
        self.trace.lock().unwrap_or_else(|e| e.into_inner()).clear();
    }

    fn read(&self, offset: u64, buf: &mut [u8]) -> Result<()> {
        self.source.read_at(offset, buf)?;
        self.trace
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(IoEvent {
                offset,
                len: buf.len() as u64,
            });
        Ok(())
    }

    fn check_set(&self, set: usize) -> Result<&SetMeta> {
        self.metas.get(set).ok_or(Error::OutOfRange {
            what: "set",
            value: set,
            limit: self.metas.len(),
        })
    }

    pub fn read_block_table(&self, set: usize) -> Result<BlockEndTable> {
        let meta = self.check_set(set)?;
        let mut bytes = vec![0u8; self.header.block_table_len()];
        self.read(meta.payload_offset, &mut bytes)?;
        let ends: Vec<u64> = bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let record_size = self.header.record_size() as u64;
        let mut prev = 0;
        for &e in &ends {
            if e < prev || (e - prev) % record_size != 0 {
                return Err(Error::Corrupt(format!("set {set}: malformed block table")));
            }
            prev = e;
        }
        if prev != meta.record_count * record_size {
            return Err(Error::Corrupt(format!(
                "set {set}: block table covers {prev} bytes, metadata {}",
                meta.record_count * record_size
            )));
        }
        Ok(BlockEndTable {
            blocks_per_frame: self.header.blocks_per_frame(),
            ends,
        })
    }

    /// Reads a whole set, table and records.
    pub fn read_set(&self, set: usize) -> Result<EncodedSet> {
        let loaded = self.load_blocks(set, None, &vec![true; self.flat_blocks()], 0)?;
        Ok(EncodedSet {
            meta: self.metas[set].clone(),
            block_ends: loaded.table,
            records: loaded.records,
        })
    }

    fn flat_blocks(&self) -> usize {
        self.header.inter_size() * self.header.blocks_per_frame()
    }

    /// Flat block flags a mask set needs: the same spatial blocks in every
    /// temporal frame of the set.
    pub fn wanted_blocks(&self, masks: &LevelMaskSet) -> Vec<bool> {
        let spatial = self.header.grid().blocks_for_masks(masks);
        let mut flat = Vec::with_capacity(self.flat_blocks());
        for _ in 0..self.header.inter_size() {
            flat.extend_from_slice(&spatial);
        }
        flat
    }

    /// Level masks a viewport mask needs: its frame-resolution footprint
    /// closed under the synthesis dependencies of every level.
    pub fn masks_for_viewport(&self, mask: &ViewportMask) -> Result<LevelMaskSet> {
        if mask.dims() != self.header.mask_dims() {
            return Err(Error::Shape(format!(
                "mask {:?}, stream masks are {:?}",
                mask.dims(),
                self.header.mask_dims()
            )));
        }
        let target = mask.to_frame(self.header.dims())?;
        Ok(LevelMaskSet::closure(
            &target,
            self.header.levels(),
            SPATIAL_WAVELET,
        ))
    }

    /// Records of every block a viewport mask depends on, for all temporal
    /// frames of `set`, read in maximal contiguous runs.
    pub fn load_for_mask(&self, set: usize, mask: &ViewportMask) -> Result<LoadedBlocks> {
        self.check_set(set)?;
        let masks = self.masks_for_viewport(mask)?;
        self.load_blocks(set, None, &self.wanted_blocks(&masks), 0)
    }

    /// Loads the wanted blocks of `set` that `existing` does not hold yet,
    /// merging into it. Runs of wanted blocks separated by at most `gap`
    /// unwanted bytes are fetched in one read; blocks read through are kept.
    pub fn load_blocks(
        &self,
        set: usize,
        existing: Option<LoadedBlocks>,
        wanted: &[bool],
        gap: u64,
    ) -> Result<LoadedBlocks> {
        let meta = self.check_set(set)?;
        if wanted.len() != self.flat_blocks() {
            return Err(Error::Shape(format!(
                "{} block flags for {} blocks",
                wanted.len(),
                self.flat_blocks()
            )));
        }
        let mut loaded = match existing {
            Some(l) if l.set == set => l,
            _ => LoadedBlocks {
                set,
                table: self.read_block_table(set)?,
                present: vec![false; self.flat_blocks()],
                records: SparseCoefficients::new(self.header.channels(), self.header.precision()),
                bytes_read: 0,
            },
        };
        let data_base = meta.payload_offset + self.header.block_table_len() as u64;
        let table = &loaded.table;

        // Ranges of missing wanted blocks, merged across small gaps.
        let mut runs: Vec<(usize, usize)> = Vec::new();
        for (i, &want) in wanted.iter().enumerate() {
            if !want || loaded.present[i] {
                continue;
            }
            if let Some(last) = runs.last_mut() {
                let hole = table.start(i) - table.end(last.1 - 1);
                let hole_has_present = loaded.present[last.1..i].iter().any(|&p| p);
                if last.1 == i || (hole <= gap && !hole_has_present) {
                    last.1 = i + 1;
                    continue;
                }
            }
            runs.push((i, i + 1));
        }

        let record_size = self.header.record_size();
        let b = self.header.block_size();
        let cells = b * b;
        let blocks = self.header.blocks_per_frame();
        let mut buf = Vec::new();
        for (lo, hi) in runs {
            let (start, end) = flat_range_bytes(table, lo..hi);
            if end > start {
                buf.resize((end - start) as usize, 0);
                self.read(data_base + start, &mut buf)?;
                loaded.bytes_read += end - start;
            }
            for flat in lo..hi {
                let (s, e) = (
                    (table.start(flat) - start) as usize,
                    (table.end(flat) - start) as usize,
                );
                let key_base = RecordKey {
                    temporal: (flat / blocks) as u16,
                    block: (flat % blocks) as u32,
                    offset: 0,
                };
                for rec in buf[s..e].chunks_exact(record_size) {
                    let offset = u16::from_le_bytes([rec[0], rec[1]]);
                    if offset as usize >= cells {
                        return Err(Error::Corrupt(format!(
                            "record offset {offset} outside a {b}x{b} block"
                        )));
                    }
                    let key = RecordKey { offset, ..key_base };
                    match &mut loaded.records.payload {
                        Payload::Quantized(v) => v.extend_from_slice(&rec[2..]),
                        Payload::Float(v) => {
                            for x in rec[2..].chunks_exact(4) {
                                let f = f32::from_le_bytes(x.try_into().expect("4 bytes"));
                                if !f.is_finite() {
                                    return Err(Error::Corrupt("non-finite coefficient".into()));
                                }
                                v.push(f);
                            }
                        }
                    }
                    loaded.records.keys.push(key);
                }
                loaded.present[flat] = true;
            }
        }
        debug_assert_eq!(
            loaded.records.precision() == Precision::Float,
            self.header.precision() == Precision::Float
        );
        Ok(loaded)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitstream::{assemble_sets, tests::sample_header, write_video};

    fn sample_file() -> (VideoHeader, Vec<EncodedSet>, Vec<u8>) {
        let header = sample_header();
        let blocks = header.blocks_per_frame() as u32;
        let mut sets = Vec::new();
        for s in 0..header.set_count() {
            let mut recs = SparseCoefficients::new(3, Precision::Quantized);
            for t in 0..4u16 {
                for block in 0..blocks {
                    if (block + t as u32 + s as u32) % 3 == 0 {
                        continue;
                    }
                    for offset in [0u16, 5, 900] {
                        let v = (offset % 251) as u8;
                        recs.push_quantized(
                            RecordKey {
                                temporal: t,
                                block,
                                offset,
                            },
                            &[v, t as u8, block as u8],
                        );
                    }
                }
            }
            let extrema = vec![
                BandExtrema {
                    approx_min: 0.0,
                    approx_max: 1.0,
                    detail_min: -0.5,
                    detail_max: 0.5
                };
                12
            ];
            sets.push((extrema, recs));
        }
        let sets = assemble_sets(&header, sets).unwrap();
        let mut bytes = Vec::new();
        let n = write_video(&header, &sets, &mut bytes).unwrap();
        assert_eq!(n as usize, bytes.len());
        (header, sets, bytes)
    }

    #[test]
    fn write_read_round_trip() {
        let (header, sets, bytes) = sample_file();
        let (h, metas) = read_header(&mut bytes.as_slice()).unwrap();
        assert_eq!(h, header);
        assert_eq!(metas.len(), 2);
        let file = VideoFile::from_bytes(bytes).unwrap();
        for (s, set) in sets.iter().enumerate() {
            assert_eq!(file.set_meta(s), &set.meta);
            assert_eq!(&file.read_set(s).unwrap(), set);
        }
    }

    #[test]
    fn partial_loads_merge_to_full() {
        let (header, sets, bytes) = sample_file();
        let file = VideoFile::from_bytes(bytes).unwrap();
        let flat = header.inter_size() * header.blocks_per_frame();
        let even: Vec<bool> = (0..flat).map(|i| i % 2 == 0).collect();
        let part = file.load_blocks(1, None, &even, 0).unwrap();
        assert!(part.covers(&even) && !part.covers(&vec![true; flat]));
        let full = file
            .load_blocks(1, Some(part), &vec![true; flat], 0)
            .unwrap();
        assert_eq!(full.bytes_read, sets[1].block_ends.total());
        let mut got: Vec<_> = full.records.keys.clone();
        got.sort();
        let mut want = sets[1].records.keys.clone();
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn gap_coalescing_reads_through() {
        let (header, _, bytes) = sample_file();
        let file = VideoFile::from_bytes(bytes).unwrap();
        let flat = header.inter_size() * header.blocks_per_frame();
        let sparse: Vec<bool> = (0..flat).map(|i| i % 4 == 0).collect();
        file.clear_trace();
        let strict = file.load_blocks(0, None, &sparse, 0).unwrap();
        let strict_reads = file.trace().len();
        file.clear_trace();
        let loose = file.load_blocks(0, None, &sparse, 1 << 20).unwrap();
        assert!(file.trace().len() < strict_reads);
        assert!(loose.bytes_read >= strict.bytes_read);
        assert!(loose.covers(&sparse));
    }

    #[test]
    fn block_ranges() {
        let (header, sets, _) = sample_file();
        let t = &sets[0].block_ends;
        let per = header.blocks_per_frame();
        assert_eq!(block_range_bytes(t, 0, 0, 0).unwrap().0, 0);
        assert_eq!(block_range_bytes(t, 0, 0, per - 1).unwrap().0, 0);
        assert_eq!(block_range_bytes(t, 3, 0, per - 1).unwrap().1, t.total());
        let (s, e) = block_range_bytes(t, 1, 2, 2).unwrap();
        assert_eq!((s, e), (t.start(per + 2), t.end(per + 2)));
        assert!(block_range_bytes(t, 4, 0, 0).is_err());
        assert!(block_range_bytes(t, 0, 0, per).is_err());
        assert!(block_range_bytes(t, 0, 2, 1).is_err());
    }

    #[test]
    fn corruption_is_reported() {
        let (_, _, bytes) = sample_file();
        let mut cut = bytes.clone();
        cut.truncate(bytes.len() - 10);
        assert!(matches!(VideoFile::from_bytes(cut), Err(Error::Corrupt(_))));

        let mut bad_meta = bytes.clone();
        bad_meta[HEADER_LEN + 16] ^= 0x40;
        assert!(matches!(
            VideoFile::from_bytes(bad_meta),
            Err(Error::Corrupt(_))
        ));

        // Record offset beyond the block.
        let file = VideoFile::from_bytes(bytes.clone()).unwrap();
        let meta = file.set_meta(0).clone();
        let table = file.read_block_table(0).unwrap();
        let first = (0..table.ends.len())
            .find(|&i| table.end(i) > table.start(i))
            .unwrap();
        let pos = (meta.payload_offset
            + file.header().block_table_len() as u64
            + table.start(first)) as usize;
        let mut bad = bytes;
        bad[pos..pos + 2].copy_from_slice(&0xffffu16.to_le_bytes());
        let file = VideoFile::from_bytes(bad).unwrap();
        assert!(matches!(file.read_set(0), Err(Error::Corrupt(_))));
    }
}
