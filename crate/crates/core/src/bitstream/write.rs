use std::io::Write;

use super::{
    BandExtrema, BlockEndTable, EncodedSet, Payload, SetMeta, SparseCoefficients, VideoHeader,
    HEADER_LEN,
};
use crate::error::{Error, Result};

/// Builds the BlockEnd tables and payload offsets for a sequence of sets.
///
/// Each input set carries its extrema (`inter_size * channels` entries) and
/// records sorted in storage order.
pub fn assemble_sets(
    header: &VideoHeader,
    sets: Vec<(Vec<BandExtrema>, SparseCoefficients)>,
) -> Result<Vec<EncodedSet>> {
    if sets.len() != header.set_count() {
        return Err(Error::Inconsistent(format!(
            "{} sets for a header announcing {}",
            sets.len(),
            header.set_count()
        )));
    }
    let blocks = header.blocks_per_frame();
    let n = header.inter_size();
    let record_size = header.record_size() as u64;
    let mut offset = header.data_start();
    let mut out = Vec::with_capacity(sets.len());
    for (extrema, records) in sets {
        check_records(header, &records)?;
        if extrema.len() != n * header.channels() {
            return Err(Error::Inconsistent(format!(
                "{} extrema entries",
                extrema.len()
            )));
        }
        let mut ends = vec![0u64; n * blocks];
        for key in &records.keys {
            ends[key.temporal as usize * blocks + key.block as usize] += record_size;
        }
        let mut acc = 0;
        for e in ends.iter_mut() {
            acc += *e;
            *e = acc;
        }
        let payload_length = header.block_table_len() as u64 + acc;
        out.push(EncodedSet {
            meta: SetMeta {
                payload_offset: offset,
                payload_length,
                record_count: records.len() as u64,
                extrema,
            },
            block_ends: BlockEndTable {
                blocks_per_frame: blocks,
                ends,
            },
            records,
        });
        offset += payload_length;
    }
    Ok(out)
}

fn check_records(header: &VideoHeader, records: &SparseCoefficients) -> Result<()> {
    if records.channels != header.channels() || records.precision() != header.precision() {
        return Err(Error::Inconsistent(
            "record channels or precision differ from the header".into(),
        ));
    }
    let n = header.inter_size() as u16;
    let blocks = header.blocks_per_frame() as u32;
    let cells = header.block_size() * header.block_size();
    for pair in records.keys.windows(2) {
        if (pair[0].temporal, pair[0].block) > (pair[1].temporal, pair[1].block) {
            return Err(Error::Inconsistent(
                "records are not in storage order".into(),
            ));
        }
    }
    if let Some(k) = records
        .keys
        .iter()
        .find(|k| k.temporal >= n || k.block >= blocks || k.offset as usize >= cells)
    {
        return Err(Error::Inconsistent(format!(
            "record key {k:?} out of range"
        )));
    }
    Ok(())
}

/// Writes a complete video file and returns the number of bytes written.
pub fn write_video<W: Write>(
    header: &VideoHeader,
    sets: &[EncodedSet],
    sink: &mut W,
) -> Result<u64> {
    header.validate()?;
    if sets.len() != header.set_count() {
        return Err(Error::Inconsistent(format!(
            "{} sets for a header announcing {}",
            sets.len(),
            header.set_count()
        )));
    }
    let mut expected = header.data_start();
    for (i, set) in sets.iter().enumerate() {
        check_records(header, &set.records)?;
        let table_len = header.block_table_len() as u64;
        let consistent = set.meta.payload_offset == expected
            && set.meta.record_count == set.records.len() as u64
            && set.block_ends.ends.len() == header.inter_size() * header.blocks_per_frame()
            && set.block_ends.total() == set.records.len() as u64 * header.record_size() as u64
            && set.meta.payload_length == table_len + set.block_ends.total()
            && set.meta.extrema.len() == header.inter_size() * header.channels();
        if !consistent {
            return Err(Error::Inconsistent(format!(
                "set {i} metadata does not match its records"
            )));
        }
        expected += set.meta.payload_length;
    }

    let mut written = 0u64;
    let mut put = |bytes: &[u8]| -> Result<()> {
        sink.write_all(bytes)?;
        written += bytes.len() as u64;
        Ok(())
    };
    put(&header.to_bytes())?;
    let mut meta_bytes = Vec::with_capacity(header.meta_entry_len());
    for set in sets {
        meta_bytes.clear();
        meta_bytes.extend_from_slice(&set.meta.payload_offset.to_le_bytes());
        meta_bytes.extend_from_slice(&set.meta.payload_length.to_le_bytes());
        meta_bytes.extend_from_slice(&set.meta.record_count.to_le_bytes());
        for e in &set.meta.extrema {
            for v in [e.approx_min, e.approx_max, e.detail_min, e.detail_max] {
                meta_bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        put(&meta_bytes)?;
    }
    let mut buf = Vec::new();
    for set in sets {
        buf.clear();
        for end in &set.block_ends.ends {
            buf.extend_from_slice(&end.to_le_bytes());
        }
        encode_records(&set.records, &mut buf);
        put(&buf)?;
    }
    debug_assert!(written >= HEADER_LEN as u64);
    Ok(written)
}

pub(crate) fn encode_records(records: &SparseCoefficients, out: &mut Vec<u8>) {
    let c = records.channels;
    for (i, key) in records.keys.iter().enumerate() {
        out.extend_from_slice(&key.offset.to_le_bytes());
        match &records.payload {
            Payload::Quantized(v) => out.extend_from_slice(&v[i * c..(i + 1) * c]),
            Payload::Float(v) => {
                for x in &v[i * c..(i + 1) * c] {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
    }
}
