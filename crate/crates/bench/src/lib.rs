//! Shared fixtures for the codec benchmarks.

use std::sync::Arc;

use wavevid_core::quality::{synthetic_clip_styled, SyntheticStyle};
use wavevid_core::{encode_video, EncodeParams, Frame, VideoFile};

pub const SIZE: usize = 512;
pub const LEVELS: usize = 6;

pub fn clip(frames: usize) -> Vec<Frame> {
    synthetic_clip_styled(SIZE, SIZE, frames, SyntheticStyle::Detailed)
}

pub fn hq_params() -> EncodeParams {
    EncodeParams {
        levels: Some(LEVELS),
        ..EncodeParams::default()
    }
}

/// An encoded in-memory clip of `frames` frames.
pub fn encoded(frames: usize, params: &EncodeParams) -> Arc<VideoFile> {
    let bytes = encode_video(&clip(frames), params)
        .and_then(|v| v.to_bytes())
        .expect("fixture encodes");
    Arc::new(VideoFile::from_bytes(bytes).expect("fixture parses"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_opens() {
        let file = encoded(4, &hq_params());
        assert_eq!(file.header().frame_count, 4);
        assert_eq!(file.header().levels(), LEVELS);
    }
}
