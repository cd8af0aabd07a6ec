//! Inputs of the frozen container files.

use wavevid_core::quality::{synthetic_clip_styled, SyntheticStyle};
use wavevid_core::{EncodeParams, Frame, Mapping, Precision};

/// The three fixtures: name, frames, parameters.
pub fn fixtures() -> Vec<(&'static str, Vec<Frame>, EncodeParams)> {
    let black = vec![Frame::new(64, 32, 3); 4];
    let detailed = synthetic_clip_styled(64, 32, 6, SyntheticStyle::Detailed);
    let stereo = synthetic_clip_styled(64, 64, 2, SyntheticStyle::Smooth);
    vec![
        (
            "black",
            black,
            EncodeParams {
                levels: Some(2),
                block_size: 8,
                ..EncodeParams::default()
            },
        ),
        (
            "detailed_q",
            detailed,
            EncodeParams {
                levels: Some(3),
                block_size: 16,
                fps: 24.0,
                ..EncodeParams::default()
            },
        ),
        (
            "stereo_float",
            stereo,
            EncodeParams {
                levels: Some(2),
                block_size: 8,
                inter_size: 2,
                stereo: true,
                mapping: Mapping::Equirectangular,
                precision: Precision::Float,
                alpha: 0.05,
                ..EncodeParams::default()
            },
        ),
    ]
}
