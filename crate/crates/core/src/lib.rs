pub mod bitstream;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod frame;
pub mod projection;
pub mod quality;
pub mod wavelet;

pub use bitstream::{Precision, VideoFile, VideoHeader};
pub use decoder::{DecodeSession, DecodedFrame, FoveationSchedule, FrameStats, SessionStats};
pub use encoder::{encode_video, EncodeParams, EncodedVideo, Mapping};
pub use error::{Error, Result};
pub use frame::{load_frame_dir, Frame, Plane};
pub use projection::{viewport_to_mask, CameraPose, ViewportMask};
pub use quality::{psnr, replay, ssim, BenchReport, ReplayMode, ReplayOptions, TrajectoryLog};
pub use wavelet::{BitGrid, LevelMaskSet, WaveletKind};
