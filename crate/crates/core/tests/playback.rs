use std::sync::Arc;

use wavevid_core::decoder::{foveation_masks, FoveationSchedule};
use wavevid_core::projection::{render_eye, render_perspective};
use wavevid_core::quality::{
    replay, synthetic_clip, ReplayMode, ReplayOptions, TrajectoryLog, TrajectorySample,
};
use wavevid_core::{
    encode_video, viewport_to_mask, CameraPose, DecodeSession, EncodeParams, Error, Frame,
    LevelMaskSet, VideoFile,
};

fn open(frames: &[Frame], params: &EncodeParams) -> Arc<VideoFile> {
    Arc::new(
        VideoFile::from_bytes(encode_video(frames, params).unwrap().to_bytes().unwrap()).unwrap(),
    )
}

fn small_params() -> EncodeParams {
    EncodeParams {
        levels: Some(3),
        block_size: 16,
        ..EncodeParams::default()
    }
}

#[test]
fn viewport_render_equals_full_render() {
    let frames = synthetic_clip(256, 128, 4);
    let file = open(&frames, &small_params());
    let mut s = DecodeSession::new(Arc::clone(&file));
    let pose = CameraPose::new(-60.0, 25.0, 10.0, 80.0, 70.0).unwrap();
    let mask = viewport_to_mask(&pose, file.header().mask_dims(), false).unwrap();
    let part = s.decode_viewport(2, &mask).unwrap();
    let full = s.decode_full(2).unwrap();
    let a = render_perspective(&part.pixels, &part.footprint, &pose, (96, 80)).unwrap();
    let b = render_perspective(&full.pixels, &full.footprint, &pose, (96, 80)).unwrap();
    assert_eq!(a, b);

    // Looking the other way needs pixels the partial decode never produced.
    let away = CameraPose::new(120.0, -25.0, 0.0, 80.0, 70.0).unwrap();
    assert!(matches!(
        render_perspective(&part.pixels, &part.footprint, &away, (96, 80)),
        Err(Error::Coverage { .. })
    ));
}

#[test]
fn stereo_eyes_decode_independently() {
    // Top half left eye, bottom half right eye.
    let left = synthetic_clip(256, 64, 2);
    let frames: Vec<Frame> = left
        .iter()
        .map(|f| {
            let mut s = Frame::new(256, 128, 3);
            s.data[..f.data.len()].copy_from_slice(&f.data);
            for (o, v) in s.data[f.data.len()..].iter_mut().zip(&f.data) {
                *o = 255 - v;
            }
            s
        })
        .collect();
    let params = EncodeParams {
        stereo: true,
        inter_size: 2,
        ..small_params()
    };
    let file = open(&frames, &params);
    assert!(file.header().stereo());
    let mut s = DecodeSession::new(Arc::clone(&file));
    let pose = CameraPose::default();
    let mask = viewport_to_mask(&pose, file.header().mask_dims(), true).unwrap();
    let d = s.decode_viewport(1, &mask).unwrap();
    let full = s.decode_full(1).unwrap();
    for eye in 0..2 {
        let a = render_eye(&d.pixels, &d.footprint, &pose, (64, 64), eye, 2).unwrap();
        let b = render_eye(&full.pixels, &full.footprint, &pose, (64, 64), eye, 2).unwrap();
        assert_eq!(a, b, "eye {eye}");
    }
    let schedule = FoveationSchedule::default_for(3, (0.5, 0.5));
    let fov = foveation_masks(&mask, &schedule, 3, (256, 128)).unwrap();
    let finest = &fov.details[0];
    let (top, bottom) = finest.cells().split_at(finest.cells().len() / 2);
    assert!(
        top.iter().any(|&c| c) && bottom.iter().any(|&c| c),
        "a fovea per eye"
    );
}

#[test]
fn long_playback_holds_at_most_two_sets() {
    let frames = synthetic_clip(64, 64, 24);
    let file = open(
        &frames,
        &EncodeParams {
            levels: Some(2),
            block_size: 16,
            ..EncodeParams::default()
        },
    );
    let masks = LevelMaskSet::full(64, 64, 2);
    let mut s = DecodeSession::new(Arc::clone(&file));
    for i in 0..24 {
        s.decode_with_masks(i, &masks).unwrap();
        s.advance(&masks).unwrap();
        assert!(s.cached_sets() <= 2);
    }
    assert_eq!(s.stats().frames_decoded, 24);
    assert_eq!(s.stats().set_loads, 6);
}

#[test]
fn replay_from_trajectory_file() {
    let frames = synthetic_clip(128, 64, 8);
    let file = open(&frames, &small_params());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("head.csv");
    let samples = (0..8)
        .map(|i| TrajectorySample {
            t_ms: i as f64 * 33.0,
            yaw: -90.0 + 20.0 * i as f64,
            pitch: 5.0,
            roll: 0.0,
            gaze_u: 0.4,
            gaze_v: 0.6,
        })
        .collect();
    TrajectoryLog::new(samples).unwrap().save(&path).unwrap();
    let log = TrajectoryLog::load(&path).unwrap();
    let opts = ReplayOptions {
        mode: ReplayMode::Foveated,
        runs: 2,
        ..ReplayOptions::default()
    };
    let report = replay(Arc::clone(&file), &log, &opts, Some(&frames)).unwrap();
    assert_eq!(report.frames.len(), 8);
    assert!(report.fps > 0.0);
    assert!((report.fps - 1000.0 / report.mean_ms).abs() < 1e-9);
    assert!(report.mean_psnr.unwrap() > 20.0);
    let ratio = file.header().raw_bytes() as f64 / file.file_len() as f64;
    assert_eq!(report.compression_ratio, ratio);

    let empty = TrajectoryLog::default();
    assert!(matches!(
        replay(file, &empty, &opts, None),
        Err(Error::InvalidTrajectory(_))
    ));
}
