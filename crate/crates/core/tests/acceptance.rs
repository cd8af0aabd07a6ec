//! Acceptance suite: one PASS/FAIL line per criterion, on 512×512,
//! 16-frame synthetic clips. Exits non-zero if any criterion fails.

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use wavevid_core::bitstream::{Payload, VideoFile};
use wavevid_core::decoder::{dequantize_records, temporal_inverse_sparse, FoveationSchedule};
use wavevid_core::encoder::{encode_video, EncodeParams, LQ_ALPHA};
use wavevid_core::projection::{viewport_to_mask, CameraPose};
use wavevid_core::quality::{
    compression_ratio, psnr, ssim, synthetic_clip, synthetic_clip_styled, SyntheticStyle,
};
use wavevid_core::wavelet::{haar_inverse_full, BitGrid, LevelMaskSet, WaveletKind};
use wavevid_core::{DecodeSession, Frame};

#[path = "golden/fixtures.rs"]
mod fixtures;

const SIZE: usize = 512;
const FRAMES: usize = 16;
const LEVELS: usize = 6;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn params(alpha: f32) -> EncodeParams {
    EncodeParams {
        alpha,
        levels: Some(LEVELS),
        ..EncodeParams::default()
    }
}

fn open(frames: &[Frame], p: &EncodeParams) -> (Arc<VideoFile>, u64) {
    let bytes = encode_video(frames, p).unwrap().to_bytes().unwrap();
    let len = bytes.len() as u64;
    (Arc::new(VideoFile::from_bytes(bytes).unwrap()), len)
}

fn max_abs_error(a: &Frame, b: &Frame) -> u8 {
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| x.abs_diff(*y))
        .max()
        .unwrap_or(0)
}

fn lossless_path(smooth: &[Frame]) -> Outcome {
    let start = Instant::now();
    let (file, _) = open(
        smooth,
        &EncodeParams {
            levels: Some(LEVELS),
            ..EncodeParams::lossless()
        },
    );
    let mut s = DecodeSession::new(file);
    let (mut worst, mut min_psnr) = (0u8, f64::INFINITY);
    for (i, f) in smooth.iter().enumerate() {
        let d = s.decode_full(i).unwrap();
        worst = worst.max(max_abs_error(&d.pixels, f));
        min_psnr = min_psnr.min(psnr(&d.pixels, f).unwrap());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1 && min_psnr >= 60.0 && secs < 10.0,
        format!("max error {worst} (<= 1), min PSNR {min_psnr:.2} dB (>= 60), {secs:.2} s (< 10)"),
    )
}

fn quantized_near_lossless(smooth: &[Frame]) -> Outcome {
    let start = Instant::now();
    let (file, _) = open(
        smooth,
        &EncodeParams {
            alpha: 0.0,
            inter_threshold: 0.0,
            levels: Some(LEVELS),
            ..EncodeParams::default()
        },
    );
    let mut s = DecodeSession::new(file);
    let min_psnr = smooth
        .iter()
        .enumerate()
        .map(|(i, f)| psnr(&s.decode_full(i).unwrap().pixels, f).unwrap())
        .fold(f64::INFINITY, f64::min);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        min_psnr >= 40.0 && secs < 10.0,
        format!("min PSNR {min_psnr:.2} dB (>= 40), {secs:.2} s (< 10)"),
    )
}

fn random_target(rng: &mut ChaCha8Rng, file: &VideoFile) -> BitGrid {
    let (w, h) = file.header().dims();
    if rng.gen_bool(0.5) {
        let pose = CameraPose::new(
            rng.gen_range(-180.0..180.0),
            rng.gen_range(-90.0..=90.0),
            rng.gen_range(-180.0..180.0),
            rng.gen_range(20.0..170.0),
            rng.gen_range(20.0..170.0),
        )
        .unwrap();
        viewport_to_mask(&pose, file.header().mask_dims(), false)
            .unwrap()
            .to_frame((w, h))
            .unwrap()
    } else {
        let (x0, y0) = (rng.gen_range(0..w), rng.gen_range(0..h));
        let (rw, rh) = (rng.gen_range(1..=w / 2), rng.gen_range(1..=h / 2));
        BitGrid::from_fn(w, h, |x, y| {
            x >= x0 && x < x0 + rw && y >= y0 && y < y0 + rh
        })
    }
}

fn roi_exactness(detailed: &[Frame]) -> Outcome {
    let start = Instant::now();
    let (file, _) = open(detailed, &params(0.1));
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut full = DecodeSession::new(Arc::clone(&file));
    let reference: Vec<Frame> = (0..FRAMES)
        .map(|i| full.decode_full(i).unwrap().pixels)
        .collect();
    let mut session = DecodeSession::new(Arc::clone(&file));
    let (mut mismatched, mut uncovered, mut checked) = (0usize, 0usize, 0usize);
    for _ in 0..100 {
        let target = random_target(&mut rng, &file);
        let masks = LevelMaskSet::closure(&target, LEVELS, WaveletKind::Cdf97);
        let frame = rng.gen_range(0..FRAMES);
        let d = session.decode_with_masks(frame, &masks).unwrap();
        if !target.is_subset_of(&d.footprint) {
            uncovered += 1;
        }
        let c = d.pixels.channels;
        for (i, &k) in d.footprint.cells().iter().enumerate() {
            if k {
                checked += 1;
                if d.pixels.data[i * c..(i + 1) * c] != reference[frame].data[i * c..(i + 1) * c] {
                    mismatched += 1;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        mismatched == 0 && uncovered == 0 && secs < 60.0,
        format!("{mismatched} of {checked} footprint pixels differ, {uncovered} targets uncovered, {secs:.2} s (< 60)"),
    )
}

fn temporal_oracle(detailed: &[Frame]) -> Outcome {
    let start = Instant::now();
    let (mut compared, mut differing) = (0usize, 0usize);
    for n in [1, 2, 4, 8] {
        let p = EncodeParams {
            inter_size: n,
            levels: Some(LEVELS),
            ..EncodeParams::default()
        };
        let video = encode_video(&detailed[..8], &p).unwrap();
        let positions: Vec<(usize, usize)> = {
            let grid = video.header.grid();
            let mut v: Vec<_> = video
                .sets
                .iter()
                .flat_map(|s| {
                    s.records
                        .keys
                        .iter()
                        .map(|k| grid.position(k.block, k.offset))
                })
                .collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        for set in &video.sets {
            let dense = dequantize_records(&set.records, &set.meta.extrema, &video.header).unwrap();
            for t in 0..n {
                let sparse =
                    temporal_inverse_sparse(&set.records, &set.meta.extrema, &video.header, t)
                        .unwrap();
                for (c, plane) in sparse.iter().enumerate() {
                    for &(x, y) in &positions {
                        let mut series: Vec<f32> = (0..n).map(|j| dense[j][c].get(x, y)).collect();
                        haar_inverse_full(&mut series);
                        compared += 1;
                        if plane.get(x, y).to_bits() != series[t].to_bits() {
                            differing += 1;
                        }
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        differing == 0 && secs < 10.0,
        format!("{differing} of {compared} record positions differ (n = 1, 2, 4, 8), {secs:.2} s (< 10)"),
    )
}

fn keyframe_freedom(detailed: &[Frame]) -> Outcome {
    let (file, _) = open(detailed, &params(0.1));
    let metas = file.set_metas().to_vec();
    let set_of_offset = |offset: u64| {
        metas.iter().position(|m| {
            offset >= m.payload_offset && offset < m.payload_offset + m.payload_length
        })
    };
    let mut sequential = DecodeSession::new(Arc::clone(&file));
    let reference: Vec<Frame> = (0..FRAMES)
        .map(|i| sequential.decode_full(i).unwrap().pixels)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut bad, mut differ) = (0usize, 0usize);
    let seeks = 40;
    for _ in 0..seeks {
        let frame = rng.gen_range(0..FRAMES);
        let mut session = DecodeSession::new(Arc::clone(&file));
        file.clear_trace();
        let d = session.decode_full(frame).unwrap();
        let mut touched: Vec<Option<usize>> = file
            .trace()
            .iter()
            .flat_map(|e| {
                [
                    set_of_offset(e.offset),
                    set_of_offset(e.offset + e.len.max(1) - 1),
                ]
            })
            .collect();
        touched.sort_unstable();
        touched.dedup();
        if touched != [Some(frame / file.header().inter_size())] {
            bad += 1;
        }
        if d.pixels != reference[frame] {
            differ += 1;
        }
    }
    outcome(
        bad == 0 && differ == 0,
        format!("{bad} of {seeks} random seeks touched other than one set, {differ} differ from sequential decode"),
    )
}

fn mean_psnr(file: Arc<VideoFile>, frames: &[Frame]) -> f64 {
    let mut s = DecodeSession::new(file);
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| psnr(&s.decode_full(i).unwrap().pixels, f).unwrap())
        .sum::<f64>()
        / frames.len() as f64
}

fn quality_ordering(smooth: &[Frame], detailed: &[Frame]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, clip) in [("smooth", smooth), ("detailed", detailed)] {
        let (hq, hq_len) = open(clip, &params(0.1));
        let (lq, lq_len) = open(clip, &params(LQ_ALPHA));
        let raw = hq.header().raw_bytes();
        let (p_hq, p_lq) = (mean_psnr(hq, clip), mean_psnr(lq, clip));
        let (r_hq, r_lq) = (
            compression_ratio(raw, hq_len),
            compression_ratio(raw, lq_len),
        );
        ok &= p_hq > p_lq && r_lq > r_hq;
        parts.push(format!(
            "{name}: PSNR {p_hq:.2} > {p_lq:.2} dB, ratio {r_lq:.1} > {r_hq:.1}"
        ));
    }
    outcome(ok, parts.join("; "))
}

fn compression_magnitude(smooth: &[Frame]) -> Outcome {
    let (file, len) = open(smooth, &params(0.1));
    let ratio = compression_ratio(file.header().raw_bytes(), len);
    outcome(ratio >= 20.0, format!("HQ ratio {ratio:.1}:1 (>= 20)"))
}

fn foveation_savings(detailed: &[Frame]) -> Outcome {
    let (file, _) = open(detailed, &params(0.1));
    let mut s = DecodeSession::new(Arc::clone(&file));
    let pose = CameraPose::new(0.0, 0.0, 0.0, 90.0, 90.0).unwrap();
    let mask = viewport_to_mask(&pose, file.header().mask_dims(), false).unwrap();
    let schedule = FoveationSchedule::default_for(LEVELS, (0.5, 0.5));
    let (mut view, mut fov) = (0u64, 0u64);
    for i in 0..FRAMES {
        view += s.decode_viewport(i, &mask).unwrap().stats.bytes_loaded;
        fov += s
            .decode_foveated(i, &mask, &schedule)
            .unwrap()
            .stats
            .bytes_loaded;
    }
    let saving = 1.0 - fov as f64 / view as f64;
    outcome(
        saving >= 0.5,
        format!(
            "foveated {fov} vs viewport {view} bytes, {:.1}% fewer (>= 50%)",
            saving * 100.0
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn cost_monotonicity(detailed: &[Frame]) -> Outcome {
    let (file, _) = open(
        detailed,
        &EncodeParams {
            alpha: 0.0,
            inter_threshold: 0.0,
            levels: Some(LEVELS),
            ..EncodeParams::default()
        },
    );
    let mut rows = Vec::new();
    for fraction in [0.25, 0.5, 1.0] {
        let masks = if fraction >= 1.0 {
            LevelMaskSet::full(SIZE, SIZE, LEVELS)
        } else {
            let w = (SIZE as f64 * fraction) as usize;
            let target = BitGrid::from_fn(SIZE, SIZE, |x, _| x < w);
            LevelMaskSet::closure(&target, LEVELS, WaveletKind::Cdf97)
        };
        let mut times = Vec::new();
        let mut bytes = 0;
        for run in 0..21 {
            let mut s = DecodeSession::new(Arc::clone(&file));
            let start = Instant::now();
            let d = s.decode_with_masks(5, &masks).unwrap();
            let elapsed = start.elapsed();
            bytes = d.stats.bytes_loaded;
            // First run warms caches and is discarded.
            if run > 0 {
                times.push(elapsed.as_secs_f64() * 1e3);
            }
        }
        rows.push((fraction, median(times), bytes));
    }
    let ok = rows
        .windows(2)
        .all(|w| w[0].1 <= w[1].1 && w[0].2 <= w[1].2);
    let detail = rows
        .iter()
        .map(|(f, t, b)| format!("{:.0}%: {t:.2} ms, {b} B", f * 100.0))
        .collect::<Vec<_>>()
        .join("; ");
    outcome(ok, detail)
}

fn structure_json(file: &VideoFile) -> Value {
    let h = file.header();
    let header = json!({
        "version": h.version, "flags": h.flags, "width": h.width, "height": h.height,
        "frame_count": h.frame_count, "fps_bits": h.fps.to_bits(), "channels": h.channels,
        "levels": h.levels, "inter_size_log2": h.inter_size_log2, "block_size_log2": h.block_size_log2,
        "mask_w": h.mask_w, "mask_h": h.mask_h, "pad_frames": h.pad_frames,
    });
    let sets: Vec<Value> = (0..h.set_count())
        .map(|i| {
            let set = file.read_set(i).unwrap();
            let blocks = h.blocks_per_frame();
            let records: Vec<Value> = set
                .records
                .keys
                .iter()
                .enumerate()
                .map(|(r, k)| {
                    let mut row = vec![json!(k.temporal), json!(k.block), json!(k.offset)];
                    for c in 0..h.channels() {
                        row.push(match &set.records.payload {
                            Payload::Quantized(v) => json!(v[r * h.channels() + c]),
                            Payload::Float(v) => json!(v[r * h.channels() + c].to_bits()),
                        });
                    }
                    debug_assert!((k.block as usize) < blocks);
                    Value::Array(row)
                })
                .collect();
            let m = &set.meta;
            json!({
                "meta": {
                    "payload_offset": m.payload_offset,
                    "payload_length": m.payload_length,
                    "record_count": m.record_count,
                    "extrema_bits": m.extrema.iter().map(|e| [
                        e.approx_min.to_bits(), e.approx_max.to_bits(),
                        e.detail_min.to_bits(), e.detail_max.to_bits(),
                    ]).collect::<Vec<_>>(),
                },
                "block_ends": set.block_ends.ends,
                "records": records,
            })
        })
        .collect();
    json!({ "header": header, "sets": sets })
}

fn golden_files() -> Outcome {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let mut failures = Vec::new();
    let all = fixtures::fixtures();
    for (name, frames, params) in &all {
        let frozen = std::fs::read(dir.join(format!("{name}.wvv"))).unwrap();
        let expected: Value = serde_json::from_str(
            &std::fs::read_to_string(dir.join(format!("{name}.json"))).unwrap(),
        )
        .unwrap();
        let fresh = encode_video(frames, params).unwrap().to_bytes().unwrap();
        if fresh != frozen {
            failures.push(format!("{name}: re-encode drifted"));
        }
        let parsed = structure_json(&VideoFile::from_bytes(frozen).unwrap());
        if parsed != expected {
            failures.push(format!("{name}: parsed structure differs"));
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} files byte-stable and field-identical", all.len())
        } else {
            failures.join("; ")
        },
    )
}

fn metric_self_test() -> Outcome {
    let a = Frame::filled(64, 64, &[100, 120, 140]);
    let b = Frame::filled(64, 64, &[116, 136, 156]);
    let p = psnr(&a, &b).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut c = Frame::new(64, 64, 3);
    rng.fill(&mut c.data[..]);
    let s = ssim(&c, &c).unwrap();
    outcome(
        (p - 24.05).abs() <= 0.01 && s == 1.0,
        format!("PSNR {p:.4} dB (24.05 ± 0.01), SSIM identical {s}"),
    )
}

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn main() {
    let started = Instant::now();
    let smooth = synthetic_clip(SIZE, SIZE, FRAMES);
    let detailed = synthetic_clip_styled(SIZE, SIZE, FRAMES, SyntheticStyle::Detailed);
    let criteria: Vec<Criterion> = vec![
        ("lossless path", Box::new(|| lossless_path(&smooth))),
        (
            "quantized near-lossless",
            Box::new(|| quantized_near_lossless(&smooth)),
        ),
        ("ROI exactness", Box::new(|| roi_exactness(&detailed))),
        ("temporal oracle", Box::new(|| temporal_oracle(&detailed))),
        ("keyframe freedom", Box::new(|| keyframe_freedom(&detailed))),
        (
            "quality ordering",
            Box::new(|| quality_ordering(&smooth, &detailed)),
        ),
        (
            "compression magnitude",
            Box::new(|| compression_magnitude(&smooth)),
        ),
        (
            "foveation savings",
            Box::new(|| foveation_savings(&detailed)),
        ),
        (
            "cost monotonicity",
            Box::new(|| cost_monotonicity(&detailed)),
        ),
        ("format golden files", Box::new(golden_files)),
        ("metric self-test", Box::new(metric_self_test)),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let o = check();
        println!(
            "{} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += !o.pass as usize;
    }
    println!(
        "acceptance: {} of {} criteria passed in {:.1?}",
        criteria.len() - failed,
        criteria.len(),
        Duration::from_secs_f64(started.elapsed().as_secs_f64())
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
