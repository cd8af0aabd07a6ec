//! Objective metrics, trajectory replay and the synthetic test clip.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use crate::bitstream::VideoFile;
use crate::decoder::{foveation_masks, DecodeSession, FoveationSchedule};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::projection::{viewport_to_mask, CameraPose};
use crate::wavelet::{BitGrid, LevelMaskSet};

/// Reported for identical images instead of infinity.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 8;
const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

fn check_same(a: &Frame, b: &Frame) -> Result<()> {
    if (a.width, a.height, a.channels) != (b.width, b.height, b.channels) {
        return Err(Error::Shape(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    Ok(())
}

pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    psnr_masked(a, b, None)
}

/// PSNR over the pixels set in `mask` (all pixels without one).
pub fn psnr_masked(a: &Frame, b: &Frame, mask: Option<&BitGrid>) -> Result<f64> {
    check_same(a, b)?;
    if let Some(m) = mask {
        if m.dims() != (a.width, a.height) {
            return Err(Error::Shape(format!("mask {:?}", m.dims())));
        }
    }
    let c = a.channels;
    let (mut sum, mut count) = (0.0f64, 0usize);
    for i in 0..a.width * a.height {
        if mask.is_some_and(|m| !m.cells()[i]) {
            continue;
        }
        for k in 0..c {
            let d = a.data[i * c + k] as f64 - b.data[i * c + k] as f64;
            sum += d * d;
        }
        count += c;
    }
    if count == 0 {
        return Err(Error::Shape("empty comparison region".into()));
    }
    Ok(psnr_from_mse(sum / count as f64))
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (255.0 * 255.0 / mse).log10()).min(PSNR_CAP)
    }
}

fn luminance(f: &Frame) -> Vec<f64> {
    f.data
        .chunks_exact(f.channels)
        .map(|p| p.iter().map(|&v| v as f64).sum::<f64>() / f.channels as f64)
        .collect()
}

/// Mean SSIM over all 8×8 windows (stride 1) of the channel-mean luminance.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    ssim_masked(a, b, None)
}

/// Mean SSIM over the windows lying entirely inside `mask`.
pub fn ssim_masked(a: &Frame, b: &Frame, mask: Option<&BitGrid>) -> Result<f64> {
    check_same(a, b)?;
    let (w, h) = (a.width, a.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "{w}x{h} is smaller than one SSIM window"
        )));
    }
    let (la, lb) = (luminance(a), luminance(b));
    // Summed-area tables of x, y, x², y², xy.
    let stride = w + 1;
    let mut tables = vec![[0.0f64; 5]; stride * (h + 1)];
    for y in 0..h {
        let mut row = [0.0f64; 5];
        for x in 0..w {
            let (p, q) = (la[y * w + x], lb[y * w + x]);
            for (r, v) in row.iter_mut().zip([p, q, p * p, q * q, p * q]) {
                *r += v;
            }
            let above = tables[y * stride + x + 1];
            let cell = &mut tables[(y + 1) * stride + x + 1];
            for i in 0..5 {
                cell[i] = above[i] + row[i];
            }
        }
    }
    let inside = mask.map(|m| {
        let mut t = vec![0u32; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0;
            for x in 0..w {
                row += m.get(x, y) as u32;
                t[(y + 1) * stride + x + 1] = t[y * stride + x + 1] + row;
            }
        }
        t
    });
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let (mut total, mut windows) = (0.0, 0usize);
    for y in 0..=h - SSIM_WINDOW {
        for x in 0..=w - SSIM_WINDOW {
            let (x1, y1) = (x + SSIM_WINDOW, y + SSIM_WINDOW);
            if let Some(t) = &inside {
                let c = t[y1 * stride + x1] + t[y * stride + x]
                    - t[y * stride + x1]
                    - t[y1 * stride + x];
                if c as usize != SSIM_WINDOW * SSIM_WINDOW {
                    continue;
                }
            }
            let mut s = [0.0; 5];
            for (i, v) in s.iter_mut().enumerate() {
                *v = tables[y1 * stride + x1][i] + tables[y * stride + x][i]
                    - tables[y * stride + x1][i]
                    - tables[y1 * stride + x][i];
            }
            total += ssim_window(s, n);
            windows += 1;
        }
    }
    if windows == 0 {
        return Err(Error::Shape("no SSIM window inside the mask".into()));
    }
    Ok(total / windows as f64)
}

/// SSIM of one window from its sums, using population statistics.
fn ssim_window([sx, sy, sxx, syy, sxy]: [f64; 5], n: f64) -> f64 {
    let (mx, my) = (sx / n, sy / n);
    let vx = (sxx / n - mx * mx).max(0.0);
    let vy = (syy / n - my * my).max(0.0);
    let cov = sxy / n - mx * my;
    ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
        / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
}

/// Raw RGB bytes over file bytes.
pub fn compression_ratio(raw_bytes: u64, file_bytes: u64) -> f64 {
    raw_bytes as f64 / file_bytes.max(1) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t_ms: f64,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    pub gaze_u: f64,
    pub gaze_v: f64,
}

/// Head and gaze samples in time order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryLog {
    pub samples: Vec<TrajectorySample>,
}

pub const TRAJECTORY_HEADER: [&str; 6] = ["t_ms", "yaw", "pitch", "roll", "gaze_u", "gaze_v"];

impl TrajectoryLog {
    pub fn new(samples: Vec<TrajectorySample>) -> Result<Self> {
        let log = Self { samples };
        log.validate()?;
        Ok(log)
    }

    /// One fixed pose and a centered gaze.
    pub fn fixed(yaw: f64, pitch: f64, roll: f64, duration_ms: f64) -> Result<Self> {
        let at = |t_ms| TrajectorySample {
            t_ms,
            yaw,
            pitch,
            roll,
            gaze_u: 0.5,
            gaze_v: 0.5,
        };
        Self::new(vec![at(0.0), at(duration_ms.max(1.0))])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidTrajectory(m));
        if self.samples.is_empty() {
            return bad("no samples".into());
        }
        for (i, s) in self.samples.iter().enumerate() {
            if !s.t_ms.is_finite() {
                return bad(format!("sample {i}: timestamp {}", s.t_ms));
            }
            if i > 0 && s.t_ms <= self.samples[i - 1].t_ms {
                return bad(format!("sample {i}: timestamps must increase strictly"));
            }
            CameraPose::new(s.yaw, s.pitch, s.roll, 90.0, 90.0)
                .map_err(|e| Error::InvalidTrajectory(format!("sample {i}: {e}")))?;
            if !((0.0..=1.0).contains(&s.gaze_u) && (0.0..=1.0).contains(&s.gaze_v)) {
                return bad(format!(
                    "sample {i}: gaze ({}, {}) outside [0, 1]",
                    s.gaze_u, s.gaze_v
                ));
            }
        }
        Ok(())
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::InvalidTrajectory(e.to_string()))?
            .clone();
        if headers.iter().collect::<Vec<_>>() != TRAJECTORY_HEADER {
            return Err(Error::InvalidTrajectory(format!(
                "header must be {}",
                TRAJECTORY_HEADER.join(",")
            )));
        }
        let samples = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<TrajectorySample>, _>>()
            .map_err(|e| Error::InvalidTrajectory(e.to_string()))?;
        Self::new(samples)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn write_to<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        for s in &self.samples {
            w.serialize(s)
                .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(std::fs::File::create(path)?)
    }

    /// The latest sample at or before `t_ms`, or the first one.
    pub fn sample_at(&self, t_ms: f64) -> &TrajectorySample {
        let i = self.samples.partition_point(|s| s.t_ms <= t_ms);
        &self.samples[i.saturating_sub(1)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplayMode {
    Full,
    Viewport,
    Foveated,
}

impl FromStr for ReplayMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "viewport" => Ok(Self::Viewport),
            "foveated" => Ok(Self::Foveated),
            other => Err(Error::InvalidParams(format!("unknown mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for ReplayMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::Viewport => "viewport",
            Self::Foveated => "foveated",
        })
    }
}

#[derive(Clone, Debug)]
pub struct ReplayOptions {
    pub mode: ReplayMode,
    pub fov_h: f64,
    pub fov_v: f64,
    /// Timed runs; one extra warm-up run precedes them and is discarded.
    pub runs: usize,
    /// Display frames to decode; all when `None`.
    pub frames: Option<usize>,
    /// Playback rate used to look up the trajectory when the file has none.
    pub fps: f64,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        Self {
            mode: ReplayMode::Viewport,
            fov_h: 90.0,
            fov_v: 90.0,
            runs: 1,
            frames: None,
            fps: 30.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrameReport {
    pub frame: usize,
    pub decode_ms: f64,
    pub bytes_loaded: u64,
    pub records: u64,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub mode: ReplayMode,
    pub frames: Vec<FrameReport>,
    pub mean_ms: f64,
    pub fps: f64,
    pub total_bytes_loaded: u64,
    pub total_records: u64,
    pub mean_psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
    pub file_bytes: u64,
    pub raw_bytes: u64,
    pub compression_ratio: f64,
}

impl BenchReport {
    fn from_frames(
        mode: ReplayMode,
        frames: Vec<FrameReport>,
        file_bytes: u64,
        raw_bytes: u64,
    ) -> Self {
        let n = frames.len().max(1) as f64;
        let mean_ms = frames.iter().map(|f| f.decode_ms).sum::<f64>() / n;
        let mean_of = |get: fn(&FrameReport) -> Option<f64>| {
            let v: Vec<f64> = frames.iter().filter_map(get).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        Self {
            mode,
            mean_ms,
            fps: if mean_ms > 0.0 {
                1000.0 / mean_ms
            } else {
                f64::INFINITY
            },
            total_bytes_loaded: frames.iter().map(|f| f.bytes_loaded).sum(),
            total_records: frames.iter().map(|f| f.records).sum(),
            mean_psnr: mean_of(|f| f.psnr),
            mean_ssim: mean_of(|f| f.ssim),
            file_bytes,
            raw_bytes,
            compression_ratio: compression_ratio(raw_bytes, file_bytes),
            frames,
        }
    }

    /// Aggregate fields as `key=value` lines.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(s, "mode={}", self.mode);
        let _ = writeln!(s, "frames={}", self.frames.len());
        let _ = writeln!(s, "mean_ms={:.3}", self.mean_ms);
        let _ = writeln!(s, "fps={:.2}", self.fps);
        let _ = writeln!(s, "bytes_loaded={}", self.total_bytes_loaded);
        let _ = writeln!(s, "records={}", self.total_records);
        let _ = writeln!(s, "psnr={}", opt(self.mean_psnr));
        let _ = writeln!(s, "ssim={}", opt(self.mean_ssim));
        let _ = writeln!(s, "file_bytes={}", self.file_bytes);
        let _ = writeln!(s, "raw_bytes={}", self.raw_bytes);
        let _ = writeln!(s, "compression_ratio={:.2}", self.compression_ratio);
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Copy with timing fields zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        for f in &mut r.frames {
            f.decode_ms = 0.0;
        }
        r.mean_ms = 0.0;
        r.fps = 0.0;
        r
    }
}

/// Masks and the comparison region for one display frame.
fn frame_masks(
    file: &VideoFile,
    sample: &TrajectorySample,
    opts: &ReplayOptions,
) -> Result<(LevelMaskSet, Option<BitGrid>)> {
    let header = file.header();
    let (w, h) = header.dims();
    if opts.mode == ReplayMode::Full {
        return Ok((LevelMaskSet::full(w, h, header.levels()), None));
    }
    let pose = CameraPose::new(
        sample.yaw,
        sample.pitch,
        sample.roll,
        opts.fov_h,
        opts.fov_v,
    )?;
    let mask = viewport_to_mask(&pose, header.mask_dims(), header.stereo())?;
    let region = mask.to_frame((w, h))?;
    let masks = match opts.mode {
        ReplayMode::Viewport => file.masks_for_viewport(&mask)?,
        _ => {
            let schedule =
                FoveationSchedule::default_for(header.levels(), (sample.gaze_u, sample.gaze_v));
            foveation_masks(&mask, &schedule, header.levels(), (w, h))?
        }
    };
    Ok((masks, Some(region)))
}

/// Decodes every display frame under the trajectory's pose and gaze.
/// Quality is measured inside the viewport against `reference` when given.
pub fn replay(
    file: Arc<VideoFile>,
    trajectory: &TrajectoryLog,
    opts: &ReplayOptions,
    reference: Option<&[Frame]>,
) -> Result<BenchReport> {
    trajectory.validate()?;
    let header = file.header().clone();
    let total = header.frame_count as usize;
    let count = opts.frames.map_or(total, |f| f.min(total));
    if let Some(r) = reference {
        if r.len() < count {
            return Err(Error::InvalidParams(format!(
                "{} reference frames for {count}",
                r.len()
            )));
        }
    }
    let fps = if header.fps > 0.0 {
        header.fps as f64
    } else {
        opts.fps
    };
    let plans = (0..count)
        .map(|i| frame_masks(&file, trajectory.sample_at(i as f64 * 1000.0 / fps), opts))
        .collect::<Result<Vec<_>>>()?;
    let n = header.inter_size();

    let runs = opts.runs.max(1);
    let mut timings = vec![0.0f64; count];
    let mut last = Vec::new();
    for run in 0..=runs {
        let mut session = DecodeSession::new(Arc::clone(&file));
        let mut frames = Vec::with_capacity(count);
        for (i, (masks, _)) in plans.iter().enumerate() {
            let start = Instant::now();
            let decoded = session.decode_with_masks(i, masks)?;
            if i % n == 0 && i + n < count {
                session.advance(&plans[i + n].0)?;
            }
            let ms = start.elapsed().as_secs_f64() * 1e3;
            if run > 0 {
                timings[i] += ms / runs as f64;
            }
            if run == runs {
                frames.push(decoded);
            }
        }
        last = frames;
    }

    let reports = last
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let (psnr, ssim) = match reference {
                None => (None, None),
                Some(r) => {
                    let region = plans[i].1.as_ref().map(|v| v.and(&d.footprint));
                    let p = psnr_masked(&d.pixels, &r[i], region.as_ref())?;
                    let s = ssim_masked(&d.pixels, &r[i], region.as_ref()).ok();
                    (Some(p), s)
                }
            };
            Ok(FrameReport {
                frame: i,
                decode_ms: timings[i],
                bytes_loaded: d.stats.bytes_loaded,
                records: d.stats.records,
                psnr,
                ssim,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchReport::from_frames(
        opts.mode,
        reports,
        file.file_len(),
        header.raw_bytes(),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SyntheticStyle {
    /// Soft-edged shapes over gradients; little fine-scale energy.
    #[default]
    Smooth,
    /// Hard-edged shapes and a drifting fine texture, so the finest
    /// levels keep coefficients after thresholding.
    Detailed,
}

/// Smooth RGB test clip: drifting sinusoidal gradients under soft-edged
/// discs that move along fixed paths. Wraps seamlessly in x.
pub fn synthetic_clip(width: usize, height: usize, frames: usize) -> Vec<Frame> {
    synthetic_clip_styled(width, height, frames, SyntheticStyle::Smooth)
}

pub fn synthetic_clip_styled(
    width: usize,
    height: usize,
    frames: usize,
    style: SyntheticStyle,
) -> Vec<Frame> {
    use std::f64::consts::TAU;
    struct Disc {
        x0: f64,
        y0: f64,
        vx: f64,
        vy: f64,
        radius: f64,
        color: [f64; 3],
    }
    let discs = [
        Disc {
            x0: 0.2,
            y0: 0.35,
            vx: 0.004,
            vy: 0.002,
            radius: 0.09,
            color: [230.0, 60.0, 40.0],
        },
        Disc {
            x0: 0.6,
            y0: 0.6,
            vx: -0.003,
            vy: 0.001,
            radius: 0.12,
            color: [40.0, 200.0, 90.0],
        },
        Disc {
            x0: 0.45,
            y0: 0.2,
            vx: 0.002,
            vy: -0.0015,
            radius: 0.07,
            color: [60.0, 80.0, 220.0],
        },
    ];
    let scale = width.min(height) as f64;
    (0..frames)
        .map(|t| {
            let t = t as f64;
            let mut f = Frame::new(width, height, 3);
            for y in 0..height {
                let v = (y as f64 + 0.5) / height as f64;
                for x in 0..width {
                    let u = (x as f64 + 0.5) / width as f64;
                    let mut rgb = [
                        128.0 + 60.0 * (TAU * (u + 0.003 * t)).sin() * (TAU * v * 0.5).cos(),
                        128.0 + 50.0 * (TAU * (2.0 * u - 0.002 * t) + 1.0).sin(),
                        120.0 + 70.0 * (TAU * (v + 0.004 * t)).cos() * 0.5 + 20.0 * (TAU * u).cos(),
                    ];
                    for d in &discs {
                        let cx = (d.x0 + d.vx * t).rem_euclid(1.0);
                        let cy = d.y0 + d.vy * t;
                        let mut dx = (u - cx).abs();
                        dx = dx.min(1.0 - dx) * width as f64 / scale;
                        let dy = (v - cy) * height as f64 / scale;
                        let r = (dx * dx + dy * dy).sqrt();
                        let a = match style {
                            // Soft edge over a quarter of the radius.
                            SyntheticStyle::Smooth => {
                                let e = ((d.radius - r) / (0.25 * d.radius)).clamp(0.0, 1.0);
                                e * e * (3.0 - 2.0 * e)
                            }
                            SyntheticStyle::Detailed => (r < d.radius) as u8 as f64,
                        };
                        for (c, dc) in rgb.iter_mut().zip(d.color) {
                            *c = *c * (1.0 - a) + dc * a;
                        }
                    }
                    if style == SyntheticStyle::Detailed {
                        let phase = TAU * ((x as f64 + 2.0 * t) / 6.0 + (y as f64) / 11.0);
                        let texture = 45.0 * phase.sin().signum() * (TAU * v * 3.0).sin().max(0.0);
                        for c in &mut rgb {
                            *c += texture;
                        }
                    }
                    let p = f.pixel_mut(x, y);
                    for (o, c) in p.iter_mut().zip(rgb) {
                        *o = c.round().clamp(0.0, 255.0) as u8;
                    }
                }
            }
            f
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{encode_video, EncodeParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Frame {
        let mut f = Frame::new(w, h, 3);
        rng.fill(&mut f.data[..]);
        f
    }

    #[test]
    fn psnr_closed_forms() {
        let a = Frame::filled(16, 16, &[100, 100, 100]);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b = Frame::filled(16, 16, &[116, 84, 116]);
        assert!((psnr(&a, &b).unwrap() - 24.0483).abs() < 1e-3);
        assert!(psnr(&a, &Frame::new(8, 16, 3)).is_err());
    }

    #[test]
    fn psnr_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = (
            random_frame(31, 17, &mut rng),
            random_frame(31, 17, &mut rng),
        );
        let mse: f64 = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
            .sum::<f64>()
            / a.data.len() as f64;
        let expected = 20.0 * 255f64.log10() - 10.0 * mse.log10();
        assert!((psnr(&a, &b).unwrap() - expected).abs() < 1e-6);
    }

    #[test]
    fn ssim_identity_and_constant_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_frame(20, 12, &mut rng);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let c = Frame::filled(16, 16, &[100, 100, 100]);
        let d = Frame::filled(16, 16, &[132, 132, 132]);
        let expected =
            (2.0 * 100.0 * 132.0 + SSIM_C1) / (100.0f64.powi(2) + 132.0f64.powi(2) + SSIM_C1);
        assert!((ssim(&c, &d).unwrap() - expected).abs() < 1e-12);
        assert!(ssim(&Frame::new(7, 7, 3), &Frame::new(7, 7, 3)).is_err());
    }

    #[test]
    fn ssim_matches_direct_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (a, b) = (
            random_frame(13, 11, &mut rng),
            random_frame(13, 11, &mut rng),
        );
        let (la, lb) = (luminance(&a), luminance(&b));
        let mut total = 0.0;
        let mut count = 0;
        for y in 0..=11 - 8 {
            for x in 0..=13 - 8 {
                let px: Vec<(f64, f64)> = (0..64)
                    .map(|i| {
                        (
                            la[(y + i / 8) * 13 + x + i % 8],
                            lb[(y + i / 8) * 13 + x + i % 8],
                        )
                    })
                    .collect();
                let mx = px.iter().map(|p| p.0).sum::<f64>() / 64.0;
                let my = px.iter().map(|p| p.1).sum::<f64>() / 64.0;
                let vx = px.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>() / 64.0;
                let vy = px.iter().map(|p| (p.1 - my).powi(2)).sum::<f64>() / 64.0;
                let c = px.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / 64.0;
                total += ((2.0 * mx * my + SSIM_C1) * (2.0 * c + SSIM_C2))
                    / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
                count += 1;
            }
        }
        assert!((ssim(&a, &b).unwrap() - total / count as f64).abs() < 1e-9);
    }

    #[test]
    fn masked_metrics_ignore_outside() {
        let a = Frame::filled(16, 16, &[50, 50, 50]);
        let mut b = a.clone();
        b.pixel_mut(15, 15).copy_from_slice(&[0, 0, 0]);
        let m = BitGrid::from_fn(16, 16, |x, y| x < 8 && y < 8);
        assert_eq!(psnr_masked(&a, &b, Some(&m)).unwrap(), PSNR_CAP);
        assert_eq!(ssim_masked(&a, &b, Some(&m)).unwrap(), 1.0);
        assert!(psnr(&a, &b).unwrap() < PSNR_CAP);
    }

    #[test]
    fn trajectory_csv_round_trip_and_validation() {
        let text = "t_ms,yaw,pitch,roll,gaze_u,gaze_v\n0,0,0,0,0.5,0.5\n33.3,10,-5,2,0.4,0.6\n";
        let log = TrajectoryLog::from_reader(text.as_bytes()).unwrap();
        assert_eq!(log.samples.len(), 2);
        let mut out = Vec::new();
        log.write_to(&mut out).unwrap();
        assert_eq!(TrajectoryLog::from_reader(&out[..]).unwrap(), log);
        assert_eq!(log.sample_at(-5.0).yaw, 0.0);
        assert_eq!(log.sample_at(40.0).yaw, 10.0);

        let bad = [
            "t_ms,yaw,pitch,roll,gaze_u,gaze_v\n",
            "t_ms,yaw,pitch,roll,gaze_u,gaze_v\n0,0,0,0,0.5,0.5\n0,0,0,0,0.5,0.5\n",
            "t_ms,yaw,pitch,roll,gaze_u,gaze_v\n0,0,95,0,0.5,0.5\n",
            "t_ms,yaw,pitch,roll,gaze_u,gaze_v\n0,0,0,0,1.5,0.5\n",
            "time,yaw,pitch,roll,gaze_u,gaze_v\n0,0,0,0,0.5,0.5\n",
            "t_ms,yaw,pitch,roll,gaze_u,gaze_v\n0,zero,0,0,0.5,0.5\n",
        ];
        for b in bad {
            assert!(
                matches!(
                    TrajectoryLog::from_reader(b.as_bytes()),
                    Err(Error::InvalidTrajectory(_))
                ),
                "{b}"
            );
        }
    }

    #[test]
    fn replay_bytes_ordering_and_determinism() {
        let frames = synthetic_clip(128, 64, 8);
        let params = EncodeParams {
            levels: Some(3),
            block_size: 16,
            ..EncodeParams::default()
        };
        let bytes = encode_video(&frames, &params).unwrap().to_bytes().unwrap();
        let file = Arc::new(VideoFile::from_bytes(bytes).unwrap());
        let traj = TrajectoryLog::fixed(30.0, 0.0, 0.0, 1000.0).unwrap();
        let run = |mode| {
            let opts = ReplayOptions {
                mode,
                ..ReplayOptions::default()
            };
            replay(Arc::clone(&file), &traj, &opts, Some(&frames)).unwrap()
        };
        let (full, view, fov) = (
            run(ReplayMode::Full),
            run(ReplayMode::Viewport),
            run(ReplayMode::Foveated),
        );
        for i in 0..8 {
            assert!(view.frames[i].bytes_loaded <= full.frames[i].bytes_loaded);
            assert!(fov.frames[i].bytes_loaded <= view.frames[i].bytes_loaded);
        }
        assert_eq!(
            view.without_timing(),
            run(ReplayMode::Viewport).without_timing()
        );
        assert!(full.mean_psnr.unwrap() > 25.0);
        let kv = full.to_key_value();
        assert!(kv.contains("mode=full\n") && kv.contains("compression_ratio="));
        let json: serde_json::Value = serde_json::from_str(&full.to_json()).unwrap();
        assert_eq!(json["frames"].as_array().unwrap().len(), 8);
    }

    #[test]
    fn synthetic_clip_is_deterministic_and_moving() {
        let a = synthetic_clip(64, 32, 3);
        assert_eq!(a, synthetic_clip(64, 32, 3));
        assert_ne!(a[0], a[2]);
    }
}
