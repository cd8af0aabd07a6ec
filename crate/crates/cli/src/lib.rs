//! `wavevid` command-line interface.

pub mod service;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use wavevid_core::encoder::{
    DEFAULT_BLOCK_SIZE, DEFAULT_INTER_SIZE, DEFAULT_INTER_THRESHOLD, HQ_ALPHA, LQ_ALPHA,
};
use wavevid_core::projection::render_eye;
use wavevid_core::quality::{replay, ReplayMode, ReplayOptions, TrajectoryLog};
use wavevid_core::wavelet::level_of_position;
use wavevid_core::{
    encode_video, load_frame_dir, viewport_to_mask, CameraPose, DecodeSession, EncodeParams, Error,
    FoveationSchedule, Frame, Mapping, Precision, VideoFile,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

/// Environment variable capping the worker threads used for encoding and
/// decoding.
pub const THREADS_ENV: &str = "WAVEVID_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "wavevid",
    version,
    about = "Wavelet 360° video codec with viewport-dependent decoding"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Encode a directory of PNG/PPM frames (or one image) into a .wvv file
    Encode(EncodeArgs),
    /// Decode one frame to an image, as a perspective view or the full panorama
    Decode(DecodeArgs),
    /// Print the header, per-set sizes and record counts
    Inspect(InspectArgs),
    /// Replay a head/gaze trajectory and report decode cost and quality
    Bench(BenchArgs),
    /// Serve /info, /frame/{t} and /stats over HTTP
    Serve(ServeArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MappingArg {
    None,
    Equirect,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    /// Frame directory (lexicographic order) or a single image
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Detail threshold scale: 0.1 is the high-quality setting, 0.25 the low-quality one
    #[arg(long, default_value_t = HQ_ALPHA, conflicts_with = "lq")]
    pub alpha: f32,
    /// Shorthand for --alpha 0.25
    #[arg(long)]
    pub lq: bool,
    /// Threshold for inter-frame detail coefficients
    #[arg(long, default_value_t = DEFAULT_INTER_THRESHOLD)]
    pub inter_threshold: f32,
    /// Spatial levels, or "auto" for log2(N/32) - 2 clamped to the frame
    #[arg(long, default_value = "auto")]
    pub levels: String,
    /// Frames per inter-frame set (power of two); n=4 by default
    #[arg(long, default_value_t = DEFAULT_INTER_SIZE)]
    pub inter_size: usize,
    /// Block edge length in coefficients (power of two)
    #[arg(long = "block", default_value_t = DEFAULT_BLOCK_SIZE)]
    pub block_size: usize,
    /// Store float coefficients instead of 8-bit codes
    #[arg(long)]
    pub no_quantize: bool,
    /// Latitude-dependent threshold boost for equirectangular input
    #[arg(long, value_enum, default_value_t = MappingArg::None)]
    pub mapping: MappingArg,
    /// Frames hold two eyes stacked top (left) to bottom (right)
    #[arg(long)]
    pub stereo: bool,
    #[arg(long, default_value_t = 30.0)]
    pub fps: f32,
}

#[derive(Args, Debug, Clone)]
pub struct PoseArgs {
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub yaw: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub pitch: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub roll: f64,
    /// Horizontal field of view in degrees
    #[arg(long, default_value_t = 90.0)]
    pub fov_h: f64,
    /// Vertical field of view in degrees
    #[arg(long, default_value_t = 90.0)]
    pub fov_v: f64,
}

impl PoseArgs {
    fn pose(&self) -> wavevid_core::Result<CameraPose> {
        CameraPose::new(self.yaw, self.pitch, self.roll, self.fov_h, self.fov_v)
    }
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    #[command(flatten)]
    pub pose: PoseArgs,
    /// Write the whole decoded panorama instead of a perspective view
    #[arg(long)]
    pub full_sphere: bool,
    /// Output image (.png or .ppm)
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 512)]
    pub width: usize,
    #[arg(long, default_value_t = 512)]
    pub height: usize,
    /// Decode with the default foveation schedule around the gaze point
    #[arg(long)]
    pub foveate: bool,
    #[arg(long, default_value_t = 0.5)]
    pub gaze_u: f64,
    #[arg(long, default_value_t = 0.5)]
    pub gaze_v: f64,
    /// Eye to render from a stereo file (0 left, 1 right)
    #[arg(long, default_value_t = 0)]
    pub eye: usize,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Full,
    Viewport,
    Foveated,
}

impl From<ModeArg> for ReplayMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Full => ReplayMode::Full,
            ModeArg::Viewport => ReplayMode::Viewport,
            ModeArg::Foveated => ReplayMode::Foveated,
        }
    }
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// CSV with header t_ms,yaw,pitch,roll,gaze_u,gaze_v
    #[arg(long)]
    pub trajectory: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Viewport)]
    pub mode: ModeArg,
    /// Directory of the source frames, for PSNR/SSIM
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, default_value_t = 90.0)]
    pub fov_h: f64,
    #[arg(long, default_value_t = 90.0)]
    pub fov_v: f64,
    /// Timed runs after one discarded warm-up run
    #[arg(long, default_value_t = 3)]
    pub runs: usize,
    /// Also write the report as JSON
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

/// Errors reaching the top level, split by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_data_error() {
            CliError::Data(e.to_string())
        } else {
            CliError::Usage(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

/// Parses `args` (program name first) and runs the command; returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    configure_threads();
    match execute(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_USAGE
        }
        Err(CliError::Data(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_DATA
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        // Fails harmlessly if the pool already exists.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

fn execute(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Encode(a) => encode(a, out),
        Command::Decode(a) => decode(a, out),
        Command::Inspect(a) => inspect(&a.input, out),
        Command::Bench(a) => bench(a, out),
        Command::Serve(a) => serve(a, out),
    }
}

fn load_input(path: &Path) -> Result<Vec<Frame>, CliError> {
    if path.is_dir() {
        let frames = load_frame_dir(path)?;
        if frames.is_empty() {
            return Err(CliError::Data(format!(
                "no PNG/PPM frames in {}",
                path.display()
            )));
        }
        Ok(frames)
    } else if path.is_file() {
        Ok(vec![Frame::load(path)?])
    } else {
        Err(CliError::Usage(format!(
            "input {} does not exist",
            path.display()
        )))
    }
}

fn encode(a: EncodeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let levels = match a.levels.as_str() {
        "auto" => None,
        s => Some(s.parse::<usize>().map_err(|_| {
            CliError::Usage(format!("--levels {s:?} is neither a number nor auto"))
        })?),
    };
    let params = EncodeParams {
        alpha: if a.lq { LQ_ALPHA } else { a.alpha },
        inter_threshold: a.inter_threshold,
        levels,
        inter_size: a.inter_size,
        block_size: a.block_size,
        mapping: match a.mapping {
            MappingArg::None => Mapping::None,
            MappingArg::Equirect => Mapping::Equirectangular,
        },
        precision: if a.no_quantize {
            Precision::Float
        } else {
            Precision::Quantized
        },
        stereo: a.stereo,
        fps: a.fps,
        ..EncodeParams::default()
    };
    let frames = load_input(&a.input)?;
    let video = encode_video(&frames, &params)?;
    let bytes = video.save(&a.output)?;
    let raw = video.header.raw_bytes();
    writeln!(out, "frames={}", frames.len())?;
    writeln!(out, "levels={}", video.header.levels)?;
    writeln!(out, "records={}", video.record_count())?;
    writeln!(out, "bytes={bytes}")?;
    writeln!(out, "compression_ratio={:.2}", raw as f64 / bytes as f64)?;
    Ok(())
}

fn decode(a: DecodeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let file = Arc::new(VideoFile::open(&a.input)?);
    let h = file.header().clone();
    let eyes = if h.stereo() { 2 } else { 1 };
    if a.eye >= eyes {
        return Err(CliError::Usage(format!(
            "--eye {} but the file has {eyes} eye(s)",
            a.eye
        )));
    }
    let mut session = DecodeSession::new(Arc::clone(&file));
    let (image, stats) = if a.full_sphere {
        let d = session.decode_full(a.frame)?;
        (d.pixels, d.stats)
    } else {
        let pose = a.pose.pose()?;
        let mask = viewport_to_mask(&pose, h.mask_dims(), h.stereo())?;
        let d = if a.foveate {
            let schedule = FoveationSchedule::default_for(h.levels(), (a.gaze_u, a.gaze_v));
            session.decode_foveated(a.frame, &mask, &schedule)?
        } else {
            session.decode_viewport(a.frame, &mask)?
        };
        let view = render_eye(
            &d.pixels,
            &d.computed,
            &pose,
            (a.width, a.height),
            a.eye,
            eyes,
        )?;
        (view, d.stats)
    };
    image.save(&a.out)?;
    writeln!(out, "frame={}", a.frame)?;
    writeln!(out, "bytes_loaded={}", stats.bytes_loaded)?;
    writeln!(out, "records={}", stats.records)?;
    writeln!(out, "decode_ms={:.3}", stats.total_ms)?;
    Ok(())
}

fn inspect(path: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let file = VideoFile::open(path)?;
    let h = file.header();
    writeln!(out, "version={}", h.version)?;
    writeln!(out, "width={}", h.width)?;
    writeln!(out, "height={}", h.height)?;
    writeln!(out, "frame_count={}", h.frame_count)?;
    writeln!(out, "pad_frames={}", h.pad_frames)?;
    writeln!(out, "fps={}", h.fps)?;
    writeln!(out, "channels={}", h.channels)?;
    writeln!(out, "levels={}", h.levels)?;
    writeln!(out, "inter_size={}", h.inter_size())?;
    writeln!(out, "block_size={}", h.block_size())?;
    writeln!(out, "mask={}x{}", h.mask_w, h.mask_h)?;
    writeln!(out, "stereo={}", h.stereo())?;
    writeln!(out, "precision={:?}", h.precision())?;
    writeln!(out, "file_bytes={}", file.file_len())?;
    let (w, ht) = h.dims();
    let grid = h.grid();
    let (mut approx_total, mut detail_total) = (0u64, 0u64);
    for i in 0..h.set_count() {
        let set = file.read_set(i)?;
        let mut per_level = vec![0u64; h.levels() + 1];
        for k in &set.records.keys {
            let (x, y) = grid.position(k.block, k.offset);
            let (level, band) = level_of_position(x, y, h.levels(), (w, ht))?;
            if band == wavevid_core::wavelet::Subband::LL {
                per_level[0] += 1;
            } else {
                per_level[level] += 1;
            }
        }
        let detail: u64 = per_level[1..].iter().sum();
        approx_total += per_level[0];
        detail_total += detail;
        let levels = per_level[1..]
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(",");
        writeln!(
            out,
            "set={i} payload_bytes={} record_count={} approx_records={} detail_records={detail} detail_records_by_level={levels}",
            set.meta.payload_length, set.meta.record_count, per_level[0]
        )?;
    }
    writeln!(out, "approx_records={approx_total}")?;
    writeln!(out, "detail_records={detail_total}")?;
    Ok(())
}

fn bench(a: BenchArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let file = Arc::new(VideoFile::open(&a.input)?);
    let trajectory = TrajectoryLog::load(&a.trajectory)?;
    let reference = a.reference.as_deref().map(load_frame_dir).transpose()?;
    let mode: ReplayMode = a.mode.into();
    let opts = ReplayOptions {
        mode,
        fov_h: a.fov_h,
        fov_v: a.fov_v,
        runs: a.runs.max(1),
        ..ReplayOptions::default()
    };
    let report = replay(Arc::clone(&file), &trajectory, &opts, reference.as_deref())?;
    out.write_all(report.to_key_value().as_bytes())?;
    let mut json: serde_json::Value =
        serde_json::from_str(&report.to_json()).expect("report is JSON");
    if mode == ReplayMode::Foveated {
        let baseline = replay(
            file,
            &trajectory,
            &ReplayOptions {
                mode: ReplayMode::Viewport,
                runs: 1,
                ..opts.clone()
            },
            None,
        )?;
        let reduction =
            1.0 - report.total_bytes_loaded as f64 / baseline.total_bytes_loaded.max(1) as f64;
        writeln!(out, "viewport_bytes_loaded={}", baseline.total_bytes_loaded)?;
        writeln!(out, "bytes_reduction_vs_viewport={reduction:.4}")?;
        json["viewport_bytes_loaded"] = baseline.total_bytes_loaded.into();
        json["bytes_reduction_vs_viewport"] = reduction.into();
    }
    if let Some(path) = &a.json {
        std::fs::write(
            path,
            serde_json::to_string_pretty(&json).expect("JSON value"),
        )?;
    }
    Ok(())
}

fn serve(a: ServeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let state = service::AppState::open(&a.input)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port)).await?;
        writeln!(out, "listening on http://{}", listener.local_addr()?)?;
        out.flush()?;
        service::serve(state, listener).await
    })?;
    Ok(())
}
