//! HTTP frame service: `/info`, `/frame/{t}` and `/stats` over one open
//! video.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, RawQuery, State};
use axum::http::{header, HeaderName, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Serialize;
use tower_http::cors::{Any, CorsLayer};

use wavevid_core::projection::render_eye;
use wavevid_core::{
    viewport_to_mask, CameraPose, DecodeSession, Error, FoveationSchedule, SessionStats, VideoFile,
};

pub const MAX_OUTPUT_DIM: usize = 4096;
/// Sessions kept for sequential clients; the oldest is evicted beyond this.
pub const MAX_SESSIONS: usize = 32;

pub const X_BYTES_LOADED: &str = "x-bytes-loaded";
pub const X_RECORDS: &str = "x-records";
pub const X_DECODE_MS: &str = "x-decode-ms";

type SharedSession = Arc<Mutex<DecodeSession>>;

pub struct AppState {
    file: Arc<VideoFile>,
    sessions: Mutex<(HashMap<String, SharedSession>, VecDeque<String>)>,
    totals: Mutex<SessionStats>,
}

impl AppState {
    pub fn new(file: Arc<VideoFile>) -> Arc<Self> {
        Arc::new(Self {
            file,
            sessions: Mutex::new((HashMap::new(), VecDeque::new())),
            totals: Mutex::new(SessionStats::default()),
        })
    }

    pub fn open(path: &Path) -> wavevid_core::Result<Arc<Self>> {
        Ok(Self::new(Arc::new(VideoFile::open(path)?)))
    }

    fn session(&self, token: &str) -> SharedSession {
        let mut guard = self.sessions.lock().unwrap_or_else(|e| e.into_inner());
        let (map, order) = &mut *guard;
        if let Some(s) = map.get(token) {
            return Arc::clone(s);
        }
        if map.len() >= MAX_SESSIONS {
            if let Some(old) = order.pop_front() {
                map.remove(&old);
            }
        }
        let s = Arc::new(Mutex::new(DecodeSession::new(Arc::clone(&self.file))));
        map.insert(token.to_string(), Arc::clone(&s));
        order.push_back(token.to_string());
        s
    }

    fn session_stats(&self, token: &str) -> Option<SessionStats> {
        let guard = self.sessions.lock().unwrap_or_else(|e| e.into_inner());
        let s = Arc::clone(guard.0.get(token)?);
        drop(guard);
        let stats = s.lock().unwrap_or_else(|e| e.into_inner()).stats().clone();
        Some(stats)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods(Any)
        .allow_headers(Any)
        .expose_headers([
            HeaderName::from_static(X_BYTES_LOADED),
            HeaderName::from_static(X_RECORDS),
            HeaderName::from_static(X_DECODE_MS),
        ]);
    Router::new()
        .route("/info", get(info))
        .route("/frame/{t}", get(frame))
        .route("/stats", get(stats))
        .layer(cors)
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::OutOfRange { what: "frame", .. } => StatusCode::NOT_FOUND,
            Error::InvalidPose(_) | Error::InvalidParams(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

#[derive(Serialize, PartialEq, Debug)]
pub struct Info {
    pub frame_count: u32,
    pub width: u32,
    pub height: u32,
    pub fps: f32,
    pub channels: u8,
    pub levels: u8,
    pub inter_size: usize,
    pub block_size: usize,
    pub mask_width: u16,
    pub mask_height: u16,
    pub stereo: bool,
    pub precision: &'static str,
}

async fn info(State(state): State<Arc<AppState>>) -> Json<Info> {
    let h = state.file.header();
    Json(Info {
        frame_count: h.frame_count,
        width: h.width,
        height: h.height,
        fps: h.fps,
        channels: h.channels,
        levels: h.levels,
        inter_size: h.inter_size(),
        block_size: h.block_size(),
        mask_width: h.mask_w,
        mask_height: h.mask_h,
        stereo: h.stereo(),
        precision: match h.precision() {
            wavevid_core::Precision::Quantized => "quantized",
            wavevid_core::Precision::Float => "float",
        },
    })
}

/// Parsed `/frame/{t}` query.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameRequest {
    pub pose: CameraPose,
    pub width: usize,
    pub height: usize,
    pub foveate: bool,
    pub gaze: (f64, f64),
    pub eye: usize,
    pub session: Option<String>,
}

impl FrameRequest {
    pub fn parse(query: &str) -> Result<Self, String> {
        let mut pose = CameraPose::default();
        let (mut width, mut height) = (512usize, 512usize);
        let (mut foveate, mut gaze, mut eye, mut session) = (false, (0.5, 0.5), 0usize, None);
        for pair in query.split('&').filter(|p| !p.is_empty()) {
            let (key, value) = pair.split_once('=').unwrap_or((pair, ""));
            let num = || {
                value
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or(format!("{key}={value:?} is not a number"))
            };
            let count = || {
                value
                    .parse::<usize>()
                    .map_err(|_| format!("{key}={value:?} is not a count"))
            };
            match key {
                "yaw" => pose.yaw = num()?,
                "pitch" => pose.pitch = num()?,
                "roll" => pose.roll = num()?,
                "fov_h" => pose.fov_h = num()?,
                "fov_v" => pose.fov_v = num()?,
                "w" => width = count()?,
                "h" => height = count()?,
                "gaze_u" => gaze.0 = num()?,
                "gaze_v" => gaze.1 = num()?,
                "eye" => eye = count()?,
                "foveate" => {
                    foveate = match value {
                        "1" | "true" => true,
                        "0" | "false" => false,
                        _ => return Err(format!("foveate={value:?} must be 0 or 1")),
                    }
                }
                "session" if !value.is_empty() => session = Some(value.to_string()),
                _ => return Err(format!("unknown parameter {key:?}")),
            }
        }
        pose.validate().map_err(|e| e.to_string())?;
        if !(1..=MAX_OUTPUT_DIM).contains(&width) || !(1..=MAX_OUTPUT_DIM).contains(&height) {
            return Err(format!(
                "output {width}x{height} outside 1..={MAX_OUTPUT_DIM}"
            ));
        }
        if !((0.0..=1.0).contains(&gaze.0) && (0.0..=1.0).contains(&gaze.1)) {
            return Err(format!("gaze ({}, {}) outside [0, 1]", gaze.0, gaze.1));
        }
        Ok(Self {
            pose,
            width,
            height,
            foveate,
            gaze,
            eye,
            session,
        })
    }
}

fn decode_frame(state: &AppState, t: usize, req: &FrameRequest) -> Result<Response, ApiError> {
    let h = state.file.header();
    let eyes = if h.stereo() { 2 } else { 1 };
    if req.eye >= eyes {
        return Err(bad_request(format!("eye {} of {eyes}", req.eye)));
    }
    let mask = viewport_to_mask(&req.pose, h.mask_dims(), h.stereo())?;
    let run = |session: &mut DecodeSession| {
        let decoded = if req.foveate {
            let schedule = FoveationSchedule::default_for(h.levels(), req.gaze);
            session.decode_foveated(t, &mask, &schedule)?
        } else {
            session.decode_viewport(t, &mask)?
        };
        if t % h.inter_size() == 0 {
            let masks = state.file.masks_for_viewport(&mask)?;
            session.advance(&masks)?;
        }
        Ok::<_, Error>(decoded)
    };
    let decoded = match &req.session {
        Some(token) => {
            let shared = state.session(token);
            let mut session = shared.lock().unwrap_or_else(|e| e.into_inner());
            run(&mut session)?
        }
        None => run(&mut DecodeSession::new(Arc::clone(&state.file)))?,
    };
    let image = render_eye(
        &decoded.pixels,
        &decoded.computed,
        &req.pose,
        (req.width, req.height),
        req.eye,
        eyes,
    )?;
    let png = image.encode_png()?;
    let s = &decoded.stats;
    {
        let mut totals = state.totals.lock().unwrap_or_else(|e| e.into_inner());
        totals.frames_decoded += 1;
        totals.bytes_loaded += s.bytes_loaded;
        totals.records_processed += s.records;
        totals.io_bytes += s.io_bytes;
        totals.decode_ms += s.total_ms;
    }
    let value = |v: String| HeaderValue::from_str(&v).expect("numeric header");
    Ok((
        [
            (header::CONTENT_TYPE, HeaderValue::from_static("image/png")),
            (
                HeaderName::from_static(X_BYTES_LOADED),
                value(s.bytes_loaded.to_string()),
            ),
            (
                HeaderName::from_static(X_RECORDS),
                value(s.records.to_string()),
            ),
            (
                HeaderName::from_static(X_DECODE_MS),
                value(format!("{:.3}", s.total_ms)),
            ),
        ],
        png,
    )
        .into_response())
}

async fn frame(
    State(state): State<Arc<AppState>>,
    UrlPath(t): UrlPath<String>,
    RawQuery(query): RawQuery,
) -> Result<Response, ApiError> {
    let t: usize = t
        .parse()
        .map_err(|_| bad_request(format!("frame {t:?} is not an index")))?;
    let count = state.file.header().frame_count as usize;
    if t >= count {
        return Err(ApiError(
            StatusCode::NOT_FOUND,
            format!("frame {t} of {count}"),
        ));
    }
    let req = FrameRequest::parse(query.as_deref().unwrap_or("")).map_err(bad_request)?;
    tokio::task::spawn_blocking(move || decode_frame(&state, t, &req))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn stats(
    State(state): State<Arc<AppState>>,
    RawQuery(query): RawQuery,
) -> Result<Response, ApiError> {
    let token = query
        .as_deref()
        .unwrap_or("")
        .split('&')
        .find_map(|p| p.strip_prefix("session="));
    let totals = state
        .totals
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .clone();
    let sessions = state
        .sessions
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .0
        .len();
    let mut body = serde_json::json!({ "totals": totals, "sessions": sessions });
    if let Some(token) = token {
        let s = state
            .session_stats(token)
            .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no session {token:?}")))?;
        body["session"] = serde_json::to_value(s).expect("stats serialize");
    }
    Ok(Json(body).into_response())
}
