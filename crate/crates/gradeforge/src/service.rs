//! HTTP API over the session store.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path as FsPath;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use gradeforge_core::features::{StatisticalExtractor, StyleExtractor};
use gradeforge_core::frame::{ClipMeta, CLIP_SIDECAR, FRAME_EXT};
use gradeforge_core::retouch::{match_prompt, FeedbackRecord, LutCatalog, PromptMatch};
use gradeforge_core::{apply_lut, select_key_frames, write_cube, Frame, VideoClip};
use gradeforge_diffuser::{generate_lut, Checkpoint, Denoiser, NoiseSchedule};
use serde::{Deserialize, Serialize};
use tokio::sync::OwnedMutexGuard;

use crate::config::{CatalogConfig, ServerConfig};
use crate::store::{KeyPair, LutSource, SessionRecord, Side, StackEntry, Status, Store, StoredLut};
use crate::{Error, Result};

const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";

/// A loaded denoiser and the schedule it was trained with.
pub struct Model {
    pub denoiser: Denoiser<f32>,
    pub schedule: NoiseSchedule,
}

impl Model {
    pub fn load(path: &FsPath) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let schedule = ck.noise_schedule()?;
        Ok(Model {
            denoiser: ck.model,
            schedule,
        })
    }
}

pub struct AppState {
    store: Store,
    catalog: LutCatalog,
    model: Option<Model>,
    cfg: ServerConfig,
    locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

impl AppState {
    pub fn new(store: Store, catalog: LutCatalog, model: Option<Model>, cfg: ServerConfig) -> Self {
        AppState {
            store,
            catalog,
            model,
            cfg,
            locks: Mutex::new(HashMap::new()),
        }
    }

    /// Builds the state described by the server and catalog settings.
    pub fn from_config(server: &ServerConfig, catalog: &CatalogConfig) -> Result<Self> {
        let store = Store::open(&server.store)?;
        let cat = match &catalog.dir {
            Some(dir) => LutCatalog::load_dir(dir, gradeforge_core::MODEL_SIZE)?,
            None => LutCatalog::bundled(gradeforge_core::MODEL_SIZE)?,
        }
        .with_low_confidence(catalog.low_confidence);
        let model = match &server.checkpoint {
            Some(p) if p.exists() => Some(Model::load(p)?),
            Some(p) => {
                tracing::warn!("checkpoint {} not found; grading is unavailable", p.display());
                None
            }
            None => None,
        };
        Ok(Self::new(store, cat, model, server.clone()))
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    /// Per-session writer lock; waiters are served in arrival order.
    async fn lock(&self, id: &str) -> OwnedMutexGuard<()> {
        let m = {
            let mut locks = self.locks.lock().expect("lock table poisoned");
            locks.entry(id.to_string()).or_default().clone()
        };
        m.lock_owned().await
    }
}

pub type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    let limit = state.cfg.max_upload_bytes;
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/input", put(upload_input))
        .route("/sessions/{id}/reference", put(upload_reference))
        .route("/sessions/{id}/grade", post(grade))
        .route("/sessions/{id}/feedback", post(feedback))
        .route("/sessions/{id}/undo", post(undo))
        .route("/sessions/{id}/preview/{n}", get(preview))
        .route("/sessions/{id}/export.cube", get(export_cube))
        .route("/sessions/{id}/export", get(export_clip))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T> + Send + 'static) -> Result<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| Error::Unavailable(format!("worker failed: {e}")))?
}

async fn healthz(State(st): State<Shared>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "model": st.model.is_some() }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub status: Status,
    pub seed: u64,
    pub input_frames: Option<usize>,
    pub reference_frames: Option<usize>,
    pub key_pair: Option<KeyPair>,
    pub stack: Vec<LutSource>,
    pub history: Vec<FeedbackRecord>,
    pub error: Option<String>,
}

impl From<&SessionRecord> for SessionView {
    fn from(r: &SessionRecord) -> Self {
        SessionView {
            id: r.id.clone(),
            status: r.status,
            seed: r.seed,
            input_frames: r.input_frames,
            reference_frames: r.reference_frames,
            key_pair: r.key_pair,
            stack: r.stack.iter().map(|e| e.source.clone()).collect(),
            history: r.history.clone(),
            error: r.error.clone(),
        }
    }
}

async fn create_session(State(st): State<Shared>) -> Result<(StatusCode, Json<SessionView>)> {
    let seed = uuid::Uuid::new_v4().as_u64_pair().0;
    let rec = st.store.create(seed)?;
    Ok((StatusCode::CREATED, Json(SessionView::from(&rec))))
}

async fn get_session(State(st): State<Shared>, Path(id): Path<String>) -> Result<Json<SessionView>> {
    let _g = st.lock(&id).await;
    Ok(Json(SessionView::from(&st.store.load(&id)?)))
}

#[derive(Debug, Default, Deserialize)]
pub struct UploadQuery {
    pub fps: Option<f64>,
}

/// A single PNG becomes a one-frame clip; otherwise the body must be a tar
/// archive of numbered PNG frames, optionally with a `clip.toml` sidecar.
pub fn decode_upload(bytes: &[u8], fps: Option<f64>, default_fps: f64) -> Result<VideoClip> {
    if let Some(f) = fps {
        if !(f.is_finite() && f > 0.0) {
            return Err(Error::Unprocessable(format!("fps must be positive, got {f}")));
        }
    }
    if bytes.starts_with(PNG_MAGIC) {
        let frame = Frame::decode(bytes).map_err(|e| Error::Unprocessable(format!("upload.png: {e}")))?;
        return VideoClip::new(vec![frame], fps.unwrap_or(default_fps))
            .map_err(|e| Error::Unprocessable(e.to_string()));
    }
    let mut archive = tar::Archive::new(bytes);
    let entries = archive
        .entries()
        .map_err(|e| Error::Unprocessable(format!("upload is neither PNG nor tar: {e}")))?;
    let mut numbered: Vec<(u64, String, Vec<u8>)> = Vec::new();
    let mut sidecar = None;
    for entry in entries {
        let mut entry = entry.map_err(|e| Error::Unprocessable(format!("bad tar entry: {e}")))?;
        if !entry.header().entry_type().is_file() {
            continue;
        }
        let path = entry
            .path()
            .map_err(|e| Error::Unprocessable(format!("bad tar path: {e}")))?
            .into_owned();
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        let mut data = Vec::new();
        entry
            .read_to_end(&mut data)
            .map_err(|e| Error::Unprocessable(format!("{name}: {e}")))?;
        if name == CLIP_SIDECAR {
            sidecar = Some(data);
            continue;
        }
        let p = FsPath::new(&name);
        let is_frame = p
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case(FRAME_EXT));
        if let (true, Some(n)) = (
            is_frame,
            p.file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.parse::<u64>().ok()),
        ) {
            numbered.push((n, name, data));
        }
    }
    if numbered.is_empty() {
        return Err(Error::Unprocessable(
            "upload is neither PNG nor a tar of numbered PNG frames".into(),
        ));
    }
    numbered.sort_by_key(|(n, _, _)| *n);
    let sidecar_fps = match sidecar {
        Some(data) => {
            let text = String::from_utf8_lossy(&data);
            let meta: ClipMeta =
                toml::from_str(&text).map_err(|e| Error::Unprocessable(format!("{CLIP_SIDECAR}: {e}")))?;
            Some(meta.fps)
        }
        None => None,
    };
    let mut frames = Vec::with_capacity(numbered.len());
    for (_, name, data) in &numbered {
        let frame = Frame::decode(data).map_err(|e| Error::Unprocessable(format!("{name}: {e}")))?;
        if let Some(first) = frames.first().map(Frame::dims) {
            if frame.dims() != first {
                return Err(Error::Unprocessable(format!(
                    "{name}: {}x{} differs from the first frame's {}x{}",
                    frame.width(),
                    frame.height(),
                    first.0,
                    first.1
                )));
            }
        }
        frames.push(frame);
    }
    VideoClip::new(frames, fps.or(sidecar_fps).unwrap_or(default_fps)).map_err(|e| Error::Unprocessable(e.to_string()))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct UploadReply {
    pub status: Status,
    pub frames: usize,
    pub fps: f64,
}

async fn upload(st: Shared, id: String, side: Side, q: UploadQuery, body: Bytes) -> Result<Json<UploadReply>> {
    let _g = st.lock(&id).await;
    let mut rec = st.store.load(&id)?;
    let default_fps = st.cfg.default_fps;
    let st2 = st.clone();
    let id2 = id.clone();
    let clip = blocking(move || {
        let clip = decode_upload(&body, q.fps, default_fps)?;
        st2.store.write_clip(&id2, side, &clip)?;
        Ok(clip)
    })
    .await?;
    match side {
        Side::Input => rec.input_frames = Some(clip.len()),
        Side::Reference => rec.reference_frames = Some(clip.len()),
    }
    rec.reset_grade();
    st.store.save(&rec)?;
    Ok(Json(UploadReply {
        status: rec.status,
        frames: clip.len(),
        fps: clip.fps(),
    }))
}

async fn upload_input(
    State(st): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<UploadQuery>,
    body: Bytes,
) -> Result<Json<UploadReply>> {
    upload(st, id, Side::Input, q, body).await
}

async fn upload_reference(
    State(st): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<UploadQuery>,
    body: Bytes,
) -> Result<Json<UploadReply>> {
    upload(st, id, Side::Reference, q, body).await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GradeReply {
    pub key_pair: KeyPair,
    /// Position of the generated LUT in the stack.
    pub lut: usize,
    pub preview: Vec<usize>,
}

fn preview_indices(len: usize, key: usize) -> Vec<usize> {
    let mut v = vec![0, key, len.saturating_sub(1)];
    v.sort_unstable();
    v.dedup();
    v
}

async fn grade(State(st): State<Shared>, Path(id): Path<String>) -> Result<Json<GradeReply>> {
    let _g = st.lock(&id).await;
    let mut rec = st.store.load(&id)?;
    let (Some(_), Some(_)) = (rec.input_frames, rec.reference_frames) else {
        return Err(Error::Conflict("upload both input and reference before grading".into()));
    };
    if st.model.is_none() {
        return Err(Error::Unavailable("no model checkpoint is configured".into()));
    }
    let st2 = st.clone();
    let (id2, seed) = (id.clone(), rec.seed);
    let outcome = blocking(move || {
        let model = st2.model.as_ref().expect("checked above");
        let input = st2.store.read_clip(&id2, Side::Input, st2.cfg.default_fps)?;
        let reference = st2.store.read_clip(&id2, Side::Reference, st2.cfg.default_fps)?;
        let ex = StatisticalExtractor;
        let pair = select_key_frames(
            &input,
            &reference,
            |f| ex.extract(f).values().to_vec(),
            st2.cfg.sample_hz,
        )?;
        let lut = generate_lut(
            &model.denoiser,
            &ex,
            &input.frames()[pair.input_index],
            &reference.frames()[pair.reference_index],
            &model.schedule,
            st2.cfg.sampling_steps,
            seed,
        )?;
        Ok((pair, lut, input.len()))
    })
    .await;
    let (pair, lut, len) = match outcome {
        Ok(v) => v,
        Err(e) => {
            if e.status() == StatusCode::UNPROCESSABLE_ENTITY {
                rec.reset_grade();
                rec.status = Status::Error;
                rec.error = Some(e.to_string());
                st.store.save(&rec)?;
            }
            return Err(e);
        }
    };
    let key_pair = KeyPair {
        input_index: pair.input_index,
        reference_index: pair.reference_index,
        similarity: pair.similarity,
    };
    rec.reset_grade();
    rec.key_pair = Some(key_pair);
    rec.stack.push(StackEntry {
        source: LutSource::Generated,
        lut: StoredLut::from(&lut),
    });
    rec.status = Status::Graded;
    st.store.save(&rec)?;
    Ok(Json(GradeReply {
        key_pair,
        lut: 0,
        preview: preview_indices(len, pair.input_index),
    }))
}

fn require_graded(rec: &SessionRecord) -> Result<()> {
    if rec.status != Status::Graded {
        return Err(Error::Conflict(
            format!("session is {:?}, not graded", rec.status).to_lowercase(),
        ));
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FeedbackRequest {
    pub prompt: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FeedbackReply {
    #[serde(rename = "match")]
    pub matched: PromptMatch,
    pub stack_len: usize,
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

async fn feedback(
    State(st): State<Shared>,
    Path(id): Path<String>,
    Json(req): Json<FeedbackRequest>,
) -> Result<Json<FeedbackReply>> {
    let _g = st.lock(&id).await;
    let mut rec = st.store.load(&id)?;
    require_graded(&rec)?;
    let m = match_prompt(&req.prompt, &st.catalog)?;
    let entry = &st.catalog.entries()[m.index];
    rec.stack.push(StackEntry {
        source: LutSource::Catalog {
            name: entry.name.clone(),
        },
        lut: StoredLut::from(&entry.lut),
    });
    rec.history.push(FeedbackRecord {
        prompt: req.prompt,
        matched: m.clone(),
        timestamp: unix_now(),
    });
    st.store.save(&rec)?;
    Ok(Json(FeedbackReply {
        matched: m,
        stack_len: rec.stack.len(),
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct UndoRequest {
    pub to_index: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct UndoReply {
    pub stack_len: usize,
}

async fn undo(
    State(st): State<Shared>,
    Path(id): Path<String>,
    Json(req): Json<UndoRequest>,
) -> Result<Json<UndoReply>> {
    let _g = st.lock(&id).await;
    let mut rec = st.store.load(&id)?;
    require_graded(&rec)?;
    if req.to_index > rec.history.len() {
        return Err(Error::Unprocessable(format!(
            "cannot undo to step {}: only {} feedback steps",
            req.to_index,
            rec.history.len()
        )));
    }
    rec.history.truncate(req.to_index);
    rec.stack.truncate(req.to_index + 1);
    st.store.save(&rec)?;
    Ok(Json(UndoReply {
        stack_len: rec.stack.len(),
    }))
}

fn current_lut(rec: &SessionRecord) -> Result<gradeforge_core::Lut3D> {
    require_graded(rec)?;
    rec.current_lut()?
        .ok_or_else(|| Error::Conflict("session has no grade".into()))
}

async fn preview(State(st): State<Shared>, Path((id, n)): Path<(String, usize)>) -> Result<Response> {
    let _g = st.lock(&id).await;
    let rec = st.store.load(&id)?;
    let lut = current_lut(&rec)?;
    let frames = rec.input_frames.unwrap_or(0);
    if n >= frames {
        return Err(Error::NotFound(format!("frame {n} of {frames}")));
    }
    let st2 = st.clone();
    let png = blocking(move || {
        let frame = st2.store.read_frame(&id, Side::Input, n)?;
        Ok(apply_lut(&lut, &frame).encode_png())
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn export_cube(State(st): State<Shared>, Path(id): Path<String>) -> Result<Response> {
    let _g = st.lock(&id).await;
    let rec = st.store.load(&id)?;
    let lut = current_lut(&rec)?;
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], write_cube(&lut)).into_response())
}

async fn export_clip(State(st): State<Shared>, Path(id): Path<String>) -> Result<Response> {
    let _g = st.lock(&id).await;
    let rec = st.store.load(&id)?;
    let lut = current_lut(&rec)?;
    let st2 = st.clone();
    let bytes = blocking(move || {
        let clip = st2.store.read_clip(&id, Side::Input, st2.cfg.default_fps)?;
        let mut tar = tar::Builder::new(Vec::new());
        let mut add = |name: &str, data: &[u8]| -> Result<()> {
            let mut h = tar::Header::new_gnu();
            h.set_size(data.len() as u64);
            h.set_mode(0o644);
            h.set_cksum();
            tar.append_data(&mut h, name, data).map_err(|e| Error::io(name, e))
        };
        for (i, f) in clip.frames().iter().enumerate() {
            add(
                &gradeforge_core::frame::frame_file_name(i),
                &apply_lut(&lut, f).encode_png(),
            )?;
        }
        let meta = ClipMeta {
            fps: clip.fps(),
            frame_count: clip.len(),
        };
        let text = toml::to_string(&meta).map_err(|e| Error::io(CLIP_SIDECAR, e))?;
        add(CLIP_SIDECAR, text.as_bytes())?;
        tar.into_inner().map_err(|e| Error::io("export", e))
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "application/x-tar")], bytes).into_response())
}

/// Serves until `shutdown` resolves.
pub async fn serve_on(
    listener: tokio::net::TcpListener,
    state: Shared,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<()> {
    let addr = listener.local_addr().map_err(|e| Error::io("listener", e))?;
    tracing::info!("listening on {addr}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|e| Error::io(addr.to_string(), e))
}
