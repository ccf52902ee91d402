#![allow(dead_code)]

use std::future::Future;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use gradeforge::config::ServerConfig;
use gradeforge::service::{AppState, Model};
use gradeforge::Store;
use gradeforge_core::dataset::SceneGenerator;
use gradeforge_core::frame::{frame_file_name, CLIP_SIDECAR};
use gradeforge_core::lut::{apply_lut, compose_luts, Lut3D};
use gradeforge_core::retouch::LutCatalog;
use gradeforge_core::{looks, parse_cube, Frame, VideoClip, MODEL_SIZE};
use gradeforge_diffuser::toy::{build_corpus, train_toy, ToyConfig};
use gradeforge_diffuser::{Checkpoint, DenoiserConfig, NoiseSchedule, ScheduleConfig};
use serde_json::{json, Value};
use tokio::task::JoinHandle;

/// A briefly trained narrow model, enough to exercise the service.
pub fn quick_checkpoint(dir: &Path) -> PathBuf {
    let mut cfg = ToyConfig {
        train_scenes: 4,
        held_out_scenes: 1,
        triples: 16,
        held_out_pairs: 1,
        model: DenoiserConfig {
            widths: [4, 8, 8],
            groups: 2,
            hidden: 8,
            time_dim: 8,
            ..DenoiserConfig::default()
        },
        ..ToyConfig::default()
    };
    cfg.optimizer.steps = 5;
    cfg.optimizer.batch = 2;
    let sched = NoiseSchedule::default();
    let corpus = build_corpus(&cfg).unwrap();
    let out = train_toy(&cfg, &corpus, &sched, |_, _| {}).unwrap();
    let path = dir.join("quick.gfdn");
    Checkpoint::new(out.model, ScheduleConfig::default())
        .save(&path)
        .unwrap();
    path
}

pub fn state(store: &Path, checkpoint: Option<&Path>) -> Arc<AppState> {
    let model = checkpoint.map(|p| Model::load(p).unwrap());
    let cfg = ServerConfig {
        store: store.to_path_buf(),
        ..ServerConfig::default()
    };
    Arc::new(AppState::new(
        Store::open(store).unwrap(),
        LutCatalog::bundled(MODEL_SIZE).unwrap(),
        model,
        cfg,
    ))
}

pub struct Server {
    pub addr: SocketAddr,
    task: JoinHandle<()>,
}

impl Server {
    pub async fn start(state: Arc<AppState>) -> Server {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let task = tokio::spawn(async move {
            gradeforge::serve_on(listener, state, std::future::pending())
                .await
                .unwrap();
        });
        Server { addr, task }
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }

    /// Stops the server without any shutdown handling.
    pub async fn kill(self) {
        self.task.abort();
        let _ = self.task.await;
    }
}

pub fn tar_of(files: &[(String, Vec<u8>)]) -> Vec<u8> {
    let mut b = tar::Builder::new(Vec::new());
    for (name, data) in files {
        let mut h = tar::Header::new_gnu();
        h.set_size(data.len() as u64);
        h.set_mode(0o644);
        h.set_cksum();
        b.append_data(&mut h, name, data.as_slice()).unwrap();
    }
    b.into_inner().unwrap()
}

pub fn untar(bytes: &[u8]) -> Vec<(String, Vec<u8>)> {
    use std::io::Read;
    let mut a = tar::Archive::new(bytes);
    a.entries()
        .unwrap()
        .map(|e| {
            let mut e = e.unwrap();
            let name = e.path().unwrap().to_string_lossy().into_owned();
            let mut data = Vec::new();
            e.read_to_end(&mut data).unwrap();
            (name, data)
        })
        .collect()
}

pub fn clip_tar(clip: &VideoClip) -> Vec<u8> {
    let mut files: Vec<(String, Vec<u8>)> = clip
        .frames()
        .iter()
        .enumerate()
        .map(|(i, f)| (frame_file_name(i), f.encode_png()))
        .collect();
    files.push((
        CLIP_SIDECAR.into(),
        format!("fps = {}\nframe_count = {}\n", clip.fps(), clip.len()).into_bytes(),
    ));
    tar_of(&files)
}

/// Input clip (six frames at 12 fps) and a warm-graded still reference
/// from a different scene.
pub fn fixture_clips() -> (VideoClip, Frame) {
    let gen = SceneGenerator {
        frames: 6,
        fps: 12.0,
        ..SceneGenerator::default()
    };
    let input = gen.scene(101);
    let warm = looks::find("warm").unwrap().lut(MODEL_SIZE).unwrap();
    let reference = apply_lut(&warm, &gen.scene(202).frames()[2]);
    (input, reference)
}

fn check(ok: bool, what: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what.into())
    }
}

struct Client {
    http: reqwest::Client,
    base: String,
}

impl Client {
    async fn send(
        &self,
        method: reqwest::Method,
        path: &str,
        body: Option<Vec<u8>>,
        json: Option<Value>,
    ) -> (u16, Vec<u8>) {
        let mut req = self.http.request(method, format!("{}{path}", self.base));
        if let Some(b) = body {
            req = req.body(b);
        }
        if let Some(j) = json {
            req = req.json(&j);
        }
        let resp = req.send().await.expect("request failed");
        let status = resp.status().as_u16();
        (status, resp.bytes().await.unwrap().to_vec())
    }

    async fn get(&self, path: &str) -> (u16, Vec<u8>) {
        self.send(reqwest::Method::GET, path, None, None).await
    }

    async fn post(&self, path: &str, json: Option<Value>) -> (u16, Vec<u8>) {
        self.send(reqwest::Method::POST, path, None, json).await
    }

    async fn put(&self, path: &str, body: Vec<u8>) -> (u16, Vec<u8>) {
        self.send(reqwest::Method::PUT, path, Some(body), None).await
    }
}

fn parse(body: &[u8]) -> Value {
    serde_json::from_slice(body).unwrap_or(Value::Null)
}

fn expect(what: &str, got: (u16, Vec<u8>), status: u16) -> Result<Value, String> {
    if got.0 != status {
        return Err(format!(
            "{what}: expected {status}, got {} {}",
            got.0,
            String::from_utf8_lossy(&got.1)
        ));
    }
    Ok(parse(&got.1))
}

pub fn max_diff(a: &Lut3D, b: &Lut3D) -> f64 {
    a.entries()
        .iter()
        .zip(b.entries())
        .flat_map(|(x, y)| (0..3).map(move |c| (x[c] - y[c]).abs()))
        .fold(0.0, f64::max)
}

fn expected_frames(lut: &Lut3D, input: &VideoClip) -> Vec<Vec<u8>> {
    input
        .frames()
        .iter()
        .map(|f| apply_lut(lut, &Frame::decode(&f.encode_png()).unwrap()).encode_png())
        .collect()
}

fn catalog_lut(name: &str) -> Lut3D {
    LutCatalog::bundled(MODEL_SIZE).unwrap().get(name).unwrap().lut.clone()
}

/// Drives one full session over HTTP, kills the server mid-life, restarts
/// it on the same store and checks that nothing was lost. Returns a
/// description of the first failed expectation.
pub async fn lifecycle<F, Fut>(store: &Path, checkpoint: &Path, restart: F) -> Result<(), String>
where
    F: Fn(Arc<AppState>) -> Fut,
    Fut: Future<Output = Server>,
{
    let server = restart(state(store, Some(checkpoint))).await;
    let c = Client {
        http: reqwest::Client::new(),
        base: server.url(""),
    };
    let (input, reference) = fixture_clips();

    let h = expect("healthz", c.get("/healthz").await, 200)?;
    check(h["model"] == json!(true), "healthz reports no model")?;

    let s = expect("create", c.post("/sessions", None).await, 201)?;
    let id = s["id"].as_str().ok_or("create returned no id")?.to_string();
    check(s["status"] == "created", format!("new session status {}", s["status"]))?;
    let p = |rest: &str| format!("/sessions/{id}{rest}");

    expect("grade before uploads", c.post(&p("/grade"), None).await, 409)?;
    expect("export before grading", c.get(&p("/export.cube")).await, 409)?;

    let u = expect("upload input", c.put(&p("/input"), clip_tar(&input)).await, 200)?;
    check(
        u["frames"] == json!(6) && u["fps"] == json!(12.0),
        format!("input upload reply {u}"),
    )?;
    expect("grade with input only", c.post(&p("/grade"), None).await, 409)?;
    expect(
        "malformed reference",
        c.put(&p("/reference"), b"not an image".to_vec()).await,
        422,
    )?;
    let u = expect(
        "upload reference",
        c.put(&p("/reference"), reference.encode_png()).await,
        200,
    )?;
    check(u["frames"] == json!(1), format!("reference upload reply {u}"))?;
    let s = expect("session after uploads", c.get(&p("")).await, 200)?;
    check(s["status"] == "loaded", format!("status after uploads {}", s["status"]))?;

    let g = expect("grade", c.post(&p("/grade"), None).await, 200)?;
    let key = g["key_pair"]["input_index"]
        .as_u64()
        .ok_or("grade returned no key pair")? as usize;
    check(key < 6, format!("key frame {key} out of range"))?;
    check(
        g["key_pair"]["reference_index"] == json!(0),
        "reference key frame must be the still",
    )?;

    let store_handle = Store::open(store).map_err(|e| e.to_string())?;
    let generated = store_handle.load(&id).map_err(|e| e.to_string())?.stack[0]
        .lut
        .to_lut()
        .map_err(|e| e.to_string())?;

    let f = expect(
        "feedback warm",
        c.post(
            &p("/feedback"),
            Some(json!({"prompt": "make it warmer, golden and sunny"})),
        )
        .await,
        200,
    )?;
    check(
        f["match"]["name"] == "warm" && f["stack_len"] == json!(2),
        format!("first feedback {f}"),
    )?;
    let f = expect(
        "feedback contrast",
        c.post(
            &p("/feedback"),
            Some(json!({"prompt": "more contrast with deeper shadows"})),
        )
        .await,
        200,
    )?;
    check(
        f["match"]["name"] == "contrast" && f["stack_len"] == json!(3),
        format!("second feedback {f}"),
    )?;
    expect(
        "unmatchable prompt",
        c.post(&p("/feedback"), Some(json!({"prompt": "zzqx vvbn"}))).await,
        422,
    )?;

    let three = compose_luts(
        &compose_luts(&generated, &catalog_lut("warm")).unwrap(),
        &catalog_lut("contrast"),
    )
    .unwrap();
    let (st, cube) = c.get(&p("/export.cube")).await;
    check(st == 200, format!("export.cube returned {st}"))?;
    let parsed = parse_cube(&cube).map_err(|e| e.to_string())?;
    let err = max_diff(&parsed, &three);
    check(
        err <= 1e-6,
        format!("exported LUT is {err} from generated∘warm∘contrast"),
    )?;

    let s = expect("session after feedback", c.get(&p("")).await, 200)?;
    check(
        s["history"].as_array().map(Vec::len) == Some(2),
        "history should hold two prompts",
    )?;

    let un = expect("undo", c.post(&p("/undo"), Some(json!({"to_index": 1}))).await, 200)?;
    check(un["stack_len"] == json!(2), format!("undo reply {un}"))?;
    expect(
        "undo past history",
        c.post(&p("/undo"), Some(json!({"to_index": 5}))).await,
        422,
    )?;
    let two = compose_luts(&generated, &catalog_lut("warm")).unwrap();
    let parsed = parse_cube(&c.get(&p("/export.cube")).await.1).map_err(|e| e.to_string())?;
    let err = max_diff(&parsed, &two);
    check(err <= 1e-6, format!("LUT after undo is {err} from generated∘warm"))?;

    let want = expected_frames(&two, &input);
    let (st, png) = c.get(&p(&format!("/preview/{key}"))).await;
    check(
        st == 200 && png == want[key],
        format!("preview of frame {key} differs ({st})"),
    )?;
    expect("preview out of range", c.get(&p("/preview/6")).await, 404)?;

    let (st, tar_bytes) = c.get(&p("/export")).await;
    check(st == 200, format!("export returned {st}"))?;
    let files = untar(&tar_bytes);
    check(files.len() == 7, format!("export holds {} files", files.len()))?;
    for (i, w) in want.iter().enumerate() {
        check(
            files[i].0 == frame_file_name(i) && &files[i].1 == w,
            format!("exported frame {i} differs"),
        )?;
    }
    check(
        String::from_utf8_lossy(&files[6].1).contains("fps = 12"),
        "export sidecar lost the frame rate",
    )?;
    let view_before = c.get(&p("")).await.1;
    let cube_before = c.get(&p("/export.cube")).await.1;

    // A crash in the middle of a later save leaves a stray temporary file.
    std::fs::write(store.join("sessions").join(&id).join("session.json.tmp"), b"{\"trunc").unwrap();
    server.kill().await;

    let server = restart(state(store, Some(checkpoint))).await;
    let c = Client {
        http: reqwest::Client::new(),
        base: server.url(""),
    };
    check(
        c.get(&p("")).await.1 == view_before,
        "session record changed across restart",
    )?;
    check(
        c.get(&p("/export.cube")).await.1 == cube_before,
        "exported LUT changed across restart",
    )?;
    check(
        c.get(&p("/export")).await.1 == tar_bytes,
        "exported clip changed across restart",
    )?;

    let f = expect(
        "feedback after restart",
        c.post(
            &p("/feedback"),
            Some(json!({"prompt": "faded matte film with lifted blacks"})),
        )
        .await,
        200,
    )?;
    check(
        f["match"]["name"] == "fade" && f["stack_len"] == json!(3),
        format!("feedback after restart {f}"),
    )?;

    let u = expect("re-upload input", c.put(&p("/input"), clip_tar(&input)).await, 200)?;
    check(u["status"] == "loaded", format!("re-upload status {}", u["status"]))?;
    let s = expect("session after re-upload", c.get(&p("")).await, 200)?;
    check(
        s["stack"].as_array().map(Vec::len) == Some(0) && s["history"].as_array().map(Vec::len) == Some(0),
        "re-upload must drop the grade",
    )?;
    expect("export after re-upload", c.get(&p("/export.cube")).await, 409)?;

    expect(
        "unknown session",
        c.get("/sessions/6f1c1d7e-0d6a-4c38-9d35-0d1f3b5c2a10").await,
        404,
    )?;
    expect("malformed id", c.get("/sessions/..%2Fetc").await, 404)?;
    server.kill().await;

    let server = restart(state(store, None)).await;
    let c = Client {
        http: reqwest::Client::new(),
        base: server.url(""),
    };
    expect("grade without a model", c.post(&p("/grade"), None).await, 503)?;
    server.kill().await;
    Ok(())
}
