use std::fs;
use std::path::Path;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::response::Response;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use octopus_core::config::PipelineConfig;
use octopus_core::io;
use octopus_core::model::LabelVolume;
use octopus_core::phantom::{generate, random_spec, RandomPhantomOptions};
use octopus_core::pipeline::{JobStatus, ANALYSIS_DIR};
use octopus_service::raster::Stroke;
use octopus_service::state::{replay, Entry, EditTranscript};
use octopus_service::{router, AppState, REVISION_HEADER};

const N_FRAMES: usize = 8;

fn write_phantom(dir: &Path, seed: u64) {
    let opts = RandomPhantomOptions {
        n_frames: N_FRAMES,
        lesions: 1,
        ..Default::default()
    };
    let (p, t) = generate(&random_spec(seed, &opts), seed).unwrap();
    io::save_phantom(dir, &p, &t).unwrap();
}

struct Fixture {
    _root: tempfile::TempDir,
    state: AppState,
}

impl Fixture {
    fn new(seeds: &[u64]) -> Fixture {
        let root = tempfile::tempdir().unwrap();
        for &s in seeds {
            write_phantom(&root.path().join(format!("pb{s}")), s);
        }
        let state = AppState::open(root.path(), PipelineConfig::default()).unwrap();
        Fixture { _root: root, state }
    }

    fn dir(&self, id: &str) -> std::path::PathBuf {
        self.state.registry().get(id).unwrap().dir.clone()
    }

    async fn send(&self, req: Request<Body>) -> Response {
        router(self.state.clone()).oneshot(req).await.unwrap()
    }

    async fn get(&self, uri: &str) -> Response {
        self.send(Request::get(uri).body(Body::empty()).unwrap()).await
    }

    async fn analyze(&self, id: &str, config: Option<Value>) -> u64 {
        let body = config.map_or_else(Body::empty, |c| Body::from(c.to_string()));
        let resp = self
            .send(Request::post(format!("/pullbacks/{id}/analyze")).body(body).unwrap())
            .await;
        assert_eq!(resp.status(), StatusCode::ACCEPTED);
        let job = json_body(resp).await["job_id"].as_u64().unwrap();
        let state = self.state.clone();
        let done = tokio::task::spawn_blocking(move || state.queue().wait(job).unwrap())
            .await
            .unwrap();
        assert_eq!(done.status, JobStatus::Done, "{:?}", done.error);
        job
    }

    async fn labels(&self, id: &str, n: usize) -> (Vec<u8>, u64) {
        let resp = self.get(&format!("/pullbacks/{id}/labels/{n}")).await;
        assert_eq!(resp.status(), StatusCode::OK);
        let rev = revision(&resp);
        (bytes(resp).await, rev)
    }
}

fn put_stroke(id: &str, n: usize, rev: u64, stroke: &Value) -> Request<Body> {
    Request::builder()
        .method(Method::PUT)
        .uri(format!("/pullbacks/{id}/labels/{n}"))
        .header(REVISION_HEADER, rev)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(stroke.to_string()))
        .unwrap()
}

fn revision(resp: &Response) -> u64 {
    resp.headers()[REVISION_HEADER].to_str().unwrap().parse().unwrap()
}

async fn bytes(resp: Response) -> Vec<u8> {
    resp.into_body().collect().await.unwrap().to_bytes().to_vec()
}

async fn json_body(resp: Response) -> Value {
    serde_json::from_slice(&bytes(resp).await).unwrap()
}

fn dims(f: &Fixture, id: &str) -> (usize, usize) {
    let e = f.state.registry().get(id).unwrap();
    (e.meta.n_alines, e.meta.n_r)
}

#[tokio::test(flavor = "multi_thread")]
async fn listing_and_unknown_resources() {
    let f = Fixture::new(&[11, 12]);
    let list = json_body(f.get("/pullbacks").await).await;
    let ids: Vec<&str> = list.as_array().unwrap().iter().map(|p| p["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["random-11", "random-12"]);
    assert_eq!(list[0]["analyzed"], json!(false));
    assert_eq!(list[0]["n_frames"], json!(N_FRAMES));

    assert_eq!(f.get("/pullbacks/nope").await.status(), StatusCode::NOT_FOUND);
    assert_eq!(f.get("/jobs/99").await.status(), StatusCode::NOT_FOUND);
    assert_eq!(f.get("/pullbacks/random-11/labels/0").await.status(), StatusCode::NOT_FOUND);
    assert_eq!(f.get("/pullbacks/random-11/frames/8").await.status(), StatusCode::NOT_FOUND);
    assert_eq!(f.get("/pullbacks/random-11/struts").await.status(), StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn bad_analysis_config_is_unprocessable() {
    let f = Fixture::new(&[13]);
    for bad in [json!({"mode": "sideways"}), json!({"lumen": {"jump": 0}}), json!({"roi": {"start": 2, "end": 30}})] {
        let resp = f
            .send(
                Request::post("/pullbacks/random-13/analyze")
                    .body(Body::from(bad.to_string()))
                    .unwrap(),
            )
            .await;
        assert_eq!(resp.status(), StatusCode::UNPROCESSABLE_ENTITY, "{bad}");
        assert!(json_body(resp).await["error"].is_string());
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn brush_edit_is_exact_rasterization() {
    let f = Fixture::new(&[21]);
    let id = "random-21";
    f.analyze(id, None).await;
    let (n_a, n_r) = dims(&f, id);
    let (before, rev) = f.labels(id, 3).await;
    assert_eq!(before.len(), n_a * n_r);

    let stroke = json!({"tool": "brush", "class": "calcium", "points": [[500, 300], [10, 340]], "radius": 3});
    let resp = f.send(put_stroke(id, 3, rev, &stroke)).await;
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(revision(&resp), rev + 1);

    let mut expected = before.clone();
    let s: Stroke = serde_json::from_value(stroke).unwrap();
    s.apply(&mut expected, n_a, n_r).unwrap();
    let (after, rev2) = f.labels(id, 3).await;
    assert_eq!(rev2, rev + 1);
    assert_eq!(after, expected);
    assert_ne!(after, before);
    // Other frames untouched.
    let (other, _) = f.labels(id, 4).await;
    let meta = io::read_meta(&f.dir(id)).unwrap();
    let disk = io::load_labels(&f.dir(id).join(ANALYSIS_DIR).join(io::LABELS_FILE), &meta).unwrap();
    assert_eq!(other, disk.frame(4));
}

#[tokio::test(flavor = "multi_thread")]
async fn concurrent_writes_on_one_revision_conflict() {
    let f = Fixture::new(&[22]);
    let id = "random-22";
    f.analyze(id, None).await;
    let (_, rev) = f.labels(id, 2).await;
    let a = json!({"tool": "brush", "class": "lipid", "points": [[100, 250]], "radius": 4});
    let b = json!({"tool": "brush", "class": "other", "points": [[300, 260]], "radius": 4});
    let (ra, rb) = tokio::join!(f.send(put_stroke(id, 2, rev, &a)), f.send(put_stroke(id, 2, rev, &b)));
    let mut statuses = [ra.status(), rb.status()];
    statuses.sort();
    assert_eq!(statuses, [StatusCode::OK, StatusCode::CONFLICT]);
    let loser = if ra.status() == StatusCode::CONFLICT { ra } else { rb };
    assert_eq!(revision(&loser), rev + 1);
    assert_eq!(json_body(loser).await["revision"], json!(rev + 1));
    let transcript: EditTranscript = serde_json::from_value(json_body(f.get(&format!("/pullbacks/{id}/edits")).await).await).unwrap();
    assert_eq!(transcript.edits.len(), 1);
}

#[tokio::test(flavor = "multi_thread")]
async fn identical_retry_is_idempotent() {
    let f = Fixture::new(&[23]);
    let id = "random-23";
    f.analyze(id, None).await;
    let (_, rev) = f.labels(id, 1).await;
    let s = json!({"tool": "freehand", "class": "lumen", "points": [[40, 200], [80, 200], [80, 260], [40, 260]]});
    let first = f.send(put_stroke(id, 1, rev, &s)).await;
    assert_eq!(first.status(), StatusCode::OK);
    let (labels_once, _) = f.labels(id, 1).await;
    let retry = f.send(put_stroke(id, 1, rev, &s)).await;
    assert_eq!(retry.status(), StatusCode::OK);
    assert_eq!(revision(&retry), rev + 1);
    assert_eq!(json_body(retry).await["replayed"], json!(true));
    assert_eq!(f.labels(id, 1).await, (labels_once, rev + 1));

    // A different request on the old revision is stale.
    let other = json!({"tool": "brush", "class": "lumen", "points": [[1, 1]]});
    assert_eq!(f.send(put_stroke(id, 1, rev, &other)).await.status(), StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread")]
async fn transcript_replays_to_current_labels() {
    let f = Fixture::new(&[24]);
    let id = "random-24";
    f.analyze(id, None).await;
    let (n_a, n_r) = dims(&f, id);
    let strokes = [
        (0, json!({"tool": "brush", "class": "calcium", "points": [[10, 300], [60, 320]], "radius": 5})),
        (5, json!({"tool": "freehand", "class": "lipid", "points": [[200, 260], [260, 280], [220, 330]]})),
        (0, json!({"tool": "fill", "class": "other", "points": [[10, 300]]})),
        (7, json!({"tool": "brush", "class": "lumen", "points": [[503, 100], [2, 120]], "radius": 2})),
    ];
    let (_, mut rev) = f.labels(id, 0).await;
    for (n, s) in &strokes {
        let resp = f.send(put_stroke(id, *n, rev, s)).await;
        assert_eq!(resp.status(), StatusCode::OK);
        rev = revision(&resp);
    }
    // Whole-frame write as raw bytes.
    let (mut raw, _) = f.labels(id, 6).await;
    raw[n_r * 10..n_r * 10 + 50].fill(4);
    let resp = f
        .send(
            Request::put(format!("/pullbacks/{id}/labels/6"))
                .header(REVISION_HEADER, rev)
                .body(Body::from(raw.clone()))
                .unwrap(),
        )
        .await;
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(f.labels(id, 6).await.0, raw);

    let transcript: EditTranscript = serde_json::from_value(json_body(f.get(&format!("/pullbacks/{id}/edits")).await).await).unwrap();
    assert_eq!(transcript.edits.len(), 5);
    let meta = io::read_meta(&f.dir(id)).unwrap();
    let auto = io::load_labels(&f.dir(id).join(ANALYSIS_DIR).join(io::LABELS_FILE), &meta).unwrap();
    let replayed = replay(&auto, &transcript).unwrap();
    let mut current = LabelVolume::new(N_FRAMES, n_a, n_r);
    for n in 0..N_FRAMES {
        current.frame_mut(n).copy_from_slice(&f.labels(id, n).await.0);
    }
    assert_eq!(replayed, current);

    // A restarted service sees the same state.
    let reopened = Entry::open(&f.dir(id)).unwrap();
    let guard = reopened.analysis.read().unwrap();
    assert_eq!(guard.as_ref().unwrap().labels, current);
    assert_eq!(guard.as_ref().unwrap().revision(), revision(&resp));
}

#[tokio::test(flavor = "multi_thread")]
async fn quant_follows_edits() {
    let f = Fixture::new(&[25]);
    let id = "random-25";
    f.analyze(id, None).await;
    let uri = format!("/pullbacks/{id}/quant.csv");
    let before = bytes(f.get(&uri).await).await;
    let exported = fs::read(f.dir(id).join(ANALYSIS_DIR).join("quant.csv")).unwrap();
    assert_eq!(before, exported);

    let (_, rev) = f.labels(id, 4).await;
    let grow = json!({"tool": "brush", "class": "lumen", "points": [[100, 360], [140, 360]], "radius": 30});
    assert_eq!(f.send(put_stroke(id, 4, rev, &grow)).await.status(), StatusCode::OK);
    let after = bytes(f.get(&uri).await).await;
    let rows = |b: &[u8]| io::parse_quant_csv(b).unwrap();
    let (b, a) = (rows(&before), rows(&after));
    assert_eq!(b.len(), a.len());
    for (x, y) in b.iter().zip(&a) {
        if x.frame == 4 {
            assert!(y.lumen_area_mm2.unwrap() > x.lumen_area_mm2.unwrap());
        } else {
            assert_eq!(x, y);
        }
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn edit_errors() {
    let f = Fixture::new(&[26]);
    let id = "random-26";
    f.analyze(id, None).await;
    let (_, rev) = f.labels(id, 0).await;
    let ok = json!({"tool": "brush", "class": "lumen", "points": [[1, 1]]});

    let missing = Request::put(format!("/pullbacks/{id}/labels/0"))
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(ok.to_string()))
        .unwrap();
    assert_eq!(f.send(missing).await.status(), StatusCode::PRECONDITION_REQUIRED);

    for bad in [
        json!({"tool": "brush", "class": "lumen", "points": []}),
        json!({"tool": "brush", "class": "lumen", "points": [[0, 9999]]}),
        json!({"tool": "freehand", "class": "lumen", "points": [[0, 1], [2, 3]]}),
        json!({"tool": "brush", "class": "guidewire", "points": [[1, 1]]}),
        json!({"tool": "brush", "class": "lumen", "points": [[1, 1]], "radius": 0}),
    ] {
        let resp = f.send(put_stroke(id, 0, rev, &bad)).await;
        assert_eq!(resp.status(), StatusCode::UNPROCESSABLE_ENTITY, "{bad}");
    }
    let short = Request::put(format!("/pullbacks/{id}/labels/0"))
        .header(REVISION_HEADER, rev)
        .body(Body::from(vec![0u8; 10]))
        .unwrap();
    assert_eq!(f.send(short).await.status(), StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(f.send(put_stroke(id, 0, rev + 5, &ok)).await.status(), StatusCode::CONFLICT);
    // Nothing above changed the revision.
    assert_eq!(f.labels(id, 0).await.1, rev);
}

#[tokio::test(flavor = "multi_thread")]
async fn reanalysis_blocks_edits_and_advances_revision() {
    let f = Fixture::new(&[27]);
    let id = "random-27";
    f.analyze(id, None).await;
    let (_, rev) = f.labels(id, 0).await;
    let s = json!({"tool": "brush", "class": "calcium", "points": [[30, 300]], "radius": 6});
    assert_eq!(f.send(put_stroke(id, 0, rev, &s)).await.status(), StatusCode::OK);

    let resp = f
        .send(Request::post(format!("/pullbacks/{id}/analyze")).body(Body::empty()).unwrap())
        .await;
    assert_eq!(resp.status(), StatusCode::ACCEPTED);
    let job = json_body(resp).await["job_id"].as_u64().unwrap();
    let during = f.send(put_stroke(id, 0, rev + 1, &s)).await;
    assert_eq!(during.status(), StatusCode::SERVICE_UNAVAILABLE);
    let again = f
        .send(Request::post(format!("/pullbacks/{id}/analyze")).body(Body::empty()).unwrap())
        .await;
    assert_eq!(again.status(), StatusCode::SERVICE_UNAVAILABLE);

    let state = f.state.clone();
    tokio::task::spawn_blocking(move || state.queue().wait(job)).await.unwrap();
    let job_json = json_body(f.get(&format!("/jobs/{job}")).await).await;
    assert_eq!(job_json["status"], json!("done"));
    let (labels, new_rev) = f.labels(id, 0).await;
    assert!(new_rev > rev + 1);
    let meta = io::read_meta(&f.dir(id)).unwrap();
    let auto = io::load_labels(&f.dir(id).join(ANALYSIS_DIR).join(io::LABELS_FILE), &meta).unwrap();
    assert_eq!(labels, auto.frame(0));
    let transcript = json_body(f.get(&format!("/pullbacks/{id}/edits")).await).await;
    assert_eq!(transcript["edits"], json!([]));
}

#[tokio::test(flavor = "multi_thread")]
async fn roi_analysis_limits_editable_frames() {
    let f = Fixture::new(&[28]);
    let id = "random-28";
    f.analyze(id, Some(json!({"roi": {"start": 2, "end": 5}}))).await;
    let (outside, rev) = f.labels(id, 0).await;
    assert!(outside.iter().all(|&c| c == 0));
    let s = json!({"tool": "brush", "class": "lumen", "points": [[1, 1]]});
    assert_eq!(f.send(put_stroke(id, 0, rev, &s)).await.status(), StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(f.send(put_stroke(id, 3, rev, &s)).await.status(), StatusCode::OK);
    let quant = io::parse_quant_csv(&bytes(f.get(&format!("/pullbacks/{id}/quant.csv")).await).await).unwrap();
    assert_eq!(quant.iter().map(|q| q.frame).collect::<Vec<_>>(), [2, 3, 4, 5]);
}

fn png_size(data: &[u8]) -> (u32, u32) {
    assert_eq!(&data[1..4], b"PNG");
    let w = u32::from_be_bytes(data[16..20].try_into().unwrap());
    let h = u32::from_be_bytes(data[20..24].try_into().unwrap());
    (w, h)
}

#[tokio::test(flavor = "multi_thread")]
async fn images_and_maps() {
    let f = Fixture::new(&[29]);
    let id = "random-29";
    let (n_a, n_r) = dims(&f, id);
    // Frames render before any analysis.
    let raw = f.get(&format!("/pullbacks/{id}/frames/0")).await;
    assert_eq!(raw.status(), StatusCode::OK);
    assert_eq!(raw.headers()[header::CONTENT_TYPE], "image/png");
    assert_eq!(png_size(&bytes(raw).await), (n_r as u32, n_a as u32));
    f.analyze(id, None).await;

    let xy = bytes(f.get(&format!("/pullbacks/{id}/frames/2?view=xy&overlay=1&size=300")).await).await;
    assert_eq!(png_size(&xy), (300, 300));
    assert_eq!(
        f.get(&format!("/pullbacks/{id}/frames/2?view=sideways")).await.status(),
        StatusCode::UNPROCESSABLE_ENTITY
    );
    assert_eq!(
        f.get(&format!("/pullbacks/{id}/frames/2?size=2")).await.status(),
        StatusCode::UNPROCESSABLE_ENTITY
    );

    let map = bytes(f.get(&format!("/pullbacks/{id}/enface?map=thickness")).await).await;
    assert_eq!(png_size(&map).1, N_FRAMES as u32);
    let values = json_body(f.get(&format!("/pullbacks/{id}/enface?map=angle&format=json")).await).await;
    assert_eq!(values["values"].as_array().unwrap().len(), N_FRAMES);
    assert_eq!(f.get(&format!("/pullbacks/{id}/enface?map=bogus")).await.status(), StatusCode::UNPROCESSABLE_ENTITY);

    let long = bytes(f.get(&format!("/pullbacks/{id}/longitudinal?angle=45")).await).await;
    assert_eq!(png_size(&long).1, N_FRAMES as u32);

    let lesions = bytes(f.get(&format!("/pullbacks/{id}/lesions.csv")).await).await;
    let exported = fs::read(f.dir(id).join(ANALYSIS_DIR).join("lesions.csv")).unwrap();
    assert_eq!(lesions, exported);
}

#[tokio::test(flavor = "multi_thread")]
async fn measurements_are_stored_per_frame() {
    let f = Fixture::new(&[30]);
    let id = "random-30";
    let post = |body: Value| {
        Request::post(format!("/pullbacks/{id}/annotations/3/measure"))
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(body.to_string()))
            .unwrap()
    };
    let resp = f
        .send(post(json!({"kind": "angle", "vertex": [0.0, 0.0], "a": [1.0, 0.0], "b": [0.0, 2.0]})))
        .await;
    assert_eq!(resp.status(), StatusCode::CREATED);
    let a = json_body(resp).await;
    assert!((a["value"].as_f64().unwrap() - 90.0).abs() < 1e-9);
    assert_eq!(a["unit"], json!("deg"));
    let resp = f.send(post(json!({"kind": "frame_span", "from": 1, "to": 6}))).await;
    assert_eq!(resp.status(), StatusCode::CREATED);
    assert_eq!(json_body(resp).await["unit"], json!("mm"));
    let degenerate = f
        .send(post(json!({"kind": "angle", "vertex": [1.0, 1.0], "a": [1.0, 1.0], "b": [0.0, 2.0]})))
        .await;
    assert_eq!(degenerate.status(), StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(f.send(post(json!({"kind": "frame_span", "from": 1, "to": 60}))).await.status(), StatusCode::NOT_FOUND);

    let list = json_body(f.get(&format!("/pullbacks/{id}/annotations/3")).await).await;
    assert_eq!(list.as_array().unwrap().len(), 2);
    assert_eq!(json_body(f.get(&format!("/pullbacks/{id}/annotations/4")).await).await, json!([]));
    let reopened = Entry::open(&f.dir(id)).unwrap();
    assert_eq!(reopened.annotations.lock().unwrap()[&3].len(), 2);
}

#[tokio::test(flavor = "multi_thread")]
async fn registration_endpoint() {
    let f = Fixture::new(&[31, 32]);
    let req = |body: Value| {
        Request::post("/registration")
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(body.to_string()))
            .unwrap()
    };
    let resp = f
        .send(req(json!({
            "reference": "random-31", "floating": "random-32", "mode": "landmark",
            "landmarks": {"reference": [3, 6], "floating": [1, 4]}
        })))
        .await;
    assert_eq!(resp.status(), StatusCode::OK);
    let r = json_body(resp).await;
    assert_eq!(r["offset_frames"], json!(2));
    assert_eq!(r["mapping"][0], json!(2));
    assert_eq!(r["mapping"][7], json!(null));

    let unknown = json!({"reference": "random-31", "floating": "x", "mode": "landmark"});
    assert_eq!(f.send(req(unknown)).await.status(), StatusCode::NOT_FOUND);
    let no_lm = json!({"reference": "random-31", "floating": "random-32", "mode": "landmark"});
    assert_eq!(f.send(req(no_lm)).await.status(), StatusCode::UNPROCESSABLE_ENTITY);
    let auto = json!({"reference": "random-31", "floating": "random-32", "mode": "automatic"});
    assert_eq!(f.send(req(auto.clone())).await.status(), StatusCode::NOT_FOUND);

    f.analyze("random-31", None).await;
    f.analyze("random-32", None).await;
    // Eight frames cannot meet the default overlap.
    assert_eq!(f.send(req(auto)).await.status(), StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test(flavor = "multi_thread")]
async fn stent_mode_exposes_struts() {
    let root = tempfile::tempdir().unwrap();
    let opts = RandomPhantomOptions {
        n_frames: 4,
        lesions: 0,
        struts_per_frame: 8,
        ..Default::default()
    };
    let (p, t) = generate(&random_spec(41, &opts), 41).unwrap();
    io::save_phantom(&root.path().join("s"), &p, &t).unwrap();
    let f = Fixture {
        state: AppState::open(root.path(), PipelineConfig::default()).unwrap(),
        _root: root,
    };
    f.analyze("random-41", Some(json!({"mode": "stent_analysis"}))).await;
    let j = json_body(f.get("/pullbacks/random-41/struts").await).await;
    assert!(j["struts"].as_array().unwrap().len() >= 16);
    assert!(j["report"].is_object());
    let csv = bytes(f.get("/pullbacks/random-41/struts?format=csv").await).await;
    assert!(csv.starts_with(io::STRUT_HEADER.join(",").as_bytes()));
}
