mod common;

use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use http_body_util::BodyExt;
use sarcasm_tts::data::{CorpusManifest, StageTag};
use sarcasm_tts::detector::{detector_examples, train_detector, DetectorConfig, DetectorTrainConfig};
use sarcasm_tts::eval::*;
use sarcasm_tts::synthesis::SynthesizerOptions;
use sarcasm_tts::text::TextEmbedder;
use sarcasm_tts::Error;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Fixture {
    root: PathBuf,
    conditioned: PathBuf,
    plain: PathBuf,
    detector: PathBuf,
    manifest: CorpusManifest,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("eval-fixture");
        let _ = std::fs::remove_dir_all(&root);
        std::fs::create_dir_all(&root).unwrap();
        let (conditioned, detector, manifest) = common::conditioned_checkpoint(&root, 10);
        let plain = common::plain_checkpoint(&root, 10);
        Fixture {
            root,
            conditioned,
            plain,
            detector,
            manifest,
        }
    })
}

fn systems(f: &Fixture) -> Vec<EvalSystem> {
    vec![
        EvalSystem {
            name: "proposed".into(),
            source: EvalSource::Checkpoint(f.conditioned.clone()),
        },
        EvalSystem {
            name: "baseline".into(),
            source: EvalSource::Checkpoint(f.plain.clone()),
        },
    ]
}

#[test]
fn objective_grid_has_four_rows_and_recomputes_exactly() {
    let f = fixture();
    let out = tempfile::tempdir().unwrap();
    let types = [InputType::Speech, InputType::SpeechText];
    let report = objective_eval(&f.manifest, &systems(f), &f.detector, &types, &ObjectiveEvalOptions::default(), out.path()).unwrap();
    assert_eq!(report.rows.len(), 4);
    let keys: Vec<(&str, InputType)> = report.rows.iter().map(|r| (r.method.as_str(), r.input_type)).collect();
    assert_eq!(
        keys,
        [
            ("proposed", InputType::Speech),
            ("proposed", InputType::SpeechText),
            ("baseline", InputType::Speech),
            ("baseline", InputType::SpeechText)
        ]
    );
    for r in &report.rows {
        assert_eq!(r.n_evaluated + r.n_excluded, f.manifest.records.len());
        assert!((0.0..=100.0).contains(&r.f1));
    }
    assert_eq!(report.test_set_id, test_set_id(&f.manifest.records));
    assert_eq!(report.provenance.len(), 2);

    let preds = load_predictions(&out.path().join(PREDICTIONS_FILE)).unwrap();
    assert_eq!(preds.len(), 4 * f.manifest.records.len());
    assert_eq!(rows_from_predictions(&preds).unwrap(), report.rows);
    assert_eq!(EvalReport::load(&out.path().join(REPORT_FILE)).unwrap(), report);

    let err = objective_eval(&f.manifest, &[], &f.detector, &types, &ObjectiveEvalOptions::default(), out.path()).unwrap_err();
    assert!(matches!(err, Error::InvalidInput(_)));
}

#[test]
fn memorised_ground_truth_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let (_, manifest) = common::toy_manifest(dir.path(), 10, StageTag::Sarcastic, 3);
    let enc = TextEmbedder::default();
    let recs: Vec<_> = manifest.records.iter().collect();
    let cfg = DetectorConfig::proposed(128);
    let examples = detector_examples(&recs, &cfg, &enc, true).unwrap();
    let train_cfg = DetectorTrainConfig {
        epochs: 40,
        batch_size: 10,
        micro_batch: 10,
        learning_rate: 1e-3,
        seed: 1,
        ..Default::default()
    };
    let trained = train_detector(cfg, enc.encoder_id(), &examples, &examples, &train_cfg).unwrap();
    assert_eq!(trained.validation.f1, 100.0, "detector failed to memorise: {:?}", trained.history.last());
    let det_dir = dir.path().join("det");
    trained.detector.save(&det_dir, Some(&trained.validation)).unwrap();
    let sys = [EvalSystem {
        name: "real".into(),
        source: EvalSource::GroundTruth,
    }];
    let report = objective_eval(&manifest, &sys, &det_dir, &[InputType::SpeechText], &ObjectiveEvalOptions::default(), &dir.path().join("eval")).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert_eq!((report.rows[0].precision, report.rows[0].recall, report.rows[0].f1), (100.0, 100.0, 100.0));
}

fn export(f: &Fixture, n: usize, seed: u64, out: &Path) -> sarcasm_tts::Result<ListeningExport> {
    let systems = [("proposed".to_string(), f.conditioned.clone()), ("baseline".to_string(), f.plain.clone())];
    export_listening_bundle(&f.manifest, &systems, n, seed, &SynthesizerOptions::default(), out)
}

fn dir_contains(dir: &Path, needle: &str) -> bool {
    walk(dir).iter().any(|p| p.to_string_lossy().contains(needle) || std::fs::read(p).map(|b| String::from_utf8_lossy(&b).contains(needle)).unwrap_or(false))
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn listening_bundle_is_blinded_and_seeded() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let one = export(f, 1, 9, &dir.path().join("one")).unwrap();
    let wavs: Vec<_> = walk(&one.bundle_dir).into_iter().filter(|p| p.extension().is_some_and(|e| e == "wav")).collect();
    assert_eq!(wavs.len(), 2);
    assert_eq!(one.bundle.pairs.len(), 1);
    assert_eq!(one.bundle.mos_items.len(), 2);
    assert_eq!(one.bundle.preference_questions.len(), 2);
    assert!(!one.key_path.starts_with(&one.bundle_dir));
    for name in ["proposed", "baseline", "ckpt", "run-plain"] {
        assert!(!dir_contains(&one.bundle_dir, name), "bundle leaks `{name}`");
    }
    for w in &wavs {
        let peak = sarcasm_tts::audio::Waveform::read_wav(w).unwrap().peak();
        assert!((peak - PEAK_TARGET).abs() < 1e-3, "peak {peak}");
    }

    let a = export(f, 3, 4, &dir.path().join("a")).unwrap();
    let b = export(f, 3, 4, &dir.path().join("b")).unwrap();
    assert_eq!((a.bundle, a.key), (b.bundle, b.key));

    let too_many = export(f, f.manifest.records.len() + 1, 0, &dir.path().join("c")).unwrap_err();
    assert!(matches!(too_many, Error::InvalidInput(_)));
}

struct Api {
    app: axum::Router,
    bundle: ListeningBundle,
    store_path: PathBuf,
    _dir: tempfile::TempDir,
}

fn api() -> Api {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let src = f.root.join("api-bundle");
    static EXPORTED: OnceLock<ListeningExport> = OnceLock::new();
    let ex = EXPORTED.get_or_init(|| export(f, 2, 11, &src).unwrap());
    let store_path = dir.path().join("ratings.jsonl");
    let cfg = ServerConfig {
        bundle_dir: ex.bundle_dir.clone(),
        key_path: Some(ex.key_path.clone()),
        store_path: store_path.clone(),
        admin_token: Some("secret".into()),
        cors_origin: None,
    };
    let state = Arc::new(AppState::load(&cfg).unwrap());
    Api {
        app: router(state, None).unwrap(),
        bundle: ex.bundle.clone(),
        store_path,
        _dir: dir,
    }
}

async fn call(app: &axum::Router, req: Request<Body>) -> (StatusCode, Vec<u8>, axum::http::HeaderMap) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, body, headers)
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post(body: Value) -> Request<Body> {
    Request::post("/api/ratings")
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

fn mos_body(session: &str, item: &str, v: u8) -> Value {
    json!({ "session_id": session, "utterance_id": item, "kind": "mos", "mos_value": v })
}

#[tokio::test]
async fn api_serves_blinded_bundle_and_audio() {
    let api = api();
    let (s, body, headers) = call(&api.app, Request::get("/api/health").header(header::ORIGIN, "http://ui.example").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(headers.get(header::ACCESS_CONTROL_ALLOW_ORIGIN).unwrap(), "*");
    assert_eq!(serde_json::from_slice::<Value>(&body).unwrap()["status"], "ok");

    let (s, body, _) = call(&api.app, get("/api/bundle")).await;
    assert_eq!(s, StatusCode::OK);
    let text = String::from_utf8(body).unwrap();
    assert!(!text.contains("proposed") && !text.contains("baseline"));
    assert_eq!(serde_json::from_str::<ListeningBundle>(&text).unwrap(), api.bundle);

    let audio_id = &api.bundle.pairs[0].a;
    let (s, body, headers) = call(&api.app, get(&format!("/api/audio/{audio_id}"))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(headers.get(header::CONTENT_TYPE).unwrap(), "audio/wav");
    assert_eq!(&body[..4], b"RIFF");
    assert_eq!(call(&api.app, get("/api/audio/missing")).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&api.app, get("/api/audio/..%2Fbundle.json")).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn api_validates_and_upserts_ratings() {
    let api = api();
    let item = &api.bundle.mos_items[0].item_id;
    let (s, body, _) = call(&api.app, post(mos_body("s1", item, 4))).await;
    assert_eq!(s, StatusCode::CREATED, "{}", String::from_utf8_lossy(&body));

    let (s, body, _) = call(&api.app, post(mos_body("s1", item, 7))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let errs: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(errs["errors"][0]["field"], "mos_value");

    assert_eq!(call(&api.app, post(mos_body("s1", "m-nope", 3))).await.0, StatusCode::NOT_FOUND);
    let pair = &api.bundle.pairs[0].item_id;
    assert_eq!(call(&api.app, post(mos_body("s1", pair, 3))).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(call(&api.app, post(json!("junk"))).await.0, StatusCode::UNPROCESSABLE_ENTITY);

    // resubmission replaces
    assert_eq!(call(&api.app, post(mos_body("s1", item, 2))).await.0, StatusCode::OK);
    let pref = json!({ "session_id": "s1", "utterance_id": pair, "kind": "preference", "preference_value": "NP", "question": "sarcasm" });
    assert_eq!(call(&api.app, post(pref)).await.0, StatusCode::CREATED);

    assert_eq!(call(&api.app, get("/api/results")).await.0, StatusCode::UNAUTHORIZED);
    let req = Request::get("/api/results").header(header::AUTHORIZATION, "Bearer secret").body(Body::empty()).unwrap();
    let (s, body, _) = call(&api.app, req).await;
    assert_eq!(s, StatusCode::OK);
    let text = String::from_utf8(body).unwrap();
    assert!(!text.contains("proposed") && !text.contains("baseline"));
    let summary: SubjectiveSummary = serde_json::from_str(&text).unwrap();
    assert_eq!((summary.accepted, summary.rejected, summary.n_raters), (2, 0, 1));
    let mos_total: usize = summary.mos.values().map(|m| m.n).sum();
    assert_eq!(mos_total, 1);
    assert_eq!(summary.preference[QUESTION_SARCASM].shares["NP"], 100.0);

    // durable log keeps history; reopening compacts it
    assert_eq!(read_ratings(&api.store_path).unwrap().len(), 3);
    let store = RatingStore::open(&api.store_path).unwrap();
    assert_eq!(store.len(), 2);
    assert_eq!(read_ratings(&api.store_path).unwrap().len(), 2);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_sessions_lose_nothing() {
    let api = api();
    let items: Vec<String> = api.bundle.mos_items.iter().map(|m| m.item_id.clone()).collect();
    let mut tasks = Vec::new();
    for s in 0..10 {
        let app = api.app.clone();
        let items = items.clone();
        tasks.push(tokio::spawn(async move {
            for (i, item) in items.iter().enumerate() {
                let (status, ..) = call(&app, post(mos_body(&format!("session-{s}"), item, (1 + (s + i) % 5) as u8))).await;
                assert_eq!(status, StatusCode::CREATED);
            }
        }));
    }
    for t in tasks {
        t.await.unwrap();
    }
    let stored = read_ratings(&api.store_path).unwrap();
    assert_eq!(stored.len(), 10 * items.len());
    assert_eq!(dedupe_ratings(&stored).len(), stored.len());
}
