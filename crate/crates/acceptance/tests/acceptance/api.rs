use std::sync::Arc;

use audioscope::audio_io::{load_wav, write_wav, AudioClip};
use audioscope::nn::load_checkpoint;
use audioscope_acceptance::{ensure, CheckResult};
use audioscope_server::{router, AppState};
use axum::body::{to_bytes, Body};
use axum::http::{header, Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde_json::Value;
use tower::ServiceExt;

const BOUNDARY: &str = "acceptance-boundary";

fn tone(freq: f32) -> Vec<u8> {
    let samples = (0..16000)
        .map(|i| 0.5 * (2.0 * std::f32::consts::PI * freq * i as f32 / 16000.0).sin())
        .collect();
    write_wav(&AudioClip::new(samples, 16000))
}

fn form(parts: &[(&str, &[u8], bool)]) -> Request<Body> {
    form_to("", parts)
}

fn form_to(uri: &str, parts: &[(&str, &[u8], bool)]) -> Request<Body> {
    let mut body = Vec::new();
    for (name, data, is_file) in parts {
        body.extend_from_slice(format!("--{BOUNDARY}\r\n").as_bytes());
        let disposition = if *is_file {
            format!("Content-Disposition: form-data; name=\"{name}\"; filename=\"{name}.wav\"\r\n\r\n")
        } else {
            format!("Content-Disposition: form-data; name=\"{name}\"\r\n\r\n")
        };
        body.extend_from_slice(disposition.as_bytes());
        body.extend_from_slice(data);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    Request::post(if uri.is_empty() { "/" } else { uri })
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(body))
        .unwrap()
}

struct Client {
    app: Router,
    runtime: tokio::runtime::Runtime,
    requests: usize,
}

impl Client {
    fn send(&mut self, mut req: Request<Body>, uri: &str) -> (StatusCode, Vec<u8>) {
        if !uri.is_empty() {
            *req.uri_mut() = uri.parse().unwrap();
        }
        self.requests += 1;
        let app = self.app.clone();
        self.runtime.block_on(async move {
            let resp = app.oneshot(req).await.unwrap();
            let status = resp.status();
            (status, to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec())
        })
    }

    /// Sends and checks the status; returns the body parsed as JSON (or Null).
    fn expect(&mut self, what: &str, req: Request<Body>, uri: &str, status: StatusCode) -> Result<Value, String> {
        let (got, body) = self.send(req, uri);
        let json = serde_json::from_slice(&body).unwrap_or(Value::Null);
        ensure(got == status, || format!("{what}: status {got}, expected {status}: {json}"))?;
        if !status.is_success() {
            ensure(json["code"].is_string() && json["message"].is_string(), || {
                format!("{what}: error body is not an ApiError: {json}")
            })?;
        }
        Ok(json)
    }
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn json_post(uri: &str, body: String) -> Request<Body> {
    Request::post(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body))
        .unwrap()
}

pub fn golden_requests(checkpoint: Option<&[u8]>) -> CheckResult {
    let bytes = checkpoint.ok_or("toy checkpoint unavailable (toy training did not finish)")?;
    let model = load_checkpoint(bytes).map_err(|e| e.to_string())?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| e.to_string())?;
    let mut c = Client { app: router(Arc::new(AppState::new(Some(model), None))), runtime, requests: 0 };
    let ok = StatusCode::OK;
    let bad = StatusCode::BAD_REQUEST;
    let a = tone(440.0);
    let b = tone(880.0);

    let p = c.expect("predict", form(&[("file", &a, true)]), "/api/predict", ok)?;
    let probs: Vec<f64> = p["probs"].as_array().ok_or("predict: no probs")?.iter().filter_map(Value::as_f64).collect();
    let sum: f64 = probs.iter().sum();
    ensure(probs.len() == 10 && (sum - 1.0).abs() <= 1e-6, || format!("predict: probs sum {sum}"))?;
    ensure(p["label"] == "zero", || format!("predict: 440 Hz labelled {}", p["label"]))?;
    let id = p["input_id"].as_str().ok_or("predict: no input_id")?.to_string();
    let e = c.expect("predict text upload", form(&[("file", b"plain text", true)]), "/api/predict", bad)?;
    ensure(e["code"] == "unsupported_media", || format!("text upload code {}", e["code"]))?;
    c.expect("predict without file", form(&[("note", b"x", false)]), "/api/predict", bad)?;

    let act = c.expect("activations", form(&[("file", &b, true)]), "/api/activations", ok)?;
    let filters: usize = act["layers"]
        .as_array()
        .ok_or("activations: no layers")?
        .iter()
        .map(|l| l["filters"].as_array().map_or(0, Vec::len))
        .sum();
    ensure(filters == 64, || format!("activations: {filters} filter images"))?;
    let first = act["layers"][0]["filters"][0].as_str().unwrap_or_default();
    ensure(STANDARD.decode(first).is_ok_and(|png| png.starts_with(b"\x89PNG")), || {
        "activations: filter image is not a PNG".into()
    })?;
    c.expect("activations layer=7", form(&[("file", &b, true)]), "/api/activations?layer=7", bad)?;

    let (status, wav) = c.send(
        json_post("/api/feature-audio", format!(r#"{{"input_id":"{id}","layer":1,"filter":5}}"#)),
        "",
    );
    ensure(status == ok, || format!("feature-audio: status {status}"))?;
    let clip = load_wav(&wav).map_err(|e| format!("feature-audio: {e}"))?;
    ensure(clip.len() == 16000 && clip.sample_rate() == 16000, || {
        format!("feature-audio: {} samples at {} Hz", clip.len(), clip.sample_rate())
    })?;
    c.expect(
        "feature-audio filter 16 on layer 0",
        form(&[("file", &a, true), ("layer", b"0", false), ("filter", b"16", false)]),
        "/api/feature-audio",
        bad,
    )?;
    c.expect(
        "feature-audio unknown id",
        json_post("/api/feature-audio", r#"{"input_id":"0000","layer":0,"filter":0}"#.into()),
        "",
        bad,
    )?;

    let ops = br#"[{"kind":"Repeat","params":{"count":2}},{"kind":"Fade","params":{"fade_ms":50}}]"#;
    let ed = c.expect("edit", form(&[("file", &a, true), ("ops", ops, false)]), "/api/edit", ok)?;
    ensure(ed["duration_ms"] == 2000.0, || format!("edit: duration {}", ed["duration_ms"]))?;
    let bad_ops = br#"[{"kind":"Invert"},{"kind":"Slice","params":{"start_ms":900,"end_ms":100}}]"#;
    let e = c.expect("edit bad slice", form(&[("file", &a, true), ("ops", bad_ops, false)]), "/api/edit", bad)?;
    ensure(e["detail"]["op_index"] == 1, || format!("edit: op_index {}", e["detail"]["op_index"]))?;

    let cmp = c.expect("compare a,a", form(&[("a", &a, true), ("b", &a, true)]), "/api/compare", ok)?;
    let all_zero = cmp["filter_distances"]
        .as_array()
        .ok_or("compare: no distances")?
        .iter()
        .flat_map(|l| l.as_array().cloned().unwrap_or_default())
        .all(|d| d.as_f64() == Some(0.0));
    ensure(all_zero && cmp["probs_l1"].as_f64() == Some(0.0), || "compare(a,a): nonzero distance".into())?;
    let cmp = c.expect("compare a,b", form(&[("a", &a, true), ("b", &b, true)]), "/api/compare", ok)?;
    ensure(cmp["probs_l1"].as_f64().unwrap_or(0.0) > 0.0, || "compare(a,b): zero probs distance".into())?;
    c.expect("compare missing b", form(&[("a", &a, true)]), "/api/compare", bad)?;

    let s = c.expect("model summary", get("/api/model/summary"), "", ok)?;
    ensure(s["layers"].as_array().map(Vec::len) == Some(16), || "summary: layer count".into())?;
    let h = c.expect("conv1 histogram", get("/api/layers/0/weights/histogram"), "", ok)?;
    let total: u64 = h["counts"].as_array().ok_or("histogram: no counts")?.iter().filter_map(Value::as_u64).sum();
    ensure(total == 800, || format!("conv1 histogram counts sum to {total}"))?;
    c.expect("pool layer histogram", get("/api/layers/2/weights/histogram"), "", bad)?;

    let empty = router(Arc::new(AppState::new(None, None)));
    let mut c2 = Client { app: empty, runtime: tokio::runtime::Runtime::new().map_err(|e| e.to_string())?, requests: 0 };
    c2.expect("predict without model", form(&[("file", &a, true)]), "/api/predict", StatusCode::SERVICE_UNAVAILABLE)?;

    Ok(format!(
        "{} golden requests over 7 endpoints; probs sum {sum:.7}, 64 filter PNGs, 16000-sample feature WAV, \
         compare(a,a)=0, conv1 histogram 800",
        c.requests + c2.requests
    ))
}
