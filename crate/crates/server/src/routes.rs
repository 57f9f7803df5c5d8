use std::collections::HashMap;
use std::sync::Arc;

use audioscope::audio_io::{load_wav, write_wav, AudioClip};
use audioscope::edit::{EditError, EditOp};
use audioscope::introspect::{
    activations, compare_sets, feature_to_audio, spectrogram_to_image, weight_histogram,
    ActivationSet, IntrospectError,
};
use audioscope::nn::{Model, FORMAT_VERSION};
use axum::body::Bytes;
use axum::extract::rejection::{JsonRejection, PathRejection, QueryRejection};
use axum::extract::multipart::MultipartRejection;
use axum::extract::{FromRequest, Multipart, Path, Query, Request, State};
use axum::http::header;
use axum::response::{IntoResponse, Response};
use axum::Json;
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::ApiError;
use crate::state::{input_id, AppState};

pub const MAX_UPLOAD_BYTES: usize = 10 * 1024 * 1024;
pub const MAX_CLIP_SECONDS: f64 = 10.0;
/// Longest clip an edit chain may produce.
pub const MAX_EDIT_SECONDS: f64 = 60.0;
pub const PREVIEW_POINTS: usize = 1000;

type Shared = State<Arc<AppState>>;

/// Multipart fields by name. Parts with a filename but an unexpected name are
/// kept under their own name too, so the first file can be found either way.
struct Form {
    fields: HashMap<String, Bytes>,
    first_file: Option<String>,
}

impl Form {
    async fn read(multipart: Result<Multipart, MultipartRejection>) -> Result<Self, ApiError> {
        let mut multipart = multipart?;
        let mut fields = HashMap::new();
        let mut first_file = None;
        while let Some(field) = multipart.next_field().await? {
            let name = field.name().unwrap_or_default().to_string();
            let has_filename = field.file_name().is_some();
            let data = field.bytes().await?;
            if data.len() > MAX_UPLOAD_BYTES {
                return Err(ApiError::too_large(format!(
                    "part {name:?} exceeds the {MAX_UPLOAD_BYTES}-byte upload limit"
                )));
            }
            if has_filename && first_file.is_none() {
                first_file = Some(name.clone());
            }
            fields.insert(name, data);
        }
        Ok(Self { fields, first_file })
    }

    /// The audio part: `file`, else `audio`, else the first part carrying a
    /// filename.
    fn audio(&self) -> Result<&Bytes, ApiError> {
        ["file", "audio"]
            .iter()
            .find_map(|k| self.fields.get(*k))
            .or_else(|| self.first_file.as_ref().and_then(|k| self.fields.get(k)))
            .ok_or_else(|| ApiError::bad_request("no audio file in the upload (expected field \"file\")"))
    }

    fn named(&self, name: &str) -> Result<&Bytes, ApiError> {
        self.fields
            .get(name)
            .ok_or_else(|| ApiError::bad_request(format!("missing form field {name:?}")))
    }

    fn text(&self, name: &str) -> Result<Option<String>, ApiError> {
        self.fields
            .get(name)
            .map(|b| {
                String::from_utf8(b.to_vec())
                    .map_err(|_| ApiError::bad_request(format!("field {name:?} is not UTF-8")))
            })
            .transpose()
    }
}

struct Upload {
    id: String,
    clip: Arc<AudioClip>,
}

fn decode_upload(state: &AppState, bytes: &[u8]) -> Result<Upload, ApiError> {
    if bytes.is_empty() {
        return Err(ApiError::bad_request("uploaded file is empty"));
    }
    let clip = load_wav(bytes).map_err(|e| ApiError::unsupported_media(e.to_string()))?;
    if clip.is_empty() {
        return Err(ApiError::unsupported_media("WAV contains no samples"));
    }
    if clip.duration_secs() > MAX_CLIP_SECONDS {
        return Err(ApiError::bad_request(format!(
            "clip is {:.2} s long; the limit is {MAX_CLIP_SECONDS} s",
            clip.duration_secs()
        ))
        .with_detail("duration_ms", clip.duration_ms()));
    }
    let id = input_id(bytes);
    let clip = Arc::new(clip);
    state.cache.insert(id.clone(), clip.clone());
    Ok(Upload { id, clip })
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn introspect_error(e: IntrospectError) -> ApiError {
    match e {
        IntrospectError::NoParameters(i) => {
            ApiError::bad_request(format!("layer {i} has no parameters")).with_detail("layer_index", i)
        }
        IntrospectError::LayerOutOfRange { index, count } => {
            ApiError::bad_request(format!("layer {index} out of range (model has {count} layers)"))
                .with_detail("layer_index", index)
        }
        other => ApiError::internal(other.to_string()),
    }
}

fn b64(bytes: &[u8]) -> String {
    BASE64.encode(bytes)
}

fn prediction_json(id: &str, set: &ActivationSet) -> Value {
    json!({
        "input_id": id,
        "label": set.predicted_label,
        "predicted_class": set.predicted_class,
        "probs": set.probs,
        "spectrogram_png_base64": b64(&spectrogram_to_image(&set.input_spectrogram)),
    })
}

pub async fn predict(
    State(state): Shared,
    multipart: Result<Multipart, MultipartRejection>,
) -> Result<Json<Value>, ApiError> {
    let model = state.model.get()?;
    let form = Form::read(multipart).await?;
    let upload = decode_upload(&state, form.audio()?)?;
    blocking(move || {
        let set = activations(&model, &upload.clip).map_err(introspect_error)?;
        let mut body = prediction_json(&upload.id, &set);
        body["class_labels"] = json!(model.class_labels());
        Ok(Json(body))
    })
    .await
}

#[derive(Debug, Deserialize)]
pub struct LayerQuery {
    layer: Option<usize>,
}

/// Output channel count of each conv block, in order.
fn block_filter_counts(model: &Model) -> Vec<usize> {
    let shapes = model.output_shapes().unwrap_or_default();
    model
        .conv_block_taps()
        .into_iter()
        .map(|i| shapes.get(i).and_then(|s| s.first().copied()).unwrap_or(0))
        .collect()
}

fn check_layer(model: &Model, layer: usize) -> Result<usize, ApiError> {
    let counts = block_filter_counts(model);
    counts.get(layer).copied().ok_or_else(|| {
        ApiError::bad_request(format!(
            "layer {layer} out of range; the model has {} conv layers",
            counts.len()
        ))
        .with_detail("layer", layer)
        .with_detail("filter_counts", counts.clone())
    })
}

pub async fn activations_handler(
    State(state): Shared,
    query: Result<Query<LayerQuery>, QueryRejection>,
    multipart: Result<Multipart, MultipartRejection>,
) -> Result<Json<Value>, ApiError> {
    let Query(query) = query?;
    let model = state.model.get()?;
    if let Some(layer) = query.layer {
        check_layer(&model, layer)?;
    }
    let form = Form::read(multipart).await?;
    let upload = decode_upload(&state, form.audio()?)?;
    blocking(move || {
        let set = activations(&model, &upload.clip).map_err(introspect_error)?;
        let layers: Vec<Value> = set
            .layers
            .iter()
            .filter(|l| query.layer.is_none_or(|q| q == l.block))
            .map(|l| {
                json!({
                    "layer": l.block,
                    "layer_index": l.layer_index,
                    "filter_count": l.maps.len(),
                    "rows": l.maps[0].rows,
                    "cols": l.maps[0].cols,
                    "filters": l.maps.iter().map(|m| b64(&m.to_png())).collect::<Vec<_>>(),
                })
            })
            .collect();
        let mut body = prediction_json(&upload.id, &set);
        body["spectrogram"] = json!({
            "frames": set.input_spectrogram.frames,
            "bins": set.input_spectrogram.bins,
        });
        body["layers"] = json!(layers);
        Ok(Json(body))
    })
    .await
}

#[derive(Debug, Deserialize)]
pub struct FeatureAudioRequest {
    input_id: Option<String>,
    layer: usize,
    filter: usize,
}

fn parse_index(form: &Form, name: &str) -> Result<usize, ApiError> {
    let text = form
        .text(name)?
        .ok_or_else(|| ApiError::bad_request(format!("missing form field {name:?}")))?;
    text.trim()
        .parse()
        .map_err(|_| ApiError::bad_request(format!("field {name:?} must be a non-negative integer")))
}

fn wav_response(clip: &AudioClip) -> Response {
    ([(header::CONTENT_TYPE, "audio/wav")], write_wav(clip)).into_response()
}

/// Accepts either JSON `{input_id, layer, filter}` referring to a previous
/// upload, or a multipart form with `file`, `layer` and `filter`.
pub async fn feature_audio(State(state): Shared, request: Request) -> Result<Response, ApiError> {
    let model = state.model.get()?;
    let is_multipart = request
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/"));
    let (clip, layer, filter) = if is_multipart {
        let form = Form::read(Multipart::from_request(request, &()).await).await?;
        let layer = parse_index(&form, "layer")?;
        let filter = parse_index(&form, "filter")?;
        let clip = match form.text("input_id")? {
            Some(id) if !form.fields.contains_key("file") => cached(&state, &id)?,
            _ => decode_upload(&state, form.audio()?)?.clip,
        };
        (clip, layer, filter)
    } else {
        let body: Result<Json<FeatureAudioRequest>, JsonRejection> =
            Json::from_request(request, &()).await;
        let Json(req) = body?;
        let id = req
            .input_id
            .ok_or_else(|| ApiError::bad_request("JSON requests must carry an input_id"))?;
        (cached(&state, &id)?, req.layer, req.filter)
    };
    let count = check_layer(&model, layer)?;
    if filter >= count {
        return Err(ApiError::bad_request(format!(
            "filter {filter} out of range; layer {layer} has {count} filters"
        ))
        .with_detail("layer", layer)
        .with_detail("filter", filter)
        .with_detail("filter_count", count));
    }
    blocking(move || {
        let set = activations(&model, &clip).map_err(introspect_error)?;
        let map = &set.layers[layer].maps[filter];
        let audio = feature_to_audio(map, &set.input_spectrogram).map_err(introspect_error)?;
        Ok(wav_response(&audio))
    })
    .await
}

fn cached(state: &AppState, id: &str) -> Result<Arc<AudioClip>, ApiError> {
    state.cache.get(id).ok_or_else(|| {
        ApiError::bad_request("unknown input_id; upload the file again")
            .with_detail("input_id", id)
    })
}

fn edit_error(index: usize, op: &EditOp, e: EditError) -> ApiError {
    ApiError::bad_request(format!("edit {index} ({}) failed: {e}", op.kind()))
        .with_detail("op_index", index)
        .with_detail("kind", op.kind())
}

fn apply_ops(clip: &AudioClip, ops: &[EditOp]) -> Result<AudioClip, ApiError> {
    let max_len = (MAX_EDIT_SECONDS * clip.sample_rate() as f64) as usize;
    let mut current = clip.clone();
    for (i, op) in ops.iter().enumerate() {
        if let EditOp::Repeat { count } = op {
            if current.len().saturating_mul(*count) > max_len {
                return Err(ApiError::bad_request(format!(
                    "edit {i} (Repeat) would exceed {MAX_EDIT_SECONDS} s"
                ))
                .with_detail("op_index", i)
                .with_detail("kind", op.kind()));
            }
        }
        current = op.apply(&current).map_err(|e| edit_error(i, op, e))?;
    }
    Ok(current)
}

pub async fn edit(
    State(state): Shared,
    multipart: Result<Multipart, MultipartRejection>,
) -> Result<Json<Value>, ApiError> {
    let form = Form::read(multipart).await?;
    let upload = decode_upload(&state, form.audio()?)?;
    let ops: Vec<EditOp> = match form.text("ops")? {
        None => Vec::new(),
        Some(text) if text.trim().is_empty() => Vec::new(),
        Some(text) => serde_json::from_str(&text)
            .map_err(|e| ApiError::bad_request(format!("invalid ops JSON: {e}")))?,
    };
    let state2 = state.clone();
    blocking(move || {
        let out = apply_ops(&upload.clip, &ops)?;
        let wav = write_wav(&out);
        let id = input_id(&wav);
        state2.cache.insert(id.clone(), Arc::new(out.clone()));
        Ok(Json(json!({
            "input_id": id,
            "sample_rate": out.sample_rate(),
            "num_samples": out.len(),
            "duration_ms": out.duration_ms(),
            "waveform_preview": audioscope::edit::envelope(&out, PREVIEW_POINTS),
            "wav_base64": b64(&wav),
        })))
    })
    .await
}

pub async fn compare(
    State(state): Shared,
    multipart: Result<Multipart, MultipartRejection>,
) -> Result<Json<Value>, ApiError> {
    let model = state.model.get()?;
    let form = Form::read(multipart).await?;
    let a = decode_upload(&state, form.named("a")?)?;
    let b = decode_upload(&state, form.named("b")?)?;
    blocking(move || {
        let set_a = activations(&model, &a.clip).map_err(introspect_error)?;
        let set_b = activations(&model, &b.clip).map_err(introspect_error)?;
        let side_a = prediction_json(&a.id, &set_a);
        let side_b = prediction_json(&b.id, &set_b);
        let report = compare_sets(set_a, set_b);
        let mut body = report.distances_json();
        body["a"] = side_a;
        body["b"] = side_b;
        body["filter_counts"] = json!(report
            .filter_distances
            .iter()
            .map(Vec::len)
            .collect::<Vec<_>>());
        Ok(Json(body))
    })
    .await
}

pub async fn model_summary(State(state): Shared) -> Result<Json<Value>, ApiError> {
    let model = state.model.get()?;
    let shapes = model
        .output_shapes()
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let layers: Vec<Value> = model
        .layers()
        .iter()
        .zip(&shapes)
        .enumerate()
        .map(|(i, (layer, shape))| {
            json!({
                "index": i,
                "kind": layer.spec.kind_name(),
                "spec": layer.spec,
                "params": layer.parameter_count(),
                "output_shape": shape,
            })
        })
        .collect();
    let taps = model.conv_block_taps();
    Ok(Json(json!({
        "layers": layers,
        "class_labels": model.class_labels(),
        "input_shape": model.input_shape(),
        "parameter_count": model.parameter_count(),
        "checkpoint_version": FORMAT_VERSION,
        "conv_layers": taps.iter().zip(block_filter_counts(&model)).enumerate().map(|(b, (tap, n))| json!({
            "layer": b,
            "layer_index": tap,
            "filters": n,
        })).collect::<Vec<_>>(),
    })))
}

pub async fn histogram(
    State(state): Shared,
    index: Result<Path<usize>, PathRejection>,
) -> Result<Json<Value>, ApiError> {
    let Path(index) = index?;
    let model = state.model.get()?;
    let h = weight_histogram(&model, index).map_err(introspect_error)?;
    Ok(Json(json!(h)))
}

pub async fn not_found() -> ApiError {
    ApiError::bad_request("no such endpoint").with_status(axum::http::StatusCode::NOT_FOUND)
}
