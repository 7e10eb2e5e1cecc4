//! Read-only HTTP API over a finished pipeline run.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use probseg_core::contour::{extract_contours, Contour};
use probseg_core::metrics::{mean_std, slice_counts, dsc_from_counts, SweepRow, EPSILON_SMOOTH};
use probseg_core::reconstruct::threshold_slice;
use probseg_core::report::parse_sweep_csv;
use probseg_core::roi::{QcReportLine, CT_LEVEL_HU, CT_WINDOW_HU};
use probseg_core::volume::read_bundle;
use probseg_core::{PatientMeta, Plane, ProbVolume, Volume3D};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::PipelineError;
use crate::layout::{read_json, read_text, require_bundle, Layout};
use crate::render::{gray_png, heat_png, raw_rows};
use crate::stages::{read_manifest, read_prob, read_split, Manifest};

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn not_found(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::NOT_FOUND,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let status = match &e {
            PipelineError::MissingArtifact { .. } => StatusCode::NOT_FOUND,
            PipelineError::Core(probseg_core::Error::SliceIndex { .. }) => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError {
            status,
            message: e.to_string(),
        }
    }
}

impl From<probseg_core::Error> for ApiError {
    fn from(e: probseg_core::Error) -> Self {
        PipelineError::from(e).into()
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Clone)]
struct AppState {
    layout: Arc<Layout>,
}

/// Parses a `th` query value: a finite number in `[0, 1]`.
pub fn parse_threshold(raw: Option<&String>) -> ApiResult<Option<f64>> {
    let Some(raw) = raw else { return Ok(None) };
    match raw.parse::<f64>() {
        Ok(th) if (0.0..=1.0).contains(&th) => Ok(Some(th)),
        _ => Err(ApiError::bad_request(format!("threshold must be a number in [0, 1], got {raw:?}"))),
    }
}

fn parse_plane(raw: &str) -> ApiResult<Plane> {
    raw.parse().map_err(|_| ApiError::not_found(format!("unknown plane {raw:?}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        message: e.to_string(),
    })?
}

fn manifest_entry(layout: &Layout, id: &str) -> ApiResult<(Manifest, PatientMeta)> {
    let manifest = read_manifest(layout)?;
    let meta = manifest
        .patients
        .iter()
        .find(|p| p.id == id)
        .map(|p| p.meta)
        .ok_or_else(|| ApiError::not_found(format!("unknown patient {id:?}")))?;
    Ok((manifest, meta))
}

#[derive(Debug, Serialize)]
struct PatientSummary {
    id: String,
    meta: PatientMeta,
    qc: Option<QcReportLine>,
    test: bool,
}

fn test_ids(layout: &Layout) -> Vec<String> {
    Plane::ALL
        .iter()
        .filter_map(|&p| read_split(layout, p).ok())
        .flat_map(|s| s.test)
        .collect()
}

fn patients(layout: &Layout) -> ApiResult<Vec<PatientSummary>> {
    let manifest = read_manifest(layout)?;
    let qc: Vec<QcReportLine> = read_json(&layout.qc(), "preprocess").unwrap_or_default();
    let test = test_ids(layout);
    Ok(manifest
        .patients
        .into_iter()
        .map(|p| PatientSummary {
            qc: qc.iter().find(|l| l.id == p.id).cloned(),
            test: test.contains(&p.id),
            id: p.id,
            meta: p.meta,
        })
        .collect())
}

fn read_view(layout: &Layout, id: &str, name: &str) -> ApiResult<Volume3D> {
    let stem = layout.prep(id, name);
    require_bundle(&stem, "preprocess")?;
    Ok(read_bundle(&stem)?)
}

fn patient_detail(layout: &Layout, id: &str) -> ApiResult<Value> {
    let (_, meta) = manifest_entry(layout, id)?;
    let qc: Vec<QcReportLine> = read_json(&layout.qc(), "preprocess")?;
    let line = qc.into_iter().find(|l| l.id == id);
    let gtv = read_view(layout, id, "gtv").ok();
    let slices: HashMap<&str, usize> = match &gtv {
        Some(v) => Plane::ALL.iter().map(|p| (p.name(), p.extent(v.dims()))).collect(),
        None => HashMap::new(),
    };
    let predicted: Vec<Plane> = Plane::ALL
        .into_iter()
        .filter(|&p| require_bundle(&layout.ensemble(p, id), "ensemble").is_ok())
        .collect();
    Ok(json!({
        "id": id,
        "meta": meta,
        "qc": line,
        "dims": gtv.as_ref().map(|v| v.dims()),
        "spacing_mm": gtv.as_ref().map(|v| v.spacing()),
        "slices": slices,
        "predicted_planes": predicted,
        "test": test_ids(layout).iter().any(|t| t == id),
    }))
}

fn ensemble_volume(layout: &Layout, id: &str, plane: Plane) -> ApiResult<ProbVolume> {
    Ok(read_prob(&layout.ensemble(plane, id), plane, "ensemble")?)
}

#[derive(Debug, Serialize)]
struct ContourOut {
    points: Vec<[f64; 2]>,
    hole: bool,
}

impl From<Contour> for ContourOut {
    fn from(c: Contour) -> Self {
        ContourOut {
            hole: c.is_hole(),
            points: c.points,
        }
    }
}

fn slice_resource(
    layout: &Layout,
    id: &str,
    plane: Plane,
    k: usize,
    file: &str,
    query: &HashMap<String, String>,
) -> ApiResult<Response> {
    manifest_entry(layout, id)?;
    let png = |bytes: Vec<u8>| ([(header::CONTENT_TYPE, "image/png")], bytes).into_response();
    match file {
        "ct.png" => {
            let v = read_view(layout, id, "ct_view")?;
            let (lo, hi) = (CT_LEVEL_HU - CT_WINDOW_HU / 2.0, CT_LEVEL_HU + CT_WINDOW_HU / 2.0);
            Ok(png(gray_png(&v.slice(plane, k)?, lo, hi)))
        }
        "pet.png" => {
            let v = read_view(layout, id, "pet_view")?;
            let max = v.data().iter().copied().fold(0.0, f64::max);
            Ok(png(gray_png(&v.slice(plane, k)?, 0.0, max)))
        }
        "prob.png" => Ok(png(heat_png(ensemble_volume(layout, id, plane)?.slice(k)?))),
        "prob.bin" => {
            let v = ensemble_volume(layout, id, plane)?;
            let s = v.slice(k)?;
            Ok((
                [
                    (header::CONTENT_TYPE, "application/octet-stream".to_string()),
                    (header::HeaderName::from_static("x-width"), s.width.to_string()),
                    (header::HeaderName::from_static("x-height"), s.height.to_string()),
                ],
                raw_rows(s),
            )
                .into_response())
        }
        "contours" => {
            let th = parse_threshold(query.get("th"))?.unwrap_or(0.5);
            let v = ensemble_volume(layout, id, plane)?;
            let rings: Vec<ContourOut> = extract_contours(&v, k, th)?.into_iter().map(ContourOut::from).collect();
            Ok(Json(json!({ "patient": id, "plane": plane, "k": k, "th": th, "contours": rings })).into_response())
        }
        "mask" => {
            let th = parse_threshold(query.get("th"))?.unwrap_or(0.5);
            let v = ensemble_volume(layout, id, plane)?;
            let m = threshold_slice(v.slice(k)?, th);
            let data: Vec<u8> = m.data.iter().map(|&x| x as u8).collect();
            Ok(Json(json!({ "width": m.width, "height": m.height, "th": th, "data": data })).into_response())
        }
        other => Err(ApiError::not_found(format!("unknown slice resource {other:?}"))),
    }
}

/// Nearest precomputed sweep row per plane, plus per-slice DSC at the exact
/// threshold when a plane is given.
fn metrics(layout: &Layout, id: &str, query: &HashMap<String, String>) -> ApiResult<Value> {
    let (_, meta) = manifest_entry(layout, id)?;
    let plane = query.get("plane").map(|p| parse_plane(p)).transpose()?;
    let th = parse_threshold(query.get("th"))?;
    let all = parse_sweep_csv(&read_text(&layout.eval_csv(), "evaluate")?)?;
    let mut rows: Vec<SweepRow> = all
        .into_iter()
        .filter(|r| r.patient == id && plane.is_none_or(|p| r.plane == p))
        .collect();
    if rows.is_empty() {
        return Err(ApiError::not_found(format!("no evaluation rows for patient {id:?}")));
    }
    if let Some(th) = th {
        let mut nearest: Vec<SweepRow> = Vec::new();
        for p in Plane::ALL {
            let best = rows
                .iter()
                .filter(|r| r.plane == p)
                .min_by(|a, b| (a.th - th).abs().total_cmp(&(b.th - th).abs()));
            nearest.extend(best.cloned());
        }
        rows = nearest;
    }
    let live = match (plane, th) {
        (Some(p), Some(th)) => {
            let prob = ensemble_volume(layout, id, p)?;
            let gt = read_view(layout, id, "gtv")?;
            let dsc: Vec<f64> = slice_counts(&prob, &gt, th)?
                .iter()
                .map(|c| dsc_from_counts(c, EPSILON_SMOOTH))
                .collect();
            let ms = mean_std(&dsc).expect("volume has slices");
            Some(json!({ "plane": p, "th": th, "mean_dsc": ms.mean, "std_dsc": ms.std, "slice_dsc": dsc }))
        }
        _ => None,
    };
    Ok(json!({ "patient": id, "meta": meta, "plane": plane, "th": th, "rows": rows, "live": live }))
}

async fn list_patients(State(s): State<AppState>) -> ApiResult<Json<Vec<PatientSummary>>> {
    blocking(move || patients(&s.layout)).await.map(Json)
}

async fn get_patient(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    blocking(move || patient_detail(&s.layout, &id)).await.map(Json)
}

async fn get_slice(
    State(s): State<AppState>,
    Path((id, plane, k, file)): Path<(String, String, String, String)>,
    Query(query): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let plane = parse_plane(&plane)?;
    let k: usize = k
        .parse()
        .map_err(|_| ApiError::not_found(format!("slice index {k:?} is not a number")))?;
    blocking(move || slice_resource(&s.layout, &id, plane, k, &file, &query)).await
}

async fn get_metrics(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<HashMap<String, String>>,
) -> ApiResult<Json<Value>> {
    blocking(move || metrics(&s.layout, &id, &query)).await.map(Json)
}

async fn get_cohort(State(s): State<AppState>) -> ApiResult<Json<Value>> {
    blocking(move || Ok(read_json(&s.layout.report("cohort.json"), "report")?)).await.map(Json)
}

pub fn router(layout: Layout) -> Router {
    let state = AppState {
        layout: Arc::new(layout),
    };
    Router::new()
        .route("/api/patients", get(list_patients))
        .route("/api/patients/{id}", get(get_patient))
        .route("/api/patients/{id}/metrics", get(get_metrics))
        .route("/api/patients/{id}/{plane}/slices/{k}/{file}", get(get_slice))
        .route("/api/report/cohort", get(get_cohort))
        .with_state(state)
}

pub async fn serve(layout: Layout, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(layout)).await
}
