//! HTTP routes. Every body is JSON except the human-score upload (CSV).
//!
//! List endpoints are stable-ordered: documents in ingestion order,
//! assessments by `generated_at`, then id.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rubrag_core::agent::{GradeError, SubmissionError};
use rubrag_core::corpus::{CorpusError, DocType, Document};
use rubrag_core::engine::engine_error_code;
use rubrag_core::review::{AssessmentStatus, ReviewError};
use rubrag_core::rubric::CriterionScore;
use rubrag_core::stats::StatsError;
use rubrag_core::{Engine, EngineError};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    /// `None` disables authentication.
    pub token: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.to_string(),
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "InvalidInput", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"code": self.code, "message": self.message}});
        (self.status, Json(body)).into_response()
    }
}

fn review_error(e: &ReviewError) -> (StatusCode, &'static str) {
    match e {
        ReviewError::NotFound(_) => (StatusCode::NOT_FOUND, "NotFound"),
        ReviewError::InvalidState { .. } => (StatusCode::CONFLICT, "InvalidState"),
        ReviewError::EmptyReason => (StatusCode::BAD_REQUEST, "EmptyReason"),
        ReviewError::EmptyComment => (StatusCode::BAD_REQUEST, "EmptyComment"),
        ReviewError::Rubric(rubric_err) => (StatusCode::BAD_REQUEST, rubric_code(rubric_err)),
        ReviewError::NoDecidedAssessments => (StatusCode::NOT_FOUND, "NoDecidedAssessments"),
        _ => (StatusCode::INTERNAL_SERVER_ERROR, "InternalError"),
    }
}

fn rubric_code(e: &rubrag_core::rubric::RubricError) -> &'static str {
    use rubrag_core::rubric::RubricError::*;
    match e {
        BandPercentMismatch { .. } => "BandPercentMismatch",
        PercentOutOfRange(_) => "PercentOutOfRange",
        MissingCriterionScore(_) => "MissingCriterionScore",
        ExtraCriterionScore(_) => "ExtraCriterionScore",
        EmptyComment(_) => "EmptyComment",
        Invalid(_) | Load(_) => "RubricInvalid",
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let (status, code) = match &e {
            EngineError::Review(r) => review_error(r),
            EngineError::Submission(SubmissionError::NotFound(_)) => (StatusCode::NOT_FOUND, "NotFound"),
            EngineError::Submission(SubmissionError::EmptyEssay) => (StatusCode::BAD_REQUEST, "EmptyEssay"),
            EngineError::Corpus(CorpusError::EmptyDocument | CorpusError::UnknownDocType(_) | CorpusError::ProvenanceMismatch) => {
                (StatusCode::BAD_REQUEST, engine_error_code(&e))
            }
            EngineError::Embedding(rubrag_core::embedding::EmbeddingError::EmptyText) => (StatusCode::BAD_REQUEST, "EmptyText"),
            EngineError::Embedding(rubrag_core::embedding::EmbeddingError::RemoteUnavailable(_)) => {
                (StatusCode::BAD_GATEWAY, "EmbeddingUnavailable")
            }
            EngineError::Grade(GradeError::ProviderUnavailable(_) | GradeError::UnparseableAfterRepairs { .. }) => {
                (StatusCode::BAD_GATEWAY, engine_error_code(&e))
            }
            EngineError::Grade(GradeError::Embedding(rubrag_core::embedding::EmbeddingError::RemoteUnavailable(_))) => {
                (StatusCode::BAD_GATEWAY, "EmbeddingUnavailable")
            }
            EngineError::Grade(GradeError::Store(r)) => review_error(r),
            EngineError::Provider(_) => (StatusCode::BAD_GATEWAY, "ProviderUnavailable"),
            EngineError::Stats(StatsError::InsufficientData { .. }) => (StatusCode::BAD_REQUEST, "InsufficientData"),
            EngineError::Stats(_) => (StatusCode::BAD_REQUEST, "InvalidScores"),
            EngineError::NoHumanScores => (StatusCode::NOT_FOUND, "NoHumanScores"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "InternalError"),
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            tracing::error!(error = %e, "request failed");
        }
        ApiError::new(status, code, e.to_string())
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        EngineError::Review(e).into()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs blocking engine work off the async workers.
async fn blocking<T: Send + 'static>(
    state: &AppState,
    f: impl FnOnce(&Engine) -> Result<T, ApiError> + Send + 'static,
) -> ApiResult<T> {
    let engine = state.engine.clone();
    tokio::task::spawn_blocking(move || f(&engine))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "InternalError", e.to_string()))?
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

/// A document as served: everything except the embedding vector.
fn document_view(doc: &Document) -> Value {
    let mut v = serde_json::to_value(doc).expect("document serializes");
    if let Some(obj) = v.as_object_mut() {
        obj.remove("embedding");
    }
    v
}

fn non_blank(opt: Option<String>) -> Option<String> {
    opt.filter(|s| !s.trim().is_empty())
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    let Some(token) = &state.token else {
        return next.run(req).await;
    };
    if req.uri().path() == "/api/health" {
        return next.run(req).await;
    }
    let presented = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if presented == Some(token.as_str()) {
        next.run(req).await
    } else {
        ApiError::new(StatusCode::UNAUTHORIZED, "Unauthorized", "missing or invalid bearer token").into_response()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/corpus/documents", post(ingest_document).get(list_documents))
        .route("/api/submissions", post(create_submission))
        .route("/api/submissions/{id}/grade", post(grade_submission))
        .route("/api/assessments", get(list_assessments))
        .route("/api/assessments/{id}", get(get_assessment))
        .route("/api/assessments/{id}/approve", post(approve))
        .route("/api/assessments/{id}/edit", post(edit))
        .route("/api/assessments/{id}/reject", post(reject))
        .route("/api/reports/reliability", get(reliability))
        .route("/api/reports/human-scores", post(upload_human_scores))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "NotFound", "no such route") })
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

#[derive(Deserialize)]
struct NewDocument {
    text: String,
    doc_type: String,
    source_name: String,
    #[serde(default)]
    cohort: Option<String>,
}

async fn ingest_document(State(state): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: NewDocument = parse_body(&body)?;
    let doc_type: DocType = req.doc_type.parse().map_err(|e: CorpusError| ApiError::new(StatusCode::BAD_REQUEST, "UnknownDocType", e.to_string()))?;
    if doc_type == DocType::ApprovedFeedback {
        return Err(ApiError::bad_request("approved_feedback documents are created by review decisions"));
    }
    let doc = blocking(&state, move |e| {
        Ok(e.ingest_text(&req.text, doc_type, &req.source_name, non_blank(req.cohort))?)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(document_view(&doc))))
}

#[derive(Deserialize)]
struct DocumentQuery {
    doc_type: Option<String>,
    cohort: Option<String>,
}

async fn list_documents(State(state): State<AppState>, Query(q): Query<DocumentQuery>) -> ApiResult<Json<Value>> {
    let doc_type = match non_blank(q.doc_type) {
        Some(t) => Some(t.parse::<DocType>().map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "UnknownDocType", e.to_string()))?),
        None => None,
    };
    let cohort = non_blank(q.cohort);
    let docs = state.engine.corpus.list(doc_type, cohort.as_deref());
    Ok(Json(Value::Array(docs.iter().map(document_view).collect())))
}

#[derive(Deserialize)]
struct NewSubmission {
    student_ref: String,
    essay_text: String,
    #[serde(default)]
    cohort: Option<String>,
}

async fn create_submission(State(state): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: NewSubmission = parse_body(&body)?;
    let sub = blocking(&state, move |e| Ok(e.submit(&req.student_ref, &req.essay_text, non_blank(req.cohort))?)).await?;
    Ok((StatusCode::CREATED, Json(json!(sub))))
}

#[derive(Deserialize)]
struct GradeQuery {
    k: Option<usize>,
}

async fn grade_submission(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<GradeQuery>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    if q.k == Some(0) {
        return Err(ApiError::bad_request("k must be positive"));
    }
    let a = blocking(&state, move |e| Ok(e.grade_submission(&id, q.k)?)).await?;
    Ok((StatusCode::CREATED, Json(json!(a))))
}

#[derive(Deserialize)]
struct AssessmentQuery {
    status: Option<String>,
    cohort: Option<String>,
}

async fn list_assessments(State(state): State<AppState>, Query(q): Query<AssessmentQuery>) -> ApiResult<Json<Value>> {
    let status = match non_blank(q.status) {
        Some(s) => Some(AssessmentStatus::parse(&s).ok_or_else(|| ApiError::bad_request(format!("unknown status `{s}`")))?),
        None => None,
    };
    let cohort = non_blank(q.cohort);
    Ok(Json(json!(state.engine.assessments.list(status, cohort.as_deref()))))
}

async fn get_assessment(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let engine = &state.engine;
    let a = engine
        .assessments
        .get(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "NotFound", format!("assessment {id} not found")))?;
    let evidence: Vec<Value> = a
        .evidence
        .iter()
        .map(|r| {
            let doc = engine.corpus.get(&r.doc_id);
            json!({
                "doc_id": r.doc_id,
                "doc_type": r.doc_type,
                "similarity": r.similarity,
                "rank": r.rank,
                "source_name": doc.as_ref().map(|d| d.source_name.clone()),
                "text": doc.map(|d| d.text),
            })
        })
        .collect();
    let submission = engine.submissions.get(&a.submission_id);
    Ok(Json(json!({
        "assessment": a,
        "submission": submission,
        "evidence": evidence,
    })))
}

fn decision_response(engine: &Engine, id: &str, document: Option<Document>) -> Value {
    json!({
        "assessment": engine.assessments.get(id),
        "document": document.as_ref().map(document_view),
    })
}

#[derive(Deserialize)]
struct ApproveBody {
    reviewer_id: String,
}

fn reviewer(id: &str) -> ApiResult<()> {
    if id.trim().is_empty() {
        return Err(ApiError::bad_request("reviewer_id must not be empty"));
    }
    Ok(())
}

async fn approve(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: ApproveBody = parse_body(&body)?;
    reviewer(&req.reviewer_id)?;
    let out = blocking(&state, move |e| {
        let doc = e.review.approve(&id, &req.reviewer_id)?;
        Ok(decision_response(e, &id, Some(doc)))
    })
    .await?;
    Ok(Json(out))
}

#[derive(Deserialize)]
struct EditBody {
    reviewer_id: String,
    criterion_scores: Vec<CriterionScore>,
    overall_comment: String,
}

async fn edit(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: EditBody = parse_body(&body)?;
    reviewer(&req.reviewer_id)?;
    let out = blocking(&state, move |e| {
        let doc = e
            .review
            .edit_and_approve(&id, &req.reviewer_id, req.criterion_scores, &req.overall_comment)?;
        Ok(decision_response(e, &id, Some(doc)))
    })
    .await?;
    Ok(Json(out))
}

#[derive(Deserialize)]
struct RejectBody {
    reviewer_id: String,
    reason: String,
    #[serde(default)]
    request_regeneration: bool,
}

async fn reject(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: RejectBody = parse_body(&body)?;
    reviewer(&req.reviewer_id)?;
    let out = blocking(&state, move |e| {
        e.review
            .reject(&id, &req.reviewer_id, &req.reason, req.request_regeneration)?;
        Ok(decision_response(e, &id, None))
    })
    .await?;
    Ok(Json(out))
}

#[derive(Deserialize)]
struct CohortQuery {
    cohort: Option<String>,
}

async fn reliability(State(state): State<AppState>, Query(q): Query<CohortQuery>) -> ApiResult<Json<Value>> {
    let cohort = non_blank(q.cohort);
    let report = blocking(&state, move |e| Ok(e.reliability(cohort.as_deref())?)).await?;
    Ok(Json(report.to_json()))
}

async fn upload_human_scores(State(state): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let text = String::from_utf8(body.to_vec()).map_err(|_| ApiError::bad_request("CSV must be UTF-8"))?;
    let stored = blocking(&state, move |e| Ok(e.store_human_scores(&text)?)).await?;
    Ok((StatusCode::CREATED, Json(json!({"stored": stored}))))
}
