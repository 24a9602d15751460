//! Request handlers. Each one maps onto a single core operation and, when it
//! changes session state, appends exactly one session event.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Extension, Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use genquery_core::concretize::ConcretizeBatch;
use genquery_core::corpus::{GenerationMode, GenerationProvenance, ImageRecord, ImageSource};
use genquery_core::keywords::{context_from_events, ContextBundle, KeywordSuggestion};
use genquery_core::modify::{BinaryMask, GenerationResult, SegmentMap};
use genquery_core::retrieval::{QueryToken, ResultPage, ScoredImage};
use genquery_core::session::{
    validate_session_id, EventKind, PatternReport, SessionError, SessionEvent,
};

use crate::config::SESSION_HEADER;
use crate::error::ApiError;
use crate::state::AppState;

type Shared = Arc<AppState>;
type ApiResult<T> = Result<Json<T>, ApiError>;

/// Session id attached to the request by [`session_layer`].
#[derive(Debug, Clone)]
pub struct SessionId(pub String);

#[derive(Deserialize)]
struct SessionQuery {
    session: Option<String>,
}

/// Resolves the session from the `x-genquery-session` header or `session`
/// query parameter, minting a fresh id when neither is present, and echoes
/// it on the response.
async fn session_layer(mut request: Request, next: Next) -> Result<Response, ApiError> {
    let from_header = request
        .headers()
        .get(SESSION_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_owned);
    let from_query = Query::<SessionQuery>::try_from_uri(request.uri())
        .ok()
        .and_then(|q| q.0.session);
    let id = match from_header.or(from_query) {
        Some(id) => {
            validate_session_id(&id)?;
            id
        }
        None => format!("s-{}", uuid::Uuid::new_v4().simple()),
    };
    request.extensions_mut().insert(SessionId(id.clone()));
    let mut response = next.run(request).await;
    if let Ok(value) = HeaderValue::from_str(&id) {
        response.headers_mut().insert(SESSION_HEADER, value);
    }
    Ok(response)
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/search", get(search))
        .route("/similar", get(similar))
        .route("/more", get(more))
        .route("/suggest", get(suggest))
        .route("/suggest/accept", post(accept_suggestion))
        .route("/segments", get(segments))
        .route("/mask", post(mask))
        .route("/generate/reference", post(generate_reference))
        .route("/generate/keywords", post(generate_keywords))
        .route("/keywords", get(keywords))
        .route("/save", post(save).delete(unsave))
        .route("/session/report", get(report))
        .route("/session/events", get(events))
        .route("/images/{id}", get(image_file))
        .layer(middleware::from_fn(session_layer))
        .with_state(state)
}

/// Runs blocking core work off the async executor.
async fn blocking<T, F>(state: &Shared, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&AppState) -> Result<T, ApiError> + Send + 'static,
{
    let state = state.clone();
    tokio::task::spawn_blocking(move || f(&state))
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

#[derive(Debug, Serialize)]
pub struct ImageHit {
    pub image_id: String,
    pub score: f64,
    pub description: String,
    pub source: ImageSource,
    pub uri: String,
}

#[derive(Debug, Serialize)]
pub struct PageResponse {
    pub query_token: QueryToken,
    pub offset: usize,
    pub exhausted: bool,
    pub items: Vec<ImageHit>,
}

fn hits(state: &AppState, items: &[ScoredImage]) -> Vec<ImageHit> {
    items
        .iter()
        .map(|s| {
            let record = state.corpus.get_image(&s.image_id).ok();
            ImageHit {
                image_id: s.image_id.clone(),
                score: s.score,
                description: record
                    .as_ref()
                    .map(|r| r.description.clone())
                    .unwrap_or_default(),
                source: record.map_or(ImageSource::Corpus, |r| r.source),
                uri: format!("/images/{}", s.image_id),
            }
        })
        .collect()
}

fn page_response(state: &AppState, page: &ResultPage) -> PageResponse {
    PageResponse {
        query_token: page.query_token.clone(),
        offset: page.offset,
        exhausted: page.exhausted,
        items: hits(state, &page.items),
    }
}

fn page_ids(page: &ResultPage) -> Vec<String> {
    page.items.iter().map(|s| s.image_id.clone()).collect()
}

async fn health(State(state): State<Shared>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "images": state.corpus.len(),
        "dimension": state.corpus.dimension(),
    }))
}

#[derive(Deserialize)]
struct SearchParams {
    q: String,
    #[serde(default)]
    offset: usize,
    k: Option<usize>,
}

async fn search(
    State(state): State<Shared>,
    Extension(SessionId(session)): Extension<SessionId>,
    Query(params): Query<SearchParams>,
) -> ApiResult<PageResponse> {
    let query = params.q.trim().to_owned();
    if query.is_empty() {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "empty_query",
            "query is empty",
        ));
    }
    blocking(&state, move |s| {
        let k = params.k.unwrap_or(s.config.page_size);
        let page = s.search.search_text(&query, k, params.offset)?;
        s.sessions.record_event(
            &session,
            EventKind::TextSearch {
                query,
                query_token: Some(page.query_token.to_string()),
                results: page_ids(&page),
            },
        )?;
        Ok(Json(page_response(s, &page)))
    })
    .await
}

#[derive(Deserialize)]
struct SimilarParams {
    image_id: String,
    #[serde(default)]
    offset: usize,
    k: Option<usize>,
}

async fn similar(
    State(state): State<Shared>,
    Extension(SessionId(session)): Extension<SessionId>,
    Query(params): Query<SimilarParams>,
) -> ApiResult<PageResponse> {
    blocking(&state, move |s| {
        let record = s.corpus.get_image(&params.image_id)?;
        let k = params.k.unwrap_or(s.config.page_size);
        let page = s.search.search_image(&record.id, k, params.offset)?;
        s.sessions.record_event(
            &session,
            EventKind::ImageSearch {
                image_id: record.id.clone(),
                image_source: record.source,
                query_token: Some(page.query_token.to_string()),
                results: page_ids(&page),
            },
        )?;
        Ok(Json(page_response(s, &page)))
    })
    .await
}

#[derive(Deserialize)]
struct MoreParams {
    token: String,
    k: Option<usize>,
}

async fn more(
    State(state): State<Shared>,
    Extension(SessionId(session)): Extension<SessionId>,
    Query(params): Query<MoreParams>,
) -> ApiResult<PageResponse> {
    blocking(&state, move |s| {
        let k = params.k.unwrap_or(s.config.page_size);
        let token = QueryToken::from(params.token);
        let page = s.search.next_page(&token, k)?;
        s.sessions.record_event(
            &session,
            EventKind::ShowMore {
                query_token: token.to_string(),
                results: page_ids(&page),
            },
        )?;
        Ok(Json(page_response(s, &page)))
    })
    .await
}

#[derive(Debug, Serialize)]
pub struct SuggestionView {
    pub query: String,
    pub explanation: String,
    pub previews: Vec<ImageHit>,
}

#[derive(Debug, Serialize)]
pub struct SuggestResponse {
    pub original_query: String,
    pub explanation: String,
    pub non_conforming: bool,
    pub suggestions: Vec<SuggestionView>,
}

fn suggest_response(state: &AppState, batch: ConcretizeBatch) -> SuggestResponse {
    SuggestResponse {
        suggestions: batch
            .suggestions
            .into_iter()
            .map(|s| SuggestionView {
                previews: hits(state, &s.previews),
                query: s.query,
                explanation: s.explanation,
            })
            .collect(),
        original_query: batch.original_query,
        explanation: batch.explanation,
        non_conforming: batch.non_conforming,
    }
}

#[derive(Deserialize)]
struct SuggestParams {
    q: String,
}

/// Concretized suggestions for `q`. With a debounce delay configured, a
/// request overtaken by a newer one from the same session answers 204 and
/// logs nothing.
async fn suggest(
    State(state): State<Shared>,
    Extension(SessionId(session)): Extension<SessionId>,
    Query(params): Query<SuggestParams>,
) -> Result<Response, ApiError> {
    let delay = state.config.debounce_ms;
    if delay > 0 {
        let ticket = state.debouncer.begin(&session);
        tokio::time::sleep(Duration::from_millis(delay)).await;
        if !state.debouncer.is_current(&session, ticket) {
            return Ok(StatusCode::NO_CONTENT.into_response());
        }
    }
    let response = blocking(&state, move |s| {
        let batch = s.concretizer.concretize(&params.q, &s.search)?;
        s.sessions.record_event(
            &session,
            EventKind::ConcretizeShown {
                query: batch.original_query.clone(),
            },
        )?;
        Ok(suggest_response(s, batch))
    })
    .await?;
    Ok(Json(response).into_response())
}

#[derive(Deserialize)]
struct AcceptBody {
    query: String,
}

async fn accept_suggestion(
    State(state): State<Shared>,
    Extension(SessionId(session)): Extension<SessionId>,
    Json(body): Json<AcceptBody>,
) -> ApiResult<serde_json::Value> {
    let query = body.query.trim().to_owned();
    if query.is_empty() {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "empty_query",
            "query is empty",
        ));
    }
    blocking(&state, move |s| {
        let seq = s
            .sessions
            .record_event(&session, EventKind::ConcretizeAccepted { query })?;
        Ok(Json(json!({ "seq": seq })))
    })
    .await
}

#[derive(Deserialize)]
struct ImageParams {
    image_id: String,
}

async fn segments(
    State(state): State<Shared>,
    Query(params): Query<ImageParams>,
) -> ApiResult<SegmentMap> {
    blocking(&state, move |s| {
        Ok(Json((*s.modifier.segment(&params.image_id)?).clone()))
    })
    .await
}

#[derive(Deserialize)]
struct MaskBody {
    image_id: String,
    segment_ids: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct MaskResponse {
    pub mask_id: String,
    pub image_id: String,
    pub selected_segment_ids: BTreeSet<String>,
    pub area: u32,
    pub mask: BinaryMask,
}

async fn mask(State(state): State<Shared>, Json(body): Json<MaskBody>) -> ApiResult<MaskResponse> {
    blocking(&state, move |s| {
        let spec = s
            .modifier
            .assemble_mask(&body.image_id, &body.segment_ids)?;
        Ok(Json(MaskResponse {
            mask_id: spec.mask_id.clone(),
            image_id: spec.image_id.clone(),
            selected_segment_ids: spec.selected_segment_ids.clone(),
            area: spec.mask.area(),
            mask: spec.mask.clone(),
        }))
    })
    .await
}

#[derive(Debug, Serialize)]
pub struct ImageView {
    pub image_id: String,
    pub description: String,
    pub source: ImageSource,
    pub width: u32,
    pub height: u32,
    pub uri: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provenance: Option<GenerationProvenance>,
}

impl From<&ImageRecord> for ImageView {
    fn from(r: &ImageRecord) -> Self {
        Self {
            image_id: r.id.clone(),
            description: r.description.clone(),
            source: r.source,
            width: r.width,
            height: r.height,
            uri: format!("/images/{}", r.id),
            provenance: r.provenance.clone(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct GenerateResponse {
    pub image: ImageView,
    pub elapsed_ms: u64,
}

fn record_modify(
    state: &AppState,
    session: &str,
    mode: GenerationMode,
    result: &GenerationResult,
) -> Result<(), ApiError> {
    state.sessions.record_event(
        session,
        EventKind::Modify {
            mode,
            image_id: result.provenance.parent_image_id.clone(),
            result_id: result.image.id.clone(),
        },
    )?;
    Ok(())
}

#[derive(Deserialize)]
struct ReferenceBody {
    image_id: String,
    mask_id: String,
    reference_image_id: String,
}

async fn generate_reference(
    State(state): State<Shared>,
    Extension(SessionId(session)): Extension<SessionId>,
    Json(body): Json<ReferenceBody>,
) -> ApiResult<GenerateResponse> {
    blocking(&state, move |s| {
        let result = s.modifier.generate_by_reference(
            &body.image_id,
            &body.mask_id,
            &body.reference_image_id,
        )?;
        record_modify(s, &session, GenerationMode::Reference, &result)?;
        Ok(Json(GenerateResponse {
            image: (&result.image).into(),
            elapsed_ms: result.elapsed.as_millis() as u64,
        }))
    })
    .await
}

#[derive(Deserialize)]
struct KeywordsBody {
    image_id: String,
    mask_id: String,
    keywords: Vec<String>,
}

async fn generate_keywords(
    State(state): State<Shared>,
    Extension(SessionId(session)): Extension<SessionId>,
    Json(body): Json<KeywordsBody>,
) -> ApiResult<GenerateResponse> {
    blocking(&state, move |s| {
        let result =
            s.modifier
                .generate_by_keywords(&body.image_id, &body.mask_id, &body.keywords)?;
        record_modify(s, &session, GenerationMode::Keywords, &result)?;
        Ok(Json(GenerateResponse {
            image: (&result.image).into(),
            elapsed_ms: result.elapsed.as_millis() as u64,
        }))
    })
    .await
}

#[derive(Debug, Serialize)]
pub struct KeywordsResponse {
    #[serde(flatten)]
    pub suggestion: KeywordSuggestion,
    pub context: ContextBundle,
}

fn session_events(state: &AppState, session: &str) -> Result<Vec<SessionEvent>, ApiError> {
    match state.sessions.events(session) {
        Ok(events) => Ok(events),
        Err(SessionError::UnknownSession(_)) => Ok(Vec::new()),
        Err(e) => Err(e.into()),
    }
}

/// Keyword suggestions for `image_id`. A session without history gets an
/// empty context rather than an error.
async fn keywords(
    State(state): State<Shared>,
    Extension(SessionId(session)): Extension<SessionId>,
    Query(params): Query<ImageParams>,
) -> ApiResult<KeywordsResponse> {
    blocking(&state, move |s| {
        let events = session_events(s, &session)?;
        let context = context_from_events(&events, &s.corpus, &params.image_id)?;
        let suggestion = s.keywords.suggest_keywords(&context)?;
        Ok(Json(KeywordsResponse {
            suggestion,
            context,
        }))
    })
    .await
}

#[derive(Deserialize)]
struct OptionalImage {
    image_id: Option<String>,
}

/// `image_id` from the query string or a JSON body.
fn image_ref(query: OptionalImage, body: &Bytes) -> Result<String, ApiError> {
    if let Some(id) = query.image_id {
        return Ok(id);
    }
    if body.is_empty() {
        return Err(ApiError::bad_request("image_id is required"));
    }
    let parsed: ImageParams = serde_json::from_slice(body)
        .map_err(|e| ApiError::bad_request(format!("invalid body: {e}")))?;
    Ok(parsed.image_id)
}

async fn save(
    State(state): State<Shared>,
    Extension(SessionId(session)): Extension<SessionId>,
    Query(query): Query<OptionalImage>,
    body: Bytes,
) -> ApiResult<serde_json::Value> {
    let image_id = image_ref(query, &body)?;
    blocking(&state, move |s| {
        s.corpus.get_image(&image_id)?;
        let seq = s
            .sessions
            .record_event(&session, EventKind::Save { image_id })?;
        Ok(Json(json!({ "seq": seq })))
    })
    .await
}

async fn unsave(
    State(state): State<Shared>,
    Extension(SessionId(session)): Extension<SessionId>,
    Query(query): Query<OptionalImage>,
    body: Bytes,
) -> ApiResult<serde_json::Value> {
    let image_id = image_ref(query, &body)?;
    blocking(&state, move |s| {
        s.corpus.get_image(&image_id)?;
        let seq = s
            .sessions
            .record_event(&session, EventKind::Unsave { image_id })?;
        Ok(Json(json!({ "seq": seq })))
    })
    .await
}

#[derive(Debug, Serialize)]
pub struct ReportResponse {
    pub session_id: String,
    #[serde(flatten)]
    pub report: PatternReport,
}

async fn report(
    State(state): State<Shared>,
    Extension(SessionId(session)): Extension<SessionId>,
) -> ApiResult<ReportResponse> {
    blocking(&state, move |s| {
        let report = s.sessions.pattern_report(&session)?;
        Ok(Json(ReportResponse {
            session_id: session,
            report,
        }))
    })
    .await
}

async fn events(
    State(state): State<Shared>,
    Extension(SessionId(session)): Extension<SessionId>,
) -> ApiResult<Vec<SessionEvent>> {
    blocking(&state, move |s| Ok(Json(s.sessions.events(&session)?))).await
}

async fn image_file(
    State(state): State<Shared>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    blocking(&state, move |s| {
        let record = s.corpus.get_image(&id)?;
        let path = s.corpus.resolve_path(&record);
        let bytes = std::fs::read(&path).map_err(|e| {
            ApiError::new(
                StatusCode::NOT_FOUND,
                "pixels_unavailable",
                format!("{}: {e}", path.display()),
            )
        })?;
        let mime = match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("png") => "image/png",
            Some("jpg" | "jpeg") => "image/jpeg",
            _ => "application/octet-stream",
        };
        Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
    })
    .await
}
