//! Command handlers and the HTTP service behind the `infersim` binary.
//!
//! Every command returns its full stdout text so the CLI, the HTTP routes and
//! the tests share one rendering path.

use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::State;
use axum::http::{header, Method, StatusCode};
use axum::response::Response;
use axum::routing::{get, post};
use axum::Router;
use clap::ValueEnum;
use serde_json::json;
use thiserror::Error;
use tower_http::cors::{Any, CorsLayer};

use infersim_core::hardware::{Catalog, CatalogError};
use infersim_core::price_trends::{self, PriceError};
use infersim_core::scenario::{self, ScenarioConfig, ScenarioError, SweepAxis, TOOL_VERSION};

/// Environment variable naming the default catalog file.
pub const CATALOG_ENV: &str = "INFERSIM_CATALOG";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read `{path}`: {reason}")]
    Io { path: String, reason: String },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Price(#[from] PriceError),
    #[error("invalid window `{0}`, expected START,END")]
    Window(String),
}

impl CliError {
    /// 3 for unsatisfiable scenarios, 2 for every other input error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Scenario(e) => e.exit_code(),
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Md,
    Csv,
}

pub fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Built-in catalog, overlaid with `path` when given.
pub fn load_catalog(path: Option<&Path>) -> Result<Catalog, CliError> {
    match path {
        Some(p) => Ok(Catalog::load(&read_file(p)?)?),
        None => Ok(Catalog::builtin()),
    }
}

pub fn estimate(config_text: &str, catalog: &Catalog, format: Format) -> Result<String, CliError> {
    let cfg = ScenarioConfig::parse(config_text)?;
    let report = scenario::estimate(&cfg, catalog)?;
    Ok(match format {
        Format::Json => scenario::report_json(&report),
        Format::Md => scenario::report_markdown(&report),
        Format::Csv => scenario::report_csv(&report),
    })
}

pub fn explore(config_text: &str, catalog: &Catalog, format: Format) -> Result<String, CliError> {
    let cfg = ScenarioConfig::parse(config_text)?;
    let points = scenario::resolve(&cfg, catalog)?.explore()?;
    Ok(match format {
        Format::Csv => scenario::pareto_csv(&points),
        _ => scenario::pareto_json(&points),
    })
}

pub fn sweep(config_text: &str, catalog: &Catalog, axis: &str) -> Result<String, CliError> {
    let cfg = ScenarioConfig::parse(config_text)?;
    let axis = SweepAxis::parse(axis)?;
    let rows = scenario::sweep(&cfg, catalog, &axis)?;
    Ok(scenario::sweep_csv(&axis, &rows))
}

pub fn parse_window(s: &str) -> Result<(f64, f64), CliError> {
    let bad = || CliError::Window(s.to_string());
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    let a: f64 = a.trim().parse().map_err(|_| bad())?;
    let b: f64 = b.trim().parse().map_err(|_| bad())?;
    if a.partial_cmp(&b) != Some(std::cmp::Ordering::Less) {
        return Err(bad());
    }
    Ok((a, b))
}

/// Fit plus the built-in HBM index check, as `key=value` lines.
pub fn fit_trend(csv_text: &str, window: (f64, f64), lenient: bool) -> Result<String, CliError> {
    let history = price_trends::ingest_price_history(csv_text, lenient)?;
    let fit = price_trends::fit_trend(&history.points, window)?;
    let hbm = price_trends::hbm_trend_check(&price_trends::builtin_hbm_index())?;
    let mut out = price_trends::format_kv(&fit);
    out.push_str(&format!(
        "skipped_rows={}\nhbm_index_ratio={:.6}\n",
        history.skipped.len(),
        hbm
    ));
    Ok(out)
}

pub fn catalog_list(catalog: &Catalog) -> String {
    scenario::catalog_json(catalog)
}

fn json_response(status: StatusCode, body: String) -> Response {
    Response::builder()
        .status(status)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body))
        .expect("static response parts")
}

fn error_response(e: CliError) -> Response {
    let (status, body) = match &e {
        CliError::Scenario(s @ ScenarioError::Unsatisfiable(_)) => {
            (StatusCode::UNPROCESSABLE_ENTITY, s.to_json())
        }
        CliError::Scenario(s) => (StatusCode::BAD_REQUEST, s.to_json()),
        other => (
            StatusCode::BAD_REQUEST,
            json!({"error": "config", "message": other.to_string()}),
        ),
    };
    json_response(status, format!("{}\n", body))
}

fn respond(result: Result<String, CliError>) -> Response {
    match result {
        Ok(body) => json_response(StatusCode::OK, body),
        Err(e) => error_response(e),
    }
}

async fn health() -> Response {
    let body = json!({"status": "ok", "version": TOOL_VERSION});
    json_response(StatusCode::OK, format!("{body}\n"))
}

async fn catalog_route(State(cat): State<Arc<Catalog>>) -> Response {
    json_response(StatusCode::OK, catalog_list(&cat))
}

// Evaluation is CPU-bound, so it runs off the async workers.
async fn blocking(
    cat: Arc<Catalog>,
    body: String,
    f: fn(&str, &Catalog, Format) -> Result<String, CliError>,
) -> Response {
    let result = tokio::task::spawn_blocking(move || f(&body, &cat, Format::Json)).await;
    match result {
        Ok(r) => respond(r),
        Err(e) => json_response(
            StatusCode::INTERNAL_SERVER_ERROR,
            format!(
                "{}\n",
                json!({"error": "internal", "message": e.to_string()})
            ),
        ),
    }
}

async fn estimate_route(State(cat): State<Arc<Catalog>>, body: String) -> Response {
    blocking(cat, body, estimate).await
}

async fn explore_route(State(cat): State<Arc<Catalog>>, body: String) -> Response {
    blocking(cat, body, explore).await
}

/// Stateless JSON API over a shared read-only catalog.
pub fn router(catalog: Arc<Catalog>) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/health", get(health))
        .route("/catalog", get(catalog_route))
        .route("/estimate", post(estimate_route))
        .route("/explore", post(explore_route))
        .layer(cors)
        .with_state(catalog)
}

pub async fn serve(port: u16, catalog: Catalog) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
    eprintln!("infersim listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(catalog))).await
}
