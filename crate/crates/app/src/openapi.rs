//! OpenAPI description served at `/spec`.

use serde_json::{json, Value};

use crate::SCHEMA_VERSION;

fn op(summary: &str, codes: &[&str]) -> Value {
    let responses: serde_json::Map<String, Value> =
        codes.iter().map(|c| (c.to_string(), json!({ "description": status_text(c) }))).collect();
    json!({ "summary": summary, "responses": responses })
}

fn status_text(code: &str) -> &'static str {
    match code {
        "200" => "OK",
        "201" => "Created",
        "202" => "Accepted; poll the job",
        "404" => "Unknown id",
        "409" => "Conflicting pin",
        _ => "Malformed request or config",
    }
}

pub fn document() -> Value {
    json!({
        "openapi": "3.0.3",
        "info": { "title": "cbm proposals", "version": env!("CARGO_PKG_VERSION") },
        "x-schema-version": SCHEMA_VERSION,
        "paths": {
            "/datasets": { "post": op("Upload a dataset ({dataset}) or generate one ({generate: {kind, config}})", &["201", "422"]) },
            "/datasets/{id}": { "get": op("Dataset summary and contents", &["200", "404"]) },
            "/jobs": { "post": op("Queue a sample, select, evaluate or conditional_sample job", &["202", "404", "422"]) },
            "/jobs/{id}": { "get": op("Job state, progress fraction and result artifact", &["200", "404"]) },
            "/proposals/{id}": { "get": op("Selected proposals with activations, best catalog match and 2-D boundary coefficients", &["200", "404"]) },
            "/sessions": { "post": op("Start an expert session on a dataset", &["201", "404", "422"]) },
            "/sessions/{id}": { "get": op("Session state", &["200", "404"]) },
            "/sessions/{id}/pin": { "post": op("Pin a concept column ({column, values | concept, label})", &["200", "404", "409", "422"]) },
            "/sessions/{id}/complete": { "post": op("Queue a conditional_sample job around the pinned column", &["202", "404", "422"]) },
            "/sessions/{id}/report": { "get": op("Coverage of every completion in the session", &["200", "404"]) },
            "/spec": { "get": op("This document", &["200"]) }
        }
    })
}
