use serde::{Deserialize, Serialize};

use crate::Document;

pub const DEFAULT_ROUTE_BOUNDARY: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    DirectToLabeling,
    SummarizeFirst,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub document_id: String,
    pub route: Route,
    pub word_count: usize,
}

/// Texts shorter than `boundary` words go straight to labeling; the rest are
/// summarized first.
pub fn route_with_boundary(doc: &Document, boundary: usize) -> RouteDecision {
    let route = if doc.word_count < boundary {
        Route::DirectToLabeling
    } else {
        Route::SummarizeFirst
    };
    RouteDecision {
        document_id: doc.id.clone(),
        route,
        word_count: doc.word_count,
    }
}

pub fn route(doc: &Document) -> RouteDecision {
    route_with_boundary(doc, DEFAULT_ROUTE_BOUNDARY)
}
