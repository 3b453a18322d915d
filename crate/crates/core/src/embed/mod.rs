//! Factor levels: selected features grouped into categories, each category
//! embedded to one dimension with exact t-SNE, and summarised per cluster.

mod category;
mod factors;
mod tsne;

use thiserror::Error;

pub use category::{category_slug, load_category_map, parse_category_map, CategoryMap, CATEGORIES, DEFAULT_CATEGORY_MAP};
pub use factors::{embed_all, factor_report, FactorEmbedding, FactorReport, FactorSummary, LEVEL_CAVEAT};
pub use tsne::{joint_probabilities, kl_divergence, tsne_1d, tsne_1d_with_init, TsneOptions, TsneResult};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("cannot read category map {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed category map: {0}")]
    Json(#[from] serde_json::Error),
    #[error("feature {feature} is assigned to both {first} and {second}")]
    DuplicateAssignment {
        feature: String,
        first: String,
        second: String,
    },
    #[error("unknown category {0}")]
    UnknownCategory(String),
    #[error("perplexity {perplexity} too large for {units} units (need 3 * perplexity < units)")]
    PerplexityTooLarge { perplexity: f64, units: usize },
    #[error("need at least 2 units to embed")]
    SingleUnit,
    #[error("category has no features")]
    NoFeatures,
    #[error("initial coordinates have length {got}, expected {expected}")]
    InitLength { expected: usize, got: usize },
    #[error("embeddings and cluster model cover different units")]
    UnitMismatch,
    #[error(transparent)]
    Select(#[from] crate::select::SelectError),
}

pub type Result<T> = std::result::Result<T, EmbedError>;
