//! Original-vs-augmented similarity metric and qualitative comparison grids.

pub mod font;
pub mod grid;
pub mod similarity;

pub use grid::{render_grid, GridColumn, GridLayout, TILE};
pub use similarity::{per_label_similarity, LabelSimilarity, RecordSimilarity, SimilarityReport};

use crate::backends::BackendError;
use crate::dataset::DatasetError;
use crate::imageio::ImageIoError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("record {record_id} has {found} augmented images, expected {expected}")]
    IncompleteGroup {
        record_id: String,
        found: usize,
        expected: usize,
    },
    #[error("no original image for record {0}")]
    MissingOriginal(String),
    #[error("method manifests share no record ids")]
    NoCommonRecords,
    #[error("{0}")]
    InvalidInput(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
