//! Bipartite matching between predicted queries and target boxes, and the
//! set-prediction loss trained through it.

mod hungarian;
mod loss;

pub use hungarian::{hungarian, Assignment, CostMatrix};
pub use loss::{giou_grad, match_cost, set_loss, DetectionSet, LossWeights, SetLoss};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("non-finite cost at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("shape: {0}")]
    Shape(String),
    #[error("target box {index} outside [0, 1]: {value:?}")]
    BoxRange { index: usize, value: [f64; 4] },
    #[error("contract: {0}")]
    Contract(String),
}
