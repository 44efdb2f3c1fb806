use thiserror::Error;

use crate::index::IndexError;
use crate::langex::LangexError;
use crate::lm::LmError;
use crate::table::{RowId, TableError, TextColumnError};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    TextColumn(#[from] TextColumnError),
    #[error(transparent)]
    Langex(#[from] LangexError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error("unknown backend {0:?}")]
    UnknownBackend(String),
    #[error("no backend given and no default backend configured")]
    NoDefaultBackend,
    #[error("no embedder configured")]
    NoEmbedder,
    #[error("column {0:?} already exists")]
    NameCollision(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("call budget {budget} is infeasible: need at least {needed}")]
    BudgetInfeasible { budget: u64, needed: u64 },
    #[error("document at {row} renders to {chars} chars, capacity is {capacity}")]
    DocumentTooLong { row: RowId, chars: usize, capacity: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
