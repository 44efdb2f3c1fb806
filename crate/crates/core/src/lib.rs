//! Relational operators whose predicates, orderings and reductions are
//! natural-language expressions evaluated by language models.

pub mod bench;
pub mod error;
pub mod index;
pub mod langex;
pub mod lm;
pub mod ops;
pub mod pipeline;
pub mod prompts;
pub mod session;
pub mod table;

pub use error::{Error, Result};
pub use index::{load_sem_index, sem_cluster_by, sem_index, sem_search, sem_sim_join, SearchOptions};
pub use langex::Langex;
pub use ops::agg::{sem_agg, sem_partition_by, AggConfig, AggPattern, Partitioner};
pub use ops::filter::{sem_filter, FilterOptions};
pub use ops::join::{sem_join, JoinConfig, JoinPattern, JoinType};
pub use ops::map::{sem_extract, sem_map, MapOptions};
pub use ops::topk::{compare_pair, sem_topk, Algorithm, PivotStrategy, TopkConfig};
pub use ops::{CascadeConfig, ModelChoice};
pub use session::{Session, SessionBuilder};
pub use table::{load_csv, read_csv, write_csv, Column, Kind, RowId, Schema, Table, Value};
