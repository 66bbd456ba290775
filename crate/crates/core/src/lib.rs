//! Corpus enrichment and retrieval evaluation.
pub mod adhoc;
pub mod attribution;
pub mod corpus;
pub mod dense;
pub mod enrichment;
pub mod faithfulness;
pub mod gateway;
pub mod index;
pub mod metrics;
pub mod porter;
pub mod prompts;
pub mod rag;
pub mod run;
pub mod segment;
pub mod synthetic;
pub mod text;

pub use corpus::{Corpus, Document, Method, Provenance, QueryRecord};
pub use gateway::{Gateway, GatewayConfig, GatewayError, MockSpec};
pub use run::{RankedList, ScoredDoc};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
