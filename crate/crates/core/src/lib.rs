//! Knowledge-guided contrastive learning for open-domain visual entity
//! recognition, over precomputed backbone embeddings.
//!
//! Query image and text embeddings are projected, fused and aligned with
//! node embeddings of a knowledge graph; entity descriptions and lead
//! images act as proxies, and a translation-style knowledge-embedding loss
//! shapes the node table. Retrieval scores queries against multimodal
//! entity encodings, so entities never seen in training remain reachable.

pub mod cli;
pub mod dataio;
pub mod encoders;
pub mod error;
pub mod graphstore;
pub mod inference;
pub mod linalg;
pub mod losses;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
