//! File formats and loaders: triple TSV, `KCLE` embedding stores, JSONL
//! catalogs and datasets, `KCCK` checkpoints, and the synthetic fixture
//! generator.

mod binary;
mod catalog;
mod checkpoint;
mod dataset;
mod store;
mod synth;
mod tsv;

pub use catalog::{load_catalog, save_catalog, EntityCatalogEntry, Split};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta,
};
pub use dataset::{load_dataset, save_dataset, DatasetRecord};
pub use store::{load_embedding_store, save_embedding_store, EmbeddingStore};
pub use synth::{synth_fixture, write_fixture, Fixture, FixtureFiles};
pub use tsv::{load_seeds, load_triples_tsv, write_triples_tsv, StringTriple};

use crate::error::Result;

/// The two raw-embedding stores: image-side (query images and lead
/// images) and text-side (query texts and entity descriptions).
#[derive(Debug, Clone, PartialEq)]
pub struct Stores {
    pub image: EmbeddingStore,
    pub text: EmbeddingStore,
}

impl Stores {
    /// Raw description embedding and lead-image embeddings of an entity.
    pub fn entity_raws(&self, entry: &EntityCatalogEntry) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let text = self.text.require_f64(&entry.description_embedding_id)?;
        let leads = entry
            .lead_image_embedding_ids
            .iter()
            .map(|id| self.image.require_f64(id))
            .collect::<Result<Vec<_>>>()?;
        Ok((text, leads))
    }

    /// Raw image and text-query embeddings of a dataset record.
    pub fn query_raws(&self, record: &DatasetRecord) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((
            self.image.require_f64(&record.image_embedding_id)?,
            self.text.require_f64(&record.text_query_embedding_id)?,
        ))
    }
}

/// Locations of the input files of a run.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub triples: std::path::PathBuf,
    pub catalog: std::path::PathBuf,
    pub image_store: std::path::PathBuf,
    pub text_store: std::path::PathBuf,
    pub train: std::path::PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<std::path::PathBuf>,
}
