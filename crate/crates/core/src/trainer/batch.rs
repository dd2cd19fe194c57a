use std::collections::BTreeMap;

use crate::dataio::{DatasetRecord, EntityCatalogEntry, Stores};
use crate::error::{Error, Result};
use crate::graphstore::{sample_negatives, EntityId, KnowledgeGraph, Triple};
use crate::losses::{KeBundle, TripleRows};
use crate::rng::{self, stream};

use super::TrainConfig;

/// Everything a training run reads, resolved against one entity
/// vocabulary: the sorted union of catalog QIDs and graph entities. Entity
/// ids of `graph` are the rows of the entity table.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub graph: KnowledgeGraph,
    pub catalog: Vec<EntityCatalogEntry>,
    pub stores: Stores,
    pub dataset: Vec<DatasetRecord>,
    catalog_index: BTreeMap<String, usize>,
    entity_list: Vec<EntityId>,
}

impl TrainingData {
    /// Checks up front that every label is in the catalog and that every
    /// referenced embedding id resolves.
    pub fn new<S: AsRef<str>>(
        triples: &[(S, S, S)],
        catalog: Vec<EntityCatalogEntry>,
        stores: Stores,
        dataset: Vec<DatasetRecord>,
    ) -> Result<Self> {
        let graph = KnowledgeGraph::build_with_entities(catalog.iter().map(|e| e.qid.as_str()), triples);
        let catalog_index: BTreeMap<String, usize> =
            catalog.iter().enumerate().map(|(i, e)| (e.qid.clone(), i)).collect();
        for entry in &catalog {
            stores.entity_raws(entry)?;
        }
        for (i, record) in dataset.iter().enumerate() {
            stores.query_raws(record)?;
            let label = record
                .label
                .as_deref()
                .ok_or_else(|| Error::InvalidArgument(format!("training record {i} has no label")))?;
            if !catalog_index.contains_key(label) {
                return Err(Error::UnknownEntity(format!(
                    "{label} (label of record {i}) is not in the catalog"
                )));
            }
        }
        let entity_list = graph.entity_ids().collect();
        Ok(Self {
            graph,
            catalog,
            stores,
            dataset,
            catalog_index,
            entity_list,
        })
    }

    pub fn catalog_entry(&self, qid: &str) -> Result<&EntityCatalogEntry> {
        self.catalog_index
            .get(qid)
            .map(|&i| &self.catalog[i])
            .ok_or_else(|| Error::UnknownEntity(qid.to_owned()))
    }

    pub fn entity_names(&self) -> &[String] {
        self.graph.entity_names()
    }

    pub fn relation_names(&self) -> &[String] {
        self.graph.relation_names()
    }
}

/// One training batch. All per-record lists are index-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub input_image_raws: Vec<Vec<f64>>,
    pub input_text_raws: Vec<Vec<f64>>,
    /// Entity-table rows of the labels.
    pub labels: Vec<usize>,
    pub entity_text_raws: Vec<Vec<f64>>,
    /// Lead-image raws of each label; empty means the image encoding falls
    /// back to the text encoding.
    pub entity_lead_raws: Vec<Vec<Vec<f64>>>,
    pub ke: Vec<KeBundle>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn rows(t: &Triple) -> TripleRows {
    TripleRows {
        head: t.head.index(),
        relation: t.relation.index(),
        tail: t.tail.index(),
    }
}

/// Capped triples and per-triple negatives of `e`, drawn from streams keyed
/// by `(seed, epoch, e)` and `(seed, epoch, slot)`.
pub(crate) fn ke_bundle(
    graph: &KnowledgeGraph,
    entities: &[EntityId],
    e: EntityId,
    cfg: &TrainConfig,
    epoch: u64,
    slot: u64,
) -> Result<KeBundle> {
    let mut cap_rng = rng::derived(cfg.seed, &[stream::TRIPLE_CAP, epoch, e.0 as u64]);
    let positives = graph.entity_triples(e, cfg.triples_cap, &mut cap_rng)?;
    let mut neg_rng = rng::derived(cfg.seed, &[stream::NEGATIVES, epoch, slot]);
    let mut bundle = KeBundle::default();
    for pos in &positives {
        let negs = sample_negatives(entities, pos, cfg.negatives_per_entity, &mut neg_rng)?;
        bundle.positives.push(rows(pos));
        bundle.negatives.push(negs.iter().map(rows).collect());
    }
    Ok(bundle)
}

/// Assembles the batch for dataset `indices` in `epoch`. Deterministic in
/// `(cfg.seed, epoch, indices)`.
pub fn build_batch(data: &TrainingData, indices: &[usize], cfg: &TrainConfig, epoch: u64) -> Result<Batch> {
    let n = indices.len();
    let mut batch = Batch {
        input_image_raws: Vec::with_capacity(n),
        input_text_raws: Vec::with_capacity(n),
        labels: Vec::with_capacity(n),
        entity_text_raws: Vec::with_capacity(n),
        entity_lead_raws: Vec::with_capacity(n),
        ke: Vec::with_capacity(n),
    };
    for &i in indices {
        let record = data.dataset.get(i).ok_or_else(|| {
            Error::InvalidArgument(format!("dataset index {i} out of range ({})", data.dataset.len()))
        })?;
        let (img, txt) = data.stores.query_raws(record)?;
        let label = record.label();
        let entry = data.catalog_entry(label)?;
        let e = data.graph.resolve_entity(label)?;
        let (text_raw, lead_raws) = data.stores.entity_raws(entry)?;
        batch.input_image_raws.push(img);
        batch.input_text_raws.push(txt);
        batch.labels.push(e.index());
        batch.entity_text_raws.push(text_raw);
        batch.entity_lead_raws.push(lead_raws);
        batch
            .ke
            .push(ke_bundle(&data.graph, &data.entity_list, e, cfg, epoch, i as u64)?);
    }
    Ok(batch)
}
