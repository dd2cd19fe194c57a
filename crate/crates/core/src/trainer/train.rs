use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataio::{Checkpoint, CheckpointMeta};
use crate::encoders::{init_tables, EmbeddingTable, ModelParams};
use crate::error::{Error, Result};
use crate::graphstore::{EntityId, KnowledgeGraph};
use crate::losses::{ke_loss, TableGrad};
use crate::rng::{self, stream};

use super::batch::ke_bundle;
use super::optim::adamw_tables;
use super::{adamw_step, build_batch, forward_backward, lr_at_step, OptimizerState, TrainConfig, TrainingData};

/// One line of the loss log: batch-averaged loss terms of an epoch and the
/// learning rate of its last step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub alignment: f64,
    pub proxy: f64,
    pub ke: f64,
    pub total: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

fn shuffled(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::derived(seed, &[stream::SHUFFLE, epoch]));
    order
}

/// Runs the full training loop. `on_epoch` sees each log line as soon as
/// its epoch finishes. Single-threaded and a pure function of `cfg` and
/// `data`.
pub fn train(cfg: &TrainConfig, data: &TrainingData, mut on_epoch: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let meta = CheckpointMeta {
        config: cfg.clone(),
        image_dim: data.stores.image.dim(),
        text_dim: data.stores.text.dim(),
        entities: data.entity_names().to_vec(),
        relations: data.relation_names().to_vec(),
        data: None,
    };
    let mut params = ModelParams::<f32>::init(&meta.shape(), cfg.seed)?;
    let mut opt = OptimizerState::new(&params);
    let n = data.dataset.len();
    if n == 0 && cfg.epochs > 0 {
        return Err(Error::InvalidArgument("training dataset is empty".into()));
    }
    let loss_cfg = cfg.loss_config();
    let steps_per_epoch = n.div_ceil(cfg.batch_size) as u64;
    let total_steps = steps_per_epoch * cfg.epochs as u64;

    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs as u64 {
        let order = shuffled(n, cfg.seed, epoch);
        let mut sums = [0.0; 3];
        let mut lr = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = build_batch(data, chunk, cfg, epoch)?;
            lr = lr_at_step(opt.step, total_steps, cfg.base_lr);
            let (loss, grads) = forward_backward(&params, &batch, &loss_cfg)?;
            adamw_step(
                &mut params,
                &grads,
                &mut opt,
                lr,
                cfg.weight_decay,
                cfg.decay_embeddings,
            )?;
            sums[0] += loss.alignment;
            sums[1] += loss.proxy;
            sums[2] += loss.ke;
        }
        let k = steps_per_epoch as f64;
        let (alignment, proxy, ke) = (sums[0] / k, sums[1] / k, sums[2] / k);
        let line = EpochLog {
            epoch: epoch as usize + 1,
            alignment,
            proxy,
            ke,
            total: crate::losses::total_loss(alignment, proxy, ke, cfg.beta1, cfg.beta2),
            lr,
        };
        on_epoch(&line);
        log.push(line);
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            meta,
            params,
            optimizer: opt,
        },
        log,
    })
}

#[derive(Debug, Clone)]
pub struct KeOnlyOutcome {
    pub tables: EmbeddingTable<f32>,
    /// Batch-averaged knowledge-embedding loss per epoch.
    pub losses: Vec<f64>,
}

/// Trains the entity/relation tables on the graph alone, with only the
/// knowledge-embedding loss. Batches are groups of `cfg.batch_size`
/// entities that have at least one triple.
pub fn train_knowledge_embeddings(graph: &KnowledgeGraph, cfg: &TrainConfig) -> Result<KeOnlyOutcome> {
    cfg.validate()?;
    let mut tables: EmbeddingTable<f32> = init_tables(
        graph.num_entities(),
        graph.num_relations(),
        cfg.d_e,
        cfg.kge_method,
        cfg.seed,
    )?;
    let zeros = |t: &EmbeddingTable<f32>| {
        let mut z = t.clone();
        z.entity.data.fill(0.0);
        z.relation.data.fill(0.0);
        if let Some(n) = &mut z.normals {
            n.data.fill(0.0);
        }
        z
    };
    let (mut first, mut second) = (zeros(&tables), zeros(&tables));
    let all: Vec<EntityId> = graph.entity_ids().collect();
    let active: Vec<EntityId> = all
        .iter()
        .copied()
        .filter(|&e| graph.adjacent(e).map(|mut a| a.next().is_some()).unwrap_or(false))
        .collect();
    if active.is_empty() {
        return Err(Error::InvalidArgument("graph has no triples".into()));
    }
    let loss_cfg = cfg.loss_config();
    let steps_per_epoch = active.len().div_ceil(cfg.batch_size) as u64;
    let total_steps = steps_per_epoch * cfg.epochs as u64;
    let mut step = 0u64;
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs as u64 {
        let order = shuffled(active.len(), cfg.seed, epoch);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let bundles = chunk
                .iter()
                .map(|&i| ke_bundle(graph, &all, active[i], cfg, epoch, active[i].0 as u64))
                .collect::<Result<Vec<_>>>()?;
            let mut grads = TableGrad::default();
            let loss = ke_loss(&bundles, &tables, &loss_cfg, Some((&mut grads, 1.0)))?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss("ke"));
            }
            let lr = lr_at_step(step, total_steps, cfg.base_lr);
            step += 1;
            adamw_tables(&mut tables, &mut first, &mut second, &grads, step, lr, cfg.weight_decay)?;
            sum += loss;
        }
        losses.push(sum / steps_per_epoch as f64);
    }
    Ok(KeOnlyOutcome { tables, losses })
}
