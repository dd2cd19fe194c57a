#![allow(dead_code)]

use knowcol::encoders::{project, FusionKind, ModelParams, ModelShape};
use knowcol::losses::{score_triple, KeBundle, KgeMethod, LossConfig, TripleRows};
use knowcol::rng::seeded;
use knowcol::trainer::forward_loss;
use knowcol::trainer::Batch;
use rand::Rng;

pub const IMAGE_DIM: usize = 6;
pub const TEXT_DIM: usize = 5;
pub const D_E: usize = 8;
pub const N_ENTITIES: usize = 9;
pub const N_RELATIONS: usize = 3;

fn vector<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Distance from the nearest non-differentiable point: ReLU
/// pre-activations of the fusion MLP and margin-loss hinge arguments.
pub fn kink_distance(params: &ModelParams<f64>, batch: &Batch, cfg: &LossConfig) -> f64 {
    let mut d = f64::INFINITY;
    if !params.fusion.layers.is_empty() {
        for (img, txt) in batch.input_image_raws.iter().zip(&batch.input_text_raws) {
            let p = project(img, &params.lp_img).unwrap();
            let q = project(txt, &params.lp_txt).unwrap();
            let mut x: Vec<f64> = p.into_iter().chain(q).collect();
            for layer in &params.fusion.layers {
                let pre = layer.affine(&x).unwrap();
                d = pre.iter().fold(d, |m, v| m.min(v.abs()));
                x = pre.iter().map(|v| v.max(0.0)).collect();
            }
        }
    }
    if cfg.kge_method == KgeMethod::TranseEuclid {
        let t = &params.tables;
        let dist = |r: &TripleRows| {
            score_triple(
                KgeMethod::TranseEuclid,
                &t.entity.row_f64(r.head),
                &t.relation.row_f64(r.relation),
                &t.entity.row_f64(r.tail),
                None,
            )
            .unwrap()
        };
        for bundle in &batch.ke {
            for (pos, negs) in bundle.positives.iter().zip(&bundle.negatives) {
                let dp = dist(pos);
                for n in negs {
                    d = d.min((cfg.margin + dp - dist(n)).abs());
                }
            }
        }
    }
    d
}

/// Largest logit spread of any KE softmax row. A wide spread leaves the
/// weakest negatives with gradients near the round-off floor of a central
/// difference.
pub fn ke_logit_spread(params: &ModelParams<f64>, batch: &Batch, cfg: &LossConfig) -> f64 {
    let spread = |xs: &[f64]| {
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    };
    let mut worst: f64 = 0.0;
    if !cfg.kge_method.is_distance() {
        let t = &params.tables;
        let score = |r: &TripleRows| {
            let w = t.normals.as_ref().map(|m| m.row_f64(r.relation));
            score_triple(
                cfg.kge_method,
                &t.entity.row_f64(r.head),
                &t.relation.row_f64(r.relation),
                &t.entity.row_f64(r.tail),
                w.as_deref(),
            )
            .unwrap()
        };
        for bundle in &batch.ke {
            for (pos, negs) in bundle.positives.iter().zip(&bundle.negatives) {
                let mut logits: Vec<f64> = negs.iter().map(score).collect();
                logits.push(score(pos));
                worst = worst.max(spread(&logits));
            }
        }
    }
    worst / cfg.tau
}

pub const MAX_LOGIT_SPREAD: f64 = 12.0;

/// Seeded instance that is smooth within `KINK_MARGIN` of every ReLU and
/// hinge, so central differences are meaningful. Rejected draws move on to
/// the next sub-seed.
pub fn smooth_instance(
    method: KgeMethod,
    fusion: FusionKind,
    mlp_layers: usize,
    seed: u64,
    cfg: &LossConfig,
) -> (ModelParams<f64>, Batch) {
    for attempt in 0.. {
        let sub = seed.wrapping_mul(1_000_003).wrapping_add(attempt);
        let (p, b) = random_instance(method, fusion, mlp_layers, sub);
        if forward_loss(&p, &b, cfg).is_ok()
            && kink_distance(&p, &b, cfg) > KINK_MARGIN
            && ke_logit_spread(&p, &b, cfg) < MAX_LOGIT_SPREAD
        {
            return (p, b);
        }
    }
    unreachable!()
}

pub const KINK_MARGIN: f64 = 1e-2;

/// Initial tables and layers are small; every cosine term is scale
/// invariant, so scaling them up only flattens the loss surface.
pub const TABLE_SCALE: f64 = 3.0;
pub const WEIGHT_SCALE: f64 = 10.0;

/// Small random parameters and batch: 4 records, up to 2 lead images per
/// label, 2 triples per label with 3 negatives each.
pub fn random_instance(
    method: KgeMethod,
    fusion: FusionKind,
    mlp_layers: usize,
    seed: u64,
) -> (ModelParams<f64>, Batch) {
    let shape = ModelShape {
        image_dim: IMAGE_DIM,
        text_dim: TEXT_DIM,
        d_e: D_E,
        n_entities: N_ENTITIES,
        n_relations: N_RELATIONS,
        fusion,
        mlp_layers,
        kge_method: method,
    };
    let mut params = ModelParams::<f64>::init(&shape, seed).unwrap();
    let mut rng = seeded(seed ^ 0x5eed);
    // DistMult keeps its scores fixed: relations shrink by the square.
    let relation_scale = match method {
        KgeMethod::Distmult => 1.0 / (TABLE_SCALE * TABLE_SCALE),
        _ => TABLE_SCALE,
    };
    params.tables.entity.data.iter_mut().for_each(|x| *x *= TABLE_SCALE);
    params
        .tables
        .relation
        .data
        .iter_mut()
        .for_each(|x| *x *= relation_scale);
    let layers = std::iter::once(&mut params.lp_img)
        .chain(std::iter::once(&mut params.lp_txt))
        .chain(params.fusion.layers.iter_mut());
    for l in layers {
        for x in l.weight.data.iter_mut().chain(l.bias.iter_mut()) {
            *x *= WEIGHT_SCALE;
        }
    }
    let n = 4;
    let mut batch = Batch {
        input_image_raws: Vec::new(),
        input_text_raws: Vec::new(),
        labels: Vec::new(),
        entity_text_raws: Vec::new(),
        entity_lead_raws: Vec::new(),
        ke: Vec::new(),
    };
    let triple = |rng: &mut rand_chacha::ChaCha8Rng, e: usize| {
        let other = rng.random_range(0..N_ENTITIES);
        let r = rng.random_range(0..N_RELATIONS);
        if rng.random_bool(0.5) {
            TripleRows {
                head: e,
                relation: r,
                tail: other,
            }
        } else {
            TripleRows {
                head: other,
                relation: r,
                tail: e,
            }
        }
    };
    for i in 0..n {
        let label = (i * 2 + seed as usize) % N_ENTITIES;
        batch.input_image_raws.push(vector(IMAGE_DIM, &mut rng));
        batch.input_text_raws.push(vector(TEXT_DIM, &mut rng));
        batch.labels.push(label);
        batch.entity_text_raws.push(vector(TEXT_DIM, &mut rng));
        let leads = rng.random_range(0..3);
        batch
            .entity_lead_raws
            .push((0..leads).map(|_| vector(IMAGE_DIM, &mut rng)).collect());
        let mut bundle = KeBundle::default();
        for _ in 0..2 {
            let pos = triple(&mut rng, label);
            let negs = (0..3)
                .map(|_| {
                    let mut t = pos;
                    if rng.random_bool(0.5) {
                        t.head = rng.random_range(0..N_ENTITIES);
                    } else {
                        t.tail = rng.random_range(0..N_ENTITIES);
                    }
                    t
                })
                .collect();
            bundle.positives.push(pos);
            bundle.negatives.push(negs);
        }
        batch.ke.push(bundle);
    }
    (params, batch)
}

pub fn loss_config(method: KgeMethod, positive_in_denominator: bool) -> LossConfig {
    LossConfig {
        kge_method: method,
        include_positive_in_denominator: positive_in_denominator,
        ..LossConfig::default()
    }
}

pub const METHODS: [KgeMethod; 4] = [
    KgeMethod::TranseCos,
    KgeMethod::TranseEuclid,
    KgeMethod::Transh,
    KgeMethod::Distmult,
];

pub const FUSIONS: [(FusionKind, usize); 3] = [
    (FusionKind::Addition, 1),
    (FusionKind::ConcatMlp, 1),
    (FusionKind::ConcatMlp, 2),
];
