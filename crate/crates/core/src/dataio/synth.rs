//! Deterministic synthetic fixture for desk-scale runs.
//!
//! Entities `Q1..Qn` sit at well-separated unit vectors (orthonormal when
//! `n ≤ dim`). Every raw embedding tied to an entity (description, lead
//! images, query image, query text) is its vector plus Gaussian noise of
//! total norm about 0.1. A fifth of the entities (at least one) are unseen:
//! they have test records but no training records.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{save_catalog, save_dataset, save_embedding_store, write_triples_tsv};
use super::{DatasetRecord, EmbeddingStore, EntityCatalogEntry, Split, StringTriple};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;
use crate::trainer::TrainConfig;

pub const TRAIN_PER_ENTITY: usize = 4;
pub const TEST_PER_ENTITY: usize = 2;
const NOISE_NORM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub triples: Vec<StringTriple>,
    pub catalog: Vec<EntityCatalogEntry>,
    pub image_store: EmbeddingStore,
    pub text_store: EmbeddingStore,
    pub train: Vec<DatasetRecord>,
    pub test: Vec<DatasetRecord>,
    /// Training config sized for the fixture.
    pub config: TrainConfig,
}

/// Paths written by [`write_fixture`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureFiles {
    pub triples: PathBuf,
    pub catalog: PathBuf,
    pub image_store: PathBuf,
    pub text_store: PathBuf,
    pub train: PathBuf,
    pub test: PathBuf,
    pub config: PathBuf,
}

fn gaussian<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit_vectors<R: Rng>(n: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
    while out.len() < n {
        let mut v = gaussian(dim, rng);
        if n <= dim {
            for u in &out {
                let c = linalg::dot(&v, u);
                linalg::axpy(&mut v, -c, u);
            }
        }
        if let Ok((u, norm)) = linalg::normalize(&v, "fixture vector") {
            if norm > 1e-6 {
                out.push(u);
            }
        }
    }
    out
}

fn noisy<R: Rng>(base: &[f64], rng: &mut R) -> Vec<f32> {
    let sigma = NOISE_NORM / (base.len() as f64).sqrt();
    base.iter()
        .map(|&x| (x + sigma * rng.sample::<f64, _>(StandardNormal)) as f32)
        .collect()
}

/// Builds the fixture. Needs `n_entities ≥ 4` and `dim ≥ 4`.
pub fn synth_fixture(n_entities: usize, dim: usize, seed: u64) -> Result<Fixture> {
    if n_entities < 4 || dim < 4 {
        return Err(Error::InvalidArgument(format!(
            "synthetic fixture needs at least 4 entities and dim 4, got {n_entities} and {dim}"
        )));
    }
    let mut rng = rng::seeded(seed);
    let vectors = unit_vectors(n_entities, dim, &mut rng);
    let qid = |i: usize| format!("Q{}", i + 1);

    let n_unseen = (n_entities / 5).max(1);
    let mut order: Vec<usize> = (0..n_entities).collect();
    order.shuffle(&mut rng);
    let mut unseen = vec![false; n_entities];
    for &i in &order[..n_unseen] {
        unseen[i] = true;
    }

    // Chain Q(i+1) → Qi plus a two-level class hierarchy.
    let n_classes = (n_entities / 4).max(2);
    let class = |c: usize| format!("Q{}", n_entities + 1 + c);
    let root = format!("Q{}", n_entities + 1 + n_classes);
    let mut triples: Vec<StringTriple> = Vec::new();
    for i in 0..n_entities {
        triples.push((qid(i), "P31".into(), class(i % n_classes)));
        if i + 1 < n_entities {
            triples.push((qid(i + 1), "P155".into(), qid(i)));
        }
    }
    for c in 0..n_classes {
        triples.push((class(c), "P279".into(), root.clone()));
    }

    let mut image_store = EmbeddingStore::new(dim);
    let mut text_store = EmbeddingStore::new(dim);
    let mut catalog = Vec::with_capacity(n_entities);
    for (i, v) in vectors.iter().enumerate() {
        let q = qid(i);
        let text_id = format!("desc:{q}");
        text_store.insert(&text_id, &noisy(v, &mut rng))?;
        let mut leads = Vec::new();
        for j in 0..(i + 1) % 3 {
            let id = format!("lead:{q}:{j}");
            image_store.insert(&id, &noisy(v, &mut rng))?;
            leads.push(id);
        }
        catalog.push(EntityCatalogEntry {
            qid: q,
            description_embedding_id: text_id,
            lead_image_embedding_ids: leads,
            split: if unseen[i] { Split::Unseen } else { Split::Seen },
        });
    }

    let mut records =
        |tag: &str, per: usize, include_unseen: bool, rng: &mut rng::SeededRng| -> Result<Vec<DatasetRecord>> {
            let mut out = Vec::new();
            for (i, v) in vectors.iter().enumerate() {
                if unseen[i] && !include_unseen {
                    continue;
                }
                for j in 0..per {
                    let img = format!("{tag}:img:{}:{j}", qid(i));
                    let txt = format!("{tag}:txt:{}:{j}", qid(i));
                    image_store.insert(&img, &noisy(v, rng))?;
                    text_store.insert(&txt, &noisy(v, rng))?;
                    out.push(DatasetRecord::labelled(img, txt, qid(i)));
                }
            }
            Ok(out)
        };
    let train = records("train", TRAIN_PER_ENTITY, false, &mut rng)?;
    let test = records("test", TEST_PER_ENTITY, true, &mut rng)?;

    let config = TrainConfig {
        d_e: dim,
        batch_size: 8,
        epochs: 50,
        base_lr: 1e-2,
        weight_decay: 1e-4,
        negatives_per_entity: 8,
        seed,
        ..TrainConfig::default()
    };
    Ok(Fixture {
        triples,
        catalog,
        image_store,
        text_store,
        train,
        test,
        config,
    })
}

/// Writes the fixture files and a run config into `dir` (created if
/// missing). Paths in the config are relative to `dir`.
pub fn write_fixture(fixture: &Fixture, dir: impl AsRef<Path>) -> Result<FixtureFiles> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = FixtureFiles {
        triples: dir.join("triples.tsv"),
        catalog: dir.join("catalog.jsonl"),
        image_store: dir.join("image_store.kcle"),
        text_store: dir.join("text_store.kcle"),
        train: dir.join("train.jsonl"),
        test: dir.join("test.jsonl"),
        config: dir.join("config.json"),
    };
    write_triples_tsv(&files.triples, &fixture.triples)?;
    save_catalog(&files.catalog, &fixture.catalog)?;
    save_embedding_store(&fixture.image_store, &files.image_store)?;
    save_embedding_store(&fixture.text_store, &files.text_store)?;
    save_dataset(&files.train, &fixture.train)?;
    save_dataset(&files.test, &fixture.test)?;
    let config = serde_json::json!({
        "train": fixture.config,
        "data": {
            "triples": "triples.tsv",
            "catalog": "catalog.jsonl",
            "image_store": "image_store.kcle",
            "text_store": "text_store.kcle",
            "train": "train.jsonl",
            "test": "test.jsonl",
        },
        "output_dir": "run",
    });
    let text = serde_json::to_string_pretty(&config).expect("serializable config") + "\n";
    fs::write(&files.config, text).map_err(|e| Error::io(&files.config, e))?;
    Ok(files)
}
