//! Candidate index, top-k retrieval and the seen/unseen evaluation.
//!
//! Each catalog entity gets the row `normalize(½(z_text + z_image))` built
//! from its description and lead images, never from the node table, so
//! unseen entities are retrievable without a trained node embedding.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::dataio::{DatasetRecord, EntityCatalogEntry, Split, Stores};
use crate::encoders::{encode_entity, to_f64, EmbeddingTable, ModelParams, ProjectionLayer, Scalar};
use crate::error::{Error, Result};
use crate::graphstore::KnowledgeGraph;
use crate::linalg::{self, normalize};
use crate::losses::{score_triple, KgeMethod};

/// Candidate rows in ascending QID order.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateIndex {
    entities: Vec<String>,
    splits: Vec<Split>,
    dim: usize,
    rows: Vec<f64>,
}

impl CandidateIndex {
    /// Builds an index from explicit rows. Entities are sorted by QID.
    pub fn from_rows(mut items: Vec<(String, Split, Vec<f64>)>) -> Result<Self> {
        items.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = items.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidArgument(format!("duplicate candidate {}", w[0].0)));
        }
        let dim = items.first().map_or(0, |i| i.2.len());
        let mut index = Self {
            entities: Vec::with_capacity(items.len()),
            splits: Vec::with_capacity(items.len()),
            dim,
            rows: Vec::with_capacity(items.len() * dim),
        };
        for (qid, split, row) in items {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument(format!("candidate {qid} has a non-finite row")));
            }
            index.entities.push(qid);
            index.splits.push(split);
            index.rows.extend(row);
        }
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.rows[j * self.dim..(j + 1) * self.dim]
    }

    pub fn split_of(&self, qid: &str) -> Option<Split> {
        self.entities
            .binary_search_by(|e| e.as_str().cmp(qid))
            .ok()
            .map(|j| self.splits[j])
    }
}

/// `normalize(½(z_text + z_image))` for every catalog entry.
pub fn build_candidate_index<T: Scalar>(
    catalog: &[EntityCatalogEntry],
    lp_img: &ProjectionLayer<T>,
    lp_txt: &ProjectionLayer<T>,
    stores: &Stores,
) -> Result<CandidateIndex> {
    let items = catalog
        .iter()
        .map(|entry| {
            let (zt, zi) = encode_entity(entry, lp_img, lp_txt, stores)?;
            let mean = linalg::scale(&linalg::add(&zt, &zi), 0.5);
            let (row, _) = normalize(&mean, "candidate row")?;
            Ok((entry.qid.clone(), entry.split, row))
        })
        .collect::<Result<Vec<_>>>()?;
    CandidateIndex::from_rows(items)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub qid: String,
    pub score: f64,
}

/// Top `k` candidates by cosine similarity to `z_input`, best first. Exact
/// ties go to the smaller QID.
pub fn retrieve_topk(z_input: &[f64], index: &CandidateIndex, k: usize) -> Result<Vec<Hit>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if z_input.len() != index.dim && !index.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: index.dim,
            got: z_input.len(),
        });
    }
    let qn = linalg::norm(z_input);
    if qn == 0.0 || !qn.is_finite() {
        return Err(Error::ZeroNorm("query embedding"));
    }
    let mut scored: Vec<(usize, f64)> = (0..index.len())
        .map(|j| {
            let row = index.row(j);
            (j, linalg::dot(z_input, row) / (qn * linalg::norm(row)))
        })
        .collect();
    let by_rank =
        |a: &(usize, f64), b: &(usize, f64)| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0));
    let k = k.min(scored.len());
    if k < scored.len() {
        scored.select_nth_unstable_by(k, by_rank);
        scored.truncate(k);
    }
    scored.sort_by(by_rank);
    Ok(scored
        .into_iter()
        .map(|(j, score)| Hit {
            qid: index.entities[j].clone(),
            score,
        })
        .collect())
}

/// Top-k hits for every query record. `threads > 1` splits the queries
/// across scoped threads; the output order is the query order either way.
pub fn predict<T: Scalar>(
    params: &ModelParams<T>,
    index: &CandidateIndex,
    stores: &Stores,
    queries: &[DatasetRecord],
    k: usize,
    threads: usize,
) -> Result<Vec<Vec<Hit>>> {
    let run = |records: &[DatasetRecord]| -> Result<Vec<Vec<Hit>>> {
        records
            .iter()
            .map(|r| {
                let (img, txt) = stores.query_raws(r)?;
                retrieve_topk(&params.encode_query(&img, &txt)?, index, k)
            })
            .collect()
    };
    if threads <= 1 || queries.len() < 2 {
        return run(queries);
    }
    let chunk = queries.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = queries.chunks(chunk).map(|c| s.spawn(move || run(c))).collect();
        let mut out = Vec::with_capacity(queries.len());
        for h in handles {
            out.extend(h.join().expect("retrieval worker panicked")?);
        }
        Ok(out)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc_seen: f64,
    pub acc_unseen: f64,
    pub harmonic_mean: f64,
    pub n_seen: usize,
    pub n_unseen: usize,
    pub correct_seen: usize,
    pub correct_unseen: usize,
}

/// `2ab / (a + b)`, or 0 when `a + b = 0`.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// Top-1 accuracy per split and their harmonic mean.
pub fn evaluate<S: AsRef<str>, G: AsRef<str>>(predictions: &[S], gold: &[G], splits: &[Split]) -> Result<EvalReport> {
    if predictions.len() != gold.len() || gold.len() != splits.len() {
        return Err(Error::InvalidArgument(format!(
            "misaligned evaluation lists: {} predictions, {} gold, {} splits",
            predictions.len(),
            gold.len(),
            splits.len()
        )));
    }
    let mut n = [0usize; 2];
    let mut correct = [0usize; 2];
    for ((p, g), s) in predictions.iter().zip(gold).zip(splits) {
        let k = match s {
            Split::Seen => 0,
            Split::Unseen => 1,
        };
        n[k] += 1;
        if p.as_ref() == g.as_ref() {
            correct[k] += 1;
        }
    }
    if n[0] == 0 || n[1] == 0 {
        return Err(Error::InvalidArgument(format!(
            "evaluation needs both splits, got {} seen and {} unseen examples",
            n[0], n[1]
        )));
    }
    let acc_seen = correct[0] as f64 / n[0] as f64;
    let acc_unseen = correct[1] as f64 / n[1] as f64;
    Ok(EvalReport {
        acc_seen,
        acc_unseen,
        harmonic_mean: harmonic_mean(acc_seen, acc_unseen),
        n_seen: n[0],
        n_unseen: n[1],
        correct_seen: correct[0],
        correct_unseen: correct[1],
    })
}

/// Fraction of graph triples whose true tail ranks within the top `k` of
/// all entities under `method`. Ties go to the smaller entity id.
pub fn tail_hits_at_k<T: Scalar>(
    graph: &KnowledgeGraph,
    tables: &EmbeddingTable<T>,
    method: KgeMethod,
    k: usize,
) -> Result<f64> {
    if graph.num_triples() == 0 {
        return Err(Error::InvalidArgument("graph has no triples".into()));
    }
    let entities: Vec<Vec<f64>> = (0..graph.num_entities())
        .map(|e| tables.lookup_entity(e).map(to_f64))
        .collect::<Result<_>>()?;
    let mut hits = 0;
    for t in graph.triples() {
        let h = &entities[t.head.index()];
        let r = to_f64(tables.lookup_relation(t.relation.index())?);
        let w = tables.lookup_normal(t.relation.index())?.map(to_f64);
        let scores = entities
            .iter()
            .map(|c| score_triple(method, h, &r, c, w.as_deref()))
            .collect::<Result<Vec<_>>>()?;
        let better = |a: f64, b: f64| if method.is_distance() { a < b } else { a > b };
        let truth = t.tail.index();
        let st = scores[truth];
        let rank = 1 + scores
            .iter()
            .enumerate()
            .filter(|&(j, &s)| better(s, st) || (s == st && j < truth))
            .count();
        if rank <= k {
            hits += 1;
        }
    }
    Ok(hits as f64 / graph.num_triples() as f64)
}
