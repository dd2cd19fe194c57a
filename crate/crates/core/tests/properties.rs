use std::collections::BTreeSet;
use std::path::Path;

use knowcol::dataio::{EmbeddingStore, Split};
use knowcol::graphstore::KnowledgeGraph;
use knowcol::inference::{retrieve_topk, CandidateIndex};
use knowcol::losses::{contrastive_loss, symmetric_contrastive_loss};
use knowcol::trainer::lr_at_step;
use proptest::prelude::*;

fn nonzero_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim).prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

fn matrix(n: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(nonzero_vec(dim), n)
}

proptest! {
    #[test]
    fn contrastive_loss_is_nonnegative_and_symmetric_loss_commutes(
        (a, b) in (1usize..6).prop_flat_map(|n| (matrix(n, 4), matrix(n, 4))),
        tau in 0.05f64..2.0,
    ) {
        let l = contrastive_loss(&a, &b, tau).unwrap();
        prop_assert!(l >= 0.0 && l.is_finite());
        let ab = symmetric_contrastive_loss(&a, &b, tau).unwrap();
        let ba = symmetric_contrastive_loss(&b, &a, tau).unwrap();
        prop_assert_eq!(ab.to_bits(), ba.to_bits());
    }

    #[test]
    fn store_round_trips(
        dim in 1usize..5,
        rows in prop::collection::btree_map("[A-Za-z0-9:]{1,8}", prop::collection::vec(-1e6f32..1e6, 4), 0..6),
    ) {
        let mut store = EmbeddingStore::new(dim);
        for (id, v) in &rows {
            store.insert(id.clone(), &v[..dim]).unwrap();
        }
        let bytes = store.to_bytes();
        let back = EmbeddingStore::from_bytes(Path::new("p"), &bytes).unwrap();
        prop_assert_eq!(&back, &store);
        prop_assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn truncated_store_never_loads(
        rows in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 3), 1..4),
        cut in 1usize..200,
    ) {
        let mut store = EmbeddingStore::new(3);
        for (i, v) in rows.iter().enumerate() {
            store.insert(format!("Q{i}"), v).unwrap();
        }
        let bytes = store.to_bytes();
        let cut = cut.min(bytes.len());
        prop_assert!(EmbeddingStore::from_bytes(Path::new("p"), &bytes[..bytes.len() - cut]).is_err());
    }

    #[test]
    fn topk_is_sorted_and_scale_free(
        rows in matrix(12, 5),
        query in nonzero_vec(5),
        k in 1usize..15,
        c in prop::sample::select(vec![1e-3, 0.5, 1.0, 7.0, 1e3]),
    ) {
        let index = CandidateIndex::from_rows(
            rows.iter().enumerate().map(|(j, r)| (format!("Q{j:02}"), Split::Seen, r.clone())).collect(),
        )
        .unwrap();
        let hits = retrieve_topk(&query, &index, k).unwrap();
        prop_assert_eq!(hits.len(), k.min(12));
        prop_assert!(hits.windows(2).all(|w| w[0].score >= w[1].score));
        let scaled: Vec<f64> = query.iter().map(|x| x * c).collect();
        let again = retrieve_topk(&scaled, &index, k).unwrap();
        let ids = |h: &[knowcol::inference::Hit]| h.iter().map(|x| x.qid.clone()).collect::<Vec<_>>();
        prop_assert_eq!(ids(&hits), ids(&again));
    }

    #[test]
    fn schedule_stays_in_range_and_decreases(base in 1e-5f64..1.0, total in 1u64..500) {
        let mut prev = f64::INFINITY;
        for step in 0..=total {
            let lr = lr_at_step(step, total, base);
            prop_assert!((0.0..=base).contains(&lr));
            prop_assert!(lr <= prev);
            prev = lr;
        }
        prop_assert_eq!(lr_at_step(0, total, base), base);
        prop_assert!(lr_at_step(total, total, base).abs() < 1e-15);
    }

    #[test]
    fn graph_deduplicates_and_indexes_every_triple(
        raw in prop::collection::vec((0u8..8, 0u8..3, 0u8..8), 0..30),
    ) {
        let triples: Vec<(String, String, String)> = raw
            .iter()
            .map(|&(h, r, t)| (format!("Q{h}"), format!("P{r}"), format!("Q{t}")))
            .collect();
        let g = KnowledgeGraph::build(&triples);
        let unique: BTreeSet<_> = triples.iter().cloned().collect();
        prop_assert_eq!(g.num_triples(), unique.len());
        for e in g.entity_ids() {
            let adjacent: Vec<_> = g.adjacent(e).unwrap().collect();
            let scanned: Vec<_> = g.triples().iter().filter(|t| t.involves(e)).collect();
            prop_assert_eq!(adjacent, scanned);
        }
        let names: Vec<String> = g.entity_names().to_vec();
        let mut sorted = names.clone();
        sorted.sort();
        prop_assert_eq!(names, sorted);
    }
}
