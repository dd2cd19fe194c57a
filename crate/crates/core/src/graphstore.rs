//! In-memory knowledge graph over interned Wikidata identifiers.
//!
//! Entities and relations are interned in lexicographic order of their
//! QID/PID strings, and the triple list is kept sorted by
//! `(head, relation, tail)`, so two graphs built from the same set of
//! triples are identical regardless of input order. The graph is immutable
//! once built.

use std::collections::{BTreeSet, HashMap};

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

/// Default hierarchy relations: `instance of`, `subclass of`, `parent taxon`.
pub const DEFAULT_HIERARCHY: [&str; 3] = ["P31", "P279", "P171"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self { head, relation, tail }
    }

    pub fn involves(&self, e: EntityId) -> bool {
        self.head == e || self.tail == e
    }
}

#[derive(Debug, Clone, Default)]
struct Interner {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Interner {
    fn from_sorted(names: BTreeSet<String>) -> Self {
        let names: Vec<String> = names.into_iter().collect();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i as u32)).collect();
        Self { names, index }
    }

    fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }
}

#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    entities: Interner,
    relations: Interner,
    triples: Vec<Triple>,
    /// Per entity, sorted indices into `triples` where it is head or tail.
    adjacency: Vec<Vec<usize>>,
}

impl KnowledgeGraph {
    /// Builds a graph from `(qid, pid, qid)` string triples. Duplicates are
    /// dropped and self-loops kept.
    pub fn build<S: AsRef<str>>(triples: &[(S, S, S)]) -> Self {
        Self::build_with_entities(std::iter::empty::<&str>(), triples)
    }

    /// Like [`KnowledgeGraph::build`] but also registers `extra` entities,
    /// which may have no triples.
    pub fn build_with_entities<S: AsRef<str>, E: AsRef<str>>(
        extra: impl IntoIterator<Item = E>,
        triples: &[(S, S, S)],
    ) -> Self {
        let mut entity_names: BTreeSet<String> = extra.into_iter().map(|e| e.as_ref().to_owned()).collect();
        let mut relation_names = BTreeSet::new();
        for (h, r, t) in triples {
            entity_names.insert(h.as_ref().to_owned());
            entity_names.insert(t.as_ref().to_owned());
            relation_names.insert(r.as_ref().to_owned());
        }
        let entities = Interner::from_sorted(entity_names);
        let relations = Interner::from_sorted(relation_names);

        let mut interned: Vec<Triple> = triples
            .iter()
            .map(|(h, r, t)| {
                Triple::new(
                    EntityId(entities.get(h.as_ref()).unwrap()),
                    RelationId(relations.get(r.as_ref()).unwrap()),
                    EntityId(entities.get(t.as_ref()).unwrap()),
                )
            })
            .collect();
        interned.sort_unstable();
        interned.dedup();

        let mut adjacency = vec![Vec::new(); entities.names.len()];
        for (i, t) in interned.iter().enumerate() {
            adjacency[t.head.index()].push(i);
            if t.tail != t.head {
                adjacency[t.tail.index()].push(i);
            }
        }

        Self {
            entities,
            relations,
            triples: interned,
            adjacency,
        }
    }

    pub fn num_entities(&self) -> usize {
        self.entities.names.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.names.len()
    }

    pub fn num_triples(&self) -> usize {
        self.triples.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn entity_ids(&self) -> impl Iterator<Item = EntityId> + '_ {
        (0..self.num_entities() as u32).map(EntityId)
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entities.names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relations.names
    }

    pub fn entity_id(&self, qid: &str) -> Option<EntityId> {
        self.entities.get(qid).map(EntityId)
    }

    pub fn relation_id(&self, pid: &str) -> Option<RelationId> {
        self.relations.get(pid).map(RelationId)
    }

    pub fn resolve_entity(&self, qid: &str) -> Result<EntityId> {
        self.entity_id(qid).ok_or_else(|| Error::UnknownEntity(qid.to_owned()))
    }

    pub fn entity_name(&self, e: EntityId) -> &str {
        &self.entities.names[e.index()]
    }

    pub fn relation_name(&self, r: RelationId) -> &str {
        &self.relations.names[r.index()]
    }

    fn check_entity(&self, e: EntityId) -> Result<()> {
        if e.index() < self.num_entities() {
            Ok(())
        } else {
            Err(Error::UnknownEntity(format!("#{}", e.0)))
        }
    }

    /// Triples in which `e` is head or tail, in canonical order.
    pub fn adjacent(&self, e: EntityId) -> Result<impl Iterator<Item = &Triple> + '_> {
        self.check_entity(e)?;
        Ok(self.adjacency[e.index()].iter().map(|&i| &self.triples[i]))
    }

    /// The triple as `(qid, pid, qid)` strings.
    pub fn triple_names(&self, t: &Triple) -> (&str, &str, &str) {
        (
            self.entity_name(t.head),
            self.relation_name(t.relation),
            self.entity_name(t.tail),
        )
    }

    /// One-hop expansion of `seeds` along the hierarchy relations: every
    /// tail `e'` of a triple `(e, r, e')` with `e` a seed and `r` in
    /// `hierarchy` is added. Tails of added entities are not followed.
    pub fn expand_entity_set<S: AsRef<str>>(
        &self,
        seeds: &BTreeSet<EntityId>,
        hierarchy: &[S],
    ) -> Result<BTreeSet<EntityId>> {
        if hierarchy.is_empty() {
            return Err(Error::InvalidArgument("hierarchy relation set is empty".into()));
        }
        let wanted: BTreeSet<RelationId> = hierarchy.iter().filter_map(|p| self.relation_id(p.as_ref())).collect();

        let mut out = seeds.clone();
        for &e in seeds {
            self.check_entity(e)?;
            for &i in &self.adjacency[e.index()] {
                let t = &self.triples[i];
                if t.head == e && wanted.contains(&t.relation) {
                    out.insert(t.tail);
                }
            }
        }
        Ok(out)
    }

    /// The subgraph induced by `keep`: entity set is exactly `keep`
    /// (isolated members included), triples are those with both endpoints
    /// kept, relations are those occurring in retained triples. IDs are
    /// re-interned in the returned graph.
    pub fn induced_subgraph(&self, keep: &BTreeSet<EntityId>) -> KnowledgeGraph {
        let retained: Vec<(&str, &str, &str)> = self
            .triples
            .iter()
            .filter(|t| keep.contains(&t.head) && keep.contains(&t.tail))
            .map(|t| self.triple_names(t))
            .collect();
        let names = keep
            .iter()
            .filter(|e| e.index() < self.num_entities())
            .map(|&e| self.entity_name(e));
        KnowledgeGraph::build_with_entities(names, &retained)
    }

    /// Up to `cap` triples involving `e`. When there are more than `cap`,
    /// a uniform sample without replacement is drawn from `rng`; the result
    /// is always in canonical order.
    pub fn entity_triples<R: Rng + ?Sized>(&self, e: EntityId, cap: usize, rng: &mut R) -> Result<Vec<Triple>> {
        self.check_entity(e)?;
        if cap == 0 {
            return Err(Error::InvalidArgument("triple cap must be >= 1".into()));
        }
        let adj = &self.adjacency[e.index()];
        if adj.len() <= cap {
            return Ok(adj.iter().map(|&i| self.triples[i]).collect());
        }
        let mut picked = index::sample(rng, adj.len(), cap).into_vec();
        picked.sort_unstable();
        Ok(picked.into_iter().map(|j| self.triples[adj[j]]).collect())
    }
}

/// Draws `k` corrupted copies of `positive`. Each draw replaces the head
/// (probability ½) or the tail with an entity drawn uniformly from
/// `entities` minus the replaced endpoint. Draws are independent, so
/// duplicates are possible, and the result is not filtered against known
/// true triples.
pub fn sample_negatives<R: Rng + ?Sized>(
    entities: &[EntityId],
    positive: &Triple,
    k: usize,
    rng: &mut R,
) -> Result<Vec<Triple>> {
    if entities.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "negative sampling needs at least 2 entities, got {}",
            entities.len()
        )));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("negative count must be >= 1".into()));
    }
    let draw_other = |rng: &mut R, exclude: EntityId| -> EntityId {
        match entities.iter().position(|&e| e == exclude) {
            Some(pos) => {
                let j = rng.random_range(0..entities.len() - 1);
                entities[if j >= pos { j + 1 } else { j }]
            }
            None => entities[rng.random_range(0..entities.len())],
        }
    };
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mut neg = *positive;
        if rng.random_bool(0.5) {
            neg.head = draw_other(rng, positive.head);
        } else {
            neg.tail = draw_other(rng, positive.tail);
        }
        out.push(neg);
    }
    Ok(out)
}
