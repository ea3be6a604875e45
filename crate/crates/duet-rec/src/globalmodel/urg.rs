//! The unified relation graph: KG triples merged with train-split
//! interactions under a reserved `interact` relation, over one disjoint
//! entity index space (users, then items, then KG entities).

use std::collections::{BTreeSet, HashSet};

use crate::dataio::{Dataset, RawTriple};
use crate::error::{Error, Result};

/// Reserved relation name for user-item edges; KG files may not declare it.
pub const INTERACT: &str = "interact";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: u32,
    pub relation: u32,
    pub tail: u32,
}

#[derive(Debug)]
pub struct Urg {
    pub n_users: usize,
    pub n_items: usize,
    /// Raw ids per entity index: users, then items, then sorted KG entities.
    pub entity_names: Vec<String>,
    /// Sorted KG relation names, then `interact` last.
    pub relations: Vec<String>,
    /// Deduplicated, sorted triples (KG plus one Interact per train positive).
    pub triples: Vec<Triple>,
    triple_set: HashSet<Triple>,
    /// Per entity: `(relation, neighbor)` from both directions of every
    /// triple, sorted by (neighbor, relation). One entry per triple per
    /// direction, so multi-relation edges appear once per relation.
    pub adjacency: Vec<Vec<(u32, u32)>>,
}

impl Urg {
    pub fn n_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn user_entity(&self, user: u32) -> u32 {
        debug_assert!((user as usize) < self.n_users);
        user
    }

    pub fn item_entity(&self, item: u32) -> u32 {
        debug_assert!((item as usize) < self.n_items);
        self.n_users as u32 + item
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.triple_set.contains(t)
    }

    pub fn degree(&self, entity: u32) -> usize {
        self.adjacency[entity as usize].len()
    }
}

/// Build the URG from a dataset's train positives and its KG triples. Every
/// KG triple must have at least one endpoint that is a known item id;
/// endpoints that are not items become KG entities.
pub fn build_urg(dataset: &Dataset, kg_triples: &[RawTriple]) -> Result<Urg> {
    let n_users = dataset.users.len();
    let n_items = dataset.items.len();

    let mut kg_entity_names: BTreeSet<&str> = BTreeSet::new();
    let mut relation_names: BTreeSet<&str> = BTreeSet::new();
    for t in kg_triples {
        if t.relation == INTERACT {
            return Err(Error::Linkage(format!(
                "relation name {INTERACT:?} is reserved for user-item edges"
            )));
        }
        if !dataset.item_index.contains_key(&t.head) && !dataset.item_index.contains_key(&t.tail) {
            return Err(Error::Linkage(format!(
                "triple ({}, {}, {}) touches no known item id",
                t.head, t.relation, t.tail
            )));
        }
        for id in [&t.head, &t.tail] {
            if !dataset.item_index.contains_key(id) {
                kg_entity_names.insert(id);
            }
        }
        relation_names.insert(&t.relation);
    }

    let mut entity_names: Vec<String> = Vec::with_capacity(n_users + n_items + kg_entity_names.len());
    entity_names.extend(dataset.users.iter().cloned());
    entity_names.extend(dataset.items.iter().cloned());
    entity_names.extend(kg_entity_names.iter().map(|s| s.to_string()));
    let kg_entity_index: std::collections::HashMap<&str, u32> = kg_entity_names
        .iter()
        .enumerate()
        .map(|(k, v)| (*v, (n_users + n_items + k) as u32))
        .collect();

    let mut relations: Vec<String> = relation_names.iter().map(|s| s.to_string()).collect();
    relations.push(INTERACT.to_string());
    let interact_idx = (relations.len() - 1) as u32;
    let relation_index: std::collections::HashMap<&str, u32> = relations
        .iter()
        .enumerate()
        .map(|(k, v)| (v.as_str(), k as u32))
        .collect();

    let resolve = |id: &str| -> u32 {
        match dataset.item_index.get(id) {
            Some(&i) => n_users as u32 + i,
            None => kg_entity_index[id],
        }
    };
    let mut triple_set: BTreeSet<Triple> = kg_triples
        .iter()
        .map(|t| Triple {
            head: resolve(&t.head),
            relation: relation_index[t.relation.as_str()],
            tail: resolve(&t.tail),
        })
        .collect();
    for e in dataset.train.iter().filter(|e| e.label == 1) {
        triple_set.insert(Triple {
            head: e.user,
            relation: interact_idx,
            tail: n_users as u32 + e.item,
        });
    }

    let triples: Vec<Triple> = triple_set.iter().copied().collect();
    let mut adjacency: Vec<Vec<(u32, u32)>> = vec![Vec::new(); entity_names.len()];
    for t in &triples {
        adjacency[t.head as usize].push((t.relation, t.tail));
        adjacency[t.tail as usize].push((t.relation, t.head));
    }
    for list in &mut adjacency {
        list.sort_by_key(|&(r, n)| (n, r));
    }

    Ok(Urg {
        n_users,
        n_items,
        entity_names,
        relations,
        triples,
        triple_set: triple_set.into_iter().collect(),
        adjacency,
    })
}
