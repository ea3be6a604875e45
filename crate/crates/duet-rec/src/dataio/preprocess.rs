//! Preprocessing steps: binarization, k-core filtering, train/test split,
//! negative sampling.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::parse::RawInteraction;
use crate::error::{Error, Result};

/// A labeled training or evaluation example over dense indices.
/// `order_key` carries recency for positives (timestamp or source line) and
/// is -1 for sampled negatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Example {
    pub user: u32,
    pub item: u32,
    pub label: u8,
    pub order_key: i64,
}

/// Keep pairs with rating ≥ threshold (inclusive), collapsing duplicates.
/// Each kept pair remembers the smallest order key among its qualifying
/// rows.
pub fn binarize(raw: &[RawInteraction], threshold: f64) -> BTreeMap<(String, String), i64> {
    let mut out: BTreeMap<(String, String), i64> = BTreeMap::new();
    for r in raw {
        if r.rating >= threshold {
            let key = (r.user_id.clone(), r.item_id.clone());
            let ord = r.order_key();
            out.entry(key)
                .and_modify(|k| *k = (*k).min(ord))
                .or_insert(ord);
        }
    }
    out
}

/// Iteratively peel users and items of degree < k until every remaining
/// node has degree ≥ k (the unique maximal k-core of the bipartite graph).
pub fn kcore_filter(
    positives: &BTreeSet<(String, String)>,
    k: usize,
) -> BTreeSet<(String, String)> {
    let mut kept: BTreeSet<(String, String)> = positives.clone();
    if k <= 1 {
        return kept;
    }
    loop {
        let mut user_deg: HashMap<&str, usize> = HashMap::new();
        let mut item_deg: HashMap<&str, usize> = HashMap::new();
        for (u, i) in &kept {
            *user_deg.entry(u).or_insert(0) += 1;
            *item_deg.entry(i).or_insert(0) += 1;
        }
        let next: BTreeSet<(String, String)> = kept
            .iter()
            .filter(|(u, i)| user_deg[u.as_str()] >= k && item_deg[i.as_str()] >= k)
            .cloned()
            .collect();
        if next.len() == kept.len() {
            return next;
        }
        kept = next;
    }
}

/// Deterministic shuffle then split: first ⌊fraction·n⌋ examples to train.
pub fn split<T: Clone>(examples: &[T], train_fraction: f64, rng: &mut ChaCha8Rng) -> Result<(Vec<T>, Vec<T>)> {
    if !(0.0..1.0).contains(&train_fraction) || train_fraction == 0.0 {
        return Err(Error::Argument(format!(
            "train fraction must be in (0,1), got {train_fraction}"
        )));
    }
    if examples.is_empty() {
        return Err(Error::Argument("cannot split an empty example list".into()));
    }
    let mut shuffled = examples.to_vec();
    shuffled.shuffle(rng);
    let cut = (train_fraction * shuffled.len() as f64).floor() as usize;
    let test = shuffled.split_off(cut);
    Ok((shuffled, test))
}

#[derive(Debug)]
pub struct NegativeSamples {
    pub examples: Vec<Example>,
    /// Negative slots abandoned after the rejection cap (degenerate users).
    pub skipped_slots: usize,
}

/// For every positive, emit it with label 1 plus `ratio` uniformly sampled
/// items the user has not interacted with, label 0. `exclude` holds all
/// pairs that may not become negatives (every positive, plus negatives
/// already emitted for another split); accepted negatives are added to it so
/// later calls stay disjoint.
pub fn sample_negatives(
    positives: &[Example],
    n_items: u32,
    exclude: &mut HashSet<(u32, u32)>,
    ratio: usize,
    rng: &mut ChaCha8Rng,
) -> NegativeSamples {
    const MAX_ATTEMPTS: usize = 100;
    let mut examples = Vec::with_capacity(positives.len() * (1 + ratio));
    let mut skipped = 0;
    for pos in positives {
        examples.push(*pos);
        for _ in 0..ratio {
            let mut accepted = false;
            for _ in 0..MAX_ATTEMPTS {
                let j = rng.random_range(0..n_items);
                if exclude.insert((pos.user, j)) {
                    examples.push(Example {
                        user: pos.user,
                        item: j,
                        label: 0,
                        order_key: -1,
                    });
                    accepted = true;
                    break;
                }
            }
            if !accepted {
                skipped += 1;
            }
        }
    }
    NegativeSamples {
        examples,
        skipped_slots: skipped,
    }
}
