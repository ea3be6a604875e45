//! The full preprocessing pipeline and the prepared-dataset directory.
//!
//! Layout written by [`prepare`] + [`PreparedData::write_dir`]:
//!
//! - `vocab.tsv` — `word \t id`, id order.
//! - `items.bin` — binary token table (header `DUETITEMS v1\n`).
//! - `train.tsv` / `test.tsv` — `user_id \t item_id \t label \t order_key`.
//! - `triples.tsv` — surviving KG triples, sorted, deduplicated.
//! - `stats.json` — counts shaped like the usual dataset-statistics table:
//!   feedback (users/items/interactions) and kg (entities/relations/triples).

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::parse::{RawInteraction, RawItemText, RawTriple};
use crate::dataio::preprocess::{binarize, kcore_filter, sample_negatives, split, Example};
use crate::dataio::vocab::Vocab;
use crate::error::{Error, Result};
use crate::seeds::substream;

const ITEMS_HEADER: &[u8] = b"DUETITEMS v1\n";

#[derive(Debug, Clone)]
pub struct PrepareConfig {
    pub kcore: usize,
    pub threshold: f64,
    pub train_fraction: f64,
    pub neg_ratio: usize,
    pub seed: u64,
    /// Stored title length (padded/truncated).
    pub title_len: usize,
    /// Stored description length; training may re-truncate below this cap.
    pub desc_len: usize,
    pub min_count: usize,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        PrepareConfig {
            kcore: 10,
            threshold: 3.0,
            train_fraction: 0.8,
            neg_ratio: 1,
            seed: 0,
            title_len: 16,
            desc_len: 200,
            min_count: 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Stats {
    pub feedback: FeedbackStats,
    pub kg: KgStats,
    pub split: SplitStats,
    pub vocab_size: usize,
    pub dropped: DroppedStats,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FeedbackStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct KgStats {
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SplitStats {
    pub train_examples: usize,
    pub test_examples: usize,
    pub train_positives: usize,
    pub test_positives: usize,
    pub skipped_negative_slots: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DroppedStats {
    pub interactions_without_text: usize,
    pub positives_removed_by_kcore: usize,
    pub triples_on_dropped_items: usize,
}

/// Everything the prepared directory holds, in memory.
#[derive(Debug)]
pub struct PreparedData {
    pub users: Vec<String>,
    pub items: Vec<String>,
    pub vocab: Vocab,
    /// Per item: exactly `title_len` token ids.
    pub titles: Vec<Vec<u32>>,
    /// Per item: exactly `desc_len` token ids.
    pub descs: Vec<Vec<u32>>,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    pub triples: Vec<RawTriple>,
    pub stats: Stats,
}

/// Run the whole preprocessing pipeline. KG triples must touch the item
/// universe: a triple with no endpoint that is a known item id is a linkage
/// error; triples whose only item endpoints were dropped by filtering are
/// discarded (counted).
pub fn prepare(
    interactions: &[RawInteraction],
    texts: &[RawItemText],
    kg_triples: &[RawTriple],
    cfg: &PrepareConfig,
) -> Result<PreparedData> {
    if cfg.title_len == 0 || cfg.desc_len == 0 {
        return Err(Error::Config("title_len and desc_len must be ≥ 1".into()));
    }
    let text_by_item: HashMap<&str, &RawItemText> =
        texts.iter().map(|t| (t.item_id.as_str(), t)).collect();

    // The item universe for linkage checks: anything with a text row or an
    // interaction.
    let mut item_universe: HashSet<&str> = text_by_item.keys().copied().collect();
    item_universe.extend(interactions.iter().map(|r| r.item_id.as_str()));
    for t in kg_triples {
        if !item_universe.contains(t.head.as_str()) && !item_universe.contains(t.tail.as_str()) {
            return Err(Error::Linkage(format!(
                "triple ({}, {}, {}) touches no known item id",
                t.head, t.relation, t.tail
            )));
        }
    }

    // Items without text cannot be encoded; drop their interactions before
    // binarization.
    let (usable, dropped_rows): (Vec<&RawInteraction>, Vec<&RawInteraction>) = interactions
        .iter()
        .partition(|r| text_by_item.contains_key(r.item_id.as_str()));
    let interactions_without_text = dropped_rows.len();

    let owned: Vec<RawInteraction> = usable.into_iter().cloned().collect();
    let positive_keys = binarize(&owned, cfg.threshold);
    let before_kcore: BTreeSet<(String, String)> = positive_keys.keys().cloned().collect();
    let surviving = kcore_filter(&before_kcore, cfg.kcore);
    let positives_removed_by_kcore = before_kcore.len() - surviving.len();
    if surviving.is_empty() {
        return Err(Error::State(
            "no interactions survive preprocessing; relax kcore or threshold".into(),
        ));
    }

    // Dense id maps over sorted surviving ids.
    let users: Vec<String> = surviving
        .iter()
        .map(|(u, _)| u.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let items: Vec<String> = surviving
        .iter()
        .map(|(_, i)| i.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let user_index: HashMap<&str, u32> = users
        .iter()
        .enumerate()
        .map(|(k, v)| (v.as_str(), k as u32))
        .collect();
    let item_index: HashMap<&str, u32> = items
        .iter()
        .enumerate()
        .map(|(k, v)| (v.as_str(), k as u32))
        .collect();

    // Split positives, then sample per-split negatives that collide with
    // neither any positive nor each other.
    let positives: Vec<Example> = surviving
        .iter()
        .map(|pair| Example {
            user: user_index[pair.0.as_str()],
            item: item_index[pair.1.as_str()],
            label: 1,
            order_key: positive_keys[pair],
        })
        .collect();
    let (train_pos, test_pos) = split(
        &positives,
        cfg.train_fraction,
        &mut substream(cfg.seed, "split"),
    )?;
    let mut exclude: HashSet<(u32, u32)> =
        positives.iter().map(|e| (e.user, e.item)).collect();
    let train_negs = sample_negatives(
        &train_pos,
        items.len() as u32,
        &mut exclude,
        cfg.neg_ratio,
        &mut substream(cfg.seed, "negatives-train"),
    );
    let test_negs = sample_negatives(
        &test_pos,
        items.len() as u32,
        &mut exclude,
        cfg.neg_ratio,
        &mut substream(cfg.seed, "negatives-test"),
    );

    // Vocabulary over surviving items' texts only.
    let vocab = Vocab::build(
        items.iter().flat_map(|i| {
            let t = text_by_item[i.as_str()];
            [t.title.as_str(), t.description.as_str()]
        }),
        cfg.min_count,
    );
    let mut titles = Vec::with_capacity(items.len());
    let mut descs = Vec::with_capacity(items.len());
    for i in &items {
        let t = text_by_item[i.as_str()];
        titles.push(vocab.encode(&t.title, cfg.title_len)?);
        descs.push(vocab.encode(&t.description, cfg.desc_len)?);
    }

    // Keep triples whose endpoints all resolve: surviving items stay items,
    // ids that were never items become KG entities, dropped items poison the
    // triple.
    let is_dropped = |id: &str| item_universe.contains(id) && !item_index.contains_key(id);
    let mut kept: BTreeSet<RawTriple> = BTreeSet::new();
    let mut triples_on_dropped_items = 0;
    for t in kg_triples {
        if is_dropped(&t.head) || is_dropped(&t.tail) {
            triples_on_dropped_items += 1;
        } else {
            kept.insert(t.clone());
        }
    }
    let triples: Vec<RawTriple> = kept.into_iter().collect();
    let kg_entities: BTreeSet<&str> = triples
        .iter()
        .flat_map(|t| [t.head.as_str(), t.tail.as_str()])
        .filter(|id| !item_index.contains_key(*id))
        .collect();
    let kg_relations: BTreeSet<&str> = triples.iter().map(|t| t.relation.as_str()).collect();

    let stats = Stats {
        feedback: FeedbackStats {
            users: users.len(),
            items: items.len(),
            interactions: surviving.len(),
        },
        kg: KgStats {
            entities: kg_entities.len(),
            relations: kg_relations.len(),
            triples: triples.len(),
        },
        split: SplitStats {
            train_examples: train_negs.examples.len(),
            test_examples: test_negs.examples.len(),
            train_positives: train_pos.len(),
            test_positives: test_pos.len(),
            skipped_negative_slots: train_negs.skipped_slots + test_negs.skipped_slots,
        },
        vocab_size: vocab.len(),
        dropped: DroppedStats {
            interactions_without_text,
            positives_removed_by_kcore,
            triples_on_dropped_items,
        },
    };

    Ok(PreparedData {
        users,
        items,
        vocab,
        titles,
        descs,
        train: train_negs.examples,
        test: test_negs.examples,
        triples,
        stats,
    })
}

fn write_examples(path: &Path, users: &[String], items: &[String], rows: &[Example]) -> Result<()> {
    let mut f = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
    );
    for e in rows {
        writeln!(
            f,
            "{}\t{}\t{}\t{}",
            users[e.user as usize], items[e.item as usize], e.label, e.order_key
        )
        .map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

impl PreparedData {
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.vocab.save(&dir.join("vocab.tsv"))?;
        self.write_items_bin(&dir.join("items.bin"))?;
        write_examples(&dir.join("train.tsv"), &self.users, &self.items, &self.train)?;
        write_examples(&dir.join("test.tsv"), &self.users, &self.items, &self.test)?;
        let tp = dir.join("triples.tsv");
        let mut f = std::io::BufWriter::new(
            std::fs::File::create(&tp).map_err(|e| Error::io(&tp, e))?,
        );
        for t in &self.triples {
            writeln!(f, "{}\t{}\t{}", t.head, t.relation, t.tail).map_err(|e| Error::io(&tp, e))?;
        }
        f.flush().map_err(|e| Error::io(&tp, e))?;
        let sp = dir.join("stats.json");
        let json = serde_json::to_string_pretty(&self.stats)
            .map_err(|e| Error::State(format!("stats serialization: {e}")))?;
        std::fs::write(&sp, json + "\n").map_err(|e| Error::io(&sp, e))
    }

    fn write_items_bin(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(
            std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
        );
        let io = |e| Error::io(path, e);
        f.write_all(ITEMS_HEADER).map_err(io)?;
        f.write_all(&(self.items.len() as u32).to_le_bytes()).map_err(io)?;
        let title_len = self.titles.first().map_or(0, Vec::len);
        let desc_len = self.descs.first().map_or(0, Vec::len);
        f.write_all(&(title_len as u32).to_le_bytes()).map_err(io)?;
        f.write_all(&(desc_len as u32).to_le_bytes()).map_err(io)?;
        for (k, id) in self.items.iter().enumerate() {
            f.write_all(&(id.len() as u32).to_le_bytes()).map_err(io)?;
            f.write_all(id.as_bytes()).map_err(io)?;
            for &tok in self.titles[k].iter().chain(self.descs[k].iter()) {
                f.write_all(&tok.to_le_bytes()).map_err(io)?;
            }
        }
        f.flush().map_err(io)
    }
}

/// A prepared dataset loaded for training or evaluation, with descriptions
/// re-fit to the configured length and per-user train histories assembled.
#[derive(Debug)]
pub struct Dataset {
    pub users: Vec<String>,
    pub items: Vec<String>,
    pub user_index: HashMap<String, u32>,
    pub item_index: HashMap<String, u32>,
    pub vocab: Vocab,
    pub titles: Vec<Vec<u32>>,
    pub descs: Vec<Vec<u32>>,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    pub triples: Vec<RawTriple>,
    /// Per user: up to `history_max` most recent train-positive items,
    /// ascending by recency key.
    pub histories: Vec<Vec<u32>>,
    pub stats: Stats,
}

impl Dataset {
    /// Load a prepared directory. Stored descriptions are truncated or
    /// PAD-extended to `desc_len`; histories keep the `history_max` most
    /// recent train positives per user.
    pub fn load_dir(dir: &Path, desc_len: usize, history_max: usize) -> Result<Dataset> {
        if desc_len == 0 || history_max == 0 {
            return Err(Error::Config("desc_len and history_max must be ≥ 1".into()));
        }
        let vocab = Vocab::load(&dir.join("vocab.tsv"))?;
        let (items, titles, mut descs) = read_items_bin(&dir.join("items.bin"))?;
        for d in &mut descs {
            d.resize(desc_len, crate::dataio::vocab::PAD);
        }
        let item_index: HashMap<String, u32> = items
            .iter()
            .enumerate()
            .map(|(k, v)| (v.clone(), k as u32))
            .collect();

        // Users come from the example files; collect then index them.
        let train_raw = read_examples_raw(&dir.join("train.tsv"))?;
        let test_raw = read_examples_raw(&dir.join("test.tsv"))?;
        let user_names: BTreeSet<&str> = train_raw
            .iter()
            .chain(test_raw.iter())
            .map(|(u, ..)| u.as_str())
            .collect();
        let users: Vec<String> = user_names.into_iter().map(str::to_string).collect();
        let user_index: HashMap<String, u32> = users
            .iter()
            .enumerate()
            .map(|(k, v)| (v.clone(), k as u32))
            .collect();

        let resolve = |rows: Vec<(String, String, u8, i64)>, path: &Path| -> Result<Vec<Example>> {
            rows.into_iter()
                .map(|(u, i, label, order_key)| {
                    let user = *user_index
                        .get(&u)
                        .ok_or_else(|| Error::Lookup(format!("user {u:?} in {}", path.display())))?;
                    let item = *item_index
                        .get(&i)
                        .ok_or_else(|| Error::Lookup(format!("item {i:?} in {}", path.display())))?;
                    Ok(Example {
                        user,
                        item,
                        label,
                        order_key,
                    })
                })
                .collect()
        };
        let train = resolve(train_raw, &dir.join("train.tsv"))?;
        let test = resolve(test_raw, &dir.join("test.tsv"))?;

        let mut histories: Vec<Vec<(i64, u32)>> = vec![Vec::new(); users.len()];
        for e in train.iter().filter(|e| e.label == 1) {
            histories[e.user as usize].push((e.order_key, e.item));
        }
        let histories = histories
            .into_iter()
            .map(|mut h| {
                h.sort();
                h.into_iter()
                    .map(|(_, i)| i)
                    .rev()
                    .take(history_max)
                    .rev()
                    .collect()
            })
            .collect();

        let triples = crate::dataio::parse::load_triples(&dir.join("triples.tsv"))?;
        let sp = dir.join("stats.json");
        let stats_text = std::fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
        let stats: Stats = serde_json::from_str(&stats_text).map_err(|e| Error::Parse {
            path: sp.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })?;

        Ok(Dataset {
            users,
            items,
            user_index,
            item_index,
            vocab,
            titles,
            descs,
            train,
            test,
            triples,
            histories,
            stats,
        })
    }
}

type ItemsBin = (Vec<String>, Vec<Vec<u32>>, Vec<Vec<u32>>);

fn read_items_bin(path: &Path) -> Result<ItemsBin> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |msg: &str| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        msg: msg.to_string(),
    };
    let mut header = [0u8; 13];
    r.read_exact(&mut header).map_err(|_| bad("truncated header"))?;
    if header != ITEMS_HEADER {
        return Err(bad("bad items.bin header"));
    }
    let mut u32buf = [0u8; 4];
    let mut read_u32 = |r: &mut BufReader<std::fs::File>| -> Result<u32> {
        r.read_exact(&mut u32buf).map_err(|_| bad("truncated field"))?;
        Ok(u32::from_le_bytes(u32buf))
    };
    let count = read_u32(&mut r)? as usize;
    let title_len = read_u32(&mut r)? as usize;
    let desc_len = read_u32(&mut r)? as usize;
    let mut items = Vec::with_capacity(count);
    let mut titles = Vec::with_capacity(count);
    let mut descs = Vec::with_capacity(count);
    for _ in 0..count {
        let id_len = read_u32(&mut r)? as usize;
        if id_len == 0 || id_len > 4096 {
            return Err(bad("implausible item id length"));
        }
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id).map_err(|_| bad("truncated item id"))?;
        items.push(String::from_utf8(id).map_err(|_| bad("item id is not UTF-8"))?);
        let mut title = Vec::with_capacity(title_len);
        for _ in 0..title_len {
            title.push(read_u32(&mut r)?);
        }
        let mut desc = Vec::with_capacity(desc_len);
        for _ in 0..desc_len {
            desc.push(read_u32(&mut r)?);
        }
        titles.push(title);
        descs.push(desc);
    }
    Ok((items, titles, descs))
}

fn read_examples_raw(path: &Path) -> Result<Vec<(String, String, u8, i64)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        let err = |msg: String| Error::Parse {
            path: path.display().to_string(),
            line: k + 1,
            msg,
        };
        if parts.len() != 4 {
            return Err(err(format!("expected 4 fields, got {}", parts.len())));
        }
        let label: u8 = parts[2].parse().map_err(|_| err(format!("bad label {:?}", parts[2])))?;
        if label > 1 {
            return Err(err(format!("label must be 0/1, got {label}")));
        }
        let order_key: i64 = parts[3]
            .parse()
            .map_err(|_| err(format!("bad order key {:?}", parts[3])))?;
        out.push((parts[0].to_string(), parts[1].to_string(), label, order_key));
    }
    Ok(out)
}
