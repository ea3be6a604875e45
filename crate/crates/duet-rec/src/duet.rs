//! The duet itself: local and global click probabilities fused through a
//! learned sigmoid gate, trained jointly by alternating a KG margin phase
//! over the URG with a cross-entropy phase over click batches.
//!
//! Checkpoint names: everything from [`crate::localmodel`] and
//! [`crate::globalmodel`] plus `fusion.{w,b}`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataio::prepared::{Dataset, Stats};
use crate::dataio::preprocess::Example;
use crate::error::{Error, Result};
use crate::evalkit::ScoredExample;
use crate::globalmodel::{self, GlobalCfg, NeighborPlan, Urg};
use crate::layers::prediction_head;
use crate::localmodel::{self, LocalCfg};
use crate::numkit::store::{AdamConfig, ParamStore};
use crate::numkit::tape::{NodeId, Tape};
use crate::numkit::tensor::Tensor;
use crate::seeds::{substream, substream_n};

pub const FUSION_W: &str = "fusion.w";
pub const FUSION_B: &str = "fusion.b";

/// Which towers feed the fusion gate. The ablations pin the missing tower's
/// probability to a constant 0.5, so the gate's shape never changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    Duet,
    LocalOnly,
    GlobalOnly,
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FusionMode::Duet => "duet",
            FusionMode::LocalOnly => "local-only",
            FusionMode::GlobalOnly => "global-only",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<FusionMode> {
        match s {
            "duet" => Ok(FusionMode::Duet),
            "local-only" => Ok(FusionMode::LocalOnly),
            "global-only" => Ok(FusionMode::GlobalOnly),
            other => Err(Error::Config(format!(
                "unknown fusion mode {other:?} (expected duet, local-only, or global-only)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// TransR ranking margin γ.
    pub gamma: f64,
    /// Corruptions per true triple in the margin phase.
    pub neg_ratio: usize,
    /// Neighbors aggregated per entity during training.
    pub sample_size: usize,
    pub seed: u64,
    /// Word embedding dim / CNN filter count (d).
    pub dim_word: usize,
    /// Entity and relation embedding dim (k).
    pub dim_entity: usize,
    /// Description tokens kept at dataset load time (L).
    pub desc_len: usize,
    /// Most recent interactions the local tower attends over per user.
    pub history_max: usize,
    /// CNN window size.
    pub window: usize,
    /// LeakyReLU slope everywhere.
    pub slope: f64,
    pub mode: FusionMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 256,
            lr: 1e-3,
            gamma: 1.0,
            neg_ratio: 1,
            sample_size: 8,
            seed: 17,
            dim_word: 128,
            dim_entity: 50,
            desc_len: 48,
            history_max: 20,
            window: 3,
            slope: 0.2,
            mode: FusionMode::Duet,
        }
    }
}

impl TrainConfig {
    /// Everything but `epochs` must be positive (zero epochs is the legal
    /// "just initialize" run).
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("neg_ratio", self.neg_ratio),
            ("sample_size", self.sample_size),
            ("dim_word", self.dim_word),
            ("dim_entity", self.dim_entity),
            ("desc_len", self.desc_len),
            ("history_max", self.history_max),
            ("window", self.window),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be ≥ 1")));
            }
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.slope.is_finite() && self.slope > 0.0 && self.slope < 1.0) {
            return Err(Error::Config(format!("slope must be in (0,1), got {}", self.slope)));
        }
        Ok(())
    }

    pub fn local_cfg(&self) -> LocalCfg {
        LocalCfg::new(self.dim_word, self.window, self.slope)
    }

    pub fn global_cfg(&self) -> GlobalCfg {
        GlobalCfg::new(self.dim_entity, self.slope, self.sample_size)
    }
}

/// Register the fusion gate. Weights (1,1) with bias −1 put an untrained
/// duet at sigmoid(p_l + p_g − 1) — near the average of its towers and far
/// from the sigmoid's flat tails.
pub fn register_fusion(store: &mut ParamStore) -> Result<()> {
    store.register(FUSION_W, Tensor::from_vec(&[2, 1], vec![1.0, 1.0])?)?;
    store.register(FUSION_B, Tensor::from_vec(&[1], vec![-1.0])?)
}

/// Register both towers and the gate in one store, each from its own
/// init substream of `cfg.seed`.
pub fn register(
    store: &mut ParamStore,
    cfg: &TrainConfig,
    dataset: &Dataset,
    urg: &Urg,
) -> Result<()> {
    cfg.validate()?;
    localmodel::register(
        store,
        &cfg.local_cfg(),
        dataset.vocab.len(),
        &mut substream(cfg.seed, "init-local"),
    )?;
    globalmodel::register(
        store,
        &cfg.global_cfg(),
        urg.n_entities(),
        urg.n_relations(),
        &mut substream(cfg.seed, "init-global"),
    )?;
    register_fusion(store)
}

/// Batched fusion: probability columns `[n,1]` in, p^f column `[n,1]` out.
pub fn fuse_columns(
    tape: &mut Tape,
    store: &ParamStore,
    p_l: NodeId,
    p_g: NodeId,
) -> Result<NodeId> {
    for (name, node) in [("p_l", p_l), ("p_g", p_g)] {
        let shape = tape.value(node).shape();
        if shape.len() != 2 || shape[1] != 1 {
            return Err(Error::Shape {
                op: "fuse",
                detail: format!("{name} must be a column, got {shape:?}"),
            });
        }
    }
    // Column selectors place each tower's probability side by side.
    let sel_l = tape.constant(Tensor::from_vec(&[1, 2], vec![1.0, 0.0])?);
    let sel_g = tape.constant(Tensor::from_vec(&[1, 2], vec![0.0, 1.0])?);
    let left = tape.matmul(p_l, sel_l)?;
    let right = tape.matmul(p_g, sel_g)?;
    let x = tape.add(left, right)?;
    let w = tape.param(store, FUSION_W)?;
    let b = tape.param(store, FUSION_B)?;
    let z = tape.matmul(x, w)?;
    let z = tape.add_bias(z, b)?;
    Ok(tape.sigmoid(z))
}

/// p^f = sigmoid(w·[p^l, p^g] + b) for one pair of probability scalars.
pub fn fuse(tape: &mut Tape, store: &ParamStore, p_l: NodeId, p_g: NodeId) -> Result<NodeId> {
    let l = tape.reshape(p_l, &[1, 1])?;
    let g = tape.reshape(p_g, &[1, 1])?;
    fuse_columns(tape, store, l, g)
}

/// Summed cross-entropy −Σ [R·ln p + (1−R)·ln(1−p)] over a rank-1 batch of
/// fused probabilities; each p is clamped to [1e-12, 1−1e-12] before its log.
pub fn ce_loss(tape: &mut Tape, probs: NodeId, labels: &[f64]) -> Result<NodeId> {
    let mean = tape.mean_bce(probs, labels)?;
    Ok(tape.scale(mean, labels.len() as f64))
}

/// One row of the training log. `kg_loss` is the mean per-pair hinge loss of
/// phase A (0.0 when the phase is skipped), `ce_loss` the epoch's mean
/// per-example cross-entropy, and `train_auc` the AUC of the predictions
/// accumulated while the epoch's batches were stepped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub kg_loss: f64,
    pub ce_loss: f64,
    pub train_auc: f64,
}

pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,kg_loss,ce_loss,train_auc\n");
    for row in log {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            row.epoch, row.kg_loss, row.ce_loss, row.train_auc
        ));
    }
    out
}

#[derive(Debug)]
pub struct DuetModel {
    pub store: ParamStore,
    pub cfg: TrainConfig,
    pub log: Vec<EpochLog>,
}

fn check_text_lengths(dataset: &Dataset, window: usize) -> Result<()> {
    let title_min = dataset.titles.iter().map(Vec::len).min().unwrap_or(0);
    let desc_min = dataset.descs.iter().map(Vec::len).min().unwrap_or(0);
    if dataset.titles.is_empty() || title_min < window || desc_min < window {
        return Err(Error::Config(format!(
            "token sequences (shortest title {title_min}, desc {desc_min}) \
             must cover the CNN window {window}"
        )));
    }
    Ok(())
}

/// KEE encoding of `item`, shared across a tape.
fn cached_kee(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &LocalCfg,
    dataset: &Dataset,
    cache: &mut HashMap<u32, NodeId>,
    item: u32,
) -> Result<NodeId> {
    if let Some(&node) = cache.get(&item) {
        return Ok(node);
    }
    let node = localmodel::kee_embed(
        tape,
        store,
        cfg,
        &dataset.titles[item as usize],
        &dataset.descs[item as usize],
    )?;
    cache.insert(item, node);
    Ok(node)
}

/// Aggregated entity embedding ê, shared across a tape.
fn cached_entity(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &GlobalCfg,
    plan: &NeighborPlan,
    cache: &mut HashMap<u32, NodeId>,
    entity: u32,
) -> Result<NodeId> {
    if let Some(&node) = cache.get(&entity) {
        return Ok(node);
    }
    let node = globalmodel::entity_embed(tape, store, cfg, plan, entity)?;
    cache.insert(entity, node);
    Ok(node)
}

/// Forward a batch through both towers and the gate on one tape. Returns
/// the p^l, p^g, p^f columns (`[n,1]` each); disabled towers contribute a
/// constant 0.5 column with no gradient path.
fn forward_batch(
    tape: &mut Tape,
    store: &ParamStore,
    dataset: &Dataset,
    urg: &Urg,
    cfg: &TrainConfig,
    plan: &NeighborPlan,
    batch: &[Example],
) -> Result<(NodeId, NodeId, NodeId)> {
    let n = batch.len();
    let lcfg = cfg.local_cfg();
    let gcfg = cfg.global_cfg();
    fn half_column(tape: &mut Tape, n: usize) -> Result<NodeId> {
        Ok(tape.constant(Tensor::from_vec(&[n, 1], vec![0.5; n])?))
    }
    let p_l = if cfg.mode == FusionMode::GlobalOnly {
        half_column(tape, n)?
    } else {
        let mut kee: HashMap<u32, NodeId> = HashMap::new();
        let mut feats = Vec::with_capacity(n);
        for ex in batch {
            let cand = cached_kee(tape, store, &lcfg, dataset, &mut kee, ex.item)?;
            // The candidate never attends to itself: leaving it in its own
            // history lets attention learn exact-match lookup instead of
            // taste, which transfers to nothing at evaluation time.
            let full = &dataset.histories[ex.user as usize];
            let recent = &full[full.len().saturating_sub(cfg.history_max)..];
            let history: Vec<NodeId> = recent
                .iter()
                .filter(|&&it| it != ex.item)
                .map(|&it| cached_kee(tape, store, &lcfg, dataset, &mut kee, it))
                .collect::<Result<_>>()?;
            feats.push(localmodel::pair_features(tape, store, &lcfg, &history, cand)?);
        }
        let x = tape.stack_rows(&feats)?;
        prediction_head(tape, store, "local.head", x, lcfg.slope)?
    };
    let p_g = if cfg.mode == FusionMode::LocalOnly {
        half_column(tape, n)?
    } else {
        let mut ents: HashMap<u32, NodeId> = HashMap::new();
        let mut feats = Vec::with_capacity(n);
        for ex in batch {
            let e_u = cached_entity(tape, store, &gcfg, plan, &mut ents, urg.user_entity(ex.user))?;
            let e_m = cached_entity(tape, store, &gcfg, plan, &mut ents, urg.item_entity(ex.item))?;
            feats.push(tape.concat(&[e_u, e_m])?);
        }
        let x = tape.stack_rows(&feats)?;
        prediction_head(tape, store, "global.head", x, gcfg.slope)?
    };
    let p_f = fuse_columns(tape, store, p_l, p_g)?;
    Ok((p_l, p_g, p_f))
}

/// The phase-B objective for one batch on one tape: summed cross-entropy of
/// the fused probabilities against the batch labels. Exposed so gradient
/// audits can differentiate exactly what training differentiates.
pub fn batch_ce_loss(
    tape: &mut Tape,
    store: &ParamStore,
    dataset: &Dataset,
    urg: &Urg,
    cfg: &TrainConfig,
    plan: &NeighborPlan,
    batch: &[Example],
) -> Result<NodeId> {
    let (_, _, p_f) = forward_batch(tape, store, dataset, urg, cfg, plan, batch)?;
    let flat = tape.reshape(p_f, &[batch.len()])?;
    let labels: Vec<f64> = batch.iter().map(|e| e.label as f64).collect();
    ce_loss(tape, flat, &labels)
}

/// Joint training: each epoch runs phase A (margin ranking over URG
/// triples, KGE parameters only, skipped in local-only mode) and then
/// phase B (cross-entropy over shuffled click batches, dense Adam over
/// every parameter). Deterministic for a fixed config.
pub fn train(dataset: &Dataset, urg: &Urg, cfg: &TrainConfig) -> Result<DuetModel> {
    cfg.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::State("dataset has no training examples".into()));
    }
    if urg.n_users != dataset.users.len() || urg.n_items != dataset.items.len() {
        return Err(Error::State(format!(
            "URG was built over {}×{} users×items but the dataset has {}×{}",
            urg.n_users,
            urg.n_items,
            dataset.users.len(),
            dataset.items.len()
        )));
    }
    check_text_lengths(dataset, cfg.window)?;
    let mut store = ParamStore::new();
    register(&mut store, cfg, dataset, urg)?;
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let kg_loss = if cfg.mode == FusionMode::LocalOnly {
            0.0
        } else {
            let mut rng = substream_n(cfg.seed, "phase-a", epoch as u64);
            let loss = globalmodel::kg_epoch(
                &mut store,
                urg,
                cfg.gamma,
                cfg.neg_ratio,
                cfg.batch_size,
                &adam,
                &mut rng,
            )?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite KG loss in phase A of epoch {epoch}"
                )));
            }
            loss
        };

        let plan = NeighborPlan::training(
            urg,
            cfg.sample_size,
            &mut substream_n(cfg.seed, "neighbor-plan", epoch as u64),
        )?;
        let mut order: Vec<usize> = (0..dataset.train.len()).collect();
        order.shuffle(&mut substream_n(cfg.seed, "phase-b", epoch as u64));
        let mut ce_sum = 0.0;
        let mut scored = Vec::with_capacity(order.len());
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Example> = chunk.iter().map(|&i| dataset.train[i]).collect();
            let mut tape = Tape::new();
            let (_, _, p_f) = forward_batch(&mut tape, &store, dataset, urg, cfg, &plan, &batch)?;
            let flat = tape.reshape(p_f, &[batch.len()])?;
            let labels: Vec<f64> = batch.iter().map(|e| e.label as f64).collect();
            let loss = ce_loss(&mut tape, flat, &labels)?;
            let batch_ce = tape.scalar(loss)?;
            if !batch_ce.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite CE loss in phase B of epoch {epoch}, batch {bi}"
                )));
            }
            ce_sum += batch_ce;
            for (ex, &p) in batch.iter().zip(tape.value(flat).data()) {
                scored.push(ScoredExample {
                    user: ex.user,
                    item: ex.item,
                    label: ex.label,
                    score: p,
                });
            }
            tape.backward(loss, &mut store)?;
            store.adam_step(&adam)?;
        }
        let ce_loss = ce_sum / dataset.train.len() as f64;
        // Single-class toy train sets get a neutral 0.5.
        let train_auc = crate::evalkit::auc(&scored).unwrap_or(0.5);
        log.push(EpochLog {
            epoch,
            kg_loss,
            ce_loss,
            train_auc,
        });
    }
    Ok(DuetModel {
        store,
        cfg: cfg.clone(),
        log,
    })
}

/// Frozen-model scorer: owns the evaluation neighborhood plan so repeated
/// calls stay pure and cheap.
pub struct Predictor<'a> {
    store: &'a ParamStore,
    cfg: &'a TrainConfig,
    dataset: &'a Dataset,
    urg: &'a Urg,
    plan: NeighborPlan,
}

impl DuetModel {
    pub fn predictor<'a>(&'a self, dataset: &'a Dataset, urg: &'a Urg) -> Result<Predictor<'a>> {
        check_text_lengths(dataset, self.cfg.window)?;
        Ok(Predictor {
            store: &self.store,
            cfg: &self.cfg,
            dataset,
            urg,
            plan: NeighborPlan::evaluation(urg, self.cfg.seed),
        })
    }
}

impl Predictor<'_> {
    /// (p^l, p^g, p^f) for raw ids; unknown ids fail by name.
    pub fn predict(&self, user_id: &str, item_id: &str) -> Result<(f64, f64, f64)> {
        let &user = self
            .dataset
            .user_index
            .get(user_id)
            .ok_or_else(|| Error::Lookup(format!("user {user_id:?}")))?;
        let &item = self
            .dataset
            .item_index
            .get(item_id)
            .ok_or_else(|| Error::Lookup(format!("item {item_id:?}")))?;
        self.predict_index(user, item)
    }

    /// (p^l, p^g, p^f) for dense indices.
    pub fn predict_index(&self, user: u32, item: u32) -> Result<(f64, f64, f64)> {
        if user as usize >= self.dataset.users.len() {
            return Err(Error::Lookup(format!("user index {user}")));
        }
        if item as usize >= self.dataset.items.len() {
            return Err(Error::Lookup(format!("item index {item}")));
        }
        let example = Example {
            user,
            item,
            label: 0,
            order_key: -1,
        };
        let mut tape = Tape::new();
        let (p_l, p_g, p_f) = forward_batch(
            &mut tape,
            self.store,
            self.dataset,
            self.urg,
            self.cfg,
            &self.plan,
            &[example],
        )?;
        Ok((
            tape.scalar(p_l)?,
            tape.scalar(p_g)?,
            tape.scalar(p_f)?,
        ))
    }

    /// Score a slice of labeled examples with p^f, ready for the metrics.
    pub fn score_examples(&self, examples: &[Example]) -> Result<Vec<ScoredExample>> {
        examples
            .iter()
            .map(|e| {
                let (_, _, p_f) = self.predict_index(e.user, e.item)?;
                Ok(ScoredExample {
                    user: e.user,
                    item: e.item,
                    label: e.label,
                    score: p_f,
                })
            })
            .collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    config: TrainConfig,
    stats: Stats,
}

/// `<checkpoint>.json`, next to the tensor archive.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

/// Write the tensor archive plus a JSON sidecar carrying the TrainConfig
/// and the dataset stats it was trained against.
pub fn save_checkpoint(model: &DuetModel, stats: &Stats, path: &Path) -> Result<()> {
    model.store.save(path)?;
    let sidecar = Sidecar {
        config: model.cfg.clone(),
        stats: stats.clone(),
    };
    let text = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::Checkpoint(format!("sidecar encode: {e}")))?;
    let sp = sidecar_path(path);
    std::fs::write(&sp, text + "\n").map_err(|e| Error::io(&sp, e))
}

/// Load a checkpoint and its sidecar. The log is not persisted; the
/// returned model carries an empty one.
pub fn load_checkpoint(path: &Path) -> Result<(DuetModel, Stats)> {
    let store = ParamStore::load(path)?;
    let sp = sidecar_path(path);
    let text = std::fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("sidecar {}: {e}", sp.display())))?;
    Ok((
        DuetModel {
            store,
            cfg: sidecar.config,
            log: Vec::new(),
        },
        sidecar.stats,
    ))
}
