//! TransR triple scoring and margin-ranking training over the URG.
//!
//! A triple (h, r, t) scores g_r(h,t) = ‖e_h·M_r + e_r − e_t·M_r‖₂² with a
//! relation-specific projection M_r; lower is more plausible. Training ranks
//! each true triple against a corrupted one under a hinge with margin γ.

use rand::Rng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::globalmodel::urg::{Triple, Urg};
use crate::globalmodel::GlobalCfg;
use crate::numkit::{AdamConfig, NodeId, ParamStore, Tape, Tensor};

pub const ENT_EMB: &str = "global.ent_emb";
pub const REL_EMB: &str = "global.rel_emb";

pub fn proj_name(relation: u32) -> String {
    format!("global.proj.{relation}")
}

pub fn is_kge_param(name: &str) -> bool {
    name == ENT_EMB || name == REL_EMB || name.starts_with("global.proj.")
}

/// Register entity/relation embeddings and one square projection per
/// relation.
pub fn register_kg(
    store: &mut ParamStore,
    cfg: &GlobalCfg,
    n_entities: usize,
    n_relations: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    store.register(ENT_EMB, Tensor::embedding(n_entities, cfg.k, rng))?;
    store.register(REL_EMB, Tensor::embedding(n_relations, cfg.k, rng))?;
    for r in 0..n_relations {
        store.register(
            &proj_name(r as u32),
            Tensor::glorot(&[cfg.k, cfg.k], cfg.k, cfg.k, rng),
        )?;
    }
    Ok(())
}

/// g_r(h,t) as a differentiable scalar node.
pub fn transr_score(tape: &mut Tape, store: &ParamStore, t: &Triple) -> Result<NodeId> {
    let h_emb = tape.gather(store, ENT_EMB, &[t.head as usize])?;
    let t_emb = tape.gather(store, ENT_EMB, &[t.tail as usize])?;
    let r_emb = tape.gather(store, REL_EMB, &[t.relation as usize])?;
    let m = tape.param(store, &proj_name(t.relation))?;
    let h_proj = tape.matmul(h_emb, m)?;
    let t_proj = tape.matmul(t_emb, m)?;
    let shifted = tape.add(h_proj, r_emb)?;
    let diff = tape.sub(shifted, t_proj)?;
    Ok(tape.sum_squares(diff))
}

/// g_r(h,t) straight from the store, for evaluation without a tape.
pub fn transr_score_value(store: &ParamStore, t: &Triple) -> Result<f64> {
    let ent = store.get(ENT_EMB)?;
    let rel = store.get(REL_EMB)?;
    let m = store.get(&proj_name(t.relation))?;
    let k = ent.cols();
    let h = ent.row(t.head as usize);
    let tl = ent.row(t.tail as usize);
    let r = rel.row(t.relation as usize);
    let mut g = 0.0;
    for j in 0..k {
        let mut d = r[j];
        for i in 0..k {
            d += (h[i] - tl[i]) * m.get2(i, j);
        }
        g += d * d;
    }
    Ok(g)
}

const CORRUPT_ATTEMPTS: usize = 100;

/// Replace head or tail (fair coin) with a uniform entity until the result
/// is not a URG triple.
pub fn corrupt_triple(t: &Triple, urg: &Urg, rng: &mut ChaCha8Rng) -> Result<Triple> {
    let n = urg.n_entities() as u32;
    for _ in 0..CORRUPT_ATTEMPTS {
        let corrupt_head: bool = rng.random();
        let e = rng.random_range(0..n);
        let cand = if corrupt_head {
            Triple { head: e, ..*t }
        } else {
            Triple { tail: e, ..*t }
        };
        if !urg.contains(&cand) {
            return Ok(cand);
        }
    }
    Err(Error::Sampling(format!(
        "no corruption of ({}, {}, {}) found in {CORRUPT_ATTEMPTS} draws",
        t.head, t.relation, t.tail
    )))
}

/// Σ max(0, g(true) + γ − g(corrupted)) over the batch, as a scalar node.
pub fn kg_margin_loss(
    tape: &mut Tape,
    store: &ParamStore,
    pairs: &[(Triple, Triple)],
    gamma: f64,
) -> Result<NodeId> {
    if pairs.is_empty() {
        return Err(Error::Argument("margin loss needs ≥ 1 pair".into()));
    }
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::Argument(format!("gamma must be positive, got {gamma}")));
    }
    let mut terms = Vec::with_capacity(pairs.len());
    for (pos, neg) in pairs {
        let g = transr_score(tape, store, pos)?;
        let g_neg = transr_score(tape, store, neg)?;
        let gap = tape.sub(g, g_neg)?;
        let margin = tape.add_const(gap, gamma);
        terms.push(tape.hinge(margin));
    }
    let stacked = tape.concat(&terms)?;
    Ok(tape.sum(stacked))
}

/// One margin-ranking pass over all URG triples in shuffled mini-batches:
/// each true triple is ranked against `neg_ratio` fresh corruptions, Adam
/// updates the KGE parameters only, and entity rows are re-clipped to
/// L2 ≤ 1 after every step. Relation rows stay unclipped: a self-loop
/// corruption (h,r,h) scores exactly ‖e_r‖², so capping relations at 1
/// would pin the γ=1 margin to the hinge boundary. Returns the mean
/// per-pair hinge loss.
pub fn kg_epoch(
    store: &mut ParamStore,
    urg: &Urg,
    gamma: f64,
    neg_ratio: usize,
    batch_size: usize,
    adam: &AdamConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if batch_size == 0 {
        return Err(Error::Argument("batch_size must be ≥ 1".into()));
    }
    if neg_ratio == 0 {
        return Err(Error::Argument("neg_ratio must be ≥ 1".into()));
    }
    if urg.triples.is_empty() {
        return Err(Error::State("URG has no triples to train on".into()));
    }
    let mut order: Vec<usize> = (0..urg.triples.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    for chunk in order.chunks(batch_size) {
        let mut pairs = Vec::with_capacity(chunk.len() * neg_ratio);
        for &ti in chunk {
            let pos = urg.triples[ti];
            for _ in 0..neg_ratio {
                let neg = corrupt_triple(&pos, urg, rng)?;
                pairs.push((pos, neg));
            }
        }
        let mut tape = Tape::new();
        let loss = kg_margin_loss(&mut tape, store, &pairs, gamma)?;
        total += tape.scalar(loss)?;
        tape.backward(loss, store)?;
        store.adam_step_where(adam, is_kge_param)?;
        store.l2_clip_rows(ENT_EMB, 1.0)?;
    }
    Ok(total / (urg.triples.len() * neg_ratio) as f64)
}

/// Fraction of URG triples with g(true) + γ ≤ g(fresh corruption).
pub fn margin_satisfaction(
    store: &ParamStore,
    urg: &Urg,
    gamma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut satisfied = 0usize;
    for t in &urg.triples {
        let neg = corrupt_triple(t, urg, rng)?;
        if transr_score_value(store, t)? + gamma <= transr_score_value(store, &neg)? {
            satisfied += 1;
        }
    }
    Ok(satisfied as f64 / urg.triples.len() as f64)
}
