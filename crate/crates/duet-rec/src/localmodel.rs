//! The local model: a CNN item encoder over title and description tokens
//! (KEE), attention over the user's interaction history against the
//! candidate item (HAN), and a sigmoid MLP click head.
//!
//! Checkpoint names: `local.word_emb`, `local.cnn.{w,b}`,
//! `local.kee.{w1,b1,w2,b2}`, `local.han.{w1,b1,w2,b2,default_user}`,
//! `local.head.{w1,b1,w2,b2}`.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{prediction_head, register_linear, register_mlp};
use crate::numkit::tape::{NodeId, Tape};
use crate::numkit::tensor::Tensor;
use crate::numkit::ParamStore;

pub const WORD_EMB: &str = "local.word_emb";
pub const CNN_W: &str = "local.cnn.w";
pub const CNN_B: &str = "local.cnn.b";
pub const DEFAULT_USER: &str = "local.han.default_user";

#[derive(Debug, Clone, Copy)]
pub struct LocalCfg {
    /// Word embedding dim = CNN filter count = hidden widths.
    pub d: usize,
    /// CNN window size (tri-gram by default).
    pub window: usize,
    /// LeakyReLU slope everywhere.
    pub slope: f64,
}

impl LocalCfg {
    pub fn new(d: usize, window: usize, slope: f64) -> LocalCfg {
        LocalCfg { d, window, slope }
    }
}

/// Register every local-model parameter. The PAD row of the word embedding
/// starts at zero (it stays trainable like everything else).
pub fn register(
    store: &mut ParamStore,
    cfg: &LocalCfg,
    vocab_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let d = cfg.d;
    if vocab_size < 2 {
        return Err(Error::Config("vocab must hold at least PAD and UNK".into()));
    }
    let mut word_emb = Tensor::embedding(vocab_size, d, rng);
    word_emb.row_mut(0).fill(0.0);
    store.register(WORD_EMB, word_emb)?;
    store.register(
        CNN_W,
        Tensor::glorot(&[d, cfg.window, d], cfg.window * d, d, rng),
    )?;
    store.register(CNN_B, Tensor::zeros(&[d]))?;
    // KEE MLP: [CNN(title) ⊔ CNN(desc)] → d → d.
    register_linear(store, "local.kee", 1, 2 * d, d, rng)?;
    register_linear(store, "local.kee", 2, d, d, rng)?;
    // HAN attention net: [s_hist ⊔ s_cand] → d → scalar logit.
    register_mlp(store, "local.han", 2 * d, d, 1, rng)?;
    store.register(DEFAULT_USER, Tensor::embedding(1, d, rng).reshaped(&[d])?)?;
    // Click head over [e_u ⊔ s_cand].
    register_mlp(store, "local.head", 2 * d, d, 1, rng)
}

/// KEE item encoding: shared CNN filters over title and description,
/// max-pooled per filter, concatenated, then a one-hidden-layer MLP.
/// Returns a rank-1 `[d]` node.
pub fn kee_embed(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &LocalCfg,
    title: &[u32],
    desc: &[u32],
) -> Result<NodeId> {
    let w = tape.param(store, CNN_W)?;
    let b = tape.param(store, CNN_B)?;
    let pooled_title = conv_pool(tape, store, w, b, cfg.window, title)?;
    let pooled_desc = conv_pool(tape, store, w, b, cfg.window, desc)?;
    let cat = tape.concat(&[pooled_title, pooled_desc])?;
    let x = tape.reshape(cat, &[1, 2 * cfg.d])?;
    let s = crate::layers::mlp(tape, store, "local.kee", x, cfg.slope)?;
    tape.reshape(s, &[cfg.d])
}

fn conv_pool(
    tape: &mut Tape,
    store: &ParamStore,
    w: NodeId,
    b: NodeId,
    window: usize,
    tokens: &[u32],
) -> Result<NodeId> {
    if tokens.is_empty() {
        return Err(Error::Argument("cannot encode an empty token sequence".into()));
    }
    // Trailing PAD is storage, not text: pooling over all-PAD windows lets a
    // constant activation win the max for every item, which erases the signal.
    // Keep at least one window's worth of tokens so all-PAD input still pools.
    let real = tokens.iter().rposition(|&t| t != 0).map_or(0, |p| p + 1);
    let kept = &tokens[..real.max(window).min(tokens.len())];
    let indices: Vec<usize> = kept.iter().map(|&t| t as usize).collect();
    let emb = tape.gather(store, WORD_EMB, &indices)?;
    tape.conv_max(emb, w, b)
}

/// HAN attention weights of each history item against the candidate:
/// softmax over `W2ᵀ·LeakyReLU(W1 [s_hist ⊔ s_cand] + b1) + b2`.
/// Returns a rank-1 probability vector node of length `history.len()`.
pub fn han_weights(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &LocalCfg,
    history: &[NodeId],
    candidate: NodeId,
) -> Result<NodeId> {
    if history.is_empty() {
        return Err(Error::Argument("attention needs at least one history item".into()));
    }
    let pairs: Vec<NodeId> = history
        .iter()
        .map(|&h| tape.concat(&[h, candidate]))
        .collect::<Result<_>>()?;
    let stacked = tape.stack_rows(&pairs)?;
    let logits = crate::layers::mlp(tape, store, "local.han", stacked, cfg.slope)?;
    let flat = tape.reshape(logits, &[history.len()])?;
    tape.softmax(flat)
}

/// Local user embedding: the attention-weighted sum of history embeddings,
/// or the learned default-user vector when the history is empty.
pub fn user_embedding(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &LocalCfg,
    history: &[NodeId],
    candidate: NodeId,
) -> Result<NodeId> {
    if history.is_empty() {
        return tape.param(store, DEFAULT_USER);
    }
    let alpha = han_weights(tape, store, cfg, history, candidate)?;
    let alpha_row = tape.reshape(alpha, &[1, history.len()])?;
    let hist = tape.stack_rows(history)?;
    let e = tape.matmul(alpha_row, hist)?;
    tape.reshape(e, &[cfg.d])
}

/// Pair feature `[e_u ⊔ s_cand]` as a rank-1 `[2d]` node, ready for the
/// click head (stacked across a batch by the caller).
pub fn pair_features(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &LocalCfg,
    history: &[NodeId],
    candidate: NodeId,
) -> Result<NodeId> {
    let e_u = user_embedding(tape, store, cfg, history, candidate)?;
    tape.concat(&[e_u, candidate])
}

/// Click probability for one user/item pair from token sequences (the
/// single-example path; training stacks [`pair_features`] rows instead).
pub fn predict(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &LocalCfg,
    history_tokens: &[(&[u32], &[u32])],
    title: &[u32],
    desc: &[u32],
) -> Result<NodeId> {
    let candidate = kee_embed(tape, store, cfg, title, desc)?;
    let history: Vec<NodeId> = history_tokens
        .iter()
        .map(|(t, d)| kee_embed(tape, store, cfg, t, d))
        .collect::<Result<_>>()?;
    let feat = pair_features(tape, store, cfg, &history, candidate)?;
    let x = tape.reshape(feat, &[1, 2 * cfg.d])?;
    prediction_head(tape, store, "local.head", x, cfg.slope)
}
