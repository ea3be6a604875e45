//! The global model: TransR embeddings over the unified relation graph,
//! knowledge-aware attention aggregation of one-hop neighborhoods, and the
//! global click-probability head.

pub mod embed;
pub mod transr;
pub mod urg;

pub use embed::{
    attention_weights, concat_aggregate, entity_embed, global_predict, neighbor_aggregate,
    pair_features, register_net, NeighborPlan,
};
pub use transr::{
    corrupt_triple, is_kge_param, kg_epoch, kg_margin_loss, margin_satisfaction, register_kg,
    transr_score, transr_score_value, ENT_EMB, REL_EMB,
};
pub use urg::{build_urg, Triple, Urg, INTERACT};

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numkit::ParamStore;

#[derive(Debug, Clone, Copy)]
pub struct GlobalCfg {
    /// Entity/relation embedding dim; projections are square k×k.
    pub k: usize,
    /// LeakyReLU slope everywhere.
    pub slope: f64,
    /// Neighbors sampled per entity during training.
    pub sample_size: usize,
}

impl GlobalCfg {
    pub fn new(k: usize, slope: f64, sample_size: usize) -> GlobalCfg {
        GlobalCfg {
            k,
            slope,
            sample_size,
        }
    }
}

/// Register every global-model parameter: KGE tables, then the attention,
/// aggregation, and head networks.
pub fn register(
    store: &mut ParamStore,
    cfg: &GlobalCfg,
    n_entities: usize,
    n_relations: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    register_kg(store, cfg, n_entities, n_relations, rng)?;
    register_net(store, cfg, rng)
}
