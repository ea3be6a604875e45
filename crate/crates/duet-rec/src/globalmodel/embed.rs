//! Knowledge-aware attention over sampled one-hop neighborhoods and the
//! global prediction head.
//!
//! For an entity h with sampled neighbors t: π = softmax over
//! `W4ᵀ·σ(W5 (e_h ⊔ e_t) + b1) + b2`, e_N(h) = σ(W3·Σ π e_t + b), and
//! ê_h = σ(W6·(e_h ⊔ e_N(h))) with no bias; σ is LeakyReLU throughout.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::globalmodel::transr::ENT_EMB;
use crate::globalmodel::urg::Urg;
use crate::globalmodel::GlobalCfg;
use crate::layers::{mlp, prediction_head, register_mlp};
use crate::numkit::{NodeId, ParamStore, Tape, Tensor};
use crate::seeds::substream_n;

pub const AGG_W: &str = "global.agg.w";
pub const AGG_B: &str = "global.agg.b";
pub const CONCAT_W: &str = "global.agg.concat_w";
pub const NULL_NEIGHBOR: &str = "global.agg.null_neighbor";

/// Register the attention net, aggregation, and global head (the non-KGE
/// global parameters).
pub fn register_net(store: &mut ParamStore, cfg: &GlobalCfg, rng: &mut ChaCha8Rng) -> Result<()> {
    register_mlp(store, "global.attn", 2 * cfg.k, cfg.k, 1, rng)?;
    store.register(AGG_W, Tensor::glorot(&[cfg.k, cfg.k], cfg.k, cfg.k, rng))?;
    store.register(AGG_B, Tensor::zeros(&[cfg.k]))?;
    store.register(
        CONCAT_W,
        Tensor::glorot(&[2 * cfg.k, cfg.k], 2 * cfg.k, cfg.k, rng),
    )?;
    store.register(
        NULL_NEIGHBOR,
        Tensor::embedding(1, cfg.k, rng).reshaped(&[cfg.k])?,
    )?;
    register_mlp(store, "global.head", 2 * cfg.k, cfg.k, 1, rng)
}

/// π over the sampled neighbor set: softmax of per-neighbor MLP scores on
/// `[e_h ⊔ e_t]`. Rank-1, length `neighbors.len()`.
pub fn attention_weights(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &GlobalCfg,
    h_emb: NodeId,
    neighbors: &[NodeId],
) -> Result<NodeId> {
    if neighbors.is_empty() {
        return Err(Error::Argument("attention needs at least one neighbor".into()));
    }
    let pairs: Vec<NodeId> = neighbors
        .iter()
        .map(|&t| tape.concat(&[h_emb, t]))
        .collect::<Result<_>>()?;
    let stacked = tape.stack_rows(&pairs)?;
    let logits = mlp(tape, store, "global.attn", stacked, cfg.slope)?;
    let flat = tape.reshape(logits, &[neighbors.len()])?;
    tape.softmax(flat)
}

/// σ(W3·x + b) for a `[1,k]` aggregate x, flattened to `[k]`.
fn aggregate_sum(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &GlobalCfg,
    summed: NodeId,
) -> Result<NodeId> {
    let w = tape.param(store, AGG_W)?;
    let b = tape.param(store, AGG_B)?;
    let z = tape.matmul(summed, w)?;
    let z = tape.add_bias(z, b)?;
    let a = tape.leaky_relu(z, cfg.slope);
    tape.reshape(a, &[cfg.k])
}

/// e_N(h) = σ(W3·(Σ π_t e_t) + b) over the sampled neighbors.
pub fn neighbor_aggregate(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &GlobalCfg,
    pi: NodeId,
    neighbors: &[NodeId],
) -> Result<NodeId> {
    if neighbors.is_empty() {
        return Err(Error::Argument("aggregation needs at least one neighbor".into()));
    }
    let pi_row = tape.reshape(pi, &[1, neighbors.len()])?;
    let stacked = tape.stack_rows(neighbors)?;
    let summed = tape.matmul(pi_row, stacked)?;
    aggregate_sum(tape, store, cfg, summed)
}

/// ê_h = σ(W6·(e_h ⊔ e_N(h))), no bias, output dim k.
pub fn concat_aggregate(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &GlobalCfg,
    e_h: NodeId,
    e_n: NodeId,
) -> Result<NodeId> {
    let cat = tape.concat(&[e_h, e_n])?;
    let row = tape.reshape(cat, &[1, 2 * cfg.k])?;
    let w = tape.param(store, CONCAT_W)?;
    let z = tape.matmul(row, w)?;
    let a = tape.leaky_relu(z, cfg.slope);
    tape.reshape(a, &[cfg.k])
}

/// Neighbors at evaluation: the full sorted neighborhood, capped.
pub const EVAL_CAP: usize = 64;

/// Per-entity sampled neighbor lists, fixed for one epoch (training) or one
/// evaluation pass. Isolated entities get an empty list and fall back to the
/// learned null neighbor in [`entity_embed`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborPlan {
    pub neighbors: Vec<Vec<u32>>,
}

impl NeighborPlan {
    /// Training-time plan: `sample_size` slots per entity. Entities with
    /// degree above `sample_size` get a seeded sample without replacement;
    /// smaller neighborhoods cycle deterministically to fill the slots.
    pub fn training(urg: &Urg, sample_size: usize, rng: &mut ChaCha8Rng) -> Result<NeighborPlan> {
        if sample_size == 0 {
            return Err(Error::Argument("sample_size must be ≥ 1".into()));
        }
        let mut neighbors = Vec::with_capacity(urg.n_entities());
        for adj in &urg.adjacency {
            let list = if adj.is_empty() {
                Vec::new()
            } else if adj.len() <= sample_size {
                (0..sample_size).map(|i| adj[i % adj.len()].1).collect()
            } else {
                sample_sorted(adj, sample_size, rng)
            };
            neighbors.push(list);
        }
        Ok(NeighborPlan { neighbors })
    }

    /// Evaluation-time plan: the full sorted neighborhood, seed-sampled down
    /// only when degree exceeds [`EVAL_CAP`]. Each entity's list depends only
    /// on the seed and its own adjacency.
    pub fn evaluation(urg: &Urg, seed: u64) -> NeighborPlan {
        let neighbors = urg
            .adjacency
            .iter()
            .enumerate()
            .map(|(e, adj)| {
                if adj.len() <= EVAL_CAP {
                    adj.iter().map(|&(_, n)| n).collect()
                } else {
                    let mut rng = substream_n(seed, "eval-neighbors", e as u64);
                    sample_sorted(adj, EVAL_CAP, &mut rng)
                }
            })
            .collect();
        NeighborPlan { neighbors }
    }
}

/// `count` distinct adjacency entries by partial Fisher–Yates, re-sorted.
fn sample_sorted(adj: &[(u32, u32)], count: usize, rng: &mut ChaCha8Rng) -> Vec<u32> {
    use rand::Rng;
    let mut idx: Vec<usize> = (0..adj.len()).collect();
    for i in 0..count {
        let j = rng.random_range(i..adj.len());
        idx.swap(i, j);
    }
    let mut picked: Vec<u32> = idx[..count].iter().map(|&i| adj[i].1).collect();
    picked.sort_unstable();
    picked
}

/// ê for one entity: gather its embedding, attend over its planned
/// neighbors (or the null neighbor when isolated), aggregate, concat-mix.
pub fn entity_embed(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &GlobalCfg,
    plan: &NeighborPlan,
    entity: u32,
) -> Result<NodeId> {
    let h_row = tape.gather(store, ENT_EMB, &[entity as usize])?;
    let e_h = tape.reshape(h_row, &[cfg.k])?;
    let planned = plan
        .neighbors
        .get(entity as usize)
        .ok_or_else(|| Error::Lookup(format!("entity {entity} outside neighbor plan")))?;
    let e_n = if planned.is_empty() {
        let null = tape.param(store, NULL_NEIGHBOR)?;
        let row = tape.reshape(null, &[1, cfg.k])?;
        aggregate_sum(tape, store, cfg, row)?
    } else {
        let nodes: Vec<NodeId> = planned
            .iter()
            .map(|&n| {
                let row = tape.gather(store, ENT_EMB, &[n as usize])?;
                tape.reshape(row, &[cfg.k])
            })
            .collect::<Result<_>>()?;
        let pi = attention_weights(tape, store, cfg, e_h, &nodes)?;
        neighbor_aggregate(tape, store, cfg, pi, &nodes)?
    };
    concat_aggregate(tape, store, cfg, e_h, e_n)
}

/// Global pair feature `[ê_u ⊔ ê_m]` as a rank-1 `[2k]` node.
pub fn pair_features(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &GlobalCfg,
    plan: &NeighborPlan,
    user_entity: u32,
    item_entity: u32,
) -> Result<NodeId> {
    let e_u = entity_embed(tape, store, cfg, plan, user_entity)?;
    let e_m = entity_embed(tape, store, cfg, plan, item_entity)?;
    tape.concat(&[e_u, e_m])
}

/// p^g for one user/item pair (single-example path; training stacks
/// [`pair_features`] rows instead).
pub fn global_predict(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &GlobalCfg,
    plan: &NeighborPlan,
    user_entity: u32,
    item_entity: u32,
) -> Result<NodeId> {
    let feat = pair_features(tape, store, cfg, plan, user_entity, item_entity)?;
    let x = tape.reshape(feat, &[1, 2 * cfg.k])?;
    prediction_head(tape, store, "global.head", x, cfg.slope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::globalmodel::urg::tests::{pos, toy_dataset, urg_from_parts};
    use crate::globalmodel::urg::{build_urg, Triple};
    use crate::globalmodel::{register, transr};
    use crate::numkit::check_gradients;
    use crate::seeds::substream;

    fn cfg() -> GlobalCfg {
        GlobalCfg::new(4, 0.2, 3)
    }

    fn fresh_store(n_entities: usize, n_relations: usize, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        register(
            &mut store,
            &cfg(),
            n_entities,
            n_relations,
            &mut substream(seed, "init"),
        )
        .unwrap();
        store
    }

    fn tr(head: u32, relation: u32, tail: u32) -> Triple {
        Triple {
            head,
            relation,
            tail,
        }
    }

    #[test]
    fn registration_produces_stable_names() {
        let store = fresh_store(5, 2, 1);
        let names: Vec<&str> = store.names().collect();
        assert_eq!(
            names,
            vec![
                "global.agg.b",
                "global.agg.concat_w",
                "global.agg.null_neighbor",
                "global.agg.w",
                "global.attn.b1",
                "global.attn.b2",
                "global.attn.w1",
                "global.attn.w2",
                "global.ent_emb",
                "global.head.b1",
                "global.head.b2",
                "global.head.w1",
                "global.head.w2",
                "global.proj.0",
                "global.proj.1",
                "global.rel_emb",
            ]
        );
        assert_eq!(store.get(ENT_EMB).unwrap().shape(), &[5, 4]);
        assert_eq!(store.get("global.proj.0").unwrap().shape(), &[4, 4]);
        assert_eq!(store.get(CONCAT_W).unwrap().shape(), &[8, 4]);
    }

    #[test]
    fn identical_neighbors_get_uniform_weights() {
        let store = fresh_store(6, 1, 2);
        let mut tape = Tape::new();
        let h = tape.gather(&store, ENT_EMB, &[0]).unwrap();
        let h = tape.reshape(h, &[4]).unwrap();
        let t = tape.gather(&store, ENT_EMB, &[3]).unwrap();
        let t = tape.reshape(t, &[4]).unwrap();
        let pi = attention_weights(&mut tape, &store, &cfg(), h, &[t, t, t, t]).unwrap();
        for &w in tape.value(pi).data() {
            assert!((w - 0.25).abs() < 1e-15);
        }
        let single = attention_weights(&mut tape, &store, &cfg(), h, &[t]).unwrap();
        assert_eq!(tape.value(single).data(), &[1.0]);
    }

    #[test]
    fn attention_matches_independent_forward() {
        let store = fresh_store(8, 1, 3);
        let c = cfg();
        let mut tape = Tape::new();
        let nodes: Vec<NodeId> = (0..4)
            .map(|e| {
                let row = tape.gather(&store, ENT_EMB, &[e]).unwrap();
                tape.reshape(row, &[c.k]).unwrap()
            })
            .collect();
        let pi = attention_weights(&mut tape, &store, &c, nodes[0], &nodes[1..]).unwrap();
        let got = tape.value(pi).data().to_vec();

        // Straight-line reimplementation from the raw tensors.
        let ent = store.get(ENT_EMB).unwrap();
        let w1 = store.get("global.attn.w1").unwrap();
        let b1 = store.get("global.attn.b1").unwrap();
        let w2 = store.get("global.attn.w2").unwrap();
        let b2 = store.get("global.attn.b2").unwrap();
        let leaky = |x: f64| if x > 0.0 { x } else { c.slope * x };
        let logits: Vec<f64> = (1..4)
            .map(|t| {
                let x: Vec<f64> = ent.row(0).iter().chain(ent.row(t)).copied().collect();
                let mut z = 0.0;
                for j in 0..c.k {
                    let mut acc = b1.data()[j];
                    for (i, &xi) in x.iter().enumerate() {
                        acc += xi * w1.get2(i, j);
                    }
                    z += leaky(acc) * w2.get2(j, 0);
                }
                z + b2.data()[0]
            })
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
        let total: f64 = exps.iter().sum();
        for (g, e) in got.iter().zip(&exps) {
            assert!((g - e / total).abs() < 1e-12, "{got:?} vs {exps:?}");
        }
    }

    #[test]
    fn duplicated_neighbor_splits_its_weight() {
        let store = fresh_store(6, 1, 4);
        let c = cfg();
        let mut tape = Tape::new();
        let grab = |tape: &mut Tape, e: usize| {
            let row = tape.gather(&store, ENT_EMB, &[e]).unwrap();
            tape.reshape(row, &[c.k]).unwrap()
        };
        let h = grab(&mut tape, 0);
        let a = grab(&mut tape, 1);
        let b = grab(&mut tape, 2);
        let base = attention_weights(&mut tape, &store, &c, h, &[a, b]).unwrap();
        let dup = attention_weights(&mut tape, &store, &c, h, &[a, a, b]).unwrap();
        let base = tape.value(base).data().to_vec();
        let dup = tape.value(dup).data().to_vec();
        // Equal logits ⇒ exactly equal weights for the copies.
        assert_eq!(dup[0], dup[1]);
        // 1/π'_a = 1/π_a + 1 when a is doubled (softmax algebra).
        assert!((1.0 / dup[0] - 1.0 / base[0] - 1.0).abs() < 1e-9);
        assert!((dup.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn aggregate_zero_weights_passes_bias_through_leaky() {
        let c = cfg();
        let mut store = fresh_store(4, 1, 5);
        *store.get_mut(AGG_W).unwrap() = Tensor::zeros(&[c.k, c.k]);
        *store.get_mut(AGG_B).unwrap() = Tensor::vector(&[0.5, -1.0, 0.0, 2.0]);
        let mut tape = Tape::new();
        let t = tape.gather(&store, ENT_EMB, &[1]).unwrap();
        let t = tape.reshape(t, &[c.k]).unwrap();
        let pi = tape.constant(Tensor::vector(&[1.0]));
        let out = neighbor_aggregate(&mut tape, &store, &c, pi, &[t]).unwrap();
        assert_eq!(tape.value(out).data(), &[0.5, -0.2, 0.0, 2.0]);
    }

    #[test]
    fn concentrated_pi_equals_singleton_aggregation() {
        let c = cfg();
        let store = fresh_store(6, 1, 6);
        let mut tape = Tape::new();
        let grab = |tape: &mut Tape, e: usize| {
            let row = tape.gather(&store, ENT_EMB, &[e]).unwrap();
            tape.reshape(row, &[c.k]).unwrap()
        };
        let t0 = grab(&mut tape, 2);
        let t1 = grab(&mut tape, 3);
        let t2 = grab(&mut tape, 4);
        let pi3 = tape.constant(Tensor::vector(&[0.0, 1.0, 0.0]));
        let spread = neighbor_aggregate(&mut tape, &store, &c, pi3, &[t0, t1, t2]).unwrap();
        let pi1 = tape.constant(Tensor::vector(&[1.0]));
        let single = neighbor_aggregate(&mut tape, &store, &c, pi1, &[t1]).unwrap();
        assert_eq!(tape.value(spread).data(), tape.value(single).data());
    }

    #[test]
    fn aggregate_matches_hand_computation() {
        let c = cfg();
        let store = fresh_store(8, 1, 7);
        let mut tape = Tape::new();
        let nodes: Vec<NodeId> = (2..6)
            .map(|e| {
                let row = tape.gather(&store, ENT_EMB, &[e]).unwrap();
                tape.reshape(row, &[c.k]).unwrap()
            })
            .collect();
        let weights = [0.4, 0.3, 0.2, 0.1];
        let pi = tape.constant(Tensor::vector(&weights));
        let out = neighbor_aggregate(&mut tape, &store, &c, pi, &nodes).unwrap();

        let ent = store.get(ENT_EMB).unwrap();
        let w3 = store.get(AGG_W).unwrap();
        let b = store.get(AGG_B).unwrap();
        let mut summed = vec![0.0; c.k];
        for (wt, e) in weights.iter().zip(2..6) {
            for j in 0..c.k {
                summed[j] += wt * ent.get2(e, j);
            }
        }
        for j in 0..c.k {
            let mut z = b.data()[j];
            for i in 0..c.k {
                z += summed[i] * w3.get2(i, j);
            }
            let expect = if z > 0.0 { z } else { c.slope * z };
            assert!((tape.value(out).data()[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn concat_aggregate_projection_cases() {
        let c = cfg();
        let mut store = fresh_store(4, 1, 8);
        // W6 = [I ; 0]: ê = LeakyReLU(e_h).
        let mut w = Tensor::zeros(&[2 * c.k, c.k]);
        for i in 0..c.k {
            w.row_mut(i)[i] = 1.0;
        }
        *store.get_mut(CONCAT_W).unwrap() = w;
        let mut tape = Tape::new();
        let e_h = tape.constant(Tensor::vector(&[1.0, -2.0, 0.5, -0.5]));
        let e_n = tape.constant(Tensor::vector(&[9.0, 9.0, 9.0, 9.0]));
        let out = concat_aggregate(&mut tape, &store, &c, e_h, e_n).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, -0.4, 0.5, -0.1]);

        // Param nodes are memoized per tape, so a store edit needs a new one.
        *store.get_mut(CONCAT_W).unwrap() = Tensor::zeros(&[2 * c.k, c.k]);
        let mut tape = Tape::new();
        let e_h = tape.constant(Tensor::vector(&[1.0, -2.0, 0.5, -0.5]));
        let e_n = tape.constant(Tensor::vector(&[9.0, 9.0, 9.0, 9.0]));
        let out = concat_aggregate(&mut tape, &store, &c, e_h, e_n).unwrap();
        assert_eq!(tape.value(out).data(), &[0.0; 4]);
    }

    #[test]
    fn concat_aggregate_matches_independent_forward() {
        let c = cfg();
        let store = fresh_store(4, 1, 9);
        let mut tape = Tape::new();
        let hv = [0.3, -0.7, 1.1, 0.2];
        let nv = [-0.4, 0.6, -1.2, 0.9];
        let e_h = tape.constant(Tensor::vector(&hv));
        let e_n = tape.constant(Tensor::vector(&nv));
        let out = concat_aggregate(&mut tape, &store, &c, e_h, e_n).unwrap();
        let w = store.get(CONCAT_W).unwrap();
        let x: Vec<f64> = hv.iter().chain(nv.iter()).copied().collect();
        for j in 0..c.k {
            let z: f64 = (0..2 * c.k).map(|i| x[i] * w.get2(i, j)).sum();
            let expect = if z > 0.0 { z } else { c.slope * z };
            assert!((tape.value(out).data()[j] - expect).abs() < 1e-12);
        }
    }

    fn toy_urg() -> Urg {
        let ds = toy_dataset(2, 3, vec![pos(0, 0), pos(0, 1), pos(1, 1), pos(1, 2)], vec![]);
        let kg = vec![
            crate::dataio::RawTriple {
                head: "i0".into(),
                relation: "genre".into(),
                tail: "g0".into(),
            },
            crate::dataio::RawTriple {
                head: "i2".into(),
                relation: "genre".into(),
                tail: "g0".into(),
            },
        ];
        build_urg(&ds, &kg).unwrap()
    }

    #[test]
    fn training_plan_cycles_small_neighborhoods() {
        let urg = toy_urg();
        let mut rng = substream(10, "plan");
        let plan = NeighborPlan::training(&urg, 5, &mut rng).unwrap();
        // u0 interacts i0, i1 → entities 2, 3; cycle to 5 slots.
        assert_eq!(plan.neighbors[0], vec![2, 3, 2, 3, 2]);
        // Degree-1 entity is constant regardless of seed.
        let chain = urg_from_parts(3, 1, vec![tr(0, 0, 1), tr(1, 0, 2)]);
        for seed in 0..4 {
            let plan = NeighborPlan::training(&chain, 5, &mut substream(seed, "p")).unwrap();
            assert_eq!(plan.neighbors[0], vec![1; 5]);
        }
    }

    #[test]
    fn training_plan_samples_large_neighborhoods_without_replacement() {
        // One hub entity with 20 distinct neighbors.
        let triples: Vec<Triple> = (1..21).map(|t| tr(0, 0, t)).collect();
        let urg = urg_from_parts(21, 1, triples);
        let a = NeighborPlan::training(&urg, 8, &mut substream(3, "plan")).unwrap();
        let b = NeighborPlan::training(&urg, 8, &mut substream(3, "plan")).unwrap();
        assert_eq!(a, b);
        let picked = &a.neighbors[0];
        assert_eq!(picked.len(), 8);
        let set: std::collections::BTreeSet<u32> = picked.iter().copied().collect();
        assert_eq!(set.len(), 8, "duplicates in {picked:?}");
        assert!(picked.windows(2).all(|w| w[0] <= w[1]));
        assert!(picked.iter().all(|&n| (1u32..21).contains(&n)));
        // A different seed eventually picks a different subset.
        let c = NeighborPlan::training(&urg, 8, &mut substream(4, "plan")).unwrap();
        assert_ne!(a.neighbors[0], c.neighbors[0]);
    }

    #[test]
    fn evaluation_plan_keeps_full_neighborhood_under_cap() {
        let urg = toy_urg();
        let plan = NeighborPlan::evaluation(&urg, 42);
        for (e, adj) in urg.adjacency.iter().enumerate() {
            let expect: Vec<u32> = adj.iter().map(|&(_, n)| n).collect();
            assert_eq!(plan.neighbors[e], expect);
        }
        // Over the cap: sampled down to EVAL_CAP, per-entity deterministic.
        let triples: Vec<Triple> = (1..101).map(|t| tr(0, 0, t)).collect();
        let big = urg_from_parts(101, 1, triples);
        let p1 = NeighborPlan::evaluation(&big, 7);
        let p2 = NeighborPlan::evaluation(&big, 7);
        assert_eq!(p1, p2);
        assert_eq!(p1.neighbors[0].len(), EVAL_CAP);
        let set: std::collections::BTreeSet<u32> = p1.neighbors[0].iter().copied().collect();
        assert_eq!(set.len(), EVAL_CAP);
        assert_ne!(p1.neighbors[0], NeighborPlan::evaluation(&big, 8).neighbors[0]);
    }

    #[test]
    fn isolated_entity_uses_null_neighbor() {
        // Entity 3 has no triples at all.
        let urg = urg_from_parts(4, 1, vec![tr(0, 0, 1), tr(1, 0, 2)]);
        let c = cfg();
        let store = fresh_store(4, 1, 11);
        let plan = NeighborPlan::evaluation(&urg, 0);
        assert!(plan.neighbors[3].is_empty());
        let mut tape = Tape::new();
        let got = entity_embed(&mut tape, &store, &c, &plan, 3).unwrap();

        // Second path: aggregate the null neighbor by hand.
        let e_h = tape.gather(&store, ENT_EMB, &[3]).unwrap();
        let e_h = tape.reshape(e_h, &[c.k]).unwrap();
        let null = tape.param(&store, NULL_NEIGHBOR).unwrap();
        let row = tape.reshape(null, &[1, c.k]).unwrap();
        let e_n = aggregate_sum(&mut tape, &store, &c, row).unwrap();
        let expect = concat_aggregate(&mut tape, &store, &c, e_h, e_n).unwrap();
        assert_eq!(tape.value(got).data(), tape.value(expect).data());
    }

    #[test]
    fn entity_embed_is_deterministic_and_finite() {
        let urg = toy_urg();
        let c = cfg();
        let store = fresh_store(urg.n_entities(), urg.n_relations(), 12);
        let plan = NeighborPlan::evaluation(&urg, 5);
        let run = |entity: u32| {
            let mut tape = Tape::new();
            let node = entity_embed(&mut tape, &store, &c, &plan, entity).unwrap();
            tape.value(node).data().to_vec()
        };
        for e in 0..urg.n_entities() as u32 {
            let a = run(e);
            assert_eq!(a, run(e));
            assert!(a.iter().all(|x| x.is_finite()));
            assert_eq!(a.len(), c.k);
        }
    }

    #[test]
    fn global_predict_head_cases() {
        let urg = toy_urg();
        let c = cfg();
        let mut store = fresh_store(urg.n_entities(), urg.n_relations(), 13);
        let plan = NeighborPlan::evaluation(&urg, 5);
        let mut tape = Tape::new();
        let p = global_predict(&mut tape, &store, &c, &plan, 0, urg.item_entity(2)).unwrap();
        let v = tape.scalar(p).unwrap();
        assert!(v > 0.0 && v < 1.0);

        // Zero head weights → sigmoid(b2).
        *store.get_mut("global.head.w1").unwrap() = Tensor::zeros(&[2 * c.k, c.k]);
        *store.get_mut("global.head.w2").unwrap() = Tensor::zeros(&[c.k, 1]);
        *store.get_mut("global.head.b2").unwrap() = Tensor::vector(&[0.7]);
        let mut tape = Tape::new();
        let p = global_predict(&mut tape, &store, &c, &plan, 1, urg.item_entity(0)).unwrap();
        let expect = 1.0 / (1.0 + (-0.7f64).exp());
        assert!((tape.scalar(p).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn global_pipeline_gradients_check_out() {
        let urg = toy_urg();
        let c = cfg();
        let mut store = fresh_store(urg.n_entities(), urg.n_relations(), 14);
        let mut rng = substream(14, "plan");
        let plan = NeighborPlan::training(&urg, c.sample_size, &mut rng).unwrap();
        let pairs = [
            (urg.user_entity(0), urg.item_entity(2)),
            (urg.user_entity(1), urg.item_entity(0)),
        ];
        let labels = [1.0, 0.0];
        let loss_of = |s: &ParamStore| -> crate::error::Result<f64> {
            let mut tape = Tape::new();
            let rows: Vec<NodeId> = pairs
                .iter()
                .map(|&(u, m)| pair_features(&mut tape, s, &c, &plan, u, m))
                .collect::<Result<_>>()?;
            let stacked = tape.stack_rows(&rows)?;
            let p = prediction_head(&mut tape, s, "global.head", stacked, c.slope)?;
            let flat = tape.reshape(p, &[labels.len()])?;
            let loss = tape.mean_bce(flat, &labels)?;
            tape.scalar(loss)
        };

        let mut tape = Tape::new();
        let rows: Vec<NodeId> = pairs
            .iter()
            .map(|&(u, m)| pair_features(&mut tape, &store, &c, &plan, u, m).unwrap())
            .collect();
        let stacked = tape.stack_rows(&rows).unwrap();
        let p = prediction_head(&mut tape, &store, "global.head", stacked, c.slope).unwrap();
        let flat = tape.reshape(p, &[labels.len()]).unwrap();
        let loss = tape.mean_bce(flat, &labels).unwrap();
        tape.backward(loss, &mut store).unwrap();
        // The entity table itself receives gradient through this path.
        assert!(store
            .grad(transr::ENT_EMB)
            .unwrap()
            .data()
            .iter()
            .any(|&g| g != 0.0));

        let report = check_gradients(&mut store, loss_of, 1e-5, 5).unwrap();
        assert!(
            report.passes(1e-4),
            "max rel err {} at {:?}",
            report.max_rel_err,
            report.worst
        );
    }
}
