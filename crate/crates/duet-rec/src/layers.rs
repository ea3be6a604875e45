//! Small shared layer helpers: registration of MLP blocks and the sigmoid
//! prediction head used by both sub-models.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numkit::tape::{NodeId, Tape};
use crate::numkit::tensor::Tensor;
use crate::numkit::ParamStore;

/// Register a `[fan_in, fan_out]` Glorot matrix and a zero bias under
/// `{prefix}.w{idx}` / `{prefix}.b{idx}`.
pub fn register_linear(
    store: &mut ParamStore,
    prefix: &str,
    idx: usize,
    fan_in: usize,
    fan_out: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    store.register(
        &format!("{prefix}.w{idx}"),
        Tensor::glorot(&[fan_in, fan_out], fan_in, fan_out, rng),
    )?;
    store.register(&format!("{prefix}.b{idx}"), Tensor::zeros(&[fan_out]))
}

/// Register a two-layer head `{prefix}.w1/b1/w2/b2`: `in_dim → hidden → out`.
pub fn register_mlp(
    store: &mut ParamStore,
    prefix: &str,
    in_dim: usize,
    hidden: usize,
    out: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    register_linear(store, prefix, 1, in_dim, hidden, rng)?;
    register_linear(store, prefix, 2, hidden, out, rng)
}

/// `x W1 + b1 → LeakyReLU → W2 + b2` over a `[n, in_dim]` batch.
pub fn mlp(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    x: NodeId,
    slope: f64,
) -> Result<NodeId> {
    let w1 = tape.param(store, &format!("{prefix}.w1"))?;
    let b1 = tape.param(store, &format!("{prefix}.b1"))?;
    let w2 = tape.param(store, &format!("{prefix}.w2"))?;
    let b2 = tape.param(store, &format!("{prefix}.b2"))?;
    let h = tape.matmul(x, w1)?;
    let h = tape.add_bias(h, b1)?;
    let h = tape.leaky_relu(h, slope);
    let z = tape.matmul(h, w2)?;
    tape.add_bias(z, b2)
}

/// Sigmoid MLP head over paired features: `[n, in_dim] → [n, 1]` of
/// probabilities.
pub fn prediction_head(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    features: NodeId,
    slope: f64,
) -> Result<NodeId> {
    let z = mlp(tape, store, prefix, features, slope)?;
    Ok(tape.sigmoid(z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::substream;

    #[test]
    fn zero_weight_head_outputs_sigmoid_of_bias() {
        let mut store = ParamStore::new();
        let mut rng = substream(1, "init");
        register_mlp(&mut store, "head", 4, 3, 1, &mut rng).unwrap();
        // Zero both weight matrices; biases already zero. Then set b2.
        store.get_mut("head.w1").unwrap().data_mut().fill(0.0);
        store.get_mut("head.w2").unwrap().data_mut().fill(0.0);
        store.get_mut("head.b2").unwrap().data_mut()[0] = 0.7;

        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(&[2, 4], vec![1.0; 8]).unwrap());
        let p = prediction_head(&mut tape, &store, "head", x, 0.2).unwrap();
        let expect = crate::numkit::tensor::sigmoid(0.7);
        for &v in tape.value(p).data() {
            assert!((v - expect).abs() < 1e-15);
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn batched_head_rows_match_single_example_rows() {
        let mut store = ParamStore::new();
        let mut rng = substream(2, "init");
        register_mlp(&mut store, "head", 6, 5, 1, &mut rng).unwrap();

        let rows: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..6).map(|j| ((i * 6 + j) as f64).sin()).collect())
            .collect();
        let mut tape = Tape::new();
        let stacked = {
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            tape.constant(Tensor::from_vec(&[4, 6], flat).unwrap())
        };
        let batched = prediction_head(&mut tape, &store, "head", stacked, 0.2).unwrap();
        for (i, row) in rows.iter().enumerate() {
            let mut t2 = Tape::new();
            let x = t2.constant(Tensor::from_vec(&[1, 6], row.clone()).unwrap());
            let p = prediction_head(&mut t2, &store, "head", x, 0.2).unwrap();
            // Bit-identical: same kernel, same accumulation order per row.
            assert_eq!(
                tape.value(batched).data()[i].to_bits(),
                t2.value(p).data()[0].to_bits(),
                "row {i}"
            );
        }
    }
}
