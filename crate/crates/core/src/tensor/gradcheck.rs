//! Central finite-difference gradient oracle.
//!
//! Independent of the tape: it re-evaluates a loss closure under +/-h
//! perturbations of each trainable element and compares against whatever
//! analytic gradients the caller accumulated. Used by tests as the ground
//! truth for every differentiable primitive and for full-model training
//! losses.

use super::params::ParamStore;
use crate::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub h: f64,
    /// Relative-error floor below which numerator noise is ignored.
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { h: 1e-5, abs_floor: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckOutcome {
    pub max_rel_err: f64,
    pub checked_elements: usize,
    /// "name[i]" of the worst element.
    pub worst: String,
}

/// Compare analytic grads (already accumulated in `store`) against central
/// finite differences of `loss` for every trainable element.
pub fn check_trainable(
    store: &mut ParamStore,
    cfg: GradCheckConfig,
    mut loss: impl FnMut(&ParamStore) -> Result<f64>,
) -> Result<GradCheckOutcome> {
    let names: Vec<String> =
        store.iter().filter(|p| p.trainable).map(|p| p.name.clone()).collect();
    let mut max_rel = 0.0f64;
    let mut worst = String::new();
    let mut checked = 0usize;
    for name in &names {
        let n = store.get(name).unwrap().value.numel();
        for i in 0..n {
            let analytic = store.get(name).unwrap().grad.data[i];
            let orig = store.get(name).unwrap().value.data[i];

            store.get_mut(name).unwrap().value.data[i] = orig + cfg.h;
            let fp = loss(store)?;
            store.get_mut(name).unwrap().value.data[i] = orig - cfg.h;
            let fm = loss(store)?;
            store.get_mut(name).unwrap().value.data[i] = orig;

            let fd = (fp - fm) / (2.0 * cfg.h);
            let denom = fd.abs().max(analytic.abs()).max(cfg.abs_floor);
            let rel = (fd - analytic).abs() / denom;
            // Both negligibly small: treat as agreement.
            let rel = if fd.abs() < cfg.abs_floor && analytic.abs() < cfg.abs_floor {
                0.0
            } else {
                rel
            };
            checked += 1;
            if rel > max_rel {
                max_rel = rel;
                worst = format!("{name}[{i}]");
            }
        }
    }
    Ok(GradCheckOutcome { max_rel_err: max_rel, checked_elements: checked, worst })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const PRIMITIVE_TOL: f64 = 1e-6;

    fn randn_store(specs: &[(&str, &[usize], f64)], seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        for (name, shape, std) in specs {
            s.insert(name, Tensor::randn(shape, *std, &mut rng), true).unwrap();
        }
        s
    }

    /// Run forward via `build`, backward via the tape, then verify against
    /// finite differences.
    fn assert_primitive_grads(
        store: &mut ParamStore,
        build: impl Fn(&mut Tape, &ParamStore) -> Result<crate::tensor::NodeId>,
    ) {
        store.zero_grads();
        let mut tape = Tape::new();
        let loss = build(&mut tape, store).unwrap();
        tape.backward(loss, store, 1.0).unwrap();
        let out = check_trainable(store, GradCheckConfig::default(), |s| {
            let mut t = Tape::new();
            let l = build(&mut t, s)?;
            Ok(t.value(l).data[0])
        })
        .unwrap();
        assert!(
            out.max_rel_err < PRIMITIVE_TOL,
            "max rel err {} at {} over {} elements",
            out.max_rel_err,
            out.worst,
            out.checked_elements
        );
    }

    #[test]
    fn matmul_chain_gradients() {
        let mut s = randn_store(&[("a", &[3, 4], 0.7), ("b", &[4, 2], 0.9)], 1);
        assert_primitive_grads(&mut s, |t, s| {
            let a = t.param(s, "a")?;
            let b = t.param(s, "b")?;
            let c = t.matmul(a, b)?;
            let sq = t.mul(c, c)?;
            t.sum_all(sq)
        });
    }

    #[test]
    fn matmul_bt_gradients() {
        let mut s = randn_store(&[("a", &[3, 5], 0.6), ("b", &[2, 5], 0.8)], 2);
        assert_primitive_grads(&mut s, |t, s| {
            let a = t.param(s, "a")?;
            let b = t.param(s, "b")?;
            let c = t.matmul_bt(a, b)?;
            let sq = t.mul(c, c)?;
            t.mean_all(sq)
        });
    }

    #[test]
    fn elementwise_and_bias_gradients() {
        let mut s =
            randn_store(&[("a", &[2, 3], 1.0), ("b", &[2, 3], 1.0), ("bias", &[3], 0.5)], 3);
        assert_primitive_grads(&mut s, |t, s| {
            let a = t.param(s, "a")?;
            let b = t.param(s, "b")?;
            let bias = t.param(s, "bias")?;
            let sum = t.add(a, b)?;
            let diff = t.sub(sum, b)?;
            let prod = t.mul(diff, b)?;
            let biased = t.add_bias(prod, bias)?;
            let scaled = t.scale(biased, 1.7)?;
            let act = t.silu(scaled)?;
            t.sum_all(act)
        });
    }

    #[test]
    fn masked_softmax_gradients() {
        let mut s = randn_store(&[("x", &[3, 5], 1.2)], 4);
        let mask: Vec<bool> = (0..15).map(|i| i % 4 != 0).collect();
        let weights: Vec<f64> = (0..15).map(|i| ((i * 7 + 3) % 5) as f64 - 2.0).collect();
        assert_primitive_grads(&mut s, move |t, s| {
            let x = t.param(s, "x")?;
            let y = t.masked_softmax(x, &mask)?;
            let w = t.input(Tensor::from_vec(&[3, 5], weights.clone())?)?;
            let p = t.mul(y, w)?;
            t.sum_all(p)
        });
    }

    #[test]
    fn layer_norm_gradients() {
        let mut s =
            randn_store(&[("x", &[4, 6], 1.5), ("g", &[6], 0.8), ("b", &[6], 0.3)], 5);
        let weights: Vec<f64> = (0..24).map(|i| (i as f64 * 0.37).sin()).collect();
        assert_primitive_grads(&mut s, move |t, s| {
            let x = t.param(s, "x")?;
            let g = t.param(s, "g")?;
            let b = t.param(s, "b")?;
            let y = t.layer_norm(x, g, b, 1e-5)?;
            let w = t.input(Tensor::from_vec(&[4, 6], weights.clone())?)?;
            let p = t.mul(y, w)?;
            t.sum_all(p)
        });
    }

    #[test]
    fn embed_concat_slice_gather_gradients() {
        let mut s = randn_store(&[("table", &[5, 4], 1.0), ("m", &[3, 4], 0.9)], 6);
        assert_primitive_grads(&mut s, |t, s| {
            let table = t.param(s, "table")?;
            let m = t.param(s, "m")?;
            let e = t.embed(table, &[1, 3, 1])?; // repeated id accumulates
            let cat = t.concat_rows(&[e, m])?; // [6, 4]
            let g = t.gather_rows(cat, &[5, 0, 0, 2])?;
            let left = t.slice_cols(g, 0, 2)?;
            let right = t.slice_cols(g, 2, 4)?;
            let prod = t.mul(left, right)?;
            let rows = t.slice_rows(prod, 1, 4)?;
            let sq = t.mul(rows, rows)?;
            t.sum_all(sq)
        });
    }

    #[test]
    fn concat_cols_and_mse_gradients() {
        let mut s = randn_store(&[("a", &[3, 2], 1.0), ("b", &[3, 3], 1.0)], 7);
        let target: Vec<f64> = (0..15).map(|i| (i as f64 * 0.11).cos()).collect();
        assert_primitive_grads(&mut s, move |t, s| {
            let a = t.param(s, "a")?;
            let b = t.param(s, "b")?;
            let c = t.concat_cols(&[a, b])?;
            let tgt = t.input(Tensor::from_vec(&[3, 5], target.clone())?)?;
            t.mse(c, tgt)
        });
    }

    #[test]
    fn attention_block_composite_gradients() {
        // A miniature masked attention: q/k/v projections, scaled scores,
        // masked softmax, value mix. Exercises the primitives composed the
        // same way the denoiser composes them.
        let mut s = randn_store(
            &[("wq", &[4, 4], 0.5), ("wk", &[4, 4], 0.5), ("wv", &[4, 4], 0.5)],
            8,
        );
        let qin: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
        let kin: Vec<f64> = (0..20).map(|i| (i as f64 * 0.3).cos()).collect();
        let mask: Vec<bool> = (0..15).map(|i| i % 5 != 2).collect();
        assert_primitive_grads(&mut s, move |t, s| {
            let q_in = t.input(Tensor::from_vec(&[3, 4], qin.clone())?)?;
            let k_in = t.input(Tensor::from_vec(&[5, 4], kin.clone())?)?;
            let wq = t.param(s, "wq")?;
            let wk = t.param(s, "wk")?;
            let wv = t.param(s, "wv")?;
            let q = t.matmul(q_in, wq)?;
            let k = t.matmul(k_in, wk)?;
            let v = t.matmul(k_in, wv)?;
            let scores = t.matmul_bt(q, k)?;
            let scaled = t.scale(scores, 0.5)?;
            let probs = t.masked_softmax(scaled, &mask)?;
            let mixed = t.matmul(probs, v)?;
            let sq = t.mul(mixed, mixed)?;
            t.mean_all(sq)
        });
    }
}
