//! Autograd against central finite differences, eps = 1e-5, on randomized
//! small shapes. Every block is reduced to a scalar through a fixed random
//! projection so no gradient entry cancels by symmetry.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use tall_core::models::{CausalLm, LlmConfig, TranslatorConfig};
use tall_core::nn::{
    Adapter, AdapterSpec, AttentionConfig, Embedding, FeedForward, LayerConfig, LayerNorm, Linear, Mask,
    MultiHeadAttention, ParamBuilder, ParamId, ParamStore, TransformerStack,
};
use tall_core::pipeline::{final_token_loss, BridgeConfig, TallConfig, TallModel};
use tall_core::seed::{self, Rng};
use tall_core::tensor::{finite_diff_params, max_relative_error, Tape, Tensor, Var};
use tall_core::Result;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn randn(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// `sum(out ⊙ R)` for a fixed random `R` of the output's shape.
fn project(t: &mut Tape, out: Var, rng_seed: u64) -> Result<Var> {
    let shape = t.shape(out).to_vec();
    let r = randn(&mut seed::rng(rng_seed, "projection"), &shape);
    let r = t.constant(r);
    let m = t.mul(out, r)?;
    Ok(t.sum(m))
}

/// Worst relative error over every trainable entry of `store`.
///
/// Entries whose analytic gradient vanishes identically (a key bias under
/// softmax shift invariance, say) are compared against the rounding floor of
/// the central difference instead: they must stay within a few ulps of the
/// loss divided by `2 eps`, and otherwise count as a full relative error of 1.
fn check(store: &mut ParamStore, f: impl Fn(&mut Tape) -> Result<Var>) -> f64 {
    let ids: Vec<ParamId> = store.trainable_ids();
    assert!(!ids.is_empty());
    let (loss, analytic): (f64, Vec<Vec<f64>>) = {
        let mut t = Tape::with_params(store);
        let loss = f(&mut t).unwrap();
        let value = t.value(loss).data()[0];
        let g = t.backward(loss).unwrap();
        let grads = ids
            .iter()
            .map(|&id| match g.param(id) {
                Some(v) => v.to_vec(),
                None => vec![0.0; store.get(id).tensor.numel()],
            })
            .collect();
        (value, grads)
    };
    let numeric = finite_diff_params(
        store,
        &ids,
        |s| {
            let mut t = Tape::with_params(s);
            let l = f(&mut t).unwrap();
            t.value(l).data()[0]
        },
        EPS,
    );
    let noise = 16.0 * f64::EPSILON * loss.abs().max(1.0) / EPS;
    let mut worst: f64 = 0.0;
    for (k, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        for (&x, &y) in a.iter().zip(n) {
            let err = if x.abs() < 1e-14 {
                if y.abs() <= noise { 0.0 } else { 1.0 }
            } else {
                max_relative_error(&[x], &[y])
            };
            if err > TOL {
                eprintln!("{}: analytic {x:e}, numeric {y:e}", store.name(ids[k]));
            }
            worst = worst.max(err);
        }
    }
    worst
}

fn dims(rng: &mut Rng) -> (usize, usize, usize) {
    let heads = rng.random_range(1..=2);
    let d = heads * rng.random_range(2..=4);
    let n = rng.random_range(2..=4);
    (heads, d, n)
}

#[test]
fn primitive_ops() {
    for s in 0..3u64 {
        let mut rng = seed::rng(s, "shapes");
        let (r, k, c) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(2..5));
        let mut store = ParamStore::new();
        let a = store.insert("a", randn(&mut rng, &[r, k]), false).unwrap();
        let b = store.insert("b", randn(&mut rng, &[k, c]), false).unwrap();
        let bt = store.insert("bt", randn(&mut rng, &[c, k]), false).unwrap();
        let bias = store.insert("bias", randn(&mut rng, &[c]), false).unwrap();
        let g = store.insert("g", randn(&mut rng, &[c]), false).unwrap();
        let table = store.insert("table", randn(&mut rng, &[5, c]), false).unwrap();
        let err = check(&mut store, |t| {
            let (a, b, bt, bias, g, table) = (t.param(a), t.param(b), t.param(bt), t.param(bias), t.param(g), t.param(table));
            let x = t.matmul(a, b)?;
            let y = t.matmul_nt(a, bt)?;
            let z = t.add(x, y)?;
            let z = t.add_row(z, bias)?;
            let z2 = t.mul(z, z)?;
            let z = t.add(z, z2)?;
            let z = t.scale(z, 0.3);
            let z = t.gelu(z);
            let ln = t.layer_norm(z, g, bias, 1e-5)?;
            let sm = t.softmax(ln, 1)?;
            let e = t.embedding(table, &[4, 0, 4])?;
            let left = t.slice_cols(sm, 0, 1)?;
            let right = t.slice_cols(sm, 1, c - 1)?;
            let sm = t.concat_cols(&[right, left])?;
            let top = t.slice_rows(e, 0, 1)?;
            let both = t.concat_rows(&[sm, top])?;
            let flat = t.reshape(both, &[1, (r + 1) * c])?;
            project(t, flat, s)
        });
        assert!(err < TOL, "seed {s}: rel err {err}");
    }
}

#[test]
fn cross_entropy_variants() {
    for s in 0..3u64 {
        let mut rng = seed::rng(s, "ce");
        let v = rng.random_range(3..7);
        let mut store = ParamStore::new();
        let logits = store.insert("logits", randn(&mut rng, &[6, v]), false).unwrap();
        let err = check(&mut store, |t| {
            let l = t.param(logits);
            let a = t.cross_entropy(l, &[Some(0), None, Some(v - 1), Some(1), None, Some(2)])?;
            let b3 = t.reshape(l, &[2, 3, v])?;
            let b = t.cross_entropy_last_token(b3, &[vec![0, 0, 1], vec![0, 2, 0]], &[3, 2])?;
            let b = t.scale(b, 0.7);
            t.add(a, b)
        });
        assert!(err < TOL, "seed {s}: rel err {err}");
    }
}

#[test]
fn linear_layer_norm_ffn_embedding() {
    for s in 0..3u64 {
        let mut rng = seed::rng(s, "shapes");
        let (_, d, n) = dims(&mut rng);
        let mut store = ParamStore::new();
        let mut init = seed::rng(s, "init");
        let mut b = ParamBuilder::new(&mut store, &mut init);
        let emb = Embedding::new(&mut b, "emb", 7, d, 0.5).unwrap();
        let lin = Linear::new(&mut b, "lin", d, d + 1).unwrap();
        let ln = LayerNorm::new(&mut b, "ln", d + 1).unwrap();
        let ffn = FeedForward::new(&mut b, "ffn", d + 1, 2 * d).unwrap();
        let ids: Vec<usize> = (0..n).map(|i| (i * 3 + s as usize) % 7).collect();
        let err = check(&mut store, |t| {
            let x = emb.forward(t, &ids)?;
            let x = lin.forward(t, x)?;
            let x = ln.forward(t, x)?;
            let x = ffn.forward(t, x)?;
            let head_in = t.slice_cols(x, 0, d)?;
            let logits = emb.logits(t, head_in)?;
            let a = project(t, x, s)?;
            let b = project(t, logits, s + 100)?;
            t.add(a, b)
        });
        assert!(err < TOL, "seed {s}: rel err {err}");
    }
}

#[test]
fn attention_self_and_cross_with_masks() {
    for s in 0..3u64 {
        let mut rng = seed::rng(s, "shapes");
        let (heads, d, n) = dims(&mut rng);
        let m = rng.random_range(1..=3);
        let d_kv = rng.random_range(2..=5);
        let mut store = ParamStore::new();
        let mut init = seed::rng(s, "init");
        let mut b = ParamBuilder::new(&mut store, &mut init);
        let causal = MultiHeadAttention::new(&mut b, "self", AttentionConfig::new(d, heads, true).unwrap(), d).unwrap();
        let cross = MultiHeadAttention::new(&mut b, "cross", AttentionConfig::new(d, heads, false).unwrap(), d_kv).unwrap();
        let x = store.insert("x", randn(&mut rng, &[n, d]), false).unwrap();
        let mem = store.insert("mem", randn(&mut rng, &[m, d_kv]), false).unwrap();
        let prefix = Mask::from_fn(n, n, |i, j| j == 0 || j <= i);
        let err = check(&mut store, |t| {
            let (x, mem) = (t.param(x), t.param(mem));
            let h = causal.forward(t, x, x, Some(&Mask::causal(n)))?;
            let h2 = causal.forward(t, h, h, Some(&prefix))?;
            let c = cross.forward(t, h2, mem, None)?;
            project(t, c, s)
        });
        assert!(err < TOL, "seed {s}: rel err {err}");
    }
}

#[test]
fn transformer_stacks_encoder_and_decoder_style() {
    for s in 0..2u64 {
        let mut rng = seed::rng(s, "shapes");
        let (heads, d, n) = dims(&mut rng);
        let mut store = ParamStore::new();
        let mut init = seed::rng(s, "init");
        let mut b = ParamBuilder::new(&mut store, &mut init);
        let enc_cfg = LayerConfig {
            d_model: d,
            n_heads: heads,
            d_ff: 2 * d,
            causal: false,
            cross_dim: None,
        };
        let dec_cfg = LayerConfig {
            causal: true,
            cross_dim: Some(d),
            ..enc_cfg
        };
        let enc = TransformerStack::new(&mut b, "enc", enc_cfg, 2, true).unwrap();
        let dec = TransformerStack::new(&mut b, "dec", dec_cfg, 2, false).unwrap();
        let src = store.insert("src", randn(&mut rng, &[n + 1, d]), false).unwrap();
        let tgt = store.insert("tgt", randn(&mut rng, &[n, d]), false).unwrap();
        let err = check(&mut store, |t| {
            let (src, tgt) = (t.param(src), t.param(tgt));
            let mem = enc.forward(t, src, None, None)?;
            let out = dec.forward(t, tgt, Some(mem), Some(&Mask::causal(n)))?;
            project(t, out, s)
        });
        assert!(err < TOL, "seed {s}: rel err {err}");
    }
}

#[test]
fn adapters() {
    for s in 0..3u64 {
        let mut rng = seed::rng(s, "shapes");
        let spec = AdapterSpec::new(rng.random_range(2..6), rng.random_range(2..6), rng.random_range(2..6));
        let n = rng.random_range(1..4);
        let mut store = ParamStore::new();
        let mut init = seed::rng(s, "init");
        let a = Adapter::new(&mut ParamBuilder::new(&mut store, &mut init), "adapter", spec).unwrap();
        let x = store.insert("x", randn(&mut rng, &[n, spec.d_in]), false).unwrap();
        let err = check(&mut store, |t| {
            let x = t.param(x);
            let y = a.forward(t, x)?;
            project(t, y, s)
        });
        assert!(err < TOL, "seed {s} {spec:?}: rel err {err}");
    }
}

fn tiny_tall(rng: &mut Rng) -> TallConfig {
    let heads = rng.random_range(1..=2);
    let translator = TranslatorConfig {
        d_model: 2 * heads * rng.random_range(1..=2),
        n_heads: heads,
        d_ff: 6,
        encoder_layers: 1,
        decoder_layers: 1,
        max_len: 8,
    };
    let llm = LlmConfig {
        d_model: heads * 3,
        n_heads: heads,
        d_ff: 8,
        layers: 1,
        max_len: 8,
    };
    let bridge = BridgeConfig {
        layers: 1,
        n_heads: heads,
        d_ff: 6,
        residual_init: 1.0,
    };
    TallConfig {
        translator,
        llm,
        adapter1: AdapterSpec::new(translator.d_model, 5, llm.d_model),
        bridge1: bridge,
        adapter2: AdapterSpec::new(llm.d_model, 4, translator.d_model),
        bridge2: bridge,
        lr_vocab: 9,
        llm_vocab: 14,
    }
}

/// The whole pipeline under the final-token loss: gradients reach every
/// trainable tensor through the frozen LLM, decoder and tied LM head.
#[test]
fn full_pipeline_final_token_loss() {
    for s in 0..2u64 {
        let mut rng = seed::rng(s, "shapes");
        let cfg = tiny_tall(&mut rng);
        let (model, mut store) = TallModel::init(cfg, s).unwrap();
        let lr = [4usize, 7, 5];
        let hr = [1usize, 9, 12, 4];
        let tgt = [1usize, 4, 7, 5];
        let err = check(&mut store, |t| {
            let logits = model.forward(t, &lr, &hr, &tgt)?;
            final_token_loss(t, &[logits], &[8])
        });
        assert!(err < TOL, "seed {s}: rel err {err}");
    }
}

#[test]
fn causal_lm_and_soft_prompt_path() {
    let cfg = LlmConfig {
        d_model: 4,
        n_heads: 2,
        d_ff: 6,
        layers: 1,
        max_len: 10,
    };
    let mut store = ParamStore::new();
    let mut init = seed::rng(5, "init");
    let lm = CausalLm::new(&mut ParamBuilder::new(&mut store, &mut init), cfg, 11).unwrap();
    let err = check(&mut store, |t| lm.loss(t, &[4, 9, 5]).map(|s| s.loss));
    assert!(err < TOL, "lm rel err {err}");

    let (sp, mut store) =
        tall_core::eval::SoftPromptModel::assemble(cfg, 11, 3, 2, &store).unwrap();
    let err = check(&mut store, |t| {
        let ex = tall_core::eval::PromptExample { ids: vec![1, 6, 7], gold: 8 };
        sp.loss(t, &ex).map(|s| s.loss)
    });
    assert!(err < TOL, "soft prompt rel err {err}");
}
