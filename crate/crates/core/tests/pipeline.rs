//! Structural properties of the seven-stage model on random weights.

use rand::Rng as _;

use tall_core::models::{LlmConfig, TranslatorConfig};
use tall_core::nn::{AdapterSpec, ParamStore};
use tall_core::pipeline::{final_token_loss, BridgeConfig, TallConfig, TallModel, FROZEN, TRAINABLE};
use tall_core::seed::{self, Rng};
use tall_core::tensor::{Tape, Tensor};
use tall_core::Error;

fn config() -> TallConfig {
    let translator = TranslatorConfig {
        d_model: 8,
        n_heads: 2,
        d_ff: 16,
        encoder_layers: 1,
        decoder_layers: 1,
        max_len: 16,
    };
    let llm = LlmConfig {
        d_model: 12,
        n_heads: 2,
        d_ff: 24,
        layers: 2,
        max_len: 16,
    };
    let bridge = BridgeConfig {
        layers: 2,
        n_heads: 2,
        d_ff: 16,
        residual_init: 0.1,
    };
    TallConfig {
        translator,
        llm,
        adapter1: AdapterSpec::new(8, 10, 12),
        bridge1: bridge,
        adapter2: AdapterSpec::new(12, 10, 8),
        bridge2: bridge,
        lr_vocab: 20,
        llm_vocab: 36,
    }
}

fn random_ids(rng: &mut Rng, len: usize, lo: usize, hi: usize) -> Vec<usize> {
    (0..len).map(|_| rng.random_range(lo..hi)).collect()
}

struct Example {
    lr: Vec<usize>,
    hr: Vec<usize>,
    tgt: Vec<usize>,
}

fn example(rng: &mut Rng, n_lr: usize, n_hr: usize) -> Example {
    let lr = random_ids(rng, n_lr, 4, 20);
    let mut hr = vec![1];
    hr.extend(random_ids(rng, n_hr - 1, 4, 36));
    let mut tgt = vec![1];
    tgt.extend(&lr);
    Example { lr, hr, tgt }
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn bridge1_is_causal_in_hr_tokens() {
    let (model, store) = TallModel::init(config(), 3).unwrap();
    let mut rng = seed::rng(1, "causality");
    for _ in 0..10 {
        let n = rng.random_range(3..9);
        let n_lr = rng.random_range(2..6);
        let ex = example(&mut rng, n_lr, n);
        let j = rng.random_range(1..n);
        let mut perturbed = ex.hr.clone();
        perturbed[j] = if perturbed[j] == 35 { 4 } else { perturbed[j] + 1 };

        let mut t = Tape::with_params(&store);
        let a = model.stages(&mut t, &ex.lr, &ex.hr, &ex.tgt).unwrap();
        let mut u = Tape::with_params(&store);
        let b = model.stages(&mut u, &ex.lr, &perturbed, &ex.tgt).unwrap();
        for (va, vb) in [(a.bridge1, b.bridge1), (a.llm, b.llm)] {
            for i in 0..n {
                let same = t.value(va).row(i).iter().zip(u.value(vb).row(i)).all(|(x, y)| x.to_bits() == y.to_bits());
                if i < j {
                    assert!(same, "row {i} changed after perturbing position {j}");
                } else if i == j {
                    assert!(!same, "perturbation at {j} had no effect");
                }
            }
        }
    }
}

#[test]
fn zeroed_adapter1_norm_cuts_the_lr_path() {
    let (model, mut store) = TallModel::init(config(), 4).unwrap();
    for name in ["adapter1.norm2.gamma", "adapter1.norm2.beta"] {
        let id = store.id(name).unwrap_or_else(|| panic!("{name} missing"));
        store.get_mut(id).tensor.data_mut().fill(0.0);
    }
    let mut rng = seed::rng(2, "isolation");
    let base = example(&mut rng, 4, 6);
    let run = |lr: &[usize]| {
        let mut t = Tape::with_params(&store);
        let out = model.forward(&mut t, lr, &base.hr, &base.tgt).unwrap();
        t.value(out).clone()
    };
    let reference = run(&base.lr);
    for _ in 0..10 {
        let lr = random_ids(&mut rng, base.lr.len(), 4, 20);
        assert_eq!(bits(&run(&lr)), bits(&reference), "lr {lr:?}");
    }
    // other lengths change only how many identical memory rows are averaged
    for len in [1usize, 2, 7] {
        let other = run(&random_ids(&mut rng, len, 4, 20));
        let worst = other
            .data()
            .iter()
            .zip(reference.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-12, "len {len}: {worst}");
    }

    // and the untouched model does depend on the LR input
    let (model, store) = TallModel::init(config(), 4).unwrap();
    let mut t = Tape::with_params(&store);
    let a = model.forward(&mut t, &base.lr, &base.hr, &base.tgt).unwrap();
    let other: Vec<usize> = base.lr.iter().map(|&x| if x == 19 { 4 } else { x + 1 }).collect();
    let b = model.forward(&mut t, &other, &base.hr, &base.tgt).unwrap();
    assert_ne!(bits(t.value(a)), bits(t.value(b)));
}

/// Frozen tensors receive no gradient at all; every trainable tensor receives
/// a nonzero one.
#[test]
fn gradient_flow_audit() {
    let (model, store) = TallModel::init(config(), 5).unwrap();
    let mut rng = seed::rng(3, "audit");
    let exs: Vec<Example> = (0..4)
        .map(|_| {
            let (n_lr, n_hr) = (rng.random_range(2..7), rng.random_range(2..8));
            example(&mut rng, n_lr, n_hr)
        })
        .collect();
    let mut t = Tape::with_params(&store);
    let logits: Vec<_> = exs.iter().map(|e| model.forward(&mut t, &e.lr, &e.hr, &e.tgt).unwrap()).collect();
    let golds: Vec<usize> = exs.iter().map(|e| e.lr[0]).collect();
    let loss = final_token_loss(&mut t, &logits, &golds).unwrap();
    let g = t.backward(loss).unwrap();

    let mut frozen = 0;
    let mut trainable = 0;
    for (id, name, p) in store.iter() {
        let is_frozen = FROZEN.iter().any(|f| name.starts_with(&format!("{f}.")));
        let is_trainable = TRAINABLE.iter().any(|f| name.starts_with(&format!("{f}.")));
        assert!(is_frozen ^ is_trainable, "{name} belongs to neither group");
        assert_eq!(p.frozen, is_frozen, "{name}");
        match g.param(id) {
            None => assert!(is_frozen, "trainable {name} got no gradient"),
            Some(grad) => {
                assert!(is_trainable, "frozen {name} got a gradient");
                let norm: f64 = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!(norm > 0.0 && norm.is_finite(), "{name}: gradient norm {norm}");
            }
        }
        if is_frozen {
            frozen += 1;
        } else {
            trainable += 1;
        }
    }
    assert!(frozen > 0 && trainable > 0);
}

#[test]
fn only_final_positions_receive_logit_gradient() {
    // on a raw padded batch
    let mut rng = seed::rng(4, "final-token");
    let (b, s, v) = (4, 7, 11);
    let lengths = [7usize, 3, 5, 1];
    let data: Vec<f64> = (0..b * s * v).map(|_| rng.random_range(-2.0..2.0)).collect();
    let targets: Vec<Vec<usize>> = (0..b).map(|_| random_ids(&mut rng, s, 0, v)).collect();
    let mut t = Tape::new();
    let logits = t.leaf(Tensor::new(vec![b, s, v], data).unwrap(), true);
    let loss = t.cross_entropy_last_token(logits, &targets, &lengths).unwrap();
    let g = t.backward(loss).unwrap();
    let grad = g.get(logits).unwrap();
    for (bi, &len) in lengths.iter().enumerate() {
        for pos in 0..s {
            let row = &grad[(bi * s + pos) * v..(bi * s + pos + 1) * v];
            if pos + 1 == len {
                assert!(row.iter().any(|&x| x != 0.0));
                assert!(row.iter().sum::<f64>().abs() < 1e-12);
            } else {
                assert!(row.iter().all(|&x| x == 0.0), "batch {bi} pos {pos}");
            }
        }
    }

    // and through the full model with sentences of different lengths
    let (model, store) = TallModel::init(config(), 6).unwrap();
    let exs: Vec<Example> = [2usize, 5, 3].iter().map(|&n| example(&mut rng, n, n + 1)).collect();
    let mut t = Tape::with_params(&store);
    let per: Vec<_> = exs.iter().map(|e| model.forward(&mut t, &e.lr, &e.hr, &e.tgt).unwrap()).collect();
    let loss = final_token_loss(&mut t, &per, &[5, 6, 7]).unwrap();
    let g = t.backward(loss).unwrap();
    for (e, &var) in exs.iter().zip(&per) {
        let grad = g.get(var).unwrap();
        let rows = e.tgt.len();
        for r in 0..rows - 1 {
            assert!(grad[r * 20..(r + 1) * 20].iter().all(|&x| x == 0.0));
        }
        assert!(grad[(rows - 1) * 20..].iter().any(|&x| x != 0.0));
    }
}

#[test]
fn stage_outputs_have_the_expected_shapes_and_are_finite() {
    let cfg = config();
    let (model, store) = TallModel::init(cfg, 7).unwrap();
    let mut rng = seed::rng(5, "shapes");
    let e = example(&mut rng, 4, 6);
    let mut t = Tape::with_params(&store);
    let s = model.stages(&mut t, &e.lr, &e.hr, &e.tgt).unwrap();
    let expect = [
        (s.encoder, vec![4, 8]),
        (s.adapter1, vec![4, 12]),
        (s.bridge1, vec![6, 12]),
        (s.llm, vec![6, 12]),
        (s.adapter2, vec![6, 8]),
        (s.bridge2, vec![6, 8]),
        (s.logits, vec![5, 20]),
    ];
    for (i, (v, shape)) in expect.into_iter().enumerate() {
        assert_eq!(t.shape(v), &shape[..], "stage {}", i + 1);
        assert!(t.value(v).data().iter().all(|x| x.is_finite()), "stage {}", i + 1);
    }
}

fn stage_of(r: tall_core::Result<impl Sized>) -> u8 {
    match r {
        Err(Error::Stage { stage, .. }) => stage,
        Err(e) => panic!("expected a stage error, got {e}"),
        Ok(_) => panic!("expected a stage error"),
    }
}

#[test]
fn malformed_inputs_name_their_stage() {
    let (model, store) = TallModel::init(config(), 8).unwrap();
    let mut t = Tape::with_params(&store);
    let ok = [1usize, 5, 6];
    assert_eq!(stage_of(model.forward(&mut t, &[], &ok, &ok)), 1);
    assert_eq!(stage_of(model.forward(&mut t, &[99], &ok, &ok)), 1);
    assert_eq!(stage_of(model.forward(&mut t, &[5], &[], &ok)), 3);
    assert_eq!(stage_of(model.forward(&mut t, &[5], &[1, 500], &ok)), 3);
    assert_eq!(stage_of(model.forward(&mut t, &[5], &ok, &[])), 7);
    assert_eq!(stage_of(model.forward(&mut t, &[5], &ok, &[1, 77])), 7);
    let long = vec![5usize; 40];
    assert_eq!(stage_of(model.forward(&mut t, &[5], &long, &ok)), 3);
}

#[test]
fn mismatched_backbone_is_rejected_at_its_stage() {
    let cfg = config();
    let (_, full) = TallModel::init(cfg, 9).unwrap();
    // translator stores carry `encoder.*` and `decoder.*`; the LLM store is unprefixed
    let llm = full.extract_prefixed("llm");
    TallModel::assemble(cfg, 0, &full, &llm, &full).unwrap();

    let mut short_llm = ParamStore::new();
    for (_, name, p) in llm.iter().skip(1) {
        short_llm.insert(name, p.tensor.clone(), false).unwrap();
    }
    assert_eq!(stage_of(TallModel::assemble(cfg, 0, &full, &short_llm, &full)), 4);
}
