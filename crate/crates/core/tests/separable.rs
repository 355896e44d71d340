//! A constructed task TALL must solve almost perfectly: the gold final word is
//! a fixed permutation of the HR word the translator produces last for the
//! prefix, so the answer is readable from the stage-3 input alone.

use tall_core::config::{Component, RunConfig};
use tall_core::optim::TrainConfig;
use tall_core::pipeline::{new_fit_state, predict_final_word, train_tall, SamplerConfig, TallExample, TallModel};
use tall_core::runs::{self, load_backbones, prepare_examples, Artifacts, Context};
use tall_core::train::FitOptions;
use tall_core::world::Dataset;

const CONFIG: &str = r#"
[world]
train_size = 1500
dev_size = 100
eval_size = 300

[world.grammar]
words = 12
min_len = 3
max_len = 6

[models.translator]
d_model = 16
n_heads = 2
d_ff = 32
encoder_layers = 1
decoder_layers = 1

[models.llm]
d_model = 24
n_heads = 2
d_ff = 48
layers = 1

[models.tall]
adapter1_hidden = 32
adapter2_hidden = 32

[models.tall.bridge1]
layers = 1
n_heads = 2
d_ff = 32

[models.tall.bridge2]
layers = 1
n_heads = 2
d_ff = 32

[train.translator]
epochs = 10
learning_rate = 5e-3
[train.llm]
epochs = 3
learning_rate = 5e-3
"#;

/// Rewrites each gold word as a permutation of the last HR token's word.
fn relabel(ctx: &Context, examples: &mut [TallExample]) {
    let v = &ctx.vocabs;
    let words = ctx.cfg.world.grammar.words;
    for ex in examples.iter_mut() {
        let last = v.llm_to_hr(*ex.hr_tokens.last().unwrap());
        let w = v.word_of(last).unwrap_or(words - 1);
        ex.gold = v.word_id((5 * w + 3) % words);
    }
}

#[test]
fn separable_final_word_is_learned() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = Context::new(RunConfig::from_toml(CONFIG).unwrap()).unwrap();
    let art = Artifacts::new(dir.path());
    let paths = art.backbones();
    for (c, p) in [(Component::Lr2hr, &paths.lr2hr), (Component::Llm, &paths.llm), (Component::Hr2lr, &paths.hr2lr)] {
        let s = runs::pretrain(&ctx, c, p).unwrap();
        eprintln!("{} {} steps, held-out {:.4}", s.kind, s.steps, s.heldout_score);
    }
    let bb = load_backbones(&ctx, &paths).unwrap();

    let mut train = prepare_examples(&ctx, &bb, &ctx.splits.train).unwrap();
    let mut dev = prepare_examples(&ctx, &bb, &ctx.splits.dev).unwrap();
    let mut test = prepare_examples(&ctx, &bb, ctx.splits.eval(Dataset::Heldout)).unwrap();
    for set in [&mut train, &mut dev, &mut test] {
        relabel(&ctx, set);
    }

    let (model, mut store) = TallModel::assemble(ctx.cfg.tall_config(), 0, &bb.lr2hr_store, &bb.llm_store, &bb.hr2lr_store).unwrap();
    let tcfg = TrainConfig {
        learning_rate: 3e-3,
        warmup_steps: 20,
        epochs: 20,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let mut state = new_fit_state(&tcfg, &store, train.len()).unwrap();
    let opts = FitOptions {
        config_hash: ctx.hash.clone(),
        stop_at: None,
        restore_best: true,
    };
    train_tall(&model, &mut store, &mut state, &train, &dev, &opts, &mut |_, _| Ok(())).unwrap();

    let greedy = SamplerConfig::greedy();
    let correct = test
        .iter()
        .enumerate()
        .filter(|(i, ex)| {
            let p = predict_final_word(&model, &store, &ex.hr_tokens, &ex.target_in, &ex.lr_prefix, &greedy, &mut greedy.rng_for(*i as u64))
                .unwrap();
            p == ex.gold
        })
        .count();
    let acc = correct as f64 / test.len() as f64;
    eprintln!("separable held-out accuracy {acc:.4} ({correct}/{})", test.len());
    assert!(acc >= 0.99, "accuracy {acc}");
}
