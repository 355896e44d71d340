//! End-to-end runs on a tiny world: interrupt/resume equivalence, frozen
//! backbones, and the shape of the results table.

use std::path::Path;

use tall_core::config::{Component, RunConfig};
use tall_core::eval::Approach;
use tall_core::pipeline::{tall_loss, FROZEN};
use tall_core::runs::{
    self, load_backbones, load_tall, prepare_examples, train_baseline, train_tall_run, Artifacts, Baseline, Context,
    EvalPaths, TallOptions,
};
use tall_core::train::evaluate;
use tall_core::world::Dataset;
use tall_core::{CheckpointError, Error};

const CONFIG: &str = r#"
[world]
train_size = 120
dev_size = 16
eval_size = 40

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
adapter2_hidden = 24

[models.tall.bridge1]
layers = 1
n_heads = 2
d_ff = 32

[models.tall.bridge2]
layers = 1
n_heads = 2
d_ff = 32

[models.baselines]
n_prompt = 4

[train.translator]
epochs = 1
[train.llm]
epochs = 1
[train.tall]
epochs = 2
batch_size = 8
eval_every = 5
[train.soft_prompt]
epochs = 1
[train.finetune]
epochs = 1
[train.from_scratch]
epochs = 1
"#;

fn context() -> Context {
    Context::new(RunConfig::from_toml(CONFIG).unwrap()).unwrap()
}

fn pretrain_all(ctx: &Context, art: &Artifacts) {
    let p = art.backbones();
    runs::pretrain(ctx, Component::Lr2hr, &p.lr2hr).unwrap();
    runs::pretrain(ctx, Component::Llm, &p.llm).unwrap();
    runs::pretrain(ctx, Component::Hr2lr, &p.hr2lr).unwrap();
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn interrupted_and_resumed_run_matches_uninterrupted() {
    let dir = tempfile::tempdir().unwrap();
    let art = Artifacts::new(dir.path());
    let ctx = context();
    pretrain_all(&ctx, &art);
    let bb = load_backbones(&ctx, &art.backbones()).unwrap();

    let full = dir.path().join("full.tlcp");
    let s = train_tall_run(&ctx, &bb, &full, &TallOptions::default()).unwrap();
    assert!(s.complete);
    assert_eq!(s.step, 30);

    let split = dir.path().join("split.tlcp");
    let first = TallOptions {
        stop_at: Some(13),
        ..TallOptions::default()
    };
    let s = train_tall_run(&ctx, &bb, &split, &first).unwrap();
    assert!(!s.complete);
    assert_eq!(s.step, 13);
    // an unfinished run is not usable for evaluation
    assert!(matches!(
        load_tall(&ctx, &bb, &split),
        Err(Error::Checkpoint(CheckpointError::ConfigMismatch(_)))
    ));
    let resume = TallOptions {
        resume: true,
        ..TallOptions::default()
    };
    let s = train_tall_run(&ctx, &bb, &split, &resume).unwrap();
    assert_eq!(s.resumed_from, Some(13));
    assert!(s.complete);

    assert_eq!(read(&full), read(&split), "checkpoints differ");
    assert_eq!(
        read(&runs::metrics_path(&full)),
        read(&runs::metrics_path(&split)),
        "metrics differ"
    );

    let dev = prepare_examples(&ctx, &bb, &ctx.splits.dev).unwrap();
    let loss = |p: &Path| {
        let (model, store) = load_tall(&ctx, &bb, p).unwrap();
        evaluate(&store, &dev, &|t, ex| tall_loss(&model, t, ex)).unwrap().loss
    };
    assert_eq!(loss(&full).to_bits(), loss(&split).to_bits());

    // frozen stages are the pretrained tensors, bit for bit
    let (_, store) = load_tall(&ctx, &bb, &full).unwrap();
    let sources = [
        ("encoder", bb.lr2hr_store.extract_prefixed("encoder")),
        ("llm", bb.llm_store.clone()),
        ("decoder", bb.hr2lr_store.extract_prefixed("decoder")),
    ];
    for (prefix, src) in &sources {
        assert!(FROZEN.contains(prefix));
        let mine = store.extract_prefixed(prefix);
        assert_eq!(mine.len(), src.len());
        for (_, name, p) in src.iter() {
            let m = mine.by_name(name).unwrap();
            assert_eq!(
                m.tensor.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                p.tensor.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                "{prefix}.{name}"
            );
        }
    }

    // resuming under a different configuration is refused
    let mut other = ctx.cfg.clone();
    other.train.tall.learning_rate *= 2.0;
    let other = Context::new(other).unwrap();
    assert!(matches!(
        train_tall_run(&other, &bb, &split, &resume),
        Err(Error::Checkpoint(CheckpointError::ConfigMismatch(_)))
    ));
}

#[test]
fn evaluating_everything_gives_six_rows_per_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let art = Artifacts::new(dir.path());
    let ctx = context();
    pretrain_all(&ctx, &art);
    let bb = load_backbones(&ctx, &art.backbones()).unwrap();
    train_tall_run(&ctx, &bb, &art.checkpoint(runs::TALL), &TallOptions::default()).unwrap();
    for b in [Baseline::SoftPrompt, Baseline::Finetuned, Baseline::FromScratch] {
        train_baseline(&ctx, b, &art.backbones().llm, &art.checkpoint(b.kind())).unwrap();
    }

    let paths = EvalPaths::in_dir(&art);
    let table = runs::evaluate(&ctx, &paths, &Approach::ALL, &Dataset::ALL).unwrap();
    assert_eq!(table.config_hash, ctx.hash);
    assert_eq!(table.datasets.len(), 2);
    for d in Dataset::ALL {
        let rows: Vec<_> = table.rows.iter().filter(|r| r.dataset == d.name()).collect();
        assert_eq!(rows.len(), 6, "{}", d.name());
        for a in Approach::ALL {
            let r = table.row(d.name(), a).unwrap();
            assert_eq!(r.total, 40);
            assert!(r.correct <= r.total);
        }
    }

    // same inputs, same table
    let again = runs::evaluate(&ctx, &paths, &Approach::ALL, &Dataset::ALL).unwrap();
    assert_eq!(table, again);

    // a missing checkpoint names what is missing
    std::fs::remove_file(art.checkpoint(runs::SOFT_PROMPT)).unwrap();
    match runs::evaluate(&ctx, &paths, &[Approach::SoftPrompt], &[Dataset::Heldout]) {
        Err(Error::Checkpoint(CheckpointError::NotFound(m))) => assert!(m.contains("soft_prompt"), "{m}"),
        other => panic!("expected NotFound, got {other:?}"),
    }
}
