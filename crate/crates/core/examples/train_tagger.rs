//! Train a small tagger on synthetic notes, score it on held-out notes, and
//! reload the checkpoint.

use deid::evaluation::{token_prf, EvalMode};
use deid::sequence_model::ModelConfig;
use deid::synth_corpus::{generate_split, GenConfig};
use deid::training::{predict_dataset, train, Checkpoint, TrainConfig};

fn main() -> deid::Result<()> {
    let gen = GenConfig {
        notes: 160,
        seed: 11,
        disjoint_names: true,
        ..GenConfig::default()
    };
    let split = generate_split(&gen, [0.75, 0.125, 0.125])?;
    let [(_, train_set), (_, dev), (_, test)] = &split.parts;

    let config = TrainConfig {
        max_epochs: 15,
        learning_rate: 0.05,
        model: ModelConfig {
            char_dim: 10,
            char_hidden: 10,
            token_dim: 25,
            label_hidden: 25,
            ff_hidden: 25,
            raw_score_emissions: true,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    };
    println!("epoch\tloss\tdev_P\tdev_R\tdev_F1");
    let outcome = train(train_set, dev, &config, None, |l| println!("{}", l.to_line()))?;
    let ckpt = outcome.checkpoint;
    let pred = predict_dataset(&ckpt.tagger, test)?;
    print!("\n{}", token_prf(test, &pred, EvalMode::BinaryHipaa)?.to_text());

    let reloaded = Checkpoint::from_bytes(&ckpt.to_bytes())?;
    assert_eq!(predict_dataset(&reloaded.tagger, test)?, pred);
    println!("\nkept epoch {} (dev F1 {:.4}); reload reproduces predictions", ckpt.epoch, ckpt.best_dev_f1);
    Ok(())
}
