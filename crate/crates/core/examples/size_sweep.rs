//! Held-out F1 as a function of the training-set fraction.

use deid::sequence_model::ModelConfig;
use deid::synth_corpus::{generate_split, GenConfig};
use deid::training::{f1_inversions, sweep, sweep_table, TrainConfig};

fn main() -> deid::Result<()> {
    let gen = GenConfig {
        notes: 200,
        seed: 2,
        disjoint_names: true,
        ..GenConfig::default()
    };
    let split = generate_split(&gen, [0.7, 0.15, 0.15])?;
    let [(_, train_set), (_, dev), (_, test)] = &split.parts;
    let config = TrainConfig {
        max_epochs: 8,
        learning_rate: 0.05,
        model: ModelConfig {
            char_dim: 8,
            char_hidden: 8,
            token_dim: 16,
            label_hidden: 16,
            ff_hidden: 16,
            raw_score_emissions: true,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    };
    let rows = sweep(train_set, dev, test, &config, &[0.125, 0.25, 0.5, 1.0], None, |_, _| {})?;
    print!("{}", sweep_table(&rows));
    let f1s: Vec<f64> = rows.iter().map(|r| r.report.f1).collect();
    println!("F1 inversions: {}", f1_inversions(&f1s));
    Ok(())
}
