//! Train the feature CRF baseline on synthetic notes and show the features
//! fired at one token.

use deid::corpus::tokenize;
use deid::evaluation::{token_prf, EvalMode};
use deid::feature_crf::{builtin_gazetteers, default_templates, extract_features, train_baseline, BaselineConfig};
use deid::synth_corpus::{generate_split, GenConfig};

fn main() -> deid::Result<()> {
    let templates = default_templates();
    let gazetteers = builtin_gazetteers();
    let toks = tokenize("Seen by Dr. Lopez on 02/20/2087 .");
    for f in extract_features(&toks, 4, &templates, &gazetteers).iter().take(12) {
        println!("  {f}");
    }

    let gen = GenConfig {
        notes: 300,
        seed: 5,
        disjoint_names: true,
        ..GenConfig::default()
    };
    let split = generate_split(&gen, [0.7, 0.15, 0.15])?;
    let [(_, train_set), (_, dev), (_, test)] = &split.parts;
    let config = BaselineConfig {
        max_epochs: 8,
        ..BaselineConfig::default()
    };
    let outcome = train_baseline(train_set, dev, &templates, &gazetteers, &config, |l| println!("{}", l.to_line()))?;
    let model = outcome.model;
    println!("{} features", model.weights.num_features());
    let pred = model.predict_dataset(test)?;
    print!("{}", token_prf(test, &pred, EvalMode::PerCategory)?.to_text());
    Ok(())
}
