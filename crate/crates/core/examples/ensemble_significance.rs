//! Combine two baseline models by PHI union and test whether their scores
//! differ.

use deid::evaluation::{approx_randomization, ensemble_union, token_prf, EvalMode, Metric};
use deid::feature_crf::{builtin_gazetteers, default_templates, parse_templates, train_baseline, BaselineConfig};
use deid::synth_corpus::{generate_split, GenConfig};

fn main() -> deid::Result<()> {
    let gen = GenConfig {
        notes: 240,
        seed: 21,
        disjoint_names: true,
        ..GenConfig::default()
    };
    let split = generate_split(&gen, [0.6, 0.2, 0.2])?;
    let [(_, train_set), (_, dev), (_, test)] = &split.parts;
    let config = BaselineConfig {
        max_epochs: 5,
        ..BaselineConfig::default()
    };
    let full = train_baseline(train_set, dev, &default_templates(), &builtin_gazetteers(), &config, |_| {})?.model;
    let shape_only = parse_templates("shape = -1..1\nsuffix2 = 0\n", "inline")?;
    let weak = train_baseline(train_set, dev, &shape_only, &[], &config, |_| {})?.model;

    let a = full.predict_dataset(test)?;
    let b = weak.predict_dataset(test)?;
    let union = ensemble_union(&a, &b, &test.label_set)?;
    for (name, pred) in [("full", &a), ("shape-only", &b), ("union", &union)] {
        let r = token_prf(test, pred, EvalMode::BinaryHipaa)?;
        println!("{name:<11} P {:.4} R {:.4} F1 {:.4}", r.precision, r.recall, r.f1);
    }
    let p = approx_randomization(&a, &b, test, EvalMode::BinaryHipaa, Metric::F1, 9999, 0)?;
    println!("approximate randomization p = {p:.4}");
    Ok(())
}
