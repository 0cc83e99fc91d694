//! Compare the tagger's analytic gradient with central differences on a tiny
//! model.

use deid::corpus::{Category, LabelSet};
use deid::embeddings::{CharVocab, TokenVocab};
use deid::numerics::{grad_check, seeded_rng};
use deid::sequence_model::{Gradients, ModelConfig, Tagger};
use rand::Rng;

fn main() -> deid::Result<()> {
    let labels = LabelSet::new([
        ("O", Category::O, false),
        ("PATIENT", Category::Name, true),
        ("DATE", Category::Date, true),
    ])?;
    let words = ["mr", "smith", "seen", "on", "may", "3", "and", "jo", "x"];
    let config = ModelConfig {
        char_dim: 3,
        char_hidden: 2,
        token_dim: 4,
        label_hidden: 3,
        ff_hidden: 3,
        ..ModelConfig::default()
    };
    let mut rng = seeded_rng(0);
    let mut tagger = Tagger::new(
        config,
        labels,
        TokenVocab::from_tokens(words),
        CharVocab::from_tokens(words),
        None,
        &mut rng,
    )?;
    let flat: Vec<f64> = tagger.params.to_flat().iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
    tagger.params.set_flat(&flat)?;

    let seq = tagger.encode(&["Mr", "Smith", "seen", "May"]);
    let gold = [0, 1, 0, 2];
    let trace = tagger.forward_trace(&seq, None)?;
    let mut grads = Gradients::new(&tagger.params);
    let loss = tagger.backward(&seq, &trace, &gold, &mut grads)?;
    let analytic = grads.values.to_flat();

    let mut probe = tagger.clone();
    let err = grad_check(
        |theta| {
            probe.params.set_flat(theta).expect("same shape");
            probe.neg_log_likelihood(&seq, &gold).expect("finite loss")
        },
        &flat,
        &analytic,
        1e-5,
    )?;
    println!("parameters {}", flat.len());
    println!("loss {loss:.6}");
    println!("max relative error {err:.3e}");
    Ok(())
}
