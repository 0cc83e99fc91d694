//! Parameter counts of the default model and of each ablation.

use deid::corpus::LabelSet;
use deid::embeddings::{CharVocab, TokenVocab};
use deid::numerics::seeded_rng;
use deid::sequence_model::{ModelConfig, Tagger};

fn main() -> deid::Result<()> {
    let words: Vec<String> = (0..500).map(|i| format!("w{i}")).collect();
    let tv = TokenVocab::from_tokens(words.iter().map(String::as_str));
    let cv = CharVocab::from_tokens(words.iter().map(String::as_str));
    let ls = LabelSet::i2b2();
    let base = ModelConfig::default();
    let variants = [
        ("full", base.clone()),
        ("--no-seq-opt", ModelConfig { seq_opt: false, ..base.clone() }),
        ("--no-token-emb", ModelConfig { token_emb: false, ..base.clone() }),
        ("--no-char-emb", ModelConfig { char_emb: false, ..base.clone() }),
    ];
    let full = base.parameter_count(tv.len(), cv.len(), ls.len());
    println!("{:<15} {:>9} {:>9} {:>9}", "variant", "closed", "actual", "delta");
    for (name, cfg) in variants {
        let closed = cfg.parameter_count(tv.len(), cv.len(), ls.len());
        let tagger = Tagger::new(cfg, ls.clone(), tv.clone(), cv.clone(), None, &mut seeded_rng(0))?;
        let actual = tagger.params.count();
        println!("{name:<15} {closed:>9} {actual:>9} {:>9}", actual as i64 - full as i64);
    }
    Ok(())
}
