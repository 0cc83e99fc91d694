//! Load pretrained token vectors, train with them, and compare parameter
//! counts with and without pretraining.

use deid::embeddings::{parse_pretrained, write_pretrained};
use deid::numerics::seeded_rng;
use deid::sequence_model::ModelConfig;
use deid::synth_corpus::{generate_split, GenConfig};
use deid::training::{train, TrainConfig};
use rand::Rng;

fn main() -> deid::Result<()> {
    let dim = 8;
    let mut rng = seeded_rng(1);
    let mut text = String::new();
    for word in ["patient", "seen", "clinic", "hospital", "doctor", "history", "denies", "pain"] {
        let v: Vec<String> = (0..dim).map(|_| format!("{:.4}", rng.gen_range(-0.5..0.5))).collect();
        text += &format!("{word} {}\n", v.join(" "));
    }
    let (vocab, table) = parse_pretrained(&text, dim, "inline", &mut rng)?;
    println!("{} pretrained entries (+ unknown row)", vocab.entries().len());
    print!("{}", write_pretrained(&vocab, &table).lines().next().unwrap_or_default());
    println!(" ...");

    let gen = GenConfig {
        notes: 60,
        seed: 4,
        ..GenConfig::default()
    };
    let split = generate_split(&gen, [0.7, 0.15, 0.15])?;
    let [(_, train_set), (_, dev), _] = &split.parts;
    let model = ModelConfig {
        char_dim: 4,
        char_hidden: 4,
        token_dim: dim,
        label_hidden: 8,
        ff_hidden: 8,
        ..ModelConfig::default()
    };
    for pretrained in [false, true] {
        let config = TrainConfig {
            max_epochs: 2,
            model: ModelConfig { pretrained, ..model.clone() },
            ..TrainConfig::default()
        };
        let vectors = (vocab.clone(), table.clone());
        let out = train(train_set, dev, &config, Some(&vectors), |_| {})?;
        println!("pretrained {pretrained}: {} parameters", out.checkpoint.tagger.params.count());
    }
    Ok(())
}
