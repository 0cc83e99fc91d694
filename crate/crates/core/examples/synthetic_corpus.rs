//! Generate a synthetic corpus with disjoint name pools per split and print
//! its statistics and one annotated note.

use deid::synth_corpus::{corpus_stats, generate_split, GenConfig};

fn main() -> deid::Result<()> {
    let config = GenConfig {
        notes: 200,
        seed: 7,
        disjoint_names: true,
        ..GenConfig::default()
    };
    let split = generate_split(&config, [0.7, 0.15, 0.15])?;
    for (name, (_, ds)) in ["train", "dev", "test"].iter().zip(&split.parts) {
        println!("== {name}\n{}", corpus_stats(ds).to_tsv());
    }
    let note = &split.parts[0].0[0];
    println!("{}: {}", note.note_id, note.text);
    for s in &note.spans {
        println!("  {:<14} {:<10} {}", s.label, s.generator, &note.text[s.start..s.end]);
    }
    Ok(())
}
