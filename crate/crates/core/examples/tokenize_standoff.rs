//! Tokenize a note, project stand-off PHI spans onto tokens, and print the
//! token-file rendering.

use deid::corpus::{standoff_to_sequence, write_token_string, Dataset, LabelSet, Span};

fn main() -> deid::Result<()> {
    let text = "Mr. Smith (MRN 4471920) was seen 02/20/2087 at Saint Mary Hospital.";
    let spans = [
        Span::new(4, 9, "PATIENT"),
        Span::new(15, 22, "MEDICAL_RECORD"),
        Span::new(33, 43, "DATE"),
        Span::new(47, 66, "HOSPITAL"),
    ];
    let ls = LabelSet::i2b2();
    let seq = standoff_to_sequence("demo", text, &spans, &ls)?;
    for (tok, &label) in seq.tokens.iter().zip(&seq.labels) {
        println!("{:>3}..{:<3} {:<10} {}", tok.start, tok.end, tok.text, ls.name(label));
    }
    let ds = Dataset::new(vec![seq], ls)?;
    print!("\n{}", write_token_string(&ds)?);
    Ok(())
}
