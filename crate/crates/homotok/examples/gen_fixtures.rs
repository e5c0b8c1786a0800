//! Materialize the synthetic desk-scale fixtures (corpus, vocabularies)
//! so the CLI can be driven outside the test suite:
//!
//! ```bash
//! cargo run --release --example gen_fixtures -- fixtures/
//! ```

use std::fs;
use std::path::PathBuf;

use homotok::fixtures::{desk_vocab, gpt2_style_vocab, synthetic_corpus, toy_vocab};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()).into();
    fs::create_dir_all(&out)?;

    fs::write(out.join("toy.vocab"), toy_vocab().to_hex_lines()?)?;
    fs::write(out.join("desk.vocab"), desk_vocab().to_hex_lines()?)?;
    fs::write(out.join("gpt2_style_vocab.json"), gpt2_style_vocab().to_json_string())?;
    fs::write(out.join("corpus.txt"), synthetic_corpus(0xC0FFEE, 1_000_000))?;

    println!("wrote fixtures to {}", out.display());
    Ok(())
}
