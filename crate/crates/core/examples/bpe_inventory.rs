//! Learns a subword inventory from word counts and segments a few words.

use std::collections::BTreeMap;

use lasas::tokenizer::{bpe_encode, bpe_train};

fn main() -> lasas::Result<()> {
    let counts: BTreeMap<String, u64> = [("low", 5), ("lower", 2), ("lowest", 3), ("newer", 6), ("wider", 3)]
        .into_iter()
        .map(|(w, c)| (w.to_string(), c))
        .collect();
    let inventory = bpe_train(&counts, 6)?;
    println!("merges:");
    for (l, r) in inventory.merges() {
        println!("  {l} + {r}");
    }
    for word in ["lowest", "newer", "wide"] {
        let ids = bpe_encode(word, &inventory)?;
        let pieces: Vec<&str> = ids.iter().map(|&id| inventory.symbol(id).unwrap_or("?")).collect();
        println!("{word:>8} -> {pieces:?} {ids:?}", ids = ids.iter().map(|i| i.0).collect::<Vec<_>>());
    }
    println!("inventory json: {}", inventory.to_json());
    Ok(())
}
