//! Per-image label sampling: the exact distribution for one pool, and an
//! empirical check against 100k seeded draws.
//!
//! `cargo run --example label_sampler -- [seed]`

use std::collections::BTreeMap;

use kgharvest::sampler::{label_distribution, sample_label, LabelPolicy, LabelPool};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> kgharvest::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(42);
    let pool = LabelPool {
        alt_texts: vec!["tiger resting in tall grass".into(), "zoo photo, big cat".into()],
        search_query: "tiger in the jungle".into(),
        aliases: vec!["Panthera tigris".into(), "tigress".into()],
        descriptions: vec!["large striped cat native to Asia".into()],
    };
    let policy = LabelPolicy::default();
    let exact = label_distribution(&pool, &policy)?;

    let draws = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: BTreeMap<String, u64> = BTreeMap::new();
    for _ in 0..draws {
        *seen.entry(sample_label(&pool, &policy, &mut rng)?).or_default() += 1;
    }

    println!("{:<36} {:>8} {:>8}", "label", "p", "observed");
    for (text, p) in &exact {
        let observed = seen.get(text).copied().unwrap_or(0) as f64 / draws as f64;
        println!("{text:<36} {p:>8.4} {observed:>8.4}");
    }

    let no_alt = LabelPool { alt_texts: vec![], ..pool };
    println!("\nwithout alt texts the knowledge-graph branch takes every draw:");
    for (text, p) in label_distribution(&no_alt, &policy)? {
        println!("{text:<36} {p:>8.4}");
    }
    Ok(())
}
