//! Read back a finished run: manifest, per-query-set statistics and the tar
//! shards. Without an argument an offline dry run is made first.
//!
//! `cargo run --example inspect_dataset -- [run-root]`

use std::path::PathBuf;

use kgharvest::jsonl;
use kgharvest::pipeline::dry_run::dry_run;
use kgharvest::pipeline::Layout;
use kgharvest::query::SearchQuery;
use kgharvest::store::{compute_stats, read_shards, DatasetRecord};

fn main() -> kgharvest::Result<()> {
    let tmp = tempfile::tempdir()?;
    let root = match std::env::args().nth(1) {
        Some(p) => PathBuf::from(p),
        None => dry_run(tmp.path(), 1)?.config.paths.root,
    };
    let layout = Layout::new(&root);
    let records: Vec<DatasetRecord> = jsonl::read(&layout.manifest())?;
    let queries: Vec<SearchQuery> = jsonl::read(&layout.queries())?;
    let excluded = records.iter().filter(|r| r.excluded).count();
    println!("{} records in the manifest, {excluded} excluded as evaluation leaks\n", records.len());
    println!("{}", compute_stats(&records, &queries).to_table());

    if let Some(r) = records.iter().find(|r| !r.alt_texts.is_empty() && !r.kg_texts.is_empty()) {
        println!("{}: {}x{}", r.id, r.width, r.height);
        println!("  alt texts: {:?}", r.alt_texts);
        for q in &r.search_queries {
            println!("  query:     {} ({:?})", q.text, q.kind);
        }
        for k in &r.kg_texts {
            println!("  entity:    {} aka {:?}", k.name, k.aliases);
        }
    }

    let shards = read_shards(&layout.shards())?;
    let bytes: usize = shards.iter().map(|(_, img)| img.len()).sum();
    println!("\nshards hold {} images, {bytes} bytes of image data", shards.len());
    Ok(())
}
