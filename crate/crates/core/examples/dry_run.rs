//! Run the whole pipeline offline against local fixtures and print what each
//! stage did.

use kgharvest::pipeline::dry_run::dry_run;

fn main() -> kgharvest::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let dir = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("kgharvest-dry-run"));
    let _ = std::fs::remove_dir_all(&dir);
    let run = dry_run(&dir, 7)?;
    for s in &run.stages {
        println!("[{}]{}", s.stage, if s.partial { " (partial)" } else { "" });
        for l in &s.summary {
            println!("  {l}");
        }
    }
    println!("{} requests served; output under {}", run.requests_served, dir.display());
    Ok(())
}
