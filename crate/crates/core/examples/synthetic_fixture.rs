//! Writes a synthetic benchmark (supports, proposals, proposal embeddings, ground truth) to a directory.
//!
//!     cargo run -p protomatch-core --example synthetic_fixture -- out_dir [seed] [scenes]

use protomatch::synthetic::{generate, SyntheticConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().ok_or("usage: synthetic_fixture <out_dir> [seed] [scenes]")?;
    let mut cfg = SyntheticConfig::default();
    if let Some(seed) = args.next() {
        cfg.seed = seed.parse()?;
    }
    if let Some(scenes) = args.next() {
        cfg.num_scenes = scenes.parse()?;
    }
    std::fs::create_dir_all(&dir)?;
    let bench = generate(&cfg);
    bench.write_to_dir(&dir)?;
    println!(
        "{} scenes, {} planted objects, {} distractors -> {dir}",
        bench.batches.len(),
        bench.ground_truth.annotations.len(),
        bench.distractors.len()
    );
    Ok(())
}
