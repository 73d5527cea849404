//! Desk-scale ablation: every preset over several seeds, then an aggregate
//! report over the run directories.
//!
//! ```text
//! cargo run --release --example ablation -- [out_dir] [seeds] [difficulty]
//! ```

use std::time::Instant;

use sepg::train::{emit_report, train, Preset, TrainConfig};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = args
        .first()
        .map_or_else(|| std::env::temp_dir().join("sepg-ablation"), Into::into);
    let seeds: u64 = args.get(1).map_or(Ok(3), |s| s.parse())?;
    let difficulty: f64 = args.get(2).map_or(Ok(0.6), |s| s.parse())?;

    let start = Instant::now();
    for preset in Preset::ALL {
        let mut rank1 = Vec::new();
        for seed in 0..seeds {
            let cfg = TrainConfig {
                preset,
                seed,
                difficulty,
                ..TrainConfig::desk()
            };
            let outcome = train(&cfg, out.join(format!("{}-{seed}", preset.slug())))?;
            rank1.push(outcome.summary.final_v2i.rank1());
        }
        let mean = rank1.iter().sum::<f64>() / rank1.len() as f64;
        println!("{preset:<9} V-2-I Rank-1 per seed {rank1:.3?}, mean {mean:.4}");
    }
    let report = emit_report(&out)?;
    println!(
        "{} runs in {:.0}s; report at {}",
        report.runs,
        start.elapsed().as_secs_f64(),
        report.report.display()
    );
    Ok(())
}
