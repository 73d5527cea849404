//! Trains one preset with the desk profile on synthetic data and prints the
//! per-epoch retrieval curve.
//!
//! ```text
//! cargo run --release --example train_desk -- [preset] [seed] [difficulty]
//! ```

use std::time::Instant;

use sepg::train::{train, Preset, TrainConfig};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let preset: Preset = args.first().map_or(Ok(Preset::SePaba), |s| s.parse())?;
    let seed: u64 = args.get(1).map_or(Ok(0), |s| s.parse())?;
    let difficulty: f64 = args.get(2).map_or(Ok(0.6), |s| s.parse())?;

    let cfg = TrainConfig {
        preset,
        seed,
        difficulty,
        ..TrainConfig::desk()
    };
    let out = std::env::temp_dir().join(format!("sepg-desk-{}-{seed}", preset.slug()));
    let start = Instant::now();
    let outcome = train(&cfg, &out)?;

    println!("epoch  lr        loss     rank1   mAP");
    for r in &outcome.history {
        println!("{:>5}  {:<8.5}  {:>7.4}  {:>6.3}  {:.3}", r.epoch, r.lr, r.total, r.rank1, r.map);
    }
    let s = &outcome.summary;
    println!(
        "\n{} seed {seed}: V-2-I Rank-1 {:.3} mAP {:.3} | I-2-V Rank-1 {:.3} mAP {:.3} | {:.1}s",
        preset,
        s.final_v2i.rank1(),
        s.final_v2i.map,
        s.final_i2v.rank1(),
        s.final_i2v.map,
        start.elapsed().as_secs_f64()
    );
    println!("artifacts in {}", out.display());
    Ok(())
}
