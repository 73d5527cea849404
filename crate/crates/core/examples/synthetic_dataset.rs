//! Generates the synthetic two-modality dataset, writes it in the folder
//! layout and reads it back through the loader.
//!
//! ```text
//! cargo run --release --example synthetic_dataset -- [out_dir] [difficulty] [seed]
//! ```

use sepg::data::{generate_synthetic, Dataset, Modality, SyntheticConfig};

fn main() -> sepg::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = args
        .first()
        .map_or_else(|| std::env::temp_dir().join("sepg-synthetic"), Into::into);
    let cfg = SyntheticConfig {
        difficulty: args.get(1).map_or(0.6, |s| s.parse().expect("difficulty")),
        seed: args.get(2).map_or(0, |s| s.parse().expect("seed")),
        ..SyntheticConfig::default()
    };
    let (data, manifest) = generate_synthetic(&cfg)?;
    data.write_pngs(&out)?;
    manifest.write(&out)?;

    let (loaded, report) = Dataset::load(&out)?;
    assert_eq!(loaded.images, data.images, "PNG round trip is lossless");
    println!(
        "{} identities, {} visible + {} infrared images at {}x{} in {}",
        loaded.index.num_identities,
        loaded.index.count(Modality::Visible),
        loaded.index.count(Modality::Infrared),
        cfg.height,
        cfg.width,
        out.display()
    );
    println!("single-modality identities: {}", report.single_modality.len());
    Ok(())
}
