//! Draws one epoch of identity-balanced PK batches from a synthetic index.
//!
//! ```text
//! cargo run --release --example pk_sampler -- [p] [k]
//! ```

use std::collections::BTreeMap;

use sepg::data::{generate_synthetic, PkSampler, SamplerConfig, SyntheticConfig};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let p: usize = args.first().map_or(Ok(4), |s| s.parse())?;
    let k: usize = args.get(1).map_or(Ok(2), |s| s.parse())?;

    let (data, _) = generate_synthetic(&SyntheticConfig {
        num_identities: 10,
        images_per_identity: 3,
        height: 16,
        width: 8,
        ..SyntheticConfig::default()
    })?;
    let mut sampler = PkSampler::new(&data.index, SamplerConfig { p, k, seed: 0 })?;
    println!(
        "{} identities, P={p} K={k}: {} batches per epoch of {} images",
        data.index.num_identities,
        sampler.batches_per_epoch(),
        2 * p * k
    );

    let mut seen = BTreeMap::new();
    for epoch in 0..2 {
        for (i, batch) in sampler.next_epoch().iter().enumerate() {
            println!("epoch {epoch} batch {i}: identities {:?}", batch.identities);
            let vis: Vec<usize> = batch.visible.iter().map(|&r| data.record(r).identity).collect();
            let ir: Vec<usize> = batch.infrared.iter().map(|&r| data.record(r).identity).collect();
            // K images in each modality for every identity, in the same order.
            assert_eq!(vis, ir);
            assert_eq!(vis, batch.row_identities(k)[..p * k]);
            for id in &batch.identities {
                *seen.entry(*id).or_insert(0) += 1;
            }
        }
    }
    println!("batches per identity over two epochs: {seen:?}");
    Ok(())
}
