//! Pseudo-anchor aggregation on a hand-made batch: anchors, the hinge value
//! in each direction, and where the gradient pushes the features.
//!
//! ```text
//! cargo run --release --example paba_loss
//! ```

use sepg::data::Modality::{Infrared, Visible};
use sepg::losses::{compute_pseudo_anchors, paba_directional, paba_loss, LossConfig};
use sepg::model::EmbeddingBatch;
use sepg::numerics::{ParamStore, Tape, Tensor};

fn main() -> sepg::Result<()> {
    // Two identities, two images each per modality, one 2-d chunk.
    #[rustfmt::skip]
    let rows = [
        [0.0, 0.0], [0.0, 0.2],   // visible, id 0
        [0.4, 0.0], [0.4, 0.2],   // visible, id 1
        [0.1, 0.1], [0.1, 0.3],   // infrared, id 0
        [0.5, 0.0], [0.3, 0.1],   // infrared, id 1
    ];
    let ids = vec![0, 0, 1, 1, 0, 0, 1, 1];
    let mods = vec![Visible, Visible, Visible, Visible, Infrared, Infrared, Infrared, Infrared];

    let mut store = ParamStore::<f64>::new();
    let feats = store.add("features", Tensor::new(vec![8, 1, 2], rows.concat())?)?;
    let cfg = LossConfig::default();

    let mut tape = Tape::new();
    let chunks = tape.param(&store, feats);
    let batch = EmbeddingBatch::new(&tape, chunks, None, ids, mods)?;

    let anchors = compute_pseudo_anchors(&mut tape, &batch)?;
    for &id in anchors.identities() {
        println!(
            "id {id}: visible anchor {:?}, infrared anchor {:?}",
            anchors.anchor(&tape, id, Visible, 0).unwrap_or_default(),
            anchors.anchor(&tape, id, Infrared, 0).unwrap_or_default()
        );
    }

    // Visible anchors against infrared features, and the reverse.
    let ir = tape.input(Tensor::new(vec![4, 2], rows[4..].concat())?);
    let vis = tape.input(Tensor::new(vec![4, 2], rows[..4].concat())?);
    let v2i = paba_directional(&mut tape, anchors.var(0, Visible), &[0, 1], ir, &[0, 0, 1, 1], cfg.margin)?;
    let i2v = paba_directional(&mut tape, anchors.var(0, Infrared), &[0, 1], vis, &[0, 0, 1, 1], cfg.margin)?;
    println!(
        "visible anchors -> infrared features: {:.5}\ninfrared anchors -> visible features: {:.5}",
        tape.value(v2i).item(),
        tape.value(i2v).item()
    );

    let total = paba_loss(&mut tape, &batch, &cfg)?;
    println!("paba_loss (both directions, summed over chunks): {:.5}", tape.value(total).item());
    tape.backward(total, &mut store)?;
    println!("descent direction per feature row (-grad):");
    for (r, g) in store.get(feats).grad.data().chunks(2).enumerate() {
        println!("  row {r} ({:?}, id {}): [{:+.3}, {:+.3}]", batch.modalities[r], batch.identities[r], -g[0], -g[1]);
    }
    Ok(())
}
