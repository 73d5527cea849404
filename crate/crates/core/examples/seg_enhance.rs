//! Builds SEG images from a synthetic visible image at several weights and
//! reports how far each one sits from the infrared image of the same person.
//!
//! ```text
//! cargo run --release --example seg_enhance -- [out_dir]
//! ```

use sepg::data::{generate_synthetic, Modality, SyntheticConfig};
use sepg::spectral::{compose_seg, rgb_to_grey, GrayscaleCoefficients, Image, SegConfig};

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

fn main() -> sepg::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("sepg-seg"), Into::into);
    std::fs::create_dir_all(&out)?;

    let (data, _) = generate_synthetic(&SyntheticConfig {
        num_identities: 4,
        images_per_identity: 1,
        ..SyntheticConfig::default()
    })?;
    let find = |m: Modality| data.modality(m)[0];
    let vis = &data.images[find(Modality::Visible)];
    let ir = &data.images[find(Modality::Infrared)];
    vis.save_png(out.join("visible.png"))?;
    ir.save_png(out.join("infrared.png"))?;

    let ir_plane = ir.channel(0);
    let grey = rgb_to_grey(vis, &GrayscaleCoefficients::default())?;
    println!(
        "grey image vs infrared: mean |diff| {:.1}",
        mean_abs_diff(&grey.channel(0), &ir_plane)
    );

    for weight in [0.0, 0.25, 0.5, 1.0] {
        let seg: Image = compose_seg(vis, &SegConfig::with_weight(weight))?;
        let px = seg.pixels();
        let clipped = px.iter().filter(|&&v| v >= 255.0).count() as f64 / px.len() as f64;
        let mean_c0 = mean_abs_diff(&seg.channel(0), &ir_plane);
        println!("weight {weight:<4}: mean |SEG - IR| {mean_c0:>5.1}, {:>4.1}% pixels at 255", clipped * 100.0);
        seg.save_png(out.join(format!("seg_w{weight}.png")))?;
    }
    println!("images in {}", out.display());
    Ok(())
}
