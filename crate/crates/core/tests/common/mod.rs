//! Independent reference implementations shared by the integration tests.
//! They favour obvious loops over speed and share no code with the crate.

#![allow(dead_code)]

use sepg::data::Modality;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Pseudo-anchor aggregation by explicit loops over chunk, direction,
/// identity and feature. `feats[row][chunk]` is one chunk embedding.
pub fn naive_paba(feats: &[Vec<Vec<f64>>], ids: &[usize], mods: &[Modality], margin: f64) -> f64 {
    let parts = feats[0].len();
    let mut identities: Vec<usize> = ids.to_vec();
    identities.sort_unstable();
    identities.dedup();
    let k = identities.len() as f64;
    let mut total = 0.0;
    for chunk in 0..parts {
        for (ma, mb) in [(Modality::Visible, Modality::Infrared), (Modality::Infrared, Modality::Visible)] {
            let mut sum = 0.0;
            for &p in &identities {
                // anchor: mean of identity p's chunk features in modality ma
                let members: Vec<usize> = (0..ids.len()).filter(|&r| ids[r] == p && mods[r] == ma).collect();
                let dim = feats[0][chunk].len();
                let mut anchor = vec![0.0; dim];
                for &r in &members {
                    for d in 0..dim {
                        anchor[d] += feats[r][chunk][d];
                    }
                }
                for v in &mut anchor {
                    *v /= members.len() as f64;
                }
                let mut hardest_pos = f64::NEG_INFINITY;
                let mut hardest_neg = f64::INFINITY;
                for r in 0..ids.len() {
                    if mods[r] != mb {
                        continue;
                    }
                    let d = dist(&anchor, &feats[r][chunk]);
                    if ids[r] == p {
                        hardest_pos = hardest_pos.max(d);
                    } else {
                        hardest_neg = hardest_neg.min(d);
                    }
                }
                sum += (hardest_pos - hardest_neg + margin).max(0.0);
            }
            total += sum / k;
        }
    }
    total
}

/// Sort-and-scan retrieval oracle: returns (1-based first hit, AP).
pub fn brute_force_ap(distances: &[f64], gallery_ids: &[usize], query_id: usize) -> Option<(usize, f64)> {
    let mut pairs: Vec<(f64, usize)> = distances.iter().copied().zip(0..).collect();
    // Stable insertion sort on (distance, index).
    for i in 1..pairs.len() {
        let mut j = i;
        while j > 0 && (pairs[j - 1].0 > pairs[j].0 || (pairs[j - 1].0 == pairs[j].0 && pairs[j - 1].1 > pairs[j].1)) {
            pairs.swap(j - 1, j);
            j -= 1;
        }
    }
    let relevant = gallery_ids.iter().filter(|&&g| g == query_id).count();
    if relevant == 0 {
        return None;
    }
    let mut hits = 0;
    let mut precisions = Vec::new();
    let mut first = None;
    for (rank, &(_, g)) in pairs.iter().enumerate() {
        if gallery_ids[g] == query_id {
            hits += 1;
            precisions.push(hits as f64 / (rank + 1) as f64);
            first.get_or_insert(rank + 1);
        }
    }
    Some((first.unwrap(), precisions.iter().sum::<f64>() / relevant as f64))
}

/// Direct 2D DFT, for cross-checking the FFT on small grids.
pub fn naive_dft(h: usize, w: usize, x: &[f64]) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(h * w);
    for u in 0..h {
        for v in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..h {
                for xx in 0..w {
                    let a = -2.0 * std::f64::consts::PI * ((u * y) as f64 / h as f64 + (v * xx) as f64 / w as f64);
                    re += x[y * w + xx] * a.cos();
                    im += x[y * w + xx] * a.sin();
                }
            }
            out.push((re, im));
        }
    }
    out
}
