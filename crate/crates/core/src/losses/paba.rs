//! Pseudo-anchor guided bidirectional aggregation.
//!
//! For every chunk, each (identity, modality) group of features is averaged
//! into a pseudo-anchor. An anchor from one modality is compared with the
//! features of the other modality: the farthest same-identity feature must be
//! at least `margin` closer than the nearest other-identity feature. The hinge
//! is averaged over identities, evaluated in both directions and summed over
//! chunks.

use crate::data::Modality;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::EmbeddingBatch;
use crate::numerics::{Real, Tape, Var};

/// Per-chunk pseudo-anchors for both modalities.
#[derive(Debug, Clone)]
pub struct PseudoAnchorSet {
    identities: Vec<usize>,
    /// `[visible, infrared]` anchor matrices `[K, chunk_dim]` per chunk; row
    /// `k` belongs to `identities[k]`.
    parts: Vec<[Var; 2]>,
}

fn slot(m: Modality) -> usize {
    match m {
        Modality::Visible => 0,
        Modality::Infrared => 1,
    }
}

impl PseudoAnchorSet {
    /// Distinct identities in ascending order.
    pub fn identities(&self) -> &[usize] {
        &self.identities
    }

    pub fn num_parts(&self) -> usize {
        self.parts.len()
    }

    pub fn var(&self, part: usize, modality: Modality) -> Var {
        self.parts[part][slot(modality)]
    }

    pub fn anchor<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        identity: usize,
        modality: Modality,
        part: usize,
    ) -> Option<&'t [T]> {
        let k = self.identities.binary_search(&identity).ok()?;
        let m = tape.value(*self.parts.get(part)?.get(slot(modality))?);
        let d = m.shape()[1];
        Some(&m.data()[k * d..(k + 1) * d])
    }
}

struct PartFeatures {
    visible: Var,
    infrared: Var,
    visible_anchors: Var,
    infrared_anchors: Var,
}

struct Layout {
    identities: Vec<usize>,
    vis_rows: Vec<usize>,
    ir_rows: Vec<usize>,
    vis_groups: Vec<usize>,
    ir_groups: Vec<usize>,
}

impl Layout {
    fn of(batch: &EmbeddingBatch) -> Result<Self> {
        let vis_rows = batch.rows_of(Modality::Visible);
        let ir_rows = batch.rows_of(Modality::Infrared);
        if vis_rows.is_empty() || ir_rows.is_empty() {
            return Err(Error::Batch("aggregation loss needs both modalities in the batch".into()));
        }
        let mut identities = batch.identities.clone();
        identities.sort_unstable();
        identities.dedup();
        for &id in &identities {
            for (rows, name) in [(&vis_rows, "visible"), (&ir_rows, "infrared")] {
                if !rows.iter().any(|&r| batch.identities[r] == id) {
                    return Err(Error::Batch(format!("identity {id} has no {name} samples in the batch")));
                }
            }
        }
        let group = |rows: &[usize]| -> Vec<usize> {
            rows.iter()
                .map(|&r| identities.binary_search(&batch.identities[r]).expect("listed"))
                .collect()
        };
        let vis_groups = group(&vis_rows);
        let ir_groups = group(&ir_rows);
        Ok(Self {
            identities,
            vis_rows,
            ir_rows,
            vis_groups,
            ir_groups,
        })
    }

    fn part<T: Real>(
        &self,
        tape: &mut Tape<T>,
        batch: &EmbeddingBatch,
        part: usize,
        normalize: bool,
    ) -> Result<PartFeatures> {
        let mut x = tape.select_part(batch.chunks, part)?;
        if normalize {
            x = tape.l2_normalize_rows(x)?;
        }
        let visible = tape.gather_rows(x, &self.vis_rows)?;
        let infrared = tape.gather_rows(x, &self.ir_rows)?;
        let k = self.identities.len();
        let visible_anchors = tape.group_mean(visible, &self.vis_groups, k)?;
        let infrared_anchors = tape.group_mean(infrared, &self.ir_groups, k)?;
        Ok(PartFeatures {
            visible,
            infrared,
            visible_anchors,
            infrared_anchors,
        })
    }
}

/// Arithmetic centre of the chunk features of every (identity, modality,
/// chunk). Gradients flow back to the contributing samples.
pub fn compute_pseudo_anchors<T: Real>(tape: &mut Tape<T>, batch: &EmbeddingBatch) -> Result<PseudoAnchorSet> {
    let layout = Layout::of(batch)?;
    let parts = tape.value(batch.chunks).shape()[1];
    let parts = (0..parts)
        .map(|i| {
            let f = layout.part(tape, batch, i, false)?;
            Ok([f.visible_anchors, f.infrared_anchors])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PseudoAnchorSet {
        identities: layout.identities,
        parts,
    })
}

/// One direction of the aggregation loss for a single chunk.
///
/// `anchors [K, D]` has one row per identity in `anchor_ids`; `features
/// [R, D]` are the opposite-modality features labelled by `feature_ids`.
pub fn paba_directional<T: Real>(
    tape: &mut Tape<T>,
    anchors: Var,
    anchor_ids: &[usize],
    features: Var,
    feature_ids: &[usize],
    margin: f64,
) -> Result<Var> {
    let k = anchor_ids.len();
    if k < 2 {
        return Err(Error::Batch(format!(
            "aggregation loss needs at least 2 identities for negatives, got {k}"
        )));
    }
    let r = feature_ids.len();
    let dist = tape.pairwise_distance(anchors, features)?;
    let positive: Vec<bool> = anchor_ids
        .iter()
        .flat_map(|a| feature_ids.iter().map(move |f| a == f))
        .collect();
    let negative: Vec<bool> = positive.iter().map(|p| !p).collect();
    debug_assert_eq!(positive.len(), k * r);
    let hardest_pos = tape.masked_row_max(dist, &positive)?;
    let hardest_neg = tape.masked_row_min(dist, &negative)?;
    let gap = tape.sub(hardest_pos, hardest_neg)?;
    let shifted = tape.add_scalar(gap, T::lit(margin));
    let hinge = tape.relu(shifted);
    Ok(tape.mean(hinge))
}

/// Bidirectional aggregation loss summed over all chunks.
pub fn paba_loss<T: Real>(tape: &mut Tape<T>, batch: &EmbeddingBatch, cfg: &LossConfig) -> Result<Var> {
    let layout = Layout::of(batch)?;
    let parts = tape.value(batch.chunks).shape()[1];
    let vis_ids: Vec<usize> = layout.vis_rows.iter().map(|&r| batch.identities[r]).collect();
    let ir_ids: Vec<usize> = layout.ir_rows.iter().map(|&r| batch.identities[r]).collect();
    let mut terms = Vec::with_capacity(2 * parts);
    for i in 0..parts {
        let f = layout.part(tape, batch, i, cfg.normalize_features)?;
        terms.push(paba_directional(
            tape,
            f.visible_anchors,
            &layout.identities,
            f.infrared,
            &ir_ids,
            cfg.margin,
        )?);
        terms.push(paba_directional(
            tape,
            f.infrared_anchors,
            &layout.identities,
            f.visible,
            &vis_ids,
            cfg.margin,
        )?);
    }
    tape.add_all(&terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use Modality::*;

    fn hand_case(second_x: f64) -> (Tape<f64>, Var, Var) {
        let mut tape = Tape::new();
        let anchors = tape.input(Tensor::new(vec![2, 2], vec![0.0, 0.1, second_x, 0.1]).unwrap());
        let feats = tape.input(
            Tensor::new(vec![4, 2], vec![0.0, 0.0, 0.0, 0.2, second_x, 0.0, second_x, 0.2]).unwrap(),
        );
        (tape, anchors, feats)
    }

    #[test]
    fn hand_computed_directional_value() {
        let (mut tape, a, f) = hand_case(0.4);
        let l = paba_directional(&mut tape, a, &[1, 2], f, &[1, 1, 2, 2], 0.5).unwrap();
        let expect = 0.1 - 0.17f64.sqrt() + 0.5;
        assert!((tape.value(l).item() - expect).abs() < 1e-12);
        assert!((tape.value(l).item() - 0.18769).abs() < 1e-4);
    }

    #[test]
    fn far_negatives_give_zero() {
        let (mut tape, a, f) = hand_case(2.0);
        let l = paba_directional(&mut tape, a, &[1, 2], f, &[1, 1, 2, 2], 0.5).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
    }

    #[test]
    fn single_identity_is_rejected() {
        let (mut tape, a, f) = hand_case(0.4);
        assert!(paba_directional(&mut tape, a, &[1], f, &[1, 1, 1, 1], 0.5).is_err());
    }

    #[test]
    fn identical_features_cost_the_margin() {
        let mut tape = Tape::<f64>::new();
        let c = tape.input(Tensor::full(&[8, 3, 4], 0.7));
        let ids = vec![0, 0, 1, 1, 0, 0, 1, 1];
        let mods = vec![Visible, Visible, Visible, Visible, Infrared, Infrared, Infrared, Infrared];
        let b = EmbeddingBatch::new(&tape, c, None, ids, mods).unwrap();
        let cfg = LossConfig::default();
        let l = paba_loss(&mut tape, &b, &cfg).unwrap();
        // 3 chunks x 2 directions x margin
        assert!((tape.value(l).item() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn anchors_are_group_means() {
        let mut tape = Tape::<f64>::new();
        let c = tape.input(Tensor::new(vec![3, 1, 2], vec![0.0, 0.0, 0.0, 0.2, 5.0, 5.0]).unwrap());
        let b = EmbeddingBatch::new(&tape, c, None, vec![3, 3, 3], vec![Visible, Visible, Infrared]).unwrap();
        let set = compute_pseudo_anchors(&mut tape, &b).unwrap();
        let a = set.anchor(&tape, 3, Visible, 0).unwrap();
        assert!((a[0] - 0.0).abs() < 1e-12 && (a[1] - 0.1).abs() < 1e-12);
        assert_eq!(set.anchor(&tape, 3, Infrared, 0).unwrap(), &[5.0, 5.0]);
        assert!(set.anchor(&tape, 4, Infrared, 0).is_none());
    }

    #[test]
    fn identity_missing_a_modality_is_a_batch_error() {
        let mut tape = Tape::<f64>::new();
        let c = tape.input(Tensor::zeros(&[3, 1, 2]));
        let b = EmbeddingBatch::new(&tape, c, None, vec![0, 1, 0], vec![Visible, Visible, Infrared]).unwrap();
        assert!(matches!(compute_pseudo_anchors(&mut tape, &b), Err(Error::Batch(_))));
        let c = tape.input(Tensor::zeros(&[2, 1, 2]));
        let b = EmbeddingBatch::new(&tape, c, None, vec![0, 1], vec![Visible, Visible]).unwrap();
        assert!(paba_loss(&mut tape, &b, &LossConfig::default()).is_err());
    }
}
