use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{cross_centre_loss, id_loss, paba_loss, LossConfig};
use crate::model::EmbeddingBatch;
use crate::numerics::{Real, Tape, Var};

/// Which cross-modality term the aggregation weight applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    None,
    Paba,
    CrossCentre,
}

/// Scalar objective and its unweighted components.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub id_specific: f64,
    pub paba: f64,
    pub cross_centre: f64,
    /// Sum over chunks of the per-chunk identity losses.
    pub id_parts: f64,
}

/// `lambda_specific * id_specific + lambda_aggregation * aggregation + lambda_parts * id_parts`.
pub fn weighted_total(cfg: &LossConfig, id_specific: f64, aggregation: f64, id_parts: f64) -> f64 {
    cfg.lambda_specific * id_specific + cfg.lambda_aggregation * aggregation + cfg.lambda_parts * id_parts
}

/// Weighted training objective on one batch.
pub fn total_loss<T: Real>(
    tape: &mut Tape<T>,
    batch: &EmbeddingBatch,
    specific_logits: Var,
    part_logits: &[Var],
    cfg: &LossConfig,
    aggregation: Aggregation,
) -> Result<LossTerms> {
    if part_logits.is_empty() {
        return Err(Error::Batch("no chunk logits".into()));
    }
    let labels = &batch.identities;
    let spec = id_loss(tape, specific_logits, labels)?;
    let parts = part_logits
        .iter()
        .map(|&l| id_loss(tape, l, labels))
        .collect::<Result<Vec<_>>>()?;
    let parts_sum = tape.add_all(&parts)?;

    let mut weighted = vec![
        tape.scale(spec, T::lit(cfg.lambda_specific)),
        tape.scale(parts_sum, T::lit(cfg.lambda_parts)),
    ];
    let (mut paba, mut centre) = (0.0, 0.0);
    if cfg.lambda_aggregation > 0.0 {
        match aggregation {
            Aggregation::None => {}
            Aggregation::Paba => {
                let l = paba_loss(tape, batch, cfg)?;
                paba = tape.value(l).item().as_f64();
                weighted.push(tape.scale(l, T::lit(cfg.lambda_aggregation)));
            }
            Aggregation::CrossCentre => {
                let l = cross_centre_loss(tape, batch)?;
                centre = tape.value(l).item().as_f64();
                weighted.push(tape.scale(l, T::lit(cfg.lambda_aggregation)));
            }
        }
    }
    let total = tape.add_all(&weighted)?;
    Ok(LossTerms {
        total,
        id_specific: tape.value(spec).item().as_f64(),
        paba,
        cross_centre: centre,
        id_parts: tape.value(parts_sum).item().as_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Modality;
    use crate::numerics::Tensor;

    #[test]
    fn default_weights_combine_components() {
        let v = weighted_total(&LossConfig::default(), 1.0, 0.2, 0.3);
        assert!((v - 1.8).abs() < 1e-12);
    }

    #[test]
    fn zero_aggregation_weight_is_pure_identity_training() {
        use Modality::*;
        let mut tape = Tape::<f64>::new();
        let chunks = tape.input(Tensor::from_fn(&[4, 2, 3], |i| (i as f64).sin()));
        let spec = tape.input(Tensor::from_fn(&[4, 3], |i| (i as f64).cos()));
        let p0 = tape.input(Tensor::from_fn(&[4, 3], |i| i as f64 * 0.1));
        let p1 = tape.input(Tensor::from_fn(&[4, 3], |i| -(i as f64) * 0.2));
        let b = EmbeddingBatch::new(&tape, chunks, None, vec![0, 1, 0, 1], vec![Visible, Visible, Infrared, Infrared]).unwrap();
        let cfg = LossConfig {
            lambda_aggregation: 0.0,
            ..LossConfig::default()
        };
        let t = total_loss(&mut tape, &b, spec, &[p0, p1], &cfg, Aggregation::Paba).unwrap();
        assert_eq!(t.paba, 0.0);
        let expect = t.id_specific + t.id_parts;
        assert!((tape.value(t.total).item() - expect).abs() < 1e-12);
    }
}
