use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Modality;
use crate::error::Result;
use crate::losses::{cross_centre_loss, paba_loss, total_loss, Aggregation, LossConfig};
use crate::model::{BackboneConfig, EmbeddingBatch, Model};
use crate::numerics::{finite_diff_check_all, ParamStore, Real, Tape, Tensor};

/// Two-stage, four-chunk network small enough for exhaustive finite
/// differences.
pub fn tiny_backbone(seed: u64) -> BackboneConfig {
    BackboneConfig {
        stage_channels: vec![4, 6],
        specific_channels: 6,
        input_height: 16,
        input_width: 8,
        norm_groups: 2,
        parts: 4,
        num_identities: 3,
        seed,
        ..BackboneConfig::default()
    }
}

/// Scalar objective differentiated by [`tiny_model_gradient_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckedLoss {
    /// The weighted training objective with the given aggregation term.
    Total(Aggregation),
    /// Identity cross-entropy on specific features plus all chunk classifiers.
    Identity,
    /// Cross-centre term on its own.
    CrossCentre,
    /// Pseudo-anchor aggregation term on its own.
    Paba,
}

/// Compares tape gradients of `loss` through the tiny network against
/// central differences with step `eps`, at precision `T`. Returns the worst
/// relative error per parameter tensor.
pub fn tiny_model_gradient_check<T: Real>(seed: u64, loss: CheckedLoss, eps: f64) -> Result<Vec<(String, f64)>> {
    let cfg = tiny_backbone(seed);
    let mut model = Model::<T>::new(cfg.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let (p, k) = (3usize, 2usize);
    let shape = [p * k, 3, cfg.input_height, cfg.input_width];
    let visible = Tensor::from_fn(&shape, |_| T::lit(rng.random_range(0.0..1.0)));
    let infrared = Tensor::from_fn(&shape, |_| T::lit(rng.random_range(0.0..1.0)));
    let ids: Vec<usize> = (0..p).flat_map(|i| std::iter::repeat_n(i, k)).collect();
    let labels: Vec<usize> = ids.iter().chain(&ids).copied().collect();
    let modalities: Vec<Modality> = std::iter::repeat_n(Modality::Visible, p * k)
        .chain(std::iter::repeat_n(Modality::Infrared, p * k))
        .collect();
    let loss_cfg = LossConfig::default();
    let template = model.clone();
    let f = |tape: &mut Tape<T>, store: &ParamStore<T>| {
        let mut m = template.clone();
        *m.params_mut() = store.clone();
        let out = m.forward(tape, visible.clone(), infrared.clone())?;
        let batch = EmbeddingBatch::new(tape, out.chunks, Some(out.specific), labels.clone(), modalities.clone())?;
        match loss {
            CheckedLoss::Total(aggregation) => {
                Ok(total_loss(tape, &batch, out.specific_logits, &out.part_logits, &loss_cfg, aggregation)?.total)
            }
            CheckedLoss::Identity => {
                let no_aggregation = LossConfig {
                    lambda_aggregation: 0.0,
                    ..loss_cfg.clone()
                };
                let terms = total_loss(tape, &batch, out.specific_logits, &out.part_logits, &no_aggregation, Aggregation::None)?;
                Ok(terms.total)
            }
            CheckedLoss::CrossCentre => cross_centre_loss(tape, &batch),
            CheckedLoss::Paba => paba_loss(tape, &batch, &loss_cfg),
        }
    };
    finite_diff_check_all(model.params_mut(), eps, f)
}
