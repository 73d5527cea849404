use crate::data::Modality;
use crate::error::{Error, Result};
use crate::model::EmbeddingBatch;
use crate::numerics::{Real, Tape, Var};

/// Mean over identities of the squared distance between the identity's
/// visible and infrared centroids of part-averaged chunk features.
pub fn cross_centre_loss<T: Real>(tape: &mut Tape<T>, batch: &EmbeddingBatch) -> Result<Var> {
    let vis_rows = batch.rows_of(Modality::Visible);
    let ir_rows = batch.rows_of(Modality::Infrared);
    if vis_rows.is_empty() || ir_rows.is_empty() {
        return Err(Error::Batch("cross-centre loss needs both modalities".into()));
    }
    let mut ids: Vec<usize> = batch.identities.clone();
    ids.sort_unstable();
    ids.dedup();
    let group = |rows: &[usize]| -> Vec<usize> {
        rows.iter()
            .map(|&r| ids.binary_search(&batch.identities[r]).expect("identity listed"))
            .collect()
    };
    let pooled = tape.mean_parts(batch.chunks)?;
    let v = tape.gather_rows(pooled, &vis_rows)?;
    let i = tape.gather_rows(pooled, &ir_rows)?;
    let cv = tape
        .group_mean(v, &group(&vis_rows), ids.len())
        .map_err(|_| Error::Batch("an identity has no visible samples".into()))?;
    let ci = tape
        .group_mean(i, &group(&ir_rows), ids.len())
        .map_err(|_| Error::Batch("an identity has no infrared samples".into()))?;
    let diff = tape.sub(cv, ci)?;
    let sq = tape.row_squared_norm(diff)?;
    Ok(tape.mean(sq))
}
