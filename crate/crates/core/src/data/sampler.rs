use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetIndex, Modality};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Identities per batch.
    pub p: usize,
    /// Images per identity per modality.
    pub k: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { p: 8, k: 7, seed: 0 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(Error::Config(format!("P must be >= 2 for negatives, got {}", self.p)));
        }
        if self.k < 2 {
            return Err(Error::Config(format!("K must be >= 2 for positive mining, got {}", self.k)));
        }
        Ok(())
    }
}

/// `2 P K` record positions: `P K` visible then `P K` infrared, each
/// identity contributing `K` consecutive rows in the same identity order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PkBatch {
    pub identities: Vec<usize>,
    pub visible: Vec<usize>,
    pub infrared: Vec<usize>,
}

impl PkBatch {
    /// Identity label of every row, visible rows first.
    pub fn row_identities(&self, k: usize) -> Vec<usize> {
        let per: Vec<usize> = self.identities.iter().flat_map(|&id| std::iter::repeat_n(id, k)).collect();
        per.iter().chain(per.iter()).copied().collect()
    }

    pub fn len(&self) -> usize {
        self.visible.len() + self.infrared.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `K` picks from `pool`: without replacement when possible, otherwise the
/// whole pool followed by uniform draws with replacement.
fn draw_k(pool: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut shuffled = pool.to_vec();
    shuffled.shuffle(rng);
    if shuffled.len() >= k {
        shuffled.truncate(k);
        return shuffled;
    }
    while shuffled.len() < k {
        shuffled.push(pool[rng.random_range(0..pool.len())]);
    }
    shuffled
}

fn eligible(groups: &[[Vec<usize>; 2]]) -> Vec<usize> {
    (0..groups.len()).filter(|&id| groups[id].iter().all(|g| !g.is_empty())).collect()
}

fn assemble(groups: &[[Vec<usize>; 2]], ids: Vec<usize>, k: usize, rng: &mut ChaCha8Rng) -> PkBatch {
    let mut visible = Vec::with_capacity(ids.len() * k);
    let mut infrared = Vec::with_capacity(ids.len() * k);
    for &id in &ids {
        visible.extend(draw_k(&groups[id][Modality::Visible as usize], k, rng));
        infrared.extend(draw_k(&groups[id][Modality::Infrared as usize], k, rng));
    }
    PkBatch {
        identities: ids,
        visible,
        infrared,
    }
}

/// One batch of `P` identities drawn uniformly without replacement.
pub fn pk_sample(index: &DatasetIndex, cfg: &SamplerConfig, rng: &mut ChaCha8Rng) -> Result<PkBatch> {
    cfg.validate()?;
    let groups = index.by_identity();
    let pool = eligible(&groups);
    if pool.len() < cfg.p {
        return Err(Error::Dataset(format!(
            "{} identities with both modalities; P = {}",
            pool.len(),
            cfg.p
        )));
    }
    let ids: Vec<usize> = pool.choose_multiple(rng, cfg.p).copied().collect();
    Ok(assemble(&groups, ids, cfg.k, rng))
}

/// Epoch-wise sampler. An epoch is `ceil(eligible / P)` batches over a
/// freshly shuffled identity queue, so every identity appears at least once;
/// a short final batch is topped up with identities drawn from the rest.
#[derive(Debug, Clone)]
pub struct PkSampler {
    cfg: SamplerConfig,
    groups: Vec<[Vec<usize>; 2]>,
    pool: Vec<usize>,
    rng: ChaCha8Rng,
}

impl PkSampler {
    pub fn new(index: &DatasetIndex, cfg: SamplerConfig) -> Result<Self> {
        cfg.validate()?;
        let groups = index.by_identity();
        let pool = eligible(&groups);
        if pool.len() < cfg.p {
            return Err(Error::Dataset(format!(
                "{} identities with both modalities; P = {}",
                pool.len(),
                cfg.p
            )));
        }
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            groups,
            pool,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.pool.len().div_ceil(self.cfg.p)
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    pub fn next_epoch(&mut self) -> Vec<PkBatch> {
        let mut queue = self.pool.clone();
        queue.shuffle(&mut self.rng);
        let p = self.cfg.p;
        let mut id_sets: Vec<Vec<usize>> = queue.chunks(p).map(<[usize]>::to_vec).collect();
        if let Some(last) = id_sets.last_mut().filter(|l| l.len() < p) {
            let others: Vec<usize> = self.pool.iter().copied().filter(|id| !last.contains(id)).collect();
            let need = p - last.len();
            last.extend(others.choose_multiple(&mut self.rng, need).copied());
        }
        id_sets
            .into_iter()
            .map(|ids| assemble(&self.groups, ids, self.cfg.k, &mut self.rng))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Record;
    use std::path::PathBuf;

    fn index(ids: usize, vis: usize, ir: usize) -> DatasetIndex {
        let mut records = Vec::new();
        for id in 0..ids {
            for (m, n) in [(Modality::Visible, vis), (Modality::Infrared, ir)] {
                for i in 0..n {
                    records.push(Record {
                        path: PathBuf::from(format!("{m}/{id}/{i}.png")),
                        identity: id,
                        modality: m,
                        camera: None,
                    });
                }
            }
        }
        DatasetIndex {
            root: PathBuf::new(),
            records,
            num_identities: ids,
        }
    }

    #[test]
    fn batch_counts() {
        let idx = index(5, 4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = pk_sample(&idx, &SamplerConfig { p: 2, k: 3, seed: 0 }, &mut rng).unwrap();
        assert_eq!(b.len(), 12);
        assert_eq!(b.visible.len(), 6);
        let rows = b.row_identities(3);
        for id in &b.identities {
            assert_eq!(rows.iter().filter(|r| *r == id).count(), 6);
        }
        for (r, &pos) in rows.iter().zip(b.visible.iter().chain(&b.infrared)) {
            assert_eq!(idx.records[pos].identity, *r);
        }
        assert!(b.visible.iter().all(|&i| idx.records[i].modality == Modality::Visible));
        assert!(b.infrared.iter().all(|&i| idx.records[i].modality == Modality::Infrared));
    }

    #[test]
    fn underpopulated_identity_repeats_once() {
        let idx = index(2, 4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = pk_sample(&idx, &SamplerConfig { p: 2, k: 3, seed: 0 }, &mut rng).unwrap();
        for chunk in b.infrared.chunks(3) {
            let mut c = chunk.to_vec();
            c.sort();
            c.dedup();
            assert_eq!(c.len(), 2);
        }
        for chunk in b.visible.chunks(3) {
            let mut c = chunk.to_vec();
            c.sort();
            c.dedup();
            assert_eq!(c.len(), 3);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let idx = index(9, 3, 3);
        let cfg = SamplerConfig { p: 4, k: 2, seed: 42 };
        let mut a = PkSampler::new(&idx, cfg).unwrap();
        let mut b = PkSampler::new(&idx, cfg).unwrap();
        for _ in 0..3 {
            assert_eq!(a.next_epoch(), b.next_epoch());
        }
    }

    #[test]
    fn epoch_covers_every_identity_exactly_when_divisible() {
        let idx = index(8, 3, 3);
        let mut s = PkSampler::new(&idx, SamplerConfig { p: 4, k: 2, seed: 7 }).unwrap();
        for _ in 0..4 {
            let epoch = s.next_epoch();
            assert_eq!(epoch.len(), 2);
            let mut seen: Vec<usize> = epoch.iter().flat_map(|b| b.identities.clone()).collect();
            seen.sort();
            assert_eq!(seen, (0..8).collect::<Vec<_>>());
        }
    }

    #[test]
    fn short_final_batch_is_topped_up() {
        let idx = index(5, 2, 2);
        let mut s = PkSampler::new(&idx, SamplerConfig { p: 2, k: 2, seed: 3 }).unwrap();
        for _ in 0..3 {
            let epoch = s.next_epoch();
            assert_eq!(epoch.len(), 3);
            let last = &epoch[2].identities;
            assert_eq!(last.len(), 2);
            assert_ne!(last[0], last[1]);
            let seen: Vec<usize> = epoch.iter().flat_map(|b| b.identities.clone()).collect();
            assert!((0..5).all(|i| seen.contains(&i)));
        }
    }

    #[test]
    fn errors() {
        let idx = index(3, 2, 2);
        assert!(PkSampler::new(&idx, SamplerConfig { p: 4, k: 2, seed: 0 }).is_err());
        assert!(PkSampler::new(&idx, SamplerConfig { p: 1, k: 2, seed: 0 }).is_err());
        assert!(PkSampler::new(&idx, SamplerConfig { p: 2, k: 1, seed: 0 }).is_err());
    }
}
