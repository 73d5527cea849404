//! Cross-modality retrieval: descriptors, Rank-k (CMC) and mAP.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{gaussian_blur, intensity_map, Dataset, Modality};
use crate::error::{Error, Result};
use crate::model::{images_to_tensor, Model};
use crate::numerics::Real;
use crate::spectral::{compose_seg, Image, SegConfig};

const EMBED_BATCH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Protocol {
    /// Visible queries against an infrared gallery.
    V2I,
    /// Infrared queries against a visible gallery.
    I2V,
}

impl Protocol {
    pub fn query_modality(self) -> Modality {
        match self {
            Protocol::V2I => Modality::Visible,
            Protocol::I2V => Modality::Infrared,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Protocol::V2I => "V-2-I",
            Protocol::I2V => "I-2-V",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "").as_str() {
            "V2I" => Ok(Protocol::V2I),
            "I2V" => Ok(Protocol::I2V),
            _ => Err(Error::Config(format!("unknown protocol {s:?}; expected V2I or I2V"))),
        }
    }
}

/// How visible images are presented to the embedder.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum VisibleStyle {
    /// Raw colour images.
    #[default]
    Raw,
    /// Spectrally enhanced grey images.
    Seg(SegConfig),
}

impl VisibleStyle {
    pub fn apply(&self, img: &Image) -> Result<Image> {
        match self {
            VisibleStyle::Raw => Ok(img.clone()),
            VisibleStyle::Seg(cfg) => compose_seg(img, cfg),
        }
    }
}

/// Row-major descriptor matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptors {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Descriptors {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::Eval(format!("{} values do not form rows of {dim}", data.len())));
        }
        Ok(Self { dim, data })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Maps images to retrieval descriptors.
pub trait Embedder {
    fn embed(&self, images: &[&Image]) -> Result<Descriptors>;
}

/// Concatenation of the per-chunk L2-normalised chunk embeddings.
impl<T: Real> Embedder for Model<T> {
    fn embed(&self, images: &[&Image]) -> Result<Descriptors> {
        let dim = self.config().descriptor_dim();
        let chunk = self.config().chunk_dim();
        let mut data = Vec::with_capacity(images.len() * dim);
        for group in images.chunks(EMBED_BATCH) {
            let out = self.embed_chunks(images_to_tensor::<T>(group)?)?;
            for part in out.data().chunks(chunk) {
                let norm = part.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
                let inv = if norm > 0.0 { 1.0 / norm } else { 0.0 };
                data.extend(part.iter().map(|v| v.as_f64() * inv));
            }
        }
        Descriptors::new(dim, data)
    }
}

pub fn embed_gallery(embedder: &impl Embedder, images: &[&Image]) -> Result<Descriptors> {
    embedder.embed(images)
}

/// Training-free pixel embedder: colour images go through the synthetic
/// infrared intensity map and a sigma-1 blur, grey images pass unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IntensityEmbedder;

impl Embedder for IntensityEmbedder {
    fn embed(&self, images: &[&Image]) -> Result<Descriptors> {
        let Some(first) = images.first() else {
            return Err(Error::Eval("no images to embed".into()));
        };
        let dim = first.height() * first.width();
        let mut data = Vec::with_capacity(images.len() * dim);
        for img in images {
            if img.height() * img.width() != dim {
                return Err(Error::Eval("images of different sizes".into()));
            }
            if img.channels() == 3 {
                let plane: Vec<f64> = img.pixels().chunks(3).map(|p| intensity_map(p[0], p[1], p[2])).collect();
                data.extend(gaussian_blur(&plane, img.height(), img.width(), 1.0));
            } else {
                data.extend_from_slice(img.pixels());
            }
        }
        Descriptors::new(dim, data)
    }
}

/// Outcome of a single ranked query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryOutcome {
    /// 1-based rank of the first correct gallery item.
    pub first_hit: usize,
    pub ap: f64,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Ranks a gallery given query-to-gallery distances. Ties are broken by
/// gallery index; `skip` removes one gallery item (self-match). Returns
/// `None` when no gallery item shares the query identity.
pub fn rank_from_distances(
    distances: &[f64],
    gallery_ids: &[usize],
    query_id: usize,
    skip: Option<usize>,
) -> Option<QueryOutcome> {
    let mut order: Vec<usize> = (0..distances.len()).filter(|&g| Some(g) != skip).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut precision_sum = 0.0;
    let mut first_hit = None;
    for (pos, &g) in order.iter().enumerate() {
        if gallery_ids[g] == query_id {
            hits += 1;
            precision_sum += hits as f64 / (pos + 1) as f64;
            first_hit.get_or_insert(pos + 1);
        }
    }
    first_hit.map(|first_hit| QueryOutcome {
        first_hit,
        ap: precision_sum / hits as f64,
    })
}

/// Ranks the gallery by Euclidean distance to `query`.
pub fn rank_and_ap(
    query: &[f64],
    query_id: usize,
    gallery: &Descriptors,
    gallery_ids: &[usize],
) -> Option<QueryOutcome> {
    let d: Vec<f64> = (0..gallery.len()).map(|g| euclidean(query, gallery.row(g))).collect();
    rank_from_distances(&d, gallery_ids, query_id, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub protocol: Protocol,
    /// `cmc[k - 1]` is the Rank-k accuracy.
    pub cmc: Vec<f64>,
    pub map: f64,
    pub per_query_ap: Vec<f64>,
    pub num_queries: usize,
    pub num_gallery: usize,
    /// Queries without any correct gallery item; not part of the averages.
    pub excluded_queries: usize,
}

impl EvalResult {
    pub fn rank(&self, k: usize) -> f64 {
        if self.cmc.is_empty() {
            return 0.0;
        }
        self.cmc[(k.max(1) - 1).min(self.cmc.len() - 1)]
    }

    pub fn rank1(&self) -> f64 {
        self.rank(1)
    }
}

/// Aggregates `rank_and_ap` over all queries. With `exclude_same_index` the
/// gallery item at the query's own position is skipped.
pub fn evaluate_descriptors(
    protocol: Protocol,
    query: &Descriptors,
    query_ids: &[usize],
    gallery: &Descriptors,
    gallery_ids: &[usize],
    exclude_same_index: bool,
) -> Result<EvalResult> {
    if query.is_empty() || gallery.is_empty() {
        return Err(Error::Eval(format!(
            "empty evaluation set: {} queries, {} gallery items",
            query.len(),
            gallery.len()
        )));
    }
    if query.dim != gallery.dim || query.len() != query_ids.len() || gallery.len() != gallery_ids.len() {
        return Err(Error::Eval("descriptor and label counts disagree".into()));
    }
    let span = gallery.len() - usize::from(exclude_same_index);
    let mut hits_at = vec![0usize; span.max(1)];
    let mut aps = Vec::with_capacity(query.len());
    let mut excluded = 0;
    for q in 0..query.len() {
        let d: Vec<f64> = (0..gallery.len()).map(|g| euclidean(query.row(q), gallery.row(g))).collect();
        let skip = exclude_same_index.then_some(q);
        match rank_from_distances(&d, gallery_ids, query_ids[q], skip) {
            Some(o) => {
                hits_at[o.first_hit - 1] += 1;
                aps.push(o.ap);
            }
            None => excluded += 1,
        }
    }
    if aps.is_empty() {
        return Err(Error::Eval("no query has a correct gallery item".into()));
    }
    let n = aps.len() as f64;
    let mut acc = 0usize;
    let cmc = hits_at
        .iter()
        .map(|h| {
            acc += h;
            acc as f64 / n
        })
        .collect();
    Ok(EvalResult {
        protocol,
        cmc,
        map: aps.iter().sum::<f64>() / n,
        per_query_ap: aps,
        num_queries: query.len(),
        num_gallery: gallery.len(),
        excluded_queries: excluded,
    })
}

/// Queries of `protocol.query_modality()` against the other modality of the
/// same dataset; visible images are presented in `style`.
pub fn evaluate(
    embedder: &impl Embedder,
    dataset: &Dataset,
    protocol: Protocol,
    style: &VisibleStyle,
) -> Result<EvalResult> {
    let prepare = |m: Modality| -> Result<(Vec<Image>, Vec<usize>)> {
        let pos = dataset.modality(m);
        let imgs = pos
            .iter()
            .map(|&i| match m {
                Modality::Visible => style.apply(&dataset.images[i]),
                Modality::Infrared => Ok(dataset.images[i].clone()),
            })
            .collect::<Result<Vec<_>>>()?;
        let ids = pos.iter().map(|&i| dataset.index.records[i].identity).collect();
        Ok((imgs, ids))
    };
    let (q_imgs, q_ids) = prepare(protocol.query_modality())?;
    let (g_imgs, g_ids) = prepare(protocol.query_modality().other())?;
    if q_imgs.is_empty() || g_imgs.is_empty() {
        return Err(Error::Eval(format!(
            "empty evaluation set: {} queries, {} gallery items",
            q_imgs.len(),
            g_imgs.len()
        )));
    }
    let q = embedder.embed(&q_imgs.iter().collect::<Vec<_>>())?;
    let g = embedder.embed(&g_imgs.iter().collect::<Vec<_>>())?;
    evaluate_descriptors(protocol, &q, &q_ids, &g, &g_ids, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_ap_example() {
        let o = rank_from_distances(&[0.1, 0.2, 0.3], &[0, 1, 0], 0, None).unwrap();
        assert_eq!(o.first_hit, 1);
        assert!((o.ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_correct_item() {
        let o = rank_from_distances(&[0.5], &[3], 3, None).unwrap();
        assert_eq!((o.first_hit, o.ap), (1, 1.0));
        let o = rank_from_distances(&[0.1, 0.2, 0.3, 0.9], &[1, 1, 1, 0], 0, None).unwrap();
        assert_eq!(o.first_hit, 4);
        assert!((o.ap - 0.25).abs() < 1e-15);
        assert!(rank_from_distances(&[0.1], &[1], 0, None).is_none());
    }

    #[test]
    fn ties_follow_gallery_index() {
        let o = rank_from_distances(&[0.2, 0.2], &[1, 0], 0, None).unwrap();
        assert_eq!(o.first_hit, 2);
        let o = rank_from_distances(&[0.2, 0.2], &[0, 1], 0, None).unwrap();
        assert_eq!(o.first_hit, 1);
    }

    #[test]
    fn self_retrieval_with_one_extra_copy() {
        let data: Vec<f64> = [0.0, 0.0, 0.1, 0.0, 5.0, 5.0, 5.1, 5.0].to_vec();
        let d = Descriptors::new(2, data).unwrap();
        let ids = [0, 0, 1, 1];
        let r = evaluate_descriptors(Protocol::V2I, &d, &ids, &d, &ids, true).unwrap();
        assert_eq!(r.map, 1.0);
        assert_eq!(r.cmc.len(), 3);
        assert_eq!(r.rank1(), 1.0);
    }

    #[test]
    fn cmc_is_cumulative() {
        let q = Descriptors::new(1, vec![0.0, 10.0]).unwrap();
        let g = Descriptors::new(1, vec![1.0, 2.0, 9.0]).unwrap();
        let r = evaluate_descriptors(Protocol::I2V, &q, &[7, 8], &g, &[8, 7, 8], false).unwrap();
        assert_eq!(r.cmc, vec![0.5, 1.0, 1.0]);
        assert_eq!(r.rank(10), 1.0);
        assert!(evaluate_descriptors(Protocol::V2I, &q, &[7, 8], &g, &[1, 1, 1], false).is_err());
        let empty = Descriptors::new(1, vec![]).unwrap();
        assert!(evaluate_descriptors(Protocol::V2I, &empty, &[], &g, &[1, 1, 1], false).is_err());
    }

    #[test]
    fn protocol_parsing() {
        assert_eq!("v2i".parse::<Protocol>().unwrap(), Protocol::V2I);
        assert_eq!("I-2-V".parse::<Protocol>().unwrap(), Protocol::I2V);
        assert!("X2Y".parse::<Protocol>().is_err());
    }
}
