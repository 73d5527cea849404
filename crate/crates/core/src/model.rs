//! Weight-shareable dual-stream embedding network.
//!
//! Both modalities pass through the same stack of strided conv stages; the
//! resulting maps are cut into horizontal strips (chunk embeddings) and also
//! fed to a modality-specific final stage. Linear classifiers on top of every
//! chunk and on the specific features supply identity logits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Modality;
use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::spectral::Image;

const NORM_EPS: f64 = 1e-5;

/// Whether identity classifiers are shared by both modalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifierSharing {
    #[default]
    Shared,
    PerModality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub in_channels: usize,
    /// Output channels of each shared stride-2 stage.
    pub stage_channels: Vec<usize>,
    /// Output channels of the duplicated modality-specific stage.
    pub specific_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    /// Per-sample group normalisation groups in each shared stage; 0 gives
    /// plain conv + bias + ReLU stages.
    #[serde(default)]
    pub norm_groups: usize,
    /// Number of horizontal chunks.
    pub parts: usize,
    pub num_identities: usize,
    pub classifier_sharing: ClassifierSharing,
    pub seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            stage_channels: vec![16, 32, 64],
            specific_channels: 128,
            input_height: 96,
            input_width: 48,
            norm_groups: 16,
            parts: 12,
            num_identities: 16,
            classifier_sharing: ClassifierSharing::Shared,
            seed: 0,
        }
    }
}

impl BackboneConfig {
    pub fn total_stride(&self) -> usize {
        1 << self.stage_channels.len()
    }

    /// Spatial size of the shared feature maps.
    pub fn feature_hw(&self) -> (usize, usize) {
        let s = self.total_stride();
        (self.input_height.div_ceil(s), self.input_width.div_ceil(s))
    }

    pub fn chunk_dim(&self) -> usize {
        self.stage_channels.last().copied().unwrap_or(0)
    }

    pub fn descriptor_dim(&self) -> usize {
        self.parts * self.chunk_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.is_empty() || self.stage_channels.contains(&0) {
            return Err(Error::Config("at least one shared stage with channels > 0 is required".into()));
        }
        if self.in_channels == 0 || self.specific_channels == 0 || self.num_identities == 0 {
            return Err(Error::Config("channel and identity counts must be positive".into()));
        }
        if self.norm_groups > 0 {
            if let Some(c) = self.stage_channels.iter().find(|&&c| c % self.norm_groups != 0) {
                return Err(Error::Config(format!(
                    "stage with {c} channels is not divisible into norm_groups={}",
                    self.norm_groups
                )));
            }
        }
        let stride = self.total_stride();
        if self.input_height % stride != 0 || self.input_width % stride != 0 {
            return Err(Error::Config(format!(
                "input {}x{} is not divisible by the trunk stride {stride}",
                self.input_height, self.input_width
            )));
        }
        let (fh, _) = self.feature_hw();
        if self.parts == 0 || fh % self.parts != 0 {
            return Err(Error::Config(format!(
                "feature height {fh} (input height {} / stride {stride}) is not divisible by parts={}",
                self.input_height, self.parts
            )));
        }
        Ok(())
    }
}

/// Which classifier produces logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Part(usize),
    Specific,
}

#[derive(Debug, Clone, Copy)]
struct ConvLayer {
    weight: ParamId,
    bias: ParamId,
    /// Per-channel gain after group normalisation.
    scale: Option<ParamId>,
}

#[derive(Debug, Clone, Copy)]
struct LinearLayer {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct Classifiers {
    parts: Vec<LinearLayer>,
    specific: LinearLayer,
}

/// Chunk (and optionally specific) embeddings of a batch with labels.
#[derive(Debug, Clone)]
pub struct EmbeddingBatch {
    /// `[B, parts, chunk_dim]`
    pub chunks: Var,
    /// `[B, specific_channels]`
    pub specific: Option<Var>,
    pub identities: Vec<usize>,
    pub modalities: Vec<Modality>,
}

impl EmbeddingBatch {
    pub fn new<T: Real>(
        tape: &Tape<T>,
        chunks: Var,
        specific: Option<Var>,
        identities: Vec<usize>,
        modalities: Vec<Modality>,
    ) -> Result<Self> {
        let s = tape.value(chunks).shape();
        if s.len() != 3 || s[0] != identities.len() || s[0] != modalities.len() {
            return Err(Error::Batch(format!(
                "chunks {s:?} with {} identity and {} modality labels",
                identities.len(),
                modalities.len()
            )));
        }
        Ok(Self {
            chunks,
            specific,
            identities,
            modalities,
        })
    }

    pub fn len(&self) -> usize {
        self.identities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identities.is_empty()
    }

    pub fn rows_of(&self, modality: Modality) -> Vec<usize> {
        (0..self.len()).filter(|&r| self.modalities[r] == modality).collect()
    }
}

/// Outputs of one training forward pass over `[visible ; infrared]` rows.
#[derive(Debug, Clone)]
pub struct DualForward {
    /// `[B, parts, chunk_dim]`
    pub chunks: Var,
    /// `[B, specific_channels]`
    pub specific: Var,
    /// One `[B, num_identities]` logit tensor per chunk.
    pub part_logits: Vec<Var>,
    pub specific_logits: Var,
}

#[derive(Debug, Clone)]
pub struct Model<T: Real = f32> {
    config: BackboneConfig,
    params: ParamStore<T>,
    stages: Vec<ConvLayer>,
    specific_visible: ConvLayer,
    specific_infrared: ConvLayer,
    /// `[0]` is used for visible rows (and for everything when shared).
    classifiers: Vec<Classifiers>,
}

fn kaiming<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, gain: f64) -> Tensor<T> {
    let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("finite std");
    Tensor::from_fn(shape, |_| T::lit(normal.sample(rng)))
}

impl<T: Real> Model<T> {
    pub fn new(config: BackboneConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();

        let mut stages = Vec::new();
        let mut in_ch = config.in_channels;
        for (i, &out_ch) in config.stage_channels.iter().enumerate() {
            let w = kaiming(&mut rng, &[out_ch, in_ch, 3, 3], in_ch * 9, 2.0);
            let weight = params.add(format!("trunk.stage{i}.weight"), w)?;
            let scale = match config.norm_groups {
                0 => None,
                _ => Some(params.add(format!("trunk.stage{i}.scale"), Tensor::full(&[out_ch], T::one()))?),
            };
            let bias = params.add(format!("trunk.stage{i}.bias"), Tensor::zeros(&[out_ch]))?;
            stages.push(ConvLayer { weight, bias, scale });
            in_ch = out_ch;
        }

        // Both modality heads start from the same draw.
        let sc = config.specific_channels;
        let w = kaiming::<T>(&mut rng, &[sc, in_ch, 3, 3], in_ch * 9, 2.0);
        let specific = |tag: &str, params: &mut ParamStore<T>| -> Result<ConvLayer> {
            Ok(ConvLayer {
                weight: params.add(format!("specific.{tag}.weight"), w.clone())?,
                bias: params.add(format!("specific.{tag}.bias"), Tensor::zeros(&[sc]))?,
                scale: None,
            })
        };
        let specific_visible = specific("visible", &mut params)?;
        let specific_infrared = specific("infrared", &mut params)?;

        let tags: &[&str] = match config.classifier_sharing {
            ClassifierSharing::Shared => &[""],
            ClassifierSharing::PerModality => &["visible.", "infrared."],
        };
        let ids = config.num_identities;
        let chunk_dim = config.chunk_dim();
        let mut classifiers = Vec::new();
        for tag in tags {
            let mut parts = Vec::with_capacity(config.parts);
            for p in 0..config.parts {
                let w = kaiming(&mut rng, &[chunk_dim, ids], chunk_dim, 1.0);
                parts.push(LinearLayer {
                    weight: params.add(format!("classifier.{tag}part{p}.weight"), w)?,
                    bias: params.add(format!("classifier.{tag}part{p}.bias"), Tensor::zeros(&[ids]))?,
                });
            }
            let w = kaiming(&mut rng, &[sc, ids], sc, 1.0);
            let specific = LinearLayer {
                weight: params.add(format!("classifier.{tag}specific.weight"), w)?,
                bias: params.add(format!("classifier.{tag}specific.bias"), Tensor::zeros(&[ids]))?,
            };
            classifiers.push(Classifiers { parts, specific });
        }

        Ok(Self {
            config,
            params,
            stages,
            specific_visible,
            specific_infrared,
            classifiers,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Same architecture and weights at another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            stages: self.stages.clone(),
            specific_visible: self.specific_visible,
            specific_infrared: self.specific_infrared,
            classifiers: self.classifiers.clone(),
        }
    }

    /// Names of the modality-specific stage parameters for `modality`.
    pub fn specific_param_ids(&self, modality: Modality) -> [ParamId; 2] {
        let l = match modality {
            Modality::Visible => self.specific_visible,
            Modality::Infrared => self.specific_infrared,
        };
        [l.weight, l.bias]
    }

    /// Parameter ids of the classifier behind `head` (visible-side when
    /// classifiers are per modality).
    pub fn classifier_param_ids(&self, head: Head) -> Result<[ParamId; 2]> {
        let l = self.linear_for(head, Modality::Visible)?;
        Ok([l.weight, l.bias])
    }

    fn conv_block(&self, tape: &mut Tape<T>, x: Var, layer: ConvLayer) -> Result<Var> {
        let w = tape.param(&self.params, layer.weight);
        let b = tape.param(&self.params, layer.bias);
        let mut y = tape.conv2d(x, w, 2, 1)?;
        if let Some(scale) = layer.scale {
            y = tape.group_norm(y, self.config.norm_groups, NORM_EPS)?;
            let a = tape.param(&self.params, scale);
            y = tape.channel_scale(y, a)?;
        }
        let y = tape.channel_bias(y, b)?;
        Ok(tape.relu(y))
    }

    /// Shared stages on `[B, C, H, W]` input.
    pub fn trunk(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let s = tape.value(x).shape();
        let c = &self.config;
        if s.len() != 4 || s[1] != c.in_channels || s[2] != c.input_height || s[3] != c.input_width {
            return Err(Error::Shape {
                op: "trunk",
                detail: format!(
                    "expected [B,{},{},{}], got {s:?}",
                    c.in_channels, c.input_height, c.input_width
                ),
            });
        }
        self.stages
            .iter()
            .try_fold(x, |h, &layer| self.conv_block(tape, h, layer))
    }

    /// Runs both batches through the shared stages as one concatenated
    /// batch and splits the result back.
    pub fn shared_forward(&self, tape: &mut Tape<T>, visible: Var, infrared: Var) -> Result<(Var, Var)> {
        let (vs, is) = (tape.value(visible).shape(), tape.value(infrared).shape());
        if vs.len() != 4 || is.len() != 4 || vs[1..] != is[1..] {
            return Err(Error::Shape {
                op: "shared_forward",
                detail: format!("visible {vs:?} vs infrared {is:?}"),
            });
        }
        let (nv, ni) = (vs[0], is[0]);
        let joint = tape.concat(&[visible, infrared])?;
        let feat = self.trunk(tape, joint)?;
        Ok((tape.slice(feat, 0, nv)?, tape.slice(feat, nv, ni)?))
    }

    /// `[B, C, H', W']` to `[B, parts, C]`.
    pub fn chunk_embed(&self, tape: &mut Tape<T>, shared: Var) -> Result<Var> {
        tape.strip_pool(shared, self.config.parts)
    }

    /// Modality's own final stage followed by global average pooling.
    pub fn specific_forward(&self, tape: &mut Tape<T>, shared: Var, modality: Modality) -> Result<Var> {
        let layer = match modality {
            Modality::Visible => self.specific_visible,
            Modality::Infrared => self.specific_infrared,
        };
        let y = self.conv_block(tape, shared, layer)?;
        tape.global_avg_pool(y)
    }

    fn linear_for(&self, head: Head, modality: Modality) -> Result<LinearLayer> {
        let set = match (self.config.classifier_sharing, modality) {
            (ClassifierSharing::PerModality, Modality::Infrared) => &self.classifiers[1],
            _ => &self.classifiers[0],
        };
        match head {
            Head::Specific => Ok(set.specific),
            Head::Part(p) => set
                .parts
                .get(p)
                .copied()
                .ok_or_else(|| Error::Config(format!("no classifier for part {p}"))),
        }
    }

    /// Identity logits from `head` for rows of one modality.
    pub fn classify(&self, tape: &mut Tape<T>, emb: Var, head: Head, modality: Modality) -> Result<Var> {
        let l = self.linear_for(head, modality)?;
        let w = tape.param(&self.params, l.weight);
        let b = tape.param(&self.params, l.bias);
        tape.linear(emb, w, b)
    }

    fn classify_dual(&self, tape: &mut Tape<T>, emb: Var, head: Head, n_visible: usize) -> Result<Var> {
        match self.config.classifier_sharing {
            ClassifierSharing::Shared => self.classify(tape, emb, head, Modality::Visible),
            ClassifierSharing::PerModality => {
                let total = tape.value(emb).shape()[0];
                let v = tape.slice(emb, 0, n_visible)?;
                let i = tape.slice(emb, n_visible, total - n_visible)?;
                let lv = self.classify(tape, v, head, Modality::Visible)?;
                let li = self.classify(tape, i, head, Modality::Infrared)?;
                tape.concat(&[lv, li])
            }
        }
    }

    /// Full training forward pass. Output rows are the visible samples
    /// followed by the infrared samples.
    pub fn forward(&self, tape: &mut Tape<T>, visible: Tensor<T>, infrared: Tensor<T>) -> Result<DualForward> {
        let nv = visible.shape()[0];
        let v = tape.input(visible);
        let i = tape.input(infrared);
        let (fv, fi) = self.shared_forward(tape, v, i)?;
        let joint = tape.concat(&[fv, fi])?;
        let chunks = self.chunk_embed(tape, joint)?;
        let sv = self.specific_forward(tape, fv, Modality::Visible)?;
        let si = self.specific_forward(tape, fi, Modality::Infrared)?;
        let specific = tape.concat(&[sv, si])?;
        let part_logits = (0..self.config.parts)
            .map(|p| {
                let emb = tape.select_part(chunks, p)?;
                self.classify_dual(tape, emb, Head::Part(p), nv)
            })
            .collect::<Result<Vec<_>>>()?;
        let specific_logits = self.classify_dual(tape, specific, Head::Specific, nv)?;
        Ok(DualForward {
            chunks,
            specific,
            part_logits,
            specific_logits,
        })
    }

    /// Chunk embeddings `[B, parts, chunk_dim]` for inference.
    pub fn embed_chunks(&self, batch: Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.input(batch);
        let f = self.trunk(&mut tape, x)?;
        let c = self.chunk_embed(&mut tape, f)?;
        Ok(tape.value(c).clone())
    }
}

/// Stacks images into a `[B, 3, H, W]` tensor with pixels scaled to `[0, 1]`.
/// Single-channel images are replicated.
pub fn images_to_tensor<T: Real>(images: &[&Image]) -> Result<Tensor<T>> {
    let Some(first) = images.first() else {
        return Err(Error::Batch("empty image batch".into()));
    };
    let (h, w) = (first.height(), first.width());
    let plane = h * w;
    let mut data = vec![T::zero(); images.len() * 3 * plane];
    for (b, img) in images.iter().enumerate() {
        if img.height() != h || img.width() != w {
            return Err(Error::Shape {
                op: "images_to_tensor",
                detail: format!("{}x{} image in a {h}x{w} batch", img.height(), img.width()),
            });
        }
        let ch = img.channels();
        for (i, px) in img.pixels().chunks_exact(ch).enumerate() {
            for c in 0..3 {
                let v = px[if ch == 1 { 0 } else { c }];
                data[(b * 3 + c) * plane + i] = T::lit(v / 255.0);
            }
        }
    }
    Tensor::new(vec![images.len(), 3, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> BackboneConfig {
        BackboneConfig {
            stage_channels: vec![4, 6],
            specific_channels: 5,
            input_height: 16,
            input_width: 8,
            norm_groups: 2,
            parts: 4,
            num_identities: 3,
            ..BackboneConfig::default()
        }
    }

    #[test]
    fn default_geometry() {
        let c = BackboneConfig::default();
        c.validate().unwrap();
        assert_eq!(c.total_stride(), 8);
        assert_eq!(c.feature_hw(), (12, 6));
        assert_eq!(c.descriptor_dim(), 768);
    }

    #[test]
    fn rejects_indivisible_parts() {
        let c = BackboneConfig {
            parts: 5,
            ..BackboneConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn parameter_names_are_unique_and_stable() {
        let m = Model::<f32>::new(tiny()).unwrap();
        assert!(m.params().by_name("trunk.stage1.weight").is_some());
        assert!(m.params().by_name("specific.infrared.bias").is_some());
        assert!(m.params().by_name("classifier.part3.weight").is_some());
        let per = Model::<f32>::new(BackboneConfig {
            classifier_sharing: ClassifierSharing::PerModality,
            ..tiny()
        })
        .unwrap();
        assert!(per.params().by_name("classifier.infrared.specific.weight").is_some());
    }

    #[test]
    fn zero_input_gives_zero_features() {
        let m = Model::<f32>::new(tiny()).unwrap();
        let mut tape = Tape::new();
        let z = tape.input(Tensor::zeros(&[2, 3, 16, 8]));
        let f = m.trunk(&mut tape, z).unwrap();
        assert_eq!(tape.value(f).shape(), &[2, 6, 4, 2]);
        assert!(tape.value(f).data().iter().all(|&v| v == 0.0));
        let s = m.specific_forward(&mut tape, f, Modality::Visible).unwrap();
        assert!(tape.value(s).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_shapes() {
        let m = Model::<f32>::new(tiny()).unwrap();
        let mut tape = Tape::new();
        let v = Tensor::from_fn(&[3, 3, 16, 8], |i| (i as f32 * 0.01).sin().abs());
        let ir = Tensor::from_fn(&[3, 3, 16, 8], |i| (i as f32 * 0.02).cos().abs());
        let out = m.forward(&mut tape, v, ir).unwrap();
        assert_eq!(tape.value(out.chunks).shape(), &[6, 4, 6]);
        assert_eq!(tape.value(out.specific).shape(), &[6, 5]);
        assert_eq!(out.part_logits.len(), 4);
        for l in &out.part_logits {
            assert_eq!(tape.value(*l).shape(), &[6, 3]);
        }
        assert_eq!(tape.value(out.specific_logits).shape(), &[6, 3]);
    }

    #[test]
    fn mismatched_spatial_dims_are_rejected() {
        let m = Model::<f32>::new(tiny()).unwrap();
        let mut tape = Tape::new();
        let v = tape.input(Tensor::zeros(&[1, 3, 16, 8]));
        let i = tape.input(Tensor::zeros(&[1, 3, 8, 8]));
        assert!(m.shared_forward(&mut tape, v, i).is_err());
    }

    #[test]
    fn images_scale_to_unit_range() {
        let img = Image::filled(2, 2, &[255.0], crate::spectral::ImageKind::Infrared).unwrap();
        let t = images_to_tensor::<f32>(&[&img]).unwrap();
        assert_eq!(t.shape(), &[1, 3, 2, 2]);
        assert!(t.data().iter().all(|&v| v == 1.0));
    }
}
