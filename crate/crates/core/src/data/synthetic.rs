//! Procedural stand-in for a paired visible/infrared identity dataset.
//!
//! Every identity is a blocky pedestrian silhouette (head, torso with
//! stripes, arms, legs) with its own geometry and part colours. Visible
//! images are rendered in colour over a cluttered background; infrared images
//! render an independent capture of the same person through the intensity
//! map `0.6 max(R,G,B) + 0.4 mean(R,G,B)` on a dark background, followed by a
//! Gaussian blur (sigma 1) and additive noise. Difficulty in `[0, 1]` scales
//! pose jitter, illumination change, clutter and sensor noise; at difficulty
//! 0 every image of an identity is identical and the infrared image is the
//! blurred intensity map of the visible one.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DatasetIndex, Modality, Record};
use crate::error::{Error, Result};
use crate::spectral::{Image, ImageKind};

/// Minimum fraction (XOR over union) of silhouette pixels by which any two
/// identities must differ.
pub const MIN_SILHOUETTE_DIFFERENCE: f64 = 0.05;
const INFRARED_BLUR_SIGMA: f64 = 1.0;
const INFRARED_NOISE_PER_DIFFICULTY: f64 = 8.0;
const MAX_REJECTIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_identities: usize,
    pub images_per_identity: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub difficulty: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_identities: 24,
            images_per_identity: 10,
            height: 96,
            width: 48,
            seed: 0,
            difficulty: 0.6,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_identities < 4 {
            return Err(Error::Config(format!("need at least 4 identities, got {}", self.num_identities)));
        }
        if self.images_per_identity == 0 {
            return Err(Error::Config("images_per_identity must be positive".into()));
        }
        if self.height < 8 || self.width < 8 {
            return Err(Error::Config(format!("image size {}x{} below 8x8", self.height, self.width)));
        }
        if !(0.0..=1.0).contains(&self.difficulty) {
            return Err(Error::Config(format!("difficulty {} outside [0, 1]", self.difficulty)));
        }
        Ok(())
    }
}

/// Written next to the generated folders as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticManifest {
    pub config: SyntheticConfig,
    /// Identity id to folder name.
    pub identities: BTreeMap<usize, String>,
}

#[derive(Debug, Clone)]
struct Silhouette {
    head_r: f64,
    head_cy: f64,
    torso_half: f64,
    torso_top: f64,
    torso_bottom: f64,
    arm_w: f64,
    arm_len: f64,
    leg_w: f64,
    leg_gap: f64,
    leg_bottom: f64,
    stripes: usize,
    vertical_stripes: bool,
    /// head, upper body, stripe, legs
    colors: [[f64; 3]; 4],
}

#[derive(Debug, Clone, Copy)]
struct Pose {
    dx: f64,
    dy: f64,
    scale: f64,
}

const NEUTRAL: Pose = Pose {
    dx: 0.0,
    dy: 0.0,
    scale: 1.0,
};

impl Silhouette {
    fn draw(rng: &mut ChaCha8Rng, aspect: f64) -> Self {
        let head_r = rng.random_range(0.10..0.18);
        let head_cy = rng.random_range(0.09..0.15);
        let torso_top = head_cy + head_r * aspect + 0.01;
        let mut color = || {
            let mut c = [0.0; 3];
            c.iter_mut().for_each(|v| *v = rng.random_range(30.0..255.0f64).round());
            c
        };
        let colors = [color(), color(), color(), color()];
        Self {
            head_r,
            head_cy,
            torso_half: rng.random_range(0.16..0.34),
            torso_top,
            torso_bottom: rng.random_range(0.46..0.62),
            arm_w: rng.random_range(0.0..0.1),
            arm_len: rng.random_range(0.12..0.34),
            leg_w: rng.random_range(0.09..0.2),
            leg_gap: rng.random_range(0.0..0.12),
            leg_bottom: rng.random_range(0.84..0.97),
            stripes: rng.random_range(0..5),
            vertical_stripes: rng.random_bool(0.5),
            colors,
        }
    }

    /// Part covering normalised point `(u, v)`: `u` is the horizontal offset
    /// from the centre line in widths, `v` the height fraction from the top.
    fn part_at(&self, u: f64, v: f64, aspect: f64) -> Option<usize> {
        let hv = (v - self.head_cy) / aspect;
        if u * u + hv * hv <= self.head_r * self.head_r {
            return Some(0);
        }
        if v >= self.torso_top && v <= self.torso_bottom {
            if u.abs() <= self.torso_half {
                if self.stripes > 0 {
                    let t = if self.vertical_stripes {
                        (u + self.torso_half) / (2.0 * self.torso_half)
                    } else {
                        (v - self.torso_top) / (self.torso_bottom - self.torso_top)
                    };
                    if ((t * (2 * self.stripes + 1) as f64).floor() as usize) % 2 == 1 {
                        return Some(2);
                    }
                }
                return Some(1);
            }
            if u.abs() <= self.torso_half + self.arm_w && v <= self.torso_top + self.arm_len {
                return Some(1);
            }
        }
        if v > self.torso_bottom && v <= self.leg_bottom {
            let off = u.abs() - self.leg_gap / 2.0;
            if (0.0..=self.leg_w).contains(&off) {
                return Some(3);
            }
        }
        None
    }

    /// Per-pixel part labels under a pose.
    fn raster(&self, h: usize, w: usize, pose: Pose) -> Vec<Option<usize>> {
        let aspect = w as f64 / h as f64;
        let mut out = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let u = ((x as f64 + 0.5) / w as f64 - 0.5 - pose.dx) / pose.scale;
                let v = ((y as f64 + 0.5) / h as f64 - 0.5 - pose.dy) / pose.scale + 0.5;
                out.push(self.part_at(u, v, aspect));
            }
        }
        out
    }
}

fn mask_difference(a: &[Option<usize>], b: &[Option<usize>]) -> f64 {
    let (mut xor, mut union) = (0usize, 0usize);
    for (p, q) in a.iter().zip(b) {
        let (p, q) = (p.is_some(), q.is_some());
        xor += usize::from(p != q);
        union += usize::from(p || q);
    }
    if union == 0 {
        0.0
    } else {
        xor as f64 / union as f64
    }
}

/// Intensity seen by the synthetic infrared sensor for one RGB value.
pub fn intensity_map(r: f64, g: f64, b: f64) -> f64 {
    0.6 * r.max(g).max(b) + 0.4 * (r + g + b) / 3.0
}

/// Separable Gaussian blur of a row-major `h x w` plane with edge clamping.
pub fn gaussian_blur(plane: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return plane.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut dst = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    let o = k as isize - radius;
                    let (sy, sx) = if horizontal {
                        (y, (x as isize + o).clamp(0, w as isize - 1) as usize)
                    } else {
                        ((y as isize + o).clamp(0, h as isize - 1) as usize, x)
                    };
                    acc += kv * src[sy * w + sx];
                }
                dst[y * w + x] = acc;
            }
        }
        dst
    };
    pass(&pass(plane, true), false)
}

struct Renderer<'a> {
    cfg: &'a SyntheticConfig,
    noise: Normal<f64>,
}

impl Renderer<'_> {
    fn pose(&self, rng: &mut ChaCha8Rng) -> Pose {
        let d = self.cfg.difficulty;
        Pose {
            dx: rng.random_range(-1.0..=1.0) * 0.06 * d,
            dy: rng.random_range(-1.0..=1.0) * 0.04 * d,
            scale: 1.0 + rng.random_range(-1.0..=1.0) * 0.08 * d,
        }
    }

    /// Part colours under a random illumination change.
    fn lit_colors(&self, s: &Silhouette, rng: &mut ChaCha8Rng) -> [[f64; 3]; 4] {
        let d = self.cfg.difficulty;
        let mut colors = s.colors;
        for c in colors.iter_mut() {
            let gain = 1.0 + rng.random_range(-1.0..=1.0) * 0.25 * d;
            c.iter_mut().for_each(|v| *v = (*v * gain).clamp(0.0, 255.0));
        }
        colors
    }

    fn visible(&self, s: &Silhouette, rng: &mut ChaCha8Rng) -> Result<Image> {
        let (h, w, d) = (self.cfg.height, self.cfg.width, self.cfg.difficulty);
        let pose = self.pose(rng);
        let colors = self.lit_colors(s, rng);
        let mut bg = [0.0f64; 3];
        bg.iter_mut().for_each(|v| *v = rng.random_range(0.0..255.0) * d);
        let mut px: Vec<f64> = bg.iter().copied().cycle().take(h * w * 3).collect();
        let clutter = (8.0 * d).round() as usize;
        for _ in 0..clutter {
            let cw = rng.random_range(0.1..0.6) * w as f64;
            let ch = rng.random_range(0.05..0.4) * h as f64;
            let x0 = rng.random_range(0.0..w as f64);
            let y0 = rng.random_range(0.0..h as f64);
            let mut col = [0.0f64; 3];
            col.iter_mut().for_each(|v| *v = rng.random_range(0.0..255.0));
            for y in (y0 as usize)..((y0 + ch) as usize).min(h) {
                for x in (x0 as usize)..((x0 + cw) as usize).min(w) {
                    px[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&col);
                }
            }
        }
        for (i, part) in s.raster(h, w, pose).into_iter().enumerate() {
            if let Some(p) = part {
                px[i * 3..i * 3 + 3].copy_from_slice(&colors[p]);
            }
        }
        px.iter_mut().for_each(|v| *v = v.round().clamp(0.0, 255.0));
        Image::new(h, w, 3, px, ImageKind::Visible)
    }

    fn infrared(&self, s: &Silhouette, rng: &mut ChaCha8Rng) -> Result<Image> {
        let (h, w, d) = (self.cfg.height, self.cfg.width, self.cfg.difficulty);
        let pose = self.pose(rng);
        let colors = self.lit_colors(s, rng);
        let plane: Vec<f64> = s
            .raster(h, w, pose)
            .into_iter()
            .map(|part| part.map_or(0.0, |p| intensity_map(colors[p][0], colors[p][1], colors[p][2])))
            .collect();
        let mut plane = gaussian_blur(&plane, h, w, INFRARED_BLUR_SIGMA);
        if d > 0.0 {
            for v in plane.iter_mut() {
                *v += self.noise.sample(rng) * d;
            }
        }
        plane.iter_mut().for_each(|v| *v = v.round().clamp(0.0, 255.0));
        Image::new(h, w, 1, plane, ImageKind::Infrared)
    }
}

/// Generates the full dataset in memory. Records are ordered by identity,
/// then modality (visible first), then image number, with relative paths
/// `{visible|infrared}/{id:04}/{n:03}.png`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<(Dataset, SyntheticManifest)> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let aspect = w as f64 / h as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut people: Vec<Silhouette> = Vec::with_capacity(cfg.num_identities);
    let mut masks: Vec<Vec<Option<usize>>> = Vec::with_capacity(cfg.num_identities);
    for id in 0..cfg.num_identities {
        let mut tries = 0;
        loop {
            let s = Silhouette::draw(&mut rng, aspect);
            let m = s.raster(h, w, NEUTRAL);
            if masks.iter().all(|o| mask_difference(o, &m) >= MIN_SILHOUETTE_DIFFERENCE) {
                people.push(s);
                masks.push(m);
                break;
            }
            tries += 1;
            if tries > MAX_REJECTIONS {
                return Err(Error::Dataset(format!(
                    "could not draw a distinct silhouette for identity {id} at {h}x{w}"
                )));
            }
        }
    }

    let renderer = Renderer {
        cfg,
        noise: Normal::new(0.0, INFRARED_NOISE_PER_DIFFICULTY).expect("finite std"),
    };
    let mut records = Vec::new();
    let mut images = Vec::new();
    let mut identities = BTreeMap::new();
    for (id, s) in people.iter().enumerate() {
        let folder = format!("{id:04}");
        for m in Modality::BOTH {
            for n in 0..cfg.images_per_identity {
                let img = match m {
                    Modality::Visible => renderer.visible(s, &mut rng)?,
                    Modality::Infrared => renderer.infrared(s, &mut rng)?,
                };
                records.push(Record {
                    path: PathBuf::from(m.dir_name()).join(&folder).join(format!("{n:03}.png")),
                    identity: id,
                    modality: m,
                    camera: Some(m as usize),
                });
                images.push(img);
            }
        }
        identities.insert(id, folder);
    }
    let index = DatasetIndex {
        root: PathBuf::new(),
        records,
        num_identities: cfg.num_identities,
    };
    let manifest = SyntheticManifest {
        config: cfg.clone(),
        identities,
    };
    Ok((Dataset::new(index, images)?, manifest))
}

impl SyntheticManifest {
    pub fn write(&self, root: impl AsRef<std::path::Path>) -> Result<()> {
        let root = root.as_ref();
        std::fs::create_dir_all(root)?;
        std::fs::write(root.join("manifest.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(difficulty: f64) -> SyntheticConfig {
        SyntheticConfig {
            num_identities: 6,
            images_per_identity: 3,
            height: 48,
            width: 24,
            seed: 11,
            difficulty,
        }
    }

    #[test]
    fn same_seed_is_bitwise_reproducible() {
        let (a, _) = generate_synthetic(&small(0.6)).unwrap();
        let (b, _) = generate_synthetic(&small(0.6)).unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.index, b.index);
        let (c, _) = generate_synthetic(&SyntheticConfig { seed: 12, ..small(0.6) }).unwrap();
        assert_ne!(a.images, c.images);
    }

    #[test]
    fn layout_and_counts() {
        let (d, m) = generate_synthetic(&small(0.3)).unwrap();
        assert_eq!(d.len(), 6 * 2 * 3);
        assert_eq!(d.index.count(Modality::Infrared), 18);
        assert_eq!(d.index.records[3].path, PathBuf::from("infrared/0000/000.png"));
        assert_eq!(m.identities[&5], "0005");
        d.index.validate().unwrap();
        for (r, img) in d.index.records.iter().zip(&d.images) {
            assert_eq!(img.channels(), if r.modality == Modality::Visible { 3 } else { 1 });
            assert!(img.pixels().iter().all(|v| v.fract() == 0.0));
        }
    }

    #[test]
    fn difficulty_zero_infrared_is_blurred_intensity_of_visible() {
        let (d, _) = generate_synthetic(&small(0.0)).unwrap();
        let (h, w) = (48, 24);
        for id in 0..6 {
            let vis = &d.images[id * 6];
            let ir = &d.images[id * 6 + 3];
            assert_eq!(vis, &d.images[id * 6 + 1]);
            let plane: Vec<f64> = vis.pixels().chunks(3).map(|p| intensity_map(p[0], p[1], p[2])).collect();
            let expect = gaussian_blur(&plane, h, w, 1.0);
            for (a, b) in ir.pixels().iter().zip(expect) {
                assert_eq!(*a, b.round().clamp(0.0, 255.0));
            }
        }
    }

    #[test]
    fn silhouettes_are_pairwise_distinct() {
        let cfg = SyntheticConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let people: Vec<_> = (0..10).map(|_| Silhouette::draw(&mut rng, 0.5)).collect();
        let m0 = people[0].raster(96, 48, NEUTRAL);
        assert_eq!(mask_difference(&m0, &m0), 0.0);
        let (d, _) = generate_synthetic(&SyntheticConfig {
            difficulty: 0.0,
            images_per_identity: 1,
            ..cfg
        })
        .unwrap();
        // At difficulty 0 the visible background is black, so silhouettes are
        // the non-zero pixels.
        let masks: Vec<Vec<Option<usize>>> = d
            .modality(Modality::Visible)
            .iter()
            .map(|&i| d.images[i].pixels().chunks(3).map(|p| p.iter().any(|&v| v > 0.0).then_some(0)).collect())
            .collect();
        for i in 0..masks.len() {
            for j in 0..i {
                assert!(mask_difference(&masks[i], &masks[j]) >= MIN_SILHOUETTE_DIFFERENCE);
            }
        }
    }

    #[test]
    fn blur_preserves_constants_and_mass() {
        let flat = vec![7.0; 30];
        assert!(gaussian_blur(&flat, 5, 6, 1.0).iter().all(|v| (v - 7.0).abs() < 1e-12));
        let mut spike = vec![0.0; 121];
        spike[60] = 1.0;
        let out = gaussian_blur(&spike, 11, 11, 1.0);
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(out[60] > out[61] && out[61] > out[62]);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(generate_synthetic(&SyntheticConfig { num_identities: 3, ..small(0.1) }).is_err());
        assert!(generate_synthetic(&SyntheticConfig { difficulty: 1.5, ..small(0.1) }).is_err());
        assert!(generate_synthetic(&SyntheticConfig { width: 4, ..small(0.1) }).is_err());
    }
}
