//! Two-modality identity datasets: a procedural generator, a folder loader
//! and the identity-balanced PK batch sampler.

mod folder;
mod sampler;
mod synthetic;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use folder::{load_folder, FolderReport};
pub use sampler::{pk_sample, PkBatch, PkSampler, SamplerConfig};
pub use synthetic::{gaussian_blur, generate_synthetic, intensity_map, SyntheticConfig, SyntheticManifest};

use crate::error::{Error, Result};
use crate::spectral::{Image, ImageKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visible,
    Infrared,
}

impl Modality {
    pub const BOTH: [Modality; 2] = [Modality::Visible, Modality::Infrared];

    /// Folder name used by the on-disk layout.
    pub fn dir_name(self) -> &'static str {
        match self {
            Modality::Visible => "visible",
            Modality::Infrared => "infrared",
        }
    }

    pub fn image_kind(self) -> ImageKind {
        match self {
            Modality::Visible => ImageKind::Visible,
            Modality::Infrared => ImageKind::Infrared,
        }
    }

    pub fn other(self) -> Modality {
        match self {
            Modality::Visible => Modality::Infrared,
            Modality::Infrared => Modality::Visible,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "visible" | "vis" | "rgb" => Ok(Modality::Visible),
            "infrared" | "ir" => Ok(Modality::Infrared),
            _ => Err(Error::Config(format!("unknown modality {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    /// Path relative to the dataset root; doubles as the generator key.
    pub path: PathBuf,
    pub identity: usize,
    pub modality: Modality,
    pub camera: Option<usize>,
}

/// Ordered list of records with dense identity ids `0..num_identities`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub records: Vec<Record>,
    pub num_identities: usize,
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record positions grouped as `[identity][modality]`.
    pub fn by_identity(&self) -> Vec<[Vec<usize>; 2]> {
        let mut out = vec![[Vec::new(), Vec::new()]; self.num_identities];
        for (i, r) in self.records.iter().enumerate() {
            out[r.identity][r.modality as usize].push(i);
        }
        out
    }

    pub fn count(&self, modality: Modality) -> usize {
        self.records.iter().filter(|r| r.modality == modality).count()
    }

    pub fn validate(&self) -> Result<()> {
        for (id, groups) in self.by_identity().iter().enumerate() {
            if groups.iter().any(Vec::is_empty) {
                return Err(Error::Dataset(format!("identity {id} lacks one modality")));
            }
        }
        if let Some(r) = self.records.iter().find(|r| r.identity >= self.num_identities) {
            return Err(Error::Dataset(format!(
                "identity {} out of range for {} identities",
                r.identity, self.num_identities
            )));
        }
        Ok(())
    }
}

/// A dataset index together with its decoded images (same order).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub index: DatasetIndex,
    pub images: Vec<Image>,
}

impl Dataset {
    pub fn new(index: DatasetIndex, images: Vec<Image>) -> Result<Self> {
        if index.records.len() != images.len() {
            return Err(Error::Dataset(format!(
                "{} records but {} images",
                index.records.len(),
                images.len()
            )));
        }
        Ok(Self { index, images })
    }

    /// Loads a folder dataset and decodes every PNG.
    pub fn load(root: impl AsRef<Path>) -> Result<(Self, FolderReport)> {
        let (index, report) = load_folder(root)?;
        let images = index
            .records
            .iter()
            .map(|r| Image::load_png(index.root.join(&r.path), r.modality.image_kind()))
            .collect::<Result<Vec<_>>>()?;
        Ok((Self::new(index, images)?, report))
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn record(&self, i: usize) -> &Record {
        &self.index.records[i]
    }

    /// `(positions, images)` of one modality in index order.
    pub fn modality(&self, modality: Modality) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.index.records[i].modality == modality).collect()
    }

    /// Splits by identity: ids `< num_train` form the first part, the rest
    /// the second. Both parts are re-labelled densely from 0.
    pub fn split_identities(&self, num_train: usize) -> Result<(Dataset, Dataset)> {
        let n = self.index.num_identities;
        if num_train == 0 || num_train >= n {
            return Err(Error::Config(format!(
                "cannot split {n} identities into {num_train} train + {} test",
                n.saturating_sub(num_train)
            )));
        }
        let part = |keep: &dyn Fn(usize) -> bool, offset: usize, count: usize| -> Result<Dataset> {
            let mut records = Vec::new();
            let mut images = Vec::new();
            for (r, img) in self.index.records.iter().zip(&self.images) {
                if keep(r.identity) {
                    records.push(Record {
                        identity: r.identity - offset,
                        ..r.clone()
                    });
                    images.push(img.clone());
                }
            }
            let index = DatasetIndex {
                root: self.index.root.clone(),
                records,
                num_identities: count,
            };
            Dataset::new(index, images)
        };
        let train = part(&|id| id < num_train, 0, num_train)?;
        let test = part(&|id| id >= num_train, num_train, n - num_train)?;
        Ok((train, test))
    }

    /// Writes `root/{visible|infrared}/{id:04}/{name}.png` for every record.
    pub fn write_pngs(&self, root: impl AsRef<Path>) -> Result<()> {
        let root = root.as_ref();
        for (r, img) in self.index.records.iter().zip(&self.images) {
            let path = root.join(&r.path);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            img.save_png(path)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let mut records = Vec::new();
        let mut images = Vec::new();
        for id in 0..3 {
            for m in Modality::BOTH {
                records.push(Record {
                    path: PathBuf::from(format!("{}/{id}/0.png", m.dir_name())),
                    identity: id,
                    modality: m,
                    camera: None,
                });
                images.push(Image::filled(2, 2, &[id as f64], m.image_kind()).unwrap());
            }
        }
        Dataset::new(
            DatasetIndex {
                root: PathBuf::new(),
                records,
                num_identities: 3,
            },
            images,
        )
        .unwrap()
    }

    #[test]
    fn split_relabels_densely() {
        let (train, test) = tiny().split_identities(2).unwrap();
        assert_eq!(train.index.num_identities, 2);
        assert_eq!(test.index.num_identities, 1);
        assert!(test.index.records.iter().all(|r| r.identity == 0));
        assert_eq!(test.images[0].pixels()[0], 2.0);
        train.index.validate().unwrap();
        assert!(tiny().split_identities(3).is_err());
    }

    #[test]
    fn modality_round_trips_through_strings() {
        for m in Modality::BOTH {
            assert_eq!(m.dir_name().parse::<Modality>().unwrap(), m);
            assert_eq!(m.other().other(), m);
        }
        assert!("thermal".parse::<Modality>().is_err());
    }
}
