use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetIndex, Modality, Record};
use crate::error::Result;

/// What `load_folder` found besides the usable records.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FolderReport {
    /// `(folder name, dense id)` for every kept identity.
    pub mapping: Vec<(String, usize)>,
    /// Identity folders present under only one modality; excluded.
    pub single_modality: Vec<(String, Modality)>,
}

fn sorted_entries(dir: &Path, want_dir: bool) -> Result<Vec<String>> {
    let mut names = Vec::new();
    if !dir.is_dir() {
        return Ok(names);
    }
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let is_dir = entry.file_type()?.is_dir();
        let name = entry.file_name().to_string_lossy().into_owned();
        let wanted = if want_dir { is_dir } else { !is_dir && name.to_ascii_lowercase().ends_with(".png") };
        if wanted {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

/// Orders identity folders numerically when the name is an integer, so that
/// `{3, 17}` maps to `{0, 1}`; other names follow in lexicographic order.
fn identity_order(name: &str) -> (u8, u64, String) {
    match name.parse::<u64>() {
        Ok(n) => (0, n, name.to_string()),
        Err(_) => (1, 0, name.to_string()),
    }
}

/// Indexes `root/{visible|infrared}/{identity}/*.png`.
///
/// Identities are re-mapped densely; folders present under only one
/// modality are excluded and listed in the report. Records are ordered by
/// identity, then modality (visible first), then file name.
pub fn load_folder(root: impl AsRef<Path>) -> Result<(DatasetIndex, FolderReport)> {
    let root = root.as_ref();
    let mut per_modality: [BTreeSet<String>; 2] = Default::default();
    for m in Modality::BOTH {
        per_modality[m as usize] = sorted_entries(&root.join(m.dir_name()), true)?.into_iter().collect();
    }
    let mut report = FolderReport::default();
    let mut names: Vec<&String> = per_modality[0].union(&per_modality[1]).collect();
    names.sort_by_key(|n| identity_order(n));

    let mut kept = BTreeMap::new();
    for name in names {
        let present: Vec<bool> = per_modality.iter().map(|s| s.contains(name)).collect();
        if present[0] && present[1] {
            let id = kept.len();
            kept.insert(id, name.clone());
            report.mapping.push((name.clone(), id));
        } else {
            let only = if present[0] { Modality::Visible } else { Modality::Infrared };
            warn!("identity folder {name:?} exists only under {only}; excluded");
            report.single_modality.push((name.clone(), only));
        }
    }

    let mut records = Vec::new();
    for (&id, name) in &kept {
        for m in Modality::BOTH {
            let rel = PathBuf::from(m.dir_name()).join(name);
            for file in sorted_entries(&root.join(&rel), false)? {
                records.push(Record {
                    path: rel.join(file),
                    identity: id,
                    modality: m,
                    camera: None,
                });
            }
        }
    }
    if records.is_empty() {
        warn!("no images found under {}", root.display());
    }
    let index = DatasetIndex {
        root: root.to_path_buf(),
        records,
        num_identities: kept.len(),
    };
    Ok((index, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{Image, ImageKind};

    fn touch(root: &Path, rel: &str) {
        let p = root.join(rel);
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        Image::filled(2, 2, &[9.0], ImageKind::Grey).unwrap().save_png(p).unwrap();
    }

    #[test]
    fn empty_root_gives_empty_index() {
        let dir = tempfile::tempdir().unwrap();
        let (idx, report) = load_folder(dir.path()).unwrap();
        assert!(idx.is_empty());
        assert_eq!(idx.num_identities, 0);
        assert!(report.mapping.is_empty());
    }

    #[test]
    fn counts_and_dense_remap() {
        let dir = tempfile::tempdir().unwrap();
        for id in ["17", "3"] {
            for m in ["visible", "infrared"] {
                for n in 0..3 {
                    touch(dir.path(), &format!("{m}/{id}/{n}.png"));
                }
            }
        }
        touch(dir.path(), "visible/40/0.png");
        let (idx, report) = load_folder(dir.path()).unwrap();
        assert_eq!(idx.len(), 12);
        assert_eq!(idx.num_identities, 2);
        assert_eq!(report.mapping, vec![("3".to_string(), 0), ("17".to_string(), 1)]);
        assert_eq!(report.single_modality, vec![("40".to_string(), Modality::Visible)]);
        assert_eq!(idx.records[0].path, PathBuf::from("visible/3/0.png"));
        assert_eq!(idx.records[3].modality, Modality::Infrared);
        idx.validate().unwrap();
    }
}
