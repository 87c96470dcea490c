//! Image datasets on disk: directory scanning, split assignment and the
//! JSON manifest that records them.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{decode_rgb8, load_image, ImageTensor};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest root.
    pub path: PathBuf,
    pub split: Split,
}

/// Train/val/test fractions; must sum to 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.8, val: 0.1, test: 0.1 }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !f.is_finite() || *f < 0.0) || ((parts.iter().sum::<f64>()) - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "split fractions must be non-negative and sum to 1, got {}/{}/{}",
                self.train, self.val, self.test
            )));
        }
        Ok(())
    }

    /// Image counts per split for `total` images, cutting at rounded
    /// cumulative boundaries so the counts always add up to `total`.
    pub fn counts(&self, total: usize) -> [usize; 3] {
        let cut = |f: f64| ((f * total as f64).round() as usize).min(total);
        let a = cut(self.train);
        let b = cut(self.train + self.val).max(a);
        [a, b - a, total - b]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub side: usize,
    pub seed: u64,
    pub files: Vec<ManifestEntry>,
}

fn is_image_path(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn scan(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            scan(&path, out)?;
        } else if is_image_path(&path) {
            out.push(path);
        }
    }
    Ok(())
}

impl DatasetManifest {
    /// Scans `src` recursively, checks every image decodes and assigns
    /// splits by a seeded shuffle.
    pub fn ingest(src: &Path, side: usize, fractions: SplitFractions, seed: u64) -> Result<Self> {
        fractions.validate()?;
        if side == 0 {
            return Err(Error::Config("image side must be positive".into()));
        }
        let mut paths = Vec::new();
        scan(src, &mut paths)?;
        if paths.is_empty() {
            return Err(Error::Contract(format!("no images found in {}", src.display())));
        }
        for p in &paths {
            decode_rgb8(p)?;
        }
        let mut rel: Vec<PathBuf> =
            paths.iter().map(|p| p.strip_prefix(src).map(Path::to_path_buf).unwrap_or_else(|_| p.clone())).collect();
        rel.sort();
        rel.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let counts = fractions.counts(rel.len());
        let tags = Split::ALL.iter().zip(counts).flat_map(|(s, c)| std::iter::repeat_n(*s, c));
        let mut files: Vec<ManifestEntry> = rel.into_iter().zip(tags).map(|(path, split)| ManifestEntry { path, split }).collect();
        files.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(Self { root: src.to_path_buf(), side, seed, files })
    }

    pub fn paths(&self, split: Split) -> Vec<PathBuf> {
        self.files.iter().filter(|f| f.split == split).map(|f| self.root.join(&f.path)).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.files.iter().filter(|f| f.split == split).count()
    }

    /// Decodes and resizes every image of `split`.
    pub fn load(&self, split: Split) -> Result<Vec<ImageTensor>> {
        self.paths(split).iter().map(|p| load_image(p, self.side)).collect()
    }

    /// Checks that no file appears twice and every file still exists.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for f in &self.files {
            if !seen.insert(&f.path) {
                return Err(Error::Contract(format!("{} is listed more than once", f.path.display())));
            }
            let p = self.root.join(&f.path);
            if !p.is_file() {
                return Err(Error::Contract(format!("manifest file {} is missing", p.display())));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn open(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }
}
