//! Rainy/clean pair ingestion and seeded aligned patch sampling.
//!
//! Dataset layout: two sibling directories `rainy/` and `clean/` holding
//! files with identical names.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imagecore::{load_image, Image};
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct PairDataset {
    pairs: Vec<(PathBuf, PathBuf)>,
    patch_size: usize,
    seed: u64,
}

/// One aligned crop from a rainy/clean pair.
#[derive(Debug, Clone)]
pub struct PatchPair<S: Real> {
    pub rainy: Image<S>,
    pub clean: Image<S>,
}

impl PairDataset {
    pub fn from_dir(root: impl AsRef<Path>, patch_size: usize, seed: u64) -> Result<Self> {
        let root = root.as_ref();
        let rainy_dir = root.join("rainy");
        let clean_dir = root.join("clean");
        let mut names: Vec<String> = std::fs::read_dir(&rainy_dir)
            .map_err(|e| Error::io(&rainy_dir, e))?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        names.sort();
        let mut pairs = Vec::with_capacity(names.len());
        for name in names {
            let clean = clean_dir.join(&name);
            if !clean.exists() {
                return Err(Error::FileNotFound(clean));
            }
            pairs.push((rainy_dir.join(&name), clean));
        }
        Self::from_pairs(pairs, patch_size, seed)
    }

    pub fn from_pairs(
        pairs: Vec<(PathBuf, PathBuf)>,
        patch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("dataset has no pairs".into()));
        }
        Ok(PairDataset {
            pairs,
            patch_size,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn pairs(&self) -> &[(PathBuf, PathBuf)] {
        &self.pairs
    }

    pub fn load_pair<S: Real>(&self, idx: usize) -> Result<(Image<S>, Image<S>)> {
        let (rainy_path, clean_path) = &self.pairs[idx];
        let rainy = load_image(rainy_path)?;
        let clean = load_image(clean_path)?;
        if !rainy.same_dims(&clean) {
            return Err(Error::DimensionMismatch(format!(
                "pair {}: rainy and clean dimensions differ",
                rainy_path.display()
            )));
        }
        Ok((rainy, clean))
    }

    /// Cut `batch` aligned patch pairs, both patches at the same coordinates
    /// of the same pair. `round` distinguishes draws so that successive
    /// batches differ while the whole sequence stays a pure function of the
    /// dataset seed.
    pub fn sample_patches<S: Real>(&self, batch: usize, round: u64) -> Result<Vec<PatchPair<S>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ round.wrapping_mul(0x9E3779B97F4A7C15));
        let mut out = Vec::with_capacity(batch);
        for _ in 0..batch {
            let idx = rng.gen_range(0..self.pairs.len());
            let (rainy, clean) = self.load_pair::<S>(idx)?;
            let p = self.patch_size;
            if p > rainy.height() || p > rainy.width() {
                return Err(Error::InvalidArgument(format!(
                    "patch size {} exceeds image {}x{}",
                    p,
                    rainy.height(),
                    rainy.width()
                )));
            }
            let top = if rainy.height() == p {
                0
            } else {
                rng.gen_range(0..rainy.height() - p + 1)
            };
            let left = if rainy.width() == p {
                0
            } else {
                rng.gen_range(0..rainy.width() - p + 1)
            };
            out.push(PatchPair {
                rainy: rainy.crop(top, left, p, p)?,
                clean: clean.crop(top, left, p, p)?,
            });
        }
        Ok(out)
    }
}
