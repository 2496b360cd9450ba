//! Layout of the optional data directory.
//!
//! ```text
//! <root>/weights/encoder/manifest.json   encoder manifest and blobs
//! <root>/weights/decoder/manifest.json   decoder manifest and blobs
//! <root>/images/<id>.png                 the original image set
//! <root>/baselines/<scale>/<id>.png      baseline metamers, e.g. baselines/0.5/
//! ```
//!
//! The root is `$METAMER_DATA_DIR`, or `./data` when unset.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::features::image_io::read_image;
use crate::features::{load_weights, ImageBuffer, WeightManifest};

pub const DATA_DIR_ENV: &str = "METAMER_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataDir {
    root: PathBuf,
}

impl DataDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DataDir { root: root.into() }
    }

    pub fn from_env() -> Self {
        DataDir::new(std::env::var_os(DATA_DIR_ENV).map_or_else(|| PathBuf::from("data"), PathBuf::from))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn encoder_dir(&self) -> PathBuf {
        self.root.join("weights").join("encoder")
    }

    pub fn decoder_dir(&self) -> PathBuf {
        self.root.join("weights").join("decoder")
    }

    pub fn has_weights(&self) -> bool {
        self.encoder_dir().join("manifest.json").is_file() && self.decoder_dir().join("manifest.json").is_file()
    }

    pub fn load_weights(&self) -> Result<(WeightManifest, WeightManifest)> {
        Ok((load_weights(&self.encoder_dir())?, load_weights(&self.decoder_dir())?))
    }

    pub fn images_dir(&self) -> PathBuf {
        self.root.join("images")
    }

    pub fn baseline_dir(&self, scale: f64) -> PathBuf {
        self.root.join("baselines").join(format!("{scale}"))
    }

    pub fn images(&self) -> Result<Vec<(String, ImageBuffer)>> {
        read_png_dir(&self.images_dir())
    }

    pub fn baselines(&self, scale: f64) -> Result<Vec<(String, ImageBuffer)>> {
        read_png_dir(&self.baseline_dir(scale))
    }

    pub fn has_baselines(&self, scales: &[f64]) -> bool {
        self.images_dir().is_dir() && scales.iter().all(|&s| self.baseline_dir(s).is_dir())
    }
}

/// Every `*.png` in `dir`, keyed by file stem, sorted by name.
pub fn read_png_dir(dir: &Path) -> Result<Vec<(String, ImageBuffer)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok((id, read_image(p)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::image_io::write_image;

    #[test]
    fn layout_and_directory_listing() {
        let dir = tempfile::tempdir().unwrap();
        let data = DataDir::new(dir.path());
        assert!(!data.has_weights());
        assert_eq!(data.baseline_dir(0.5), dir.path().join("baselines").join("0.5"));
        let img = ImageBuffer::from_fn(3, 4, 4, |c, y, x| (c + y + x) as f32 / 9.0);
        write_image(&data.images_dir().join("b.png"), &img).unwrap();
        write_image(&data.images_dir().join("a.png"), &img).unwrap();
        fs::write(data.images_dir().join("notes.txt"), "x").unwrap();
        let ids: Vec<String> = data.images().unwrap().into_iter().map(|(id, _)| id).collect();
        assert_eq!(ids, ["a", "b"]);
        assert_eq!(data.baselines(0.3).unwrap_err().kind(), "io");
    }
}
