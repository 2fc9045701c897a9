use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{decode_image, IMAGE_EXTENSIONS};
use crate::error::{Error, Result};
use crate::identity::{Identity, IdentitySet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the manifest's directory unless absolute.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Root of a pre-rendered frame sequence, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precomputed: Option<PathBuf>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.root.join(path)
        }
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        reason: format!("invalid manifest: {e}"),
    })?;
    manifest.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(manifest)
}

fn load_entries(entries: Vec<(String, PathBuf)>, origin: &Path) -> Result<IdentitySet> {
    let members = entries
        .into_par_iter()
        .map(|(id, path)| decode_image(&path).map(|img| Identity::with_source(id, img, path)))
        .collect::<Result<Vec<_>>>()?;
    IdentitySet::new(members).map_err(|e| e.context(format!("loading {}", origin.display())))
}

/// Directory mode: every PNG/PGM/PPM file, sorted by file name, with the
/// file stem as identity id.
pub fn load_directory(dir: &Path) -> Result<IdentitySet> {
    let read = std::fs::read_dir(dir).map_err(|e| Error::Load {
        path: dir.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut files: Vec<PathBuf> = read
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    let entries = files
        .into_iter()
        .map(|p| {
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            (id, p)
        })
        .collect();
    load_entries(entries, dir)
}

/// Loads a JSON manifest, or a directory of images when `path` is a
/// directory. Identities keep manifest (or file name) order.
pub fn load_dataset(path: &Path) -> Result<IdentitySet> {
    if path.is_dir() {
        return load_directory(path);
    }
    let manifest = load_manifest(path)?;
    let entries = manifest
        .entries
        .iter()
        .map(|e| (e.id.clone(), manifest.resolve(&e.path)))
        .collect();
    load_entries(entries, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ImageBuffer;
    use crate::io::encode_png8;

    fn write_images(dir: &Path, names: &[&str]) {
        for (i, name) in names.iter().enumerate() {
            let img = ImageBuffer::from_fn(4, 4, |x, y| ((x + y + i) % 4) as f64 / 3.0).unwrap();
            encode_png8(&img, &dir.join(format!("{name}.png"))).unwrap();
        }
    }

    #[test]
    fn manifest_order_is_preserved() {
        let dir = tempfile::tempdir().unwrap();
        write_images(dir.path(), &["a", "b", "c"]);
        let manifest = r#"{"entries":[{"id":"c","path":"c.png"},{"id":"a","path":"a.png"},{"id":"b","path":"b.png"}]}"#;
        let mpath = dir.path().join("set.json");
        std::fs::write(&mpath, manifest).unwrap();
        let set = load_dataset(&mpath).unwrap();
        assert_eq!(set.ids(), vec!["c", "a", "b"]);
        assert_eq!(set.members()[0].source(), Some(dir.path().join("c.png").as_path()));
    }

    #[test]
    fn duplicate_id_is_named() {
        let dir = tempfile::tempdir().unwrap();
        write_images(dir.path(), &["a", "b"]);
        let manifest = r#"{"entries":[{"id":"x","path":"a.png"},{"id":"x","path":"b.png"}]}"#;
        let mpath = dir.path().join("set.json");
        std::fs::write(&mpath, manifest).unwrap();
        let err = load_dataset(&mpath).unwrap_err();
        assert!(err.to_string().contains("'x'"), "{err}");
    }

    #[test]
    fn missing_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = r#"{"entries":[{"id":"x","path":"ghost.png"}]}"#;
        let mpath = dir.path().join("set.json");
        std::fs::write(&mpath, manifest).unwrap();
        let err = load_dataset(&mpath).unwrap_err();
        assert!(err.to_string().contains("ghost.png"), "{err}");
    }

    #[test]
    fn directory_mode_matches_explicit_manifest() {
        let dir = tempfile::tempdir().unwrap();
        write_images(dir.path(), &["zed", "amy", "bob"]);
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let from_dir = load_directory(dir.path()).unwrap();
        assert_eq!(from_dir.ids(), vec!["amy", "bob", "zed"]);

        let manifest = r#"{"entries":[{"id":"amy","path":"amy.png"},{"id":"bob","path":"bob.png"},{"id":"zed","path":"zed.png"}]}"#;
        let mpath = dir.path().join("set.json");
        std::fs::write(&mpath, manifest).unwrap();
        assert_eq!(load_dataset(&mpath).unwrap(), from_dir);
        assert_eq!(load_dataset(dir.path()).unwrap(), from_dir);
    }
}
