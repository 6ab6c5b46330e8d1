//! The catalog of mixing pictures and uniform sampling from it.

use std::fs;
use std::path::{Component, Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use crate::error::{Error, Result};
use crate::image::{decode_png, load_png, random_resized_crop, CropConfig, ImageTensor};
use crate::stochastic::RngStream;

pub const MANIFEST_VERSION: u32 = 1;

/// Crop applied to every sampled mixing picture.
pub const MIXING_CROP: CropConfig = CropConfig {
    area_fraction: (0.3, 1.0),
    aspect_ratio: (3.0 / 4.0, 4.0 / 3.0),
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    Fractal,
    FeatureVis,
    Other,
}

impl std::str::FromStr for SourceTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fractal" | "fractals" => Ok(SourceTag::Fractal),
            "feature_vis" | "feature-vis" | "fvis" => Ok(SourceTag::FeatureVis),
            "other" => Ok(SourceTag::Other),
            _ => Err(Error::invalid(format!("unknown source tag {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub source: SourceTag,
    pub sha256: String,
    pub w: u32,
    pub h: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ManifestFile {
    version: u32,
    entries: Vec<ManifestEntry>,
}

/// Mixing pictures known to exist and decode when the manifest was built.
///
/// In memory, entry paths are directly openable. On disk, entries under the
/// manifest's own directory are stored relative to it, so a tree can be moved
/// as a unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixingManifest {
    entries: Vec<ManifestEntry>,
}

/// Files skipped while building a manifest.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BuildReport {
    pub scanned: usize,
    pub failures: Vec<(PathBuf, String)>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Lexical normalization; drops `.` and folds `..` without touching the disk.
fn normalize(path: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for comp in path.components() {
        match comp {
            Component::CurDir => {}
            Component::ParentDir => {
                if !out.pop() {
                    out.push("..");
                }
            }
            other => out.push(other.as_os_str()),
        }
    }
    out
}

fn absolute(path: &Path) -> PathBuf {
    normalize(&std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf()))
}

impl MixingManifest {
    pub fn from_entries(entries: Vec<ManifestEntry>) -> Self {
        Self { entries }
    }

    /// Recursively scans each directory for `.png` files.
    ///
    /// Entries are sorted by path. Unreadable or undecodable files land in
    /// the report; the build fails if more than 1% of files fail or nothing
    /// usable remains.
    pub fn build(dirs: &[(PathBuf, SourceTag)]) -> Result<(Self, BuildReport)> {
        let mut candidates = Vec::new();
        for (dir, tag) in dirs {
            if !dir.is_dir() {
                return Err(Error::io(
                    dir,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
                ));
            }
            for entry in WalkDir::new(dir).sort_by_file_name() {
                let entry = entry.map_err(|e| {
                    let path = e.path().map(Path::to_path_buf).unwrap_or_else(|| dir.clone());
                    Error::io(path, e.into())
                })?;
                if entry.file_type().is_file() && is_png(entry.path()) {
                    candidates.push((normalize(entry.path()), *tag));
                }
            }
        }
        candidates.sort_by(|a, b| a.0.cmp(&b.0));
        candidates.dedup_by(|a, b| a.0 == b.0);

        let scanned: Vec<std::result::Result<ManifestEntry, (PathBuf, String)>> = candidates
            .par_iter()
            .map(|(path, tag)| {
                let bytes = fs::read(path).map_err(|e| (path.clone(), e.to_string()))?;
                let img = decode_png(&bytes, path).map_err(|e| (path.clone(), e.to_string()))?;
                Ok(ManifestEntry {
                    path: path.clone(),
                    source: *tag,
                    sha256: sha256_hex(&bytes),
                    w: img.width() as u32,
                    h: img.height() as u32,
                })
            })
            .collect();

        let mut report = BuildReport {
            scanned: scanned.len(),
            ..BuildReport::default()
        };
        let mut entries = Vec::with_capacity(scanned.len());
        for item in scanned {
            match item {
                Ok(e) => entries.push(e),
                Err(f) => report.failures.push(f),
            }
        }
        if entries.is_empty() {
            return Err(Error::Manifest(format!(
                "no usable PNG files ({} scanned, {} failed)",
                report.scanned,
                report.failures.len()
            )));
        }
        if report.failures.len() * 100 > report.scanned {
            return Err(Error::Manifest(format!(
                "{} of {} files failed to load (limit 1%); first: {}: {}",
                report.failures.len(),
                report.scanned,
                report.failures[0].0.display(),
                report.failures[0].1
            )));
        }
        Ok((Self { entries }, report))
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Keeps only entries whose source is in `sources`.
    pub fn filter_sources(&self, sources: &[SourceTag]) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .filter(|e| sources.contains(&e.source))
                .cloned()
                .collect(),
        }
    }

    pub fn to_json(&self, manifest_path: &Path) -> Result<String> {
        let base = manifest_path.parent().map(absolute).unwrap_or_default();
        let entries = self
            .entries
            .iter()
            .map(|e| {
                let abs = absolute(&e.path);
                let path = match abs.strip_prefix(&base) {
                    Ok(rel) => rel.to_path_buf(),
                    Err(_) => abs,
                };
                ManifestEntry {
                    path: PathBuf::from(path.to_string_lossy().replace('\\', "/")),
                    ..e.clone()
                }
            })
            .collect();
        let file = ManifestFile {
            version: MANIFEST_VERSION,
            entries,
        };
        let mut s = serde_json::to_string_pretty(&file).expect("manifest serializes");
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json(path)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ManifestFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if file.version != MANIFEST_VERSION {
            return Err(Error::Schema(format!(
                "{}: unsupported manifest version {}",
                path.display(),
                file.version
            )));
        }
        let base = path.parent().unwrap_or(Path::new(""));
        let entries = file
            .entries
            .into_iter()
            .map(|e| ManifestEntry {
                path: if e.path.is_absolute() {
                    e.path.clone()
                } else {
                    normalize(&base.join(&e.path))
                },
                ..e
            })
            .collect();
        Ok(Self { entries })
    }

    /// Re-reads every file and checks its checksum.
    pub fn verify(&self) -> Result<()> {
        self.entries.par_iter().try_for_each(|e| {
            let bytes = fs::read(&e.path).map_err(|err| Error::io(&e.path, err))?;
            if sha256_hex(&bytes) != e.sha256 {
                return Err(Error::Manifest(format!("{}: checksum mismatch", e.path.display())));
            }
            Ok(())
        })
    }

    /// Decodes every picture up front.
    pub fn preload(&self) -> Result<PictureCache> {
        let images = self
            .entries
            .par_iter()
            .map(|e| load_png(&e.path))
            .collect::<Result<Vec<_>>>()?;
        Ok(PictureCache { images })
    }
}

/// Anything [`sample_picture`] can draw from.
pub trait MixingSource: Sync {
    fn picture_count(&self) -> usize;
    fn load_picture(&self, index: usize) -> Result<ImageTensor>;
}

impl MixingSource for MixingManifest {
    fn picture_count(&self) -> usize {
        self.entries.len()
    }

    fn load_picture(&self, index: usize) -> Result<ImageTensor> {
        load_png(&self.entries[index].path)
    }
}

/// Decoded mixing pictures, in manifest order.
#[derive(Debug, Clone)]
pub struct PictureCache {
    images: Vec<ImageTensor>,
}

impl PictureCache {
    pub fn new(images: Vec<ImageTensor>) -> Self {
        Self { images }
    }
}

impl MixingSource for PictureCache {
    fn picture_count(&self) -> usize {
        self.images.len()
    }

    fn load_picture(&self, index: usize) -> Result<ImageTensor> {
        Ok(self.images[index].clone())
    }
}

/// Draws an entry uniformly and random-resized-crops it to
/// `target_size x target_size`.
pub fn sample_picture<S: MixingSource + ?Sized>(
    source: &S,
    stream: &mut RngStream,
    target_size: usize,
) -> Result<ImageTensor> {
    let n = source.picture_count();
    if n == 0 {
        return Err(Error::invalid("mixing set is empty"));
    }
    let index = stream.choose_uniform(n)?;
    let picture = source.load_picture(index)?;
    random_resized_crop(&picture, stream, target_size, &MIXING_CROP)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::save_png;

    fn write_pngs(dir: &Path, names: &[&str]) {
        for (i, name) in names.iter().enumerate() {
            let img = ImageTensor::filled(4 + i, 5, (i as f32 + 1.0) / 10.0).unwrap();
            let path = dir.join(name);
            fs::create_dir_all(path.parent().unwrap()).unwrap();
            save_png(&img, path).unwrap();
        }
    }

    #[test]
    fn build_sorts_and_records() {
        let dir = tempfile::tempdir().unwrap();
        write_pngs(dir.path(), &["c.png", "a.png", "sub/b.png"]);
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let (m, report) =
            MixingManifest::build(&[(dir.path().to_path_buf(), SourceTag::Fractal)]).unwrap();
        assert!(report.failures.is_empty());
        let names: Vec<String> = m
            .entries()
            .iter()
            .map(|e| e.path.strip_prefix(dir.path()).unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, ["a.png", "c.png", "sub/b.png"]);
        assert_eq!((m.entries()[0].w, m.entries()[0].h), (5, 5));
        assert_eq!(m.entries()[0].sha256.len(), 64);
        assert!(m.entries().iter().all(|e| e.source == SourceTag::Fractal));
        m.verify().unwrap();
    }

    #[test]
    fn empty_dir_fails() {
        let dir = tempfile::tempdir().unwrap();
        let err = MixingManifest::build(&[(dir.path().to_path_buf(), SourceTag::Other)]);
        assert!(matches!(err, Err(Error::Manifest(_))));
        let missing = dir.path().join("nope");
        assert!(matches!(
            MixingManifest::build(&[(missing, SourceTag::Other)]),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn too_many_failures_abort_the_build() {
        let dir = tempfile::tempdir().unwrap();
        write_pngs(dir.path(), &["ok.png"]);
        fs::write(dir.path().join("bad.png"), b"garbage").unwrap();
        let err = MixingManifest::build(&[(dir.path().to_path_buf(), SourceTag::Other)]);
        assert!(matches!(err, Err(Error::Manifest(_))));
    }

    #[test]
    fn save_load_round_trip_with_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        write_pngs(dir.path(), &["x.png", "y.png"]);
        let (m, _) =
            MixingManifest::build(&[(dir.path().to_path_buf(), SourceTag::FeatureVis)]).unwrap();
        let path = dir.path().join("manifest.json");
        m.save(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"version\": 1"));
        assert!(text.contains("\"path\": \"x.png\""));
        assert!(text.contains("\"source\": \"feature_vis\""));
        let back = MixingManifest::load(&path).unwrap();
        assert_eq!(back.len(), 2);
        back.verify().unwrap();
        assert_eq!(back.entries()[0].sha256, m.entries()[0].sha256);
    }

    #[test]
    fn checksum_mismatch_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        write_pngs(dir.path(), &["x.png"]);
        let (m, _) = MixingManifest::build(&[(dir.path().to_path_buf(), SourceTag::Other)]).unwrap();
        save_png(&ImageTensor::filled(2, 2, 0.9).unwrap(), dir.path().join("x.png")).unwrap();
        assert!(m.verify().is_err());
    }

    #[test]
    fn filter_sources_keeps_matching_tags() {
        let dir = tempfile::tempdir().unwrap();
        write_pngs(&dir.path().join("f"), &["a.png", "b.png"]);
        write_pngs(&dir.path().join("v"), &["c.png"]);
        let (m, _) = MixingManifest::build(&[
            (dir.path().join("f"), SourceTag::Fractal),
            (dir.path().join("v"), SourceTag::FeatureVis),
        ])
        .unwrap();
        assert_eq!(m.filter_sources(&[SourceTag::Fractal]).len(), 2);
        assert_eq!(m.filter_sources(&[SourceTag::FeatureVis]).len(), 1);
        assert!(m.filter_sources(&[SourceTag::Other]).is_empty());
    }

    #[test]
    fn single_entry_is_always_sampled() {
        let cache = PictureCache::new(vec![ImageTensor::filled(10, 10, 0.3).unwrap()]);
        let mut s = RngStream::new(0);
        for _ in 0..50 {
            let pic = sample_picture(&cache, &mut s, 6).unwrap();
            assert_eq!(pic.dims(), (6, 6));
            assert!(pic.data().iter().all(|&v| (v - 0.3).abs() < 1e-6));
        }
        assert!(sample_picture(&PictureCache::new(vec![]), &mut s, 6).is_err());
    }

    #[test]
    fn vanished_file_error_names_the_entry() {
        let dir = tempfile::tempdir().unwrap();
        write_pngs(dir.path(), &["gone.png"]);
        let (m, _) = MixingManifest::build(&[(dir.path().to_path_buf(), SourceTag::Other)]).unwrap();
        fs::remove_file(dir.path().join("gone.png")).unwrap();
        let err = sample_picture(&m, &mut RngStream::new(0), 4).unwrap_err();
        assert!(err.to_string().contains("gone.png"), "{err}");
    }
}
