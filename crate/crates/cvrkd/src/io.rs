//! Images, manifests, reference pools and checkpoints on disk.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use cvrkd_core::data::{parse_manifest, Image, ReferencePool, Sample};
use cvrkd_core::train::Checkpoint;

use crate::error::{CliError, CliResult};

const IMAGE_EXTENSIONS: &[&str] = &["png", "ppm", "pnm"];

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Decodes any PNG or PNM file into a planar RGB image.
pub fn load_image(path: &Path) -> CliResult<Image> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let decoded = image::load_from_memory(&bytes)
        .map_err(|e| CliError::Decode(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = decoded.dimensions();
    Ok(Image::from_rgb8(h as usize, w as usize, decoded.as_raw())?)
}

/// Writes PNG unless the extension asks for PPM.
pub fn save_image(path: &Path, img: &Image) -> CliResult<()> {
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.to_rgb8())
        .expect("buffer size matches the image");
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("ppm") | Some("pnm") => image::ImageFormat::Pnm,
        _ => image::ImageFormat::Png,
    };
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, format)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    write_bytes(path, &out.into_inner())
}

/// Loads every sample of a manifest. Paths resolve against the manifest's
/// directory; a sample's source is the file stem of its reference image, so
/// distortions of one pristine image share a source.
pub fn load_samples(manifest: &Path) -> CliResult<Vec<Sample>> {
    let rows = parse_manifest(&read_text(manifest)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", manifest.display())))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut refs: HashMap<PathBuf, Arc<Image>> = HashMap::new();
    let mut samples = Vec::with_capacity(rows.len());
    for row in rows {
        let lq = load_image(&base.join(&row.lq))?;
        let (fr, source) = match &row.fr {
            None => (None, row.id.clone()),
            Some(p) => {
                let path = base.join(p);
                let img = match refs.get(&path) {
                    Some(img) => img.clone(),
                    None => {
                        let img = Arc::new(load_image(&path)?);
                        refs.insert(path.clone(), img.clone());
                        img
                    }
                };
                let stem = path.file_stem().map_or_else(|| row.id.clone(), |s| s.to_string_lossy().into_owned());
                (Some(img), stem)
            }
        };
        let sample = Sample::new(row.id.clone(), source, lq, fr, row.mos)
            .map_err(|e| CliError::Data(format!("{} line {}: {e}", manifest.display(), row.line)))?;
        samples.push(sample);
    }
    Ok(samples)
}

/// Every PNG/PNM file in `dir`, sorted by name; ids are file stems.
pub fn load_pool(dir: &Path) -> CliResult<ReferencePool> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    paths.sort();
    let mut images = Vec::with_capacity(paths.len());
    for p in paths {
        let id = p.file_stem().unwrap().to_string_lossy().into_owned();
        images.push((id, Arc::new(load_image(&p)?)));
    }
    if images.is_empty() {
        return Err(CliError::Data(format!("{}: no reference images found", dir.display())));
    }
    Ok(ReferencePool::new(images)?)
}

pub fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Checkpoint::decode(&bytes).map_err(|e| CliError::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> CliResult<()> {
    write_bytes(path, &ckpt.encode())
}

/// `run.ckpt` → `run.train.csv`, next to the checkpoint.
pub fn report_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("train.csv")
}
