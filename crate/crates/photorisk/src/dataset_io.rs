//! Dataset directories: `manifest.csv`, one PGM per image and mask, and a
//! `dataset.json` carrying the generation config and SHA-256 checksums.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use photorisk_core::rng::RNG_NAME;
use photorisk_core::synth::{pixel_to_byte, IMAGE_SIZE};
use photorisk_core::{AugmentConfig, Dataset, EnvImage, EyeVariance, LuxValue, Sample};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netpbm;
use crate::sha256_hex;

pub const DATASET_FORMAT_VERSION: &str = "1";
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const METADATA_FILE: &str = "dataset.json";
pub const MANIFEST_HEADER: [&str; 9] = [
    "index",
    "lux",
    "eye_variance",
    "risk_label",
    "image_file",
    "seed",
    "noise_sigma",
    "jitter_fraction",
    "blur_sigma",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub format_version: String,
    pub rng: String,
    pub seed: u64,
    pub count: usize,
    pub augment_config: AugmentConfig,
    pub split_fraction: f64,
    /// SHA-256 of every other file in the directory, keyed by file name.
    pub checksums: BTreeMap<String, String>,
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    index: usize,
    lux: f64,
    eye_variance: f64,
    risk_label: f64,
    image_file: String,
    blur_sigma: f64,
}

pub fn image_file_name(index: usize) -> String {
    format!("sample_{index:05}.pgm")
}

pub fn mask_file_name(image_file: &str) -> String {
    let stem = image_file.strip_suffix(".pgm").unwrap_or(image_file);
    format!("{stem}_mask.pgm")
}

fn image_bytes(img: &EnvImage) -> Vec<u8> {
    let gray: Vec<u8> = img.pixels.iter().map(|&p| pixel_to_byte(p)).collect();
    netpbm::encode_pgm(img.width, img.height, &gray)
}

fn mask_bytes(img: &EnvImage) -> Vec<u8> {
    let gray: Vec<u8> = img
        .light_mask
        .iter()
        .map(|&m| if m { 255 } else { 0 })
        .collect();
    netpbm::encode_pgm(img.width, img.height, &gray)
}

fn manifest_bytes(ds: &Dataset) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(MANIFEST_HEADER)?;
    let cfg = &ds.augment_config;
    for (i, s) in ds.samples.iter().enumerate() {
        w.write_record([
            i.to_string(),
            format!("{:.6}", s.lux.get()),
            format!("{:.6}", s.eye_var.get()),
            format!("{:.6}", s.risk_label),
            image_file_name(i),
            ds.seed.to_string(),
            format!("{:.6}", cfg.noise_sigma),
            format!("{:.6}", cfg.jitter_fraction),
            format!("{:.6}", s.blur_sigma),
        ])?;
    }
    w.into_inner()
        .map_err(|e| Error::Csv(e.into_error().into()))
}

/// Writes `ds` into `dir`, creating it if needed. Every file is rendered in
/// memory before the first write.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    let mut files: Vec<(String, Vec<u8>)> = Vec::with_capacity(2 * ds.len() + 2);
    files.push((MANIFEST_FILE.to_string(), manifest_bytes(ds)?));
    for (i, s) in ds.samples.iter().enumerate() {
        let name = image_file_name(i);
        files.push((mask_file_name(&name), mask_bytes(&s.image)));
        files.push((name, image_bytes(&s.image)));
    }
    let checksums = files
        .iter()
        .map(|(name, bytes)| (name.clone(), sha256_hex(bytes)))
        .collect();
    let meta = DatasetMetadata {
        format_version: DATASET_FORMAT_VERSION.to_string(),
        rng: RNG_NAME.to_string(),
        seed: ds.seed,
        count: ds.len(),
        augment_config: ds.augment_config.clone(),
        split_fraction: ds.split_fraction,
        checksums,
    };
    let meta_path = dir.join(METADATA_FILE);
    let mut json = serde_json::to_vec_pretty(&meta).map_err(Error::json(&meta_path))?;
    json.push(b'\n');
    files.push((METADATA_FILE.to_string(), json));

    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    for (name, bytes) in files {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(Error::io(path))?;
    }
    Ok(())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(Error::io(path))
}

fn verify(meta: &DatasetMetadata, name: &str, bytes: &[u8], path: &Path) -> Result<()> {
    match meta.checksums.get(name) {
        Some(sum) if *sum == sha256_hex(bytes) => Ok(()),
        _ => Err(Error::ChecksumMismatch(path.to_path_buf())),
    }
}

fn decode_gray(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let malformed = |reason: String| Error::MalformedImage {
        path: path.to_path_buf(),
        reason,
    };
    let r = netpbm::decode(bytes).map_err(|e| malformed(e.0))?;
    if r.channels != 1 {
        return Err(malformed("expected a grayscale PGM".to_string()));
    }
    if (r.width, r.height) != (IMAGE_SIZE, IMAGE_SIZE) {
        return Err(malformed(format!(
            "size {}x{}, expected {IMAGE_SIZE}x{IMAGE_SIZE}",
            r.width, r.height
        )));
    }
    Ok(r.data)
}

/// Reads a dataset directory written by [`save_dataset`], checking every
/// file against the recorded checksums.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(Error::MissingManifest(dir.to_path_buf()));
    }
    let meta_path = dir.join(METADATA_FILE);
    let meta: DatasetMetadata =
        serde_json::from_slice(&read(&meta_path)?).map_err(Error::json(&meta_path))?;
    if meta.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: meta.format_version,
            expected: DATASET_FORMAT_VERSION.to_string(),
        });
    }
    let manifest = read(&manifest_path)?;
    verify(&meta, MANIFEST_FILE, &manifest, &manifest_path)?;

    let bad_manifest = |reason: String| Error::MalformedManifest {
        path: manifest_path.clone(),
        reason,
    };
    let mut reader = csv::Reader::from_reader(manifest.as_slice());
    let header = reader.headers().map_err(|e| bad_manifest(e.to_string()))?;
    if header.iter().ne(MANIFEST_HEADER) {
        return Err(bad_manifest(format!("unexpected header {header:?}")));
    }
    let mut samples = Vec::with_capacity(meta.count);
    for (row_no, row) in reader.deserialize::<ManifestRow>().enumerate() {
        let row = row.map_err(|e| bad_manifest(e.to_string()))?;
        if !(0.0..=1.0).contains(&row.risk_label) {
            return Err(bad_manifest(format!(
                "row {row_no}: risk label {}",
                row.risk_label
            )));
        }
        if row.index != row_no {
            return Err(bad_manifest(format!(
                "row {row_no} has index {}",
                row.index
            )));
        }
        let image_path = dir.join(&row.image_file);
        let mask_name = mask_file_name(&row.image_file);
        let mask_path = dir.join(&mask_name);
        let image_bytes = read(&image_path)?;
        let mask_bytes = read(&mask_path)?;
        let gray = decode_gray(&image_bytes, &image_path)?;
        let mask = decode_gray(&mask_bytes, &mask_path)?;
        verify(&meta, &row.image_file, &image_bytes, &image_path)?;
        verify(&meta, &mask_name, &mask_bytes, &mask_path)?;
        if let Some(v) = mask.iter().find(|&&v| v != 0 && v != 255) {
            return Err(Error::MalformedImage {
                path: mask_path,
                reason: format!("mask value {v} is neither 0 nor 255"),
            });
        }
        samples.push(Sample {
            image: EnvImage {
                width: IMAGE_SIZE,
                height: IMAGE_SIZE,
                pixels: gray.iter().map(|&b| b as f64 / 255.0).collect(),
                light_mask: mask.iter().map(|&b| b == 255).collect(),
            },
            lux: LuxValue::new(row.lux)?,
            eye_var: EyeVariance::new(row.eye_variance)?,
            risk_label: row.risk_label,
            blur_sigma: row.blur_sigma,
        });
    }
    if samples.len() != meta.count {
        return Err(bad_manifest(format!(
            "{} rows, metadata records {}",
            samples.len(),
            meta.count
        )));
    }
    let ds = Dataset {
        samples,
        seed: meta.seed,
        augment_config: meta.augment_config,
        split_fraction: meta.split_fraction,
    };
    ds.validate()?;
    Ok(ds)
}
