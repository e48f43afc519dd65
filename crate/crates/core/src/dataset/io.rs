use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use super::ImageRecord;
use crate::error::{Error, Result};
use crate::raster::{BinaryMask, GrayImage};

pub const MANIFEST_FILE: &str = "stack.json";

/// Contents of `stack.json`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackManifest {
    pub stack_id: String,
    pub ids: Vec<String>,
    /// Ids excluded from analysis because neither grader annotated them.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<String>,
}

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads any grayscale-convertible raster and rescales it to `[0, 1]` by the
/// container's full range (255 for 8-bit, 65535 for 16-bit).
pub fn read_gray_png(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(image_err(path))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = match img {
        image::DynamicImage::ImageLuma8(buf) => {
            buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect()
        }
        other => other
            .into_luma16()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 65535.0)
            .collect(),
    };
    GrayImage::new(w, h, pixels)
}

/// Reads a mask raster; pixels at or above half range are foreground.
pub fn read_mask_png(path: &Path) -> Result<BinaryMask> {
    let gray = read_gray_png(path)?;
    BinaryMask::new(
        gray.width(),
        gray.height(),
        gray.pixels().iter().map(|&v| v >= 0.5).collect(),
    )
}

pub fn write_gray_png(path: &Path, img: &GrayImage) -> Result<()> {
    let raw: Vec<u8> = img
        .pixels()
        .iter()
        .map(|&v| (v * 255.0).round() as u8)
        .collect();
    let buf: ImageBuffer<Luma<u8>, _> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, raw)
            .expect("buffer sized from image");
    buf.save(path).map_err(image_err(path))
}

pub fn write_mask_png(path: &Path, mask: &BinaryMask) -> Result<()> {
    let raw: Vec<u8> = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let buf: ImageBuffer<Luma<u8>, _> =
        ImageBuffer::from_raw(mask.width() as u32, mask.height() as u32, raw)
            .expect("buffer sized from mask");
    buf.save(path).map_err(image_err(path))
}

fn required(dir: &Path, id: &str, suffix: &str) -> Result<PathBuf> {
    let path = dir.join(format!("{id}.{suffix}.png"));
    if !path.is_file() {
        return Err(Error::MissingFile {
            id: id.to_string(),
            path,
        });
    }
    Ok(path)
}

/// Loads a stack directory. Order comes from `stack.json` when present,
/// otherwise from the sorted `<id>.img.png` file names.
pub fn load_stack(dir: &Path) -> Result<Vec<ImageRecord>> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = if manifest_path.is_file() {
        serde_json::from_str::<StackManifest>(&fs::read_to_string(&manifest_path)?)?
    } else {
        let mut ids: Vec<String> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                e.file_name()
                    .to_str()
                    .and_then(|n| n.strip_suffix(".img.png"))
                    .map(str::to_string)
            })
            .collect();
        ids.sort();
        StackManifest {
            stack_id: dir
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or("stack")
                .to_string(),
            ids,
            dropped: Vec::new(),
        }
    };

    let mut records = Vec::with_capacity(manifest.ids.len());
    for (index, id) in manifest.ids.iter().enumerate() {
        let image = read_gray_png(&required(dir, id, "img")?)?;
        let g1 = read_mask_png(&required(dir, id, "G1")?)?;
        let g2 = read_mask_png(&required(dir, id, "G2")?)?;
        let mut record = ImageRecord::new(id.clone(), &manifest.stack_id, index, image, g1, g2)?;
        let gt_path = dir.join(format!("{id}.GT.png"));
        if gt_path.is_file() {
            let gt = read_mask_png(&gt_path)?;
            if gt.dims() != record.image.dims() {
                return Err(Error::DimensionMismatch {
                    expected: record.image.dims(),
                    actual: gt.dims(),
                });
            }
            record.ground_truth = Some(gt);
        }
        records.push(record);
    }
    records.sort_by_key(|r| r.index_in_stack);
    Ok(records)
}

/// Writes records in the stack directory layout, including `stack.json`.
pub fn save_stack(records: &[ImageRecord], dir: &Path, dropped: &[String]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut ordered: Vec<&ImageRecord> = records.iter().collect();
    ordered.sort_by_key(|r| r.index_in_stack);
    for rec in &ordered {
        write_gray_png(&dir.join(format!("{}.img.png", rec.id)), &rec.image)?;
        write_mask_png(&dir.join(format!("{}.G1.png", rec.id)), &rec.g1)?;
        write_mask_png(&dir.join(format!("{}.G2.png", rec.id)), &rec.g2)?;
        if let Some(gt) = &rec.ground_truth {
            write_mask_png(&dir.join(format!("{}.GT.png", rec.id)), gt)?;
        }
    }
    let manifest = StackManifest {
        stack_id: ordered
            .first()
            .map(|r| r.stack_id.clone())
            .unwrap_or_default(),
        ids: ordered.iter().map(|r| r.id.clone()).collect(),
        dropped: dropped.to_vec(),
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}
