use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};
use labelqa::dataset::{load_stack, read_mask_png};
use labelqa::harness::{DecisionRecord, QueueManifest};
use labelqa::raster::{BinaryMask, GrayImage};
use labelqa::tlsa::Tau;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Choice {
    G1,
    G2,
    #[serde(rename = "reject_both")]
    RejectBoth,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub id: String,
    pub choice: Choice,
    pub reviewer: String,
    pub note: String,
    /// RFC 3339.
    pub timestamp: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemStatus {
    Pending,
    Decided,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlayUris {
    pub labels: String,
    pub rps: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub id: String,
    pub image_uri: String,
    pub overlay_uris: OverlayUris,
    pub tlsa: DecisionRecord,
    pub status: ItemStatus,
    /// Latest decision, if any.
    pub decision: Option<ReviewDecision>,
}

/// PNG bytes rendered at queue build time.
#[derive(Clone, Debug, Default)]
pub struct Media {
    pub image: Vec<u8>,
    pub labels: Vec<u8>,
    pub rps: Vec<u8>,
}

#[derive(Clone, Debug, Default)]
pub struct QueueStore {
    pub items: BTreeMap<String, QueueItem>,
    pub media: BTreeMap<String, Media>,
}

impl QueueStore {
    /// Pending items in id order.
    pub fn pending(&self) -> Vec<&QueueItem> {
        self.items
            .values()
            .filter(|i| i.status == ItemStatus::Pending)
            .collect()
    }

    /// Records `decision` as the item's current state.
    pub fn apply(&mut self, decision: ReviewDecision) -> Result<()> {
        let item = self
            .items
            .get_mut(&decision.id)
            .ok_or_else(|| Error::UnknownId(decision.id.clone()))?;
        item.status = ItemStatus::Decided;
        item.decision = Some(decision);
        Ok(())
    }
}

fn gray_rgb(img: &GrayImage) -> RgbImage {
    RgbImage::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let v = (img.get(y as usize, x as usize) * 255.0).round() as u8;
        Rgb([v, v, v])
    })
}

fn png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Labels over the image: first label red, second blue, both white.
pub fn label_overlay(img: &GrayImage, t1: &BinaryMask, t2: &BinaryMask) -> RgbImage {
    let mut out = gray_rgb(img);
    for (x, y, px) in out.enumerate_pixels_mut() {
        let (r, c) = (y as usize, x as usize);
        match (t1.get(r, c), t2.get(r, c)) {
            (true, true) => *px = Rgb([255, 255, 255]),
            (true, false) => *px = Rgb([255, 0, 0]),
            (false, true) => *px = Rgb([0, 0, 255]),
            (false, false) => {}
        }
    }
    out
}

/// Proposals over the image as the red, green and blue channels.
pub fn proposal_overlay(img: &GrayImage, rps: [&BinaryMask; 3]) -> RgbImage {
    let mut out = gray_rgb(img);
    for (x, y, px) in out.enumerate_pixels_mut() {
        let (r, c) = (y as usize, x as usize);
        let on = rps.map(|p| p.get(r, c));
        if on.iter().any(|&b| b) {
            *px = Rgb(on.map(|b| if b { 255 } else { 0 }));
        }
    }
    out
}

fn read_decisions(path: &Path) -> Result<Vec<DecisionRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::BadDecisions {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::BadDecisions {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", n + 1),
            })
        })
        .collect()
}

/// Every manual decision becomes a pending item. Images and labels are
/// brought to `plane_size`; proposals are read from `proposals_dir`.
pub fn build_queue(
    decisions_file: &Path,
    stack_dir: &Path,
    proposals_dir: &Path,
    plane_size: usize,
) -> Result<QueueStore> {
    let manual: Vec<DecisionRecord> = read_decisions(decisions_file)?
        .into_iter()
        .filter(|d| d.tau == Tau::Manual)
        .collect();
    let mut store = QueueStore::default();
    if manual.is_empty() {
        return Ok(store);
    }
    let records = load_stack(stack_dir)?;
    for d in manual {
        let rec = records
            .iter()
            .find(|r| r.id == d.id)
            .ok_or_else(|| Error::UnknownId(d.id.clone()))?;
        let img = rec.image.resize_bilinear(plane_size, plane_size);
        let g1 = rec.g1.resize_nearest(plane_size, plane_size);
        let g2 = rec.g2.resize_nearest(plane_size, plane_size);
        let mut rps = Vec::with_capacity(3);
        for k in 1..=3 {
            let p = read_mask_png(&proposals_dir.join(format!("{}.P{k}.png", d.id)))?;
            rps.push(p.resize_nearest(plane_size, plane_size));
        }
        let media = Media {
            image: png(&gray_rgb(&img))?,
            labels: png(&label_overlay(&img, &g1, &g2))?,
            rps: png(&proposal_overlay(&img, [&rps[0], &rps[1], &rps[2]]))?,
        };
        let id = d.id.clone();
        store.items.insert(
            id.clone(),
            QueueItem {
                image_uri: format!("/media/{id}/image.png"),
                overlay_uris: OverlayUris {
                    labels: format!("/media/{id}/labels.png"),
                    rps: format!("/media/{id}/rps.png"),
                },
                id: id.clone(),
                tlsa: d,
                status: ItemStatus::Pending,
                decision: None,
            },
        );
        store.media.insert(id, media);
    }
    Ok(store)
}

/// [`build_queue`] driven by the `queue.json` written by label selection.
pub fn build_queue_from_manifest(path: &Path) -> Result<QueueStore> {
    let manifest: QueueManifest = serde_json::from_slice(&std::fs::read(path)?)?;
    build_queue(
        &manifest.decisions_file,
        &manifest.stack_dir,
        &manifest.proposals_dir,
        manifest.plane_size,
    )
}
