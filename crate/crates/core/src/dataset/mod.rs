//! Image records, stack bookkeeping and train/test splitting.

mod io;
mod synth;

use serde::{Deserialize, Serialize};

pub use io::{load_stack, read_gray_png, read_mask_png, save_stack, write_gray_png, write_mask_png, StackManifest};
pub use synth::{generate_synthetic_stack, AnnotatorBias, SynthConfig};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, GrayImage};

/// Number of images used for training per stack.
pub const TRAIN_IMAGES: usize = 5;

/// Which manual annotation (or combination) to use as a target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelKind {
    G1,
    G2,
    /// Pixelwise intersection of both graders.
    G1AndG2,
}

impl LabelKind {
    pub const ALL: [LabelKind; 3] = [LabelKind::G1, LabelKind::G2, LabelKind::G1AndG2];

    pub fn name(self) -> &'static str {
        match self {
            LabelKind::G1 => "G1",
            LabelKind::G2 => "G2",
            LabelKind::G1AndG2 => "G1andG2",
        }
    }
}

impl std::str::FromStr for LabelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "G1" | "g1" => Ok(LabelKind::G1),
            "G2" | "g2" => Ok(LabelKind::G2),
            "G1andG2" | "g1andg2" | "G1&G2" => Ok(LabelKind::G1AndG2),
            other => Err(Error::InvalidConfig(format!("unknown label `{other}`"))),
        }
    }
}

/// One image of a stack with both graders' annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub stack_id: String,
    pub index_in_stack: usize,
    pub image: GrayImage,
    pub g1: BinaryMask,
    pub g2: BinaryMask,
    /// Only known for synthetic stacks.
    pub ground_truth: Option<BinaryMask>,
}

impl ImageRecord {
    pub fn new(
        id: impl Into<String>,
        stack_id: impl Into<String>,
        index_in_stack: usize,
        image: GrayImage,
        g1: BinaryMask,
        g2: BinaryMask,
    ) -> Result<Self> {
        let id = id.into();
        for mask in [&g1, &g2] {
            if mask.dims() != image.dims() {
                return Err(Error::DimensionMismatch {
                    expected: image.dims(),
                    actual: mask.dims(),
                });
            }
        }
        Ok(Self {
            id,
            stack_id: stack_id.into(),
            index_in_stack,
            image,
            g1,
            g2,
            ground_truth: None,
        })
    }

    pub fn label(&self, kind: LabelKind) -> BinaryMask {
        match kind {
            LabelKind::G1 => self.g1.clone(),
            LabelKind::G2 => self.g2.clone(),
            LabelKind::G1AndG2 => self.g1.and(&self.g2).expect("labels share dimensions"),
        }
    }

    pub fn is_unannotated(&self) -> bool {
        self.g1.is_blank() && self.g2.is_blank()
    }
}

/// Removes images where both graders left the mask blank. Returns the kept
/// records and the dropped ids.
pub fn drop_unannotated(records: Vec<ImageRecord>) -> (Vec<ImageRecord>, Vec<String>) {
    let (kept, dropped): (Vec<_>, Vec<_>) = records.into_iter().partition(|r| !r.is_unannotated());
    (kept, dropped.into_iter().map(|r| r.id).collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackSplit {
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// Positions (into the index-ordered record list) used for training: the
/// first three images and two at the middle of the stack.
pub fn split_positions(n: usize) -> Result<Vec<usize>> {
    if n < TRAIN_IMAGES {
        return Err(Error::NotEnoughRecords {
            needed: TRAIN_IMAGES,
            got: n,
        });
    }
    let mut picked = vec![0, 1, 2];
    let mut candidate = n / 2;
    while picked.len() < TRAIN_IMAGES {
        // midpoints colliding with the head advance to the next unused index
        while picked.contains(&candidate) {
            candidate += 1;
        }
        picked.push(candidate);
        candidate += 1;
    }
    Ok(picked)
}

pub fn make_split(records: &[ImageRecord]) -> Result<StackSplit> {
    let mut ordered: Vec<&ImageRecord> = records.iter().collect();
    ordered.sort_by_key(|r| r.index_in_stack);
    let train = split_positions(ordered.len())?;
    let (mut train_ids, mut test_ids) = (Vec::new(), Vec::new());
    for (pos, rec) in ordered.iter().enumerate() {
        if train.contains(&pos) {
            train_ids.push(rec.id.clone());
        } else {
            test_ids.push(rec.id.clone());
        }
    }
    Ok(StackSplit {
        train_ids,
        test_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(n: usize) -> Vec<ImageRecord> {
        (0..n)
            .map(|i| {
                ImageRecord::new(
                    format!("img{i:03}"),
                    "s",
                    i,
                    GrayImage::filled(2, 2, 0.5),
                    BinaryMask::empty(2, 2),
                    BinaryMask::empty(2, 2),
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn split_of_37_matches_head_plus_midpoint() {
        assert_eq!(split_positions(37).unwrap(), vec![0, 1, 2, 18, 19]);
        let split = make_split(&records(37)).unwrap();
        assert_eq!(split.train_ids.len(), 5);
        assert_eq!(split.test_ids.len(), 32);
    }

    #[test]
    fn split_of_5_uses_everything() {
        assert_eq!(split_positions(5).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(make_split(&records(5)).unwrap().test_ids.is_empty());
    }

    #[test]
    fn split_of_4_is_an_error() {
        assert!(matches!(
            make_split(&records(4)),
            Err(Error::NotEnoughRecords { needed: 5, got: 4 })
        ));
    }

    #[test]
    fn split_is_always_five_distinct() {
        for n in 5..200 {
            let mut p = split_positions(n).unwrap();
            assert!(p.iter().all(|&i| i < n), "n={n}");
            p.sort_unstable();
            p.dedup();
            assert_eq!(p.len(), 5, "n={n}");
        }
    }

    #[test]
    fn split_sorts_by_stack_index() {
        let mut recs = records(6);
        recs.reverse();
        let split = make_split(&recs).unwrap();
        assert_eq!(split.train_ids, vec!["img000", "img001", "img002", "img003", "img004"]);
        assert_eq!(split.test_ids, vec!["img005"]);
    }

    #[test]
    fn unannotated_images_are_dropped() {
        let mut recs = records(3);
        recs[1].g2.set(0, 0, true);
        let (kept, dropped) = drop_unannotated(recs);
        assert_eq!(kept.len(), 1);
        assert_eq!(dropped, vec!["img000", "img002"]);
    }

    #[test]
    fn intersection_label() {
        let mut rec = records(1).remove(0);
        rec.g1.set(0, 0, true);
        rec.g1.set(0, 1, true);
        rec.g2.set(0, 1, true);
        assert_eq!(rec.label(LabelKind::G1AndG2).count(), 1);
        assert_eq!("G1andG2".parse::<LabelKind>().unwrap(), LabelKind::G1AndG2);
    }
}
