//! Random crop and paste: controlled corruption of a label mask.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::BinaryMask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RcapConfig {
    /// Side of the square window, below 100.
    pub w: usize,
    /// Number of crop-and-paste iterations, 1 to 4.
    pub kappa: usize,
    pub rng_seed: u64,
    /// Paste at a neighbouring location along the drawn direction instead of
    /// in place.
    #[serde(default)]
    pub offset_paste: bool,
}

impl Default for RcapConfig {
    fn default() -> Self {
        Self {
            w: 40,
            kappa: 1,
            rng_seed: 0,
            offset_paste: false,
        }
    }
}

impl RcapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..100).contains(&self.w) || !(1..=4).contains(&self.kappa) {
            return Err(Error::InvalidConfig(format!(
                "rcap needs 1 <= w < 100 and 1 <= kappa <= 4, got w={} kappa={}",
                self.w, self.kappa
            )));
        }
        Ok(())
    }
}

/// One of the eight symmetries of a square, indexed by a direction in 1..=8:
/// directions 1-4 rotate by 0/90/180/270 degrees, 5-8 do the same after a
/// horizontal flip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dihedral(pub u8);

impl Dihedral {
    /// Source coordinate in an `n x n` block for destination `(r, c)`.
    pub fn source(self, r: usize, c: usize, n: usize) -> (usize, usize) {
        let k = (self.0 - 1) % 4;
        let flip = self.0 > 4;
        // undo the rotation (clockwise by 90 * k degrees), then the flip
        let (mut sr, mut sc) = (r, c);
        for _ in 0..k {
            (sr, sc) = (n - 1 - sc, sr);
        }
        if flip {
            sc = n - 1 - sc;
        }
        (sr, sc)
    }
}

/// Record of one crop-and-paste iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RcapStep {
    pub seed: (usize, usize),
    /// Top-left of the cropped window.
    pub origin: (usize, usize),
    /// Top-left of where it was pasted.
    pub paste_origin: (usize, usize),
    pub side: usize,
    pub direction: Dihedral,
    pub negate: bool,
}

/// Compass offsets for directions 1..=8, starting north, clockwise.
const COMPASS: [(isize, isize); 8] = [
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
];

/// Start of a `side`-long window centred at `center`, shifted to lie inside `[0, len)`.
fn window_start(center: usize, side: usize, len: usize) -> usize {
    let start = center.saturating_sub(side / 2);
    start.min(len - side)
}

pub fn rcap_with_trace(t: &BinaryMask, cfg: &RcapConfig) -> Result<(BinaryMask, Vec<RcapStep>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut out = t.clone();
    let mut steps = Vec::with_capacity(cfg.kappa);
    let (h, w) = t.dims();
    let side = cfg.w.min(h).min(w);
    if side == 0 {
        return Ok((out, steps));
    }
    for _ in 0..cfg.kappa {
        let foreground: Vec<usize> = out
            .bits()
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect();
        if foreground.is_empty() {
            break;
        }
        let pick = foreground[rng.random_range(0..foreground.len())];
        let seed = (pick / w, pick % w);
        let direction = Dihedral(rng.random_range(1..=8u8));
        let negate = rng.random_bool(0.5);
        let origin = (window_start(seed.0, side, h), window_start(seed.1, side, w));
        let paste_origin = if cfg.offset_paste {
            let (dr, dc) = COMPASS[(direction.0 - 1) as usize];
            let shift = |o: usize, d: isize, len: usize| {
                (o as isize + d * side as isize).clamp(0, (len - side) as isize) as usize
            };
            (shift(origin.0, dr, h), shift(origin.1, dc, w))
        } else {
            origin
        };
        let block = out.crop(origin.0, origin.1, side, side);
        for r in 0..side {
            for c in 0..side {
                let (sr, sc) = direction.source(r, c, side);
                let v = block.get(sr, sc) ^ negate;
                out.set(paste_origin.0 + r, paste_origin.1 + c, v);
            }
        }
        steps.push(RcapStep {
            seed,
            origin,
            paste_origin,
            side,
            direction,
            negate,
        });
    }
    Ok((out, steps))
}

pub fn rcap(t: &BinaryMask, cfg: &RcapConfig) -> Result<BinaryMask> {
    rcap_with_trace(t, cfg).map(|(m, _)| m)
}

/// Per-image seed derived from a run seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the combined value
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(w: usize, kappa: usize, seed: u64) -> RcapConfig {
        RcapConfig {
            w,
            kappa,
            rng_seed: seed,
            offset_paste: false,
        }
    }

    #[test]
    fn dihedral_group_is_complete() {
        let n = 3;
        let mut images = std::collections::HashSet::new();
        for d in 1..=8u8 {
            let map: Vec<(usize, usize)> = (0..n * n)
                .map(|i| Dihedral(d).source(i / n, i % n, n))
                .collect();
            let mut sorted = map.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), n * n, "direction {d} is not a bijection");
            images.insert(map);
        }
        assert_eq!(images.len(), 8);
        assert_eq!(Dihedral(1).source(0, 2, 3), (0, 2));
    }

    #[test]
    fn blank_mask_is_unchanged() {
        let blank = BinaryMask::empty(30, 30);
        let (out, steps) = rcap_with_trace(&blank, &cfg(10, 4, 1)).unwrap();
        assert_eq!(out, blank);
        assert!(steps.is_empty());
    }

    #[test]
    fn negating_a_solid_window_clears_it() {
        let solid = BinaryMask::full(60, 60);
        let mut checked = false;
        for seed in 0..64 {
            let (out, steps) = rcap_with_trace(&solid, &cfg(12, 1, seed)).unwrap();
            if steps[0].negate {
                assert_eq!(solid.count() - out.count(), 144);
                checked = true;
            } else {
                assert_eq!(out, solid);
            }
        }
        assert!(checked);
    }

    #[test]
    fn same_seed_same_output() {
        let m = BinaryMask::from_fn(50, 50, |r, c| (r * c) % 7 < 3);
        assert_eq!(rcap(&m, &cfg(15, 3, 9)).unwrap(), rcap(&m, &cfg(15, 3, 9)).unwrap());
    }

    #[test]
    fn windows_contain_their_seed() {
        let m = BinaryMask::from_fn(50, 40, |r, c| r < 5 || c > 35);
        for seed in 0..40 {
            let (_, steps) = rcap_with_trace(&m, &cfg(20, 4, seed)).unwrap();
            for s in steps {
                assert!((s.origin.0..s.origin.0 + s.side).contains(&s.seed.0));
                assert!((s.origin.1..s.origin.1 + s.side).contains(&s.seed.1));
            }
        }
    }

    #[test]
    fn offset_mode_moves_the_paste() {
        let m = BinaryMask::from_fn(80, 80, |r, c| (30..50).contains(&r) && (30..50).contains(&c));
        let c = RcapConfig {
            offset_paste: true,
            ..cfg(10, 1, 3)
        };
        let (_, steps) = rcap_with_trace(&m, &c).unwrap();
        assert_ne!(steps[0].paste_origin, steps[0].origin);
    }

    #[test]
    fn invalid_config() {
        let m = BinaryMask::empty(5, 5);
        assert!(rcap(&m, &cfg(100, 1, 0)).is_err());
        assert!(rcap(&m, &cfg(10, 5, 0)).is_err());
        assert!(rcap(&m, &cfg(10, 0, 0)).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_eq!(derive_seed(5, 3), derive_seed(5, 3));
    }
}
