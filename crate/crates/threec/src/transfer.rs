//! Per-digit section-to-section classifiers and the cross-classification
//! step that composes k of them into a multi-object label transfer.
//!
//! A digit classifier sees one colored image (at most l nonzero symbols) of
//! the source section and predicts the coloring of the target section. The
//! same classifier is applied once per digit; the per-pixel tuple of its k
//! predictions is decoded back to instance labels, so one transfer costs
//! exactly k classifier calls no matter how many objects are visible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};

use crate::encoding::{decode_pixels, encode_digit, Codebook, ColoredSection, DecodePolicy};
use crate::error::{Error, Result};
use crate::synthgen::derive_seed;
use crate::volume::Grid;

/// Everything a classifier may look at besides the colored source image.
///
/// Reference classifiers use only the subset they need; the raw-intensity
/// channel exists so a learned implementation could slot in later.
#[derive(Debug, Clone, Copy, Default)]
pub struct TransferContext<'a> {
    pub source_z: usize,
    pub target_z: usize,
    /// Raw image intensities at the target (unused by reference classifiers).
    pub raw: Option<&'a Grid<f32>>,
    /// Border elevation of the target section (geodesic classifier).
    pub elev_target: Option<&'a Grid<f32>>,
    /// Ground-truth labels at the source section (oracle classifier).
    pub gt_source: Option<&'a Grid<u32>>,
    /// Ground-truth labels at the target section (oracle classifier).
    pub gt_target: Option<&'a Grid<u32>>,
}

/// A per-digit classification function: colored source section in, predicted
/// colored target section out.
///
/// Implementations must be deterministic given their declared seed and must
/// not depend on the digit position except through the input image itself.
pub trait DigitClassifier: Sync {
    fn classify(&self, src: &ColoredSection, ctx: &TransferContext<'_>) -> Result<ColoredSection>;
}

// ── Oracle classifier ─────────────────────────────────────────────────────────

/// Ground-truth-backed reference classifier with optional symbol-flip noise.
///
/// Each target pixel of a ground-truth object takes the color of the nearest
/// colored source pixel of the same object (breadth-first distance with
/// deterministic scan-order tie-breaking). Objects without colored source
/// support stay 0. Each nonzero output symbol is then flipped to a uniformly
/// random other symbol with probability `eta`; the noise stream is derived
/// from (rng_seed, digit_index, source_z, target_z) so digit predictions are
/// independently noisy while the underlying clean transfer is digit-agnostic.
#[derive(Debug, Clone)]
pub struct OracleClassifier {
    pub alphabet_size: u8,
    pub eta: f64,
    pub rng_seed: u64,
}

impl OracleClassifier {
    pub fn new(alphabet_size: u8, eta: f64, rng_seed: u64) -> Self {
        OracleClassifier {
            alphabet_size,
            eta,
            rng_seed,
        }
    }
}

impl DigitClassifier for OracleClassifier {
    fn classify(&self, src: &ColoredSection, ctx: &TransferContext<'_>) -> Result<ColoredSection> {
        let (gt_src, gt_tgt) = match (ctx.gt_source, ctx.gt_target) {
            (Some(s), Some(t)) => (s, t),
            _ => return Err(Error::MissingGroundTruth),
        };
        if !gt_src.same_shape(&src.colors) || !gt_tgt.same_shape(&src.colors) {
            return Err(Error::ShapeMismatch(
                "ground truth and colored source differ in shape".into(),
            ));
        }
        let (rows, cols) = (gt_tgt.rows(), gt_tgt.cols());

        // Colored source support per ground-truth object, in scan order.
        let mut sources: HashMap<u32, Vec<u32>> = HashMap::new();
        for (i, (&g, &c)) in gt_src
            .values()
            .iter()
            .zip(src.colors.values())
            .enumerate()
        {
            if g != 0 && c != 0 {
                sources.entry(g).or_default().push(i as u32);
            }
        }
        // Target support per object.
        let mut targets: HashMap<u32, Vec<u32>> = HashMap::new();
        for (i, &g) in gt_tgt.values().iter().enumerate() {
            if g != 0 && sources.contains_key(&g) {
                targets.entry(g).or_default().push(i as u32);
            }
        }

        let mut out = vec![0u8; rows * cols];
        let mut stamp = vec![0u32; rows * cols];
        let mut origin = vec![0u32; rows * cols];
        let mut queue = VecDeque::new();
        let mut object_ids: Vec<u32> = targets.keys().copied().collect();
        object_ids.sort_unstable();
        for g in object_ids {
            let tgt_pixels = &targets[&g];
            let src_pixels = &sources[&g];
            queue.clear();
            for &s in src_pixels {
                stamp[s as usize] = g;
                origin[s as usize] = s;
                queue.push_back(s);
            }
            let mut remaining = tgt_pixels
                .iter()
                .filter(|&&t| stamp[t as usize] != g)
                .count();
            while remaining > 0 {
                let p = match queue.pop_front() {
                    Some(p) => p,
                    None => break,
                };
                let (y, x) = (p as usize / cols, p as usize % cols);
                for (ny, nx) in gt_tgt.neighbors4(y, x) {
                    let q = ny * cols + nx;
                    if stamp[q] != g {
                        stamp[q] = g;
                        origin[q] = origin[p as usize];
                        queue.push_back(q as u32);
                        if gt_tgt.values()[q] == g {
                            remaining -= 1;
                        }
                    }
                }
            }
            for &t in tgt_pixels {
                out[t as usize] = src.colors.values()[origin[t as usize] as usize];
            }
        }

        if self.eta > 0.0 {
            let salt = (src.digit_index as u64) << 48
                ^ (ctx.source_z as u64) << 24
                ^ ctx.target_z as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.rng_seed, salt));
            let l = self.alphabet_size;
            for sym in out.iter_mut() {
                if *sym != 0 && rng.gen::<f64>() < self.eta {
                    let mut other = rng.gen_range(1..=l - 1);
                    if other >= *sym {
                        other += 1;
                    }
                    *sym = other;
                }
            }
        }

        Ok(ColoredSection {
            z: ctx.target_z,
            digit_index: src.digit_index,
            colors: Grid::from_vec(rows, cols, out),
        })
    }
}

// ── Geodesic classifier ───────────────────────────────────────────────────────

/// Deterministic non-learned classifier: colored source pixels project onto
/// the target at the same (y, x), then spread by multi-source shortest path
/// on the 4-neighbor pixel graph where every entered pixel (including the
/// projected source itself) costs its target elevation.
///
/// A pixel takes the color of its lowest-cost source; total cost above
/// `cutoff` leaves it 0. Ties resolve by fewer hops, then lower source
/// color, then lower source (y, x) — flat elevation degenerates to a
/// hop-count Voronoi of the projected sources.
#[derive(Debug, Clone)]
pub struct GeodesicClassifier {
    pub cutoff: f64,
}

impl GeodesicClassifier {
    pub fn new(cutoff: f64) -> Self {
        GeodesicClassifier { cutoff }
    }
}

#[derive(PartialEq)]
struct GeoEntry {
    cost: f64,
    hops: u32,
    color: u8,
    sy: u32,
    sx: u32,
    pixel: u32,
}

impl Eq for GeoEntry {}

impl Ord for GeoEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap ordering (reversed); pixel index last, for determinism only.
        other
            .cost
            .total_cmp(&self.cost)
            .then(other.hops.cmp(&self.hops))
            .then(other.color.cmp(&self.color))
            .then(other.sy.cmp(&self.sy))
            .then(other.sx.cmp(&self.sx))
            .then(other.pixel.cmp(&self.pixel))
    }
}

impl PartialOrd for GeoEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl DigitClassifier for GeodesicClassifier {
    fn classify(&self, src: &ColoredSection, ctx: &TransferContext<'_>) -> Result<ColoredSection> {
        let elev = ctx.elev_target.ok_or_else(|| {
            Error::Config("geodesic classifier requires target elevation".into())
        })?;
        if !elev.same_shape(&src.colors) {
            return Err(Error::ShapeMismatch(
                "elevation and colored source differ in shape".into(),
            ));
        }
        if self.cutoff < 0.0 {
            return Err(Error::Config("geodesic cutoff must be >= 0".into()));
        }
        let (rows, cols) = (elev.rows(), elev.cols());
        let mut done = vec![false; rows * cols];
        let mut out = vec![0u8; rows * cols];
        let mut heap = BinaryHeap::new();

        for y in 0..rows {
            for x in 0..cols {
                let color = src.colors.get(y, x);
                if color == 0 {
                    continue;
                }
                let cost = elev.get(y, x) as f64;
                if cost <= self.cutoff {
                    heap.push(GeoEntry {
                        cost,
                        hops: 0,
                        color,
                        sy: y as u32,
                        sx: x as u32,
                        pixel: (y * cols + x) as u32,
                    });
                }
            }
        }

        while let Some(e) = heap.pop() {
            let p = e.pixel as usize;
            if done[p] {
                continue;
            }
            done[p] = true;
            out[p] = e.color;
            let (y, x) = (p / cols, p % cols);
            for (ny, nx) in elev.neighbors4(y, x) {
                let q = ny * cols + nx;
                if done[q] {
                    continue;
                }
                let cost = e.cost + elev.get(ny, nx) as f64;
                if cost <= self.cutoff {
                    heap.push(GeoEntry {
                        cost,
                        hops: e.hops + 1,
                        color: e.color,
                        sy: e.sy,
                        sx: e.sx,
                        pixel: q as u32,
                    });
                }
            }
        }

        Ok(ColoredSection {
            z: ctx.target_z,
            digit_index: src.digit_index,
            colors: Grid::from_vec(rows, cols, out),
        })
    }
}

// ── Instrumentation ───────────────────────────────────────────────────────────

/// Wraps a classifier and counts invocations; the pipeline report asserts
/// the k-calls-per-pair accounting against this.
pub struct CountingClassifier<C> {
    inner: C,
    calls: AtomicU64,
}

impl<C> CountingClassifier<C> {
    pub fn new(inner: C) -> Self {
        CountingClassifier {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(AtomicOrdering::Relaxed)
    }
}

impl<C: DigitClassifier> DigitClassifier for CountingClassifier<C> {
    fn classify(&self, src: &ColoredSection, ctx: &TransferContext<'_>) -> Result<ColoredSection> {
        self.calls.fetch_add(1, AtomicOrdering::Relaxed);
        self.inner.classify(src, ctx)
    }
}

impl DigitClassifier for Box<dyn DigitClassifier + Send + Sync> {
    fn classify(&self, src: &ColoredSection, ctx: &TransferContext<'_>) -> Result<ColoredSection> {
        self.as_ref().classify(src, ctx)
    }
}

// ── Cross-classification ──────────────────────────────────────────────────────

/// Transfer a labeled source section to the target: encode per digit, run
/// the classifier k times (in parallel), decode the tuple of predictions,
/// and drop any decoded label that is not among the source labels.
pub fn cross_classify(
    seeds_src: &Grid<u32>,
    ctx: &TransferContext<'_>,
    cb: &Codebook,
    clf: &impl DigitClassifier,
    policy: DecodePolicy,
) -> Result<Grid<u32>> {
    let k = cb.digits();
    let predictions: Vec<ColoredSection> = (1..=k)
        .into_par_iter()
        .map(|digit| {
            let colored = encode_digit(seeds_src, ctx.source_z, cb, digit)?;
            let pred = clf.classify(&colored, ctx)?;
            if !pred.colors.same_shape(&colored.colors) {
                return Err(Error::ShapeMismatch(
                    "classifier changed the section shape".into(),
                ));
            }
            Ok(pred)
        })
        .collect::<Result<_>>()?;

    let mut decoded = decode_pixels(&predictions, cb, policy)?;

    // The cross-labeling never invents labels: anything decoding outside the
    // source section's label set is unassigned.
    let mut present = vec![false; cb.n_labels() as usize + 1];
    for &v in seeds_src.values() {
        present[v as usize] = true;
    }
    for v in decoded.values_mut() {
        if *v != 0 && !present[*v as usize] {
            *v = 0;
        }
    }
    Ok(decoded)
}
