//! Per-section 2-D over-segmentation: regional minima of the elevation map
//! grown by priority flood, then relabeled to globally unique seed labels.
//!
//! A marker is the 4-connected component of `{p: v(p) <= v(m) + h}` around a
//! minimum pixel m, kept only when no pixel of that component lies below
//! v(m). Minima within depth h of a deeper minimum are absorbed by it, so
//! emitted markers are pairwise disjoint, each one maximal: no valid superset
//! exists, and no pixel 4-adjacent to a marker lies below its minimum.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::volume::{Grid, LabelStack, ScalarStack, Stack};

/// Seeding parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedConfig {
    /// Depth threshold for regional minima.
    pub minima_depth: f64,
    /// Elevation at which growth stops; pixels at or above stay background.
    pub stop_level: f64,
    /// Grown regions smaller than this many pixels are discarded.
    pub min_seed_area: usize,
}

impl Default for SeedConfig {
    fn default() -> Self {
        SeedConfig {
            minima_depth: 0.05,
            stop_level: 0.5,
            min_seed_area: 4,
        }
    }
}

impl SeedConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.minima_depth
            && self.minima_depth <= self.stop_level
            && self.stop_level <= 1.0)
        {
            return Err(Error::Config(
                "seed config requires 0 <= minima_depth <= stop_level <= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Per-section 2-D seeds with globally unique labels.
#[derive(Debug, Clone)]
pub struct SeedVolume {
    /// One seed labeling per section; every label occurs in exactly one section.
    pub labels: LabelStack,
    /// Section index of each seed, indexed by label - 1.
    pub section_of: Vec<usize>,
    /// Pixel support size of each seed, indexed by label - 1.
    pub sizes: Vec<u64>,
    /// Total number of distinct seed labels.
    pub global_n: u32,
}

// ── Regional minima ───────────────────────────────────────────────────────────

/// Find depth-h regional minima of one section.
///
/// Pixels are flooded in ascending value order with a union-find over the
/// processed set. A lake stays a marker candidate while the water level is
/// within h of its minimum; it is emitted when the level first exceeds that,
/// and silently absorbed when it meets a lake with a deeper minimum. Markers
/// are labeled 1..m in scan order of their first pixel.
pub fn regional_minima_2d(section: &Grid<f32>, h: f64) -> Grid<u32> {
    let (rows, cols) = (section.rows(), section.cols());
    let n = rows * cols;
    let values = section.values();

    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_unstable_by(|&a, &b| {
        values[a as usize]
            .total_cmp(&values[b as usize])
            .then(a.cmp(&b))
    });

    const UNPROCESSED: u32 = u32::MAX;
    let mut parent: Vec<u32> = vec![UNPROCESSED; n];
    let mut min_val: Vec<f32> = vec![0.0; n];
    let mut live: Vec<bool> = vec![false; n];
    let mut pixels: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut markers: Vec<Vec<u32>> = Vec::new();

    fn find(parent: &mut [u32], mut i: u32) -> u32 {
        let mut root = i;
        while parent[root as usize] != root {
            root = parent[root as usize];
        }
        while parent[i as usize] != root {
            let next = parent[i as usize];
            parent[i as usize] = root;
            i = next;
        }
        root
    }

    let mut roots: Vec<u32> = Vec::with_capacity(4);
    for &p in &order {
        let v = values[p as usize] as f64;
        let (y, x) = ((p as usize / cols), (p as usize % cols));

        roots.clear();
        for (ny, nx) in section.neighbors4(y, x) {
            let q = (ny * cols + nx) as u32;
            if parent[q as usize] != UNPROCESSED {
                let r = find(&mut parent, q);
                if !roots.contains(&r) {
                    roots.push(r);
                }
            }
        }

        if roots.is_empty() {
            parent[p as usize] = p;
            min_val[p as usize] = v as f32;
            live[p as usize] = true;
            pixels[p as usize] = vec![p];
            continue;
        }

        let mu_star = roots
            .iter()
            .map(|&r| min_val[r as usize])
            .fold(f32::INFINITY, f32::min);

        // Lakes whose depth budget this level exceeds are complete: emit.
        for &r in &roots {
            if live[r as usize] && v > min_val[r as usize] as f64 + h {
                markers.push(std::mem::take(&mut pixels[r as usize]));
                live[r as usize] = false;
            }
        }

        // If the deepest joined lake is still filling, every still-live
        // neighbor lake drowns into it: shallower minima within depth h are
        // absorbed, and their pixels belong to the deeper lake's region
        // (they all lie at or below mu_star + h and connect through p).
        let any_survivor = roots
            .iter()
            .any(|&r| live[r as usize] && min_val[r as usize] == mu_star);
        parent[p as usize] = p;
        let mut merged_pixels: Vec<u32> = Vec::new();
        for &r in &roots {
            if live[r as usize] {
                if any_survivor {
                    let taken = std::mem::take(&mut pixels[r as usize]);
                    if taken.len() > merged_pixels.len() {
                        let old = std::mem::replace(&mut merged_pixels, taken);
                        merged_pixels.extend(old);
                    } else {
                        merged_pixels.extend(taken);
                    }
                } else {
                    // Terrain already claimed and released; no marker here.
                    pixels[r as usize] = Vec::new();
                }
                live[r as usize] = false;
            }
            parent[r as usize] = p;
        }
        min_val[p as usize] = mu_star;
        if any_survivor {
            merged_pixels.push(p);
            pixels[p as usize] = merged_pixels;
            live[p as usize] = true;
        }
    }

    for i in 0..n {
        if parent[i] == i as u32 && live[i] {
            markers.push(std::mem::take(&mut pixels[i]));
        }
    }

    // Label in scan order of each marker's first pixel.
    for m in markers.iter_mut() {
        m.sort_unstable();
    }
    markers.sort_unstable_by_key(|m| m[0]);

    let mut out = Grid::filled(rows, cols, 0u32);
    for (i, marker) in markers.iter().enumerate() {
        for &p in marker {
            out.values_mut()[p as usize] = i as u32 + 1;
        }
    }
    out
}

// ── Priority-flood growth ─────────────────────────────────────────────────────

#[derive(PartialEq)]
struct FloodEntry {
    elev: f32,
    y: usize,
    x: usize,
    label: u32,
}

impl Eq for FloodEntry {}

impl Ord for FloodEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; reverse for lowest-first. Ties resolve
        // by lower (y, x), then lower label.
        other
            .elev
            .total_cmp(&self.elev)
            .then(other.y.cmp(&self.y))
            .then(other.x.cmp(&self.x))
            .then(other.label.cmp(&self.label))
    }
}

impl PartialOrd for FloodEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Grow markers over the section by priority flood, restricted to pixels
/// with elevation strictly below `stop_level`. Distinct markers never merge.
pub fn grow_seeds_2d(markers: &Grid<u32>, elevation: &Grid<f32>, stop_level: f64) -> Grid<u32> {
    assert!(
        markers.same_shape(elevation),
        "markers and elevation must share a shape"
    );
    let mut out = Grid::filled(elevation.rows(), elevation.cols(), 0u32);
    let mut heap = BinaryHeap::new();
    // Marker pixels are fixed up front so no wavefront can overrun a marker.
    for y in 0..markers.rows() {
        for x in 0..markers.cols() {
            let label = markers.get(y, x);
            if label != 0 && (elevation.get(y, x) as f64) < stop_level {
                out.set(y, x, label);
            }
        }
    }
    for y in 0..markers.rows() {
        for x in 0..markers.cols() {
            let label = out.get(y, x);
            if label == 0 {
                continue;
            }
            for (ny, nx) in elevation.neighbors4(y, x) {
                if out.get(ny, nx) == 0 && (elevation.get(ny, nx) as f64) < stop_level {
                    heap.push(FloodEntry {
                        elev: elevation.get(ny, nx),
                        y: ny,
                        x: nx,
                        label,
                    });
                }
            }
        }
    }
    while let Some(FloodEntry { y, x, label, .. }) = heap.pop() {
        if out.get(y, x) != 0 {
            continue;
        }
        out.set(y, x, label);
        for (ny, nx) in elevation.neighbors4(y, x) {
            if out.get(ny, nx) == 0 && (elevation.get(ny, nx) as f64) < stop_level {
                heap.push(FloodEntry {
                    elev: elevation.get(ny, nx),
                    y: ny,
                    x: nx,
                    label,
                });
            }
        }
    }
    out
}

// ── Section seeding and global assembly ───────────────────────────────────────

/// Seed one section: minima, growth, and the min-area filter, with local
/// labels compacted 1..m in scan order. Returns the labeling and m.
pub fn seed_section(elevation: &Grid<f32>, cfg: &SeedConfig) -> (Grid<u32>, u32) {
    let markers = regional_minima_2d(elevation, cfg.minima_depth);
    let mut grown = grow_seeds_2d(&markers, elevation, cfg.stop_level);

    let max_label = grown.values().iter().copied().max().unwrap_or(0) as usize;
    let mut area = vec![0u64; max_label + 1];
    for &v in grown.values() {
        area[v as usize] += 1;
    }
    let mut relabel = vec![0u32; max_label + 1];
    let mut next = 0u32;
    for v in grown.values_mut() {
        let old = *v as usize;
        if old == 0 || area[old] < cfg.min_seed_area as u64 {
            *v = 0;
        } else {
            if relabel[old] == 0 {
                next += 1;
                relabel[old] = next;
            }
            *v = relabel[old];
        }
    }
    (grown, next)
}

/// Seed every section, then relabel so seed labels are unique across the
/// stack (compact 1..N, sections in z order).
pub fn seed_volume(elev: &ScalarStack, cfg: &SeedConfig) -> Result<SeedVolume> {
    cfg.validate()?;
    let dims = elev.dims();
    let per_section: Vec<(Grid<u32>, u32)> = elev
        .sections()
        .par_iter()
        .map(|section| seed_section(section, cfg))
        .collect();

    let mut sections = Vec::with_capacity(dims.z);
    let mut section_of = Vec::new();
    let mut sizes: Vec<u64> = Vec::new();
    let mut offset = 0u32;
    for (z, (mut grid, count)) in per_section.into_iter().enumerate() {
        let mut local_sizes = vec![0u64; count as usize];
        for v in grid.values_mut() {
            if *v != 0 {
                local_sizes[*v as usize - 1] += 1;
                *v += offset;
            }
        }
        for size in local_sizes {
            section_of.push(z);
            sizes.push(size);
        }
        offset += count;
        sections.push(grid);
    }

    Ok(SeedVolume {
        labels: Stack::from_sections(dims, sections),
        section_of,
        sizes,
        global_n: offset,
    })
}

/// Recover seed metadata (sections, sizes, label count) from a label stack
/// in which every nonzero label already occurs in exactly one section.
pub fn seed_volume_from_labels(labels: LabelStack) -> Result<SeedVolume> {
    let dims = labels.dims();
    let max_label = labels.voxels().max().unwrap_or(0);
    let mut section_of = vec![usize::MAX; max_label as usize];
    let mut sizes = vec![0u64; max_label as usize];
    for z in 0..dims.z {
        for &v in labels.section(z).values() {
            if v == 0 {
                continue;
            }
            let i = v as usize - 1;
            if section_of[i] == usize::MAX {
                section_of[i] = z;
            } else if section_of[i] != z {
                return Err(Error::InvariantViolation(format!(
                    "seed label {v} occurs in sections {} and {z}",
                    section_of[i]
                )));
            }
            sizes[i] += 1;
        }
    }
    if section_of.iter().any(|&z| z == usize::MAX) {
        return Err(Error::InvariantViolation(
            "seed labels are not compact 1..N".into(),
        ));
    }
    Ok(SeedVolume {
        labels,
        section_of,
        sizes,
        global_n: max_label,
    })
}
