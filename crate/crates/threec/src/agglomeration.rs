//! Overlap-graph agglomeration: turn per-pair transfer predictions into
//! directed weighted edges between seeds of different sections, merge seeds
//! whose overlap ratio exceeds a threshold, force-link undersized orphans,
//! and emit the 3-D consistent segmentation.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::seeding::SeedVolume;
use crate::volume::{Grid, LabelStack, Stack};

/// A directed edge: the 3-C prediction of `src_seed` (from section `src_z`)
/// overlaps `dst_seed` at section `dst_z` on `overlap_pixels` pixels.
/// `weight` normalizes by the destination seed's support in its section, so
/// weight 1.0 means the prediction fully explains that seed.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapEdge {
    pub src_seed: u32,
    pub dst_seed: u32,
    pub src_z: usize,
    pub dst_z: usize,
    pub overlap_pixels: u64,
    pub weight: f64,
}

/// Agglomeration parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeConfig {
    /// Maximum z-offset between source and target sections.
    pub window: usize,
    /// Seeds merge when an edge weight strictly exceeds this.
    pub threshold: f64,
    /// Components smaller than this many voxels are orphans.
    pub min_component_size: u64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            window: 2,
            threshold: 0.1,
            min_component_size: 200,
        }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 1 {
            return Err(Error::Config("merge window must be >= 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::Config("merge threshold must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Union-find over seed labels 1..N with component voxel sizes.
#[derive(Debug, Clone)]
pub struct Partition {
    parent: Vec<u32>,
    /// Voxel size per root (stale for non-roots).
    size: Vec<u64>,
    /// Smallest seed label per root, for deterministic tie-breaking.
    min_label: Vec<u32>,
    n_seeds: u32,
}

impl Partition {
    /// One singleton component per seed, sized by its voxel support.
    pub fn singletons(seed_sizes: &[u64]) -> Partition {
        let n = seed_sizes.len() as u32;
        Partition {
            parent: (0..=n).collect(),
            size: std::iter::once(0).chain(seed_sizes.iter().copied()).collect(),
            min_label: (0..=n).collect(),
            n_seeds: n,
        }
    }

    pub fn n_seeds(&self) -> u32 {
        self.n_seeds
    }

    pub fn find(&mut self, label: u32) -> u32 {
        assert!(label >= 1 && label <= self.n_seeds, "seed label out of range");
        let mut root = label;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        let mut cur = label;
        while self.parent[cur as usize] != root {
            let next = self.parent[cur as usize];
            self.parent[cur as usize] = root;
            cur = next;
        }
        root
    }

    /// Union by size; keeps component size and minimum label per root.
    pub fn union(&mut self, a: u32, b: u32) -> bool {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra == rb {
            return false;
        }
        let (big, small) = if self.size[ra as usize] >= self.size[rb as usize] {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[small as usize] = big;
        self.size[big as usize] += self.size[small as usize];
        self.min_label[big as usize] =
            self.min_label[big as usize].min(self.min_label[small as usize]);
        true
    }

    pub fn component_size(&mut self, label: u32) -> u64 {
        let r = self.find(label);
        self.size[r as usize]
    }

    pub fn n_components(&mut self) -> u32 {
        (1..=self.n_seeds).filter(|&l| self.find(l) == l).count() as u32
    }

    /// Compact component ids 1..C, ordered by each component's smallest seed
    /// label (seed labels are assigned in z-major scan order, so this is
    /// first-occurrence order). Indexed by seed label - 1.
    pub fn compact_component_ids(&mut self) -> Vec<u32> {
        let mut roots: Vec<u32> = (1..=self.n_seeds).filter(|&l| self.find(l) == l).collect();
        roots.sort_unstable_by_key(|&r| self.min_label[r as usize]);
        let mut id_of_root: HashMap<u32, u32> = HashMap::with_capacity(roots.len());
        for (i, &r) in roots.iter().enumerate() {
            id_of_root.insert(r, i as u32 + 1);
        }
        (1..=self.n_seeds)
            .map(|l| id_of_root[&self.find(l)])
            .collect()
    }

    /// Partition equality as set partitions (independent of internal roots).
    pub fn same_partition(&mut self, other: &mut Partition) -> bool {
        if self.n_seeds != other.n_seeds {
            return false;
        }
        self.compact_component_ids() == other.compact_component_ids()
    }
}

/// Collect overlap edges between a transferred prediction and the target
/// section's own seeds. Label 0 is ignored on both sides.
pub fn overlap_edges(
    pred: &Grid<u32>,
    src_z: usize,
    seeds_tgt: &Grid<u32>,
    dst_z: usize,
) -> Result<Vec<OverlapEdge>> {
    if !pred.same_shape(seeds_tgt) {
        return Err(Error::ShapeMismatch(
            "prediction and target seeds differ in shape".into(),
        ));
    }
    let mut seed_area: HashMap<u32, u64> = HashMap::new();
    for &j in seeds_tgt.values() {
        if j != 0 {
            *seed_area.entry(j).or_default() += 1;
        }
    }
    let mut overlaps: HashMap<(u32, u32), u64> = HashMap::new();
    for (&i, &j) in pred.values().iter().zip(seeds_tgt.values()) {
        if i != 0 && j != 0 {
            *overlaps.entry((i, j)).or_default() += 1;
        }
    }
    let mut edges: Vec<OverlapEdge> = overlaps
        .into_iter()
        .map(|((i, j), pixels)| OverlapEdge {
            src_seed: i,
            dst_seed: j,
            src_z,
            dst_z,
            overlap_pixels: pixels,
            weight: pixels as f64 / seed_area[&j] as f64,
        })
        .collect();
    edges.sort_unstable_by_key(|e| (e.src_seed, e.dst_seed));
    Ok(edges)
}

/// Union every edge whose weight strictly exceeds the threshold. The result
/// is independent of edge order (union is commutative and associative).
pub fn merge_components(seed_sizes: &[u64], edges: &[OverlapEdge], threshold: f64) -> Partition {
    let mut partition = Partition::singletons(seed_sizes);
    for e in edges {
        if e.weight > threshold {
            partition.union(e.src_seed, e.dst_seed);
        }
    }
    partition
}

/// Greedily force-link undersized components along their strongest edge.
///
/// While some component is smaller than `min_component_size` and has an edge
/// to another component: the smallest such orphan (ties: lower minimum seed
/// label) merges along its maximum-weight incident edge (ties: higher
/// overlap_pixels, then lower destination seed label, then lower source
/// seed label). Orphans without incident edges stay as they are.
pub fn resolve_orphans(partition: &mut Partition, edges: &[OverlapEdge], min_component_size: u64) {
    loop {
        // Smallest orphan component that still has an external edge.
        let mut orphan_root: Option<(u64, u32, u32)> = None; // (size, min_label, root)
        let mut seen_roots: Vec<u32> = Vec::new();
        for label in 1..=partition.n_seeds() {
            let root = partition.find(label);
            if seen_roots.contains(&root) {
                continue;
            }
            seen_roots.push(root);
            let size = partition.size[root as usize];
            if size >= min_component_size {
                continue;
            }
            let has_external = edges.iter().any(|e| {
                let ra = partition.find(e.src_seed);
                let rb = partition.find(e.dst_seed);
                ra != rb && (ra == root || rb == root)
            });
            if !has_external {
                continue;
            }
            let key = (size, partition.min_label[root as usize], root);
            if orphan_root.map_or(true, |best| (key.0, key.1) < (best.0, best.1)) {
                orphan_root = Some(key);
            }
        }
        let Some((_, _, root)) = orphan_root else {
            return;
        };

        let mut best: Option<&OverlapEdge> = None;
        for e in edges {
            let ra = partition.find(e.src_seed);
            let rb = partition.find(e.dst_seed);
            if ra == rb || (ra != root && rb != root) {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => (
                    e.weight,
                    e.overlap_pixels,
                    std::cmp::Reverse(e.dst_seed),
                    std::cmp::Reverse(e.src_seed),
                )
                    .partial_cmp(&(
                        b.weight,
                        b.overlap_pixels,
                        std::cmp::Reverse(b.dst_seed),
                        std::cmp::Reverse(b.src_seed),
                    ))
                    .map_or(false, |o| o == std::cmp::Ordering::Greater),
            };
            if better {
                best = Some(e);
            }
        }
        let e = best.expect("orphan was selected for having an external edge");
        partition.union(e.src_seed, e.dst_seed);
    }
}

/// Write each voxel's compacted component id; background stays 0.
pub fn finalize(seeds: &SeedVolume, partition: &mut Partition) -> LabelStack {
    let ids = partition.compact_component_ids();
    let sections = seeds
        .labels
        .sections()
        .iter()
        .map(|s| {
            Grid::from_vec(
                s.rows(),
                s.cols(),
                s.values()
                    .iter()
                    .map(|&v| if v == 0 { 0 } else { ids[v as usize - 1] })
                    .collect(),
            )
        })
        .collect();
    Stack::from_sections(seeds.labels.dims(), sections)
}
