//! Synthetic ground-truth generator: branching, drifting tubes in an
//! anisotropic stack, plus derived border elevation maps.
//!
//! Objects are random-walk centerlines with per-section discs and stochastic
//! branching. Each object is confined to its own territory cell so distinct
//! objects always keep a background gap of at least two pixels; this makes
//! every 26-connected foreground component single-label by construction.
//!
//! The elevation map is a smoothed boundary indicator per section: background
//! sits at 1.0, object rim pixels at 0.5, and the interior ramps down to 0
//! over `elevation_blur_radius` pixels, so minima lie inside objects and the
//! 0.5 level line hugs every boundary. There is no smoothing across z.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::volume::{Dims, Grid, LabelStack, ScalarStack, Stack};

/// Parameters of the synthetic volume generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub dims: Dims,
    /// Number of objects to place (1..).
    pub n_objects: u32,
    /// Mean disc radius in pixels; per-strand radii vary around it.
    pub mean_radius: f64,
    /// Probability per section per object of spawning an extra strand.
    pub branch_prob: f64,
    /// Std-dev of the per-section centerline random walk, in pixels.
    pub drift_sigma: f64,
    /// Probability per section per object of skipping that section entirely.
    pub gap_prob: f64,
    /// Width of the interior elevation ramp, in pixels. 0 gives a hard
    /// binary indicator.
    pub elevation_blur_radius: u32,
    /// Std-dev of additive gaussian elevation noise (clamped per band).
    pub noise_sigma: f64,
    pub rng_seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            dims: Dims::new(32, 128, 128).expect("default dims are valid"),
            n_objects: 12,
            mean_radius: 6.0,
            branch_prob: 0.08,
            drift_sigma: 1.0,
            gap_prob: 0.0,
            elevation_blur_radius: 2,
            noise_sigma: 0.02,
            rng_seed: 7,
        }
    }
}

impl GenConfig {
    fn validate(&self) -> Result<()> {
        if self.n_objects < 1 {
            return Err(Error::ConfigInfeasible("n_objects must be >= 1".into()));
        }
        if self.mean_radius < 1.0 {
            return Err(Error::ConfigInfeasible("mean_radius must be >= 1".into()));
        }
        for (name, p) in [
            ("branch_prob", self.branch_prob),
            ("gap_prob", self.gap_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::ConfigInfeasible(format!("{name} must be in [0, 1]")));
            }
        }
        if self.drift_sigma < 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::ConfigInfeasible("sigmas must be >= 0".into()));
        }
        Ok(())
    }
}

/// One disc-swept walk; several strands may share an object label.
#[derive(Debug, Clone)]
struct Strand {
    label: u32,
    z_start: usize,
    /// Disc centers for z in [z_start, dims.z).
    centers: Vec<(f64, f64)>,
    radius: f64,
}

/// A fully sampled synthetic volume, addressable one section at a time.
///
/// All randomness is consumed while building the model, so `gt_section` and
/// `elev_section` are pure functions of z and the model. The streaming
/// pipeline leans on this to regenerate sections without holding the stack.
#[derive(Debug, Clone)]
pub struct SynthModel {
    cfg: GenConfig,
    strands: Vec<Strand>,
    /// present[label-1][z]: whether the object appears in section z.
    present: Vec<Vec<bool>>,
    n_labels: u32,
}

const CELL_MARGIN: f64 = 2.0;
const MAX_STRANDS_PER_OBJECT: usize = 4;

fn splitmix64(mut v: u64) -> u64 {
    v = v.wrapping_add(0x9E37_79B9_7F4A_7C15);
    v = (v ^ (v >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    v = (v ^ (v >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    v ^ (v >> 31)
}

/// Derive an independent stream seed from a base seed and a salt.
pub(crate) fn derive_seed(base: u64, salt: u64) -> u64 {
    splitmix64(base ^ salt.wrapping_mul(0xA24B_AED4_963E_E407))
}

/// Standard normal deviate via Box-Muller.
pub(crate) fn gauss(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

impl SynthModel {
    pub fn build(cfg: &GenConfig) -> Result<SynthModel> {
        cfg.validate()?;
        let dims = cfg.dims;
        let n = cfg.n_objects as usize;

        // Territory cells: one object per cell, roughly square layout.
        let aspect = dims.x as f64 / dims.y as f64;
        let mut cols = ((n as f64 * aspect).sqrt().round() as usize).max(1);
        cols = cols.min(n);
        let rows = n.div_ceil(cols);
        let cell_h = dims.y as f64 / rows as f64;
        let cell_w = dims.x as f64 / cols as f64;
        let max_radius = (cell_h.min(cell_w) - 2.0 * CELL_MARGIN - 1.0) / 2.0;
        if max_radius < 2.0 {
            return Err(Error::ConfigInfeasible(format!(
                "cannot pack {n} objects of radius >= 2 into {}x{} sections",
                dims.y, dims.x
            )));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let mut raw_strands: Vec<Strand> = Vec::new();
        let mut raw_present: Vec<Vec<bool>> = Vec::new();

        for obj in 0..n {
            let (row, col) = (obj / cols, obj % cols);
            let y_lo = row as f64 * cell_h;
            let x_lo = col as f64 * cell_w;
            let radius = {
                let r = rng.gen_range(0.75..1.25) * cfg.mean_radius;
                r.clamp(2.0, max_radius)
            };
            let clamp_center = move |cy: f64, cx: f64, r: f64| {
                (
                    cy.clamp(y_lo + r + CELL_MARGIN, y_lo + cell_h - 1.0 - r - CELL_MARGIN),
                    cx.clamp(x_lo + r + CELL_MARGIN, x_lo + cell_w - 1.0 - r - CELL_MARGIN),
                )
            };

            let start = clamp_center(
                y_lo + rng.gen_range(0.0..cell_h),
                x_lo + rng.gen_range(0.0..cell_w),
                radius,
            );
            let mut strands = vec![Strand {
                label: obj as u32 + 1,
                z_start: 0,
                centers: vec![start],
                radius,
            }];

            for z in 1..dims.z {
                for s in 0..strands.len() {
                    if z <= strands[s].z_start {
                        continue;
                    }
                    let (py, px) = *strands[s].centers.last().unwrap();
                    let ny = py + gauss(&mut rng) * cfg.drift_sigma;
                    let nx = px + gauss(&mut rng) * cfg.drift_sigma;
                    let r = strands[s].radius;
                    strands[s].centers.push(clamp_center(ny, nx, r));
                }
                if strands.len() < MAX_STRANDS_PER_OBJECT && rng.gen::<f64>() < cfg.branch_prob {
                    let parent = &strands[rng.gen_range(0..strands.len())];
                    let (py, px) = *parent.centers.last().unwrap();
                    let r = (parent.radius * 0.8).max(2.0);
                    let fork = clamp_center(
                        py + gauss(&mut rng) * parent.radius,
                        px + gauss(&mut rng) * parent.radius,
                        r,
                    );
                    strands.push(Strand {
                        label: obj as u32 + 1,
                        z_start: z,
                        centers: vec![fork],
                        radius: r,
                    });
                }
            }

            let present: Vec<bool> = (0..dims.z)
                .map(|_| !(cfg.gap_prob > 0.0 && rng.gen::<f64>() < cfg.gap_prob))
                .collect();
            raw_present.push(present);
            raw_strands.extend(strands);
        }

        // Drop objects that were gapped out of every section and compact labels.
        let appearing: Vec<bool> = raw_present.iter().map(|p| p.iter().any(|&b| b)).collect();
        if !appearing.iter().any(|&a| a) {
            return Err(Error::ConfigInfeasible(
                "every object was gapped out of every section".into(),
            ));
        }
        let mut relabel = vec![0u32; n];
        let mut next = 0u32;
        for (obj, &app) in appearing.iter().enumerate() {
            if app {
                next += 1;
                relabel[obj] = next;
            }
        }
        let strands = raw_strands
            .into_iter()
            .filter(|s| appearing[s.label as usize - 1])
            .map(|mut s| {
                s.label = relabel[s.label as usize - 1];
                s
            })
            .collect();
        let present: Vec<Vec<bool>> = raw_present
            .into_iter()
            .zip(&appearing)
            .filter(|(_, &a)| a)
            .map(|(p, _)| p)
            .collect();

        Ok(SynthModel {
            cfg: cfg.clone(),
            strands,
            present,
            n_labels: next,
        })
    }

    pub fn dims(&self) -> Dims {
        self.cfg.dims
    }

    /// Number of distinct object labels (labels are 1..=n_labels).
    pub fn n_labels(&self) -> u32 {
        self.n_labels
    }

    /// Rasterize the ground-truth labels of one section.
    pub fn gt_section(&self, z: usize) -> Grid<u32> {
        let dims = self.cfg.dims;
        let mut grid = Grid::filled(dims.y, dims.x, 0u32);
        for strand in &self.strands {
            if z < strand.z_start || !self.present[strand.label as usize - 1][z] {
                continue;
            }
            let (cy, cx) = strand.centers[z - strand.z_start];
            let r = strand.radius;
            let r2 = r * r;
            let y0 = (cy - r).floor().max(0.0) as usize;
            let y1 = ((cy + r).ceil() as usize).min(dims.y - 1);
            let x0 = (cx - r).floor().max(0.0) as usize;
            let x1 = ((cx + r).ceil() as usize).min(dims.x - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                    if dy * dy + dx * dx <= r2 && grid.get(y, x) == 0 {
                        grid.set(y, x, strand.label);
                    }
                }
            }
        }
        grid
    }

    /// Derive the border elevation map of one section from its labels.
    pub fn elev_section(&self, z: usize) -> Grid<f32> {
        let gt = self.gt_section(z);
        let mut elev = elevation_from_labels(&gt, self.cfg.elevation_blur_radius);
        if self.cfg.noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.rng_seed, z as u64));
            let depth = depth_to_background(&gt);
            let sigma = self.cfg.noise_sigma;
            for (i, v) in elev.values_mut().iter_mut().enumerate() {
                let noisy = *v as f64 + gauss(&mut rng) * sigma;
                // Keep the boundary-band and interior contracts under noise.
                *v = if depth[i] >= 2 {
                    noisy.clamp(0.0, 0.499) as f32
                } else {
                    noisy.clamp(0.5, 1.0) as f32
                };
            }
        }
        elev
    }
}

/// 4-connected BFS distance to the nearest background pixel, per pixel.
/// Background pixels themselves get 0; object rims get 1.
fn depth_to_background(gt: &Grid<u32>) -> Vec<u32> {
    let (rows, cols) = (gt.rows(), gt.cols());
    let mut dist = vec![u32::MAX; rows * cols];
    let mut queue = VecDeque::new();
    for y in 0..rows {
        for x in 0..cols {
            if gt.get(y, x) == 0 {
                dist[y * cols + x] = 0;
                queue.push_back((y, x));
            }
        }
    }
    while let Some((y, x)) = queue.pop_front() {
        let d = dist[y * cols + x];
        for (ny, nx) in gt.neighbors4(y, x) {
            let idx = ny * cols + nx;
            if dist[idx] == u32::MAX {
                dist[idx] = d + 1;
                queue.push_back((ny, nx));
            }
        }
    }
    // An all-foreground section cannot occur (cells leave gaps), but guard it.
    for v in dist.iter_mut() {
        if *v == u32::MAX {
            *v = 0;
        }
    }
    dist
}

/// Noise-free elevation: background 1.0; object rim 0.5 (1.0 when blur = 0);
/// interior ramping 0.5 -> 0 over `blur + 1` pixels of depth.
fn elevation_from_labels(gt: &Grid<u32>, blur: u32) -> Grid<f32> {
    let depth = depth_to_background(gt);
    let cols = gt.cols();
    Grid::from_fn(gt.rows(), gt.cols(), |y, x| {
        let d = depth[y * cols + x];
        if d == 0 {
            1.0
        } else if blur == 0 {
            if d == 1 {
                1.0
            } else {
                0.0
            }
        } else if d == 1 {
            0.5
        } else {
            let ramp = 1.0 - (d - 1) as f32 / (blur + 1) as f32;
            0.5 * ramp.max(0.0)
        }
    })
}

/// Generate a full ground-truth label stack and its elevation stack.
pub fn generate_stack(cfg: &GenConfig) -> Result<(LabelStack, ScalarStack)> {
    let model = SynthModel::build(cfg)?;
    let dims = cfg.dims;
    let gt_sections: Vec<Grid<u32>> = (0..dims.z).map(|z| model.gt_section(z)).collect();
    let elev_sections: Vec<Grid<f32>> = (0..dims.z).map(|z| model.elev_section(z)).collect();
    let gt = Stack::from_sections(dims, gt_sections);
    // Labels are already compact (1..n_labels): gapped-out objects were
    // dropped and the survivors renumbered while building the model.
    let elev = Stack::from_sections(dims, elev_sections);
    Ok((gt, elev))
}

/// Add clamped gaussian noise to every elevation value, deterministically.
pub fn perturb_elevation(elev: &ScalarStack, sigma: f64, rng_seed: u64) -> ScalarStack {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let sections = elev
        .sections()
        .iter()
        .map(|s| {
            Grid::from_vec(
                s.rows(),
                s.cols(),
                s.values()
                    .iter()
                    .map(|&v| (v as f64 + gauss(&mut rng) * sigma).clamp(0.0, 1.0) as f32)
                    .collect(),
            )
        })
        .collect();
    Stack::from_sections(elev.dims(), sections)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(dims: Dims, n: u32, seed: u64) -> GenConfig {
        GenConfig {
            dims,
            n_objects: n,
            rng_seed: seed,
            ..GenConfig::default()
        }
    }

    #[test]
    fn single_object_present_in_every_section() {
        let c = GenConfig {
            gap_prob: 0.0,
            mean_radius: 5.0,
            ..cfg(Dims::new(16, 64, 64).unwrap(), 1, 11)
        };
        let (gt, _) = generate_stack(&c).unwrap();
        // Per-section label histogram: label 1 appears in all 16 sections.
        for z in 0..16 {
            assert!(
                gt.section(z).values().iter().any(|&v| v == 1),
                "object missing from section {z}"
            );
        }
        assert!(gt.voxels().all(|v| v <= 1));
    }

    #[test]
    fn generation_is_deterministic() {
        let c = cfg(Dims::new(8, 64, 64).unwrap(), 4, 99);
        let (gt_a, elev_a) = generate_stack(&c).unwrap();
        let (gt_b, elev_b) = generate_stack(&c).unwrap();
        assert_eq!(gt_a, gt_b);
        assert_eq!(elev_a, elev_b);
    }

    #[test]
    fn zero_noise_zero_blur_gives_binary_elevation() {
        let c = GenConfig {
            noise_sigma: 0.0,
            elevation_blur_radius: 0,
            ..cfg(Dims::new(4, 48, 48).unwrap(), 4, 5)
        };
        let (_, elev) = generate_stack(&c).unwrap();
        assert!(elev.voxels().all(|v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn elevation_band_and_interior_contract() {
        let c = GenConfig {
            noise_sigma: 0.03,
            elevation_blur_radius: 2,
            mean_radius: 6.0,
            ..cfg(Dims::new(6, 96, 96).unwrap(), 6, 21)
        };
        let (gt, elev) = generate_stack(&c).unwrap();
        for z in 0..gt.dims().z {
            let g = gt.section(z);
            let e = elev.section(z);
            let mut deepest: std::collections::HashMap<u32, (u32, f32)> = Default::default();
            for y in 0..g.rows() {
                for x in 0..g.cols() {
                    let v = g.get(y, x);
                    let boundary = g.neighbors4(y, x).any(|(ny, nx)| g.get(ny, nx) != v);
                    if boundary {
                        assert!(
                            e.get(y, x) >= 0.5,
                            "boundary pixel ({z},{y},{x}) has elevation {}",
                            e.get(y, x)
                        );
                    }
                    if v != 0 {
                        // Brute-force depth: steps to the nearest differing pixel.
                        let mut best = u32::MAX;
                        'scan: for r in 1..(g.rows().max(g.cols()) as i64) {
                            for dy in -r..=r {
                                for dx in -r..=r {
                                    if dy.abs() + dx.abs() != r {
                                        continue;
                                    }
                                    let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                                    let differs = ny < 0
                                        || nx < 0
                                        || ny >= g.rows() as i64
                                        || nx >= g.cols() as i64
                                        || g.get(ny as usize, nx as usize) != v;
                                    if differs {
                                        best = r as u32;
                                        break 'scan;
                                    }
                                }
                            }
                        }
                        let entry = deepest.entry(v).or_insert((0, 1.0));
                        if best > entry.0 {
                            *entry = (best, e.get(y, x));
                        }
                    }
                }
            }
            for (label, (depth, elev_at_deepest)) in deepest {
                if depth >= 2 {
                    assert!(
                        elev_at_deepest < 0.5,
                        "interior-most pixel of object {label} in section {z} has elevation {elev_at_deepest}"
                    );
                }
            }
        }
    }

    #[test]
    fn foreground_components_are_single_label_26() {
        let c = cfg(Dims::new(12, 96, 96).unwrap(), 9, 31);
        let (gt, _) = generate_stack(&c).unwrap();
        let d = gt.dims();
        // Brute-force flood over 26-connectivity.
        let mut seen = vec![false; d.z * d.y * d.x];
        let idx = |z: usize, y: usize, x: usize| (z * d.y + y) * d.x + x;
        for z in 0..d.z {
            for y in 0..d.y {
                for x in 0..d.x {
                    if gt.get(z, y, x) == 0 || seen[idx(z, y, x)] {
                        continue;
                    }
                    let label = gt.get(z, y, x);
                    let mut queue = vec![(z, y, x)];
                    seen[idx(z, y, x)] = true;
                    while let Some((cz, cy, cx)) = queue.pop() {
                        assert_eq!(
                            gt.get(cz, cy, cx),
                            label,
                            "26-connected component carries two labels"
                        );
                        for dz in -1i64..=1 {
                            for dy in -1i64..=1 {
                                for dx in -1i64..=1 {
                                    let (nz, ny, nx) =
                                        (cz as i64 + dz, cy as i64 + dy, cx as i64 + dx);
                                    if nz < 0 || ny < 0 || nx < 0 {
                                        continue;
                                    }
                                    let (nz, ny, nx) = (nz as usize, ny as usize, nx as usize);
                                    if nz >= d.z || ny >= d.y || nx >= d.x {
                                        continue;
                                    }
                                    if gt.get(nz, ny, nx) != 0 && !seen[idx(nz, ny, nx)] {
                                        seen[idx(nz, ny, nx)] = true;
                                        queue.push((nz, ny, nx));
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn labels_are_compact_even_with_gaps() {
        let c = GenConfig {
            gap_prob: 0.4,
            ..cfg(Dims::new(10, 96, 96).unwrap(), 8, 13)
        };
        let (gt, _) = generate_stack(&c).unwrap();
        let mut labels: Vec<u32> = gt.voxels().filter(|&v| v != 0).collect();
        labels.sort_unstable();
        labels.dedup();
        let n = labels.len() as u32;
        assert!(n >= 1 && n <= 8);
        assert_eq!(labels, (1..=n).collect::<Vec<_>>());
    }

    #[test]
    fn infeasible_packing_is_rejected() {
        let c = cfg(Dims::new(2, 16, 16).unwrap(), 64, 1);
        assert!(matches!(
            SynthModel::build(&c),
            Err(Error::ConfigInfeasible(_))
        ));
    }

    #[test]
    fn perturb_sigma_zero_is_identity() {
        let (_, elev) = generate_stack(&cfg(Dims::new(4, 48, 48).unwrap(), 3, 2)).unwrap();
        assert_eq!(perturb_elevation(&elev, 0.0, 9), elev);
    }

    #[test]
    fn perturb_large_sigma_stays_clamped() {
        let (_, elev) = generate_stack(&cfg(Dims::new(4, 48, 48).unwrap(), 3, 2)).unwrap();
        let noisy = perturb_elevation(&elev, 10.0, 9);
        assert!(noisy.voxels().all(|v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn perturb_sampling_statistics() {
        // sigma = 0.1 on a constant-0.5 stack: empirical std within [0.07, 0.13]
        // over >= 1e5 voxels (direct sampling statistics).
        let dims = Dims::new(16, 100, 100).unwrap();
        let flat = ScalarStack::filled(dims, 0.5);
        let noisy = perturb_elevation(&flat, 0.1, 4242);
        let n = dims.voxels() as f64;
        assert!(n >= 1e5);
        let mean: f64 = noisy.voxels().map(|v| v as f64).sum::<f64>() / n;
        let var: f64 = noisy
            .voxels()
            .map(|v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        assert!((0.07..=0.13).contains(&std), "std = {std}");
    }

    #[test]
    fn sectionwise_generation_matches_full_stack() {
        let c = cfg(Dims::new(6, 64, 64).unwrap(), 4, 77);
        let model = SynthModel::build(&c).unwrap();
        let (gt, elev) = generate_stack(&c).unwrap();
        for z in 0..c.dims.z {
            assert_eq!(&model.gt_section(z), gt.section(z));
            assert_eq!(&model.elev_section(z), elev.section(z));
        }
    }
}
