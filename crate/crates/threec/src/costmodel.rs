//! Classifier-call accounting: how many detector invocations each pixel
//! participates in under single-object tracking versus cross-classification.
//!
//! Single-object tracking touches a pixel once per visible object, divided
//! by the revisit ratio rho (the fraction of an object's pixels finalized
//! per call). Cross-classification touches it a logarithmic number of times
//! in the local object count, independent of which objects they are. The
//! counts are model outputs over a density map, not dataset measurements.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::volume::{Grid, LabelStack, Stack};

/// Cost-model parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    /// Odd side length of the in-section field-of-view box, in pixels.
    pub fov: usize,
    /// Alphabet size of the encoding.
    pub alphabet_size: u8,
    /// Revisit ratio in (0, 1]: object pixels found per call.
    pub rho: f64,
}

impl CostConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fov < 1 || self.fov % 2 == 0 {
            return Err(Error::Config("fov must be odd and >= 1".into()));
        }
        if self.alphabet_size < 2 {
            return Err(Error::Config("alphabet size must be >= 2".into()));
        }
        if self.rho == 0.0 {
            return Err(Error::RhoZero);
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config("rho must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Per-pixel call counts for both strategies plus their totals.
#[derive(Debug, Clone)]
pub struct CostMap {
    pub calls_single: Stack<u32>,
    pub calls_3c: Stack<u32>,
    pub total_single: u64,
    pub total_3c: u64,
    /// total_single / total_3c.
    pub ratio: f64,
    pub max_single_per_pixel: u32,
}

/// Number of distinct nonzero labels in the fov-by-fov in-section box around
/// each pixel (boxes clamp at section borders).
pub fn object_density_map(labels: &LabelStack, fov: usize) -> Result<Stack<u32>> {
    if fov < 1 || fov % 2 == 0 {
        return Err(Error::Config("fov must be odd and >= 1".into()));
    }
    let dims = labels.dims();
    let r = fov / 2;
    let sections = labels
        .sections()
        .iter()
        .map(|section| {
            let (rows, cols) = (section.rows(), section.cols());
            let mut out = Grid::filled(rows, cols, 0u32);
            // Sliding window per row: one histogram, columns enter and leave.
            let mut hist: HashMap<u32, u32> = HashMap::new();
            for y in 0..rows {
                let y0 = y.saturating_sub(r);
                let y1 = (y + r).min(rows - 1);
                hist.clear();
                let mut distinct = 0u32;
                let add = |hist: &mut HashMap<u32, u32>, distinct: &mut u32, v: u32| {
                    if v != 0 {
                        let c = hist.entry(v).or_insert(0);
                        if *c == 0 {
                            *distinct += 1;
                        }
                        *c += 1;
                    }
                };
                let remove = |hist: &mut HashMap<u32, u32>, distinct: &mut u32, v: u32| {
                    if v != 0 {
                        let c = hist.get_mut(&v).expect("histogram underflow");
                        *c -= 1;
                        if *c == 0 {
                            *distinct -= 1;
                        }
                    }
                };
                for x0 in 0..=(r.min(cols - 1)) {
                    for yy in y0..=y1 {
                        add(&mut hist, &mut distinct, section.get(yy, x0));
                    }
                }
                out.set(y, 0, distinct);
                for x in 1..cols {
                    if let Some(enter) = x.checked_add(r).filter(|&c| c < cols) {
                        for yy in y0..=y1 {
                            add(&mut hist, &mut distinct, section.get(yy, enter));
                        }
                    }
                    if let Some(leave) = x.checked_sub(r + 1) {
                        for yy in y0..=y1 {
                            remove(&mut hist, &mut distinct, section.get(yy, leave));
                        }
                    }
                    out.set(y, x, distinct);
                }
            }
            out
        })
        .collect();
    Ok(Stack::from_sections(dims, sections))
}

/// Evaluate both accounting models over a density map.
///
/// calls_single(p) = n_obj(p) * ceil(1/rho); calls_3c(p) = max(1,
/// ceil(log_l max(n_obj(p), 1))), i.e. the smallest k with l^k >= n_obj.
pub fn call_counts(density: &Stack<u32>, cfg: &CostConfig) -> Result<CostMap> {
    cfg.validate()?;
    let revisit = (1.0 / cfg.rho).ceil() as u64;
    let l = cfg.alphabet_size;

    // log_l is tiny-ranged; precompute thresholds l^1, l^2, ...
    let mut thresholds: Vec<u64> = Vec::new();
    let mut cap = 1u64;
    while cap < u64::MAX / l as u64 {
        cap *= l as u64;
        thresholds.push(cap);
    }
    let log_ceil = |n: u32| -> u32 {
        if n <= 1 {
            return 1;
        }
        (thresholds.iter().position(|&t| t >= n as u64).unwrap() + 1) as u32
    };

    let mut total_single = 0u64;
    let mut total_3c = 0u64;
    let mut max_single = 0u32;
    let mut single_sections = Vec::with_capacity(density.dims().z);
    let mut c3_sections = Vec::with_capacity(density.dims().z);
    for section in density.sections() {
        let mut single = Grid::filled(section.rows(), section.cols(), 0u32);
        let mut c3 = Grid::filled(section.rows(), section.cols(), 0u32);
        for (i, &n_obj) in section.values().iter().enumerate() {
            let s = (n_obj as u64 * revisit).min(u32::MAX as u64) as u32;
            let c = log_ceil(n_obj);
            single.values_mut()[i] = s;
            c3.values_mut()[i] = c;
            total_single += s as u64;
            total_3c += c as u64;
            max_single = max_single.max(s);
        }
        single_sections.push(single);
        c3_sections.push(c3);
    }
    Ok(CostMap {
        calls_single: Stack::from_sections(density.dims(), single_sections),
        calls_3c: Stack::from_sections(density.dims(), c3_sections),
        total_single,
        total_3c,
        ratio: total_single as f64 / total_3c as f64,
        max_single_per_pixel: max_single,
    })
}

/// Evaluate the cost model across revisit ratios; plot-ready.
pub fn ratio_curve(
    density: &Stack<u32>,
    alphabet_size: u8,
    rho_list: &[f64],
) -> Result<Vec<(f64, CostMap)>> {
    rho_list
        .iter()
        .map(|&rho| {
            let cfg = CostConfig {
                fov: 1,
                alphabet_size,
                rho,
            };
            call_counts(density, &cfg).map(|m| (rho, m))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate_stack, GenConfig};
    use crate::volume::Dims;

    fn single_section(values: Vec<u32>, rows: usize, cols: usize) -> LabelStack {
        Stack::from_sections(
            Dims::new(1, rows, cols).unwrap(),
            vec![Grid::from_vec(rows, cols, values)],
        )
    }

    #[test]
    fn single_object_density_is_zero_or_one() {
        let labels = single_section(
            (0..64).map(|i| u32::from((24..40).contains(&i))).collect(),
            8,
            8,
        );
        let density = object_density_map(&labels, 5).unwrap();
        assert!(density.voxels().all(|v| v <= 1));
        assert!(density.voxels().any(|v| v == 1));
    }

    #[test]
    fn checkerboard_density_is_two() {
        let labels = single_section(
            (0..64).map(|i| 1 + ((i / 8 + i % 8) % 2) as u32).collect(),
            8,
            8,
        );
        let density = object_density_map(&labels, 3).unwrap();
        assert!(density.voxels().all(|v| v == 2));
    }

    #[test]
    fn density_matches_brute_force() {
        let gen = GenConfig {
            dims: Dims::new(3, 48, 48).unwrap(),
            n_objects: 6,
            rng_seed: 50,
            ..GenConfig::default()
        };
        let (gt, _) = generate_stack(&gen).unwrap();
        for fov in [1usize, 3, 7, 11] {
            let density = object_density_map(&gt, fov).unwrap();
            let r = fov / 2;
            for z in 0..3 {
                let section = gt.section(z);
                for y in 0..48usize {
                    for x in 0..48usize {
                        let mut distinct = std::collections::HashSet::new();
                        for yy in y.saturating_sub(r)..=(y + r).min(47) {
                            for xx in x.saturating_sub(r)..=(x + r).min(47) {
                                let v = section.get(yy, xx);
                                if v != 0 {
                                    distinct.insert(v);
                                }
                            }
                        }
                        assert_eq!(
                            density.get(z, y, x),
                            distinct.len() as u32,
                            "fov {fov} at ({z},{y},{x})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn unit_density_costs_one_call_each() {
        let density = Stack::filled(Dims::new(1, 4, 4).unwrap(), 1u32);
        let cfg = CostConfig {
            fov: 1,
            alphabet_size: 4,
            rho: 1.0,
        };
        let map = call_counts(&density, &cfg).unwrap();
        assert!(map.calls_single.voxels().all(|v| v == 1));
        assert!(map.calls_3c.voxels().all(|v| v == 1));
        assert_eq!(map.ratio, 1.0);
    }

    #[test]
    fn dense_fov_costs_follow_the_model() {
        // 64 objects per fov at rho = 0.5: single = 128, 3c = 3, ratio 42.67.
        let density = Stack::filled(Dims::new(1, 10, 10).unwrap(), 64u32);
        let cfg = CostConfig {
            fov: 9,
            alphabet_size: 4,
            rho: 0.5,
        };
        let map = call_counts(&density, &cfg).unwrap();
        assert!(map.calls_single.voxels().all(|v| v == 128));
        assert!(map.calls_3c.voxels().all(|v| v == 3));
        assert!((map.ratio - 128.0 / 3.0).abs() < 1e-12);
        assert_eq!(map.max_single_per_pixel, 128);
    }

    #[test]
    fn zero_rho_is_rejected() {
        let density = Stack::filled(Dims::new(1, 2, 2).unwrap(), 1u32);
        let cfg = CostConfig {
            fov: 1,
            alphabet_size: 4,
            rho: 0.0,
        };
        assert!(matches!(call_counts(&density, &cfg), Err(Error::RhoZero)));
    }

    #[test]
    fn ratio_curve_is_non_increasing_in_rho() {
        let gen = GenConfig {
            dims: Dims::new(2, 64, 64).unwrap(),
            n_objects: 8,
            rng_seed: 61,
            ..GenConfig::default()
        };
        let (gt, _) = generate_stack(&gen).unwrap();
        let density = object_density_map(&gt, 9).unwrap();
        let curve = ratio_curve(&density, 4, &[0.1, 0.25, 0.5, 0.75, 1.0]).unwrap();
        for pair in curve.windows(2) {
            assert!(
                pair[1].1.ratio <= pair[0].1.ratio,
                "ratio increased from rho {} to {}",
                pair[0].0,
                pair[1].0
            );
        }
        // rho = 1 point equals sum(n_obj) / total_3c.
        let last = &curve.last().unwrap().1;
        let sum_density: u64 = density.voxels().map(|v| v as u64).sum();
        assert_eq!(last.total_single, sum_density);
    }

    #[test]
    fn log_dominates_linear_at_density_at_least_l() {
        let gen = GenConfig {
            dims: Dims::new(2, 96, 96).unwrap(),
            n_objects: 12,
            rng_seed: 62,
            mean_radius: 5.0,
            ..GenConfig::default()
        };
        let (gt, _) = generate_stack(&gen).unwrap();
        let density = object_density_map(&gt, 33).unwrap();
        let cfg = CostConfig {
            fov: 33,
            alphabet_size: 4,
            rho: 1.0,
        };
        let map = call_counts(&density, &cfg).unwrap();
        for ((n, s), c) in density
            .voxels()
            .zip(map.calls_single.voxels())
            .zip(map.calls_3c.voxels())
        {
            if n >= 4 {
                assert!(c <= s, "n_obj {n}: 3c {c} vs single {s}");
            }
        }
    }

    #[test]
    fn total_3c_calls_bounded_by_global_label_count() {
        let gen = GenConfig {
            dims: Dims::new(2, 64, 64).unwrap(),
            n_objects: 9,
            rng_seed: 63,
            ..GenConfig::default()
        };
        let (gt, _) = generate_stack(&gen).unwrap();
        let n_global = gt.voxels().max().unwrap();
        let density = object_density_map(&gt, 15).unwrap();
        let map = call_counts(
            &density,
            &CostConfig {
                fov: 15,
                alphabet_size: 4,
                rho: 1.0,
            },
        )
        .unwrap();
        let v = gt.dims().voxels();
        let k_global = crate::encoding::min_digits(n_global, 4) as u64;
        assert!(map.total_3c <= v * k_global.max(1));
    }

    #[test]
    fn density_and_costs_are_relabeling_invariant() {
        let gen = GenConfig {
            dims: Dims::new(2, 48, 48).unwrap(),
            n_objects: 5,
            rng_seed: 64,
            ..GenConfig::default()
        };
        let (gt, _) = generate_stack(&gen).unwrap();
        // Permute labels 1..=5 -> 9, 3, 7, 1, 5.
        let perm = [0u32, 9, 3, 7, 1, 5];
        let permuted_sections = gt
            .sections()
            .iter()
            .map(|s| {
                Grid::from_vec(
                    s.rows(),
                    s.cols(),
                    s.values().iter().map(|&v| perm[v as usize]).collect(),
                )
            })
            .collect();
        let permuted = Stack::from_sections(gt.dims(), permuted_sections);
        let a = object_density_map(&gt, 7).unwrap();
        let b = object_density_map(&permuted, 7).unwrap();
        assert_eq!(a, b);
    }
}
