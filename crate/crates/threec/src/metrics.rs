//! Segmentation quality metrics: adapted Rand error and variation of
//! information with split/merge decomposition, both computed from a sparse
//! contingency table.
//!
//! Conventions: ground-truth label 0 is excluded entirely when
//! `ignore_background` is set (the default evaluation mode). Predicted label
//! 0 voxels count as their own singleton-style rows, so unassigned voxels
//! cost recall without manufacturing merges. Logarithms are base 2.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::volume::LabelStack;

/// Sparse co-occurrence counts between predicted and ground-truth labels.
#[derive(Debug, Clone)]
pub struct ContingencyTable {
    /// n_ij for predicted label i > 0 and gt label j.
    counts: HashMap<(u32, u32), u64>,
    /// Voxels with predicted label 0, per gt label: each is its own
    /// singleton row.
    singletons_by_gt: HashMap<u32, u64>,
    row_sums: HashMap<u32, u64>,
    col_sums: HashMap<u32, u64>,
    total: u64,
    pub ignore_background: bool,
}

impl ContingencyTable {
    pub fn total(&self) -> u64 {
        self.total
    }

    /// Count for a (pred, gt) cell with pred > 0.
    pub fn cell(&self, pred: u32, gt: u32) -> u64 {
        self.counts.get(&(pred, gt)).copied().unwrap_or(0)
    }

    pub fn singletons(&self) -> u64 {
        self.singletons_by_gt.values().sum()
    }
}

/// Tally voxel label co-occurrences of two same-shaped stacks.
pub fn contingency(
    pred: &LabelStack,
    gt: &LabelStack,
    ignore_background: bool,
) -> Result<ContingencyTable> {
    if pred.dims() != gt.dims() {
        return Err(Error::ShapeMismatch(format!(
            "pred dims {:?} vs gt dims {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    let mut counts: HashMap<(u32, u32), u64> = HashMap::new();
    let mut singletons_by_gt: HashMap<u32, u64> = HashMap::new();
    let mut row_sums: HashMap<u32, u64> = HashMap::new();
    let mut col_sums: HashMap<u32, u64> = HashMap::new();
    let mut total = 0u64;
    for (p, g) in pred.voxels().zip(gt.voxels()) {
        if ignore_background && g == 0 {
            continue;
        }
        total += 1;
        *col_sums.entry(g).or_default() += 1;
        if p == 0 {
            *singletons_by_gt.entry(g).or_default() += 1;
        } else {
            *counts.entry((p, g)).or_default() += 1;
            *row_sums.entry(p).or_default() += 1;
        }
    }
    Ok(ContingencyTable {
        counts,
        singletons_by_gt,
        row_sums,
        col_sums,
        total,
        ignore_background,
    })
}

/// Adapted Rand error with its pairwise precision and recall.
///
/// precision = sum n_ij^2 / sum s_i^2, recall = sum n_ij^2 / sum t_j^2,
/// error = 1 - F-score; singleton rows contribute 1 to both squared sums.
pub fn adapted_rand_error(t: &ContingencyTable) -> Result<(f64, f64, f64)> {
    if t.total == 0 {
        return Err(Error::EmptyTable);
    }
    let singletons: u64 = t.singletons();
    let sum_n2: f64 = t.counts.values().map(|&n| (n as f64) * (n as f64)).sum::<f64>()
        + singletons as f64;
    let sum_s2: f64 = t.row_sums.values().map(|&s| (s as f64) * (s as f64)).sum::<f64>()
        + singletons as f64;
    let sum_t2: f64 = t
        .col_sums
        .values()
        .map(|&s| (s as f64) * (s as f64))
        .sum::<f64>();
    let precision = sum_n2 / sum_s2;
    let recall = sum_n2 / sum_t2;
    let error = 1.0 - 2.0 * precision * recall / (precision + recall);
    Ok((error, precision, recall))
}

/// Variation of information: (vi, vi_split, vi_merge), in bits.
///
/// vi_split = H(pred | gt) penalizes over-segmentation; vi_merge =
/// H(gt | pred) penalizes under-segmentation; vi is their sum.
pub fn variation_of_information(t: &ContingencyTable) -> Result<(f64, f64, f64)> {
    if t.total == 0 {
        return Err(Error::EmptyTable);
    }
    let v = t.total as f64;
    let mut vi_split = 0.0;
    let mut vi_merge = 0.0;
    for (&(i, j), &n) in &t.counts {
        let p = n as f64 / v;
        let q = t.col_sums[&j] as f64 / v;
        let r = t.row_sums[&i] as f64 / v;
        vi_split -= p * (p / q).log2();
        vi_merge -= p * (p / r).log2();
    }
    // A singleton row has p = r = 1/V: zero merge cost, split cost log2(t_j)/V
    // per voxel.
    for (&j, &m) in &t.singletons_by_gt {
        let t_j = t.col_sums[&j] as f64;
        vi_split += m as f64 / v * t_j.log2();
    }
    let vi_split = vi_split.max(0.0);
    let vi_merge = vi_merge.max(0.0);
    Ok((vi_split + vi_merge, vi_split, vi_merge))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Dims, Grid, Stack};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stack_1d(values: Vec<u32>) -> LabelStack {
        let n = values.len();
        Stack::from_sections(Dims::new(1, 1, n).unwrap(), vec![Grid::from_vec(1, n, values)])
    }

    /// Brute-force pairwise oracle over ordered voxel pairs (self-pairs
    /// included). Pred 0 voxels match only themselves.
    fn rand_oracle(pred: &[u32], gt: &[u32], ignore_bg: bool) -> (f64, f64, f64) {
        let voxels: Vec<(u32, u32)> = pred
            .iter()
            .zip(gt)
            .filter(|(_, &g)| !(ignore_bg && g == 0))
            .map(|(&p, &g)| (p, g))
            .collect();
        let n = voxels.len();
        let mut both = 0u64;
        let mut same_pred = 0u64;
        let mut same_gt = 0u64;
        for u in 0..n {
            for v in 0..n {
                let sp = u == v || (voxels[u].0 == voxels[v].0 && voxels[u].0 != 0);
                let sg = voxels[u].1 == voxels[v].1;
                if sp {
                    same_pred += 1;
                }
                if sg {
                    same_gt += 1;
                }
                if sp && sg {
                    both += 1;
                }
            }
        }
        let precision = both as f64 / same_pred as f64;
        let recall = both as f64 / same_gt as f64;
        (
            1.0 - 2.0 * precision * recall / (precision + recall),
            precision,
            recall,
        )
    }

    /// Direct entropy oracle: pred 0 voxels become unique fresh labels.
    fn vi_oracle(pred: &[u32], gt: &[u32], ignore_bg: bool) -> (f64, f64, f64) {
        let mut next_fresh = -1i64;
        let voxels: Vec<(i64, u32)> = pred
            .iter()
            .zip(gt)
            .filter(|(_, &g)| !(ignore_bg && g == 0))
            .map(|(&p, &g)| {
                if p == 0 {
                    let id = next_fresh;
                    next_fresh -= 1;
                    (id, g)
                } else {
                    (p as i64, g)
                }
            })
            .collect();
        let v = voxels.len() as f64;
        let entropy = |counts: HashMap<i64, u64>| -> f64 {
            counts
                .values()
                .map(|&c| {
                    let p = c as f64 / v;
                    -p * p.log2()
                })
                .sum()
        };
        let mut joint: HashMap<(i64, u32), u64> = HashMap::new();
        let mut pm: HashMap<i64, u64> = HashMap::new();
        let mut gm: HashMap<i64, u64> = HashMap::new();
        for &(p, g) in &voxels {
            *joint.entry((p, g)).or_default() += 1;
            *pm.entry(p).or_default() += 1;
            *gm.entry(g as i64).or_default() += 1;
        }
        let entropy_joint = |counts: HashMap<(i64, u32), u64>| -> f64 {
            counts
                .values()
                .map(|&c| {
                    let p = c as f64 / v;
                    -p * p.log2()
                })
                .sum()
        };
        let h_joint = entropy_joint(joint);
        let h_pred = entropy(pm);
        let h_gt = entropy(gm);
        let vi_split = h_joint - h_gt;
        let vi_merge = h_joint - h_pred;
        (vi_split + vi_merge, vi_split, vi_merge)
    }

    #[test]
    fn identical_labelings_have_diagonal_table_and_zero_error() {
        let s = stack_1d(vec![1, 1, 2, 2, 3, 3]);
        let t = contingency(&s, &s, true).unwrap();
        assert_eq!(t.total(), 6);
        for label in 1..=3 {
            assert_eq!(t.cell(label, label), 2);
        }
        let (error, precision, recall) = adapted_rand_error(&t).unwrap();
        assert_eq!((error, precision, recall), (0.0, 1.0, 1.0));
        let (vi, s_, m_) = variation_of_information(&t).unwrap();
        assert_eq!((vi, s_, m_), (0.0, 0.0, 0.0));
    }

    #[test]
    fn one_row_against_two_halves() {
        let pred = stack_1d(vec![5; 8]);
        let gt = stack_1d(vec![1, 1, 1, 1, 2, 2, 2, 2]);
        let t = contingency(&pred, &gt, true).unwrap();
        assert_eq!(t.cell(5, 1), 4);
        assert_eq!(t.cell(5, 2), 4);
        let (_, precision, recall) = adapted_rand_error(&t).unwrap();
        assert_eq!(precision, 0.5);
        assert_eq!(recall, 1.0);
    }

    #[test]
    fn split_into_halves_costs_a_third() {
        // Two gt objects of 8 voxels, each split into two pred halves:
        // precision 1, recall 0.5, error 1 - 2/3 = 1/3.
        let gt = stack_1d(vec![1, 1, 1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2, 2, 2]);
        let pred = stack_1d(vec![1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3, 4, 4, 4, 4]);
        let t = contingency(&pred, &gt, true).unwrap();
        let (error, precision, recall) = adapted_rand_error(&t).unwrap();
        assert!((precision - 1.0).abs() < 1e-15);
        assert!((recall - 0.5).abs() < 1e-15);
        assert!((error - 1.0 / 3.0).abs() < 1e-15);

        // Cross-check against the pairwise oracle.
        let p: Vec<u32> = pred.voxels().collect();
        let g: Vec<u32> = gt.voxels().collect();
        let (oe, op, or) = rand_oracle(&p, &g, true);
        assert!((error - oe).abs() < 1e-12);
        assert!((precision - op).abs() < 1e-12);
        assert!((recall - or).abs() < 1e-12);
    }

    #[test]
    fn merging_two_equal_objects_costs_one_merge_bit() {
        let gt = stack_1d(vec![1, 1, 2, 2]);
        let pred = stack_1d(vec![7, 7, 7, 7]);
        let t = contingency(&pred, &gt, true).unwrap();
        let (vi, vi_split, vi_merge) = variation_of_information(&t).unwrap();
        assert!(vi_split.abs() < 1e-15);
        assert!((vi_merge - 1.0).abs() < 1e-15);
        assert!((vi - 1.0).abs() < 1e-15);
    }

    #[test]
    fn splitting_one_object_costs_one_split_bit() {
        let gt = stack_1d(vec![1, 1, 1, 1]);
        let pred = stack_1d(vec![3, 3, 8, 8]);
        let t = contingency(&pred, &gt, true).unwrap();
        let (vi, vi_split, vi_merge) = variation_of_information(&t).unwrap();
        assert!((vi_split - 1.0).abs() < 1e-15);
        assert!(vi_merge.abs() < 1e-15);
        assert!((vi - 1.0).abs() < 1e-15);
    }

    #[test]
    fn random_tables_match_brute_force_tally() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let pred_v: Vec<u32> = (0..100).map(|_| rng.gen_range(0..6)).collect();
            let gt_v: Vec<u32> = (0..100).map(|_| rng.gen_range(0..5)).collect();
            let t = contingency(&stack_1d(pred_v.clone()), &stack_1d(gt_v.clone()), true).unwrap();
            let mut expect: HashMap<(u32, u32), u64> = HashMap::new();
            let mut total = 0;
            for (&p, &g) in pred_v.iter().zip(&gt_v) {
                if g == 0 {
                    continue;
                }
                total += 1;
                if p != 0 {
                    *expect.entry((p, g)).or_default() += 1;
                }
            }
            assert_eq!(t.total(), total);
            for ((p, g), n) in expect {
                assert_eq!(t.cell(p, g), n);
            }
        }
    }

    #[test]
    fn metrics_agree_with_independent_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..30 {
            let n = rng.gen_range(5..120usize);
            let pred_v: Vec<u32> = (0..n).map(|_| rng.gen_range(0..8)).collect();
            let gt_v: Vec<u32> = (0..n).map(|_| rng.gen_range(0..6)).collect();
            let ignore = trial % 2 == 0;
            if pred_v
                .iter()
                .zip(&gt_v)
                .all(|(_, &g)| ignore && g == 0)
            {
                continue;
            }
            let t = contingency(&stack_1d(pred_v.clone()), &stack_1d(gt_v.clone()), ignore).unwrap();
            let (e, p, r) = adapted_rand_error(&t).unwrap();
            let (oe, op, or) = rand_oracle(&pred_v, &gt_v, ignore);
            assert!((e - oe).abs() <= 1e-12, "rand error {e} vs oracle {oe}");
            assert!((p - op).abs() <= 1e-12);
            assert!((r - or).abs() <= 1e-12);
            let (vi, vs, vm) = variation_of_information(&t).unwrap();
            let (ovi, ovs, ovm) = vi_oracle(&pred_v, &gt_v, ignore);
            assert!((vi - ovi).abs() <= 1e-12, "vi {vi} vs oracle {ovi}");
            assert!((vs - ovs).abs() <= 1e-12);
            assert!((vm - ovm).abs() <= 1e-12);
        }
    }

    #[test]
    fn metrics_are_relabeling_invariant() {
        let gt = stack_1d(vec![1, 1, 2, 2, 3, 3, 0, 1]);
        let pred_a = stack_1d(vec![4, 4, 4, 9, 9, 2, 2, 4]);
        // Permute pred labels 4->1, 9->5, 2->8 and gt labels 1->3, 2->1, 3->2.
        let pred_b = stack_1d(vec![1, 1, 1, 5, 5, 8, 8, 1]);
        let gt_b = stack_1d(vec![3, 3, 1, 1, 2, 2, 0, 3]);
        let ta = contingency(&pred_a, &gt, true).unwrap();
        let tb = contingency(&pred_b, &gt_b, true).unwrap();
        let ra = adapted_rand_error(&ta).unwrap();
        let rb = adapted_rand_error(&tb).unwrap();
        assert!((ra.0 - rb.0).abs() < 1e-15);
        let va = variation_of_information(&ta).unwrap();
        let vb = variation_of_information(&tb).unwrap();
        assert!((va.0 - vb.0).abs() < 1e-15);
        assert!((va.1 - vb.1).abs() < 1e-15);
    }

    #[test]
    fn swapping_arguments_swaps_the_decompositions() {
        // On zero-free labelings the table transposes cleanly.
        let a = stack_1d(vec![1, 1, 2, 2, 3, 3, 3, 1]);
        let b = stack_1d(vec![4, 4, 4, 2, 2, 2, 9, 9]);
        let t_ab = contingency(&a, &b, false).unwrap();
        let t_ba = contingency(&b, &a, false).unwrap();
        let (e_ab, p_ab, r_ab) = adapted_rand_error(&t_ab).unwrap();
        let (e_ba, p_ba, r_ba) = adapted_rand_error(&t_ba).unwrap();
        assert!((e_ab - e_ba).abs() < 1e-15);
        assert!((p_ab - r_ba).abs() < 1e-15);
        assert!((r_ab - p_ba).abs() < 1e-15);
        let (vi_ab, s_ab, m_ab) = variation_of_information(&t_ab).unwrap();
        let (vi_ba, s_ba, m_ba) = variation_of_information(&t_ba).unwrap();
        assert!((vi_ab - vi_ba).abs() < 1e-15);
        assert!((s_ab - m_ba).abs() < 1e-15);
        assert!((m_ab - s_ba).abs() < 1e-15);
    }

    #[test]
    fn empty_table_is_rejected() {
        let pred = stack_1d(vec![1, 2, 3]);
        let gt = stack_1d(vec![0, 0, 0]);
        let t = contingency(&pred, &gt, true).unwrap();
        assert!(matches!(adapted_rand_error(&t), Err(Error::EmptyTable)));
        assert!(matches!(
            variation_of_information(&t),
            Err(Error::EmptyTable)
        ));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = stack_1d(vec![1, 2]);
        let b = stack_1d(vec![1, 2, 3]);
        assert!(matches!(
            contingency(&a, &b, true),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
