//! Max-min index-variance partitioning of a subcarrier pool across UEs.
//!
//! The worst UE's range CRB is set by the smallest subset variance, so the
//! multi-UE problem is to split `{1..N}` into disjoint subsets of prescribed
//! sizes maximizing the minimum variance. Interleaving is near-optimal; an
//! exhaustive solver serves as ground truth at small sizes.

use itertools::Itertools;
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{IsacError, Result};
use crate::model::index_variance_exact;

pub type Exact = Ratio<i128>;

/// Largest multinomial count `exact_partition` will enumerate.
pub const MAX_PARTITIONS: f64 = 1e7;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionInstance {
    pub pool_size: usize,
    pub n_ues: usize,
    pub counts: Vec<usize>,
}

impl PartitionInstance {
    pub fn new(pool_size: usize, counts: Vec<usize>) -> Result<Self> {
        let inst = Self {
            pool_size,
            n_ues: counts.len(),
            counts,
        };
        inst.validate()?;
        Ok(inst)
    }

    /// `K` UEs with `count` indices each.
    pub fn uniform(pool_size: usize, n_ues: usize, count: usize) -> Result<Self> {
        Self::new(pool_size, vec![count; n_ues])
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_ues == 0 || self.counts.len() != self.n_ues {
            return Err(IsacError::InvalidConfig(format!(
                "{} counts given for {} UEs",
                self.counts.len(),
                self.n_ues
            )));
        }
        if self.counts.contains(&0) {
            return Err(IsacError::InvalidConfig("every UE needs at least one index".into()));
        }
        let total: usize = self.counts.iter().sum();
        if total > self.pool_size {
            return Err(IsacError::Capacity {
                what: "sum of per-UE counts".into(),
                size: total as f64,
                limit: self.pool_size as f64,
            });
        }
        Ok(())
    }

    fn assigned(&self) -> usize {
        self.counts.iter().sum()
    }

    fn equal_counts(&self) -> Option<usize> {
        let first = self.counts[0];
        self.counts.iter().all(|&c| c == first).then_some(first)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSolution {
    pub subsets: Vec<Vec<usize>>,
    pub min_variance: f64,
    /// Certified upper bound on the optimal minimum variance.
    pub bound: f64,
    /// Relative CRB excess of this solution over the bound, `bound / min - 1`.
    pub gap: f64,
}

impl PartitionSolution {
    fn from_subsets(subsets: Vec<Vec<usize>>, bound: &VarianceBound) -> Self {
        let min = min_variance_exact(&subsets);
        let min_variance = to_f64(min);
        let gap = if *min.numer() == 0 {
            f64::INFINITY
        } else {
            to_f64(bound.certified_exact / min - 1)
        };
        Self {
            subsets,
            min_variance,
            bound: bound.certified,
            gap,
        }
    }
}

/// Upper bound on the achievable minimum subset variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceBound {
    /// Variance of the full pool `{1..N}`, `(N^2 - 1) / 12`.
    pub pool_variance: f64,
    /// `N * pool_variance / (K * N_k)` for each UE.
    pub per_ue: Vec<f64>,
    /// `N * pool_variance / sum_k N_k`; valid for any counts.
    pub certified: f64,
    #[serde(skip)]
    pub certified_exact: Exact,
}

pub fn to_f64(r: Exact) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn pool_sum_of_squares(n: usize) -> Exact {
    // sum_{i=1}^{N} (i - mean)^2 = N (N^2 - 1) / 12
    let n = n as i128;
    Ratio::new(n * (n * n - 1), 12)
}

pub fn variance_bound(instance: &PartitionInstance) -> Result<VarianceBound> {
    instance.validate()?;
    let n = instance.pool_size;
    let total = pool_sum_of_squares(n);
    let k = instance.n_ues as i128;
    let per_ue = instance
        .counts
        .iter()
        .map(|&c| to_f64(total / (k * c as i128)))
        .collect();
    let certified_exact = total / instance.assigned() as i128;
    Ok(VarianceBound {
        pool_variance: to_f64(pool_sum_of_squares(n) / n as i128),
        per_ue,
        certified: to_f64(certified_exact),
        certified_exact,
    })
}

fn min_variance_exact(subsets: &[Vec<usize>]) -> Exact {
    subsets
        .iter()
        .map(|s| index_variance_exact(s))
        .min()
        .expect("at least one subset")
}

/// UE `k` takes `{k, k+K, k+2K, ...}`.
pub fn interleaved_partition(instance: &PartitionInstance) -> Result<PartitionSolution> {
    instance.validate()?;
    let count = instance.equal_counts().ok_or_else(|| {
        IsacError::ConstraintViolation("interleaved partition needs equal per-UE counts".into())
    })?;
    let k = instance.n_ues;
    let subsets = (1..=k).map(|u| (0..count).map(|i| u + i * k).collect()).collect();
    Ok(PartitionSolution::from_subsets(subsets, &variance_bound(instance)?))
}

/// Relative CRB gap of interleaving over the bound at full tiling,
/// `(K^2 - 1) / (N^2 - K^2)`.
pub fn crb_gap(n: usize, k: usize) -> Result<Exact> {
    if k == 0 || k > n {
        return Err(IsacError::Domain(format!("need 1 <= K <= N, got K={k}, N={n}")));
    }
    if k == n {
        return Err(IsacError::DegenerateDistribution(
            "K = N leaves one index per UE; every subset variance is zero".into(),
        ));
    }
    let (n, k) = (n as i128, k as i128);
    Ok(Ratio::new(k * k - 1, n * n - k * k))
}

fn multinomial(instance: &PartitionInstance) -> f64 {
    let mut left = instance.pool_size;
    let mut total = 1.0;
    for &c in &instance.counts {
        total *= crate::distribution::binomial(left, c);
        left -= c;
    }
    total
}

/// Calls `visit` on every ordered assignment of disjoint subsets with the
/// instance's counts. No pruning; intended for small exhaustive checks.
pub fn visit_partitions<F: FnMut(&[Vec<usize>])>(instance: &PartitionInstance, mut visit: F) -> Result<u64> {
    instance.validate()?;
    guard(instance)?;
    let mut chosen = Vec::with_capacity(instance.n_ues);
    let mut used = vec![false; instance.pool_size + 1];
    let mut visited = 0;
    walk(instance, &mut chosen, &mut used, &mut |s| {
        visited += 1;
        visit(s);
    });
    Ok(visited)
}

fn guard(instance: &PartitionInstance) -> Result<()> {
    let size = multinomial(instance);
    if size > MAX_PARTITIONS {
        return Err(IsacError::Capacity {
            what: "partition enumeration".into(),
            size,
            limit: MAX_PARTITIONS,
        });
    }
    Ok(())
}

/// Depth-first enumeration in lexicographic order of subset lists.
fn walk<F: FnMut(&[Vec<usize>])>(
    instance: &PartitionInstance,
    chosen: &mut Vec<Vec<usize>>,
    used: &mut [bool],
    leaf: &mut F,
) {
    let depth = chosen.len();
    if depth == instance.n_ues {
        leaf(chosen);
        return;
    }
    let free: Vec<usize> = (1..=instance.pool_size).filter(|&i| !used[i]).collect();
    for subset in free.into_iter().combinations(instance.counts[depth]) {
        for &i in &subset {
            used[i] = true;
        }
        chosen.push(subset);
        walk(instance, chosen, used, leaf);
        let subset = chosen.pop().expect("pushed above");
        for &i in &subset {
            used[i] = false;
        }
    }
}

/// Globally optimal max-min partition by exhaustive search.
///
/// Subsets of equal size are interchangeable, so only orderings with
/// increasing first elements among equal-count neighbours are explored.
/// Branches whose partial minimum cannot beat the incumbent are cut. Ties
/// resolve to the lexicographically smallest subset list.
pub fn exact_partition(instance: &PartitionInstance) -> Result<PartitionSolution> {
    instance.validate()?;
    guard(instance)?;
    let mut best: Option<(Exact, Vec<Vec<usize>>)> = None;
    let mut chosen = Vec::with_capacity(instance.n_ues);
    let mut used = vec![false; instance.pool_size + 1];
    search(instance, &mut chosen, &mut used, None, &mut best);
    let (_, subsets) = best.expect("a feasible instance has at least one partition");
    Ok(PartitionSolution::from_subsets(subsets, &variance_bound(instance)?))
}

fn search(
    instance: &PartitionInstance,
    chosen: &mut Vec<Vec<usize>>,
    used: &mut [bool],
    partial_min: Option<Exact>,
    best: &mut Option<(Exact, Vec<Vec<usize>>)>,
) {
    let depth = chosen.len();
    if depth == instance.n_ues {
        let value = partial_min.expect("n_ues >= 1");
        if best.as_ref().is_none_or(|(b, _)| value > *b) {
            *best = Some((value, chosen.clone()));
        }
        return;
    }
    let min_first = match chosen.last() {
        Some(prev) if instance.counts[depth - 1] == instance.counts[depth] => prev[0] + 1,
        _ => 1,
    };
    let free: Vec<usize> = (min_first..=instance.pool_size).filter(|&i| !used[i]).collect();
    for subset in free.into_iter().combinations(instance.counts[depth]) {
        let v = index_variance_exact(&subset);
        let m = partial_min.map_or(v, |p| p.min(v));
        if let Some((b, _)) = best {
            if m <= *b {
                continue;
            }
        }
        for &i in &subset {
            used[i] = true;
        }
        chosen.push(subset);
        search(instance, chosen, used, Some(m), best);
        let subset = chosen.pop().expect("pushed above");
        for &i in &subset {
            used[i] = false;
        }
    }
}

/// Total, within-subset, and between-subset sums of squares over the union
/// of `subsets`. The first equals the sum of the other two.
pub fn variance_decomposition(subsets: &[Vec<usize>]) -> (f64, f64, f64) {
    let all: Vec<f64> = subsets.iter().flatten().map(|&i| i as f64).collect();
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let total = all.iter().map(|x| (x - mean).powi(2)).sum();
    let mut within = 0.0;
    let mut between = 0.0;
    for s in subsets {
        let m = s.iter().map(|&i| i as f64).sum::<f64>() / s.len() as f64;
        within += s.iter().map(|&i| (i as f64 - m).powi(2)).sum::<f64>();
        between += s.len() as f64 * (m - mean).powi(2);
    }
    (total, within, between)
}

/// Best family of mutually shifted subsets `{S, S + e_2, ..., S + e_K}`
/// tiling `{1..N}` (requires `K | N`), by exhaustive search over base sets
/// and shifts. Returns the common variance and the family sorted by first
/// element, lexicographically smallest among ties.
pub fn best_shift_family(n: usize, k: usize) -> Result<(Exact, Vec<Vec<usize>>)> {
    if k == 0 || !n.is_multiple_of(k) {
        return Err(IsacError::ConstraintViolation(format!("shift families need K | N, got N={n}, K={k}")));
    }
    let m = n / k;
    let size = crate::distribution::binomial(n, m);
    if size > MAX_PARTITIONS {
        return Err(IsacError::Capacity {
            what: "shift-family base sets".into(),
            size,
            limit: MAX_PARTITIONS,
        });
    }
    let mut best: Option<(Exact, Vec<Vec<usize>>)> = None;
    // the family member containing index 1 can serve as the base
    for base in (2..=n).combinations(m - 1) {
        let base: Vec<usize> = std::iter::once(1).chain(base).collect();
        let v = index_variance_exact(&base);
        if best.as_ref().is_some_and(|(b, _)| v <= *b) {
            continue;
        }
        if let Some(family) = tile_by_shifts(&base, n, k) {
            best = Some((v, family));
        }
    }
    best.ok_or_else(|| IsacError::ConstraintViolation("no shift family tiles the pool".into()))
}

fn tile_by_shifts(base: &[usize], n: usize, k: usize) -> Option<Vec<Vec<usize>>> {
    let mut used = vec![false; n + 1];
    for &i in base {
        used[i] = true;
    }
    let mut family = vec![base.to_vec()];
    let span = base[base.len() - 1] - base[0];
    if fill(base, n, k, span, &mut used, &mut family) {
        Some(family)
    } else {
        None
    }
}

fn fill(base: &[usize], n: usize, k: usize, span: usize, used: &mut [bool], family: &mut Vec<Vec<usize>>) -> bool {
    if family.len() == k {
        return true;
    }
    // the smallest uncovered index must be the first element of the next copy
    let first = match (1..=n).find(|&i| !used[i]) {
        Some(f) => f,
        None => return false,
    };
    if first + span > n {
        return false;
    }
    let copy: Vec<usize> = base.iter().map(|&i| i - base[0] + first).collect();
    if copy.iter().any(|&i| used[i]) {
        return false;
    }
    for &i in &copy {
        used[i] = true;
    }
    family.push(copy);
    if fill(base, n, k, span, used, family) {
        return true;
    }
    for &i in &family.pop().expect("pushed above") {
        used[i] = false;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r(n: i128, d: i128) -> Exact {
        Ratio::new(n, d)
    }

    #[test]
    fn bound_reference_values() {
        let b = variance_bound(&PartitionInstance::uniform(48, 3, 16).unwrap()).unwrap();
        assert!((b.pool_variance - (48.0 * 48.0 - 1.0) / 12.0).abs() < 1e-12);
        assert!((b.certified - 191.916_666_666_666_6).abs() < 1e-9);
        assert!(b.per_ue.iter().all(|&x| (x - b.certified).abs() < 1e-12));

        let single = variance_bound(&PartitionInstance::new(10, vec![10]).unwrap()).unwrap();
        assert!((single.certified - 99.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn interleaved_reference_values() {
        let s = interleaved_partition(&PartitionInstance::uniform(48, 3, 16).unwrap()).unwrap();
        assert_eq!(s.subsets[0], (0..16).map(|i| 1 + 3 * i).collect::<Vec<_>>());
        assert_eq!(s.subsets[2], (0..16).map(|i| 3 + 3 * i).collect::<Vec<_>>());
        assert_eq!(s.min_variance, 191.25);
        assert!(s.min_variance <= s.bound);
        assert!((s.gap - 8.0 / 2295.0).abs() < 1e-15);

        let s = interleaved_partition(&PartitionInstance::uniform(6, 2, 3).unwrap()).unwrap();
        assert_eq!(s.subsets, vec![vec![1, 3, 5], vec![2, 4, 6]]);
        assert!((s.min_variance - 8.0 / 3.0).abs() < 1e-12);

        let s = interleaved_partition(&PartitionInstance::uniform(4, 4, 1).unwrap()).unwrap();
        assert_eq!(s.min_variance, 0.0);
        assert!(s.gap.is_infinite());
    }

    #[test]
    fn interleaved_needs_equal_counts() {
        let inst = PartitionInstance::new(10, vec![3, 4]).unwrap();
        assert!(matches!(interleaved_partition(&inst), Err(IsacError::ConstraintViolation(_))));
    }

    #[test]
    fn gap_reference_values() {
        assert_eq!(crb_gap(48, 3).unwrap(), r(8, 2295));
        assert_eq!(crb_gap(1024, 20).unwrap(), r(399, 1_048_176));
        assert!((to_f64(crb_gap(1024, 20).unwrap()) - 3.806e-4).abs() < 1e-7);
        assert_eq!(crb_gap(17, 1).unwrap(), r(0, 1));
        assert!(matches!(crb_gap(3, 4), Err(IsacError::Domain(_))));
        assert!(crb_gap(5, 5).is_err());
    }

    #[test]
    fn gap_matches_variance_ratio_exactly() {
        for (n, k) in [(48, 3), (12, 4), (1024, 32), (30, 5)] {
            let inst = PartitionInstance::uniform(n, k, n / k).unwrap();
            let bound = variance_bound(&inst).unwrap().certified_exact;
            let sol = interleaved_partition(&inst).unwrap();
            let achieved = min_variance_exact(&sol.subsets);
            assert_eq!(bound / achieved - 1, crb_gap(n, k).unwrap());
        }
    }

    #[test]
    fn exact_small_instances() {
        let s = exact_partition(&PartitionInstance::uniform(4, 2, 2).unwrap()).unwrap();
        assert_eq!(s.subsets, vec![vec![1, 3], vec![2, 4]]);
        assert_eq!(s.min_variance, 1.0);

        let s = exact_partition(&PartitionInstance::uniform(6, 2, 3).unwrap()).unwrap();
        assert!(s.min_variance >= 8.0 / 3.0 - 1e-12);
        assert!(s.min_variance <= s.bound);
    }

    #[test]
    fn exact_can_beat_interleaving() {
        // {1,5,7} and {2,6,8} have variance 56/9, {3,4,9} has 62/9,
        // while every interleaved subset has variance 6
        let inst = PartitionInstance::uniform(9, 3, 3).unwrap();
        let s = exact_partition(&inst).unwrap();
        assert_eq!(s.subsets, vec![vec![1, 5, 7], vec![2, 6, 8], vec![3, 4, 9]]);
        assert_eq!(index_variance_exact(&s.subsets[0]), Ratio::new(56, 9));
        assert_eq!(interleaved_partition(&inst).unwrap().min_variance, 6.0);
    }

    #[test]
    fn exact_matches_unpruned_enumeration() {
        for inst in [
            PartitionInstance::uniform(8, 2, 4).unwrap(),
            PartitionInstance::uniform(9, 3, 3).unwrap(),
            PartitionInstance::new(9, vec![2, 4]).unwrap(),
            PartitionInstance::new(10, vec![3, 3, 2]).unwrap(),
        ] {
            let mut best: Option<(Exact, Vec<Vec<usize>>)> = None;
            visit_partitions(&inst, |s| {
                let v = min_variance_exact(s);
                if best.as_ref().is_none_or(|(b, _)| v > *b) {
                    best = Some((v, s.to_vec()));
                }
            })
            .unwrap();
            let (v, subsets) = best.unwrap();
            let sol = exact_partition(&inst).unwrap();
            assert_eq!(min_variance_exact(&sol.subsets), v);
            assert_eq!(sol.subsets, subsets, "tie-break differs for {inst:?}");
        }
    }

    #[test]
    fn enumeration_counts() {
        let inst = PartitionInstance::uniform(9, 3, 3).unwrap();
        assert_eq!(visit_partitions(&inst, |_| {}).unwrap(), 1680);
        let inst = PartitionInstance::uniform(4, 2, 2).unwrap();
        assert_eq!(visit_partitions(&inst, |_| {}).unwrap(), 6);
    }

    #[test]
    fn unequal_counts_bound_is_certified() {
        // per-UE bounds can undercut the optimum when counts differ
        let inst = PartitionInstance::new(10, vec![2, 8]).unwrap();
        let sol = exact_partition(&inst).unwrap();
        let b = variance_bound(&inst).unwrap();
        assert!(sol.min_variance <= b.certified);
        assert!(b.per_ue.iter().cloned().fold(f64::INFINITY, f64::min) < sol.min_variance);
    }

    #[test]
    fn enumeration_guard() {
        let inst = PartitionInstance::uniform(48, 3, 16).unwrap();
        assert!(matches!(exact_partition(&inst), Err(IsacError::Capacity { .. })));
    }

    #[test]
    fn instance_validation() {
        assert!(PartitionInstance::new(5, vec![3, 3]).is_err());
        assert!(PartitionInstance::new(5, vec![]).is_err());
        assert!(PartitionInstance::new(5, vec![0, 2]).is_err());
    }

    #[test]
    fn interleaved_wins_among_shift_families() {
        for (n, k) in [(8, 2), (12, 2), (12, 3), (12, 4), (15, 3), (16, 4)] {
            let (v, family) = best_shift_family(n, k).unwrap();
            let inter = interleaved_partition(&PartitionInstance::uniform(n, k, n / k).unwrap()).unwrap();
            assert_eq!(v, min_variance_exact(&inter.subsets), "N={n} K={k}");
            assert_eq!(family, inter.subsets);
        }
    }

    proptest! {
        #[test]
        fn decomposition_identity(perm in Just((1..=20usize).collect::<Vec<_>>()).prop_shuffle(), cuts in proptest::collection::vec(1..5usize, 1..6)) {
            let mut subsets = Vec::new();
            let mut at = 0;
            for c in cuts {
                if at + c > perm.len() { break; }
                subsets.push(perm[at..at + c].to_vec());
                at += c;
            }
            prop_assume!(!subsets.is_empty());
            let (total, within, between) = variance_decomposition(&subsets);
            prop_assert!((total - within - between).abs() < 1e-9);
        }

        #[test]
        fn exact_never_exceeds_bound(n in 4..10usize, k in 2..4usize) {
            let count = n / k;
            prop_assume!(count >= 1);
            let inst = PartitionInstance::uniform(n, k, count).unwrap();
            let sol = exact_partition(&inst).unwrap();
            let inter = interleaved_partition(&inst).unwrap();
            prop_assert!(sol.min_variance <= sol.bound + 1e-12);
            prop_assert!(sol.min_variance >= inter.min_variance - 1e-12);
        }
    }
}
