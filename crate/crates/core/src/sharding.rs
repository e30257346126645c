//! Shard registry, progress tracking, and work assignment.
//!
//! The corpus is split into fixed-size shards; a progress vector records how
//! many rows of each shard have been consumed. At round start, incomplete
//! shards are sorted by descending progress (ties by ascending index) and
//! dealt round-robin to the active sites. Reported progress merges back via
//! elementwise max, so a site that never reports leaves the vector
//! untouched.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ShardError {
    #[error("shard table must have at least one shard")]
    NoShards,
    #[error("shard {shard} has invalid size {size}")]
    InvalidSize { shard: usize, size: u64 },
    #[error("no active sites to assign to")]
    NoActiveSites,
    #[error("site {site} has invalid weight {weight}")]
    InvalidWeight { site: String, weight: u32 },
    #[error("shard index {0} out of range")]
    InvalidShard(usize),
    #[error("reported progress {reported} exceeds shard {shard} size {size}")]
    ProgressOverflow { shard: usize, reported: u64, size: u64 },
    #[error("rank {rank} out of range for {num_ranks} ranks")]
    InvalidRank { rank: u64, num_ranks: u64 },
    #[error("inverted row range [{start}, {end})")]
    InvertedRange { start: u64, end: u64 },
}

/// Shard sizes plus the progress vector (rows consumed per shard).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardTable {
    sizes: Vec<u64>,
    progress: Vec<u64>,
}

/// One site's share of the remaining work: shard indices paired with the
/// row to resume from (the progress value at assignment time).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardAssignment {
    pub site_id: String,
    pub entries: Vec<AssignedShard>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignedShard {
    pub shard: usize,
    pub start_row: u64,
}

impl ShardTable {
    pub fn new(sizes: Vec<u64>) -> Result<Self, ShardError> {
        if sizes.is_empty() {
            return Err(ShardError::NoShards);
        }
        for (shard, &size) in sizes.iter().enumerate() {
            if size == 0 {
                return Err(ShardError::InvalidSize { shard, size });
            }
        }
        let progress = vec![0; sizes.len()];
        Ok(Self { sizes, progress })
    }

    pub fn uniform(count: usize, size: u64) -> Result<Self, ShardError> {
        Self::new(vec![size; count])
    }

    pub fn num_shards(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[u64] {
        &self.sizes
    }

    pub fn progress(&self) -> &[u64] {
        &self.progress
    }

    pub fn size_of(&self, shard: usize) -> Result<u64, ShardError> {
        self.sizes.get(shard).copied().ok_or(ShardError::InvalidShard(shard))
    }

    /// Total rows still unconsumed; zero means the run is complete.
    pub fn remaining_rows(&self) -> u64 {
        self.sizes
            .iter()
            .zip(&self.progress)
            .map(|(size, done)| size - done)
            .sum()
    }

    pub fn is_complete(&self) -> bool {
        self.remaining_rows() == 0
    }

    pub fn total_progress(&self) -> u64 {
        self.progress.iter().sum()
    }

    /// Merges reported per-shard row counts by elementwise max. Validates
    /// every entry before touching the vector, so a failed merge leaves the
    /// table unchanged.
    pub fn merge_progress(&mut self, reported: &BTreeMap<usize, u64>) -> Result<(), ShardError> {
        for (&shard, &count) in reported {
            let size = self.size_of(shard)?;
            if count > size {
                return Err(ShardError::ProgressOverflow { shard, reported: count, size });
            }
        }
        for (&shard, &count) in reported {
            if count > self.progress[shard] {
                self.progress[shard] = count;
            }
        }
        Ok(())
    }
}

/// Deals incomplete shards to sites round-robin, in the given site order,
/// after sorting by descending progress (ties by ascending shard index).
/// Complete shards are excluded; an all-complete table yields an empty map.
pub fn assign_shards(
    table: &ShardTable,
    sites: &[String],
) -> Result<BTreeMap<String, ShardAssignment>, ShardError> {
    let weighted: Vec<(String, u32)> = sites.iter().map(|s| (s.clone(), 1)).collect();
    assign_shards_weighted(table, &weighted)
}

/// Like [`assign_shards`], but a site with weight `w` appears `w` times in
/// the deal cycle and so receives proportionally more shards.
pub fn assign_shards_weighted(
    table: &ShardTable,
    sites: &[(String, u32)],
) -> Result<BTreeMap<String, ShardAssignment>, ShardError> {
    if sites.is_empty() {
        return Err(ShardError::NoActiveSites);
    }
    for (site, weight) in sites {
        if *weight == 0 {
            return Err(ShardError::InvalidWeight { site: site.clone(), weight: *weight });
        }
    }

    let mut incomplete: Vec<(usize, u64)> = table
        .sizes
        .iter()
        .zip(&table.progress)
        .enumerate()
        .filter(|(_, (size, done))| done < size)
        .map(|(shard, (_, done))| (shard, *done))
        .collect();
    incomplete.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut out: BTreeMap<String, ShardAssignment> = BTreeMap::new();
    if incomplete.is_empty() {
        return Ok(out);
    }

    let deal_cycle: Vec<&str> = sites
        .iter()
        .flat_map(|(site, weight)| std::iter::repeat_n(site.as_str(), *weight as usize))
        .collect();
    for (slot, (shard, start_row)) in incomplete.into_iter().enumerate() {
        let site = deal_cycle[slot % deal_cycle.len()];
        out.entry(site.to_string())
            .or_insert_with(|| ShardAssignment { site_id: site.to_string(), entries: Vec::new() })
            .entries
            .push(AssignedShard { shard, start_row });
    }
    Ok(out)
}

/// Rows `r` in `[start_row, end_row)` with `(r - start_row) % num_ranks == rank`.
pub fn stride_partition(
    start_row: u64,
    end_row: u64,
    num_ranks: u64,
    rank: u64,
) -> Result<Vec<u64>, ShardError> {
    if end_row < start_row {
        return Err(ShardError::InvertedRange { start: start_row, end: end_row });
    }
    if num_ranks == 0 || rank >= num_ranks {
        return Err(ShardError::InvalidRank { rank, num_ranks });
    }
    Ok((start_row + rank..end_row).step_by(num_ranks as usize).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(sizes: &[u64], progress: &[u64]) -> ShardTable {
        let mut t = ShardTable::new(sizes.to_vec()).unwrap();
        let reported: BTreeMap<usize, u64> =
            progress.iter().enumerate().map(|(i, &p)| (i, p)).collect();
        t.merge_progress(&reported).unwrap();
        t
    }

    #[test]
    fn assignment_sorts_by_descending_progress_and_deals_round_robin() {
        let t = table(&[100, 100, 100, 100], &[100, 5, 0, 3]);
        let sites = vec!["A".to_string(), "B".to_string()];
        let got = assign_shards(&t, &sites).unwrap();
        assert_eq!(
            got["A"].entries,
            vec![
                AssignedShard { shard: 1, start_row: 5 },
                AssignedShard { shard: 2, start_row: 0 }
            ]
        );
        assert_eq!(got["B"].entries, vec![AssignedShard { shard: 3, start_row: 3 }]);
    }

    #[test]
    fn single_site_gets_everything() {
        let t = table(&[10, 10], &[0, 0]);
        let got = assign_shards(&t, &["A".to_string()]).unwrap();
        assert_eq!(
            got["A"].entries,
            vec![
                AssignedShard { shard: 0, start_row: 0 },
                AssignedShard { shard: 1, start_row: 0 }
            ]
        );
    }

    #[test]
    fn complete_table_yields_empty_map() {
        let t = table(&[10, 10], &[10, 10]);
        let got = assign_shards(&t, &["A".to_string()]).unwrap();
        assert!(got.is_empty());
    }

    #[test]
    fn empty_site_list_is_an_error() {
        let t = table(&[10], &[0]);
        assert!(matches!(assign_shards(&t, &[]), Err(ShardError::NoActiveSites)));
    }

    #[test]
    fn weighted_site_receives_proportionally_more() {
        let t = table(&[10; 6], &[0; 6]);
        let sites = vec![("A".to_string(), 2), ("B".to_string(), 1)];
        let got = assign_shards_weighted(&t, &sites).unwrap();
        assert_eq!(got["A"].entries.len(), 4);
        assert_eq!(got["B"].entries.len(), 2);
    }

    #[test]
    fn round_robin_counts_differ_by_at_most_one() {
        for shards in 1..20usize {
            let t = table(&vec![10; shards], &vec![0; shards]);
            let sites: Vec<String> = (0..3).map(|i| format!("s{i}")).collect();
            let got = assign_shards(&t, &sites).unwrap();
            let counts: Vec<usize> = sites
                .iter()
                .map(|s| got.get(s).map_or(0, |a| a.entries.len()))
                .collect();
            let max = counts.iter().max().unwrap();
            let min = counts.iter().min().unwrap();
            assert!(max - min <= 1, "shards={shards} counts={counts:?}");
            assert_eq!(counts.iter().sum::<usize>(), shards);
        }
    }

    #[test]
    fn assignment_is_a_partition_of_incomplete_work() {
        let t = table(&[10, 20, 30, 40, 50], &[10, 3, 0, 40, 12]);
        let sites: Vec<String> = vec!["x".into(), "y".into(), "z".into()];
        let got = assign_shards(&t, &sites).unwrap();
        let mut seen = BTreeMap::new();
        for a in got.values() {
            for e in &a.entries {
                assert!(seen.insert(e.shard, e.start_row).is_none(), "shard dealt twice");
                assert_eq!(e.start_row, t.progress()[e.shard]);
            }
        }
        let expected: Vec<usize> = (0..5).filter(|&j| t.progress()[j] < t.sizes()[j]).collect();
        assert_eq!(seen.keys().copied().collect::<Vec<_>>(), expected);
    }

    #[test]
    fn merge_takes_elementwise_max() {
        let mut t = table(&[10, 10], &[5, 0]);
        let reported = BTreeMap::from([(0, 3), (1, 7)]);
        t.merge_progress(&reported).unwrap();
        assert_eq!(t.progress(), &[5, 7]);
    }

    #[test]
    fn empty_merge_is_a_noop() {
        let mut t = table(&[10, 10], &[5, 0]);
        t.merge_progress(&BTreeMap::new()).unwrap();
        assert_eq!(t.progress(), &[5, 0]);
    }

    #[test]
    fn merge_is_idempotent() {
        let mut t = table(&[5], &[5]);
        t.merge_progress(&BTreeMap::from([(0, 5)])).unwrap();
        assert_eq!(t.progress(), &[5]);
    }

    #[test]
    fn merge_rejects_overflow_and_leaves_table_unchanged() {
        let mut t = table(&[10, 10], &[5, 0]);
        let reported = BTreeMap::from([(0, 9), (1, 11)]);
        assert!(matches!(
            t.merge_progress(&reported),
            Err(ShardError::ProgressOverflow { shard: 1, .. })
        ));
        assert_eq!(t.progress(), &[5, 0]);
    }

    #[test]
    fn merge_rejects_invalid_index() {
        let mut t = table(&[10], &[0]);
        assert!(matches!(
            t.merge_progress(&BTreeMap::from([(3, 1)])),
            Err(ShardError::InvalidShard(3))
        ));
    }

    #[test]
    fn remaining_rows_arithmetic() {
        assert_eq!(table(&[10, 10], &[10, 10]).remaining_rows(), 0);
        assert_eq!(table(&[10, 10], &[4, 0]).remaining_rows(), 16);
        assert_eq!(table(&[100], &[99]).remaining_rows(), 1);
    }

    #[test]
    fn stride_partition_examples() {
        assert_eq!(stride_partition(0, 8, 4, 1).unwrap(), vec![1, 5]);
        assert_eq!(stride_partition(0, 8, 1, 0).unwrap(), (0..8).collect::<Vec<_>>());
        assert!(stride_partition(3, 3, 4, 2).unwrap().is_empty());
        assert!(matches!(
            stride_partition(0, 8, 4, 4),
            Err(ShardError::InvalidRank { rank: 4, num_ranks: 4 })
        ));
    }

    #[test]
    fn stride_partitions_cover_range_exactly_once() {
        for num_ranks in 1..6 {
            let mut seen = Vec::new();
            for rank in 0..num_ranks {
                seen.extend(stride_partition(7, 29, num_ranks, rank).unwrap());
            }
            seen.sort_unstable();
            assert_eq!(seen, (7..29).collect::<Vec<_>>(), "ranks={num_ranks}");
        }
    }
}
