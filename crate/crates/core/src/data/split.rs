use super::{DataError, ImageRecord};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    /// Record indices per partition, each in ascending order.
    pub parts: Vec<Vec<usize>>,
    /// Indices of partitions that came out empty.
    pub empty_parts: Vec<usize>,
}

fn check_fractions(fractions: &[f64]) -> Result<(), DataError> {
    let sum: f64 = fractions.iter().sum();
    if fractions.is_empty()
        || fractions.iter().any(|f| !f.is_finite() || *f < 0.0)
        || (sum - 1.0).abs() > 1e-9
    {
        return Err(DataError::InvalidFractions(fractions.to_vec()));
    }
    Ok(())
}

/// Cuts `n` shuffled units into consecutive groups with rounded cumulative sizes.
fn cut(n: usize, fractions: &[f64]) -> Vec<(usize, usize)> {
    let mut bounds = Vec::with_capacity(fractions.len());
    let mut cumulative = 0.0;
    let mut start = 0;
    for (i, f) in fractions.iter().enumerate() {
        cumulative += f;
        let end = if i + 1 == fractions.len() {
            n
        } else {
            ((cumulative * n as f64).round() as usize).clamp(start, n)
        };
        bounds.push((start, end));
        start = end;
    }
    bounds
}

fn finish(mut parts: Vec<Vec<usize>>) -> Split {
    for p in &mut parts {
        p.sort_unstable();
    }
    let empty_parts = parts
        .iter()
        .enumerate()
        .filter(|(_, p)| p.is_empty())
        .map(|(i, _)| i)
        .collect();
    Split { parts, empty_parts }
}

/// Seeded random partition of `0..n`.
pub fn split_indices(n: usize, fractions: &[f64], seed: u64) -> Result<Split, DataError> {
    check_fractions(fractions)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let parts = cut(n, fractions)
        .into_iter()
        .map(|(a, b)| order[a..b].to_vec())
        .collect();
    Ok(finish(parts))
}

/// Seeded random partition of records. With `user_disjoint`, whole users are
/// assigned to partitions and fractions apply to users rather than images.
pub fn random_split(
    records: &[ImageRecord],
    fractions: &[f64],
    seed: u64,
    user_disjoint: bool,
) -> Result<Split, DataError> {
    if !user_disjoint {
        return split_indices(records.len(), fractions, seed);
    }
    check_fractions(fractions)?;
    let mut by_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_user.entry(&r.user_id).or_default().push(i);
    }
    let mut users: Vec<Vec<usize>> = by_user.into_values().collect();
    users.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let parts = cut(users.len(), fractions)
        .into_iter()
        .map(|(a, b)| users[a..b].concat())
        .collect();
    Ok(finish(parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::GeoPoint;
    use chrono::{TimeZone, Utc};
    use std::collections::HashSet;

    fn records(n: usize) -> Vec<ImageRecord> {
        (0..n)
            .map(|i| ImageRecord {
                image_id: format!("i{i}"),
                user_id: format!("u{}", i % 37),
                location: GeoPoint::new(0.0, 0.0).unwrap(),
                posted_time: Utc.with_ymd_and_hms(2014, 1, 1, 0, 0, 0).unwrap(),
                outdoor: None,
                prob_row: None,
            })
            .collect()
    }

    #[test]
    fn corpus_ratio_split() {
        let fractions = [12.2 / 14.9, 2.7 / 14.9];
        let s = split_indices(14_900, &fractions, 1).unwrap();
        assert_eq!(s.parts[0].len(), 12_200);
        assert_eq!(s.parts[1].len(), 2_700);
        let all: HashSet<usize> = s.parts.concat().into_iter().collect();
        assert_eq!(all.len(), 14_900);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = split_indices(1000, &[0.5, 0.3, 0.2], 7).unwrap();
        let b = split_indices(1000, &[0.5, 0.3, 0.2], 7).unwrap();
        let c = split_indices(1000, &[0.5, 0.3, 0.2], 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn empty_partition_is_flagged() {
        let s = split_indices(10, &[1.0, 0.0], 3).unwrap();
        assert_eq!(s.parts[0].len(), 10);
        assert_eq!(s.empty_parts, vec![1]);
        assert!(split_indices(10, &[0.5, 0.6], 3).is_err());
    }

    #[test]
    fn two_stage_split() {
        let first = split_indices(5000, &[0.8, 0.2], 11).unwrap();
        let inner = split_indices(first.parts[1].len(), &[0.5, 0.5], 12).unwrap();
        let m2_train: Vec<usize> = inner.parts[0].iter().map(|&i| first.parts[1][i]).collect();
        let m1_train: HashSet<usize> = first.parts[0].iter().copied().collect();
        assert!(m2_train.iter().all(|i| !m1_train.contains(i)));
    }

    #[test]
    fn user_disjoint_keeps_users_together() {
        let recs = records(2000);
        let s = random_split(&recs, &[0.7, 0.3], 5, true).unwrap();
        let users = |p: &Vec<usize>| -> HashSet<String> {
            p.iter().map(|&i| recs[i].user_id.clone()).collect()
        };
        assert!(users(&s.parts[0]).is_disjoint(&users(&s.parts[1])));
        assert_eq!(s.parts[0].len() + s.parts[1].len(), 2000);
        let mixed = random_split(&recs, &[0.7, 0.3], 5, false).unwrap();
        assert!(!users(&mixed.parts[0]).is_disjoint(&users(&mixed.parts[1])));
    }
}
