use super::DataError;
use ndarray::ArrayView2;

/// Exact Euclidean nearest rows, ascending by distance, ties by lowest row.
pub fn l2_retrieve(
    query: &[f64],
    database: ArrayView2<'_, f64>,
    k: usize,
) -> Result<Vec<(usize, f64)>, DataError> {
    if k == 0 {
        return Err(DataError::InvalidArgument("k must be positive".into()));
    }
    if database.ncols() != query.len() {
        return Err(DataError::Dimension {
            expected: database.ncols(),
            found: query.len(),
        });
    }
    let mut scored: Vec<(usize, f64)> = database
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let sq: f64 = row.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            (i, sq)
        })
        .collect();
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored.into_iter().map(|(i, sq)| (i, sq.sqrt())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn hand_fixture() {
        let db = array![[0.0, 0.0], [3.0, 4.0]];
        let hits = l2_retrieve(&[0.0, 0.0], db.view(), 2).unwrap();
        assert_eq!(hits, vec![(0, 0.0), (1, 5.0)]);
    }

    #[test]
    fn exact_match_first_and_k_larger_than_rows() {
        let db = array![[1.0, 2.0, 3.0], [0.0, 0.0, 0.0], [1.0, 2.0, 3.5]];
        let hits = l2_retrieve(&[1.0, 2.0, 3.5], db.view(), 10).unwrap();
        assert_eq!(hits.len(), 3);
        assert_eq!(hits[0], (2, 0.0));
    }

    #[test]
    fn ties_prefer_lowest_row() {
        let db = array![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]];
        let hits = l2_retrieve(&[0.0, 0.0], db.view(), 3).unwrap();
        assert_eq!(hits.iter().map(|h| h.0).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn rejects_bad_arguments() {
        let db = array![[1.0, 0.0]];
        assert!(l2_retrieve(&[0.0, 0.0], db.view(), 0).is_err());
        assert!(l2_retrieve(&[0.0], db.view(), 1).is_err());
    }
}
