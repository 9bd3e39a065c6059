//! Brute-force k-nearest-neighbour scoring.

use crate::matrix::Matrix;

/// Fraction of positive labels among the `k` rows of `train` closest to
/// `query` in Euclidean distance. Equal distances favour the lower row index.
pub(crate) fn score(train: &Matrix, target: &[u8], k: usize, query: &[f64]) -> f64 {
    let k = k.min(train.n_rows());
    // the k best so far, ascending by (distance, index)
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for (i, row) in train.rows().enumerate() {
        let d: f64 = row.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.len() == k && best.last().is_some_and(|b| d.total_cmp(&b.0).is_ge()) {
            continue;
        }
        // rows arrive in index order, so an equal distance never displaces
        let at = best.partition_point(|b| b.0.total_cmp(&d).is_le());
        best.insert(at, (d, i));
        best.truncate(k);
    }
    let positives = best.iter().filter(|(_, i)| target[*i] == 1).count();
    positives as f64 / k as f64
}
