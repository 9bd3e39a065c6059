//! Bagged CART ensemble.

use rand::Rng as _;

use super::tree::{self, Criterion, Presorted, Tree, TreeParams};
use crate::matrix::Matrix;
use crate::par;
use crate::seed;

pub(crate) struct ForestParams {
    pub max_depth: usize,
    pub n_trees: usize,
    pub features_per_split: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

/// Tree `t` draws from its own generator seeded with `seed + t`, so trees
/// can be grown in any order.
pub(crate) fn fit(x: &Matrix, y: &[f64], params: &ForestParams) -> Vec<Tree> {
    let n = x.n_rows();
    let presorted = Presorted::new(x);
    par::map_range(params.n_trees, |t| {
        let mut rng = seed::rng(params.seed.wrapping_add(t as u64));
        let counts: Vec<u32> = if params.bootstrap {
            let mut counts = vec![0u32; n];
            for _ in 0..n {
                counts[rng.random_range(0..n)] += 1;
            }
            counts
        } else {
            vec![1; n]
        };
        tree::build_presorted(
            x,
            &presorted,
            y,
            &counts,
            TreeParams {
                max_depth: params.max_depth,
                features_per_split: Some(params.features_per_split),
                criterion: Criterion::Gini,
            },
            &mut rng,
            |rows| tree::weighted_mean(rows, y, &counts),
        )
    })
}

#[inline]
pub(crate) fn predict(trees: &[Tree], row: &[f64]) -> f64 {
    trees.iter().map(|t| t.predict(row)).sum::<f64>() / trees.len() as f64
}
