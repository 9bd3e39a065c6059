//! Stagewise gradient boosting on the logistic loss.
//!
//! Starts from the log-odds of the positive class. Each stage fits a
//! squared-error regression tree to the negative gradient `y - p` and sets
//! each leaf to the one-step Newton value `sum(y - p) / sum(p (1 - p))`
//! over its rows, shrunk by the learning rate.

use super::tree::{self, Criterion, Presorted, Tree, TreeParams};
use crate::matrix::Matrix;
use crate::par;
use crate::seed;
use crate::stats::sigmoid;

pub(crate) struct BoostParams {
    pub max_depth: usize,
    pub n_stages: usize,
    pub learning_rate: f64,
}

pub(crate) struct Boosted {
    pub init: f64,
    pub stages: Vec<Tree>,
}

/// `y` must contain both classes.
pub(crate) fn fit(x: &Matrix, y: &[f64], params: &BoostParams) -> Boosted {
    let n = x.n_rows();
    let pos = y.iter().sum::<f64>();
    let prior = pos / n as f64;
    let init = (prior / (1.0 - prior)).ln();
    let counts = vec![1u32; n];
    let presorted = Presorted::new(x);
    let mut raw = vec![init; n];
    let mut stages = Vec::with_capacity(params.n_stages);
    // trees are grown on all features, so the generator is never consulted
    let mut rng = seed::rng(0);
    for _ in 0..params.n_stages {
        let prob: Vec<f64> = raw.iter().map(|&r| sigmoid(r)).collect();
        let residual: Vec<f64> = y.iter().zip(&prob).map(|(yi, pi)| yi - pi).collect();
        let mut stage = tree::build_presorted(
            x,
            &presorted,
            &residual,
            &counts,
            TreeParams {
                max_depth: params.max_depth,
                features_per_split: None,
                criterion: Criterion::SquaredError,
            },
            &mut rng,
            |rows| {
                let (mut num, mut den) = (0.0, 0.0);
                for &i in rows {
                    num += residual[i];
                    den += prob[i] * (1.0 - prob[i]);
                }
                if den < 1e-12 {
                    0.0
                } else {
                    num / den
                }
            },
        );
        scale_leaves(&mut stage.root, params.learning_rate);
        let updates = par::map_range(n, |i| stage.predict(x.row(i)));
        for (r, u) in raw.iter_mut().zip(updates) {
            *r += u;
        }
        stages.push(stage);
    }
    Boosted { init, stages }
}

fn scale_leaves(node: &mut tree::Node, factor: f64) {
    match node {
        tree::Node::Leaf { value, .. } => *value *= factor,
        tree::Node::Split { left, right, .. } => {
            scale_leaves(left, factor);
            scale_leaves(right, factor);
        }
    }
}

#[inline]
pub(crate) fn raw_score(init: f64, stages: &[Tree], row: &[f64]) -> f64 {
    init + stages.iter().map(|t| t.predict(row)).sum::<f64>()
}
