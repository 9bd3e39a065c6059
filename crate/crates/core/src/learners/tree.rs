//! CART tree construction shared by the single tree, the forest and the
//! boosting stages.
//!
//! Rows carry integer multiplicities so bootstrap samples need no copying.
//! Each feature's row order is sorted once; a split stably partitions every
//! feature's segment, keeping child segments sorted. Thresholds sit at the
//! midpoint between consecutive distinct values and rows with
//! `x <= threshold` go left.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::par;
use crate::seed::Rng;

/// Nodes at least this large scan their candidate features in parallel.
const PARALLEL_SCAN_MIN: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Criterion {
    /// Binary targets in {0, 1}.
    Gini,
    /// Real-valued targets (boosting residuals).
    SquaredError,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct TreeParams {
    pub max_depth: usize,
    /// `None` or a value ≥ p considers every feature at every node.
    pub features_per_split: Option<usize>,
    pub criterion: Criterion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        /// Positive-class fraction for classification trees, additive
        /// output for boosting stages.
        value: f64,
        n_samples: u64,
        impurity: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        n_samples: u64,
        impurity: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    pub fn n_samples(&self) -> u64 {
        match self {
            Node::Leaf { n_samples, .. } | Node::Split { n_samples, .. } => *n_samples,
        }
    }

    pub fn impurity(&self) -> f64 {
        match self {
            Node::Leaf { impurity, .. } | Node::Split { impurity, .. } => *impurity,
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Visits every node depth first, parents before children.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Node)) {
        f(self);
        if let Node::Split { left, right, .. } = self {
            left.visit(f);
            right.visit(f);
        }
    }

    #[inline]
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { value, .. } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    node = if row[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub root: Node,
    pub n_features: usize,
}

impl Tree {
    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    #[inline]
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.root.predict(row)
    }
}

#[derive(Clone, Copy)]
struct Sums {
    w: f64,
    wy: f64,
    wyy: f64,
}

impl Sums {
    const ZERO: Sums = Sums {
        w: 0.0,
        wy: 0.0,
        wyy: 0.0,
    };

    #[inline]
    fn add(&mut self, c: f64, y: f64) {
        self.w += c;
        self.wy += c * y;
        self.wyy += c * y * y;
    }

    #[inline]
    fn minus(self, other: Sums) -> Sums {
        Sums {
            w: self.w - other.w,
            wy: self.wy - other.wy,
            wyy: self.wyy - other.wyy,
        }
    }

    #[inline]
    fn impurity(self, criterion: Criterion) -> f64 {
        if self.w <= 0.0 {
            return 0.0;
        }
        match criterion {
            Criterion::Gini => {
                let p = self.wy / self.w;
                2.0 * p * (1.0 - p)
            }
            Criterion::SquaredError => {
                let m = self.wy / self.w;
                (self.wyy / self.w - m * m).max(0.0)
            }
        }
    }
}

struct Builder<'a, L> {
    x: &'a Matrix,
    y: &'a [f64],
    counts: &'a [u32],
    params: TreeParams,
    leaf_value: L,
    /// `sorted[f]` holds the rows ordered by feature `f`.
    sorted: Vec<Vec<usize>>,
    scratch: Vec<Vec<usize>>,
    goes_left: Vec<bool>,
}

#[derive(Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
    left_len: usize,
}

/// Row order of every feature over all rows of a matrix, computed once and
/// shared by every tree grown on it.
pub(crate) struct Presorted(Vec<Vec<usize>>);

impl Presorted {
    pub(crate) fn new(x: &Matrix) -> Self {
        Presorted(par::map_range(x.n_cols(), |f| {
            let mut order: Vec<usize> = (0..x.n_rows()).collect();
            // stable sort keeps ties in row order
            order.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)));
            order
        }))
    }
}

/// Grows a tree on the rows with non-zero `counts`. `leaf_value` maps the
/// rows of a terminal node to its output. `rng` is consulted only when
/// feature subsampling is active.
pub(crate) fn build<L>(
    x: &Matrix,
    y: &[f64],
    counts: &[u32],
    params: TreeParams,
    rng: &mut Rng,
    leaf_value: L,
) -> Tree
where
    L: Fn(&[usize]) -> f64 + Sync,
{
    build_presorted(x, &Presorted::new(x), y, counts, params, rng, leaf_value)
}

/// Same as [`build`] with the feature orders of `x` supplied.
pub(crate) fn build_presorted<L>(
    x: &Matrix,
    presorted: &Presorted,
    y: &[f64],
    counts: &[u32],
    params: TreeParams,
    rng: &mut Rng,
    leaf_value: L,
) -> Tree
where
    L: Fn(&[usize]) -> f64 + Sync,
{
    let p = x.n_cols();
    // a subsequence of the full order is the order of the subset
    let sorted: Vec<Vec<usize>> = presorted
        .0
        .iter()
        .map(|order| order.iter().copied().filter(|&i| counts[i] > 0).collect())
        .collect();
    let n_rows = sorted.first().map_or(0, Vec::len);
    let mut builder = Builder {
        x,
        y,
        counts,
        params,
        leaf_value,
        scratch: vec![Vec::with_capacity(n_rows); p],
        sorted,
        goes_left: vec![false; x.n_rows()],
    };
    let root = builder.grow(0, n_rows, 0, rng);
    Tree { root, n_features: p }
}

impl<L> Builder<'_, L>
where
    L: Fn(&[usize]) -> f64 + Sync,
{
    fn node_rows(&self, start: usize, end: usize) -> &[usize] {
        &self.sorted[0][start..end]
    }

    fn grow(&mut self, start: usize, end: usize, depth: usize, rng: &mut Rng) -> Node {
        let mut total = Sums::ZERO;
        let mut y_min = f64::INFINITY;
        let mut y_max = f64::NEG_INFINITY;
        for &i in self.node_rows(start, end) {
            total.add(f64::from(self.counts[i]), self.y[i]);
            y_min = y_min.min(self.y[i]);
            y_max = y_max.max(self.y[i]);
        }
        let pure = y_min == y_max;
        let impurity = if pure {
            0.0
        } else {
            total.impurity(self.params.criterion)
        };
        let n_samples = total.w as u64;

        let can_split = depth < self.params.max_depth && n_samples >= 2 && !pure;
        let best = if can_split {
            self.best_split(start, end, total, impurity, rng)
        } else {
            None
        };

        let Some(best) = best else {
            return Node::Leaf {
                value: (self.leaf_value)(self.node_rows(start, end)),
                n_samples,
                impurity,
            };
        };

        self.partition(start, end, best);
        let mid = start + best.left_len;
        let left = self.grow(start, mid, depth + 1, rng);
        let right = self.grow(mid, end, depth + 1, rng);
        Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            n_samples,
            impurity,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    fn candidate_features(&self, rng: &mut Rng) -> Vec<usize> {
        let p = self.x.n_cols();
        match self.params.features_per_split {
            Some(k) if k < p => {
                let mut picked = index::sample(rng, p, k).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..p).collect(),
        }
    }

    fn best_split(
        &self,
        start: usize,
        end: usize,
        total: Sums,
        impurity: f64,
        rng: &mut Rng,
    ) -> Option<Candidate> {
        let features = self.candidate_features(rng);
        let scan = |&f: &usize| self.scan_feature(f, start, end, total, impurity);
        let per_feature: Vec<Option<Candidate>> = if end - start >= PARALLEL_SCAN_MIN {
            par::map_slice(&features, scan)
        } else {
            features.iter().map(scan).collect()
        };
        // lowest feature index wins ties; within a feature the scan keeps
        // the lowest threshold
        let mut best: Option<Candidate> = None;
        for c in per_feature.into_iter().flatten() {
            if best.is_none_or(|b| c.gain > b.gain) {
                best = Some(c);
            }
        }
        // zero-gain splits are still taken in impure nodes so that
        // interactions such as XOR remain learnable; rounding can push an
        // exact zero slightly negative
        best.filter(|b| b.gain > -1e-12)
    }

    fn scan_feature(
        &self,
        f: usize,
        start: usize,
        end: usize,
        total: Sums,
        impurity: f64,
    ) -> Option<Candidate> {
        let order = &self.sorted[f][start..end];
        let criterion = self.params.criterion;
        let mut left = Sums::ZERO;
        let mut best: Option<Candidate> = None;
        for k in 0..order.len() - 1 {
            let i = order[k];
            left.add(f64::from(self.counts[i]), self.y[i]);
            let xv = self.x.get(i, f);
            let xn = self.x.get(order[k + 1], f);
            if xv == xn {
                continue;
            }
            let right = total.minus(left);
            let weighted =
                (left.w * left.impurity(criterion) + right.w * right.impurity(criterion)) / total.w;
            let gain = impurity - weighted;
            if best.is_none_or(|b| gain > b.gain) {
                let mut threshold = 0.5 * (xv + xn);
                if threshold >= xn {
                    threshold = xv;
                }
                best = Some(Candidate {
                    feature: f,
                    threshold,
                    gain,
                    left_len: k + 1,
                });
            }
        }
        best
    }

    fn partition(&mut self, start: usize, end: usize, split: Candidate) {
        for &i in &self.sorted[split.feature][start..end] {
            self.goes_left[i] = self.x.get(i, split.feature) <= split.threshold;
        }
        let goes_left = &self.goes_left;
        let mut pairs: Vec<(&mut Vec<usize>, &mut Vec<usize>)> =
            self.sorted.iter_mut().zip(self.scratch.iter_mut()).collect();
        let work = |(order, buf): &mut (&mut Vec<usize>, &mut Vec<usize>)| {
            buf.clear();
            let segment = &mut order[start..end];
            buf.extend(segment.iter().copied().filter(|&i| goes_left[i]));
            buf.extend(segment.iter().copied().filter(|&i| !goes_left[i]));
            segment.copy_from_slice(buf);
        };
        if end - start >= PARALLEL_SCAN_MIN {
            par::for_each_mut(&mut pairs, work);
        } else {
            pairs.iter_mut().for_each(work);
        }
    }
}

/// Weighted mean of `y` over `rows`.
pub(crate) fn weighted_mean(rows: &[usize], y: &[f64], counts: &[u32]) -> f64 {
    let (mut w, mut wy) = (0.0, 0.0);
    for &i in rows {
        let c = f64::from(counts[i]);
        w += c;
        wy += c * y[i];
    }
    if w > 0.0 {
        wy / w
    } else {
        0.0
    }
}
