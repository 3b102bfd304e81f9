use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::dataset::{Dataset, Targets};
use super::ForestError;

/// Relative margin under which two candidate splits count as tied; ties go to
/// the lowest feature index, then the lowest threshold.
pub(crate) const TIE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    pub mtry: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LeafValue {
    Mean(f64),
    Distribution(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        /// Impurity removed by this split (parent minus both children).
        gain: f64,
        samples: usize,
        left: Box<Node>,
        right: Box<Node>,
    },
    Leaf {
        value: LeafValue,
        samples: usize,
    },
}

impl Node {
    /// Leaf reached by `x`: `x[feature] <= threshold` goes left.
    pub fn leaf_for(&self, x: &[f64]) -> &LeafValue {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { value, .. } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => node = if x[*feature] <= *threshold { left } else { right },
            }
        }
    }

    pub fn samples(&self) -> usize {
        match self {
            Node::Split { samples, .. } | Node::Leaf { samples, .. } => *samples,
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Node::Leaf { .. } => 1,
            Node::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    /// Calls `f(feature, threshold, gain, depth)` for every split, preorder.
    pub fn for_each_split(&self, f: &mut impl FnMut(usize, f64, f64, usize)) {
        fn walk(node: &Node, depth: usize, f: &mut impl FnMut(usize, f64, f64, usize)) {
            if let Node::Split {
                feature,
                threshold,
                gain,
                left,
                right,
                ..
            } = node
            {
                f(*feature, *threshold, *gain, depth);
                walk(left, depth + 1, f);
                walk(right, depth + 1, f);
            }
        }
        walk(self, 0, f)
    }

    pub(crate) fn max_feature(&self) -> Option<usize> {
        let mut max = None;
        self.for_each_split(&mut |f, _, _, _| max = max.max(Some(f)));
        max
    }
}

// Model files store nodes as `{"f", "t", "g", "n", "l", "r"}` and
// `{"leaf": value, "n"}` where value is a number or a probability array.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum NodeRepr {
    Split {
        f: usize,
        t: f64,
        #[serde(default)]
        g: f64,
        #[serde(default)]
        n: usize,
        l: Box<NodeRepr>,
        r: Box<NodeRepr>,
    },
    Leaf {
        leaf: LeafRepr,
        #[serde(default)]
        n: usize,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LeafRepr {
    Mean(f64),
    Distribution(Vec<f64>),
}

impl From<&Node> for NodeRepr {
    fn from(node: &Node) -> Self {
        match node {
            Node::Split {
                feature,
                threshold,
                gain,
                samples,
                left,
                right,
            } => NodeRepr::Split {
                f: *feature,
                t: *threshold,
                g: *gain,
                n: *samples,
                l: Box::new(left.as_ref().into()),
                r: Box::new(right.as_ref().into()),
            },
            Node::Leaf { value, samples } => NodeRepr::Leaf {
                leaf: match value {
                    LeafValue::Mean(m) => LeafRepr::Mean(*m),
                    LeafValue::Distribution(d) => LeafRepr::Distribution(d.clone()),
                },
                n: *samples,
            },
        }
    }
}

impl From<NodeRepr> for Node {
    fn from(repr: NodeRepr) -> Self {
        match repr {
            NodeRepr::Split { f, t, g, n, l, r } => Node::Split {
                feature: f,
                threshold: t,
                gain: g,
                samples: n,
                left: Box::new((*l).into()),
                right: Box::new((*r).into()),
            },
            NodeRepr::Leaf { leaf, n } => Node::Leaf {
                value: match leaf {
                    LeafRepr::Mean(m) => LeafValue::Mean(m),
                    LeafRepr::Distribution(d) => LeafValue::Distribution(d),
                },
                samples: n,
            },
        }
    }
}

impl Serialize for Node {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        NodeRepr::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Node {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        NodeRepr::deserialize(deserializer).map(Node::from)
    }
}

/// Trains one CART tree on `rows` (indices into `data`, repeats allowed),
/// drawing candidate features from a generator seeded with `seed`.
pub fn train_tree(
    data: &Dataset,
    rows: &[usize],
    params: &TreeParams,
    seed: u64,
) -> Result<Node, ForestError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    grow_tree(data, rows, params, &mut rng)
}

pub(crate) fn grow_tree<R: Rng + ?Sized>(
    data: &Dataset,
    rows: &[usize],
    params: &TreeParams,
    rng: &mut R,
) -> Result<Node, ForestError> {
    if rows.is_empty() {
        return Err(ForestError::EmptyRows);
    }
    let p = data.n_features();
    if params.mtry == 0 || params.mtry > p {
        return Err(ForestError::InvalidParams(format!(
            "mtry {} outside 1..={p}",
            params.mtry
        )));
    }
    if params.min_samples_leaf == 0 {
        return Err(ForestError::InvalidParams("min_samples_leaf must be positive".into()));
    }
    let mut grower = Grower {
        data,
        params,
        rng,
        pairs: Vec::with_capacity(rows.len()),
    };
    let mut rows = rows.to_vec();
    Ok(grower.grow(&mut rows, 0))
}

struct Grower<'a, R: ?Sized> {
    data: &'a Dataset,
    params: &'a TreeParams,
    rng: &'a mut R,
    pairs: Vec<(f64, usize)>,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl<R: Rng + ?Sized> Grower<'_, R> {
    fn grow(&mut self, rows: &mut [usize], depth: usize) -> Node {
        let parent = self.impurity(rows);
        let can_split = depth < self.params.max_depth
            && parent > 0.0
            && rows.len() >= 2 * self.params.min_samples_leaf;
        if !can_split {
            return self.leaf(rows);
        }
        let features = self.draw_features();
        let Some(best) = self.best_split(rows, &features, parent) else {
            return self.leaf(rows);
        };
        let split_at = partition(rows, |r| self.data.row(r)[best.feature] <= best.threshold);
        let (left_rows, right_rows) = rows.split_at_mut(split_at);
        let left = self.grow(left_rows, depth + 1);
        let right = self.grow(right_rows, depth + 1);
        Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            gain: (parent - best.score).max(0.0),
            samples: left.samples() + right.samples(),
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    fn draw_features(&mut self) -> Vec<usize> {
        let p = self.data.n_features();
        if self.params.mtry >= p {
            return (0..p).collect();
        }
        let mut picked = rand::seq::index::sample(self.rng, p, self.params.mtry).into_vec();
        picked.sort_unstable();
        picked
    }

    /// SSE for regression, `n * gini` for classification.
    fn impurity(&self, rows: &[usize]) -> f64 {
        match self.data.targets() {
            Targets::Regression(y) => {
                let n = rows.len() as f64;
                let mean = rows.iter().map(|&r| y[r]).sum::<f64>() / n;
                rows.iter().map(|&r| (y[r] - mean).powi(2)).sum()
            }
            Targets::Classification { labels, classes } => {
                let mut counts = vec![0usize; labels.len()];
                for &r in rows {
                    counts[classes[r]] += 1;
                }
                weighted_gini(&counts, rows.len())
            }
        }
    }

    fn leaf(&self, rows: &[usize]) -> Node {
        let value = match self.data.targets() {
            Targets::Regression(y) => {
                let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
                for &r in rows {
                    lo = lo.min(y[r]);
                    hi = hi.max(y[r]);
                    sum += y[r];
                }
                LeafValue::Mean((sum / rows.len() as f64).clamp(lo, hi))
            }
            Targets::Classification { labels, classes } => {
                let mut counts = vec![0.0; labels.len()];
                for &r in rows {
                    counts[classes[r]] += 1.0;
                }
                let n = rows.len() as f64;
                LeafValue::Distribution(counts.into_iter().map(|c| c / n).collect())
            }
        };
        Node::Leaf {
            value,
            samples: rows.len(),
        }
    }

    fn best_split(&mut self, rows: &[usize], features: &[usize], parent: f64) -> Option<Candidate> {
        let tol = TIE_TOLERANCE * parent;
        let mut best: Option<Candidate> = None;
        for &feature in features {
            self.pairs.clear();
            self.pairs
                .extend(rows.iter().map(|&r| (self.data.row(r)[feature], r)));
            self.pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let pairs = std::mem::take(&mut self.pairs);
            let mut consider = |threshold: f64, score: f64| {
                let better = best.as_ref().is_none_or(|b| score < b.score - tol);
                if better {
                    best = Some(Candidate {
                        feature,
                        threshold,
                        score,
                    });
                }
            };
            match self.data.targets() {
                Targets::Regression(y) => {
                    sweep_regression(&pairs, y, self.params.min_samples_leaf, &mut consider)
                }
                Targets::Classification { labels, classes } => sweep_classification(
                    &pairs,
                    classes,
                    labels.len(),
                    self.params.min_samples_leaf,
                    &mut consider,
                ),
            }
            self.pairs = pairs;
        }
        best
    }
}

fn weighted_gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    let sum_sq: f64 = counts.iter().map(|&c| (c as f64) * (c as f64)).sum();
    (n - sum_sq / n).max(0.0)
}

fn midpoint(a: f64, b: f64) -> f64 {
    let t = (a + b) / 2.0;
    if t < b {
        t
    } else {
        a
    }
}

/// Valid split positions over rows sorted by feature value: between distinct
/// neighbours, with both sides holding at least `min_leaf` rows.
fn split_positions(pairs: &[(f64, usize)], min_leaf: usize) -> impl Iterator<Item = usize> + '_ {
    let m = pairs.len();
    (0..m.saturating_sub(1))
        .filter(move |&i| pairs[i].0 < pairs[i + 1].0 && i + 1 >= min_leaf && m - (i + 1) >= min_leaf)
}

fn sweep_regression(
    pairs: &[(f64, usize)],
    y: &[f64],
    min_leaf: usize,
    consider: &mut impl FnMut(f64, f64),
) {
    let m = pairs.len();
    // centre on the node mean to keep the running-sum SSE well conditioned
    let mean = pairs.iter().map(|&(_, r)| y[r]).sum::<f64>() / m as f64;
    let (mut total_s, mut total_q) = (0.0, 0.0);
    for &(_, r) in pairs {
        let d = y[r] - mean;
        total_s += d;
        total_q += d * d;
    }
    let sse = |n: f64, s: f64, q: f64| (q - s * s / n).max(0.0);
    let mut positions = split_positions(pairs, min_leaf).peekable();
    let (mut ls, mut lq) = (0.0, 0.0);
    for (i, &(_, r)) in pairs.iter().enumerate() {
        let d = y[r] - mean;
        ls += d;
        lq += d * d;
        if positions.peek() == Some(&i) {
            positions.next();
            let nl = (i + 1) as f64;
            let nr = (m - i - 1) as f64;
            let score = sse(nl, ls, lq) + sse(nr, total_s - ls, total_q - lq);
            consider(midpoint(pairs[i].0, pairs[i + 1].0), score);
        }
    }
}

fn sweep_classification(
    pairs: &[(f64, usize)],
    classes: &[usize],
    n_classes: usize,
    min_leaf: usize,
    consider: &mut impl FnMut(f64, f64),
) {
    let m = pairs.len();
    let mut total = vec![0usize; n_classes];
    for &(_, r) in pairs {
        total[classes[r]] += 1;
    }
    let mut left = vec![0usize; n_classes];
    let mut right = total.clone();
    let mut positions = split_positions(pairs, min_leaf).peekable();
    for (i, &(_, r)) in pairs.iter().enumerate() {
        left[classes[r]] += 1;
        right[classes[r]] -= 1;
        if positions.peek() == Some(&i) {
            positions.next();
            let score = weighted_gini(&left, i + 1) + weighted_gini(&right, m - i - 1);
            consider(midpoint(pairs[i].0, pairs[i + 1].0), score);
        }
    }
}

/// Stable-enough in-place partition; returns the count of rows matching `pred`.
fn partition(rows: &mut [usize], pred: impl Fn(usize) -> bool) -> usize {
    let mut left: Vec<usize> = Vec::with_capacity(rows.len());
    let mut right: Vec<usize> = Vec::with_capacity(rows.len());
    for &r in rows.iter() {
        if pred(r) {
            left.push(r);
        } else {
            right.push(r);
        }
    }
    let k = left.len();
    rows[..k].copy_from_slice(&left);
    rows[k..].copy_from_slice(&right);
    k
}
