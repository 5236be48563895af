//! CART over sparse rows.
//!
//! Trees grow breadth-first. Each column is sorted once, and every level
//! takes two passes over the stored nonzeros of the candidate columns. The
//! implicit zeros in a node form a single group, recovered from the node
//! totals. Classification (Gini) and regression (variance) use one
//! criterion: for binary targets `sum(w y^2) - (sum w y)^2 / sum w` is half the
//! weighted Gini impurity, so minimizing it minimizes Gini.

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{check_training_set, proba, ProbClassifier, TrainError};
use crate::corpus::Label;
use crate::features::FeatureVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitCriterion {
    Gini,
    Variance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: usize,
    /// Minimum total sample weight on each side of a split.
    pub min_samples_leaf: usize,
    /// Features sampled per node from those that vary there; `None` = all.
    pub max_features: Option<usize>,
    pub criterion: SplitCriterion,
    pub seed: u64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            max_depth: 20,
            min_samples_leaf: 2,
            max_features: None,
            criterion: SplitCriterion::Gini,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn evaluate(&self, row: &FeatureVector) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if row.get(*feature) <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub root: TreeNode,
}

impl ProbClassifier for DecisionTree {
    fn predict_proba(&self, row: &FeatureVector) -> [f64; 2] {
        proba(self.root.evaluate(row))
    }
}

pub fn tree_fit(rows: &[FeatureVector], labels: &[Label], config: &TreeConfig) -> Result<DecisionTree, TrainError> {
    check_training_set(rows, labels)?;
    let targets: Vec<f64> = labels.iter().map(|l| l.as_f64()).collect();
    let weights = vec![1.0; rows.len()];
    let config = TreeConfig {
        criterion: SplitCriterion::Gini,
        ..config.clone()
    };
    tree_fit_weighted(rows, &targets, &weights, &config)
}

/// Weighted fit against real-valued targets; leaves hold the weighted mean.
pub fn tree_fit_weighted(
    rows: &[FeatureVector],
    targets: &[f64],
    weights: &[f64],
    config: &TreeConfig,
) -> Result<DecisionTree, TrainError> {
    if rows.is_empty() {
        return Err(TrainError::Input("no training rows".into()));
    }
    if rows.len() != targets.len() || rows.len() != weights.len() {
        return Err(TrainError::Input("rows, targets and weights differ in length".into()));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || targets.iter().any(|t| !t.is_finite()) {
        return Err(TrainError::Input("weights and targets must be finite, weights non-negative".into()));
    }
    let columns = Columns::new(rows);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    Ok(DecisionTree {
        root: grow(&columns, rows, targets, weights, config, &mut rng),
    })
}

/// Column-major copy of the nonzeros, each column sorted by value.
pub(crate) struct Columns {
    cols: Vec<Vec<(f64, u32)>>,
}

impl Columns {
    pub(crate) fn new(rows: &[FeatureVector]) -> Self {
        let dim = rows.first().map_or(0, |r| r.dimension());
        let mut cols: Vec<Vec<(f64, u32)>> = vec![Vec::new(); dim];
        for (r, row) in rows.iter().enumerate() {
            for (j, v) in row.iter() {
                cols[j].push((v, r as u32));
            }
        }
        for c in &mut cols {
            c.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }
        Columns { cols }
    }

    fn dim(&self) -> usize {
        self.cols.len()
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Stats {
    w: f64,
    s: f64,
    q: f64,
    n: usize,
}

impl Stats {
    fn push(&mut self, w: f64, y: f64) {
        self.w += w;
        self.s += w * y;
        self.q += w * y * y;
        self.n += 1;
    }

    fn merge(&mut self, o: &Stats) {
        self.w += o.w;
        self.s += o.s;
        self.q += o.q;
        self.n += o.n;
    }

    fn minus(&self, o: &Stats) -> Stats {
        Stats {
            w: self.w - o.w,
            s: self.s - o.s,
            q: self.q - o.q,
            n: self.n - o.n,
        }
    }

    fn impurity(&self) -> f64 {
        if self.w <= 0.0 {
            0.0
        } else {
            (self.q - self.s * self.s / self.w).max(0.0)
        }
    }

    fn mean(&self) -> f64 {
        if self.w > 0.0 {
            self.s / self.w
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    child_impurity: f64,
    feature: usize,
    threshold: f64,
}

/// Per-node scan state for the column currently being processed.
#[derive(Clone, Default)]
struct Scan {
    feature_tag: usize,
    nonzero: Stats,
    left: Stats,
    prev: Option<f64>,
    zero_done: bool,
}

const NO_SLOT: u32 = u32::MAX;

enum Draft {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

struct Open {
    id: usize,
    rows: Vec<u32>,
    totals: Stats,
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m >= hi {
        lo
    } else {
        m
    }
}

struct Splitter<'a> {
    totals: &'a [Stats],
    best: &'a mut [Option<Candidate>],
    min_leaf: f64,
}

impl Splitter<'_> {
    /// Append a value group to the running left side, evaluating the boundary
    /// before it first.
    fn push_group(&mut self, slot: usize, scan: &mut Scan, feature: usize, value: f64, group: &Stats) {
        if let Some(prev) = scan.prev {
            if prev != value {
                self.consider(slot, &scan.left, feature, midpoint(prev, value));
            }
        }
        scan.left.merge(group);
        scan.prev = Some(value);
    }

    fn consider(&mut self, slot: usize, left: &Stats, feature: usize, threshold: f64) {
        let right = self.totals[slot].minus(left);
        if left.w < self.min_leaf || right.w < self.min_leaf {
            return;
        }
        let child = left.impurity() + right.impurity();
        let better = match &self.best[slot] {
            None => true,
            Some(b) => child < b.child_impurity - 1e-12 * (1.0 + b.child_impurity.abs()),
        };
        if better {
            self.best[slot] = Some(Candidate {
                child_impurity: child,
                feature,
                threshold,
            });
        }
    }
}

pub(crate) fn grow(
    columns: &Columns,
    rows: &[FeatureVector],
    targets: &[f64],
    weights: &[f64],
    config: &TreeConfig,
    rng: &mut ChaCha8Rng,
) -> TreeNode {
    let n = rows.len();
    let dim = columns.dim();
    let min_leaf = config.min_samples_leaf.max(1) as f64;

    let mut drafts: Vec<Draft> = vec![Draft::Leaf(0.0)];
    let root_rows: Vec<u32> = (0..n as u32).filter(|&r| weights[r as usize] > 0.0).collect();
    let mut root_totals = Stats::default();
    for &r in &root_rows {
        root_totals.push(weights[r as usize], targets[r as usize]);
    }
    let mut frontier = vec![Open {
        id: 0,
        rows: root_rows,
        totals: root_totals,
    }];

    let mut slot_of = vec![NO_SLOT; n];
    let mut present_tag = vec![usize::MAX; dim];
    let (mut first_value, mut nonzero_count, mut varied) = (vec![0.0; dim], vec![0usize; dim], vec![false; dim]);
    let mut depth = 0;
    while !frontier.is_empty() {
        // Slots are the frontier nodes that may still split.
        let mut splittable: Vec<usize> = Vec::new();
        for (k, open) in frontier.iter().enumerate() {
            let t = &open.totals;
            drafts[open.id] = Draft::Leaf(t.mean());
            let pure = t.impurity() <= 1e-12 * t.w.max(1.0);
            if depth < config.max_depth && !pure && t.w >= 2.0 * min_leaf {
                splittable.push(k);
            }
        }
        if splittable.is_empty() {
            break;
        }
        slot_of.iter_mut().for_each(|s| *s = NO_SLOT);
        for (slot, &k) in splittable.iter().enumerate() {
            for &r in &frontier[k].rows {
                slot_of[r as usize] = slot as u32;
            }
        }
        let totals: Vec<Stats> = splittable.iter().map(|&k| frontier[k].totals).collect();

        // (feature, slot) pairs restricting which nodes consider a feature.
        let sampled: Option<Vec<(usize, u32)>> = config.max_features.map(|m| {
            let mut pairs = Vec::new();
            for (slot, &k) in splittable.iter().enumerate() {
                // candidates: features that vary within the node
                let node_rows = &frontier[k].rows;
                let mut present = Vec::new();
                for &r in node_rows {
                    for (j, v) in rows[r as usize].iter() {
                        if present_tag[j] != slot {
                            present_tag[j] = slot;
                            present.push(j);
                            first_value[j] = v;
                            nonzero_count[j] = 0;
                            varied[j] = false;
                        }
                        nonzero_count[j] += 1;
                        varied[j] |= v != first_value[j];
                    }
                }
                present.retain(|&j| varied[j] || nonzero_count[j] < node_rows.len());
                present.sort_unstable();
                if present.len() > m {
                    let mut picked: Vec<usize> = sample(rng, present.len(), m).into_iter().map(|i| present[i]).collect();
                    picked.sort_unstable();
                    present = picked;
                }
                pairs.extend(present.into_iter().map(|j| (j, slot as u32)));
            }
            present_tag.iter_mut().for_each(|t| *t = usize::MAX);
            pairs.sort_unstable();
            pairs
        });

        let mut best: Vec<Option<Candidate>> = vec![None; splittable.len()];
        let mut scans: Vec<Scan> = vec![
            Scan {
                feature_tag: usize::MAX,
                ..Default::default()
            };
            splittable.len()
        ];
        let mut allowed_tag = vec![usize::MAX; splittable.len()];
        let mut touched: Vec<usize> = Vec::new();
        let mut splitter = Splitter {
            totals: &totals,
            best: &mut best,
            min_leaf,
        };
        let mut pair_pos = 0;
        for j in 0..dim {
            let column = &columns.cols[j];
            if let Some(pairs) = &sampled {
                let start = pair_pos;
                while pair_pos < pairs.len() && pairs[pair_pos].0 == j {
                    allowed_tag[pairs[pair_pos].1 as usize] = j;
                    pair_pos += 1;
                }
                if start == pair_pos {
                    continue;
                }
            }
            if column.is_empty() {
                continue;
            }
            let allowed = |slot: usize| sampled.is_none() || allowed_tag[slot] == j;
            touched.clear();
            for &(_, r) in column {
                let slot = slot_of[r as usize];
                if slot == NO_SLOT || !allowed(slot as usize) {
                    continue;
                }
                let scan = &mut scans[slot as usize];
                if scan.feature_tag != j {
                    *scan = Scan {
                        feature_tag: j,
                        ..Default::default()
                    };
                    touched.push(slot as usize);
                }
                scan.nonzero.push(weights[r as usize], targets[r as usize]);
            }
            for &(v, r) in column {
                let slot = slot_of[r as usize];
                if slot == NO_SLOT || !allowed(slot as usize) {
                    continue;
                }
                let slot = slot as usize;
                let scan = &mut scans[slot];
                if !scan.zero_done && v > 0.0 {
                    scan.zero_done = true;
                    let zeros = totals[slot].minus(&scan.nonzero);
                    if zeros.n > 0 {
                        splitter.push_group(slot, scan, j, 0.0, &zeros);
                    }
                }
                let mut one = Stats::default();
                one.push(weights[r as usize], targets[r as usize]);
                splitter.push_group(slot, scan, j, v, &one);
            }
            for &slot in &touched {
                let scan = &mut scans[slot];
                if !scan.zero_done {
                    scan.zero_done = true;
                    let zeros = totals[slot].minus(&scan.nonzero);
                    if zeros.n > 0 {
                        splitter.push_group(slot, scan, j, 0.0, &zeros);
                    }
                }
            }
        }

        let mut next = Vec::new();
        for (slot, &k) in splittable.iter().enumerate() {
            let Some(cand) = best[slot] else { continue };
            let open = &frontier[k];
            let (mut lrows, mut rrows) = (Vec::new(), Vec::new());
            let (mut lt, mut rt) = (Stats::default(), Stats::default());
            for &r in &open.rows {
                let (w, y) = (weights[r as usize], targets[r as usize]);
                if rows[r as usize].get(cand.feature) <= cand.threshold {
                    lrows.push(r);
                    lt.push(w, y);
                } else {
                    rrows.push(r);
                    rt.push(w, y);
                }
            }
            let (left, right) = (drafts.len(), drafts.len() + 1);
            drafts.push(Draft::Leaf(lt.mean()));
            drafts.push(Draft::Leaf(rt.mean()));
            drafts[open.id] = Draft::Split {
                feature: cand.feature,
                threshold: cand.threshold,
                left,
                right,
            };
            next.push(Open {
                id: left,
                rows: lrows,
                totals: lt,
            });
            next.push(Open {
                id: right,
                rows: rrows,
                totals: rt,
            });
        }
        frontier = next;
        depth += 1;
    }
    assemble(&drafts, 0)
}

fn assemble(drafts: &[Draft], id: usize) -> TreeNode {
    match drafts[id] {
        Draft::Leaf(value) => TreeNode::Leaf { value },
        Draft::Split {
            feature,
            threshold,
            left,
            right,
        } => TreeNode::Split {
            feature,
            threshold,
            left: Box::new(assemble(drafts, left)),
            right: Box::new(assemble(drafts, right)),
        },
    }
}
