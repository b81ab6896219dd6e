//! Gradient-boosted regression trees on the logistic loss: exact greedy
//! splits, leaf-wise growth and early stopping on validation AUC.

use log::warn;
use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::auc_roc;
use crate::tensorcore::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtParams {
    pub num_leaves: usize,
    pub max_depth: usize,
    pub min_data_in_leaf: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub n_rounds: usize,
    pub early_stopping_rounds: usize,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self {
            num_leaves: 15,
            max_depth: 6,
            min_data_in_leaf: 10,
            learning_rate: 0.1,
            l2_lambda: 1.0,
            n_rounds: 200,
            early_stopping_rounds: 10,
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_leaves < 2 {
            return Err(Error::InvalidConfig("num_leaves must be at least 2".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.max_depth == 0 || self.l2_lambda < 0.0 {
            return Err(Error::InvalidConfig("max_depth must be ≥ 1 and l2_lambda ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &ArrayView1<f64>) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub base_score: f64,
    pub learning_rate: f64,
    pub n_features: usize,
    pub trees: Vec<Tree>,
    /// Validation AUC after each kept round (empty without validation).
    pub validation_auc: Vec<f64>,
    /// Mean training logistic loss after each kept round.
    #[serde(default)]
    pub train_loss: Vec<f64>,
}

impl BoostedModel {
    fn check(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.n_features {
            return Err(Error::shape("gbdt input", &[x.nrows(), self.n_features], &[x.nrows(), x.ncols()]));
        }
        Ok(())
    }

    pub fn margin(&self, x: &ArrayView2<f64>) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(x
            .rows()
            .into_iter()
            .map(|r| self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict_row(&r)).sum::<f64>())
            .collect())
    }

    pub fn predict_proba(&self, x: &ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(self.margin(x)?.into_iter().map(sigmoid).collect())
    }
}

/// Best split of one node, as found by the exact greedy scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

/// `½·[G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ)]`
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64) -> f64 {
    0.5 * (score(gl, hl, lambda) + score(gr, hr, lambda) - score(gl + gr, hl + hr, lambda))
}

/// Scans every feature (in `presorted` row order) for the best positive-gain
/// split of the rows where `member` is true. Ties go to the lowest feature,
/// then the lowest threshold.
fn best_split(
    x: &ArrayView2<f64>,
    grad: &[f64],
    hess: &[f64],
    presorted: &[Vec<usize>],
    member: &dyn Fn(usize) -> bool,
    min_data: usize,
    lambda: f64,
) -> Option<SplitCandidate> {
    let rows: Vec<usize> = presorted.first()?.iter().copied().filter(|&r| member(r)).collect();
    let n = rows.len();
    let (g_tot, h_tot) = rows.iter().fold((0.0, 0.0), |(g, h), &r| (g + grad[r], h + hess[r]));
    let min_data = min_data.max(1);
    if n < 2 * min_data {
        return None;
    }
    let mut best: Option<SplitCandidate> = None;
    for (f, order) in presorted.iter().enumerate() {
        let (mut gl, mut hl, mut count) = (0.0, 0.0, 0usize);
        let mut prev: Option<f64> = None;
        for &r in order.iter().filter(|&&r| member(r)) {
            let v = x[[r, f]];
            if let Some(p) = prev {
                if v > p && count >= min_data && n - count >= min_data {
                    let gain = split_gain(gl, hl, g_tot - gl, h_tot - hl, lambda);
                    if gain > 0.0 && best.is_none_or(|b| gain > b.gain) {
                        best = Some(SplitCandidate {
                            feature: f,
                            threshold: p + (v - p) / 2.0,
                            gain,
                        });
                    }
                }
            }
            gl += grad[r];
            hl += hess[r];
            count += 1;
            prev = Some(v);
        }
    }
    best
}

/// Grows one tree leaf-wise on the given gradients and Hessians.
pub fn grow_tree(x: &ArrayView2<f64>, grad: &[f64], hess: &[f64], params: &GbdtParams) -> Tree {
    let presorted = presort(x);
    grow_with(x, grad, hess, params, &presorted)
}

fn presort(x: &ArrayView2<f64>) -> Vec<Vec<usize>> {
    (0..x.ncols())
        .map(|f| {
            let mut idx: Vec<usize> = (0..x.nrows()).collect();
            idx.sort_by(|&a, &b| x[[a, f]].total_cmp(&x[[b, f]]).then(a.cmp(&b)));
            idx
        })
        .collect()
}

fn leaf_value(rows: impl Iterator<Item = usize>, grad: &[f64], hess: &[f64], lambda: f64) -> f64 {
    let (g, h) = rows.fold((0.0, 0.0), |(g, h), r| (g + grad[r], h + hess[r]));
    -g / (h + lambda)
}

fn grow_with(x: &ArrayView2<f64>, grad: &[f64], hess: &[f64], params: &GbdtParams, presorted: &[Vec<usize>]) -> Tree {
    let n = x.nrows();
    let lambda = params.l2_lambda;
    // node id each row currently sits in
    let mut assign = vec![0usize; n];
    let mut nodes = vec![Node::Leaf {
        value: leaf_value(0..n, grad, hess, lambda),
    }];
    let mut depth = vec![0usize];
    // open leaves with their best split
    let find = |node: usize, assign: &[usize]| {
        best_split(x, grad, hess, presorted, &|r| assign[r] == node, params.min_data_in_leaf, lambda)
    };
    let mut open: Vec<(usize, SplitCandidate)> = find(0, &assign).map(|c| vec![(0, c)]).unwrap_or_default();
    let mut leaves = 1;
    while leaves < params.num_leaves {
        // highest gain; earliest-created leaf on ties
        let Some(pos) = open
            .iter()
            .enumerate()
            .filter(|(_, (node, _))| depth[*node] < params.max_depth)
            .fold(None::<(usize, f64, usize)>, |acc, (i, (node, c))| match acc {
                Some((_, g, nd)) if g > c.gain || (g == c.gain && nd < *node) => acc,
                _ => Some((i, c.gain, *node)),
            })
            .map(|(i, _, _)| i)
        else {
            break;
        };
        let (node, cand) = open.swap_remove(pos);
        let (left, right) = (nodes.len(), nodes.len() + 1);
        for r in 0..n {
            if assign[r] == node {
                assign[r] = if x[[r, cand.feature]] <= cand.threshold { left } else { right };
            }
        }
        for child in [left, right] {
            nodes.push(Node::Leaf {
                value: leaf_value((0..n).filter(|&r| assign[r] == child), grad, hess, lambda),
            });
            depth.push(depth[node] + 1);
        }
        nodes[node] = Node::Split {
            feature: cand.feature,
            threshold: cand.threshold,
            left,
            right,
        };
        leaves += 1;
        for child in [left, right] {
            if depth[child] < params.max_depth {
                if let Some(c) = find(child, &assign) {
                    open.push((child, c));
                }
            }
        }
    }
    Tree { nodes }
}

/// Mean logistic loss of margins `f` against labels.
pub fn logistic_loss(margins: &[f64], y: &[u8]) -> f64 {
    margins
        .iter()
        .zip(y)
        .map(|(&f, &t)| {
            // log(1 + e^f) − t·f, computed stably
            let softplus = if f > 0.0 { f + (-f).exp().ln_1p() } else { f.exp().ln_1p() };
            softplus - f64::from(t) * f
        })
        .sum::<f64>()
        / margins.len().max(1) as f64
}

/// Fits a boosted model. With a two-class validation set, training stops
/// once validation AUC has not improved for `early_stopping_rounds` rounds
/// and the model is truncated to the best round.
pub fn gbdt_fit(
    x: &ArrayView2<f64>,
    y: &[u8],
    params: &GbdtParams,
    validation: Option<(ArrayView2<f64>, &[u8])>,
) -> Result<BoostedModel> {
    gbdt_fit_weighted(x, y, None, params, validation)
}

/// As [`gbdt_fit`], with per-row weights scaling each row's gradient and Hessian.
pub fn gbdt_fit_weighted(
    x: &ArrayView2<f64>,
    y: &[u8],
    weights: Option<&[f64]>,
    params: &GbdtParams,
    validation: Option<(ArrayView2<f64>, &[u8])>,
) -> Result<BoostedModel> {
    if let Some(w) = weights {
        if w.len() != y.len() {
            return Err(Error::shape("gbdt weights", &[y.len()], &[w.len()]));
        }
    }
    params.validate()?;
    if x.nrows() != y.len() {
        return Err(Error::shape("gbdt labels", &[x.nrows()], &[y.len()]));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("gbdt input contains non-finite values".into()));
    }
    let n = y.len();
    let pos = y.iter().filter(|&&v| v == 1).count();
    let mut model = BoostedModel {
        base_score: 0.0,
        learning_rate: params.learning_rate,
        n_features: x.ncols(),
        trees: Vec::new(),
        validation_auc: Vec::new(),
        train_loss: Vec::new(),
    };
    if pos == 0 || pos == n {
        warn!("gbdt training labels hold a single class; returning a base-score-only model");
        model.base_score = if pos == 0 { -36.0 } else { 36.0 };
        return Ok(model);
    }
    let prevalence = match weights {
        Some(w) => {
            let wp: f64 = y.iter().zip(w).filter(|(&t, _)| t == 1).map(|(_, w)| w).sum();
            wp / w.iter().sum::<f64>()
        }
        None => pos as f64 / n as f64,
    };
    model.base_score = (prevalence / (1.0 - prevalence)).ln();

    let presorted = presort(x);
    let mut margin = vec![model.base_score; n];
    let valid = validation.as_ref().filter(|(_, vy)| {
        let p = vy.iter().filter(|&&v| v == 1).count();
        p > 0 && p < vy.len()
    });
    if validation.is_some() && valid.is_none() {
        warn!("validation set holds a single class; early stopping disabled");
    }
    let mut valid_margin = valid.map(|(vx, _)| vec![model.base_score; vx.nrows()]);
    let (mut best_auc, mut best_round, mut stale) = (f64::NEG_INFINITY, 0usize, 0usize);

    for _ in 0..params.n_rounds {
        let p: Vec<f64> = margin.iter().map(|&f| sigmoid(f)).collect();
        let w = |i: usize| weights.map_or(1.0, |w| w[i]);
        let grad: Vec<f64> = p.iter().zip(y).enumerate().map(|(i, (&p, &t))| w(i) * (p - f64::from(t))).collect();
        let hess: Vec<f64> = p.iter().enumerate().map(|(i, &p)| w(i) * (p * (1.0 - p)).max(1e-16)).collect();
        let tree = grow_with(x, &grad, &hess, params, &presorted);
        if tree.nodes.len() == 1 {
            // No split has positive gain; further rounds would add only a constant.
            break;
        }
        for (r, m) in x.rows().into_iter().zip(margin.iter_mut()) {
            *m += params.learning_rate * tree.predict_row(&r);
        }
        model.train_loss.push(logistic_loss(&margin, y));
        if let (Some((vx, vy)), Some(vm)) = (valid, valid_margin.as_mut()) {
            for (r, m) in vx.rows().into_iter().zip(vm.iter_mut()) {
                *m += params.learning_rate * tree.predict_row(&r);
            }
            let auc = auc_roc(vm, vy)?;
            model.validation_auc.push(auc);
            model.trees.push(tree);
            if auc > best_auc {
                best_auc = auc;
                best_round = model.trees.len();
                stale = 0;
            } else {
                stale += 1;
                if stale >= params.early_stopping_rounds {
                    break;
                }
            }
        } else {
            model.trees.push(tree);
        }
    }
    if valid.is_some() {
        model.trees.truncate(best_round);
        model.validation_auc.truncate(best_round);
        model.train_loss.truncate(best_round);
    }
    Ok(model)
}
