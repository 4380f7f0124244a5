//! Classification metrics, a CART baseline and the k-fold harness.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::binarizer::{fit_binarizer, BinningConfig};
use crate::dataset::{kfold_indices, train_indices, FeatureKind, FeatureSchema, LabeledDataset, RawValue};
use crate::error::{Error, Result};
use crate::grafting::{train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    /// F1 of the positive class; 0 when precision + recall is 0.
    pub f1: f64,
}

/// Scores at or above `threshold` are predicted positive.
pub fn confusion_metrics(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Confusion> {
    if scores.len() != labels.len() {
        return Err(Error::arg(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    if scores.is_empty() {
        return Err(Error::arg("no predictions to score"));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Confusion {
        tp,
        fp,
        tn,
        fn_,
        accuracy: ratio(tp + tn, scores.len()),
        precision,
        recall,
        f1,
    })
}

/// Area under the ROC curve via the Mann-Whitney rank sum, with tied
/// scores sharing their average rank.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::arg(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs at least one positive and one negative label".into(),
        ));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::arg("NaN score"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share their mean
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_tie = order[i..j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum_pos += avg_rank * pos_in_tie as f64;
        i = j;
    }
    let np = n_pos as f64;
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartConfig {
    /// `None` grows until leaves are pure or too small.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
}

impl Default for CartConfig {
    fn default() -> Self {
        Self {
            max_depth: Some(10),
            min_leaf: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTest {
    /// Left branch when the value is below the threshold.
    LessThan(f64),
    /// Left branch when the value equals the category.
    Equals(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CartNode {
    Leaf {
        prob: f64,
        samples: usize,
    },
    Split {
        feature: usize,
        test: SplitTest,
        left: Box<CartNode>,
        right: Box<CartNode>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartModel {
    pub root: CartNode,
    pub max_depth: Option<usize>,
}

impl CartModel {
    pub fn depth(&self) -> usize {
        fn d(n: &CartNode) -> usize {
            match n {
                CartNode::Leaf { .. } => 0,
                CartNode::Split { left, right, .. } => 1 + d(left).max(d(right)),
            }
        }
        d(&self.root)
    }

    pub fn n_leaves(&self) -> usize {
        fn c(n: &CartNode) -> usize {
            match n {
                CartNode::Leaf { .. } => 1,
                CartNode::Split { left, right, .. } => c(left) + c(right),
            }
        }
        c(&self.root)
    }
}

fn goes_left(test: &SplitTest, value: &RawValue) -> bool {
    match test {
        SplitTest::LessThan(t) => value.as_f64().map_or(false, |v| v < *t),
        SplitTest::Equals(c) => &value.as_text() == c,
    }
}

/// Positive-class probability for one raw row.
pub fn cart_predict(model: &CartModel, row: &[RawValue]) -> f64 {
    let mut node = &model.root;
    loop {
        match node {
            CartNode::Leaf { prob, .. } => return *prob,
            CartNode::Split {
                feature,
                test,
                left,
                right,
            } => {
                node = if row.get(*feature).map_or(false, |v| goes_left(test, v)) {
                    left
                } else {
                    right
                };
            }
        }
    }
}

fn gini_sum(pos: usize, n: usize) -> f64 {
    // n · gini, so child impurities add up directly
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * n as f64 * p * (1.0 - p)
}

struct CartBuilder<'a> {
    ds: &'a LabeledDataset,
    kinds: Vec<FeatureKind>,
    cfg: &'a CartConfig,
}

impl CartBuilder<'_> {
    fn leaf(&self, idx: &[usize]) -> CartNode {
        let pos = idx.iter().filter(|&&i| self.ds.labels[i] == 1).count();
        CartNode::Leaf {
            prob: pos as f64 / idx.len().max(1) as f64,
            samples: idx.len(),
        }
    }

    fn best_split(&self, idx: &[usize]) -> Option<(usize, SplitTest, f64)> {
        let n = idx.len();
        let pos = idx.iter().filter(|&&i| self.ds.labels[i] == 1).count();
        let min_leaf = self.cfg.min_leaf.max(1);
        let mut best: Option<(usize, SplitTest, f64)> = None;
        let mut consider = |f: usize, test: SplitTest, imp: f64| {
            if best.as_ref().map_or(true, |b| imp < b.2) {
                best = Some((f, test, imp));
            }
        };
        for (f, kind) in self.kinds.iter().enumerate() {
            match kind {
                FeatureKind::Continuous | FeatureKind::Binary => {
                    let mut vals: Vec<(f64, u8)> = idx
                        .iter()
                        .filter_map(|&i| self.ds.rows[i][f].as_f64().map(|v| (v, self.ds.labels[i])))
                        .collect();
                    if vals.len() != n {
                        continue;
                    }
                    vals.sort_by(|a, b| a.0.total_cmp(&b.0));
                    let mut left_pos = 0;
                    for cut in 1..n {
                        left_pos += vals[cut - 1].1 as usize;
                        if cut < min_leaf || n - cut < min_leaf || vals[cut - 1].0 == vals[cut].0 {
                            continue;
                        }
                        let imp = gini_sum(left_pos, cut) + gini_sum(pos - left_pos, n - cut);
                        consider(f, SplitTest::LessThan(0.5 * (vals[cut - 1].0 + vals[cut].0)), imp);
                    }
                }
                FeatureKind::Categorical => {
                    let cats: BTreeSet<String> = idx.iter().map(|&i| self.ds.rows[i][f].as_text()).collect();
                    if cats.len() < 2 {
                        continue;
                    }
                    for c in cats {
                        let (mut nl, mut pl) = (0, 0);
                        for &i in idx {
                            if self.ds.rows[i][f].as_text() == c {
                                nl += 1;
                                pl += self.ds.labels[i] as usize;
                            }
                        }
                        if nl < min_leaf || n - nl < min_leaf {
                            continue;
                        }
                        let imp = gini_sum(pl, nl) + gini_sum(pos - pl, n - nl);
                        consider(f, SplitTest::Equals(c), imp);
                    }
                }
            }
        }
        best
    }

    fn grow(&self, idx: Vec<usize>, depth: usize) -> CartNode {
        let pos = idx.iter().filter(|&&i| self.ds.labels[i] == 1).count();
        let pure = pos == 0 || pos == idx.len();
        let depth_ok = self.cfg.max_depth.map_or(true, |d| depth < d);
        if pure || !depth_ok || idx.len() < 2 * self.cfg.min_leaf.max(1) {
            return self.leaf(&idx);
        }
        let Some((feature, test, _)) = self.best_split(&idx) else {
            return self.leaf(&idx);
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| goes_left(&test, &self.ds.rows[i][feature]));
        CartNode::Split {
            feature,
            test,
            left: Box::new(self.grow(l, depth + 1)),
            right: Box::new(self.grow(r, depth + 1)),
        }
    }
}

/// Greedy Gini tree over raw features: threshold tests for numeric
/// features, equality tests for categorical ones.
pub fn cart_fit(ds: &LabeledDataset, schema: &FeatureSchema, cfg: &CartConfig) -> Result<CartModel> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset(Some("cannot fit CART".into())));
    }
    if ds.rows.iter().any(|r| r.len() != schema.features.len()) {
        return Err(Error::Schema("row width does not match schema".into()));
    }
    let builder = CartBuilder {
        ds,
        kinds: schema.features.iter().map(|f| f.kind).collect(),
        cfg,
    };
    Ok(CartModel {
        root: builder.grow((0..ds.len()).collect(), 0),
        max_depth: cfg.max_depth,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model: String,
    pub accuracy: f64,
    pub f1: f64,
    pub auc: f64,
    pub folds: usize,
    pub averaged: bool,
}

impl MetricsRow {
    pub fn from_scores(model: &str, scores: &[f64], labels: &[u8], threshold: f64) -> Result<Self> {
        let c = confusion_metrics(scores, labels, threshold)?;
        Ok(Self {
            model: model.to_string(),
            accuracy: c.accuracy,
            f1: c.f1,
            auc: auc(scores, labels)?,
            folds: 1,
            averaged: false,
        })
    }

    pub fn average(model: &str, rows: &[MetricsRow]) -> Self {
        let n = rows.len().max(1) as f64;
        Self {
            model: model.to_string(),
            accuracy: rows.iter().map(|r| r.accuracy).sum::<f64>() / n,
            f1: rows.iter().map(|r| r.f1).sum::<f64>() / n,
            auc: rows.iter().map(|r| r.auc).sum::<f64>() / n,
            folds: rows.len(),
            averaged: true,
        }
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("model,accuracy,f1,auc,folds,averaged\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.model, r.accuracy, r.f1, r.auc, r.folds, r.averaged);
    }
    out
}

/// Plain-text table with Model / Accuracy / F1-Score / AUC columns.
pub fn metrics_table(rows: &[MetricsRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "| {:<12} | {:>8} | {:>8} | {:>6} |", "Model", "Accuracy", "F1-Score", "AUC");
    let _ = writeln!(out, "|{}|{}|{}|{}|", "-".repeat(14), "-".repeat(10), "-".repeat(10), "-".repeat(8));
    for r in rows {
        let _ = writeln!(
            out,
            "| {:<12} | {:>8.3} | {:>8.3} | {:>6.3} |",
            r.model, r.accuracy, r.f1, r.auc
        );
    }
    if let Some(r) = rows.first().filter(|r| r.averaged) {
        let _ = writeln!(out, "averaged over {}-fold cross validation", r.folds);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub k: usize,
    pub seed: u64,
    pub threshold: f64,
    pub binning: BinningConfig,
    pub train: TrainConfig,
    pub cart: CartConfig,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            k: 5,
            seed: 0,
            threshold: 0.5,
            binning: BinningConfig::default(),
            train: TrainConfig::default(),
            cart: CartConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub test_indices: Vec<usize>,
    /// Serialized binarizer fitted on this fold's training rows.
    pub binarizer_json: String,
    pub model: MetricsRow,
    pub cart: MetricsRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
    pub summary: Vec<MetricsRow>,
}

pub const MODEL_NAME: &str = "Our Model";
pub const CART_NAME: &str = "CART";

fn run_fold(
    ds: &LabeledDataset,
    schema: &FeatureSchema,
    cfg: &CvConfig,
    fold: usize,
    test_idx: &[usize],
) -> Result<FoldResult> {
    let train_set = ds.subset(&train_indices(ds.len(), test_idx));
    let test_set = ds.subset(test_idx);

    let binarizer = fit_binarizer(&train_set, schema, &cfg.binning)?;
    let bin_train = binarizer.transform_dataset(&train_set)?;
    let bin_test = binarizer.transform_dataset(&test_set)?;
    let mut tcfg = cfg.train.clone();
    tcfg.seed = cfg.train.seed ^ (fold as u64);
    let outcome = train(&binarizer.bit_layout, &bin_train, &tcfg)?;
    let compiled = outcome.model.compile(tcfg.eps);
    let scores: Vec<f64> = bin_test
        .rows()
        .map(|x| compiled.discrete(x).outputs.final_prob)
        .collect();
    let model = MetricsRow::from_scores(MODEL_NAME, &scores, &test_set.labels, cfg.threshold)?;

    let cart = cart_fit(&train_set, schema, &cfg.cart)?;
    let cart_scores: Vec<f64> = test_set.rows.iter().map(|r| cart_predict(&cart, r)).collect();
    let cart = MetricsRow::from_scores(CART_NAME, &cart_scores, &test_set.labels, cfg.threshold)?;

    log::info!(
        "fold {fold}: model acc {:.3} auc {:.3}; cart acc {:.3} auc {:.3}",
        model.accuracy,
        model.auc,
        cart.accuracy,
        cart.auc
    );
    Ok(FoldResult {
        fold,
        test_indices: test_idx.to_vec(),
        binarizer_json: binarizer.to_json(),
        model,
        cart,
    })
}

/// k-fold cross-validation of the rule network and the CART baseline on
/// identical folds. Binning is fitted on each fold's training rows only.
pub fn cross_validate(ds: &LabeledDataset, schema: &FeatureSchema, cfg: &CvConfig) -> Result<CvReport> {
    let folds = kfold_indices(ds.len(), cfg.k, cfg.seed)?;
    let results = folds
        .iter()
        .enumerate()
        .map(|(i, test)| {
            run_fold(ds, schema, cfg, i, test).map_err(|e| Error::Fold {
                fold: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let model_rows: Vec<MetricsRow> = results.iter().map(|f| f.model.clone()).collect();
    let cart_rows: Vec<MetricsRow> = results.iter().map(|f| f.cart.clone()).collect();
    Ok(CvReport {
        summary: vec![
            MetricsRow::average(MODEL_NAME, &model_rows),
            MetricsRow::average(CART_NAME, &cart_rows),
        ],
        folds: results,
    })
}
