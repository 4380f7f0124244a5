//! Gradient-grafting training.
//!
//! Each step evaluates both the continuous and the discrete model. The
//! per-sample upstream term is `p_d - y` (the cross-entropy derivative at
//! the discrete model's logit), and it is pushed back through the
//! continuous computation graph. Plain gradient descent uses `p_c - y`
//! instead. Hidden weights are clipped to `[0, 1]` after every update.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binarizer::BitLayout;
use crate::conjnet::{init_model, GraftedModel, Head, ModelGradient, NetworkOutputs, DEFAULT_EPS};
use crate::dataset::{BinaryDataset, Category};
use crate::error::{Error, Result};
use crate::numeric::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub hidden_per_subnet: usize,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub joint_epochs: usize,
    pub seed: u64,
    pub eps: f64,
    /// Fraction of the training rows held out for snapshot selection.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5.0,
            hidden_per_subnet: 32,
            batch_size: 256,
            pretrain_epochs: 50,
            joint_epochs: 100,
            seed: 0,
            eps: DEFAULT_EPS,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: &str| Error::Config {
            path: format!("train.{name}"),
            message: msg.to_string(),
        };
        if !(self.learning_rate > 0.0) {
            return Err(field("learning_rate", "must be positive"));
        }
        if self.hidden_per_subnet == 0 {
            return Err(field("hidden_per_subnet", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(field("batch_size", "must be at least 1"));
        }
        if !(self.eps > 0.0) {
            return Err(field("eps", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(field("validation_fraction", "must be in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_c: f64,
    pub loss_d: f64,
    pub acc_d: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<EpochRecord>,
}

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn final_epoch(&self) -> Option<usize> {
        self.records.last().map(|r| r.epoch)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,loss_c,loss_d,acc_d")?;
        for r in &self.records {
            writeln!(out, "{},{},{},{}", r.epoch, r.loss_c, r.loss_d, r.acc_d)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_csv(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

/// Binary cross-entropy with the probability clamped to `[eps, 1 - eps]`.
pub fn bce_loss(prob: f64, label: u8, eps: f64) -> f64 {
    let p = prob.clamp(eps, 1.0 - eps);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateRule {
    /// Upstream `p_d - y`: discrete loss sensitivity, continuous Jacobian.
    Grafted,
    /// Upstream `p_c - y`: ordinary gradient of the continuous loss.
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepLoss {
    pub loss_c: f64,
    pub loss_d: f64,
}

/// Rows and labels of one mini-batch.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub rows: Vec<&'a [u8]>,
    pub labels: Vec<u8>,
}

impl<'a> Batch<'a> {
    pub fn from_indices(data: &'a BinaryDataset, indices: &[usize]) -> Self {
        Self {
            rows: indices.iter().map(|&i| data.row(i)).collect(),
            labels: indices.iter().map(|&i| data.labels[i]).collect(),
        }
    }

    pub fn all(data: &'a BinaryDataset) -> Self {
        Self {
            rows: data.rows().collect(),
            labels: data.labels.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn head_prob(out: &NetworkOutputs, head: Head) -> f64 {
    match head {
        Head::Final => out.final_prob,
        Head::Subnet(s) => out.subnet_probs[s],
    }
}

/// Mean batch gradient for the chosen head and update rule, plus the mean
/// continuous and discrete losses at the current parameters.
pub fn batch_gradient(
    model: &GraftedModel,
    batch: &Batch<'_>,
    head: Head,
    rule: UpdateRule,
    eps: f64,
) -> (ModelGradient, StepLoss) {
    let compiled = model.compile(eps);
    let mut grad = ModelGradient::zeros_like(model);
    let mut loss = StepLoss::default();
    for (x, &y) in batch.rows.iter().zip(&batch.labels) {
        let cont = compiled.continuous(x);
        let disc = compiled.discrete(x);
        let p_c = head_prob(&cont, head);
        let p_d = head_prob(&disc.outputs, head);
        loss.loss_c += bce_loss(p_c, y, eps);
        loss.loss_d += bce_loss(p_d, y, eps);
        let upstream = match rule {
            UpdateRule::Grafted => p_d - y as f64,
            UpdateRule::Plain => p_c - y as f64,
        };
        compiled.accumulate_gradient(x, &cont, upstream, head, &mut grad);
    }
    let n = batch.len().max(1) as f64;
    grad.scale(1.0 / n);
    loss.loss_c /= n;
    loss.loss_d /= n;
    (grad, loss)
}

fn step(model: &mut GraftedModel, batch: &Batch<'_>, lr: f64, head: Head, rule: UpdateRule, eps: f64) -> Result<StepLoss> {
    if batch.is_empty() {
        return Err(Error::arg("empty batch"));
    }
    if let Some(r) = batch.rows.iter().find(|r| r.len() != model.width) {
        return Err(Error::arg(format!("batch row width {} != model width {}", r.len(), model.width)));
    }
    let (grad, loss) = batch_gradient(model, batch, head, rule, eps);
    model.apply_gradient(&grad, lr);
    Ok(loss)
}

/// One grafted update of every parameter against the final output.
pub fn graft_step(model: &mut GraftedModel, batch: &Batch<'_>, lr: f64) -> Result<StepLoss> {
    step(model, batch, lr, Head::Final, UpdateRule::Grafted, DEFAULT_EPS)
}

/// One ordinary gradient-descent update on the continuous loss.
pub fn plain_step(model: &mut GraftedModel, batch: &Batch<'_>, lr: f64) -> Result<StepLoss> {
    step(model, batch, lr, Head::Final, UpdateRule::Plain, DEFAULT_EPS)
}

/// Mean continuous and discrete loss and discrete accuracy of `head` over
/// a dataset.
pub fn evaluate_head(model: &GraftedModel, data: &BinaryDataset, head: Head, eps: f64) -> EpochRecord {
    let compiled = model.compile(eps);
    let (mut lc, mut ld, mut correct) = (0.0, 0.0, 0usize);
    for (x, &y) in data.rows().zip(&data.labels) {
        let p_c = head_prob(&compiled.continuous(x), head);
        let p_d = head_prob(&compiled.discrete(x).outputs, head);
        lc += bce_loss(p_c, y, eps);
        ld += bce_loss(p_d, y, eps);
        correct += ((p_d >= 0.5) as u8 == y) as usize;
    }
    let n = data.len().max(1) as f64;
    EpochRecord {
        epoch: 0,
        loss_c: lc / n,
        loss_d: ld / n,
        acc_d: correct as f64 / n,
    }
}

fn check_data(model: &GraftedModel, data: &BinaryDataset) -> Result<()> {
    if data.width != model.width {
        return Err(Error::Compatibility {
            expected: format!("{} input bits", model.width),
            found: format!("{} input bits", data.width),
        });
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset(Some("no training rows".into())));
    }
    Ok(())
}

fn run_epochs(
    model: &mut GraftedModel,
    data: &BinaryDataset,
    cfg: &TrainConfig,
    head: Head,
    epochs: usize,
    tag: u64,
    mut after_epoch: impl FnMut(usize, &GraftedModel),
) -> TrainTrace {
    let mut trace = TrainTrace::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, tag.wrapping_mul(100_003) + epoch as u64));
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = Batch::from_indices(data, chunk);
            let (grad, _) = batch_gradient(model, &batch, head, UpdateRule::Grafted, cfg.eps);
            model.apply_gradient(&grad, cfg.learning_rate);
        }
        let mut rec = evaluate_head(model, data, head, cfg.eps);
        rec.epoch = epoch;
        log::debug!(
            "{:?} epoch {epoch}: loss_c {:.4} loss_d {:.4} acc_d {:.4}",
            head,
            rec.loss_c,
            rec.loss_d,
            rec.acc_d
        );
        trace.records.push(rec);
        after_epoch(epoch, model);
    }
    trace
}

/// Pretrains one subnet against the labels through its own sigmoid head;
/// the other subnets and the aggregation layer are untouched.
pub fn train_subnet(
    model: &mut GraftedModel,
    category: Category,
    data: &BinaryDataset,
    cfg: &TrainConfig,
) -> Result<TrainTrace> {
    cfg.validate()?;
    check_data(model, data)?;
    let s = category.index();
    Ok(run_epochs(
        model,
        data,
        cfg,
        Head::Subnet(s),
        cfg.pretrain_epochs,
        1 + s as u64,
        |_, _| {},
    ))
}

#[derive(Debug, Clone)]
pub struct JointOutcome {
    /// Snapshot with the lowest discrete validation loss.
    pub model: GraftedModel,
    pub pretrain: Vec<TrainTrace>,
    pub joint: TrainTrace,
    /// 0 means the pretrained model was kept.
    pub best_epoch: usize,
    pub best_validation_loss: f64,
}

/// Splits off the validation rows used for snapshot selection. With too
/// few rows the training rows double as validation rows.
pub fn validation_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_val = (n as f64 * fraction).floor() as usize;
    if n_val == 0 || n_val >= n {
        let all: Vec<usize> = (0..n).collect();
        return (all.clone(), all);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xA11)));
    let mut val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// Pretrains each subnet separately, then trains all parameters jointly
/// against the final output, keeping the best validation snapshot.
pub fn train_joint(model: &mut GraftedModel, data: &BinaryDataset, cfg: &TrainConfig) -> Result<JointOutcome> {
    cfg.validate()?;
    check_data(model, data)?;
    let (train_idx, val_idx) = validation_split(data.len(), cfg.validation_fraction, cfg.seed);
    let train = data.subset(&train_idx);
    let val = data.subset(&val_idx);

    let mut pretrain = Vec::with_capacity(3);
    for cat in Category::ALL {
        pretrain.push(train_subnet(model, cat, &train, cfg)?);
    }

    let mut best = model.clone();
    let mut best_loss = evaluate_head(model, &val, Head::Final, cfg.eps).loss_d;
    let mut best_epoch = 0;
    let joint = run_epochs(model, &train, cfg, Head::Final, cfg.joint_epochs, 7, |epoch, m| {
        let loss = evaluate_head(m, &val, Head::Final, cfg.eps).loss_d;
        if loss < best_loss {
            best_loss = loss;
            best_epoch = epoch;
            best = m.clone();
        }
    });
    *model = best.clone();
    Ok(JointOutcome {
        model: best,
        pretrain,
        joint,
        best_epoch,
        best_validation_loss: best_loss,
    })
}

/// Initializes a model for `layout` and runs [`train_joint`].
pub fn train(layout: &BitLayout, data: &BinaryDataset, cfg: &TrainConfig) -> Result<JointOutcome> {
    let mut model = init_model(layout, cfg.hidden_per_subnet, cfg.seed)?;
    train_joint(&mut model, data, cfg)
}

/// Fraction of rows where the discrete model's final decision matches the
/// label.
pub fn discrete_accuracy(model: &GraftedModel, data: &BinaryDataset) -> f64 {
    evaluate_head(model, data, Head::Final, DEFAULT_EPS).acc_d
}
