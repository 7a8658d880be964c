//! Train and evaluation loops, block freezing and the two-stage transfer procedure.

pub mod checkpoint;
pub mod optim;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Entry, SKCK_MAGIC, SKCK_VERSION};
pub use optim::{lr_at_epoch, validate_schedule, Sgd};

use crate::data::{random_rotate_translate, SkeletonDataset};
use crate::error::{Error, Result};
use crate::graph::SkeletonGraph;
use crate::network::{block_prefix, Network, NetworkConfig};
use crate::nn::BN_MOMENTUM;
use crate::rng;
use crate::tensor::{apply_bn_stats, ParamKind, Session, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    Pretrain,
    Finetune,
    Scratch,
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::Pretrain => "pretrain",
            TrainMode::Finetune => "finetune",
            TrainMode::Scratch => "scratch",
        })
    }
}

impl FromStr for TrainMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Self::Pretrain),
            "finetune" => Ok(Self::Finetune),
            "scratch" => Ok(Self::Scratch),
            _ => Err(Error::config(format!("unknown training mode {s:?}"))),
        }
    }
}

/// Planar rotation about the clip centroid plus a translation, drawn per
/// sample and epoch from the `augment` stream.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub max_angle: f64,
    pub max_shift: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub augment: Option<AugmentConfig>,
    /// Stop after the first epoch whose validation top-1 reaches this value.
    pub stop_at_top1: Option<f64>,
}

impl TrainConfig {
    /// Source-domain schedule: 0.1, divided by ten at epochs 45 and 55.
    pub fn pretrain() -> Self {
        Self {
            base_lr: 0.1,
            milestones: vec![45, 55],
            gamma: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 128,
            max_epochs: 65,
            seed: 0,
            augment: None,
            stop_at_top1: None,
        }
    }

    /// Target-domain schedule: 0.05, divided by ten at epochs 5, 10 and 15.
    pub fn transfer() -> Self {
        Self { base_lr: 0.05, milestones: vec![5, 10, 15], max_epochs: 20, ..Self::pretrain() }
    }

    pub fn validate(&self) -> Result<()> {
        validate_schedule(&self.milestones, self.gamma)?;
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::config(format!("base_lr {} must be finite and >= 0", self.base_lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::config("momentum must lie in [0, 1) and weight_decay must be >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_at_epoch(self.base_lr, &self.milestones, self.gamma, epoch)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub train_top1: f64,
    pub val_top1: f64,
    pub val_top5: f64,
}

pub const CSV_HEADER: &str = "epoch,lr,loss,train_top1,val_top1,val_top5";

pub fn write_csv(log: &[EpochLog], w: &mut impl Write) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for e in log {
        writeln!(w, "{},{},{:.6},{:.6},{:.6},{:.6}", e.epoch, e.lr, e.loss, e.train_top1, e.val_top1, e.val_top5)?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub mode: TrainMode,
    pub log: Vec<EpochLog>,
    /// Epoch with the highest validation top-1 (earliest on ties).
    pub best_epoch: usize,
    pub best: Checkpoint,
}

impl TrainOutcome {
    pub fn best_log(&self) -> &EpochLog {
        &self.log[self.best_epoch]
    }
}

/// Runs up to `cfg.max_epochs` epochs of minibatch SGD on `train_ds`. Validation
/// uses `val_ds`, or the training set when none is given. `net` is left at
/// its final-epoch weights; the best epoch's weights are in the outcome.
///
/// `on_epoch` sees each log line as it is produced.
pub fn train(
    net: &mut Network,
    train_ds: &SkeletonDataset,
    val_ds: Option<&SkeletonDataset>,
    cfg: &TrainConfig,
    mode: TrainMode,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_ds.is_empty() {
        return Err(Error::contract("training dataset is empty"));
    }
    for ds in std::iter::once(train_ds).chain(val_ds) {
        check_compatible(net, ds)?;
    }
    let mut opt = Sgd::new(&net.store, cfg.momentum, cfg.weight_decay);
    let mut log = Vec::with_capacity(cfg.max_epochs);
    let mut best: Option<(usize, f64, Checkpoint)> = None;
    for epoch in 0..cfg.max_epochs {
        let lr = cfg.lr_at(epoch);
        let mut order: Vec<usize> = (0..train_ds.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, rng::SHUFFLE, epoch as u64));
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let (x, labels) = batch_input(train_ds, chunk, cfg, epoch)?;
            let (loss, hits, grads, stats) = {
                let mut sess = Session::new(&net.store, true);
                let xv = sess.tape.constant(x);
                let logits = net.forward(&mut sess, xv)?;
                let hits = top1_hits(sess.tape.value(logits), &labels);
                let loss = sess.tape.cross_entropy(logits, &labels)?;
                sess.tape.backward(loss)?;
                let loss_value = sess.tape.value(loss).data()[0] as f64;
                let grads: Vec<_> = sess.grads().into_iter().map(|(id, g)| (id, g.clone())).collect();
                (loss_value, hits, grads, sess.take_stats())
            };
            if !loss.is_finite() {
                return Err(Error::contract(format!("loss became non-finite at epoch {epoch}")));
            }
            loss_sum += loss * chunk.len() as f64;
            correct += hits;
            opt.step(&mut net.store, &grads, lr);
            apply_bn_stats(&mut net.store, &stats, BN_MOMENTUM);
        }
        let n = train_ds.len() as f64;
        let acc = evaluate_topk(net, val_ds.unwrap_or(train_ds), &[1, 5], cfg.batch_size)?;
        let entry = EpochLog {
            epoch,
            lr,
            loss: loss_sum / n,
            train_top1: correct as f64 / n,
            val_top1: acc[0],
            val_top5: acc[1],
        };
        on_epoch(&entry);
        if best.as_ref().is_none_or(|(_, b, _)| entry.val_top1 > *b) {
            best = Some((epoch, entry.val_top1, Checkpoint::from_network(net)));
        }
        let done = cfg.stop_at_top1.is_some_and(|t| entry.val_top1 >= t);
        log.push(entry);
        if done {
            break;
        }
    }
    let (best_epoch, best) = match best {
        Some((e, _, c)) => (e, c),
        None => (0, Checkpoint::from_network(net)),
    };
    Ok(TrainOutcome { mode, log, best_epoch, best })
}

fn check_compatible(net: &Network, ds: &SkeletonDataset) -> Result<()> {
    if ds.class_count != net.config.class_count {
        return Err(Error::contract(format!(
            "dataset has {} classes but the classifier has {}",
            ds.class_count, net.config.class_count
        )));
    }
    let [c, _, n, m] = ds.dims;
    if c != net.config.in_channels || n != net.graph.joint_count || m != net.config.persons {
        return Err(Error::dim(format!(
            "dataset samples are [C={c}, N={n}, M={m}], network expects [C={}, N={}, M={}]",
            net.config.in_channels, net.graph.joint_count, net.config.persons
        )));
    }
    Ok(())
}

fn batch_input(ds: &SkeletonDataset, idx: &[usize], cfg: &TrainConfig, epoch: usize) -> Result<(Tensor<f32>, Vec<usize>)> {
    let Some(aug) = cfg.augment else {
        return ds.batch(idx);
    };
    let mut sub = SkeletonDataset::new(ds.class_count, ds.layout, ds.dims, ds.provenance);
    for &i in idx {
        let key = (epoch * ds.len() + i) as u64;
        let mut r = rng::stream(cfg.seed, rng::AUGMENT, key);
        sub.push(ds.samples[i].label, random_rotate_translate(&ds.samples[i].data, &mut r, aug.max_angle, aug.max_shift)?)?;
    }
    let all: Vec<usize> = (0..idx.len()).collect();
    sub.batch(&all)
}

/// Index of the largest entry, lowest index on ties.
fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn top1_hits(logits: &Tensor<f32>, labels: &[usize]) -> usize {
    let k = logits.shape()[1];
    labels.iter().enumerate().filter(|&(b, &l)| argmax(&logits.data()[b * k..(b + 1) * k]) == l).count()
}

/// Whether `label` ranks among the `k` largest entries of `row`. A class
/// outranks another when its logit is larger, or equal with a lower index.
pub fn in_top_k(row: &[f32], label: usize, k: usize) -> bool {
    let v = row[label];
    let ahead = row.iter().enumerate().filter(|&(i, &x)| x > v || (x == v && i < label)).count();
    ahead < k
}

/// Top-k accuracy for each `k` over logits `[B, K]`.
pub fn topk_from_logits(logits: &Tensor<f32>, labels: &[usize], ks: &[usize]) -> Result<Vec<f64>> {
    let [b, classes] = logits.shape() else {
        return Err(Error::dim(format!("logits must be [B, K], got {:?}", logits.shape())));
    };
    if *b != labels.len() {
        return Err(Error::dim(format!("{b} logit rows for {} labels", labels.len())));
    }
    let rows: Vec<&[f32]> = logits.data().chunks(*classes).collect();
    Ok(ks
        .iter()
        .map(|&k| {
            let hits = labels.iter().zip(&rows).filter(|(&l, r)| in_top_k(r, l, k)).count();
            if labels.is_empty() {
                0.0
            } else {
                hits as f64 / labels.len() as f64
            }
        })
        .collect())
}

/// Inference-mode logits for the whole dataset, `[len, K]`.
pub fn predict(net: &Network, ds: &SkeletonDataset, batch_size: usize) -> Result<Tensor<f32>> {
    check_compatible(net, ds)?;
    let k = net.config.class_count;
    let mut out = Vec::with_capacity(ds.len() * k);
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, _) = ds.batch(chunk)?;
        out.extend_from_slice(net.infer(&x)?.data());
    }
    Tensor::new(vec![ds.len(), k], out)
}

/// Top-k accuracy for each entry of `ks`, with ties broken toward the lower class index.
pub fn evaluate_topk(net: &Network, ds: &SkeletonDataset, ks: &[usize], batch_size: usize) -> Result<Vec<f64>> {
    let logits = predict(net, ds, batch_size)?;
    topk_from_logits(&logits, &ds.labels(), ks)
}

/// Freezes every parameter of blocks `1..=k`, including batch-norm affine
/// terms, and unfreezes everything else.
pub fn freeze_blocks(net: &mut Network, k: usize) -> Result<()> {
    let depth = net.config.depth();
    if k > depth {
        return Err(Error::contract(format!("freeze_k {k} exceeds the block count {depth}")));
    }
    for p in net.store.iter_mut() {
        p.frozen = false;
    }
    for i in 1..=k {
        net.store.set_frozen_prefix(&block_prefix(i), true);
    }
    Ok(())
}

/// Names of the trainable weights.
pub fn trainable_names(net: &Network) -> Vec<&str> {
    net.store
        .iter()
        .filter(|(_, p)| p.kind == ParamKind::Weight && !p.frozen)
        .map(|(_, p)| p.name.as_str())
        .collect()
}

/// Builds the source network described by `config`, loads `pretrained`,
/// swaps in a fresh classifier for `target_classes` and freezes the first
/// `freeze_k` blocks.
pub fn transfer_setup(
    pretrained: &Checkpoint,
    config: &NetworkConfig,
    graph: &SkeletonGraph,
    target_classes: usize,
    freeze_k: usize,
    seed: u64,
) -> Result<Network> {
    let source = NetworkConfig { class_count: pretrained.class_count, ..config.clone() };
    let mut net = Network::build_reduced(&source, graph, seed)?;
    pretrained.apply_filtered(&mut net, |_| false)?;
    net.replace_classifier(target_classes, seed)?;
    freeze_blocks(&mut net, freeze_k)?;
    Ok(net)
}
