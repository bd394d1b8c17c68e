//! Losses, learning-rate schedule and the three training stages: QPSK
//! pre-training, mixed-order fine-tuning with label generation, and
//! supervised training of the order classifier.

use std::fs::File;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{snr_to_noise_var, ChannelDataset, ChannelRealization};
use crate::config::{ExperimentConfig, SystemConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::modulation::{random_messages, ComboTable, ENUMERATION_RULE};
use crate::mop::{topk, MopNet};
use crate::network::Checkpoint;
use crate::nn::{cross_entropy, cross_entropy_rows, Adam, Scalar};
use crate::rng::{self, SimRng};
use crate::slpd::{decide, SlotBatch, SlpdNet};
use crate::store::{self, NamedArray};
use crate::C64;

fn check_probs(labels: &Array2<f64>, probs: &Array2<f64>) -> Result<()> {
    if labels.dim() != probs.dim() {
        return Err(Error::Dimension(format!("labels {:?} vs probabilities {:?}", labels.dim(), probs.dim())));
    }
    if probs.nrows() == 0 {
        return Err(Error::Dimension("empty batch".into()));
    }
    Ok(())
}

/// Mean cross-entropy over `(slot, user)` rows of padded one-hot labels.
pub fn loss_slpd(labels: &Array2<f64>, probs: &Array2<f64>) -> Result<f64> {
    check_probs(labels, probs)?;
    Ok(cross_entropy(labels, probs))
}

/// Mean cross-entropy of the order classifier over channels.
pub fn loss_mop(labels: &Array2<f64>, probs: &Array2<f64>) -> Result<f64> {
    check_probs(labels, probs)?;
    Ok(cross_entropy(labels, probs))
}

/// `lr_init * lr_decay^floor(epoch / lr_period)`.
pub fn lr_schedule(epoch: usize, tc: &TrainConfig) -> f64 {
    let drops = (epoch / tc.lr_period.max(1)) as i32;
    tc.lr_init * tc.lr_decay.powi(drops)
}

/// Randomness of one symbol slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotDraw {
    pub messages: Vec<u32>,
    pub noise: Vec<C64>,
    pub noise_var: f64,
}

/// Noise variance of a slot: the fixed value if configured, otherwise from an
/// SNR drawn uniformly over the configured range.
pub fn draw_noise_var<R: Rng + ?Sized>(sys: &SystemConfig, rng: &mut R) -> f64 {
    match sys.noise_var {
        Some(v) => v,
        None => {
            let [lo, hi] = sys.snr_range_db;
            let snr = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            snr_to_noise_var(snr, sys.power_budget)
        }
    }
}

pub fn draw_slot<R: Rng + ?Sized>(sys: &SystemConfig, orders: &[u32], rng: &mut R) -> SlotDraw {
    let messages = random_messages(rng, orders);
    let noise_var = draw_noise_var(sys, rng);
    let noise = (0..orders.len()).map(|_| rng::complex_normal(rng, noise_var)).collect();
    SlotDraw { messages, noise, noise_var }
}

fn assemble<'a>(items: Vec<(&'a ChannelRealization, Vec<u32>, SlotDraw)>) -> SlotBatch<'a> {
    let mut batch = SlotBatch { channels: Vec::new(), messages: Vec::new(), orders: Vec::new(), noise: Vec::new() };
    for (h, orders, d) in items {
        batch.channels.push(h);
        batch.orders.push(orders);
        batch.messages.push(d.messages);
        batch.noise.push(d.noise);
    }
    batch
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: u8,
    pub loss: f64,
    pub lr: f64,
    pub validation_ser: Option<f64>,
    pub validation_accuracy: Option<f64>,
}

/// Receives progress and checkpoints from the trainers.
pub trait TrainObserver {
    fn epoch(&mut self, _record: &EpochRecord) -> Result<()> {
        Ok(())
    }

    fn checkpoint(&mut self, _tag: &str, _ckpt: &Checkpoint) -> Result<()> {
        Ok(())
    }
}

/// Observer that discards everything.
pub struct Silent;

impl TrainObserver for Silent {}

/// Collects epoch records in memory.
#[derive(Debug, Default)]
pub struct History {
    pub records: Vec<EpochRecord>,
    pub checkpoints: Vec<String>,
}

impl TrainObserver for History {
    fn epoch(&mut self, record: &EpochRecord) -> Result<()> {
        self.records.push(record.clone());
        Ok(())
    }

    fn checkpoint(&mut self, tag: &str, _ckpt: &Checkpoint) -> Result<()> {
        self.checkpoints.push(tag.to_string());
        Ok(())
    }
}

/// Training run directory: `config.toml`, `metrics.csv` and
/// `checkpoints/<tag>.safetensors`.
pub struct RunDir {
    root: PathBuf,
    metrics: csv::Writer<File>,
}

impl RunDir {
    pub fn create(root: &Path, config: &ExperimentConfig) -> Result<Self> {
        std::fs::create_dir_all(root.join("checkpoints"))?;
        std::fs::write(root.join("config.toml"), config.to_toml())?;
        let metrics = csv::Writer::from_path(root.join("metrics.csv"))?;
        Ok(RunDir { root: root.to_path_buf(), metrics })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn checkpoint_path(root: &Path, tag: &str) -> PathBuf {
        root.join("checkpoints").join(format!("{tag}.safetensors"))
    }
}

impl TrainObserver for RunDir {
    fn epoch(&mut self, record: &EpochRecord) -> Result<()> {
        self.metrics.serialize(record)?;
        self.metrics.flush()?;
        Ok(())
    }

    fn checkpoint(&mut self, tag: &str, ckpt: &Checkpoint) -> Result<()> {
        ckpt.save(&Self::checkpoint_path(&self.root, tag))
    }
}

fn adam<T: Scalar>(tc: &TrainConfig) -> Adam<T> {
    Adam::new(tc.adam_beta1, tc.adam_beta2, tc.adam_epsilon)
}

fn diverged(stage: u8, epoch: usize, step: usize, loss: f64) -> Error {
    Error::Diverged { stage, epoch, step, loss }
}

/// Where a stage draws per-slot modulation orders from.
enum OrderSource<'a> {
    Fixed(Vec<u32>),
    Uniform(&'a ComboTable),
}

impl OrderSource<'_> {
    fn draw(&self, rng: &mut SimRng) -> Vec<u32> {
        match self {
            OrderSource::Fixed(o) => o.clone(),
            OrderSource::Uniform(t) => t.sample(rng).orders.clone(),
        }
    }
}

/// Symbol error rate on one draw per validation channel, inference mode.
fn validation_ser<T: Scalar>(
    net: &SlpdNet<T>,
    sys: &SystemConfig,
    channels: &[ChannelRealization],
    orders: &OrderSource<'_>,
    seed: u64,
) -> Result<Option<f64>> {
    if channels.is_empty() {
        return Ok(None);
    }
    let mut rng = rng::seeded(seed);
    let items: Vec<_> = channels
        .iter()
        .map(|h| {
            let o = orders.draw(&mut rng);
            let d = draw_slot(sys, &o, &mut rng);
            (h, o, d)
        })
        .collect();
    let mut errors = 0usize;
    let mut total = 0usize;
    for chunk in items.chunks(500) {
        let batch = assemble(chunk.to_vec());
        let probs = net.eval_probs(&batch, sys.power_budget)?;
        let k = sys.num_users;
        for (i, (msgs, ords)) in batch.messages.iter().zip(&batch.orders).enumerate() {
            for u in 0..k {
                let row: Vec<f64> = probs.row(i * k + u).iter().map(|v| v.as_f64()).collect();
                errors += usize::from(decide(&row, ords[u]) != msgs[u]);
                total += 1;
            }
        }
    }
    Ok(Some(errors as f64 / total as f64))
}

#[allow(clippy::too_many_arguments)]
fn run_slpd_stage<T: Scalar>(
    net: &mut SlpdNet<T>,
    exp: &ExperimentConfig,
    data: &ChannelDataset,
    stage: u8,
    epochs: usize,
    orders: &OrderSource<'_>,
    observer: &mut dyn TrainObserver,
) -> Result<()> {
    let (sys, tc) = (&exp.system, &exp.train);
    let train = data.train();
    if train.is_empty() {
        return Err(Error::InvalidConfig("training split is empty".into()));
    }
    let mut opt = adam::<T>(tc);
    let val_seed = rng::derive2(tc.seed, u64::from(stage), 0x76_616c);
    let mut best = f64::INFINITY;
    for epoch in 0..epochs {
        let lr = lr_schedule(epoch, tc);
        let mut rng = rng::seeded(rng::derive2(tc.seed, u64::from(stage), epoch as u64));
        let mut visits: Vec<usize> =
            (0..train.len()).flat_map(|c| std::iter::repeat_n(c, tc.draws_per_channel)).collect();
        visits.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for (step, chunk) in visits.chunks(tc.minibatch).enumerate() {
            let items: Vec<_> = chunk
                .iter()
                .map(|&c| {
                    let o = orders.draw(&mut rng);
                    let d = draw_slot(sys, &o, &mut rng);
                    (&train[c], o, d)
                })
                .collect();
            let batch = assemble(items);
            let loss = net.forward_loss(&batch, sys.power_budget)?;
            if !loss.is_finite() {
                return Err(diverged(stage, epoch, step, loss));
            }
            net.backward(&batch, sys.power_budget);
            opt.step(net, lr);
            loss_sum += loss * batch.len() as f64;
            steps += batch.len();
        }
        let loss = loss_sum / steps as f64;
        let vser = validation_ser(net, sys, data.validation(), orders, val_seed)?;
        observer.epoch(&EpochRecord { epoch, stage, loss, lr, validation_ser: vser, validation_accuracy: None })?;
        if let Some(v) = vser {
            if v < best {
                best = v;
                observer.checkpoint(&format!("stage{stage}-best"), &net.to_checkpoint())?;
            }
        }
        if (epoch + 1) % tc.lr_period == 0 {
            observer.checkpoint(&format!("stage{stage}-epoch{:04}", epoch + 1), &net.to_checkpoint())?;
        }
    }
    if !crate::network::all_finite(net) {
        return Err(diverged(stage, epochs, 0, f64::NAN));
    }
    observer.checkpoint(&format!("stage{stage}-final"), &net.to_checkpoint())?;
    Ok(())
}

/// Stage I: the full transmitter/decoder trained end to end with every user
/// on the fixed order `stage1_order`.
pub fn train_stage1<T: Scalar>(
    exp: &ExperimentConfig,
    data: &ChannelDataset,
    observer: &mut dyn TrainObserver,
) -> Result<SlpdNet<T>> {
    exp.validate()?;
    let sys = &exp.system;
    if exp.train.stage1_order > sys.max_order {
        return Err(Error::OrderTooHigh { order: exp.train.stage1_order, max: sys.max_order });
    }
    let mut net = SlpdNet::<T>::new(sys, &exp.arch, rng::derive(exp.train.seed, 1))?;
    let orders = OrderSource::Fixed(vec![exp.train.stage1_order; sys.num_users]);
    run_slpd_stage(&mut net, exp, data, 1, exp.train.epochs_stage1, &orders, observer)?;
    Ok(net)
}

/// Stage II: continues from `init` with combinations drawn uniformly from the
/// admissible set, then labels every channel of the dataset.
pub fn train_stage2<T: Scalar>(
    exp: &ExperimentConfig,
    data: &ChannelDataset,
    mut init: SlpdNet<T>,
    observer: &mut dyn TrainObserver,
) -> Result<(SlpdNet<T>, MopLabelSet)> {
    exp.validate()?;
    let sys = &exp.system;
    init.manifest().check_compatible(crate::network::NetworkKind::Slpd, sys)?;
    let table = ComboTable::new(sys.num_users, sys.max_order, sys.rate_req)?;
    run_slpd_stage(&mut init, exp, data, 2, exp.train.epochs_stage2, &OrderSource::Uniform(&table), observer)?;
    let labels = generate_labels(&init, sys, &exp.train, &table, &data.realizations)?;
    Ok((init, labels))
}

/// Index of the smallest value; ties toward the smaller index.
pub fn select_label(cross_entropies: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in cross_entropies.iter().enumerate() {
        if v < cross_entropies[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy of every combination on one channel. Draw `e` shares
/// its SNR and unit noise across combinations; messages are drawn per
/// `(combination, draw)`, so the result does not depend on evaluation order.
pub fn combo_cross_entropies<T: Scalar>(
    net: &SlpdNet<T>,
    sys: &SystemConfig,
    tc: &TrainConfig,
    table: &ComboTable,
    channel: &ChannelRealization,
    seed: u64,
) -> Result<Vec<f64>> {
    let k = sys.num_users;
    let draws = tc.label_draws;
    let shared: Vec<(f64, Vec<C64>)> = (0..draws)
        .map(|e| {
            let mut r = rng::seeded(rng::derive2(seed, 0, e as u64));
            let var = match tc.label_snr_db {
                Some(snr) if sys.noise_var.is_none() => snr_to_noise_var(snr, sys.power_budget),
                _ => draw_noise_var(sys, &mut r),
            };
            (var, (0..k).map(|_| rng::complex_normal(&mut r, 1.0)).collect())
        })
        .collect();
    let mut items = Vec::with_capacity(table.len() * draws);
    for (j, combo) in table.combos().iter().enumerate() {
        let mut r = rng::seeded(rng::derive2(seed, 1, j as u64));
        for (var, unit) in &shared {
            let messages = random_messages(&mut r, &combo.orders);
            let noise = unit.iter().map(|n| n * var.sqrt()).collect();
            items.push((channel, combo.orders.clone(), SlotDraw { messages, noise, noise_var: *var }));
        }
    }
    let batch = assemble(items);
    let probs = net.eval_probs(&batch, sys.power_budget)?;
    let ce = cross_entropy_rows(&batch.classes(), &probs);
    Ok(ce.chunks(draws * k).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect())
}

/// Labels each channel with its lowest-cross-entropy combination.
pub fn generate_labels<T: Scalar>(
    net: &SlpdNet<T>,
    sys: &SystemConfig,
    tc: &TrainConfig,
    table: &ComboTable,
    channels: &[ChannelRealization],
) -> Result<MopLabelSet> {
    let seed = rng::derive(tc.seed, 0x6c_6162_656c);
    let results: Vec<(usize, f64)> = channels
        .par_iter()
        .enumerate()
        .map(|(c, h)| {
            let ce = combo_cross_entropies(net, sys, tc, table, h, rng::derive(seed, c as u64))?;
            let best = select_label(&ce);
            Ok((best, ce[best]))
        })
        .collect::<Result<_>>()?;
    let (labels, cross_entropy) = results.into_iter().unzip();
    Ok(MopLabelSet { labels, cross_entropy, num_classes: table.len() })
}

/// Best combination index and its cross-entropy per channel, in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct MopLabelSet {
    pub labels: Vec<usize>,
    pub cross_entropy: Vec<f64>,
    pub num_classes: usize,
}

impl MopLabelSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.cross_entropy.len() {
            return Err(Error::Format("label and cross-entropy counts differ".into()));
        }
        if self.labels.iter().any(|&l| l >= self.num_classes) {
            return Err(Error::Format("label outside the combination table".into()));
        }
        if self.cross_entropy.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Format("cross-entropies must be finite and nonnegative".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let n = self.len();
        let arrays = [
            NamedArray::i32("labels", vec![n], self.labels.iter().map(|&l| l as i32).collect()),
            NamedArray::f64("cross_entropy", vec![n], self.cross_entropy.clone()),
        ];
        let meta = serde_json::json!({
            "num_classes": self.num_classes,
            "enumeration_rule": ENUMERATION_RULE,
        });
        store::write(path, &arrays, &[("manifest", meta.to_string())])
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (arrays, meta) = store::read(path)?;
        let manifest: serde_json::Value = serde_json::from_str(
            meta.get("manifest").ok_or_else(|| Error::Format("label file lacks manifest".into()))?,
        )?;
        if manifest["enumeration_rule"] != ENUMERATION_RULE {
            return Err(Error::Incompatible("labels use a different combination ordering".into()));
        }
        let num_classes =
            manifest["num_classes"].as_u64().ok_or_else(|| Error::Format("label manifest lacks num_classes".into()))?
                as usize;
        let n = arrays.get("labels").map(|a| a.shape.first().copied().unwrap_or(0)).unwrap_or(0);
        let labels = store::take_i32(&arrays, "labels", &[n])?;
        if labels.iter().any(|&l| l < 0) {
            return Err(Error::Format("negative label".into()));
        }
        let set = MopLabelSet {
            labels: labels.iter().map(|&l| l as usize).collect(),
            cross_entropy: store::take_f64(&arrays, "cross_entropy", &[n])?.to_vec(),
            num_classes,
        };
        set.validate()?;
        Ok(set)
    }
}

/// Fraction of channels whose label is among the `k` most probable classes.
pub fn topk_accuracy(probs: &Array2<f64>, labels: &[usize], k: usize) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = probs
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(p, l)| topk(p.as_slice().expect("standard layout"), k).contains(l))
        .count();
    hits as f64 / labels.len() as f64
}

/// Top-1/2/3 accuracy on train and test channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub train: [f64; 3],
    pub test: [f64; 3],
}

fn accuracies<T: Scalar>(net: &MopNet<T>, channels: &[ChannelRealization], labels: &[usize]) -> Result<[f64; 3]> {
    if channels.is_empty() {
        return Ok([0.0; 3]);
    }
    let mut probs = Vec::with_capacity(channels.len());
    for chunk in channels.chunks(1000) {
        let refs: Vec<&ChannelRealization> = chunk.iter().collect();
        probs.push(net.probs(&refs)?);
    }
    let views: Vec<_> = probs.iter().map(|p| p.view()).collect();
    let probs = ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths");
    let k = net.num_classes().min(3);
    let mut out = [0.0; 3];
    for (i, acc) in out.iter_mut().enumerate() {
        *acc = topk_accuracy(&probs, labels, (i + 1).min(k));
    }
    Ok(out)
}

/// Stage III: supervised training of the classifier on the stage-II labels.
pub fn train_stage3<T: Scalar>(
    exp: &ExperimentConfig,
    data: &ChannelDataset,
    labels: &MopLabelSet,
    observer: &mut dyn TrainObserver,
) -> Result<(MopNet<T>, AccuracyReport)> {
    exp.validate()?;
    labels.validate()?;
    let (sys, tc) = (&exp.system, &exp.train);
    let table = ComboTable::new(sys.num_users, sys.max_order, sys.rate_req)?;
    if labels.num_classes != table.len() {
        return Err(Error::Incompatible(format!(
            "labels span {} classes, the configuration admits {}",
            labels.num_classes,
            table.len()
        )));
    }
    let (ntr, nte) = (data.splits.train, data.splits.test);
    if labels.len() < ntr {
        return Err(Error::InvalidConfig(format!("{} labels do not cover {ntr} training channels", labels.len())));
    }
    let train = data.train();
    let train_labels = &labels.labels[..ntr];
    let test_labels = labels.labels.get(ntr..ntr + nte);
    let val_labels = labels.labels.get(ntr + nte..ntr + nte + data.splits.validation);
    let mut net = MopNet::<T>::for_table(sys, &exp.arch, &table, rng::derive(tc.seed, 3))?;
    let mut opt = adam::<T>(tc);
    let mut best = f64::NEG_INFINITY;
    for epoch in 0..tc.epochs_stage3 {
        let lr = lr_schedule(epoch, tc);
        let mut rng = rng::seeded(rng::derive2(tc.seed, 3, epoch as u64));
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for (step, chunk) in order.chunks(tc.minibatch).enumerate() {
            let chans: Vec<&ChannelRealization> = chunk.iter().map(|&i| &train[i]).collect();
            let ls: Vec<usize> = chunk.iter().map(|&i| train_labels[i]).collect();
            let loss = net.forward_loss(&chans, &ls)?;
            if !loss.is_finite() {
                return Err(diverged(3, epoch, step, loss));
            }
            net.backward(&ls);
            opt.step(&mut net, lr);
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let val_acc = match val_labels {
            Some(vl) if !vl.is_empty() => Some(accuracies(&net, data.validation(), vl)?[0]),
            _ => None,
        };
        observer.epoch(&EpochRecord {
            epoch,
            stage: 3,
            loss: loss_sum / seen as f64,
            lr,
            validation_ser: None,
            validation_accuracy: val_acc,
        })?;
        if let Some(a) = val_acc {
            if a > best {
                best = a;
                observer.checkpoint("stage3-best", &net.to_checkpoint())?;
            }
        }
        if (epoch + 1) % tc.lr_period == 0 {
            observer.checkpoint(&format!("stage3-epoch{:04}", epoch + 1), &net.to_checkpoint())?;
        }
    }
    observer.checkpoint("stage3-final", &net.to_checkpoint())?;
    let report = AccuracyReport {
        train: accuracies(&net, train, train_labels)?,
        test: match test_labels {
            Some(tl) if !tl.is_empty() => accuracies(&net, data.test(), tl)?,
            _ => [0.0; 3],
        },
    };
    Ok((net, report))
}
