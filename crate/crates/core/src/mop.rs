//! Modulation-order classifier.
//!
//! Maps `|H|` and `angle(H)` to a distribution over the numbered
//! modulation-order combinations of a [`ComboTable`]. Every predicted class
//! is an admissible combination by construction of the label space.

use ndarray::Array2;

use crate::channel::ChannelRealization;
use crate::config::{ArchConfig, SystemConfig};
use crate::error::{Error, Result};
use crate::modulation::{ComboTable, ENUMERATION_RULE};
use crate::network::{export_tensors, import_tensors, Block, Checkpoint, Manifest, NetworkKind};
use crate::nn::{softmax_rows, ActivationKind, LayerSpec, Scalar, Sequential, Slot, Visit};
use crate::rng;

pub const CONV_FILTERS: usize = 4;
pub const FC1_WIDTH: usize = 32;

pub fn mop_manifest(cfg: &SystemConfig, arch: &ArchConfig, num_classes: usize) -> Manifest {
    let mut m = Manifest::new(NetworkKind::Mop, cfg, arch, 2);
    m.num_classes = Some(num_classes);
    m.enumeration_rule = Some(ENUMERATION_RULE.into());
    let bn = |name: String, features| LayerSpec::BatchNorm {
        name,
        features,
        momentum: arch.bn_momentum,
        epsilon: arch.bn_epsilon,
    };
    let relu = |name: String, features| LayerSpec::Activation { name, activation: ActivationKind::Relu, features };
    let mut conv = Vec::new();
    for i in 1..=3 {
        let name = format!("mop.conv{i}");
        conv.push(LayerSpec::Conv {
            name: name.clone(),
            in_channels: if i == 1 { 2 } else { CONV_FILTERS },
            out_channels: CONV_FILTERS,
            kernel: 1,
            width: cfg.num_antennas,
        });
        conv.push(relu(format!("{name}.act"), CONV_FILTERS));
        conv.push(bn(format!("{name}.bn"), CONV_FILTERS));
    }
    m.blocks.push(Block { name: "mop.conv".into(), layers: conv });
    let flat = cfg.num_users * cfg.num_antennas * CONV_FILTERS;
    let head = vec![
        LayerSpec::Dense { name: "mop.fc1".into(), inputs: flat, outputs: FC1_WIDTH },
        relu("mop.fc1.act".into(), FC1_WIDTH),
        LayerSpec::Dropout { name: "mop.fc1.dropout".into(), rate: arch.dropout, features: FC1_WIDTH },
        LayerSpec::Dense { name: "mop.fc2".into(), inputs: FC1_WIDTH, outputs: num_classes },
        relu("mop.fc2.act".into(), num_classes),
        bn("mop.fc2.bn".into(), num_classes),
        LayerSpec::Dense { name: "mop.fc3".into(), inputs: num_classes, outputs: num_classes },
        // normalized before the softmax so the output stays a distribution
        bn("mop.fc3.bn".into(), num_classes),
    ];
    m.blocks.push(Block { name: "mop.head".into(), layers: head });
    m
}

/// Classifier output for one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct MopOutput {
    pub probs: Vec<f64>,
    pub topk: Vec<usize>,
}

/// Indices of the `k` largest probabilities, descending, ties to the smaller index.
pub fn topk(probs: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

pub struct MopNet<T> {
    manifest: Manifest,
    conv: Sequential<T>,
    head: Sequential<T>,
    probs: Option<Array2<T>>,
}

impl<T: Scalar> Visit<T> for MopNet<T> {
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        self.conv.visit_mut(f);
        self.head.visit_mut(f);
    }
}

impl<T: Scalar> MopNet<T> {
    pub fn new(cfg: &SystemConfig, arch: &ArchConfig, num_classes: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        arch.validate()?;
        if num_classes == 0 {
            return Err(Error::InvalidConfig("the classifier needs at least one class".into()));
        }
        Self::from_manifest(mop_manifest(cfg, arch, num_classes), seed)
    }

    /// Sized for the combination table of `cfg`.
    pub fn for_table(cfg: &SystemConfig, arch: &ArchConfig, table: &ComboTable, seed: u64) -> Result<Self> {
        Self::new(cfg, arch, table.len(), seed)
    }

    fn from_manifest(manifest: Manifest, seed: u64) -> Result<Self> {
        manifest.validate()?;
        let mut rng = rng::seeded(rng::derive(seed, 0x6d6f70));
        let conv = Sequential::build(manifest.block("mop.conv")?.to_vec(), &mut rng)?;
        let head = Sequential::build(manifest.block("mop.head")?.to_vec(), &mut rng)?;
        if head.in_features() != conv.out_features() * manifest.num_users * manifest.num_antennas {
            return Err(Error::Format("classifier head does not match the convolution output".into()));
        }
        Ok(MopNet { manifest, conv, head, probs: None })
    }

    pub fn num_classes(&self) -> usize {
        self.head.out_features()
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn to_checkpoint(&mut self) -> Checkpoint {
        let mut tensors = export_tensors(self);
        tensors.sort_by(|a, b| a.name.cmp(&b.name));
        Checkpoint { manifest: self.manifest.clone(), tensors }
    }

    /// Loads a checkpoint, rejecting it if its label space differs from `table`.
    pub fn from_checkpoint(ckpt: &Checkpoint, cfg: &SystemConfig, table: &ComboTable) -> Result<Self> {
        ckpt.manifest.check_compatible(NetworkKind::Mop, cfg)?;
        if ckpt.manifest.num_classes != Some(table.len())
            || ckpt.manifest.enumeration_rule.as_deref() != Some(ENUMERATION_RULE)
        {
            return Err(Error::Incompatible(format!(
                "classifier label space ({:?} classes, rule {:?}) differs from {} combinations ({ENUMERATION_RULE})",
                ckpt.manifest.num_classes,
                ckpt.manifest.enumeration_rule,
                table.len()
            )));
        }
        let mut net = Self::from_manifest(ckpt.manifest.clone(), 0)?;
        import_tensors(&mut net, &ckpt.tensors)?;
        Ok(net)
    }

    /// Rows `(channel, user, antenna)`, columns `[|H|, angle(H)]`.
    pub fn inputs(&self, channels: &[&ChannelRealization]) -> Result<Array2<T>> {
        let (nt, k) = (self.manifest.num_antennas, self.manifest.num_users);
        let mut data = Vec::with_capacity(channels.len() * k * nt * 2);
        for h in channels {
            if h.num_antennas() != nt || h.num_users() != k {
                return Err(Error::Dimension(format!(
                    "channel is {}x{}, classifier expects {nt}x{k}",
                    h.num_antennas(),
                    h.num_users()
                )));
            }
            for u in 0..k {
                for n in 0..nt {
                    let v = h.matrix[[n, u]];
                    data.push(T::cast(v.norm()));
                    data.push(T::cast(v.arg()));
                }
            }
        }
        Ok(Array2::from_shape_vec((channels.len() * k * nt, 2), data).expect("sized"))
    }

    fn flatten(&self, feats: Array2<T>, batch: usize) -> Array2<T> {
        let width = feats.len() / batch;
        feats.into_shape_with_order((batch, width)).expect("contiguous")
    }

    /// Class probabilities in inference mode, one row per channel.
    pub fn probs(&self, channels: &[&ChannelRealization]) -> Result<Array2<f64>> {
        let x = self.inputs(channels)?;
        let feats = self.conv.infer(x);
        let mut logits = self.head.infer(self.flatten(feats, channels.len()));
        softmax_rows(&mut logits);
        Ok(logits.mapv(|v| v.as_f64()))
    }

    pub fn predict_orders(&self, channel: &ChannelRealization, k: usize) -> Result<MopOutput> {
        if k == 0 || k > self.num_classes() {
            return Err(Error::InvalidConfig(format!("top-k must lie in 1..={}, got {k}", self.num_classes())));
        }
        let probs = self.probs(&[channel])?.row(0).to_vec();
        let topk = topk(&probs, k);
        Ok(MopOutput { probs, topk })
    }

    /// Training-mode mean cross-entropy against class labels.
    pub fn forward_loss(&mut self, channels: &[&ChannelRealization], labels: &[usize]) -> Result<f64> {
        if labels.len() != channels.len() {
            return Err(Error::Dimension(format!("{} labels for {} channels", labels.len(), channels.len())));
        }
        if labels.iter().any(|&c| c >= self.num_classes()) {
            return Err(Error::Dimension("label outside the classifier's label space".into()));
        }
        let x = self.inputs(channels)?;
        let feats = self.conv.forward(x);
        let mut probs = self.head.forward(self.flatten(feats, channels.len()));
        softmax_rows(&mut probs);
        let loss = crate::nn::cross_entropy_rows(labels, &probs).iter().sum::<f64>() / labels.len() as f64;
        self.probs = Some(probs);
        Ok(loss)
    }

    pub fn backward(&mut self, labels: &[usize]) {
        let mut d = self.probs.take().expect("backward without forward");
        let inv = T::cast(1.0 / labels.len() as f64);
        for (mut row, &c) in d.rows_mut().into_iter().zip(labels) {
            row[c] -= T::one();
            row.mapv_inplace(|v| v * inv);
        }
        let dflat = self.head.backward(d);
        let channels = self.conv.out_features();
        let rows = dflat.len() / channels;
        let dfeat = dflat.into_shape_with_order((rows, channels)).expect("contiguous");
        self.conv.backward(dfeat);
    }
}
