//! Learned symbol-level precoder and shared per-user decoder.
//!
//! Transmitter: four parallel convolutional branches over the symbol-fused
//! channel phase (optionally stacked with `|H|`), concatenated with a dense
//! side path fed by the symbol phases, regressed to `2 N_t` reals and scaled
//! to the power budget. Receiver: one dense decode block applied to every
//! user's `(r_k, h_k)`, producing a distribution over the `2^B` messages of
//! the highest order.
//!
//! Complex vectors are packed as `[real block, imaginary block]` throughout.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, Axis};

use crate::channel::ChannelRealization;
use crate::config::{ArchConfig, SystemConfig};
use crate::error::{Error, Result};
use crate::modulation::alphabet_size;
use crate::network::{export_tensors, import_tensors, Block, Checkpoint, Manifest, NetworkKind};
use crate::nn::spec::dense_act;
use crate::nn::{argmax_prefix, softmax_rows, ActivationKind, LayerSpec, Scalar, Sequential, Slot, Visit};
use crate::rng;
use crate::C64;

/// Filters per convolutional layer.
pub const FILTERS: usize = 8;
/// Kernel widths of the convolutional blocks of each branch, input side first.
pub const BRANCH_KERNELS: [&[usize]; 4] = [&[1], &[3, 1], &[5, 3, 1], &[7, 3, 1]];
pub const SIDE_WIDTH: usize = 32;
pub const HEAD_WIDTH: usize = 256;
pub const DECODER_WIDTHS: [usize; 3] = [128, 64, 32];

/// `H~[n, k] = angle(H[n, k]) + angle(s_k)`, radians, not re-wrapped.
pub fn preprocess_fuse(channel: &ChannelRealization, symbols: &[C64]) -> Result<Array2<f64>> {
    if symbols.len() != channel.num_users() {
        return Err(Error::Dimension(format!("{} symbols for {} users", symbols.len(), channel.num_users())));
    }
    let mut out = channel.matrix.mapv(|h| h.arg());
    for (mut col, s) in out.columns_mut().into_iter().zip(symbols) {
        let phase = s.arg();
        col.mapv_inplace(|v| v + phase);
    }
    Ok(out)
}

fn leaky(arch: &ArchConfig) -> ActivationKind {
    ActivationKind::LeakyRelu { slope: arch.leaky_slope }
}

/// One convolutional block: a `1x1` layer then three `1xd` layers, each
/// followed by LeakyReLU and batch normalization.
fn conv_block(name: &str, in_channels: usize, kernel: usize, width: usize, arch: &ArchConfig) -> Vec<LayerSpec> {
    let mut layers = Vec::with_capacity(12);
    for i in 0..4 {
        let conv = format!("{name}.conv{}", i + 1);
        layers.push(LayerSpec::Conv {
            name: conv.clone(),
            in_channels: if i == 0 { in_channels } else { FILTERS },
            out_channels: FILTERS,
            kernel: if i == 0 { 1 } else { kernel },
            width,
        });
        layers.push(LayerSpec::Activation { name: format!("{conv}.act"), activation: leaky(arch), features: FILTERS });
        layers.push(LayerSpec::BatchNorm {
            name: format!("{conv}.bn"),
            features: FILTERS,
            momentum: arch.bn_momentum,
            epsilon: arch.bn_epsilon,
        });
    }
    layers
}

/// Architecture manifest of the transmitter and decoder.
pub fn slpd_manifest(cfg: &SystemConfig, arch: &ArchConfig) -> Manifest {
    let input_channels = if arch.fuse_amplitude { 2 } else { 1 };
    let mut m = Manifest::new(NetworkKind::Slpd, cfg, arch, input_channels);
    let (nt, k) = (cfg.num_antennas, cfg.num_users);
    for (b, kernels) in BRANCH_KERNELS.iter().enumerate() {
        let mut layers = Vec::new();
        for (j, &d) in kernels.iter().enumerate() {
            let name = if kernels.len() == 1 { format!("tx.cb{}", b + 1) } else { format!("tx.cb{}{}", b + 1, j + 1) };
            layers.extend(conv_block(&name, if j == 0 { input_channels } else { FILTERS }, d, nt, arch));
        }
        m.blocks.push(Block { name: format!("tx.branch{}", b + 1), layers });
    }
    m.blocks.push(Block { name: "tx.side".into(), layers: dense_act("tx.fc4", k, SIDE_WIDTH, Some(leaky(arch))) });
    let features = k * nt * FILTERS * BRANCH_KERNELS.len() + SIDE_WIDTH;
    let mut head = dense_act("tx.fc5", features, HEAD_WIDTH, Some(leaky(arch)));
    head.extend(dense_act("tx.fc6", HEAD_WIDTH, 2 * nt, None));
    m.blocks.push(Block { name: "tx.head".into(), layers: head });

    let mut rx = Vec::new();
    let mut inputs = decoder_width(nt, cfg.max_order);
    for (i, &w) in DECODER_WIDTHS.iter().enumerate() {
        rx.extend(dense_act(&format!("rx.fcd{}", i + 1), inputs, w, Some(leaky(arch))));
        inputs = w;
    }
    rx.extend(dense_act("rx.fcd4", inputs, cfg.max_alphabet(), None));
    m.blocks.push(Block { name: "rx.decode".into(), layers: rx });
    m
}

/// Transmit side of the network.
pub struct Transmitter<T> {
    branches: Vec<Sequential<T>>,
    side: Sequential<T>,
    head: Sequential<T>,
    num_antennas: usize,
    num_users: usize,
    fuse_amplitude: bool,
}

impl<T: Scalar> Transmitter<T> {
    fn build(m: &Manifest, seed: u64) -> Result<Self> {
        let mut rng = rng::seeded(rng::derive(seed, 0x7478));
        let branches = (0..BRANCH_KERNELS.len())
            .map(|b| Sequential::build(m.block(&format!("tx.branch{}", b + 1))?.to_vec(), &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let side = Sequential::build(m.block("tx.side")?.to_vec(), &mut rng)?;
        let head = Sequential::build(m.block("tx.head")?.to_vec(), &mut rng)?;
        let cnn_features: usize =
            branches.iter().map(|b| b.out_features()).sum::<usize>() * m.num_users * m.num_antennas;
        if head.in_features() != cnn_features + side.out_features() || head.out_features() != 2 * m.num_antennas {
            return Err(Error::Format("transmitter head does not match branch and side widths".into()));
        }
        if branches.iter().any(|b| b.in_features() != m.input_channels) || side.in_features() != m.num_users {
            return Err(Error::Format("transmitter inputs do not match the scenario".into()));
        }
        Ok(Transmitter {
            branches,
            side,
            head,
            num_antennas: m.num_antennas,
            num_users: m.num_users,
            fuse_amplitude: m.input_channels == 2,
        })
    }

    /// CNN input rows `(slot, user, antenna)` and side-path input `(slot, user)`.
    pub fn inputs(&self, channels: &[&ChannelRealization], symbols: &[Vec<C64>]) -> Result<(Array2<T>, Array2<T>)> {
        let (nt, k) = (self.num_antennas, self.num_users);
        let c = if self.fuse_amplitude { 2 } else { 1 };
        let b = channels.len();
        if symbols.len() != b {
            return Err(Error::Dimension(format!("{} channels but {} symbol vectors", b, symbols.len())));
        }
        let mut cnn = Vec::with_capacity(b * k * nt * c);
        let mut side = Vec::with_capacity(b * k);
        for (h, s) in channels.iter().zip(symbols) {
            if h.num_antennas() != nt || h.num_users() != k {
                return Err(Error::Dimension(format!(
                    "channel is {}x{}, network expects {nt}x{k}",
                    h.num_antennas(),
                    h.num_users()
                )));
            }
            let fused = preprocess_fuse(h, s)?;
            for u in 0..k {
                for n in 0..nt {
                    cnn.push(T::cast(fused[[n, u]]));
                    if self.fuse_amplitude {
                        cnn.push(T::cast(h.matrix[[n, u]].norm()));
                    }
                }
                side.push(T::cast(s[u].arg()));
            }
        }
        Ok((
            Array2::from_shape_vec((b * k * nt, c), cnn).expect("sized"),
            Array2::from_shape_vec((b, k), side).expect("sized"),
        ))
    }

    fn merge(&self, feats: Vec<Array2<T>>, side: Array2<T>) -> Array2<T> {
        let batch = side.nrows();
        let views: Vec<_> = feats.iter().map(|f| f.view()).collect();
        let cat = concatenate(Axis(1), &views).expect("equal rows");
        let width = cat.len() / batch;
        let flat = cat.as_standard_layout().into_owned().into_shape_with_order((batch, width)).expect("contiguous");
        concatenate(Axis(1), &[flat.view(), side.view()]).expect("equal rows")
    }

    /// Unnormalized `2 N_t` outputs, inference mode.
    pub fn raw_infer(&self, cnn: Array2<T>, side: Array2<T>) -> Array2<T> {
        let feats = self.branches.iter().map(|b| b.infer(cnn.clone())).collect();
        let side = self.side.infer(side);
        self.head.infer(self.merge(feats, side))
    }

    pub fn raw_forward(&mut self, cnn: Array2<T>, side: Array2<T>) -> Array2<T> {
        let feats = self.branches.iter_mut().map(|b| b.forward(cnn.clone())).collect();
        let side = self.side.forward(side);
        let merged = self.merge(feats, side);
        self.head.forward(merged)
    }

    pub fn raw_backward(&mut self, draw: Array2<T>) {
        let d = self.head.backward(draw);
        let batch = d.nrows();
        let cnn_width = d.ncols() - SIDE_WIDTH;
        let dside = d.slice(s![.., cnn_width..]).to_owned();
        self.side.backward(dside);
        let total: usize = self.branches.iter().map(|b| b.out_features()).sum();
        let dfeat = d
            .slice(s![.., ..cnn_width])
            .to_owned()
            .into_shape_with_order((batch * cnn_width / total, total))
            .expect("contiguous");
        let mut offset = 0;
        for b in &mut self.branches {
            let w = b.out_features();
            b.backward(dfeat.slice(s![.., offset..offset + w]).to_owned());
            offset += w;
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        for b in &mut self.branches {
            b.visit_mut(f);
        }
        self.side.visit_mut(f);
        self.head.visit_mut(f);
    }
}

/// Scales each row to squared norm `power`. Returns the scaled rows and the
/// original norms.
pub fn normalize_power<T: Scalar>(raw: &Array2<T>, power: f64) -> Result<(Array2<T>, Vec<T>)> {
    let scale = T::cast(power.sqrt());
    let mut x = raw.clone();
    let mut norms = Vec::with_capacity(raw.nrows());
    for mut row in x.rows_mut() {
        let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
        if !(norm > T::zero()) || !norm.is_finite() {
            return Err(Error::DegenerateOutput);
        }
        row.mapv_inplace(|v| v * scale / norm);
        norms.push(norm);
    }
    Ok((x, norms))
}

/// Gradient of [`normalize_power`]: `dx = sqrt(P)/|x| (dy - u (u . dy))`, `u = x/|x|`.
pub fn normalize_power_backward<T: Scalar>(raw: &Array2<T>, norms: &[T], power: f64, dy: &Array2<T>) -> Array2<T> {
    let scale = T::cast(power.sqrt());
    let mut dx = dy.clone();
    for ((mut d, x), &norm) in dx.rows_mut().into_iter().zip(raw.rows()).zip(norms) {
        let proj = x.iter().zip(d.iter()).map(|(&a, &b)| a * b).sum::<T>() / (norm * norm);
        for (dv, &xv) in d.iter_mut().zip(x.iter()) {
            *dv = scale / norm * (*dv - xv * proj);
        }
    }
    dx
}

/// Noise-free `h_k^H x` for packed signals; returns `(re, im)`, each `slots x K`.
pub fn propagate<T: Scalar>(x: &Array2<T>, channels: &[&ChannelRealization]) -> (Array2<T>, Array2<T>) {
    let b = channels.len();
    let k = channels.first().map_or(0, |h| h.num_users());
    let nt = x.ncols() / 2;
    let mut re = Array2::zeros((b, k));
    let mut im = Array2::zeros((b, k));
    for (i, h) in channels.iter().enumerate() {
        let xr = x.slice(s![i, ..nt]);
        let xi = x.slice(s![i, nt..]);
        for u in 0..k {
            let (mut a, mut c) = (T::zero(), T::zero());
            for n in 0..nt {
                let hv = h.matrix[[n, u]];
                let (hr, hi) = (T::cast(hv.re), T::cast(hv.im));
                a += hr * xr[n] + hi * xi[n];
                c += hr * xi[n] - hi * xr[n];
            }
            re[[i, u]] = a;
            im[[i, u]] = c;
        }
    }
    (re, im)
}

fn propagate_backward<T: Scalar>(
    dre: &Array2<T>,
    dim: &Array2<T>,
    channels: &[&ChannelRealization],
    nt: usize,
) -> Array2<T> {
    let mut dx = Array2::zeros((channels.len(), 2 * nt));
    for (i, h) in channels.iter().enumerate() {
        for u in 0..h.num_users() {
            let (gr, gi) = (dre[[i, u]], dim[[i, u]]);
            for n in 0..nt {
                let hv = h.matrix[[n, u]];
                let (hr, hi) = (T::cast(hv.re), T::cast(hv.im));
                dx[[i, n]] += gr * hr - gi * hi;
                dx[[i, nt + n]] += gr * hi + gi * hr;
            }
        }
    }
    dx
}

/// Decode-block input width: received sample, channel vector, one-hot order.
pub fn decoder_width(nt: usize, max_order: u32) -> usize {
    2 + 2 * nt + max_order as usize
}

fn fill_decoder_row<T: Scalar>(
    mut row: ndarray::ArrayViewMut1<'_, T>,
    r: (T, T),
    h: ArrayView1<'_, C64>,
    order_bits: u32,
) {
    let nt = h.len();
    row[0] = r.0;
    row[1] = r.1;
    for n in 0..nt {
        row[2 + n] = T::cast(h[n].re);
        row[2 + nt + n] = T::cast(h[n].im);
    }
    row[2 + 2 * nt + order_bits as usize - 1] = T::one();
}

/// Decode-block rows `(slot, user)`: `[Re r, Im r, Re h_k, Im h_k, onehot(M_k)]`.
fn decoder_input<T: Scalar>(
    re: &Array2<T>,
    im: &Array2<T>,
    channels: &[&ChannelRealization],
    orders: &[Vec<u32>],
    max_order: u32,
) -> Array2<T> {
    let k = re.ncols();
    let nt = channels.first().map_or(0, |h| h.num_antennas());
    let mut out = Array2::zeros((channels.len() * k, decoder_width(nt, max_order)));
    for (i, (h, o)) in channels.iter().zip(orders).enumerate() {
        for u in 0..k {
            fill_decoder_row(out.row_mut(i * k + u), (re[[i, u]], im[[i, u]]), h.user(u), o[u]);
        }
    }
    out
}

/// Precoder output after power scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecodedSignal {
    pub x: Array1<C64>,
}

impl PrecodedSignal {
    pub fn power(&self) -> f64 {
        self.x.iter().map(|v| v.norm_sqr()).sum()
    }
}

/// Per-user decoder output.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionOutput {
    /// Distribution over the `2^B` outcomes of the highest order.
    pub probs: Vec<f64>,
    /// 1-indexed message, restricted to the user's own alphabet.
    pub decoded: u32,
}

/// Restricted argmax decision: message `m` in `1..=2^M`, ties to the smaller.
pub fn decide(probs: &[f64], order_bits: u32) -> u32 {
    argmax_prefix(probs.iter().copied(), alphabet_size(order_bits) as usize) as u32 + 1
}

/// Symbol slots for one training or evaluation pass.
#[derive(Debug, Clone)]
pub struct SlotBatch<'a> {
    pub channels: Vec<&'a ChannelRealization>,
    /// Per slot, per user, 1-indexed.
    pub messages: Vec<Vec<u32>>,
    pub orders: Vec<Vec<u32>>,
    /// Additive noise realizations, per slot and user.
    pub noise: Vec<Vec<C64>>,
}

impl SlotBatch<'_> {
    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn symbols(&self) -> Result<Vec<Vec<C64>>> {
        self.messages.iter().zip(&self.orders).map(|(m, o)| crate::modulation::modulate(m, o)).collect()
    }

    /// Class index (0-based message) per decoder row.
    pub fn classes(&self) -> Vec<usize> {
        self.messages.iter().flatten().map(|&m| (m - 1) as usize).collect()
    }
}

struct Trace<T> {
    raw: Array2<T>,
    norms: Vec<T>,
    probs: Array2<T>,
}

/// Transmitter and decoder trained end to end.
pub struct SlpdNet<T> {
    manifest: Manifest,
    pub tx: Transmitter<T>,
    rx: Sequential<T>,
    trace: Option<Trace<T>>,
}

impl<T: Scalar> Visit<T> for SlpdNet<T> {
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        self.tx.visit_mut(f);
        self.rx.visit_mut(f);
    }
}

impl<T: Scalar> SlpdNet<T> {
    /// Freshly initialized network; identical seeds give identical weights.
    pub fn new(cfg: &SystemConfig, arch: &ArchConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        arch.validate()?;
        Self::from_manifest(slpd_manifest(cfg, arch), seed)
    }

    fn from_manifest(manifest: Manifest, seed: u64) -> Result<Self> {
        manifest.validate()?;
        let tx = Transmitter::build(&manifest, seed)?;
        let mut rng = rng::seeded(rng::derive(seed, 0x7278));
        let rx = Sequential::build(manifest.block("rx.decode")?.to_vec(), &mut rng)?;
        if rx.in_features() != decoder_width(manifest.num_antennas, manifest.max_order)
            || rx.out_features() != 1 << manifest.max_order
        {
            return Err(Error::Format("decode block does not match the scenario".into()));
        }
        Ok(SlpdNet { manifest, tx, rx, trace: None })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn to_checkpoint(&mut self) -> Checkpoint {
        let mut tensors = export_tensors(self);
        tensors.sort_by(|a, b| a.name.cmp(&b.name));
        Checkpoint { manifest: self.manifest.clone(), tensors }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, cfg: &SystemConfig) -> Result<Self> {
        ckpt.manifest.check_compatible(NetworkKind::Slpd, cfg)?;
        let mut net = Self::from_manifest(ckpt.manifest.clone(), 0)?;
        import_tensors(&mut net, &ckpt.tensors)?;
        Ok(net)
    }

    pub fn num_antennas(&self) -> usize {
        self.manifest.num_antennas
    }

    pub fn max_order(&self) -> u32 {
        self.manifest.max_order
    }

    /// Precodes a batch of slots in inference mode; power scaling runs in f64.
    pub fn precode_batch(
        &self,
        channels: &[&ChannelRealization],
        symbols: &[Vec<C64>],
        power: f64,
    ) -> Result<Vec<Array1<C64>>> {
        let (cnn, side) = self.tx.inputs(channels, symbols)?;
        let raw = self.tx.raw_infer(cnn, side).mapv(|v| v.as_f64());
        let (x, _) = normalize_power(&raw, power)?;
        Ok(unpack(&x))
    }

    pub fn precode(&self, channel: &ChannelRealization, symbols: &[C64], power: f64) -> Result<PrecodedSignal> {
        let x = self.precode_batch(&[channel], &[symbols.to_vec()], power)?.remove(0);
        Ok(PrecodedSignal { x })
    }

    /// Runs the decode block on `(h_k, r_k, M_k)` rows.
    pub fn decode_probs(&self, rows: &[(ArrayView1<'_, C64>, C64, u32)]) -> Result<Array2<f64>> {
        let nt = self.num_antennas();
        let max = self.max_order();
        let mut input = Array2::<T>::zeros((rows.len(), decoder_width(nt, max)));
        for (row, &(h, r, order)) in input.rows_mut().into_iter().zip(rows) {
            if h.len() != nt {
                return Err(Error::Dimension(format!("channel vector has {} entries, expected {nt}", h.len())));
            }
            if order == 0 || order > max {
                return Err(Error::OrderTooHigh { order, max });
            }
            fill_decoder_row(row, (T::cast(r.re), T::cast(r.im)), h, order);
        }
        let mut logits = self.rx.infer(input);
        softmax_rows(&mut logits);
        Ok(logits.mapv(|v| v.as_f64()))
    }

    pub fn decode(&self, h: ArrayView1<'_, C64>, r: C64, order_bits: u32) -> Result<DetectionOutput> {
        let probs = self.decode_probs(&[(h, r, order_bits)])?.row(0).to_vec();
        let decoded = decide(&probs, order_bits);
        Ok(DetectionOutput { probs, decoded })
    }

    /// End-to-end probabilities for a batch, in inference mode (running
    /// batch-norm statistics), rows `(slot, user)`.
    pub fn eval_probs(&self, batch: &SlotBatch<'_>, power: f64) -> Result<Array2<T>> {
        let symbols = batch.symbols()?;
        let (cnn, side) = self.tx.inputs(&batch.channels, &symbols)?;
        let raw = self.tx.raw_infer(cnn, side);
        let (x, _) = normalize_power(&raw, power)?;
        let (mut re, mut im) = propagate(&x, &batch.channels);
        add_noise(&mut re, &mut im, &batch.noise);
        let mut logits = self.rx.infer(decoder_input(&re, &im, &batch.channels, &batch.orders, self.max_order()));
        softmax_rows(&mut logits);
        Ok(logits)
    }

    /// Training-mode forward pass; returns the mean cross-entropy over all
    /// `(slot, user)` rows and keeps the trace for [`Self::backward`].
    pub fn forward_loss(&mut self, batch: &SlotBatch<'_>, power: f64) -> Result<f64> {
        let symbols = batch.symbols()?;
        let (cnn, side) = self.tx.inputs(&batch.channels, &symbols)?;
        let raw = self.tx.raw_forward(cnn, side);
        let (x, norms) = normalize_power(&raw, power)?;
        let (mut re, mut im) = propagate(&x, &batch.channels);
        add_noise(&mut re, &mut im, &batch.noise);
        let mut probs = self.rx.forward(decoder_input(&re, &im, &batch.channels, &batch.orders, self.max_order()));
        softmax_rows(&mut probs);
        let classes = batch.classes();
        if classes.iter().any(|&c| c >= probs.ncols()) {
            return Err(Error::Dimension("message outside the decoder alphabet".into()));
        }
        let loss = crate::nn::cross_entropy_rows(&classes, &probs).iter().sum::<f64>() / classes.len() as f64;
        self.trace = Some(Trace { raw, norms, probs });
        Ok(loss)
    }

    /// Backpropagates the loss of the last [`Self::forward_loss`] into the
    /// parameter gradients.
    pub fn backward(&mut self, batch: &SlotBatch<'_>, power: f64) {
        let Trace { raw, norms, mut probs } = self.trace.take().expect("backward without forward");
        let rows = probs.nrows();
        let inv = T::cast(1.0 / rows as f64);
        for (mut row, c) in probs.rows_mut().into_iter().zip(batch.classes()) {
            row[c] -= T::one();
            row.mapv_inplace(|v| v * inv);
        }
        let din = self.rx.backward(probs);
        let k = din.nrows() / batch.len();
        let dre = Array2::from_shape_fn((batch.len(), k), |(i, u)| din[[i * k + u, 0]]);
        let dim = Array2::from_shape_fn((batch.len(), k), |(i, u)| din[[i * k + u, 1]]);
        let dx = propagate_backward(&dre, &dim, &batch.channels, self.num_antennas());
        let draw = normalize_power_backward(&raw, &norms, power, &dx);
        self.tx.raw_backward(draw);
    }
}

fn add_noise<T: Scalar>(re: &mut Array2<T>, im: &mut Array2<T>, noise: &[Vec<C64>]) {
    for (i, row) in noise.iter().enumerate() {
        for (u, n) in row.iter().enumerate() {
            re[[i, u]] += T::cast(n.re);
            im[[i, u]] += T::cast(n.im);
        }
    }
}

fn unpack<T: Scalar>(x: &Array2<T>) -> Vec<Array1<C64>> {
    let nt = x.ncols() / 2;
    x.rows()
        .into_iter()
        .map(|r| Array1::from_iter((0..nt).map(|n| C64::new(r[n].as_f64(), r[nt + n].as_f64()))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::generate_channels;
    use crate::modulation::{modulate, psk_map, random_messages};
    use std::f64::consts::PI;

    fn small_cfg() -> SystemConfig {
        SystemConfig {
            num_antennas: 4,
            num_users: 2,
            rate_req: 4,
            user_center_angles: vec![-20.0, 20.0],
            ..SystemConfig::desk()
        }
    }

    #[test]
    fn fuse_examples() {
        let h = ChannelRealization::from_matrix(Array2::from_elem((3, 1), C64::new(2.0, 0.0)));
        let f = preprocess_fuse(&h, &[C64::new(0.0, 1.0)]).unwrap();
        assert!(f.iter().all(|&v| (v - PI / 2.0).abs() < 1e-15));
        let h = ChannelRealization::from_matrix(Array2::from_elem((1, 1), C64::new(0.0, 1.0)));
        let f = preprocess_fuse(&h, &[C64::new(-1.0, 0.0)]).unwrap();
        assert!((f[[0, 0]] - 1.5 * PI).abs() < 1e-15);
        let chans = generate_channels(&SystemConfig::desk(), 3, 1).unwrap();
        for h in &chans {
            let f = preprocess_fuse(h, &[C64::new(1.0, 0.0); 4]).unwrap();
            assert_eq!(f, h.matrix.mapv(|v| v.arg()));
            let s: Vec<C64> = (1..=4).map(|m| psk_map(m, 2).unwrap()).collect();
            let f = preprocess_fuse(h, &s).unwrap() - h.matrix.mapv(|v| v.arg());
            for (k, col) in f.columns().into_iter().enumerate() {
                assert!(col.iter().all(|&v| (v - s[k].arg()).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn manifest_shapes() {
        let cfg = SystemConfig { num_antennas: 16, ..SystemConfig::desk() };
        let m = slpd_manifest(&cfg, &ArchConfig::default());
        let head = m.block("tx.head").unwrap();
        assert_eq!(head.last().unwrap().out_features(), 32);
        let convs = m.block("tx.branch4").unwrap().iter().filter(|l| l.is_conv()).count();
        assert_eq!(convs, 12);
        assert_eq!(m.block("rx.decode").unwrap().last().unwrap().out_features(), 8);
        m.validate().unwrap();
    }

    #[test]
    fn same_seed_same_weights() {
        let cfg = small_cfg();
        let a = SlpdNet::<f64>::new(&cfg, &ArchConfig::default(), 5).unwrap().to_checkpoint();
        let b = SlpdNet::<f64>::new(&cfg, &ArchConfig::default(), 5).unwrap().to_checkpoint();
        let c = SlpdNet::<f64>::new(&cfg, &ArchConfig::default(), 6).unwrap().to_checkpoint();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn precode_power_and_scaling() {
        let cfg = small_cfg();
        let net = SlpdNet::<f64>::new(&cfg, &ArchConfig::default(), 1).unwrap();
        let chans = generate_channels(&cfg, 5, 2).unwrap();
        let mut r = rng::seeded(3);
        for h in &chans {
            let s = modulate(&random_messages(&mut r, &[2, 2]), &[2, 2]).unwrap();
            let x1 = net.precode(h, &s, 1.0).unwrap();
            assert!((x1.power() - 1.0).abs() <= 1e-6);
            let x2 = net.precode(h, &s, 2.0).unwrap();
            for (a, b) in x1.x.iter().zip(x2.x.iter()) {
                assert!((a * 2f64.sqrt() - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_weights_are_degenerate() {
        let cfg = small_cfg();
        let mut net = SlpdNet::<f64>::new(&cfg, &ArchConfig::default(), 1).unwrap();
        net.visit_mut(&mut |_, slot| {
            if let Slot::Param(p) = slot {
                p.value.fill(0.0);
            }
        });
        let h = &generate_channels(&cfg, 1, 2).unwrap()[0];
        let s = vec![C64::new(1.0, 0.0); 2];
        assert!(matches!(net.precode(h, &s, 1.0), Err(Error::DegenerateOutput)));
    }

    #[test]
    fn decoder_outputs_distribution_and_restricts_argmax() {
        let cfg = small_cfg();
        let net = SlpdNet::<f64>::new(&cfg, &ArchConfig::default(), 1).unwrap();
        let h = &generate_channels(&cfg, 1, 2).unwrap()[0];
        let out = net.decode(h.user(0), C64::new(0.3, -1.2), 1).unwrap();
        assert!((out.probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(out.probs.iter().all(|&p| p >= 0.0));
        assert!((1..=2).contains(&out.decoded));
        assert_eq!(out, net.decode(h.user(0), C64::new(0.3, -1.2), 1).unwrap());
        assert_eq!(decide(&[0.1, 0.2, 0.3, 0.05, 0.1, 0.1, 0.1, 0.05], 1), 2);
        assert!(net.decode(h.user(0), C64::new(0.3, -1.2), 4).is_err());
        let qpsk = net.decode(h.user(0), C64::new(0.3, -1.2), 2).unwrap();
        assert_ne!(out.probs, qpsk.probs);
    }

    #[test]
    fn decoded_user_depends_only_on_own_inputs() {
        let cfg = small_cfg();
        let net = SlpdNet::<f64>::new(&cfg, &ArchConfig::default(), 1).unwrap();
        let chans = generate_channels(&cfg, 2, 2).unwrap();
        let alone = net.decode_probs(&[(chans[0].user(0), C64::new(0.5, 0.5), 2)]).unwrap();
        let mixed = net
            .decode_probs(&[(chans[1].user(1), C64::new(-2.0, 0.1), 1), (chans[0].user(0), C64::new(0.5, 0.5), 2)])
            .unwrap();
        assert_eq!(alone.row(0), mixed.row(1));
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = small_cfg();
        let mut net = SlpdNet::<f64>::new(&cfg, &ArchConfig::default(), 9).unwrap();
        let ckpt = net.to_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.safetensors");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, ckpt);
        let mut back = SlpdNet::<f64>::from_checkpoint(&loaded, &cfg).unwrap();
        assert_eq!(back.to_checkpoint(), ckpt);
        let other = SystemConfig { num_antennas: 8, ..cfg };
        assert!(matches!(SlpdNet::<f64>::from_checkpoint(&loaded, &other), Err(Error::Incompatible(_))));
    }
}
