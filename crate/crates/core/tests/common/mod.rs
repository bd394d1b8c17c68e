#![allow(dead_code)]

use slplink::channel::generate_channels;
use slplink::config::ArchConfig;
use slplink::modulation::random_messages;
use slplink::nn::{Slot, Visit};
use slplink::rng;
use slplink::slpd::{SlotBatch, SlpdNet};
use slplink::{ChannelRealization, SystemConfig, C64};

/// Four antennas, two users, up to QPSK.
pub fn mini_system() -> SystemConfig {
    SystemConfig {
        num_antennas: 4,
        num_users: 2,
        max_order: 2,
        rate_req: 3,
        user_center_angles: vec![-20.0, 25.0],
        ..SystemConfig::desk()
    }
}

pub fn mini_batch<'a>(channels: &'a [ChannelRealization], seed: u64) -> SlotBatch<'a> {
    let mut r = rng::seeded(seed);
    let mut batch = SlotBatch { channels: vec![], messages: vec![], orders: vec![], noise: vec![] };
    for (i, h) in channels.iter().enumerate() {
        let orders = if i % 2 == 0 { vec![2, 1] } else { vec![1, 2] };
        batch.messages.push(random_messages(&mut r, &orders));
        batch.noise.push((0..2).map(|_| rng::complex_normal(&mut r, 0.1)).collect());
        batch.channels.push(h);
        batch.orders.push(orders);
    }
    batch
}

fn with_weight(net: &mut SlpdNet<f64>, param: usize, elem: usize, f: impl Fn(&mut f64)) -> f64 {
    let mut i = 0;
    let mut out = 0.0;
    net.visit_mut(&mut |_, slot| {
        if let Slot::Param(p) = slot {
            if i == param {
                let w = p.value.as_slice_mut().expect("contiguous");
                f(&mut w[elem]);
                out = w[elem];
            }
            i += 1;
        }
    });
    out
}

/// Compares backpropagated gradients with central differences on `samples`
/// random weights of the miniature network. Returns `(name, analytic,
/// numeric, relative error)` per weight.
pub fn gradient_check(samples: usize, seed: u64) -> Vec<(String, f64, f64, f64)> {
    let sys = mini_system();
    let channels = generate_channels(&sys, 6, seed).unwrap();
    let batch = mini_batch(&channels, seed + 1);
    let mut net = SlpdNet::<f64>::new(&sys, &ArchConfig::default(), seed).unwrap();
    net.forward_loss(&batch, 1.0).unwrap();
    net.backward(&batch, 1.0);
    let mut params = Vec::new();
    net.visit_mut(&mut |name, slot| {
        if let Slot::Param(p) = slot {
            params.push((name.to_string(), p.grad.iter().copied().collect::<Vec<f64>>()));
        }
    });
    let mut r = rng::seeded(seed + 2);
    let mut out = Vec::new();
    use rand::Rng;
    while out.len() < samples {
        let pi = r.random_range(0..params.len());
        let ei = r.random_range(0..params[pi].1.len());
        let analytic = params[pi].1[ei];
        let h = 1e-6;
        with_weight(&mut net, pi, ei, |w| *w += h);
        let up = net.forward_loss(&batch, 1.0).unwrap();
        with_weight(&mut net, pi, ei, |w| *w -= 2.0 * h);
        let down = net.forward_loss(&batch, 1.0).unwrap();
        with_weight(&mut net, pi, ei, |w| *w += h);
        let numeric = (up - down) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        out.push((format!("{}[{ei}]", params[pi].0), analytic, numeric, rel));
    }
    out
}

/// Best margin found by exhaustive search over a grid of transmit vectors
/// with `|x|^2 = power`, for real-and-imaginary dimension `2 N_t <= 6`.
/// Returns the best margin and the grid's angular step.
pub fn grid_margin(
    channel: &ChannelRealization,
    symbols: &[C64],
    orders: &[u32],
    power: f64,
    steps: usize,
) -> (f64, f64) {
    let nt = channel.num_antennas();
    let dim = 2 * nt;
    // hyperspherical coordinates; the last angle spans the full circle
    let mut best = f64::NEG_INFINITY;
    let mut angles = vec![0usize; dim - 1];
    let step = std::f64::consts::PI / steps as f64;
    loop {
        let mut z = vec![0.0; dim];
        let mut rad = power.sqrt();
        for (i, &a) in angles.iter().enumerate() {
            let t = a as f64 * step;
            z[i] = rad * t.cos();
            rad *= t.sin();
        }
        z[dim - 1] = rad;
        let x: Vec<C64> = (0..nt).map(|n| C64::new(z[n], z[nt + n])).collect();
        let m = slplink::baselines::safety_margin(channel, &ndarray::Array1::from(x), symbols, orders).unwrap();
        best = best.max(m);
        let mut i = 0;
        loop {
            if i == angles.len() {
                return (best, step);
            }
            let limit = if i == angles.len() - 1 { 2 * steps } else { steps + 1 };
            angles[i] += 1;
            if angles[i] < limit {
                break;
            }
            angles[i] = 0;
            i += 1;
        }
    }
}
