//! Benchmark fixtures shared by the criterion targets.

use slplink::channel::generate_channels;
use slplink::modulation::{modulate, random_messages};
use slplink::rng;
use slplink::slpd::SlotBatch;
use slplink::{ChannelRealization, SystemConfig, C64};

/// Desk-scale channels with QPSK symbol vectors.
pub fn fixtures(count: usize) -> (SystemConfig, Vec<ChannelRealization>, Vec<Vec<C64>>) {
    let sys = SystemConfig::desk();
    let channels = generate_channels(&sys, count, 1).expect("valid preset");
    let mut r = rng::seeded(2);
    let orders = vec![2; sys.num_users];
    let symbols = (0..count).map(|_| modulate(&random_messages(&mut r, &orders), &orders).expect("valid")).collect();
    (sys, channels, symbols)
}

/// A training minibatch over `channels` with QPSK and unit-SNR noise.
pub fn batch<'a>(sys: &SystemConfig, channels: &'a [ChannelRealization]) -> SlotBatch<'a> {
    let mut r = rng::seeded(3);
    let orders = vec![2; sys.num_users];
    SlotBatch {
        channels: channels.iter().collect(),
        messages: channels.iter().map(|_| random_messages(&mut r, &orders)).collect(),
        orders: channels.iter().map(|_| orders.clone()).collect(),
        noise: channels.iter().map(|_| orders.iter().map(|_| rng::complex_normal(&mut r, 0.1)).collect()).collect(),
    }
}
