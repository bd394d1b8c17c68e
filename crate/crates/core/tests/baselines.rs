mod common;

use slplink::baselines::{ci_slp_precode, psk_phase_detect, safety_margin, zf_precode, CiSlpOptions};
use slplink::channel::generate_channels;
use slplink::modulation::{modulate, random_messages};
use slplink::{rng, SystemConfig};

fn small(nt: usize, k: usize) -> SystemConfig {
    let angles = [-35.0, 10.0, 40.0];
    SystemConfig {
        num_antennas: nt,
        num_users: k,
        max_order: 3,
        rate_req: k as u32,
        user_center_angles: angles[..k].to_vec(),
        ..SystemConfig::desk()
    }
}

#[test]
fn ci_margin_agrees_with_grid_search() {
    let mut r = rng::seeded(21);
    for (nt, k, steps) in [(2, 1, 60), (2, 2, 60), (3, 2, 14)] {
        let sys = small(nt, k);
        for h in generate_channels(&sys, 3, nt as u64 * 10 + k as u64).unwrap() {
            let orders: Vec<u32> = (0..k).map(|u| 1 + (u as u32 % 3)).collect();
            let s = modulate(&random_messages(&mut r, &orders), &orders).unwrap();
            let sol = ci_slp_precode(&h, &s, &orders, 1.0, CiSlpOptions::default()).unwrap();
            let (grid, step) = common::grid_margin(&h, &s, &orders, 1.0, steps);
            // every constraint row has norm |h_k| / cos(pi / 2^M) <= sqrt(2) |h_k|
            let lipschitz =
                (0..k).map(|u| h.user(u).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()).fold(0.0, f64::max)
                    * 2f64.sqrt();
            let resolution = lipschitz * step * ((2 * nt - 1) as f64).sqrt();
            assert!(grid <= sol.margin + 1e-9, "grid {grid} beats solver {}", sol.margin);
            assert!(sol.margin - grid <= resolution, "solver {} grid {grid} resolution {resolution}", sol.margin);
        }
    }
}

#[test]
fn zf_noise_free_decodes_every_message() {
    let sys = SystemConfig::desk();
    let mut r = rng::seeded(2);
    for h in generate_channels(&sys, 200, 9).unwrap() {
        let orders = [3, 2, 1, 2];
        let m = random_messages(&mut r, &orders);
        let s = modulate(&m, &orders).unwrap();
        let Ok((x, _)) = zf_precode(&h, &s, 1.0) else { continue };
        let rx = h.receive(x.x.view()).unwrap();
        for u in 0..4 {
            assert_eq!(psk_phase_detect(rx[u], orders[u]), m[u]);
        }
    }
}

#[test]
fn baselines_respect_power_budget() {
    let sys = SystemConfig::desk();
    let mut r = rng::seeded(5);
    for (i, h) in generate_channels(&sys, 200, 4).unwrap().iter().enumerate() {
        let p = 0.5 + (i % 7) as f64;
        let orders = [2, 2, 2, 2];
        let s = modulate(&random_messages(&mut r, &orders), &orders).unwrap();
        if let Ok((x, _)) = zf_precode(h, &s, p) {
            assert!((x.power() - p).abs() <= 1e-6 * p);
        }
        let ci = ci_slp_precode(h, &s, &orders, p, CiSlpOptions::default()).unwrap();
        assert!(ci.signal.power() <= p * (1.0 + 1e-6));
        let m = safety_margin(h, &ci.signal.x, &s, &orders).unwrap();
        assert!(m >= ci.margin - 1e-6);
    }
}

#[test]
fn phase_detector_is_scale_invariant() {
    let mut r = rng::seeded(8);
    use rand::Rng;
    for _ in 0..1000 {
        let z = slplink::C64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        let c = r.random_range(0.01..100.0);
        for m in 1..=3 {
            assert_eq!(psk_phase_detect(z * c, m), psk_phase_detect(z, m));
        }
    }
}
