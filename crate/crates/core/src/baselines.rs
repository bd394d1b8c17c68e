//! Classical reference transceivers: zero-forcing block-level precoding,
//! constructive-interference symbol-level precoding and the PSK phase
//! detector.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use ndarray::Array1;

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::modulation::{alphabet_size, psk_phase};
use crate::slpd::PrecodedSignal;
use crate::C64;

/// Unscaled zero-forcing signal `H (H^H H)^-1 s`.
pub fn zf_direction(channel: &ChannelRealization, symbols: &[C64]) -> Result<Array1<C64>> {
    let (nt, k) = (channel.num_antennas(), channel.num_users());
    if symbols.len() != k {
        return Err(Error::Dimension(format!("{} symbols for {k} users", symbols.len())));
    }
    if k > nt {
        return Err(Error::Singular);
    }
    let h = DMatrix::from_fn(nt, k, |n, u| channel.matrix[[n, u]]);
    let gram = h.adjoint() * &h;
    let chol = gram.clone().cholesky().ok_or(Error::Singular)?;
    let diag: Vec<f64> = (0..k).map(|i| chol.l()[(i, i)].norm_sqr()).collect();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    if !(lo > 1e-12 * hi) {
        return Err(Error::Singular);
    }
    let s = DVector::from_column_slice(symbols);
    let x = h * chol.solve(&s);
    Ok(Array1::from_iter(x.iter().copied()))
}

/// Zero-forcing precoder rescaled to exactly `power`; returns the signal and
/// the received scale `c` with `H^H x = c s`.
pub fn zf_precode(channel: &ChannelRealization, symbols: &[C64], power: f64) -> Result<(PrecodedSignal, f64)> {
    let x0 = zf_direction(channel, symbols)?;
    let norm = x0.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::DegenerateOutput);
    }
    let c = power.sqrt() / norm;
    Ok((PrecodedSignal { x: x0.mapv(|v| v * c) }, c))
}

/// Half-width of the decision sector of an order-`M` PSK alphabet.
fn sector(order_bits: u32) -> f64 {
    PI / f64::from(alphabet_size(order_bits))
}

/// Constructive-interference margin of one rotated received sample:
/// `Re * tan(pi/2^M) - |Im|`, or `Re` for BPSK (the sector is a half-plane).
pub fn rotated_margin(rotated: C64, order_bits: u32) -> f64 {
    if order_bits <= 1 {
        rotated.re
    } else {
        rotated.re * sector(order_bits).tan() - rotated.im.abs()
    }
}

/// Minimum margin over users of `x`, with `r~_k = h_k^H x conj(s_k)`.
pub fn safety_margin(channel: &ChannelRealization, x: &Array1<C64>, symbols: &[C64], orders: &[u32]) -> Result<f64> {
    let r = channel.receive(x.view())?;
    Ok(r.iter()
        .zip(symbols)
        .zip(orders)
        .map(|((r, s), &m)| rotated_margin(r * s.conj(), m))
        .fold(f64::INFINITY, f64::min))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CiSlpOptions {
    /// Relative duality-gap tolerance.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CiSlpOptions {
    fn default() -> Self {
        CiSlpOptions { tol: 1e-6, max_iter: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CiSolution {
    pub signal: PrecodedSignal,
    /// Achieved minimum margin (primal objective).
    pub margin: f64,
    /// Upper bound on the optimal margin.
    pub bound: f64,
    pub iterations: usize,
}

/// Real constraint rows `g` with `g . [Re x; Im x] >= t` describing every
/// user's constructive region.
fn constraint_rows(channel: &ChannelRealization, symbols: &[C64], orders: &[u32]) -> Result<Vec<Vec<f64>>> {
    let (nt, k) = (channel.num_antennas(), channel.num_users());
    if symbols.len() != k || orders.len() != k {
        return Err(Error::Dimension(format!("{} symbols / {} orders for {k} users", symbols.len(), orders.len())));
    }
    let mut rows = Vec::with_capacity(2 * k);
    for u in 0..k {
        let v: Vec<C64> = channel.user(u).iter().map(|h| h * symbols[u]).collect();
        // Re r~ = a . z, Im r~ = b . z
        let a: Vec<f64> = v.iter().map(|c| c.re).chain(v.iter().map(|c| c.im)).collect();
        let b: Vec<f64> = v.iter().map(|c| -c.im).chain(v.iter().map(|c| c.re)).collect();
        if orders[u] <= 1 {
            rows.push(a);
        } else {
            let t = sector(orders[u]).tan();
            rows.push(a.iter().zip(&b).map(|(a, b)| t * a - b).collect());
            rows.push(a.iter().zip(&b).map(|(a, b)| t * a + b).collect());
        }
    }
    debug_assert!(rows.iter().all(|r| r.len() == 2 * nt));
    Ok(rows)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimum-norm point of the convex hull of `points` (Wolfe's method).
/// Returns the point and the iteration count; stops when `done(x, min_j g_j.x)`.
fn min_norm_point(
    points: &[Vec<f64>],
    max_iter: usize,
    done: impl Fn(&[f64], f64) -> bool,
) -> std::result::Result<(Vec<f64>, usize), (Vec<f64>, usize)> {
    let dim = points[0].len();
    let combine = |set: &[usize], w: &[f64]| {
        let mut x = vec![0.0; dim];
        for (&i, &wi) in set.iter().zip(w) {
            for (xv, pv) in x.iter_mut().zip(&points[i]) {
                *xv += wi * pv;
            }
        }
        x
    };
    let start = (0..points.len())
        .min_by(|&a, &b| dot(&points[a], &points[a]).total_cmp(&dot(&points[b], &points[b])))
        .expect("nonempty");
    let mut set = vec![start];
    let mut w = vec![1.0];
    let mut x = points[start].clone();
    let scale = points.iter().map(|p| dot(p, p)).fold(0.0, f64::max);
    for iter in 1..=max_iter {
        let (j, gx) =
            (0..points.len()).map(|i| (i, dot(&points[i], &x))).min_by(|a, b| a.1.total_cmp(&b.1)).expect("nonempty");
        if done(&x, gx) || dot(&x, &x) - gx <= 1e-15 * scale {
            return Ok((x, iter));
        }
        if set.contains(&j) {
            return Err((x, iter));
        }
        set.push(j);
        w.push(0.0);
        loop {
            // affine minimizer over the corral: [Q 1; 1' 0][a; mu] = [0; 1]
            let n = set.len();
            let mut kkt = DMatrix::<f64>::zeros(n + 1, n + 1);
            for (r, &i) in set.iter().enumerate() {
                for (c, &l) in set.iter().enumerate() {
                    kkt[(r, c)] = dot(&points[i], &points[l]);
                }
                kkt[(r, n)] = 1.0;
                kkt[(n, r)] = 1.0;
            }
            let mut rhs = DVector::<f64>::zeros(n + 1);
            rhs[n] = 1.0;
            let Some(sol) = kkt.lu().solve(&rhs) else {
                return Err((x, iter));
            };
            let alpha: Vec<f64> = sol.iter().take(n).copied().collect();
            if alpha.iter().all(|&a| a > 1e-14) {
                w = alpha;
                break;
            }
            let theta = w
                .iter()
                .zip(&alpha)
                .filter(|(_, &a)| a <= 1e-14)
                .map(|(&wi, &a)| if wi - a > 0.0 { wi / (wi - a) } else { 0.0 })
                .fold(1.0, f64::min);
            for (wi, &a) in w.iter_mut().zip(&alpha) {
                *wi = (1.0 - theta) * *wi + theta * a;
            }
            let keep: Vec<bool> = w.iter().map(|&wi| wi > 1e-14).collect();
            let mut k = 0;
            set.retain(|_| {
                k += 1;
                keep[k - 1]
            });
            w.retain(|&wi| wi > 1e-14);
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|wi| *wi /= total);
            if set.is_empty() {
                return Err((x, iter));
            }
        }
        x = combine(&set, &w);
    }
    Err((x, max_iter))
}

/// Maximizes the minimum constructive-interference margin `t` subject to
/// `Re(r~_k) tan(pi/2^M_k) - |Im(r~_k)| >= t` and `|x|^2 <= P`.
///
/// The dual of this program is the minimum-norm point `g*` of the convex hull
/// of the constraint rows; the optimum is `x* = sqrt(P) g*/|g*|` with value
/// `sqrt(P) |g*|`. Iteration stops once the duality gap falls below
/// `tol * sqrt(P) |g*|`.
pub fn ci_slp_precode(
    channel: &ChannelRealization,
    symbols: &[C64],
    orders: &[u32],
    power: f64,
    opts: CiSlpOptions,
) -> Result<CiSolution> {
    if !(power > 0.0) {
        return Err(Error::InvalidConfig(format!("power budget must be positive, got {power}")));
    }
    let rows = constraint_rows(channel, symbols, orders)?;
    let nt = channel.num_antennas();
    let sp = power.sqrt();
    let finish = |x: &[f64], iterations: usize| {
        let norm = dot(x, x).sqrt();
        let scale = rows.iter().map(|r| dot(r, r).sqrt()).fold(0.0, f64::max);
        if norm <= 1e-12 * scale {
            // the origin is in the hull: no signal achieves a positive margin
            let signal = PrecodedSignal { x: Array1::zeros(nt) };
            return CiSolution { signal, margin: 0.0, bound: 0.0, iterations };
        }
        let z: Vec<f64> = x.iter().map(|v| v * sp / norm).collect();
        let margin = rows.iter().map(|r| dot(r, &z)).fold(f64::INFINITY, f64::min);
        let x = Array1::from_iter((0..nt).map(|n| C64::new(z[n], z[nt + n])));
        CiSolution { signal: PrecodedSignal { x }, margin, bound: sp * norm, iterations }
    };
    let tol = opts.tol;
    let done = |x: &[f64], gx: f64| {
        let xx = dot(x, x);
        let norm = xx.sqrt();
        norm > 0.0 && sp * (xx - gx) / norm <= tol * sp * norm
    };
    match min_norm_point(&rows, opts.max_iter, done) {
        Ok((x, it)) => Ok(finish(&x, it)),
        Err((x, it)) => {
            let sol = finish(&x, it);
            if sol.bound - sol.margin <= tol * sol.bound.max(f64::MIN_POSITIVE) {
                Ok(sol)
            } else {
                Err(Error::NoConvergence { iterations: it, gap: sol.bound - sol.margin, margin: sol.margin })
            }
        }
    }
}

/// Nearest PSK phase, 1-indexed; ties go to the smaller message.
pub fn psk_phase_detect(r: C64, order_bits: u32) -> u32 {
    let angle = r.arg();
    let mut best = 1;
    let mut best_dist = f64::INFINITY;
    for m in 1..=alphabet_size(order_bits) {
        let mut d = (angle - psk_phase(m, order_bits)).rem_euclid(2.0 * PI);
        if d > PI {
            d = 2.0 * PI - d;
        }
        if d < best_dist - 1e-12 {
            best = m;
            best_dist = d;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::generate_channels;
    use crate::config::SystemConfig;
    use crate::modulation::{modulate, psk_map, random_messages};
    use crate::rng;
    use ndarray::Array2;

    #[test]
    fn zf_identity_channel() {
        let h = ChannelRealization::from_matrix(Array2::from_diag(&Array1::from_elem(2, C64::new(1.0, 0.0))));
        let s = [C64::new(0.0, 1.0), C64::new(-1.0, 0.0)];
        let (x, c) = zf_precode(&h, &s, 1.0).unwrap();
        assert!((x.power() - 1.0).abs() < 1e-12);
        assert!((c - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        let r = h.receive(x.x.view()).unwrap();
        assert!((r[0] - s[0] * c).norm() < 1e-12);
    }

    #[test]
    fn zf_residual_and_single_user() {
        let cfg = SystemConfig::desk();
        let mut r = rng::seeded(4);
        for h in generate_channels(&cfg, 50, 1).unwrap() {
            let s = modulate(&random_messages(&mut r, &[2; 4]), &[2; 4]).unwrap();
            let Ok((x, c)) = zf_precode(&h, &s, 1.0) else { continue };
            let rx = h.receive(x.x.view()).unwrap();
            let resid: f64 = rx.iter().zip(&s).map(|(a, b)| (a - b * c).norm_sqr()).sum::<f64>().sqrt();
            assert!(resid <= 1e-8 * c * 2.0);
        }
        let h = ChannelRealization::from_matrix(
            Array2::from_shape_vec((3, 1), vec![C64::new(1.0, 2.0), C64::new(-0.5, 0.1), C64::new(0.3, -1.0)]).unwrap(),
        );
        let s = [C64::new(0.0, 1.0)];
        let (x, _) = zf_precode(&h, &s, 2.0).unwrap();
        let hs: Vec<C64> = h.user(0).iter().map(|v| v * s[0]).collect();
        let ratio = x.x[0] / hs[0];
        assert!(ratio.im.abs() < 1e-12 && ratio.re > 0.0);
        for (a, b) in x.x.iter().zip(&hs) {
            assert!((a - b * ratio).norm() < 1e-12);
        }
    }

    #[test]
    fn zf_rejects_rank_deficient() {
        let col = crate::channel::steering_vector(10.0, 4);
        let h = ChannelRealization::from_matrix(ndarray::stack![ndarray::Axis(1), col, col]);
        assert!(matches!(zf_precode(&h, &[C64::new(1.0, 0.0); 2], 1.0), Err(Error::Singular)));
    }

    #[test]
    fn ci_single_user_closed_form() {
        let cfg = SystemConfig { num_users: 1, rate_req: 1, user_center_angles: vec![5.0], ..SystemConfig::desk() };
        for (i, h) in generate_channels(&cfg, 20, 8).unwrap().iter().enumerate() {
            let s = [psk_map((i % 4 + 1) as u32, 2).unwrap()];
            let p = 1.0 + i as f64 * 0.1;
            let sol = ci_slp_precode(h, &s, &[2], p, CiSlpOptions::default()).unwrap();
            let hn = h.user(0).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            let expect: Vec<C64> = h.user(0).iter().map(|v| v / hn * s[0] * p.sqrt()).collect();
            let err: f64 = sol.signal.x.iter().zip(&expect).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            assert!(err <= 1e-5 * p.sqrt(), "err {err}");
            let r = h.receive(sol.signal.x.view()).unwrap();
            assert!((r[0] - s[0] * p.sqrt() * hn).norm() <= 1e-5 * p.sqrt() * hn);
        }
    }

    #[test]
    fn ci_feasible_monotone_and_beats_zf() {
        let cfg = SystemConfig::desk();
        let mut r = rng::seeded(5);
        for h in generate_channels(&cfg, 30, 3).unwrap() {
            let orders = [3, 1, 2, 2];
            let s = modulate(&random_messages(&mut r, &orders), &orders).unwrap();
            let a = ci_slp_precode(&h, &s, &orders, 1.0, CiSlpOptions::default()).unwrap();
            let b = ci_slp_precode(&h, &s, &orders, 2.0, CiSlpOptions::default()).unwrap();
            assert!(b.margin >= a.margin);
            assert!(a.signal.power() <= 1.0 + 1e-9);
            let m = safety_margin(&h, &a.signal.x, &s, &orders).unwrap();
            assert!((m - a.margin).abs() < 1e-9);
            assert!(a.bound - a.margin <= 1e-6 * a.bound);
            if let Ok((zf, _)) = zf_precode(&h, &s, 1.0) {
                assert!(a.margin >= safety_margin(&h, &zf.x, &s, &orders).unwrap() - 1e-9);
            }
        }
    }

    #[test]
    fn phase_detector_examples() {
        assert_eq!(psk_phase_detect(C64::new(1.0, 0.01), 2), 4);
        assert_eq!(psk_phase_detect(C64::new(1.0, 1.0), 2), 1);
        assert_eq!(psk_phase_detect(C64::new(0.0, 0.0), 2), 4);
        for order in 1..=3 {
            for m in 1..=alphabet_size(order) {
                let s = psk_map(m, order).unwrap();
                assert_eq!(psk_phase_detect(s * 3.0, order), m);
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn instance(seed: u64, k: usize) -> (ChannelRealization, Vec<u32>, Vec<C64>) {
            let sys = SystemConfig {
                num_antennas: 6,
                num_users: k,
                rate_req: k as u32,
                user_center_angles: vec![-50.0, -10.0, 30.0, 60.0][..k].to_vec(),
                ..SystemConfig::desk()
            };
            let h = generate_channels(&sys, 1, seed).unwrap().remove(0);
            let mut r = rng::seeded(seed);
            let orders: Vec<u32> = (0..k).map(|u| 1 + (seed as u32 + u as u32) % 3).collect();
            let s = modulate(&random_messages(&mut r, &orders), &orders).unwrap();
            (h, orders, s)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn budgets_hold(seed in 0u64..10_000, k in 1usize..=4, power in 0.05f64..20.0) {
                let (h, orders, s) = instance(seed, k);
                if let Ok((x, c)) = zf_precode(&h, &s, power) {
                    prop_assert!((x.power() - power).abs() <= 1e-9 * power);
                    prop_assert!(c > 0.0);
                }
                let sol = ci_slp_precode(&h, &s, &orders, power, CiSlpOptions::default()).unwrap();
                prop_assert!(sol.signal.power() <= power * (1.0 + 1e-9));
                prop_assert!(sol.margin <= sol.bound + 1e-9);
            }

            #[test]
            fn ci_margin_scales_with_sqrt_power(seed in 0u64..10_000, k in 1usize..=4, power in 0.05f64..20.0) {
                let (h, orders, s) = instance(seed, k);
                let one = ci_slp_precode(&h, &s, &orders, 1.0, CiSlpOptions::default()).unwrap();
                let scaled = ci_slp_precode(&h, &s, &orders, power, CiSlpOptions::default()).unwrap();
                prop_assert!((scaled.margin - one.margin * power.sqrt()).abs() <= 1e-5 * power.sqrt().max(1.0));
            }

            #[test]
            fn detector_inverts_rotation(order in 1u32..=4, gain in 0.01f64..100.0, jitter in -0.99f64..0.99) {
                let half = std::f64::consts::PI / alphabet_size(order) as f64;
                for m in 1..=alphabet_size(order) {
                    let r = psk_map(m, order).unwrap() * C64::from_polar(gain, jitter * half);
                    prop_assert_eq!(psk_phase_detect(r, order), m);
                }
            }
        }
    }
}
