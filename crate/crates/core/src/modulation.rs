//! PSK alphabets, modulation-order combinations and one-hot labels.
//!
//! Messages are 1-indexed: an order-`M` user sends `m` in `1..=2^M`, mapped to
//! `exp(j*2*pi*m / 2^M)`. Label vectors are stored 0-based, so message `m`
//! occupies slot `m - 1`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::C64;

/// Identifies the ordering used by [`enumerate_combos`]; recorded in
/// classifier checkpoints.
pub const ENUMERATION_RULE: &str = "lexicographic-ascending-v1";

pub fn alphabet_size(order_bits: u32) -> u32 {
    1u32 << order_bits
}

fn check_message(m: u32, order_bits: u32) -> Result<()> {
    let size = alphabet_size(order_bits);
    if m == 0 || m > size {
        return Err(Error::MessageOutOfRange { message: m, alphabet: size });
    }
    Ok(())
}

/// Phase of message `m` in radians, `2*pi*m / 2^M`.
pub fn psk_phase(m: u32, order_bits: u32) -> f64 {
    2.0 * PI * f64::from(m) / f64::from(alphabet_size(order_bits))
}

pub fn psk_map(m: u32, order_bits: u32) -> Result<C64> {
    check_message(m, order_bits)?;
    Ok(C64::from_polar(1.0, psk_phase(m, order_bits)))
}

/// One admissible assignment of per-user orders.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModOrderCombo {
    pub orders: Vec<u32>,
    pub index: usize,
}

impl ModOrderCombo {
    pub fn total_bits(&self) -> u32 {
        self.orders.iter().sum()
    }

    /// The same order for every user, outside any enumeration.
    pub fn uniform(num_users: usize, order_bits: u32) -> Self {
        ModOrderCombo { orders: vec![order_bits; num_users], index: usize::MAX }
    }
}

/// Every tuple in `{1..B}^K` with sum at least `R`, lexicographically
/// ascending. Empty when `K*B < R`.
pub fn enumerate_combos(num_users: usize, max_order: u32, rate_req: u32) -> Vec<ModOrderCombo> {
    let mut out = Vec::new();
    if num_users == 0 || max_order == 0 {
        return out;
    }
    let mut cur = vec![1u32; num_users];
    loop {
        if cur.iter().sum::<u32>() >= rate_req {
            out.push(ModOrderCombo { orders: cur.clone(), index: out.len() });
        }
        // odometer increment, last position fastest
        let mut pos = num_users;
        loop {
            if pos == 0 {
                return out;
            }
            pos -= 1;
            if cur[pos] < max_order {
                cur[pos] += 1;
                break;
            }
            cur[pos] = 1;
        }
    }
}

/// The numbered label space of the order classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ComboTable {
    pub num_users: usize,
    pub max_order: u32,
    pub rate_req: u32,
    combos: Vec<ModOrderCombo>,
}

impl ComboTable {
    pub fn new(num_users: usize, max_order: u32, rate_req: u32) -> Result<Self> {
        let combos = enumerate_combos(num_users, max_order, rate_req);
        if combos.is_empty() {
            return Err(Error::Infeasible { users: num_users, max_order, rate: rate_req });
        }
        Ok(ComboTable { num_users, max_order, rate_req, combos })
    }

    pub fn len(&self) -> usize {
        self.combos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.combos.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&ModOrderCombo> {
        self.combos.get(index)
    }

    pub fn combos(&self) -> &[ModOrderCombo] {
        &self.combos
    }

    pub fn index_of(&self, orders: &[u32]) -> Option<usize> {
        self.combos.binary_search_by(|c| c.orders.as_slice().cmp(orders)).ok()
    }

    /// Uniformly random member.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &ModOrderCombo {
        &self.combos[rng.random_range(0..self.combos.len())]
    }
}

/// Standard one-hot label of length `2^M`.
pub fn one_hot(m: u32, order_bits: u32) -> Result<Vec<f64>> {
    check_message(m, order_bits)?;
    let mut v = vec![0.0; alphabet_size(order_bits) as usize];
    v[(m - 1) as usize] = 1.0;
    Ok(v)
}

/// One-hot label of order `M` zero-padded to the `2^B` outcomes of the
/// highest order.
pub fn one_hot_padded(m: u32, order_bits: u32, max_bits: u32) -> Result<Vec<f64>> {
    if order_bits > max_bits {
        return Err(Error::OrderTooHigh { order: order_bits, max: max_bits });
    }
    let mut v = one_hot(m, order_bits)?;
    v.resize(alphabet_size(max_bits) as usize, 0.0);
    Ok(v)
}

/// Messages of one symbol slot, one per user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageBatch {
    pub messages: Vec<u32>,
    pub combo_index: usize,
}

/// Uniform message per user.
pub fn random_messages<R: Rng + ?Sized>(rng: &mut R, orders: &[u32]) -> Vec<u32> {
    orders.iter().map(|&m| rng.random_range(1..=alphabet_size(m))).collect()
}

pub fn sample_messages(combo: &ModOrderCombo, count: usize, seed: u64) -> Vec<MessageBatch> {
    let mut rng = rng::seeded(seed);
    (0..count)
        .map(|_| MessageBatch { messages: random_messages(&mut rng, &combo.orders), combo_index: combo.index })
        .collect()
}

/// PSK symbol vector of a slot.
pub fn modulate(messages: &[u32], orders: &[u32]) -> Result<Vec<C64>> {
    if messages.len() != orders.len() {
        return Err(Error::Dimension(format!("{} messages for {} users", messages.len(), orders.len())));
    }
    messages.iter().zip(orders).map(|(&m, &o)| psk_map(m, o)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn close(a: C64, b: C64) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn psk_examples() {
        for m in 1..=3 {
            assert!(close(psk_map(1 << m, m).unwrap(), C64::new(1.0, 0.0)));
        }
        assert!(close(psk_map(1, 1).unwrap(), C64::new(-1.0, 0.0)));
        assert!(close(psk_map(1, 2).unwrap(), C64::new(0.0, 1.0)));
        assert!(psk_map(0, 2).is_err());
        assert!(psk_map(5, 2).is_err());
    }

    fn brute_force(k: usize, b: u32, r: u32) -> Vec<Vec<u32>> {
        let mut all: Vec<Vec<u32>> = vec![vec![]];
        for _ in 0..k {
            all = all.into_iter().flat_map(|p| (1..=b).map(move |m| [p.clone(), vec![m]].concat())).collect();
        }
        all.retain(|t| t.iter().sum::<u32>() >= r);
        all.sort();
        all
    }

    #[test]
    fn combo_counts() {
        assert_eq!(enumerate_combos(4, 3, 8).len(), 50);
        let c = enumerate_combos(2, 2, 4);
        assert_eq!(c, vec![ModOrderCombo { orders: vec![2, 2], index: 0 }]);
        assert_eq!(enumerate_combos(3, 3, 6).len(), 17);
        assert!(enumerate_combos(2, 1, 3).is_empty());
        assert!(ComboTable::new(2, 1, 3).is_err());
    }

    #[test]
    fn enumeration_matches_brute_force() {
        for k in 1..=5 {
            for b in 1..=4u32 {
                for r in 0..=(k as u32 * b) {
                    let got: Vec<Vec<u32>> = enumerate_combos(k, b, r).into_iter().map(|c| c.orders).collect();
                    assert_eq!(got, brute_force(k, b, r), "K={k} B={b} R={r}");
                }
            }
        }
    }

    #[test]
    fn table_lookup() {
        let t = ComboTable::new(4, 3, 8).unwrap();
        for c in t.combos() {
            assert_eq!(t.index_of(&c.orders), Some(c.index));
            assert!(c.total_bits() >= 8);
        }
        assert_eq!(t.index_of(&[1, 1, 1, 1]), None);
    }

    #[test]
    fn one_hot_examples() {
        assert_eq!(one_hot(1, 1).unwrap(), vec![1.0, 0.0]);
        assert_eq!(one_hot(3, 2).unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(one_hot(8, 3).unwrap(), vec![0., 0., 0., 0., 0., 0., 0., 1.]);
        assert_eq!(one_hot_padded(1, 1, 3).unwrap(), vec![1., 0., 0., 0., 0., 0., 0., 0.]);
        assert_eq!(one_hot_padded(2, 1, 3).unwrap(), vec![0., 1., 0., 0., 0., 0., 0., 0.]);
        assert_eq!(one_hot_padded(4, 2, 3).unwrap(), vec![0., 0., 0., 1., 0., 0., 0., 0.]);
        assert!(one_hot_padded(1, 3, 2).is_err());
        assert!(one_hot(3, 1).is_err());
    }

    #[test]
    fn message_source() {
        let combo = ModOrderCombo { orders: vec![1, 1], index: 0 };
        let batches = sample_messages(&combo, 100_000, 3);
        for u in 0..2 {
            let ones = batches.iter().filter(|b| b.messages[u] == 1).count() as f64 / 1e5;
            assert!((ones - 0.5).abs() < 0.01);
        }
        assert_eq!(batches, sample_messages(&combo, 100_000, 3));
        let combo = ModOrderCombo { orders: vec![3, 2], index: 0 };
        assert!(sample_messages(&combo, 1000, 1).iter().all(|b| (1..=8).contains(&b.messages[0])));
    }

    proptest! {
        #[test]
        fn psk_unit_modulus_and_distinct(order in 1u32..=4) {
            let pts: Vec<C64> = (1..=alphabet_size(order)).map(|m| psk_map(m, order).unwrap()).collect();
            for (i, a) in pts.iter().enumerate() {
                prop_assert!((a.norm() - 1.0).abs() < 1e-12);
                for b in &pts[i + 1..] {
                    prop_assert!((a - b).norm() > 1e-6);
                }
            }
        }

        #[test]
        fn padded_one_hot_has_single_one_in_prefix(order in 1u32..=3, extra in 0u32..=2, seed in 0u64..1000) {
            let max = order + extra;
            let mut r = rng::seeded(seed);
            let m = r.random_range(1..=alphabet_size(order));
            let v = one_hot_padded(m, order, max).unwrap();
            prop_assert_eq!(v.len(), alphabet_size(max) as usize);
            prop_assert_eq!(v.iter().filter(|&&x| x != 0.0).count(), 1);
            let pos = v.iter().position(|&x| x == 1.0).unwrap();
            prop_assert!(pos < alphabet_size(order) as usize);
        }
    }
}
