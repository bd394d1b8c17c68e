//! Multiuser downlink link simulator with learned symbol-level precoding.
//!
//! A base station with `N_t` antennas serves `K` single-antenna users over a
//! single-path uniform-linear-array channel. The crate provides
//!
//! - channel generation and the noisy downlink ([`channel`]),
//! - PSK mapping, modulation-order combinations and one-hot labels ([`modulation`]),
//! - a small reverse-mode neural network toolkit ([`nn`]),
//! - the learned transmitter/receiver pair ([`slpd`]) and the modulation-order
//!   classifier ([`mop`]),
//! - the three-stage training pipeline ([`training`]),
//! - zero-forcing and constructive-interference baselines ([`baselines`]),
//! - Monte Carlo SER evaluation and report export ([`evaluation`]).

pub mod baselines;
pub mod channel;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod modulation;
pub mod mop;
pub mod network;
pub mod nn;
pub mod rng;
pub mod slpd;
pub mod store;
pub mod training;

pub use channel::{ChannelDataset, ChannelRealization, Splits};
pub use config::{EvalConfig, ExperimentConfig, Precision, SystemConfig, TrainConfig};
pub use error::{Error, Result};
pub use modulation::{ComboTable, ModOrderCombo};
pub use nn::Scalar;

/// Complex baseband sample.
pub type C64 = num_complex::Complex64;
