//! Single-path uniform-linear-array channels and the noisy downlink.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{PathGain, SystemConfig};
use crate::error::{Error, Result};
use crate::rng;
use crate::store::{self, NamedArray};
use crate::C64;

/// Half-wavelength ULA response: element `n` is `exp(j*pi*n*sin(angle))`.
pub fn steering_vector(angle_deg: f64, num_antennas: usize) -> Array1<C64> {
    let phase = PI * angle_deg.to_radians().sin();
    Array1::from_iter((0..num_antennas).map(|n| C64::from_polar(1.0, phase * n as f64)))
}

/// `sigma^2 = P / 10^(snr/10)`.
pub fn snr_to_noise_var(snr_db: f64, power_budget: f64) -> f64 {
    power_budget / 10f64.powf(snr_db / 10.0)
}

/// One channel draw: `N_t x K` matrix whose column `k` is
/// `path_gains[k] * steering(path_angles[k])`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub matrix: Array2<C64>,
    pub path_angles: Vec<f64>,
    pub path_gains: Vec<C64>,
}

impl ChannelRealization {
    pub fn from_paths(num_antennas: usize, path_angles: Vec<f64>, path_gains: Vec<C64>) -> Result<Self> {
        if path_angles.len() != path_gains.len() {
            return Err(Error::Dimension(format!(
                "{} path angles but {} path gains",
                path_angles.len(),
                path_gains.len()
            )));
        }
        let mut matrix = Array2::zeros((num_antennas, path_angles.len()));
        for (k, (&theta, &alpha)) in path_angles.iter().zip(&path_gains).enumerate() {
            let a = steering_vector(theta, num_antennas);
            matrix.column_mut(k).assign(&a.mapv(|v| v * alpha));
        }
        Ok(ChannelRealization { matrix, path_angles, path_gains })
    }

    /// Wraps an arbitrary channel matrix (used by tests and baselines); path
    /// parameters are left empty.
    pub fn from_matrix(matrix: Array2<C64>) -> Self {
        ChannelRealization { matrix, path_angles: Vec::new(), path_gains: Vec::new() }
    }

    pub fn num_antennas(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn num_users(&self) -> usize {
        self.matrix.ncols()
    }

    /// Channel vector `h_k`.
    pub fn user(&self, k: usize) -> ArrayView1<'_, C64> {
        self.matrix.column(k)
    }

    /// Noise-free received samples `h_k^H x` for every user.
    pub fn receive(&self, x: ArrayView1<'_, C64>) -> Result<Array1<C64>> {
        if x.len() != self.num_antennas() {
            return Err(Error::Dimension(format!(
                "signal has {} entries for {} antennas",
                x.len(),
                self.num_antennas()
            )));
        }
        Ok(Array1::from_iter(
            self.matrix.columns().into_iter().map(|h| h.iter().zip(x.iter()).map(|(h, x)| h.conj() * x).sum()),
        ))
    }
}

/// Draws `count` realizations. Realization `i` uses its own derived stream,
/// so any prefix of a larger draw with the same seed is identical.
pub fn generate_channels(cfg: &SystemConfig, count: usize, seed: u64) -> Result<Vec<ChannelRealization>> {
    if count == 0 {
        return Err(Error::InvalidConfig("channel count must be positive".into()));
    }
    cfg.validate()?;
    (0..count)
        .map(|i| {
            let mut rng = rng::seeded(rng::derive(seed, i as u64));
            let mut angles = Vec::with_capacity(cfg.num_users);
            let mut gains = Vec::with_capacity(cfg.num_users);
            for &center in &cfg.user_center_angles {
                let spread = cfg.angle_spread_deg;
                let theta = if spread > 0.0 { rng.random_range(center - spread..=center + spread) } else { center };
                let alpha = match cfg.path_gain {
                    PathGain::ComplexGaussian => rng::complex_normal(&mut rng, 1.0),
                    PathGain::Unit => C64::new(1.0, 0.0),
                };
                angles.push(theta);
                gains.push(alpha);
            }
            ChannelRealization::from_paths(cfg.num_antennas, angles, gains)
        })
        .collect()
}

/// `r_k = h_k^H x + n_k` with `n_k ~ CN(0, noise_var)`.
pub fn apply_channel<R: Rng + ?Sized>(
    channel: &ChannelRealization,
    x: ArrayView1<'_, C64>,
    noise_var: f64,
    rng: &mut R,
) -> Result<Array1<C64>> {
    if !(noise_var >= 0.0) {
        return Err(Error::InvalidConfig(format!("noise variance must be nonnegative, got {noise_var}")));
    }
    let mut r = channel.receive(x)?;
    if noise_var > 0.0 {
        for v in r.iter_mut() {
            *v += rng::complex_normal(rng, noise_var);
        }
    }
    Ok(r)
}

/// Sizes of the consecutive train/test/validation partitions of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: usize,
    pub test: usize,
    pub validation: usize,
}

impl Splits {
    pub fn total(&self) -> usize {
        self.train + self.test + self.validation
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DatasetManifest {
    format: String,
    version: u32,
    count: usize,
    seed: u64,
    splits: Splits,
    system: SystemConfig,
}

const DATASET_FORMAT: &str = "slplink-channels";

/// A seeded channel dataset with its split boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDataset {
    pub system: SystemConfig,
    pub seed: u64,
    pub splits: Splits,
    pub realizations: Vec<ChannelRealization>,
}

impl ChannelDataset {
    pub fn generate(system: &SystemConfig, splits: Splits, seed: u64) -> Result<Self> {
        let realizations = generate_channels(system, splits.total(), seed)?;
        Ok(ChannelDataset { system: system.clone(), seed, splits, realizations })
    }

    pub fn train(&self) -> &[ChannelRealization] {
        &self.realizations[..self.splits.train]
    }

    pub fn test(&self) -> &[ChannelRealization] {
        &self.realizations[self.splits.train..self.splits.train + self.splits.test]
    }

    pub fn validation(&self) -> &[ChannelRealization] {
        &self.realizations[self.splits.train + self.splits.test..]
    }

    /// Writes the array container to `path` and the JSON manifest next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        let (n, nt, k) = (self.realizations.len(), self.system.num_antennas, self.system.num_users);
        let mut channels = Vec::with_capacity(n * 2 * nt * k);
        let mut angles = Vec::with_capacity(n * k);
        let mut gains = Vec::with_capacity(n * 2 * k);
        for h in &self.realizations {
            channels.extend(h.matrix.iter().map(|v| v.re));
            channels.extend(h.matrix.iter().map(|v| v.im));
            angles.extend_from_slice(&h.path_angles);
            gains.extend(h.path_gains.iter().map(|g| g.re));
            gains.extend(h.path_gains.iter().map(|g| g.im));
        }
        let manifest = self.manifest();
        let arrays = vec![
            NamedArray::f64("channels", vec![n, 2, nt, k], channels),
            NamedArray::f64("path_angles", vec![n, k], angles),
            NamedArray::f64("path_gains", vec![n, 2, k], gains),
        ];
        store::write(path, &arrays, &[("manifest", serde_json::to_string(&manifest)?)])?;
        std::fs::write(manifest_path(path), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (arrays, meta) = store::read(path)?;
        let manifest: DatasetManifest = serde_json::from_str(
            meta.get("manifest").ok_or_else(|| Error::Format("dataset lacks a manifest".into()))?,
        )?;
        if manifest.format != DATASET_FORMAT {
            return Err(Error::Format(format!("not a channel dataset: {}", manifest.format)));
        }
        let (n, nt, k) = (manifest.count, manifest.system.num_antennas, manifest.system.num_users);
        let channels = store::take_f64(&arrays, "channels", &[n, 2, nt, k])?;
        let angles = store::take_f64(&arrays, "path_angles", &[n, k])?;
        let gains = store::take_f64(&arrays, "path_gains", &[n, 2, k])?;
        let block = nt * k;
        let realizations = (0..n)
            .map(|i| {
                let base = i * 2 * block;
                let matrix = Array2::from_shape_fn((nt, k), |(a, u)| {
                    C64::new(channels[base + a * k + u], channels[base + block + a * k + u])
                });
                ChannelRealization {
                    matrix,
                    path_angles: angles[i * k..(i + 1) * k].to_vec(),
                    path_gains: (0..k).map(|u| C64::new(gains[i * 2 * k + u], gains[i * 2 * k + k + u])).collect(),
                }
            })
            .collect();
        if manifest.splits.total() != n {
            return Err(Error::Format("dataset splits do not cover the stored channels".into()));
        }
        Ok(ChannelDataset { system: manifest.system, seed: manifest.seed, splits: manifest.splits, realizations })
    }

    fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            format: DATASET_FORMAT.into(),
            version: 1,
            count: self.realizations.len(),
            seed: self.seed,
            splits: self.splits,
            system: self.system.clone(),
        }
    }
}

pub fn manifest_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("json")
}
