use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use slplink::baselines::CiSlpOptions;
use slplink::evaluation::{
    evaluate_topk, export_constellation, predicted_plan, ser_curve, write_accuracy, write_constellation,
    write_ser_curve, ConstructiveInterference, Learned, LinkSystem, OrderPlan, TrialPolicy, ZeroForcing,
};
use slplink::modulation::{enumerate_combos, ComboTable};
use slplink::mop::MopNet;
use slplink::network::Checkpoint;
use slplink::nn::Scalar;
use slplink::slpd::SlpdNet;
use slplink::training::{train_stage1, train_stage2, train_stage3, EpochRecord, MopLabelSet, RunDir, TrainObserver};
use slplink::{ChannelDataset, Error, ExperimentConfig, Precision, Splits};

#[derive(Parser)]
#[command(name = "slplink", version, about = "Learned symbol-level precoding link simulator")]
struct Cli {
    /// Experiment configuration (TOML). Defaults to the built-in preset.
    #[arg(long, global = true, env = "AMPD_CONFIG")]
    config: Option<PathBuf>,

    /// Built-in preset used when no configuration file is given.
    #[arg(long, global = true, value_enum, default_value_t = Preset::Desk, env = "AMPD_PRESET")]
    preset: Preset,

    /// Overrides the experiment seed.
    #[arg(long, global = true, env = "AMPD_SEED")]
    seed: Option<u64>,

    /// Worker threads (0 uses every core).
    #[arg(long, global = true, default_value_t = 0, env = "AMPD_THREADS")]
    threads: usize,

    /// Single-threaded execution for byte-identical reruns.
    #[arg(long, global = true, env = "AMPD_DETERMINISTIC")]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Full,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SystemName {
    Ampd,
    SlpdQpsk,
    Zf,
    CiSlp,
}

impl SystemName {
    fn label(self) -> &'static str {
        match self {
            SystemName::Ampd => "ampd",
            SystemName::SlpdQpsk => "slpd-qpsk",
            SystemName::Zf => "zf",
            SystemName::CiSlp => "ci-slp",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the resolved configuration as TOML.
    Config,

    /// Generate a channel dataset with train/test/validation splits.
    GenData {
        #[arg(long, env = "AMPD_DATA")]
        out: PathBuf,
        /// Total channel count; splits keep the configured proportions.
        #[arg(long)]
        count: Option<usize>,
    },

    /// Run one training stage.
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        stage: u8,
        #[arg(long, env = "AMPD_DATA")]
        data: PathBuf,
        /// Run directory.
        #[arg(long, env = "AMPD_OUT")]
        out: PathBuf,
        /// Stage-I checkpoint (stage 2).
        #[arg(long, env = "AMPD_INIT")]
        init: Option<PathBuf>,
        /// Stage-II label file (stage 3).
        #[arg(long, env = "AMPD_LABELS")]
        labels: Option<PathBuf>,
        /// Overrides the epoch count of the selected stage.
        #[arg(long)]
        epochs: Option<usize>,
    },

    /// Estimate SER curves on the test split.
    Eval {
        #[arg(long, env = "AMPD_DATA")]
        data: PathBuf,
        #[arg(long, value_enum, value_delimiter = ',', required = true)]
        system: Vec<SystemName>,
        /// Transmitter/decoder checkpoint for `slpd-qpsk` (stage I).
        #[arg(long, env = "AMPD_CHECKPOINT")]
        checkpoint: Option<PathBuf>,
        /// Transmitter/decoder checkpoint for `ampd` (stage II); defaults to `--checkpoint`.
        #[arg(long, env = "AMPD_AMPD_CHECKPOINT")]
        ampd_checkpoint: Option<PathBuf>,
        /// Order classifier checkpoint for `ampd`.
        #[arg(long, env = "AMPD_MOP")]
        mop: Option<PathBuf>,
        /// Stage-II labels, enabling Top-k accuracy.
        #[arg(long, env = "AMPD_LABELS")]
        labels: Option<PathBuf>,
        /// SNR grid in dB.
        #[arg(long, value_delimiter = ',')]
        snr: Option<Vec<f64>>,
        #[arg(long)]
        topk: Option<usize>,
        #[arg(long, env = "AMPD_OUT")]
        out: PathBuf,
    },

    /// List admissible modulation order combinations.
    EnumerateCombos {
        #[arg(long = "users", visible_alias = "K")]
        users: usize,
        #[arg(long = "max-order", visible_alias = "B")]
        max_order: u32,
        #[arg(long = "rate", visible_alias = "R")]
        rate: u32,
    },

    /// Write noise-free received samples of one channel.
    ExportConstellation {
        #[arg(long, env = "AMPD_DATA")]
        data: PathBuf,
        #[arg(long, value_enum)]
        system: SystemName,
        #[arg(long, env = "AMPD_CHECKPOINT")]
        checkpoint: Option<PathBuf>,
        #[arg(long, env = "AMPD_MOP")]
        mop: Option<PathBuf>,
        /// Index into the test split.
        #[arg(long, default_value_t = 0)]
        channel: usize,
        /// Per-user orders; QPSK for every user when omitted (or the
        /// classifier's choice for `ampd`).
        #[arg(long, value_delimiter = ',')]
        orders: Option<Vec<u32>>,
        #[arg(long, default_value_t = 200)]
        symbols: usize,
        #[arg(long, env = "AMPD_OUT")]
        out: PathBuf,
    },
}

/// Failures that map to exit code 2.
fn is_config_error(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        matches!(
            e.downcast_ref::<Error>(),
            Some(Error::InvalidConfig(_) | Error::Infeasible { .. } | Error::OrderTooHigh { .. })
        ) || e.downcast_ref::<UsageError>().is_some()
    })
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_config_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn resolve_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::from_toml(&text)?
        }
        None => match cli.preset {
            Preset::Desk => ExperimentConfig::desk(),
            Preset::Full => ExperimentConfig::full(),
        },
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
        cfg.eval.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let threads = if cli.deterministic { 1 } else { cli.threads };
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().context("starting worker pool")?;
    if let Command::EnumerateCombos { users, max_order, rate } = &cli.command {
        return enumerate(*users, *max_order, *rate);
    }
    let cfg = resolve_config(&cli)?;
    match cli.command {
        Command::Config => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
        Command::GenData { out, count } => gen_data(&cfg, &out, count, cli.seed),
        Command::Train { stage, data, out, init, labels, epochs } => {
            let mut cfg = cfg;
            if let Some(e) = epochs {
                match stage {
                    1 => cfg.train.epochs_stage1 = e,
                    2 => cfg.train.epochs_stage2 = e,
                    _ => cfg.train.epochs_stage3 = e,
                }
            }
            let args = TrainArgs { stage, data, out, init, labels };
            match cfg.train.precision {
                Precision::F32 => train::<f32>(&cfg, &args),
                Precision::F64 => train::<f64>(&cfg, &args),
            }
        }
        Command::Eval { data, system, checkpoint, ampd_checkpoint, mop, labels, snr, topk, out } => {
            let args = EvalArgs { data, systems: system, checkpoint, ampd_checkpoint, mop, labels, snr, topk, out };
            match cfg.train.precision {
                Precision::F32 => eval::<f32>(&cfg, &args),
                Precision::F64 => eval::<f64>(&cfg, &args),
            }
        }
        Command::ExportConstellation { data, system, checkpoint, mop, channel, orders, symbols, out } => {
            let args = ExportArgs { data, system, checkpoint, mop, channel, orders, symbols, out };
            match cfg.train.precision {
                Precision::F32 => export::<f32>(&cfg, &args),
                Precision::F64 => export::<f64>(&cfg, &args),
            }
        }
        Command::EnumerateCombos { .. } => unreachable!(),
    }
}

fn enumerate(users: usize, max_order: u32, rate: u32) -> anyhow::Result<()> {
    if users == 0 || !(1..=8).contains(&max_order) {
        return Err(usage("need at least one user and a maximum order in 1..=8"));
    }
    let table = ComboTable::new(users, max_order, rate)?;
    debug_assert_eq!(table.len(), enumerate_combos(users, max_order, rate).len());
    for c in table.combos() {
        let orders: Vec<String> = c.orders.iter().map(u32::to_string).collect();
        println!("{} {}", c.index, orders.join(","));
    }
    Ok(())
}

fn scaled_splits(splits: Splits, count: usize) -> Splits {
    let total = splits.total() as f64;
    let test = (count as f64 * splits.test as f64 / total).round() as usize;
    let validation = (count as f64 * splits.validation as f64 / total).round() as usize;
    Splits { train: count.saturating_sub(test + validation), test, validation }
}

fn gen_data(cfg: &ExperimentConfig, out: &Path, count: Option<usize>, seed: Option<u64>) -> anyhow::Result<()> {
    let splits = match count {
        Some(0) => return Err(usage("--count must be positive")),
        Some(n) => scaled_splits(cfg.splits, n),
        None => cfg.splits,
    };
    let seed = seed.unwrap_or(cfg.train.seed);
    let data = ChannelDataset::generate(&cfg.system, splits, seed)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    data.save(out)?;
    eprintln!(
        "wrote {} channels ({} train / {} test / {} validation) to {}",
        splits.total(),
        splits.train,
        splits.test,
        splits.validation,
        out.display()
    );
    Ok(())
}

fn load_data(cfg: &ExperimentConfig, path: &Path) -> anyhow::Result<ChannelDataset> {
    let data = ChannelDataset::load(path).with_context(|| format!("loading dataset {}", path.display()))?;
    let (a, b) = (&data.system, &cfg.system);
    if a.num_antennas != b.num_antennas || a.num_users != b.num_users {
        bail!(Error::InvalidConfig(format!(
            "dataset has {}x{} channels, configuration expects {}x{}",
            a.num_antennas, a.num_users, b.num_antennas, b.num_users
        )));
    }
    Ok(data)
}

struct TrainArgs {
    stage: u8,
    data: PathBuf,
    out: PathBuf,
    init: Option<PathBuf>,
    labels: Option<PathBuf>,
}

/// Logs progress while persisting into the run directory.
struct Progress(RunDir);

impl TrainObserver for Progress {
    fn epoch(&mut self, r: &EpochRecord) -> slplink::Result<()> {
        let mut line = format!("stage {} epoch {:>3} loss {:.5} lr {:.1e}", r.stage, r.epoch + 1, r.loss, r.lr);
        if let Some(v) = r.validation_ser {
            line += &format!(" validation SER {v:.4}");
        }
        if let Some(v) = r.validation_accuracy {
            line += &format!(" validation accuracy {v:.4}");
        }
        eprintln!("{line}");
        self.0.epoch(r)
    }

    fn checkpoint(&mut self, tag: &str, ckpt: &Checkpoint) -> slplink::Result<()> {
        self.0.checkpoint(tag, ckpt)
    }
}

fn train<T: Scalar>(cfg: &ExperimentConfig, args: &TrainArgs) -> anyhow::Result<()> {
    // prerequisites are checked before any data is touched
    let init = match (args.stage, &args.init) {
        (2, None) => return Err(usage("stage 2 requires a stage-1 checkpoint; pass it with --init")),
        (2, Some(p)) => {
            Some(Checkpoint::load(p).with_context(|| format!("loading stage-1 checkpoint {}", p.display()))?)
        }
        _ => None,
    };
    let labels = match (args.stage, &args.labels) {
        (3, None) => return Err(usage("stage 3 requires the stage-2 label file; pass it with --labels")),
        (3, Some(p)) => Some(MopLabelSet::load(p).with_context(|| format!("loading labels {}", p.display()))?),
        _ => None,
    };
    let data = load_data(cfg, &args.data)?;
    let mut obs = Progress(RunDir::create(&args.out, cfg)?);
    match args.stage {
        1 => {
            let mut net = train_stage1::<T>(cfg, &data, &mut obs)?;
            net.to_checkpoint().save(&args.out.join("slpd.safetensors"))?;
        }
        2 => {
            let init = SlpdNet::<T>::from_checkpoint(&init.expect("checked"), &cfg.system)?;
            let (mut net, labels) = train_stage2(cfg, &data, init, &mut obs)?;
            net.to_checkpoint().save(&args.out.join("slpd.safetensors"))?;
            labels.save(&args.out.join("labels.safetensors"))?;
        }
        _ => {
            let (mut net, report) = train_stage3::<T>(cfg, &data, &labels.expect("checked"), &mut obs)?;
            net.to_checkpoint().save(&args.out.join("mop.safetensors"))?;
            fs::write(args.out.join("accuracy.json"), serde_json::to_string_pretty(&report)? + "\n")?;
            eprintln!(
                "top-1/2/3 accuracy: train {:.4}/{:.4}/{:.4}, test {:.4}/{:.4}/{:.4}",
                report.train[0], report.train[1], report.train[2], report.test[0], report.test[1], report.test[2]
            );
        }
    }
    eprintln!("run directory: {}", args.out.display());
    Ok(())
}

struct EvalArgs {
    data: PathBuf,
    systems: Vec<SystemName>,
    checkpoint: Option<PathBuf>,
    ampd_checkpoint: Option<PathBuf>,
    mop: Option<PathBuf>,
    labels: Option<PathBuf>,
    snr: Option<Vec<f64>>,
    topk: Option<usize>,
    out: PathBuf,
}

fn load_slpd<T: Scalar>(cfg: &ExperimentConfig, path: Option<&PathBuf>, system: &str) -> anyhow::Result<SlpdNet<T>> {
    let path = path.ok_or_else(|| usage(format!("system {system} needs a transmitter checkpoint (--checkpoint)")))?;
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(SlpdNet::from_checkpoint(&ckpt, &cfg.system)?)
}

fn load_mop<T: Scalar>(
    cfg: &ExperimentConfig,
    path: Option<&PathBuf>,
    table: &ComboTable,
) -> anyhow::Result<MopNet<T>> {
    let path = path.ok_or_else(|| usage("system ampd needs a classifier checkpoint (--mop)"))?;
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(MopNet::from_checkpoint(&ckpt, &cfg.system, table)?)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct EvalManifest {
    seed: u64,
    config_sha256: String,
    dataset: String,
    dataset_seed: u64,
    test_channels: usize,
    snr_db: Vec<f64>,
    systems: Vec<SystemName>,
    checkpoints: Vec<(String, String)>,
    topk: Option<usize>,
    topk_convention: &'static str,
}

fn eval<T: Scalar>(cfg: &ExperimentConfig, args: &EvalArgs) -> anyhow::Result<()> {
    let data = load_data(cfg, &args.data)?;
    let channels = data.test();
    if channels.is_empty() {
        bail!(Error::InvalidConfig("dataset has no test channels".into()));
    }
    let grid = args.snr.clone().unwrap_or_else(|| cfg.eval.snr_grid_db.clone());
    let policy = TrialPolicy::from(&cfg.eval);
    let power = cfg.system.power_budget;
    let seed = cfg.eval.seed;
    let qpsk = OrderPlan::Fixed(vec![2; cfg.system.num_users]);
    let table = ComboTable::new(cfg.system.num_users, cfg.system.max_order, cfg.system.rate_req)?;
    let mut checkpoints = Vec::new();
    fs::create_dir_all(&args.out)?;
    for &name in &args.systems {
        let dir = args.out.join(name.label());
        fs::create_dir_all(&dir)?;
        let points = match name {
            SystemName::Zf => ser_curve(&ZeroForcing { power }, channels, &qpsk, &grid, power, policy, seed)?,
            SystemName::CiSlp => {
                let options = CiSlpOptions { tol: cfg.eval.ci_slp_tol, max_iter: cfg.eval.ci_slp_max_iter };
                ser_curve(&ConstructiveInterference { power, options }, channels, &qpsk, &grid, power, policy, seed)?
            }
            SystemName::SlpdQpsk => {
                let net = load_slpd::<T>(cfg, args.checkpoint.as_ref(), name.label())?;
                checkpoints
                    .push((name.label().into(), args.checkpoint.as_ref().expect("loaded").display().to_string()));
                ser_curve(
                    &Learned { net: &net, power, label: name.label() },
                    channels,
                    &qpsk,
                    &grid,
                    power,
                    policy,
                    seed,
                )?
            }
            SystemName::Ampd => {
                let path = args.ampd_checkpoint.as_ref().or(args.checkpoint.as_ref());
                let net = load_slpd::<T>(cfg, path, name.label())?;
                let mop = load_mop::<T>(cfg, args.mop.as_ref(), &table)?;
                checkpoints.push(("ampd-slpd".into(), path.expect("loaded").display().to_string()));
                checkpoints.push(("ampd-mop".into(), args.mop.as_ref().expect("loaded").display().to_string()));
                let plan = predicted_plan(&mop, &table, channels)?;
                let points = ser_curve(
                    &Learned { net: &net, power, label: "ampd" },
                    channels,
                    &plan,
                    &grid,
                    power,
                    policy,
                    seed,
                )?;
                if let Some(k) = args.topk {
                    let labels = match &args.labels {
                        Some(p) => {
                            let set = MopLabelSet::load(p)?;
                            let (a, b) = (data.splits.train, data.splits.train + data.splits.test);
                            Some(
                                set.labels
                                    .get(a..b)
                                    .ok_or_else(|| usage("label file does not cover the test split"))?
                                    .to_vec(),
                            )
                        }
                        None => None,
                    };
                    let report = evaluate_topk(
                        &mop,
                        &net,
                        &table,
                        channels,
                        labels.as_deref(),
                        k,
                        cfg.eval.topk_snr_db,
                        power,
                        cfg.eval.slots_per_channel,
                        seed,
                    )?;
                    write_accuracy(&dir.join("accuracy.csv"), &report)?;
                }
                points
            }
        };
        write_ser_curve(&dir.join("ser_curve.csv"), &points)?;
        for p in &points {
            eprintln!("{:>10} {:>5.1} dB  SER {:.3e}  ({} slots)", name.label(), p.snr_db, p.average(), p.trials);
        }
    }
    let manifest = EvalManifest {
        seed,
        config_sha256: sha256_hex(cfg.to_toml().as_bytes()),
        dataset: args.data.display().to_string(),
        dataset_seed: data.seed,
        test_channels: channels.len(),
        snr_db: grid,
        systems: args.systems.clone(),
        checkpoints,
        topk: args.topk,
        topk_convention: "genie-aided best of k",
    };
    fs::write(args.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    fs::write(args.out.join("config.toml"), cfg.to_toml())?;
    Ok(())
}

struct ExportArgs {
    data: PathBuf,
    system: SystemName,
    checkpoint: Option<PathBuf>,
    mop: Option<PathBuf>,
    channel: usize,
    orders: Option<Vec<u32>>,
    symbols: usize,
    out: PathBuf,
}

fn export<T: Scalar>(cfg: &ExperimentConfig, args: &ExportArgs) -> anyhow::Result<()> {
    let data = load_data(cfg, &args.data)?;
    let h =
        data.test().get(args.channel).ok_or_else(|| usage(format!("test split has {} channels", data.test().len())))?;
    let power = cfg.system.power_budget;
    let k = cfg.system.num_users;
    let table = ComboTable::new(k, cfg.system.max_order, cfg.system.rate_req)?;
    let net;
    let system: Box<dyn LinkSystem + '_> = match args.system {
        SystemName::Zf => Box::new(ZeroForcing { power }),
        SystemName::CiSlp => Box::new(ConstructiveInterference {
            power,
            options: CiSlpOptions { tol: cfg.eval.ci_slp_tol, max_iter: cfg.eval.ci_slp_max_iter },
        }),
        SystemName::SlpdQpsk | SystemName::Ampd => {
            net = load_slpd::<T>(cfg, args.checkpoint.as_ref(), args.system.label())?;
            Box::new(Learned { net: &net, power, label: args.system.label() })
        }
    };
    let orders = match (&args.orders, args.system) {
        (Some(o), _) => o.clone(),
        (None, SystemName::Ampd) => {
            let mop = load_mop::<T>(cfg, args.mop.as_ref(), &table)?;
            match predicted_plan(&mop, &table, std::slice::from_ref(h))? {
                OrderPlan::PerChannel(mut v) => v.remove(0),
                OrderPlan::Fixed(o) => o,
            }
        }
        (None, _) => vec![2; k],
    };
    if orders.len() != k || orders.iter().any(|&m| m == 0 || m > cfg.system.max_order) {
        return Err(usage(format!("--orders needs {k} values in 1..={}", cfg.system.max_order)));
    }
    let samples = export_constellation(system.as_ref(), h, &orders, args.symbols, cfg.eval.seed)?;
    fs::create_dir_all(&args.out)?;
    let path = args.out.join("constellation.csv");
    write_constellation(&path, &samples)?;
    eprintln!("wrote {} samples to {}", samples.len(), path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_scaling_keeps_proportions() {
        let s = scaled_splits(Splits { train: 100_000, test: 10_000, validation: 10_000 }, 12_000);
        assert_eq!((s.train, s.test, s.validation), (10_000, 1_000, 1_000));
        assert_eq!(scaled_splits(Splits { train: 10, test: 1, validation: 1 }, 7).total(), 7);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
