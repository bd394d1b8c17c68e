mod common;

use slplink::channel::generate_channels;
use slplink::config::ArchConfig;
use slplink::modulation::ComboTable;
use slplink::slpd::SlpdNet;
use slplink::training::{
    combo_cross_entropies, generate_labels, train_stage1, train_stage2, train_stage3, History, MopLabelSet, Silent,
};
use slplink::{ChannelDataset, ExperimentConfig, Splits, SystemConfig};

fn mini_experiment(train: usize) -> ExperimentConfig {
    let mut exp = ExperimentConfig::desk();
    exp.system = common::mini_system();
    exp.splits = Splits { train, test: 50, validation: 50 };
    exp.train.minibatch = 50;
    exp.train.epochs_stage1 = 4;
    exp.train.epochs_stage2 = 2;
    exp.train.epochs_stage3 = 3;
    exp.train.lr_period = 2;
    exp.train.label_draws = 4;
    exp
}

#[test]
fn stage1_descends_and_is_deterministic() {
    let exp = mini_experiment(400);
    let data = ChannelDataset::generate(&exp.system, exp.splits, 3).unwrap();
    let mut hist = History::default();
    let mut a = train_stage1::<f64>(&exp, &data, &mut hist).unwrap();
    assert_eq!(hist.records.len(), 4);
    assert!(hist.records.last().unwrap().loss < hist.records[0].loss);
    assert!(hist.checkpoints.contains(&"stage1-final".to_string()));
    assert!(hist.checkpoints.contains(&"stage1-epoch0002".to_string()));
    assert!(hist.checkpoints.contains(&"stage1-best".to_string()));
    let mut b = train_stage1::<f64>(&exp, &data, &mut Silent).unwrap();
    assert_eq!(a.to_checkpoint(), b.to_checkpoint());
}

#[test]
fn stage1_weights_speed_up_stage2() {
    let mut exp = mini_experiment(400);
    exp.splits = Splits { train: 400, test: 0, validation: 0 };
    exp.train.epochs_stage2 = 1;
    exp.train.label_draws = 1;
    let data = ChannelDataset::generate(&exp.system, exp.splits, 4).unwrap();
    let trained = train_stage1::<f64>(&exp, &data, &mut Silent).unwrap();
    let fresh = SlpdNet::<f64>::new(&exp.system, &exp.arch, 99).unwrap();
    let first_epoch = |init| {
        let mut hist = History::default();
        train_stage2(&exp, &data, init, &mut hist).unwrap();
        hist.records[0].loss
    };
    let (lt, lf) = (first_epoch(trained), first_epoch(fresh));
    assert!(lt < lf, "from stage 1 {lt} vs fresh {lf}");
}

#[test]
fn stage2_labels_cover_dataset_and_are_order_free() {
    let exp = mini_experiment(100);
    let data = ChannelDataset::generate(&exp.system, exp.splits, 5).unwrap();
    let init = train_stage1::<f64>(&exp, &data, &mut Silent).unwrap();
    let (net, labels) = train_stage2(&exp, &data, init, &mut Silent).unwrap();
    let table = ComboTable::new(2, 2, 3).unwrap();
    assert_eq!(labels.len(), data.realizations.len());
    assert!(labels.labels.iter().all(|&l| l < table.len()));
    labels.validate().unwrap();
    // relabeling a subset in reverse order gives the same answers
    let sub: Vec<_> = data.realizations[..10].iter().rev().cloned().collect();
    let seed = 123;
    for (h, ce) in sub.iter().zip(0..) {
        let a = combo_cross_entropies(&net, &exp.system, &exp.train, &table, h, seed + ce).unwrap();
        let b = combo_cross_entropies(&net, &exp.system, &exp.train, &table, h, seed + ce).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), table.len());
    }
    let again = generate_labels(&net, &exp.system, &exp.train, &table, &data.realizations).unwrap();
    assert_eq!(again, labels);
}

#[test]
fn classifier_learns_separable_clusters() {
    // one user with orders 1 or 2: exactly two combinations
    let sys = SystemConfig {
        num_antennas: 8,
        num_users: 1,
        max_order: 2,
        rate_req: 1,
        user_center_angles: vec![-40.0],
        angle_spread_deg: 3.0,
        ..SystemConfig::desk()
    };
    let other = SystemConfig { user_center_angles: vec![20.0], ..sys.clone() };
    let a = generate_channels(&sys, 150, 1).unwrap();
    let b = generate_channels(&other, 150, 2).unwrap();
    let mut realizations = Vec::new();
    let mut labels = Vec::new();
    for (x, y) in a.into_iter().zip(b) {
        realizations.push(x);
        labels.push(0);
        realizations.push(y);
        labels.push(1);
    }
    let splits = Splits { train: 240, test: 60, validation: 0 };
    let data = ChannelDataset { system: sys.clone(), seed: 0, splits, realizations };
    let mut exp = ExperimentConfig::desk();
    exp.system = sys;
    exp.splits = splits;
    exp.train.minibatch = 40;
    exp.train.epochs_stage3 = 25;
    exp.train.lr_period = 100;
    exp.train.lr_init = 3e-3;
    exp.arch = ArchConfig::default();
    let n = labels.len();
    let set = MopLabelSet { labels, cross_entropy: vec![0.0; n], num_classes: 2 };
    let mut hist = History::default();
    let (_, report) = train_stage3::<f64>(&exp, &data, &set, &mut hist).unwrap();
    assert!(report.train[0] >= 0.95, "{report:?}");
    assert!(report.test.iter().all(|a| (0.0..=1.0).contains(a)));
    assert!(hist.records.last().unwrap().loss <= hist.records[0].loss);
}
