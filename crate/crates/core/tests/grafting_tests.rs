mod common;

use common::random_model;
use conjrules::binarizer::BitLayout;
use conjrules::conjnet::{init_model, GraftedModel, Head, DEFAULT_EPS};
use conjrules::dataset::{generate_synthetic, BinaryDataset, Category, SyntheticSpec};
use conjrules::grafting::{
    evaluate_head, graft_step, plain_step, train, train_joint, train_subnet, Batch, TrainConfig,
};
use conjrules::numeric::sigmoid;
use proptest::prelude::*;

fn planted(widths: [usize; 3], rules: Vec<Vec<usize>>, rows: usize, seed: u64) -> BinaryDataset {
    let width: usize = widths.iter().sum();
    let ds = generate_synthetic(&SyntheticSpec {
        n_rows: rows,
        n_binary_features: width,
        planted_rules: rules,
        label_noise: 0.0,
        seed,
    })
    .unwrap();
    let bits: Vec<Vec<u8>> = ds
        .rows
        .iter()
        .map(|r| r.iter().map(|v| v.as_f64().unwrap() as u8).collect())
        .collect();
    BinaryDataset::from_rows(width, &bits, &ds.labels).unwrap()
}

/// One grafted step on a single sample, written out by hand.
#[test]
fn toy_step_matches_hand_computation() {
    let layout = BitLayout::plain([1, 1, 1]);
    let mut m = init_model(&layout, 1, 0).unwrap();
    let w = 0.3;
    m.subnets[0].weights = vec![w];
    m.subnets[0].output_weights = vec![1.0];
    m.subnets[0].output_bias = 0.0;
    for s in 1..3 {
        m.subnets[s].weights = vec![0.0];
        m.subnets[s].output_weights = vec![0.0];
        m.subnets[s].output_bias = 0.0;
    }
    m.agg_weights = [0.8, 0.0, 0.0];
    m.agg_bias = 0.1;
    let x = vec![0u8, 1, 1];
    let y = 1u8;
    let lr = 0.5;

    // continuous: a = 1 / (1 - ln(1 - w)), discrete: w < 0.5 so the node is TRUE
    let a = 1.0 / (1.0 - (1.0 - w).ln());
    let p = sigmoid(a);
    let p_other = sigmoid(0.0);
    let z_d = 0.8 * sigmoid(1.0) + 0.1;
    let delta = sigmoid(z_d) - y as f64;
    let dz = delta * 0.8 * p * (1.0 - p);
    let dw = dz * 1.0 * (-a * a / (1.0 - w));
    let expected_w = (w - lr * dw).clamp(0.0, 1.0);
    let expected_v = 1.0 - lr * dz * a;
    let expected_c = -lr * dz;
    let expected_u = [0.8 - lr * delta * p, -lr * delta * p_other, -lr * delta * p_other];
    let expected_b = 0.1 - lr * delta;

    let data = BinaryDataset::from_rows(3, &[x], &[y]).unwrap();
    graft_step(&mut m, &Batch::all(&data), lr).unwrap();
    let close = |a: f64, b: f64| (a - b).abs() < 1e-9;
    assert!(close(m.subnets[0].weights[0], expected_w), "{} vs {expected_w}", m.subnets[0].weights[0]);
    assert!(close(m.subnets[0].output_weights[0], expected_v));
    assert!(close(m.subnets[0].output_bias, expected_c));
    for s in 0..3 {
        assert!(close(m.agg_weights[s], expected_u[s]), "u{s}");
    }
    assert!(close(m.agg_bias, expected_b));
    // frozen-by-zero subnets only move through their bias
    assert_eq!(m.subnets[1].weights, vec![0.0]);
}

#[test]
fn binary_weights_make_grafting_plain_descent() {
    for seed in 0..10 {
        let m = random_model([3, 2, 3], 3, 1.0, seed).binarized();
        let data = planted([3, 2, 3], vec![vec![0, 4]], 64, seed);
        let mut a = m.clone();
        let mut b = m.clone();
        graft_step(&mut a, &Batch::all(&data), 0.7).unwrap();
        plain_step(&mut b, &Batch::all(&data), 0.7).unwrap();
        for (pa, pb) in a.parameters().iter().zip(b.parameters()) {
            assert!((pa - pb).abs() <= 1e-9);
        }
    }
}

#[test]
fn empty_batch_is_an_error() {
    let mut m = random_model([1, 1, 1], 1, 0.0, 0);
    let batch = Batch { rows: vec![], labels: vec![] };
    assert!(graft_step(&mut m, &batch, 0.1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn hidden_weights_stay_clipped(seed in any::<u64>(), lr in 0.01f64..50.0) {
        let mut m = random_model([4, 3, 3], 4, 0.5, seed);
        let data = planted([4, 3, 3], vec![vec![0, 5]], 40, seed);
        for _ in 0..3 {
            graft_step(&mut m, &Batch::all(&data), lr).unwrap();
            for s in &m.subnets {
                prop_assert!(s.weights.iter().all(|w| (0.0..=1.0).contains(w)));
            }
        }
    }
}

fn quick(pretrain: usize, joint: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        hidden_per_subnet: 8,
        pretrain_epochs: pretrain,
        joint_epochs: joint,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn pretraining_learns_a_single_conjunction() {
    let data = planted([10, 10, 10], vec![vec![1, 6]], 3000, 4);
    let layout = BitLayout::plain([10, 10, 10]);
    let mut m = init_model(&layout, 32, 4).unwrap();
    let cfg = TrainConfig::default();
    let trace = train_subnet(&mut m, Category::Loan, &data, &cfg).unwrap();
    assert_eq!(trace.len(), cfg.pretrain_epochs);
    let acc = evaluate_head(&m, &data, Head::Subnet(0), DEFAULT_EPS).acc_d;
    assert!(acc >= 0.98, "accuracy {acc}");
}

#[test]
fn pretraining_leaves_other_subnets_alone() {
    let data = planted([4, 4, 4], vec![vec![0, 1]], 500, 1);
    let before = init_model(&BitLayout::plain([4, 4, 4]), 4, 1).unwrap();
    let mut m = before.clone();
    train_subnet(&mut m, Category::History, &data, &quick(3, 0, 1)).unwrap();
    assert_eq!(m.subnets[0], before.subnets[0]);
    assert_eq!(m.subnets[2], before.subnets[2]);
    assert_eq!(m.agg_weights, before.agg_weights);
    assert_ne!(m.subnets[1], before.subnets[1]);
}

#[test]
fn zero_epochs_change_nothing() {
    let data = planted([4, 4, 4], vec![vec![0, 1]], 300, 2);
    let before = init_model(&BitLayout::plain([4, 4, 4]), 4, 2).unwrap();
    let mut m = before.clone();
    let trace = train_subnet(&mut m, Category::Loan, &data, &quick(0, 0, 2)).unwrap();
    assert!(trace.is_empty());
    assert_eq!(m, before);

    // with no joint epochs the result is the pretrained model
    let cfg = quick(4, 0, 2);
    let mut joint = before.clone();
    let out = train_joint(&mut joint, &data, &cfg).unwrap();
    assert_eq!(out.best_epoch, 0);
    assert!(out.joint.is_empty());
    let mut pre = before.clone();
    let (train_idx, _) = conjrules::grafting::validation_split(data.len(), cfg.validation_fraction, cfg.seed);
    let train_rows = data.subset(&train_idx);
    for cat in Category::ALL {
        train_subnet(&mut pre, cat, &train_rows, &cfg).unwrap();
    }
    assert_eq!(out.model, pre);
}

#[test]
fn joint_training_is_deterministic() {
    let data = planted([5, 5, 5], vec![vec![0, 2], vec![6, 8]], 800, 3);
    let layout = BitLayout::plain([5, 5, 5]);
    let cfg = quick(3, 5, 42);
    let a = train(&layout, &data, &cfg).unwrap();
    let b = train(&layout, &data, &cfg).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.joint.records, b.joint.records);
    assert_eq!(a.pretrain.len(), 3);
    assert!(a.pretrain.iter().all(|t| t.len() == 3));
    assert_eq!(a.joint.len(), 5);
    let c = train(&layout, &data, &quick(3, 5, 43)).unwrap();
    assert_ne!(a.model, c.model);
}

#[test]
fn layout_mismatch_is_rejected() {
    let data = planted([2, 2, 2], vec![vec![0]], 20, 0);
    assert!(train(&BitLayout::plain([3, 2, 2]), &data, &quick(1, 1, 0)).is_err());
}

#[test]
fn training_lowers_discrete_loss_for_most_seeds() {
    let mut improved = 0;
    let seeds = 20;
    for seed in 0..seeds {
        let data = planted([6, 6, 6], vec![vec![0, 3]], 1000, seed);
        let mut m: GraftedModel = init_model(&BitLayout::plain([6, 6, 6]), 8, seed).unwrap();
        let start = evaluate_head(&m, &data, Head::Subnet(0), DEFAULT_EPS).loss_d;
        let trace = train_subnet(&mut m, Category::Loan, &data, &quick(10, 0, seed)).unwrap();
        if trace.records.last().unwrap().loss_d < start {
            improved += 1;
        }
    }
    assert!(improved as f64 >= 0.95 * seeds as f64, "{improved}/{seeds}");
}

#[test]
fn trace_csv_layout() {
    let data = planted([2, 2, 2], vec![vec![0, 1]], 100, 5);
    let out = train(&BitLayout::plain([2, 2, 2]), &data, &quick(1, 2, 5)).unwrap();
    let mut buf = Vec::new();
    out.joint.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,loss_c,loss_d,acc_d");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,"));
}
