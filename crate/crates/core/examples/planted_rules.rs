//! Train on synthetic data with two planted conjunctions and check how
//! well the discrete model recovers them.
//!
//! cargo run --release --example planted_rules -- [seed] [lr] [hidden]

use conjrules::binarizer::{fit_binarizer, BinningConfig};
use conjrules::dataset::{generate_synthetic, synthetic_schema, SyntheticSpec};
use conjrules::grafting::{discrete_accuracy, train, TrainConfig};
use conjrules::rules::extract_rules;

fn main() -> conjrules::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut cfg = TrainConfig { seed, ..TrainConfig::default() };
    if let Some(lr) = args.get(2).and_then(|s| s.parse().ok()) {
        cfg.learning_rate = lr;
    }
    if let Some(h) = args.get(3).and_then(|s| s.parse().ok()) {
        cfg.hidden_per_subnet = h;
    }

    // f0 & f2 lives in the loan block, f11 & f13 in the history block.
    let spec = SyntheticSpec {
        n_rows: 5000,
        n_binary_features: 30,
        planted_rules: vec![vec![0, 2], vec![11, 13]],
        label_noise: 0.0,
        seed,
    };
    let schema = synthetic_schema(spec.n_binary_features);
    let raw = generate_synthetic(&spec)?;
    let binarizer = fit_binarizer(&raw, &schema, &BinningConfig::default())?;
    let data = binarizer.transform_dataset(&raw)?;

    let t = std::time::Instant::now();
    let outcome = train(&binarizer.bit_layout, &data, &cfg)?;
    println!("trained in {:.1?}, best epoch {}", t.elapsed(), outcome.best_epoch);
    for (cat, trace) in ["loan", "history", "soft"].iter().zip(&outcome.pretrain) {
        let last = trace.records.last().unwrap();
        println!("pretrain {cat}: loss_d {:.4} acc_d {:.4}", last.loss_d, last.acc_d);
    }
    if let Some(last) = outcome.joint.records.last() {
        println!("joint: loss_c {:.4} loss_d {:.4} acc_d {:.4}", last.loss_c, last.loss_d, last.acc_d);
    }
    println!("discrete train accuracy {:.4}", discrete_accuracy(&outcome.model, &data));

    let rb = extract_rules(&outcome.model, &binarizer)?;
    println!("\nrules pushing towards default:");
    for r in rb.rules().filter(|r| r.is_negative() && !r.is_bias()) {
        println!("  {:.3}  {}", r.influence, rb.render_rule(r));
    }
    Ok(())
}
