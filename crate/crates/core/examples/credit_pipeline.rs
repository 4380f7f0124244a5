//! End to end on loan-like data: 5-fold comparison against CART, then a
//! model trained on every row and its global rule tables.
//!
//! cargo run --release --example credit_pipeline -- [rows]

use conjrules::binarizer::{fit_binarizer, BinningConfig};
use conjrules::dataset::generate_loan_like;
use conjrules::eval::{cross_validate, metrics_table, CvConfig};
use conjrules::grafting::{discrete_accuracy, train, TrainConfig};
use conjrules::rules::{extract_rules, global_explanation};

fn main() -> conjrules::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let rows = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let (schema, ds) = generate_loan_like(rows, 42);
    println!("{} applicants, {:.1}% charged off", ds.len(), 100.0 * ds.positive_rate());

    let report = cross_validate(&ds, &schema, &CvConfig::default())?;
    print!("\n{}", metrics_table(&report.summary));

    let binarizer = fit_binarizer(&ds, &schema, &BinningConfig::default())?;
    let bits = binarizer.transform_dataset(&ds)?;
    let model = train(&binarizer.bit_layout, &bits, &TrainConfig::default())?.model;
    println!("\ntrain accuracy {:.4}\n", discrete_accuracy(&model, &bits));
    let rb = extract_rules(&model, &binarizer)?;
    print!("{}", global_explanation(&rb).to_text());
    Ok(())
}
