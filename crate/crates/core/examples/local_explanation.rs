//! Why was this applicant rejected? Train once, then list the active
//! negative rules for a few applicants.
//!
//! cargo run --release --example local_explanation

use conjrules::binarizer::{fit_binarizer, BinningConfig};
use conjrules::dataset::generate_loan_like;
use conjrules::grafting::{train, TrainConfig};
use conjrules::rules::{extract_rules, local_explanation};

fn main() -> conjrules::Result<()> {
    let (schema, ds) = generate_loan_like(8000, 3);
    let binarizer = fit_binarizer(&ds, &schema, &BinningConfig::default())?;
    let bits = binarizer.transform_dataset(&ds)?;
    let model = train(&binarizer.bit_layout, &bits, &TrainConfig::default())?.model;
    let rb = extract_rules(&model, &binarizer)?;

    let mut shown = 0;
    for (i, row) in ds.rows.iter().enumerate() {
        let report = local_explanation(&model, &rb, &binarizer, row)?;
        if !report.rejected() {
            continue;
        }
        println!("applicant {i}: {} (p = {:.3}, actual {})", report.decision, report.probability, ds.labels[i]);
        for r in &report.reasons {
            println!("  {:.3}  {}", r.influence, r.predicates.join(" AND "));
        }
        shown += 1;
        if shown == 3 {
            break;
        }
    }

    // The same report as the CLI writes it.
    let report = local_explanation(&model, &rb, &binarizer, &ds.rows[0])?;
    println!("\n{}", report.to_json());
    Ok(())
}
