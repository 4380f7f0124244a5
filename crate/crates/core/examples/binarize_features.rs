//! Fit tree-based bins on loan-like data and show the resulting bit layout.
//!
//! cargo run --release --example binarize_features

use conjrules::binarizer::{fit_binarizer, fit_bins, BinningConfig, Encoding};
use conjrules::dataset::generate_loan_like;

fn main() -> conjrules::Result<()> {
    let (schema, ds) = generate_loan_like(10_000, 1);
    println!("{} rows, default rate {:.3}", ds.len(), ds.positive_rate());

    // One feature by hand: the thresholds are the split points of a
    // depth-3 Gini tree on that feature alone.
    let col = schema.position("InterestRate").unwrap();
    let rates: Vec<f64> = ds.rows.iter().map(|r| r[col].as_f64().unwrap()).collect();
    let scheme = fit_bins("InterestRate", &rates, &ds.labels, 3, 100)?;
    println!("InterestRate thresholds: {:?}", scheme.thresholds);

    let binarizer = fit_binarizer(&ds, &schema, &BinningConfig::default())?;
    println!(
        "\n{} input bits, layout hash {}",
        binarizer.width(),
        binarizer.bit_layout.hash()
    );
    for enc in &binarizer.encoders {
        let kind = match &enc.encoding {
            Encoding::Continuous { thresholds } => format!("{} bins", thresholds.len() + 1),
            Encoding::Categorical { vocabulary } => format!("{} values + other", vocabulary.len()),
            Encoding::Binary => "binary".to_string(),
        };
        println!("{:<26} {:<8} {}", enc.name, enc.category.to_string(), kind);
    }

    let x = binarizer.transform_row(&ds.rows[0])?;
    println!("\nfirst applicant sets:");
    for (bit, _) in x.iter().enumerate().filter(|(_, &v)| v == 1) {
        println!("  [{bit:>3}] {}", binarizer.predicate_text(bit)?);
    }
    Ok(())
}
