//! Explain rejections with a perturbation-based anchor, then check whether
//! the anchor's predicates lie on the model's real decision path.
//!
//! cargo run --release --example anchor_audit

use conjrules::audit::{anchor_explain, faithfulness_check, model_predictor, AnchorConfig, AuditMode};
use conjrules::binarizer::{fit_binarizer, BinningConfig};
use conjrules::dataset::generate_loan_like;
use conjrules::grafting::{train, TrainConfig};
use conjrules::rules::{extract_rules, local_explanation};

fn main() -> conjrules::Result<()> {
    let (schema, ds) = generate_loan_like(8000, 5);
    let binarizer = fit_binarizer(&ds, &schema, &BinningConfig::default())?;
    let bits = binarizer.transform_dataset(&ds)?;
    let model = train(&binarizer.bit_layout, &bits, &TrainConfig::default())?.model;
    let rb = extract_rules(&model, &binarizer)?;
    let groups = binarizer.bit_layout.groups();
    let predict = model_predictor(&model);
    let cfg = AnchorConfig::default();

    let (mut faithful, mut audited) = (0, 0);
    for row in ds.rows.iter().take(400) {
        let report = local_explanation(&model, &rb, &binarizer, row)?;
        if !report.rejected() {
            continue;
        }
        let anchor = anchor_explain(&predict, &report.input, &bits, &groups, &cfg)?;
        let verdict = faithfulness_check(&anchor, &report, AuditMode::NegativeRules)?;
        audited += 1;
        if verdict.is_faithful() {
            faithful += 1;
        } else if audited - faithful <= 3 {
            let text = |b: &[usize]| {
                b.iter()
                    .map(|&i| binarizer.predicate_text(i).unwrap())
                    .collect::<Vec<_>>()
                    .join(" AND ")
            };
            println!("anchor:      {} (precision {:.2})", text(&anchor.predicate_bits), anchor.precision);
            if report.explanation.is_empty() {
                println!("model path:  no negative rule fires; the biases decide");
            } else {
                println!("model path:  {}", report.explanation);
            }
            println!("not on path: {}\n", text(&verdict.extraneous_bits));
        }
    }
    println!("{faithful} of {audited} rejection anchors are faithful to the active rules");
    Ok(())
}
