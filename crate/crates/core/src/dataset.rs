//! Loan data ingestion, label encoding, cross-validation splits and
//! planted-rule synthetic data.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label string for the negative class.
pub const FULLY_PAID: &str = "Fully Paid";
/// Label string for the positive class.
pub const CHARGED_OFF: &str = "Charged Off";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Loan,
    History,
    Soft,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Loan, Category::History, Category::Soft];

    pub fn index(self) -> usize {
        match self {
            Category::Loan => 0,
            Category::History => 1,
            Category::Soft => 2,
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Category::Loan => "Loan Information",
            Category::History => "History Information",
            Category::Soft => "Soft Information",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Loan => "loan",
            Category::History => "history",
            Category::Soft => "soft",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Continuous,
    Categorical,
    /// A 0/1 flag; encoded as the two predicates `name = 0` and `name = 1`.
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    pub category: Category,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<FeatureSpec>,
    pub label_column: String,
}

impl FeatureSchema {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for f in &self.features {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature `{}`", f.name)));
            }
        }
        for cat in Category::ALL {
            if !self.features.iter().any(|f| f.category == cat) {
                return Err(Error::Schema(format!("no feature assigned to category `{cat}`")));
            }
        }
        Ok(())
    }

    /// Reads a schema from a `.json` or `.toml` file.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: FeatureSchema = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)?,
            _ => toml::from_str(&text).map_err(|e| Error::Config {
                path: path.display().to_string(),
                message: e.to_string(),
            })?,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }
}

/// One raw cell. Continuous and binary features hold numbers, categorical
/// features hold text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawValue {
    Num(f64),
    Text(String),
}

impl RawValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            RawValue::Num(v) => Some(*v),
            RawValue::Text(s) => parse_number(s),
        }
    }

    pub fn as_text(&self) -> String {
        match self {
            RawValue::Num(v) => format_number(*v),
            RawValue::Text(s) => s.clone(),
        }
    }
}

impl fmt::Display for RawValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_text())
    }
}

/// Renders a number with at least one decimal place (`8` -> `8.0`).
pub fn format_number(v: f64) -> String {
    if v.is_finite() && v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.1}")
    } else {
        format!("{v}")
    }
}

fn parse_number(s: &str) -> Option<f64> {
    let t = s.trim();
    let t = t.strip_suffix('%').unwrap_or(t).trim();
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn is_missing(s: &str) -> bool {
    matches!(s.trim().to_ascii_lowercase().as_str(), "" | "na" | "n/a" | "nan" | "null" | "none")
}

pub type Row = Vec<RawValue>;

/// Raw feature rows (ordered as the schema features) with 0/1 labels.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub rows: Vec<Row>,
    pub labels: Vec<u8>,
}

impl LabeledDataset {
    pub fn new(rows: Vec<Row>, labels: Vec<u8>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::arg(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&l| l > 1) {
            return Err(Error::Row {
                row: i,
                message: format!("label {} is not 0 or 1", labels[i]),
            });
        }
        Ok(Self { rows, labels })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn positive_rate(&self) -> f64 {
        self.labels.iter().map(|&l| l as f64).sum::<f64>() / self.len().max(1) as f64
    }
}

/// Maps a loan status string to a label; `None` for statuses that are not
/// part of the task (e.g. `Current`).
pub fn encode_label(status: &str) -> Option<u8> {
    let s = status.trim();
    if s.eq_ignore_ascii_case(FULLY_PAID) {
        Some(0)
    } else if s.eq_ignore_ascii_case(CHARGED_OFF) {
        Some(1)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LoadStats {
    pub read: usize,
    pub kept: usize,
    pub dropped_status: usize,
    pub dropped_missing: usize,
    pub dropped_unparseable: usize,
}

/// Loads a CSV file with a header row, keeping the schema's features in
/// schema order.
pub fn load_csv(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<(LabeledDataset, LoadStats)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &FeatureSchema) -> Result<(LabeledDataset, LoadStats)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let feature_cols = schema
        .features
        .iter()
        .map(|f| col(&f.name))
        .collect::<Result<Vec<_>>>()?;
    let label_col = col(&schema.label_column)?;

    let mut stats = LoadStats::default();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    'records: for record in rdr.records() {
        let record = record?;
        stats.read += 1;
        let Some(label) = encode_label(record.get(label_col).unwrap_or("")) else {
            stats.dropped_status += 1;
            continue;
        };
        let mut row = Vec::with_capacity(feature_cols.len());
        for (spec, &c) in schema.features.iter().zip(&feature_cols) {
            let cell = record.get(c).unwrap_or("");
            if is_missing(cell) {
                stats.dropped_missing += 1;
                continue 'records;
            }
            let value = match spec.kind {
                FeatureKind::Categorical => RawValue::Text(cell.trim().to_string()),
                FeatureKind::Continuous | FeatureKind::Binary => match parse_number(cell) {
                    Some(v) => RawValue::Num(v),
                    None => {
                        stats.dropped_unparseable += 1;
                        continue 'records;
                    }
                },
            };
            row.push(value);
        }
        rows.push(row);
        labels.push(label);
    }
    stats.kept = rows.len();
    if rows.is_empty() {
        return Err(Error::EmptyDataset(Some(format!(
            "{} records read, none usable",
            stats.read
        ))));
    }
    log::info!(
        "loaded {} of {} records ({} status, {} missing, {} unparseable dropped)",
        stats.kept,
        stats.read,
        stats.dropped_status,
        stats.dropped_missing,
        stats.dropped_unparseable
    );
    Ok((LabeledDataset { rows, labels }, stats))
}

/// Writes a dataset back out in the loader's format.
pub fn write_csv(path: impl AsRef<Path>, ds: &LabeledDataset, schema: &FeatureSchema) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = schema.features.iter().map(|f| f.name.as_str()).collect();
    header.push(&schema.label_column);
    w.write_record(&header)?;
    for (row, &label) in ds.rows.iter().zip(&ds.labels) {
        let mut rec: Vec<String> = row
            .iter()
            .map(|v| match v {
                RawValue::Num(x) => format!("{x}"),
                RawValue::Text(s) => s.clone(),
            })
            .collect();
        rec.push(if label == 1 { CHARGED_OFF } else { FULLY_PAID }.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Uniform random subsample of `n` rows without replacement (keeps the
/// original row order).
pub fn subsample(ds: &LabeledDataset, n: usize, seed: u64) -> LabeledDataset {
    if n >= ds.len() {
        return ds.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, ds.len(), n).into_vec();
    idx.sort_unstable();
    ds.subset(&idx)
}

/// Test-fold row indices for `k`-fold cross-validation.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::arg(format!("k must be at least 2, got {k}")));
    }
    if k > n {
        return Err(Error::arg(format!("k = {k} exceeds the {n} available rows")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, &i) in order.iter().enumerate() {
        folds[pos % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Complement of a test fold.
pub fn train_indices(n: usize, test: &[usize]) -> Vec<usize> {
    let held: HashSet<usize> = test.iter().copied().collect();
    (0..n).filter(|i| !held.contains(i)).collect()
}

pub fn kfold_split(ds: &LabeledDataset, k: usize, seed: u64) -> Result<Vec<(LabeledDataset, LabeledDataset)>> {
    Ok(kfold_indices(ds.len(), k, seed)?
        .into_iter()
        .map(|test| (ds.subset(&train_indices(ds.len(), &test)), ds.subset(&test)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_rows: usize,
    pub n_binary_features: usize,
    /// Each rule is a conjunction over feature indices.
    pub planted_rules: Vec<Vec<usize>>,
    pub label_noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_binary_features == 0 {
            return Err(Error::arg("synthetic data needs at least one feature"));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return Err(Error::arg(format!(
                "label noise {} outside [0, 0.5)",
                self.label_noise
            )));
        }
        for rule in &self.planted_rules {
            if let Some(&f) = rule.iter().find(|&&f| f >= self.n_binary_features) {
                return Err(Error::Index {
                    index: f,
                    len: self.n_binary_features,
                });
            }
        }
        Ok(())
    }
}

pub fn rule_fires(rule: &[usize], bits: &[u8]) -> bool {
    rule.iter().all(|&f| bits[f] == 1)
}

/// Rows drawn uniformly from `{0,1}^n`, labelled 1 iff any planted rule
/// holds, then flipped with probability `label_noise`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut rows = Vec::with_capacity(spec.n_rows);
    let mut labels = Vec::with_capacity(spec.n_rows);
    for _ in 0..spec.n_rows {
        let bits: Vec<u8> = (0..spec.n_binary_features)
            .map(|_| rng.gen_bool(0.5) as u8)
            .collect();
        let mut label = spec.planted_rules.iter().any(|r| rule_fires(r, &bits)) as u8;
        if spec.label_noise > 0.0 && rng.gen_bool(spec.label_noise) {
            label ^= 1;
        }
        rows.push(bits.into_iter().map(|b| RawValue::Num(b as f64)).collect());
        labels.push(label);
    }
    Ok(LabeledDataset { rows, labels })
}

/// Schema for synthetic data: binary features `f0..`, split into three
/// contiguous, nearly equal category blocks.
pub fn synthetic_schema(n_features: usize) -> FeatureSchema {
    let features = (0..n_features)
        .map(|i| FeatureSpec {
            name: format!("f{i}"),
            kind: FeatureKind::Binary,
            category: Category::ALL[(i * 3 / n_features.max(1)).min(2)],
        })
        .collect();
    FeatureSchema {
        features,
        label_column: "loan_status".to_string(),
    }
}

/// Parses planted rules such as `(f0&f2)|(f1&f3)`.
pub fn parse_rules(text: &str) -> Result<Vec<Vec<usize>>> {
    let mut rules = Vec::new();
    for clause in text.split('|') {
        let clause = clause.trim().trim_start_matches('(').trim_end_matches(')');
        let mut rule = Vec::new();
        for lit in clause.split('&') {
            let lit = lit.trim();
            let idx = lit
                .strip_prefix('f')
                .and_then(|d| d.parse::<usize>().ok())
                .ok_or_else(|| Error::arg(format!("bad literal `{lit}` in rule `{clause}`")))?;
            rule.push(idx);
        }
        if rule.is_empty() {
            return Err(Error::arg(format!("empty rule in `{text}`")));
        }
        rules.push(rule);
    }
    Ok(rules)
}

/// Binarized rows stored contiguously, one byte (0 or 1) per bit.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BinaryDataset {
    pub width: usize,
    pub bits: Vec<u8>,
    pub labels: Vec<u8>,
}

impl BinaryDataset {
    pub fn from_rows(width: usize, rows: &[Vec<u8>], labels: &[u8]) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::arg("rows and labels differ in length"));
        }
        let mut bits = Vec::with_capacity(rows.len() * width);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != width {
                return Err(Error::Row {
                    row: i,
                    message: format!("width {} != {}", r.len(), width),
                });
            }
            bits.extend_from_slice(r);
        }
        Ok(Self {
            width,
            bits,
            labels: labels.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.bits[i * self.width..(i + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.bits.chunks_exact(self.width.max(1)).take(self.len())
    }

    pub fn subset(&self, indices: &[usize]) -> BinaryDataset {
        let mut bits = Vec::with_capacity(indices.len() * self.width);
        for &i in indices {
            bits.extend_from_slice(self.row(i));
        }
        BinaryDataset {
            width: self.width,
            bits,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Schema of the loan-like demo data: the credit features used for
/// Lending Club style modelling, grouped by category.
pub fn loan_like_schema() -> FeatureSchema {
    use Category::*;
    use FeatureKind::*;
    let spec = [
        ("Installment", Continuous, Loan),
        ("LoanPurpose", Categorical, Loan),
        ("LoanApplicationType", Categorical, Loan),
        ("InterestRate", Continuous, Loan),
        ("LastPaymentAmount", Continuous, Loan),
        ("LoanAmount", Continuous, Loan),
        ("RevolvingBalance", Continuous, Loan),
        ("DelinquencyIn2Years", Continuous, History),
        ("InquiriesIn6Months", Continuous, History),
        ("MortgageAccounts", Continuous, History),
        ("Grade", Categorical, History),
        ("OpenAccounts", Continuous, History),
        ("RevolvingUtilizationRate", Continuous, History),
        ("TotalAccounts", Continuous, History),
        ("FicoAvg", Continuous, History),
        ("AddressState", Categorical, Soft),
        ("EmploymentLength", Categorical, Soft),
        ("HomeOwnership", Categorical, Soft),
        ("Verification", Categorical, Soft),
        ("AnnualIncome", Continuous, Soft),
    ];
    FeatureSchema {
        features: spec
            .iter()
            .map(|&(name, kind, category)| FeatureSpec {
                name: name.to_string(),
                kind,
                category,
            })
            .collect(),
        label_column: "loan_status".to_string(),
    }
}

fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

/// Loan-like rows for demos. Amounts are in thousands. Default risk is
/// driven by a few conjunctions (small last payment at a high rate, poor
/// grade with many recent inquiries) plus noise, so rule models have
/// something real to find and a shallow tree does not get it for free.
pub fn generate_loan_like(n_rows: usize, seed: u64) -> (FeatureSchema, LabeledDataset) {
    const PURPOSES: [&str; 5] = ["debt_consolidation", "credit_card", "home_improvement", "small_business", "other"];
    const GRADES: [&str; 7] = ["A", "B", "C", "D", "E", "F", "G"];
    const STATES: [&str; 6] = ["CA", "NY", "TX", "FL", "IL", "WA"];
    const EMPLOYMENT: [&str; 4] = ["< 1 year", "1-4 years", "5-9 years", "10+ years"];
    const HOMES: [&str; 3] = ["RENT", "OWN", "MORTGAGE"];
    const VERIFICATION: [&str; 2] = ["True", "False"];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n_rows);
    let mut labels = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        let grade_idx = (rng.gen_range(0.0..1.0f64).powf(1.6) * 7.0) as usize;
        let rate = round1(5.5 + 3.0 * grade_idx as f64 + rng.gen_range(0.0..4.0));
        let amount = round1(rng.gen_range(1.0..35.0));
        let installment = round1(amount * (0.03 + rate / 1200.0) * rng.gen_range(0.9..1.1));
        let last_payment = round1(rng.gen_range(0.0..20.0f64).max(installment * rng.gen_range(0.5..1.5)));
        let inquiries = rng.gen_range(0..7) as f64;
        let utilization = round1(rng.gen_range(0.0..100.0));
        let fico = (690.0 + 15.0 * (6 - grade_idx) as f64 + rng.gen_range(-20.0..20.0f64)).round();
        let home = HOMES[rng.gen_range(0..HOMES.len())];
        let app_type = if rng.gen_bool(0.1) { "Joint App" } else { "Individual" };
        let income = round1(rng.gen_range(20.0..150.0));

        let mut logit = -2.6;
        if last_payment < 7.0 && rate >= 12.0 {
            logit += 2.8;
        }
        if grade_idx >= 3 && inquiries >= 3.0 {
            logit += 1.8;
        }
        if utilization > 85.0 {
            logit += 0.8;
        }
        if home == "MORTGAGE" {
            logit -= 0.6;
        }
        if income < 40.0 && amount > 25.0 {
            logit += 1.2;
        }
        let p: f64 = 1.0 / (1.0 + f64::exp(-logit));
        labels.push(rng.gen_bool(p) as u8);
        rows.push(vec![
            RawValue::Num(installment),
            RawValue::Text(PURPOSES[rng.gen_range(0..PURPOSES.len())].into()),
            RawValue::Text(app_type.into()),
            RawValue::Num(rate),
            RawValue::Num(last_payment),
            RawValue::Num(amount),
            RawValue::Num(round1(rng.gen_range(0.0..40.0))),
            RawValue::Num(rng.gen_range(0..3) as f64),
            RawValue::Num(inquiries),
            RawValue::Num(rng.gen_range(0..5) as f64),
            RawValue::Text(GRADES[grade_idx].into()),
            RawValue::Num(rng.gen_range(2..30) as f64),
            RawValue::Num(utilization),
            RawValue::Num(rng.gen_range(5..60) as f64),
            RawValue::Num(fico),
            RawValue::Text(STATES[rng.gen_range(0..STATES.len())].into()),
            RawValue::Text(EMPLOYMENT[rng.gen_range(0..EMPLOYMENT.len())].into()),
            RawValue::Text(home.into()),
            RawValue::Text(VERIFICATION[rng.gen_range(0..2)].into()),
            RawValue::Num(income),
        ]);
    }
    (loan_like_schema(), LabeledDataset { rows, labels })
}
