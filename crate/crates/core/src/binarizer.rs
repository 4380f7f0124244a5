//! Supervised binning of continuous features, one-hot encoding of
//! categorical features and the bit layout shared by the network and the
//! rule renderer.
//!
//! Continuous features are cut at the split thresholds of a small Gini
//! decision tree fit on that feature alone. Bins are half-open,
//! `[t_i, t_{i+1})`, so a value equal to a threshold falls in the upper bin.

use std::collections::BTreeSet;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    BinaryDataset, Category, FeatureKind, FeatureSchema, LabeledDataset, RawValue,
};
use crate::error::{Error, Result};
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BinningConfig {
    pub max_depth: usize,
    /// Minimum samples per leaf; `None` means `max(50, 1% of rows)`.
    pub min_leaf: Option<usize>,
}

impl Default for BinningConfig {
    fn default() -> Self {
        Self {
            max_depth: 3,
            min_leaf: None,
        }
    }
}

impl BinningConfig {
    pub fn min_leaf_for(&self, n_rows: usize) -> usize {
        self.min_leaf
            .unwrap_or_else(|| 50.max(n_rows / 100))
            .max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinningScheme {
    pub feature: String,
    pub thresholds: Vec<f64>,
}

impl BinningScheme {
    pub fn n_bins(&self) -> usize {
        self.thresholds.len() + 1
    }

    pub fn bin_of(&self, value: f64) -> usize {
        self.thresholds.partition_point(|&t| t <= value)
    }
}

/// Fits bin thresholds for one continuous feature: the internal split
/// values of a depth-limited Gini tree, with candidate splits at midpoints
/// between consecutive distinct sorted values.
pub fn fit_bins(
    feature: &str,
    values: &[f64],
    labels: &[u8],
    max_depth: usize,
    min_leaf: usize,
) -> Result<BinningScheme> {
    if values.len() != labels.len() {
        return Err(Error::arg(format!(
            "{}: {} values but {} labels",
            feature,
            values.len(),
            labels.len()
        )));
    }
    let min_leaf = min_leaf.max(1);
    if values.len() < 2 * min_leaf {
        return Err(Error::arg(format!(
            "{}: {} samples cannot fill two leaves of {}",
            feature,
            values.len(),
            min_leaf
        )));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::arg(format!("{feature}: non-finite value {v}")));
    }

    let mut pairs: Vec<(f64, u8)> = values.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let sorted: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    // positives[i] = number of positive labels among the first i samples
    let mut positives = Vec::with_capacity(pairs.len() + 1);
    positives.push(0usize);
    for p in &pairs {
        positives.push(positives.last().unwrap() + p.1 as usize);
    }

    let mut thresholds = Vec::new();
    split_range(&sorted, &positives, 0, sorted.len(), max_depth, min_leaf, &mut thresholds);
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    if thresholds.is_empty() && sorted.first() == sorted.last() {
        log::warn!("feature `{feature}` is constant; using a single bin");
    }
    Ok(BinningScheme {
        feature: feature.to_string(),
        thresholds,
    })
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

fn split_range(
    sorted: &[f64],
    positives: &[usize],
    lo: usize,
    hi: usize,
    depth_left: usize,
    min_leaf: usize,
    out: &mut Vec<f64>,
) {
    let n = hi - lo;
    if depth_left == 0 || n < 2 * min_leaf {
        return;
    }
    let pos = positives[hi] - positives[lo];
    let parent = gini(pos, n);
    if parent == 0.0 {
        return;
    }
    let mut best: Option<(f64, usize)> = None;
    for cut in (lo + min_leaf)..=(hi - min_leaf) {
        if sorted[cut - 1] == sorted[cut] {
            continue;
        }
        let nl = cut - lo;
        let nr = hi - cut;
        let pl = positives[cut] - positives[lo];
        let pr = pos - pl;
        let imp = (nl as f64 * gini(pl, nl) + nr as f64 * gini(pr, nr)) / n as f64;
        if best.map_or(true, |(b, _)| imp < b) {
            best = Some((imp, cut));
        }
    }
    let Some((imp, cut)) = best else { return };
    if parent - imp <= 1e-12 {
        return;
    }
    out.push(0.5 * (sorted[cut - 1] + sorted[cut]));
    split_range(sorted, positives, lo, cut, depth_left - 1, min_leaf, out);
    split_range(sorted, positives, cut, hi, depth_left - 1, min_leaf, out);
}

/// What a single input bit asserts about its feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Predicate {
    /// The feature has a single bin.
    Any,
    Below { t: f64 },
    Between { lo: f64, hi: f64 },
    AtLeast { t: f64 },
    Equals { value: String },
    /// Categorical fallback: none of the known values.
    Other { known: Vec<String> },
    /// Binary flag equal to `value`.
    Flag { value: u8 },
    /// An abstract input bit with no raw feature behind it.
    Bit,
}

/// Display form of a cut point: at most six decimals, so a midpoint like
/// 13.649999999999999 reads as 13.65. The stored threshold is unchanged.
fn format_threshold(t: f64) -> String {
    if !t.is_finite() {
        return format!("{t}");
    }
    let s = format!("{t:.6}");
    let s = s.trim_end_matches('0');
    if s.ends_with('.') {
        format!("{s}0")
    } else {
        s.to_string()
    }
}

impl Predicate {
    pub fn render(&self, feature: &str) -> String {
        match self {
            Predicate::Any => format!("{feature} is any"),
            Predicate::Below { t } => format!("{feature} < {}", format_threshold(*t)),
            Predicate::Between { lo, hi } => {
                format!("{} <= {feature} < {}", format_threshold(*lo), format_threshold(*hi))
            }
            Predicate::AtLeast { t } => format!("{feature} >= {}", format_threshold(*t)),
            Predicate::Equals { value } => format!("{feature} = {value}"),
            Predicate::Other { known } => format!("{feature} not in {{{}}}", known.join(", ")),
            Predicate::Flag { value } => format!("{feature} = {value}"),
            Predicate::Bit => feature.to_string(),
        }
    }

    /// Evaluates the predicate on a raw value. `None` when the value has
    /// the wrong type for the predicate.
    pub fn matches(&self, value: &RawValue) -> Option<bool> {
        Some(match self {
            Predicate::Any => true,
            Predicate::Below { t } => value.as_f64()? < *t,
            Predicate::Between { lo, hi } => {
                let v = value.as_f64()?;
                *lo <= v && v < *hi
            }
            Predicate::AtLeast { t } => value.as_f64()? >= *t,
            Predicate::Equals { value: want } => &value.as_text() == want,
            Predicate::Other { known } => !known.contains(&value.as_text()),
            Predicate::Flag { value: want } => flag_value(value)? == *want,
            Predicate::Bit => value.as_f64()? != 0.0,
        })
    }
}

fn flag_value(v: &RawValue) -> Option<u8> {
    match v.as_f64() {
        Some(x) if x == 0.0 => Some(0),
        Some(x) if x == 1.0 => Some(1),
        _ => match v.as_text().trim().to_ascii_lowercase().as_str() {
            "true" => Some(1),
            "false" => Some(0),
            _ => None,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitInfo {
    pub feature: String,
    /// Index of the feature group (bits of one feature are contiguous).
    pub group: usize,
    pub category: Category,
    pub predicate: Predicate,
}

impl BitInfo {
    pub fn render(&self) -> String {
        self.predicate.render(&self.feature)
    }
}

/// Meaning of every input bit. Bits are grouped by feature, and features
/// by category in the order loan, history, soft.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitLayout {
    pub bits: Vec<BitInfo>,
}

impl BitLayout {
    pub fn new(bits: Vec<BitInfo>) -> Result<Self> {
        let layout = Self { bits };
        layout.validate()?;
        Ok(layout)
    }

    /// A layout of abstract bits `b0, b1, ...` with the given number of
    /// bits per category; each bit is its own group.
    pub fn plain(widths: [usize; 3]) -> Self {
        let mut bits = Vec::new();
        for (cat, &w) in Category::ALL.iter().zip(&widths) {
            for _ in 0..w {
                let i = bits.len();
                bits.push(BitInfo {
                    feature: format!("b{i}"),
                    group: i,
                    category: *cat,
                    predicate: Predicate::Bit,
                });
            }
        }
        Self { bits }
    }

    pub fn validate(&self) -> Result<()> {
        let mut last_cat = 0;
        let mut last_group = None;
        let mut closed = BTreeSet::new();
        for (i, b) in self.bits.iter().enumerate() {
            let c = b.category.index();
            if c < last_cat {
                return Err(Error::Schema(format!("bit {i}: categories not contiguous")));
            }
            last_cat = c;
            if last_group != Some(b.group) {
                if !closed.insert(b.group) {
                    return Err(Error::Schema(format!("bit {i}: feature group {} split", b.group)));
                }
                last_group = Some(b.group);
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.bits.len()
    }

    pub fn category_range(&self, cat: Category) -> Range<usize> {
        let start = self.bits.partition_point(|b| b.category.index() < cat.index());
        let end = self.bits.partition_point(|b| b.category.index() <= cat.index());
        start..end
    }

    pub fn category_widths(&self) -> [usize; 3] {
        Category::ALL.map(|c| self.category_range(c).len())
    }

    /// Contiguous bit ranges, one per feature group, in bit order.
    pub fn groups(&self) -> Vec<Range<usize>> {
        let mut out: Vec<Range<usize>> = Vec::new();
        for (i, b) in self.bits.iter().enumerate() {
            match out.last_mut() {
                Some(r) if self.bits[r.start].group == b.group => r.end = i + 1,
                _ => out.push(i..i + 1),
            }
        }
        out
    }

    pub fn render(&self, bit: usize) -> Result<String> {
        self.bits.get(bit).map(BitInfo::render).ok_or(Error::Index {
            index: bit,
            len: self.bits.len(),
        })
    }

    /// Hex SHA-256 of the serialized layout.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(&self.bits).expect("layout serializes");
        hex::encode(&Sha256::digest(&json)[..16])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Encoding {
    Continuous { thresholds: Vec<f64> },
    Categorical { vocabulary: Vec<String> },
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub name: String,
    pub category: Category,
    /// Position of the feature in the schema (and in raw rows).
    pub column: usize,
    pub first_bit: usize,
    pub encoding: Encoding,
}

impl FeatureEncoder {
    pub fn n_bits(&self) -> usize {
        match &self.encoding {
            Encoding::Continuous { thresholds } => thresholds.len() + 1,
            Encoding::Categorical { vocabulary } => vocabulary.len() + 1,
            Encoding::Binary => 2,
        }
    }

    fn predicates(&self) -> Vec<Predicate> {
        match &self.encoding {
            Encoding::Continuous { thresholds } => {
                let k = thresholds.len();
                (0..=k)
                    .map(|i| match (i, k) {
                        (_, 0) => Predicate::Any,
                        (0, _) => Predicate::Below { t: thresholds[0] },
                        (i, k) if i == k => Predicate::AtLeast { t: thresholds[k - 1] },
                        (i, _) => Predicate::Between {
                            lo: thresholds[i - 1],
                            hi: thresholds[i],
                        },
                    })
                    .collect()
            }
            Encoding::Categorical { vocabulary } => vocabulary
                .iter()
                .map(|v| Predicate::Equals { value: v.clone() })
                .chain(std::iter::once(Predicate::Other {
                    known: vocabulary.clone(),
                }))
                .collect(),
            Encoding::Binary => vec![Predicate::Flag { value: 0 }, Predicate::Flag { value: 1 }],
        }
    }

    /// Offset (within this feature's bits) of the bit a value sets.
    pub fn encode(&self, value: &RawValue) -> std::result::Result<usize, String> {
        match &self.encoding {
            Encoding::Continuous { thresholds } => {
                let v = value
                    .as_f64()
                    .ok_or_else(|| format!("`{}`: `{value}` is not numeric", self.name))?;
                Ok(thresholds.partition_point(|&t| t <= v))
            }
            Encoding::Categorical { vocabulary } => {
                let text = value.as_text();
                Ok(vocabulary
                    .binary_search(&text)
                    .unwrap_or(vocabulary.len()))
            }
            Encoding::Binary => flag_value(value)
                .map(usize::from)
                .ok_or_else(|| format!("`{}`: `{value}` is not 0/1", self.name)),
        }
    }
}

/// Fitted feature encoders plus the resulting bit layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binarizer {
    pub encoders: Vec<FeatureEncoder>,
    pub bit_layout: BitLayout,
}

impl Binarizer {
    /// Builds the layout from encoders listed in any order; they are
    /// arranged by category (stable within a category).
    pub fn from_encoders(mut encoders: Vec<FeatureEncoder>) -> Result<Self> {
        encoders.sort_by_key(|e| e.category.index());
        let mut bits = Vec::new();
        for (group, enc) in encoders.iter_mut().enumerate() {
            enc.first_bit = bits.len();
            for predicate in enc.predicates() {
                bits.push(BitInfo {
                    feature: enc.name.clone(),
                    group,
                    category: enc.category,
                    predicate,
                });
            }
        }
        Ok(Self {
            encoders,
            bit_layout: BitLayout::new(bits)?,
        })
    }

    pub fn width(&self) -> usize {
        self.bit_layout.width()
    }

    pub fn transform(&self, row: &[RawValue]) -> std::result::Result<Vec<u8>, String> {
        let mut bits = vec![0u8; self.width()];
        for enc in &self.encoders {
            let value = row
                .get(enc.column)
                .ok_or_else(|| format!("row has no column {} (`{}`)", enc.column, enc.name))?;
            bits[enc.first_bit + enc.encode(value)?] = 1;
        }
        Ok(bits)
    }

    pub fn transform_row(&self, row: &[RawValue]) -> Result<Vec<u8>> {
        self.transform(row).map_err(|message| Error::Row { row: 0, message })
    }

    pub fn transform_dataset(&self, ds: &LabeledDataset) -> Result<BinaryDataset> {
        let w = self.width();
        let mut bits = Vec::with_capacity(ds.len() * w);
        for (i, row) in ds.rows.iter().enumerate() {
            let encoded = self
                .transform(row)
                .map_err(|message| Error::Row { row: i, message })?;
            bits.extend_from_slice(&encoded);
        }
        Ok(BinaryDataset {
            width: w,
            bits,
            labels: ds.labels.clone(),
        })
    }

    pub fn predicate_text(&self, bit: usize) -> Result<String> {
        self.bit_layout.render(bit)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("binarizer serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let b: Binarizer = serde_json::from_str(text)?;
        b.bit_layout.validate()?;
        let expected: usize = b.encoders.iter().map(FeatureEncoder::n_bits).sum();
        if expected != b.width() {
            return Err(Error::Schema(format!(
                "encoders describe {expected} bits but layout has {}",
                b.width()
            )));
        }
        Ok(b)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Fits one encoder per schema feature on the given rows.
pub fn fit_binarizer(ds: &LabeledDataset, schema: &FeatureSchema, cfg: &BinningConfig) -> Result<Binarizer> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset(Some("cannot fit binarizer".into())));
    }
    if let Some((i, r)) = ds.rows.iter().enumerate().find(|(_, r)| r.len() != schema.features.len()) {
        return Err(Error::Schema(format!(
            "row {i} has {} values but the schema lists {} features",
            r.len(),
            schema.features.len()
        )));
    }
    let min_leaf = cfg.min_leaf_for(ds.len()).min(ds.len() / 2).max(1);

    let mut encoders = Vec::with_capacity(schema.features.len());
    for (col, spec) in schema.features.iter().enumerate() {
        let encoding = match spec.kind {
            FeatureKind::Continuous => {
                let values = ds
                    .rows
                    .iter()
                    .enumerate()
                    .map(|(i, r)| {
                        r[col].as_f64().ok_or_else(|| Error::Row {
                            row: i,
                            message: format!("`{}`: `{}` is not numeric", spec.name, r[col]),
                        })
                    })
                    .collect::<Result<Vec<f64>>>()?;
                let scheme = if ds.len() >= 2 {
                    fit_bins(&spec.name, &values, &ds.labels, cfg.max_depth, min_leaf)?
                } else {
                    BinningScheme {
                        feature: spec.name.clone(),
                        thresholds: vec![],
                    }
                };
                Encoding::Continuous {
                    thresholds: scheme.thresholds,
                }
            }
            FeatureKind::Categorical => {
                let vocab: BTreeSet<String> = ds.rows.iter().map(|r| r[col].as_text()).collect();
                Encoding::Categorical {
                    vocabulary: vocab.into_iter().collect(),
                }
            }
            FeatureKind::Binary => Encoding::Binary,
        };
        encoders.push(FeatureEncoder {
            name: spec.name.clone(),
            category: spec.category,
            column: col,
            first_bit: 0,
            encoding,
        });
    }
    Binarizer::from_encoders(encoders)
}
