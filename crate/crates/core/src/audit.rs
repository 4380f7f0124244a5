//! Greedy anchor explanations and a bit-level faithfulness audit.
//!
//! The explainer is a simplified anchor search: one predicate is added at
//! a time, precision is a fixed-size Monte Carlo estimate, and there are no
//! confidence bounds or beam.

use std::collections::BTreeSet;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binarizer::BitLayout;
use crate::conjnet::{GraftedModel, DEFAULT_EPS};
use crate::dataset::BinaryDataset;
use crate::error::{Error, Result};
use crate::numeric::derive_seed;
use crate::rules::LocalReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnchorConfig {
    /// Target precision.
    pub tau: f64,
    /// Maximum number of predicates in the anchor.
    pub budget: usize,
    /// Perturbations drawn per precision estimate.
    pub samples: usize,
    pub seed: u64,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            tau: 0.95,
            budget: 8,
            samples: 1000,
            seed: 0,
        }
    }
}

impl AnchorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0 && self.tau <= 1.0) {
            return Err(Error::arg(format!("audit.tau must lie in [0, 1], got {}", self.tau)));
        }
        if self.samples == 0 {
            return Err(Error::arg("audit.samples must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    /// Sorted global bit indices.
    pub predicate_bits: Vec<usize>,
    pub precision: f64,
    pub coverage: f64,
    pub samples_used: usize,
    /// Set when the budget ran out before precision reached `tau`.
    pub low_precision: bool,
    pub tau: f64,
    pub samples_per_estimate: usize,
    pub instance: Vec<u8>,
    pub predicted_class: u8,
}

/// Draws perturbations of an instance: every feature group not touched by
/// the anchor is copied from an independently chosen reference row.
struct Sampler<'a> {
    reference: &'a BinaryDataset,
    groups: &'a [Range<usize>],
    group_of: Vec<usize>,
}

impl<'a> Sampler<'a> {
    fn new(reference: &'a BinaryDataset, groups: &'a [Range<usize>]) -> Self {
        let mut group_of = vec![0; reference.width];
        for (g, r) in groups.iter().enumerate() {
            for b in r.clone() {
                group_of[b] = g;
            }
        }
        Self {
            reference,
            groups,
            group_of,
        }
    }

    fn sample(&self, instance: &[u8], fixed: &[bool], rng: &mut ChaCha8Rng, out: &mut Vec<u8>) {
        out.clear();
        out.extend_from_slice(instance);
        for (g, r) in self.groups.iter().enumerate() {
            if fixed[g] {
                continue;
            }
            let donor = self.reference.row(rng.gen_range(0..self.reference.len()));
            out[r.clone()].copy_from_slice(&donor[r.clone()]);
        }
    }

    fn fixed_groups(&self, anchor: &[usize]) -> Vec<bool> {
        let mut fixed = vec![false; self.groups.len()];
        for &b in anchor {
            fixed[self.group_of[b]] = true;
        }
        fixed
    }

    fn precision<F: Fn(&[u8]) -> u8>(
        &self,
        predict: &F,
        instance: &[u8],
        target: u8,
        anchor: &[usize],
        n: usize,
        seed: u64,
    ) -> f64 {
        let fixed = self.fixed_groups(anchor);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut buf = Vec::with_capacity(instance.len());
        let mut hits = 0usize;
        for _ in 0..n {
            self.sample(instance, &fixed, &mut rng, &mut buf);
            if predict(&buf) == target {
                hits += 1;
            }
        }
        hits as f64 / n as f64
    }
}

/// Fraction of reference rows in which every anchor bit is set.
pub fn anchor_coverage(anchor: &[usize], reference: &BinaryDataset) -> f64 {
    if reference.is_empty() {
        return 0.0;
    }
    let n = reference
        .rows()
        .filter(|x| anchor.iter().all(|&b| x[b] == 1))
        .count();
    n as f64 / reference.len() as f64
}

/// Greedy anchor search around `instance`.
///
/// `groups` partitions the bits into one-hot feature groups. Candidates are
/// the instance's set bits; each step keeps the one with the highest
/// estimated precision, lowest index on ties.
pub fn anchor_explain<F: Fn(&[u8]) -> u8>(
    predict: F,
    instance: &[u8],
    reference: &BinaryDataset,
    groups: &[Range<usize>],
    cfg: &AnchorConfig,
) -> Result<Anchor> {
    cfg.validate()?;
    if reference.is_empty() {
        return Err(Error::EmptyDataset(Some("anchor reference set".into())));
    }
    if instance.len() != reference.width {
        return Err(Error::arg(format!(
            "instance has {} bits, reference rows have {}",
            instance.len(),
            reference.width
        )));
    }
    let covered: usize = groups.iter().map(|r| r.len()).sum();
    if covered != instance.len() || groups.iter().any(|r| r.end > instance.len()) {
        return Err(Error::arg("feature groups do not partition the instance bits"));
    }
    let sampler = Sampler::new(reference, groups);
    let target = predict(instance);
    let n = cfg.samples;

    let mut anchor: Vec<usize> = Vec::new();
    let mut precision = sampler.precision(&predict, instance, target, &anchor, n, derive_seed(cfg.seed, u64::MAX));
    let mut used = n;
    while precision < cfg.tau && anchor.len() < cfg.budget {
        let fixed = sampler.fixed_groups(&anchor);
        let step_seed = derive_seed(cfg.seed, anchor.len() as u64);
        let mut best: Option<(usize, f64)> = None;
        for b in (0..instance.len()).filter(|&b| instance[b] == 1 && !fixed[sampler.group_of[b]]) {
            let mut trial = anchor.clone();
            trial.push(b);
            let p = sampler.precision(&predict, instance, target, &trial, n, derive_seed(step_seed, b as u64));
            used += n;
            if best.map_or(true, |(_, bp)| p > bp) {
                best = Some((b, p));
            }
        }
        let Some((b, p)) = best else { break };
        anchor.push(b);
        precision = p;
    }
    anchor.sort_unstable();
    Ok(Anchor {
        coverage: anchor_coverage(&anchor, reference),
        low_precision: precision < cfg.tau,
        predicate_bits: anchor,
        precision,
        samples_used: used,
        tau: cfg.tau,
        samples_per_estimate: n,
        instance: instance.to_vec(),
        predicted_class: target,
    })
}

/// Discrete decision of the model: 1 (reject) when the default
/// probability is at least 0.5.
pub fn model_predictor(model: &GraftedModel) -> impl Fn(&[u8]) -> u8 + '_ {
    let compiled = model.compile(DEFAULT_EPS);
    move |x| u8::from(compiled.discrete(x).outputs.final_prob >= 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditMode {
    /// Compare against the active rules with influence above 0.5.
    #[default]
    NegativeRules,
    /// Compare against every active non-bias rule.
    AllActive,
}

impl std::str::FromStr for AuditMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "negative-rules" | "negative" => Ok(Self::NegativeRules),
            "all-active" => Ok(Self::AllActive),
            other => Err(Error::arg(format!(
                "unknown audit mode `{other}` (expected negative-rules or all-active)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Faithful,
    Unfaithful,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditVerdict {
    pub anchor: Anchor,
    pub against: AuditMode,
    pub true_path_bits: Vec<usize>,
    pub extraneous_bits: Vec<usize>,
    pub verdict: Verdict,
}

/// Checks every anchor predicate against the model's own active rules.
pub fn faithfulness_check(anchor: &Anchor, report: &LocalReport, mode: AuditMode) -> Result<AuditVerdict> {
    if anchor.instance != report.input {
        return Err(Error::arg("anchor and local report describe different instances"));
    }
    let rules = match mode {
        AuditMode::NegativeRules => &report.reasons,
        AuditMode::AllActive => &report.active_rules,
    };
    let path: BTreeSet<usize> = rules.iter().flat_map(|r| r.bits.iter().copied()).collect();
    let extraneous: Vec<usize> = anchor
        .predicate_bits
        .iter()
        .copied()
        .filter(|b| !path.contains(b))
        .collect();
    Ok(AuditVerdict {
        anchor: anchor.clone(),
        against: mode,
        true_path_bits: path.into_iter().collect(),
        verdict: if extraneous.is_empty() {
            Verdict::Faithful
        } else {
            Verdict::Unfaithful
        },
        extraneous_bits: extraneous,
    })
}

#[derive(Debug, Serialize)]
struct VerdictJson<'a> {
    verdict: Verdict,
    against: AuditMode,
    anchor_predicates: Vec<String>,
    precision: f64,
    coverage: f64,
    low_precision: bool,
    tau: f64,
    samples_per_estimate: usize,
    samples_used: usize,
    extraneous_predicates: Vec<String>,
    true_path_predicates: Vec<String>,
    #[serde(flatten)]
    raw: &'a AuditVerdict,
}

impl AuditVerdict {
    pub fn is_faithful(&self) -> bool {
        self.verdict == Verdict::Faithful
    }

    /// JSON with rendered predicate text next to the raw bit indices.
    pub fn to_json(&self, layout: &BitLayout) -> Result<String> {
        let render = |bits: &[usize]| bits.iter().map(|&b| layout.render(b)).collect::<Result<Vec<_>>>();
        let view = VerdictJson {
            verdict: self.verdict,
            against: self.against,
            anchor_predicates: render(&self.anchor.predicate_bits)?,
            precision: self.anchor.precision,
            coverage: self.anchor.coverage,
            low_precision: self.anchor.low_precision,
            tau: self.anchor.tau,
            samples_per_estimate: self.anchor.samples_per_estimate,
            samples_used: self.anchor.samples_used,
            extraneous_predicates: render(&self.extraneous_bits)?,
            true_path_predicates: render(&self.true_path_bits)?,
            raw: self,
        };
        Ok(serde_json::to_string_pretty(&view)?)
    }
}
