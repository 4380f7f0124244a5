//! Rule extraction and explanations.
//!
//! Every hidden node of the discrete model is a conjunction of the input
//! predicates it selects. Nodes of one subnet with the same predicate set
//! are merged into one rule whose output weight is the sum of theirs. A
//! rule's influence is `sigmoid(u_s · v)`: above 0.5 the rule pushes the
//! final logit toward default (a negative factor).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binarizer::{Binarizer, BitLayout};
use crate::conjnet::{aggregate_logit, GraftedModel};
use crate::dataset::{Category, RawValue};
use crate::error::{Error, Result};
use crate::numeric::{exact_sum, sigmoid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub subnet: Category,
    /// Global input-bit indices; empty means the rule is always true.
    pub predicate_bits: Vec<usize>,
    /// Sum of the merged nodes' output weights.
    pub output_weight: f64,
    pub effective_weight: f64,
    pub influence: f64,
    /// Hidden nodes merged into this rule, with their own output weights.
    pub nodes: Vec<usize>,
    pub node_weights: Vec<f64>,
}

impl Rule {
    pub fn is_bias(&self) -> bool {
        self.predicate_bits.is_empty()
    }

    pub fn is_negative(&self) -> bool {
        self.influence > 0.5
    }

    pub fn fires(&self, x: &[u8]) -> bool {
        self.predicate_bits.iter().all(|&b| x[b] == 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubnetRules {
    pub category: Category,
    pub subnet_weight: f64,
    pub subnet_bias: f64,
    pub rules: Vec<Rule>,
    /// Rule index of every hidden node.
    pub node_rule: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleBook {
    pub subnets: Vec<SubnetRules>,
    pub agg_bias: f64,
    pub width: usize,
    pub layout_hash: String,
    pub layout: BitLayout,
}

/// Converts the discrete view of `model` into a rule book rendered with
/// `binarizer`'s predicates.
pub fn extract_rules(model: &GraftedModel, binarizer: &Binarizer) -> Result<RuleBook> {
    extract_rules_with_layout(model, &binarizer.bit_layout)
}

pub fn extract_rules_with_layout(model: &GraftedModel, layout: &BitLayout) -> Result<RuleBook> {
    model.check_layout(layout)?;
    let subnets = model
        .subnets
        .iter()
        .map(|s| {
            let u = model.agg_weights[s.category.index()];
            let mut by_bits: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
            let mut rules: Vec<Rule> = Vec::new();
            let mut node_rule = Vec::with_capacity(s.hidden);
            for j in 0..s.hidden {
                let bits: Vec<usize> = s.selected_bits(j).into_iter().map(|k| k + s.offset).collect();
                let v = s.output_weights[j];
                let idx = *by_bits.entry(bits.clone()).or_insert_with(|| {
                    rules.push(Rule {
                        subnet: s.category,
                        predicate_bits: bits,
                        output_weight: 0.0,
                        effective_weight: 0.0,
                        influence: 0.5,
                        nodes: Vec::new(),
                        node_weights: Vec::new(),
                    });
                    rules.len() - 1
                });
                rules[idx].nodes.push(j);
                rules[idx].node_weights.push(v);
                node_rule.push(idx);
            }
            for r in &mut rules {
                r.output_weight = exact_sum(r.node_weights.iter().copied());
                r.effective_weight = u * r.output_weight;
                r.influence = sigmoid(r.effective_weight);
            }
            SubnetRules {
                category: s.category,
                subnet_weight: u,
                subnet_bias: s.output_bias,
                rules,
                node_rule,
            }
        })
        .collect();
    Ok(RuleBook {
        subnets,
        agg_bias: model.agg_bias,
        width: model.width,
        layout_hash: model.layout_hash.clone(),
        layout: layout.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleEvaluation {
    pub subnet_logits: [f64; 3],
    pub subnet_probs: [f64; 3],
    pub final_logit: f64,
    pub final_prob: f64,
    /// `(subnet index, rule index)` of every active rule.
    pub active: Vec<(usize, usize)>,
}

impl RuleBook {
    pub fn rules(&self) -> impl Iterator<Item = &Rule> {
        self.subnets.iter().flat_map(|s| s.rules.iter())
    }

    /// False when two predicate bits belong to the same one-hot feature,
    /// which no binarized row can satisfy.
    pub fn can_fire(&self, rule: &Rule) -> bool {
        let mut seen = BTreeSet::new();
        rule.predicate_bits
            .iter()
            .all(|&b| self.layout.bits.get(b).map_or(true, |info| seen.insert(info.group)))
    }

    pub fn render_bits(&self, bits: &[usize]) -> Vec<String> {
        bits.iter()
            .map(|&b| self.layout.render(b).unwrap_or_else(|_| format!("bit {b}")))
            .collect()
    }

    pub fn render_rule(&self, rule: &Rule) -> String {
        if rule.is_bias() {
            "TRUE".to_string()
        } else {
            self.render_bits(&rule.predicate_bits).join(" AND ")
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("rule book serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
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

/// Evaluates the rule book on a binary input through the same output
/// layers as the discrete network.
pub fn evaluate_rulebook(rb: &RuleBook, x: &[u8]) -> Result<RuleEvaluation> {
    if x.len() != rb.width {
        return Err(Error::arg(format!(
            "input width {} does not match rule book width {}",
            x.len(),
            rb.width
        )));
    }
    let mut logits = [0.0; 3];
    let mut active = Vec::new();
    for (si, s) in rb.subnets.iter().enumerate() {
        let mut terms = vec![s.subnet_bias];
        for (ri, r) in s.rules.iter().enumerate() {
            if r.fires(x) {
                terms.extend_from_slice(&r.node_weights);
                active.push((si, ri));
            }
        }
        logits[si] = exact_sum(terms);
    }
    let probs = logits.map(sigmoid);
    let weights = [0, 1, 2].map(|i| rb.subnets[i].subnet_weight);
    let final_logit = aggregate_logit(&weights, &probs, rb.agg_bias);
    Ok(RuleEvaluation {
        subnet_logits: logits,
        subnet_probs: probs,
        final_logit,
        final_prob: sigmoid(final_logit),
        active,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Factor {
    Negative,
    Positive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleLine {
    pub predicates: Vec<String>,
    pub output_weight: f64,
    pub effective_weight: f64,
    pub influence: f64,
    pub factor: Factor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalSection {
    pub subnet: Category,
    pub title: String,
    pub subnet_weight: f64,
    pub rules: Vec<RuleLine>,
    pub bias_rules: Vec<RuleLine>,
    /// Rules left out because two of their predicates test the same
    /// feature, so they never fire.
    #[serde(default)]
    pub never_fire: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalReport {
    pub sections: Vec<GlobalSection>,
}

fn rule_line(rb: &RuleBook, r: &Rule) -> RuleLine {
    RuleLine {
        predicates: if r.is_bias() {
            vec!["TRUE".to_string()]
        } else {
            rb.render_bits(&r.predicate_bits)
        },
        output_weight: r.output_weight,
        effective_weight: r.effective_weight,
        influence: r.influence,
        factor: if r.is_negative() { Factor::Negative } else { Factor::Positive },
    }
}

/// Per-subnet rule tables, strongest effective weight first.
pub fn global_explanation(rb: &RuleBook) -> GlobalReport {
    let sections = Category::ALL
        .iter()
        .map(|&cat| {
            let Some(s) = rb.subnets.iter().find(|s| s.category == cat) else {
                return GlobalSection {
                    subnet: cat,
                    title: cat.title().to_string(),
                    subnet_weight: 0.0,
                    rules: vec![],
                    bias_rules: vec![],
                    never_fire: 0,
                };
            };
            let (mut rules, dead): (Vec<&Rule>, Vec<&Rule>) =
                s.rules.iter().filter(|r| !r.is_bias()).partition(|r| rb.can_fire(r));
            rules.sort_by(|a, b| b.effective_weight.abs().total_cmp(&a.effective_weight.abs()));
            GlobalSection {
                subnet: cat,
                title: cat.title().to_string(),
                subnet_weight: s.subnet_weight,
                rules: rules.into_iter().map(|r| rule_line(rb, r)).collect(),
                bias_rules: s.rules.iter().filter(|r| r.is_bias()).map(|r| rule_line(rb, r)).collect(),
                never_fire: dead.len(),
            }
        })
        .collect();
    GlobalReport { sections }
}

impl GlobalReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<14} {:<22} {:>7}  {:<8}  Rules", "Subnet Weight", "Subnet", "Weight", "Factor");
        for s in &self.sections {
            let _ = writeln!(out, "{}", "-".repeat(78));
            let mut first = true;
            let lines = s.rules.iter().chain(&s.bias_rules);
            for line in lines {
                let (w, t) = if first {
                    (format!("{:.4}", s.subnet_weight), s.title.as_str())
                } else {
                    (String::new(), "")
                };
                first = false;
                let factor = match line.factor {
                    Factor::Negative => "negative",
                    Factor::Positive => "positive",
                };
                let _ = writeln!(
                    out,
                    "{:<14} {:<22} {:>7.2}  {:<8}  {}",
                    w,
                    t,
                    line.influence,
                    factor,
                    line.predicates.join(" AND ")
                );
            }
            if first {
                let _ = writeln!(out, "{:<14} {:<22} {:>7}  {:<8}  (no rules)", format!("{:.4}", s.subnet_weight), s.title, "", "");
            }
            if s.never_fire > 0 {
                let _ = writeln!(out, "{:<47}  ({} contradictory rules omitted)", "", s.never_fire);
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRule {
    pub subnet: Category,
    pub predicates: Vec<String>,
    pub bits: Vec<usize>,
    pub influence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalReport {
    /// `reject` when the predicted default probability is at least 0.5.
    pub decision: String,
    pub probability: f64,
    pub reasons: Vec<ReportRule>,
    pub active_rules: Vec<ReportRule>,
    /// The conjunction of every reason's predicates.
    pub explanation: String,
    pub input: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row: Option<Vec<RawValue>>,
}

impl LocalReport {
    pub fn rejected(&self) -> bool {
        self.decision == "reject"
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Explains one binarized input: the rules it activates, and among them
/// the negative factors.
pub fn local_explanation_bits(model: &GraftedModel, rb: &RuleBook, x: &[u8]) -> Result<LocalReport> {
    if model.layout_hash != rb.layout_hash {
        return Err(Error::Compatibility {
            expected: model.layout_hash.clone(),
            found: rb.layout_hash.clone(),
        });
    }
    let disc = model.forward_discrete(x)?;
    let mut active_rules = Vec::new();
    for (s, on) in rb.subnets.iter().zip(&disc.active) {
        let mut seen = vec![false; s.rules.len()];
        for (j, &a) in on.iter().enumerate() {
            let ri = s.node_rule[j];
            if a && !seen[ri] {
                seen[ri] = true;
                let r = &s.rules[ri];
                active_rules.push(ReportRule {
                    subnet: r.subnet,
                    predicates: if r.is_bias() {
                        vec!["TRUE".into()]
                    } else {
                        rb.render_bits(&r.predicate_bits)
                    },
                    bits: r.predicate_bits.clone(),
                    influence: r.influence,
                });
            }
        }
    }
    let reasons: Vec<ReportRule> = active_rules
        .iter()
        .filter(|r| r.influence > 0.5 && !r.bits.is_empty())
        .cloned()
        .collect();
    let explanation = reasons
        .iter()
        .map(|r| format!("({})", r.predicates.join(" AND ")))
        .collect::<Vec<_>>()
        .join(" AND ");
    let probability = disc.outputs.final_prob;
    Ok(LocalReport {
        decision: if probability >= 0.5 { "reject" } else { "approve" }.to_string(),
        probability,
        reasons,
        active_rules,
        explanation,
        input: x.to_vec(),
        row: None,
    })
}

/// Explains a raw applicant row.
pub fn local_explanation(
    model: &GraftedModel,
    rb: &RuleBook,
    binarizer: &Binarizer,
    row: &[RawValue],
) -> Result<LocalReport> {
    model.check_layout(&binarizer.bit_layout)?;
    let x = binarizer.transform_row(row)?;
    let mut report = local_explanation_bits(model, rb, &x)?;
    report.row = Some(row.to_vec());
    Ok(report)
}
