//! Subcommand front end. Every command reads and writes plain artifact
//! files inside the output directory.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::audit::{anchor_explain, faithfulness_check, model_predictor, AuditMode};
use crate::binarizer::{fit_binarizer, Binarizer};
use crate::config::RunConfig;
use crate::conjnet::GraftedModel;
use crate::dataset::{
    generate_synthetic, load_csv, parse_rules, subsample, synthetic_schema, write_csv, FeatureSchema,
    LabeledDataset, RawValue, Row, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::eval::{cross_validate, metrics_csv, metrics_table, MetricsRow};
use crate::grafting::{discrete_accuracy, train};
use crate::rules::{extract_rules, global_explanation, local_explanation, RuleBook};

pub const CONFIG_ENV: &str = "CONJRULES_CONFIG";

pub const BINARIZER_FILE: &str = "binarizer.json";
pub const MODEL_FILE: &str = "model.json";
pub const RULEBOOK_FILE: &str = "rulebook.json";
pub const RULES_TEXT_FILE: &str = "rulebook.txt";
pub const TRACE_FILE: &str = "trace.csv";
pub const METRICS_CSV_FILE: &str = "metrics.csv";
pub const METRICS_TEXT_FILE: &str = "metrics.txt";
pub const SYNTH_DATA_FILE: &str = "synthetic.csv";
pub const SYNTH_SCHEMA_FILE: &str = "schema.toml";

#[derive(Debug, Parser)]
#[command(name = "conjrules", version, about = "Train, explain and audit conjunction-rule credit models")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Input CSV (overrides `paths.data`).
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Feature schema, TOML or JSON (overrides `paths.schema`).
    #[arg(long, global = true)]
    pub schema: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the binarizer and write binarizer.json.
    Binarize,
    /// Fit the binarizer and train the rule network.
    Train,
    /// k-fold cross-validation against the CART baseline.
    Evaluate {
        #[arg(long)]
        k: Option<usize>,
        /// Subsample this many rows first.
        #[arg(long)]
        sample: Option<usize>,
    },
    /// Turn a trained model into a rule book.
    ExtractRules,
    /// Local explanation for one applicant.
    Explain(RowSelector),
    /// Anchor explanation checked against the model's active rules.
    Audit {
        #[command(flatten)]
        row: RowSelector,
        /// negative-rules or all-active.
        #[arg(long)]
        against: Option<AuditMode>,
        /// Precision an anchor must reach.
        #[arg(long)]
        tau: Option<f64>,
        /// Maximum number of predicates in the anchor.
        #[arg(long)]
        budget: Option<usize>,
        /// Perturbation samples per precision estimate.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Generate a planted-rule dataset and its schema.
    Synth {
        /// Disjunction of conjunctions, e.g. "(f0&f2)|(f1&f3)".
        #[arg(long)]
        rules: String,
        #[arg(long, default_value_t = 5000)]
        rows: usize,
        #[arg(long, default_value_t = 30)]
        features: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
    },
}

#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct RowSelector {
    /// Index of a usable row in the data CSV.
    #[arg(long)]
    pub row: Option<usize>,
    /// Inline JSON object mapping feature names to values.
    #[arg(long)]
    pub record: Option<String>,
}

/// Resolved configuration plus output directory for one invocation.
pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
}

impl Context {
    pub fn from_cli(cli: &Cli) -> Result<Self> {
        let mut config = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = cli.seed {
            config.set_seed(seed);
        }
        if cli.data.is_some() {
            config.paths.data = cli.data.clone();
        }
        if cli.schema.is_some() {
            config.paths.schema = cli.schema.clone();
        }
        let out = cli
            .out
            .clone()
            .or_else(|| config.paths.out.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        config.paths.out = Some(out.clone());
        Ok(Self { config, out })
    }

    fn artifact(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn ensure_out(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))
    }

    fn data_path(&self) -> Result<PathBuf> {
        self.config
            .paths
            .data
            .clone()
            .or_else(|| Some(self.artifact(SYNTH_DATA_FILE)).filter(|p| p.exists()))
            .ok_or_else(|| Error::arg("no data file: pass --data or set paths.data"))
    }

    fn schema(&self) -> Result<FeatureSchema> {
        let path = self
            .config
            .paths
            .schema
            .clone()
            .or_else(|| Some(self.artifact(SYNTH_SCHEMA_FILE)).filter(|p| p.exists()))
            .ok_or_else(|| Error::arg("no schema file: pass --schema or set paths.schema"))?;
        FeatureSchema::from_file(path)
    }

    fn load_data(&self) -> Result<(FeatureSchema, LabeledDataset)> {
        let schema = self.schema()?;
        let path = self.data_path()?;
        let (ds, stats) = load_csv(&path, &schema)?;
        log::info!(
            "{}: kept {} of {} rows ({} bad status, {} missing, {} unparseable)",
            path.display(),
            stats.kept,
            stats.read,
            stats.dropped_status,
            stats.dropped_missing,
            stats.dropped_unparseable
        );
        Ok((schema, ds))
    }

    fn load_binarizer(&self) -> Result<Binarizer> {
        Binarizer::load(self.artifact(BINARIZER_FILE))
    }

    fn load_model(&self) -> Result<GraftedModel> {
        GraftedModel::load(self.artifact(MODEL_FILE))
    }

    fn load_rulebook(&self, model: &GraftedModel) -> Result<RuleBook> {
        let rb = RuleBook::load(self.artifact(RULEBOOK_FILE))?;
        if rb.layout_hash != model.layout_hash {
            return Err(Error::Compatibility {
                expected: model.layout_hash.clone(),
                found: rb.layout_hash,
            });
        }
        Ok(rb)
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.artifact(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    fn select_row(&self, sel: &RowSelector, schema: &FeatureSchema) -> Result<(Row, String)> {
        match (sel.row, &sel.record) {
            (Some(i), _) => {
                let (_, ds) = self.load_data()?;
                let row = ds
                    .rows
                    .get(i)
                    .cloned()
                    .ok_or(Error::Index { index: i, len: ds.len() })?;
                Ok((row, format!("row{i}")))
            }
            (None, Some(text)) => Ok((parse_record(text, schema)?, "record".to_string())),
            (None, None) => Err(Error::arg("pass --row or --record")),
        }
    }
}

/// Parses a JSON object of feature values into schema order.
pub fn parse_record(text: &str, schema: &FeatureSchema) -> Result<Row> {
    let map: BTreeMap<String, RawValue> =
        serde_json::from_str(text).map_err(|e| Error::arg(format!("record is not a JSON object of values: {e}")))?;
    schema
        .features
        .iter()
        .map(|f| {
            map.get(&f.name)
                .cloned()
                .ok_or_else(|| Error::Schema(format!("record is missing feature `{}`", f.name)))
        })
        .collect()
}

pub fn run(cli: Cli) -> Result<()> {
    let ctx = Context::from_cli(&cli)?;
    ctx.ensure_out()?;
    match &cli.command {
        Command::Binarize => cmd_binarize(&ctx),
        Command::Train => cmd_train(&ctx),
        Command::Evaluate { k, sample } => cmd_evaluate(&ctx, *k, *sample),
        Command::ExtractRules => cmd_extract_rules(&ctx),
        Command::Explain(sel) => cmd_explain(&ctx, sel),
        Command::Audit {
            row,
            against,
            tau,
            budget,
            samples,
        } => {
            let mut ctx = ctx;
            let a = &mut ctx.config.audit;
            if let Some(v) = against {
                a.against = *v;
            }
            if let Some(v) = tau {
                a.tau = *v;
            }
            if let Some(v) = budget {
                a.budget = *v;
            }
            if let Some(v) = samples {
                a.samples = *v;
            }
            ctx.config.validate()?;
            cmd_audit(&ctx, row)
        }
        Command::Synth {
            rules,
            rows,
            features,
            noise,
        } => cmd_synth(&ctx, rules, *rows, *features, *noise),
    }
}

pub fn cmd_binarize(ctx: &Context) -> Result<()> {
    let (schema, ds) = ctx.load_data()?;
    let binarizer = fit_binarizer(&ds, &schema, &ctx.config.binning)?;
    binarizer.save(ctx.artifact(BINARIZER_FILE))?;
    ctx.config.write_snapshot(&ctx.out)?;
    println!("{} bits, layout {}", binarizer.width(), binarizer.bit_layout.hash());
    for bit in 0..binarizer.width() {
        let info = &binarizer.bit_layout.bits[bit];
        println!("{bit:>4}  {:<8} {}", info.category.to_string(), binarizer.predicate_text(bit)?);
    }
    Ok(())
}

pub fn cmd_train(ctx: &Context) -> Result<()> {
    let (schema, ds) = ctx.load_data()?;
    let binarizer = fit_binarizer(&ds, &schema, &ctx.config.binning)?;
    let bits = binarizer.transform_dataset(&ds)?;
    let outcome = train(&binarizer.bit_layout, &bits, &ctx.config.train)?;
    binarizer.save(ctx.artifact(BINARIZER_FILE))?;
    outcome.model.save(ctx.artifact(MODEL_FILE))?;
    outcome.joint.save_csv(ctx.artifact(TRACE_FILE))?;
    for (trace, cat) in outcome.pretrain.iter().zip(crate::dataset::Category::ALL) {
        trace.save_csv(ctx.artifact(&format!("pretrain_{cat}.csv")))?;
    }
    ctx.config.write_snapshot(&ctx.out)?;
    println!(
        "best joint epoch {} (validation loss {:.4})",
        outcome.best_epoch, outcome.best_validation_loss
    );
    println!("discrete train accuracy: {:.4}", discrete_accuracy(&outcome.model, &bits));
    Ok(())
}

pub fn cmd_evaluate(ctx: &Context, k: Option<usize>, sample: Option<usize>) -> Result<()> {
    let mut config = ctx.config.clone();
    if let Some(k) = k {
        config.eval.k = k;
    }
    if sample.is_some() {
        config.eval.sample = sample;
    }
    config.validate()?;
    let (schema, mut ds) = ctx.load_data()?;
    if let Some(n) = config.eval.sample {
        ds = subsample(&ds, n, config.eval.seed);
    }
    let report = cross_validate(&ds, &schema, &config.cv_config())?;
    let mut rows: Vec<MetricsRow> = report.summary.clone();
    for f in &report.folds {
        let mut m = f.model.clone();
        m.model = format!("{} fold {}", m.model, f.fold);
        let mut c = f.cart.clone();
        c.model = format!("{} fold {}", c.model, f.fold);
        rows.push(m);
        rows.push(c);
    }
    ctx.write(METRICS_CSV_FILE, &metrics_csv(&rows))?;
    let table = metrics_table(&report.summary);
    ctx.write(METRICS_TEXT_FILE, &table)?;
    config.write_snapshot(&ctx.out)?;
    print!("{table}");
    Ok(())
}

pub fn cmd_extract_rules(ctx: &Context) -> Result<()> {
    let model = ctx.load_model()?;
    let binarizer = ctx.load_binarizer()?;
    let rb = extract_rules(&model, &binarizer)?;
    rb.save(ctx.artifact(RULEBOOK_FILE))?;
    let report = global_explanation(&rb);
    ctx.write(RULES_TEXT_FILE, &report.to_text())?;
    ctx.write("global_explanation.json", &report.to_json())?;
    print!("{}", report.to_text());
    Ok(())
}

pub fn cmd_explain(ctx: &Context, sel: &RowSelector) -> Result<()> {
    let model = ctx.load_model()?;
    let binarizer = ctx.load_binarizer()?;
    let rb = ctx.load_rulebook(&model)?;
    let schema = ctx.schema()?;
    let (row, tag) = ctx.select_row(sel, &schema)?;
    let report = local_explanation(&model, &rb, &binarizer, &row)?;
    let path = ctx.write(&format!("explain_{tag}.json"), &report.to_json())?;
    println!("decision: {} (p = {:.4})", report.decision, report.probability);
    if report.explanation.is_empty() {
        println!("no negative rules are active");
    } else {
        println!("reasons: {}", report.explanation);
    }
    log::info!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_audit(ctx: &Context, sel: &RowSelector) -> Result<()> {
    let model = ctx.load_model()?;
    let binarizer = ctx.load_binarizer()?;
    let rb = ctx.load_rulebook(&model)?;
    let (schema, ds) = ctx.load_data()?;
    let reference = binarizer.transform_dataset(&ds)?;
    let (row, tag) = ctx.select_row(sel, &schema)?;
    let report = local_explanation(&model, &rb, &binarizer, &row)?;
    let groups = binarizer.bit_layout.groups();
    let anchor = anchor_explain(
        model_predictor(&model),
        &report.input,
        &reference,
        &groups,
        &ctx.config.audit.anchor(),
    )?;
    let verdict = faithfulness_check(&anchor, &report, ctx.config.audit.against)?;
    ctx.write(&format!("audit_{tag}.json"), &verdict.to_json(&binarizer.bit_layout)?)?;
    ctx.config.write_snapshot(&ctx.out)?;
    let render = |bits: &[usize]| -> Result<String> {
        Ok(bits
            .iter()
            .map(|&b| binarizer.predicate_text(b))
            .collect::<Result<Vec<_>>>()?
            .join(" AND "))
    };
    println!(
        "anchor: {} (precision {:.3}, coverage {:.3}{})",
        render(&anchor.predicate_bits)?,
        anchor.precision,
        anchor.coverage,
        if anchor.low_precision { ", below tau" } else { "" }
    );
    println!("verdict: {:?}", verdict.verdict);
    if !verdict.extraneous_bits.is_empty() {
        println!("not on the decision path: {}", render(&verdict.extraneous_bits)?);
    }
    Ok(())
}

pub fn cmd_synth(ctx: &Context, rules: &str, rows: usize, features: usize, noise: f64) -> Result<()> {
    let spec = SyntheticSpec {
        n_rows: rows,
        n_binary_features: features,
        planted_rules: parse_rules(rules)?,
        label_noise: noise,
        seed: ctx.config.train.seed,
    };
    let ds = generate_synthetic(&spec)?;
    let schema = synthetic_schema(features);
    write_csv(ctx.artifact(SYNTH_DATA_FILE), &ds, &schema)?;
    ctx.write(SYNTH_SCHEMA_FILE, &schema.to_toml())?;
    println!(
        "{} rows, {} features, positive rate {:.4}",
        ds.len(),
        features,
        ds.positive_rate()
    );
    Ok(())
}

/// Entry point shared by the binary and the tests.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if cli.verbose {
        let _ = env_logger::Builder::from_default_env()
            .filter_level(log::LevelFilter::Info)
            .try_init();
    } else {
        let _ = env_logger::try_init();
    }
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            1
        }
    }
}
