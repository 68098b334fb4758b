//! Subcommand bodies. Each writes its outputs and returns them for the
//! manifest; the caller writes the manifest last.

use std::collections::HashMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use casemix_core::evaluate::{boxplot_csv, boxplot_stats, confusion_csv, variance_csv, BoxplotReport, FACTORS};
use casemix_core::hrg::{classify_dataset, reference_ruleset, CompiledRuleset, HrgLabel, Ruleset};
use casemix_core::pipeline::{compare_with_rules, run_pipeline, PipelineConfig, PipelineMetrics};
use casemix_core::rng::mix_key;
use casemix_core::synth::{generate_cohort, generated_schema, CohortConfig};
use casemix_core::tree::{extract_rules, rules_to_csv, rules_to_text};
use casemix_core::{svg, Dataset, DecisionTree, RankedClassLabel};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};
use crate::manifest::{read_input, read_input_text, to_pretty_json, Outputs};

pub const HRG_LABELS: &str = "hrg_labels.csv";
pub const HRG_HISTOGRAM: &str = "hrg_histogram.json";

/// Configuration for `all`: cohort, pipeline and an optional ruleset
/// (the reference ruleset when absent).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllConfig {
    pub cohort: CohortConfig,
    pub pipeline: PipelineConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ruleset: Option<Ruleset>,
}

fn ephemeral_seed(salt: u64) -> u64 {
    let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos() as u64).unwrap_or(0);
    mix_key(nanos, u64::from(std::process::id()), salt)
}

fn parse_json(text: &str, what: &str) -> CliResult<Value> {
    serde_json::from_str(text).map_err(|e| CliError::input(format!("{what}: {e}")))
}

fn fill_seed(obj: &mut serde_json::Map<String, Value>, key: &str, ephemeral: bool, salt: u64, what: &str) -> CliResult<()> {
    if obj.get(key).is_some_and(|v| !v.is_null()) {
        return Ok(());
    }
    if !ephemeral {
        return Err(CliError::input(format!(
            "{what} has no `{key}`; set explicit seeds or pass --ephemeral"
        )));
    }
    obj.insert(key.to_string(), json!(ephemeral_seed(salt)));
    Ok(())
}

fn object<'a>(v: &'a mut Value, what: &str) -> CliResult<&'a mut serde_json::Map<String, Value>> {
    v.as_object_mut().ok_or_else(|| CliError::input(format!("{what} must be a JSON object")))
}

fn resolve_cohort(v: &mut Value, ephemeral: bool) -> CliResult<()> {
    fill_seed(object(v, "cohort config")?, "seed", ephemeral, 1, "cohort config")
}

fn resolve_pipeline(v: &mut Value, ephemeral: bool) -> CliResult<()> {
    let obj = object(v, "pipeline config")?;
    if !obj.contains_key("seeds") {
        if !ephemeral {
            return Err(CliError::input("pipeline config has no `seeds`; set explicit seeds or pass --ephemeral"));
        }
        obj.insert("seeds".into(), json!({}));
    }
    let seeds = object(obj.get_mut("seeds").expect("inserted"), "seeds")?;
    for (i, key) in ["clustering", "split", "oversample"].iter().enumerate() {
        fill_seed(seeds, key, ephemeral, 2 + i as u64, "pipeline seeds")?;
    }
    Ok(())
}

fn typed<T: serde::de::DeserializeOwned>(v: &Value, what: &str) -> CliResult<T> {
    T::deserialize(v).map_err(|e| CliError::input(format!("{what}: {e}")))
}

/// A parsed configuration with seeds filled in.
pub struct Resolved<T> {
    pub value: Value,
    pub config: T,
}

pub fn resolve_cohort_config(text: &str, ephemeral: bool) -> CliResult<Resolved<CohortConfig>> {
    let mut value = parse_json(text, "cohort config")?;
    resolve_cohort(&mut value, ephemeral)?;
    let config: CohortConfig = typed(&value, "cohort config")?;
    config.validate()?;
    Ok(Resolved { value, config })
}

pub fn resolve_pipeline_config(text: &str, ephemeral: bool) -> CliResult<Resolved<PipelineConfig>> {
    let mut value = parse_json(text, "pipeline config")?;
    resolve_pipeline(&mut value, ephemeral)?;
    let config: PipelineConfig = typed(&value, "pipeline config")?;
    config.validate()?;
    Ok(Resolved { value, config })
}

pub fn resolve_all_config(text: &str, ephemeral: bool) -> CliResult<Resolved<AllConfig>> {
    let mut value = parse_json(text, "config")?;
    let obj = object(&mut value, "config")?;
    for key in ["cohort", "pipeline"] {
        if !obj.contains_key(key) {
            return Err(CliError::input(format!("config has no `{key}` section")));
        }
    }
    resolve_cohort(obj.get_mut("cohort").expect("checked"), ephemeral)?;
    resolve_pipeline(obj.get_mut("pipeline").expect("checked"), ephemeral)?;
    let config: AllConfig = typed(&value, "config")?;
    config.cohort.validate()?;
    config.pipeline.validate()?;
    Ok(Resolved { value, config })
}

pub fn seeds_of(value: &Value) -> Value {
    let mut s = serde_json::Map::new();
    if let Some(seed) = value.get("seed") {
        s.insert("cohort".into(), seed.clone());
    }
    if let Some(seeds) = value.get("seeds") {
        s.insert("pipeline".into(), seeds.clone());
    }
    for key in ["cohort", "pipeline"] {
        if let Some(Value::Object(inner)) = seeds_of_section(value, key) {
            s.extend(inner);
        }
    }
    Value::Object(s)
}

fn seeds_of_section(value: &Value, key: &str) -> Option<Value> {
    value.get(key).filter(|v| v.is_object()).map(seeds_of)
}

pub fn read_cohort(path: &Path) -> CliResult<Dataset> {
    let bytes = read_input(path)?;
    Dataset::read_csv(bytes.as_slice()).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn load_ruleset(path: Option<&Path>) -> CliResult<Ruleset> {
    match path {
        Some(p) => Ruleset::from_json(&read_input_text(p)?).map_err(|e| CliError::input(format!("{}: {e}", p.display()))),
        None => Ok(reference_ruleset()),
    }
}

/// Cohort CSV bytes.
pub fn generate(config: &CohortConfig) -> CliResult<Vec<u8>> {
    Ok(generate_cohort(config)?.to_csv_string()?.into_bytes())
}

pub fn hrg(cohort: &Dataset, ruleset: &Ruleset, root: &Path, prefix: &str, out: &mut Outputs) -> CliResult<Vec<HrgLabel>> {
    // An empty cohort carries no column types; borrow the generated layout's
    // when the column names agree.
    let generated = generated_schema();
    let names = |sc: &casemix_core::Schema| sc.extra.iter().map(|c| c.name.clone()).collect::<Vec<_>>();
    let schema = if cohort.is_empty() && names(&cohort.schema) == names(&generated) {
        &generated
    } else {
        &cohort.schema
    };
    let compiled = CompiledRuleset::compile(ruleset, schema)?;
    let outcome = classify_dataset(cohort, &compiled)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "hrg_label"]).map_err(csv_err)?;
    for (r, l) in cohort.records.iter().zip(&outcome.labels) {
        w.write_record([r.id.as_str(), &l.to_string()]).map_err(csv_err)?;
    }
    out.write(root, &format!("{prefix}{HRG_LABELS}"), &w.into_inner().map_err(|e| CliError::Io(e.to_string()))?)?;
    let hist = json!({
        "ruleset_version": ruleset.version,
        "k": ruleset.k,
        "total": outcome.histogram.total(),
        "counts": outcome.histogram.counts,
        "unclassifiable": outcome.histogram.unclassifiable,
    });
    out.write(root, &format!("{prefix}{HRG_HISTOGRAM}"), &to_pretty_json(&hist)?)?;
    Ok(outcome.labels)
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Input(e.to_string())
}

/// Runs the pipeline and writes its artifacts under `root/prefix`.
pub fn train(cohort: &Dataset, config: &PipelineConfig, root: &Path, prefix: &str, out: &mut Outputs) -> CliResult<()> {
    let result = run_pipeline(cohort, config)?;
    let artifacts = result.artifacts()?;
    let prov = result.provenance(&artifacts)?;
    for (name, bytes) in &artifacts {
        out.write(root, &format!("{prefix}{name}"), bytes)?;
    }
    out.write(root, &format!("{prefix}provenance.json"), &to_pretty_json(&prov)?)?;
    Ok(())
}

/// The parts of a training result directory needed for evaluation.
pub struct RunDir {
    pub cohort: Dataset,
    pub tree: DecisionTree,
    pub metrics: PipelineMetrics,
    pub targets: Vec<RankedClassLabel>,
    pub predictions: Vec<RankedClassLabel>,
    pub mean_ranks: Vec<f64>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl RunDir {
    pub fn load(dir: &Path) -> CliResult<RunDir> {
        let cohort = read_cohort(&dir.join("cohort_clean.csv"))?;
        let model = dir.join("model.json");
        let tree = DecisionTree::from_json(&read_input_text(&model)?)
            .map_err(|e| CliError::input(format!("{}: {e}", model.display())))?;
        let metrics_path = dir.join("metrics.json");
        let metrics: PipelineMetrics = serde_json::from_str(&read_input_text(&metrics_path)?)
            .map_err(|e| CliError::input(format!("{}: {e}", metrics_path.display())))?;
        let labels_path = dir.join("final_labels.csv");
        let bytes = read_input(&labels_path)?;
        let bad = |line: usize, msg: &str| CliError::input(format!("{} line {line}: {msg}", labels_path.display()));
        let mut rdr = csv::Reader::from_reader(bytes.as_slice());
        let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
        let col = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| CliError::input(format!("{} has no `{name}` column", labels_path.display())))
        };
        let (c_id, c_mean, c_final, c_pred, c_subset) =
            (col("id")?, col("mean_rank")?, col("final_rank")?, col("predicted_rank")?, col("subset")?);
        let k = tree.k();
        let rank = |text: &str, line: usize| -> CliResult<RankedClassLabel> {
            let r: usize = text.parse().map_err(|_| bad(line, &format!("bad rank {text:?}")))?;
            RankedClassLabel::new(r, k).map_err(|e| bad(line, &e.to_string()))
        };
        let (mut targets, mut predictions, mut mean_ranks, mut train, mut test) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (i, row) in rdr.records().enumerate() {
            let row = row.map_err(csv_err)?;
            let line = i + 2;
            let field = |c: usize| row.get(c).ok_or_else(|| bad(line, "short row"));
            let id = field(c_id)?;
            if cohort.records.get(i).map(|r| r.id.as_str()) != Some(id) {
                return Err(bad(line, &format!("record {id:?} does not match cohort_clean.csv row {}", i + 1)));
            }
            targets.push(rank(field(c_final)?, line)?);
            predictions.push(rank(field(c_pred)?, line)?);
            mean_ranks.push(field(c_mean)?.parse::<f64>().map_err(|_| bad(line, "bad mean_rank"))?);
            match field(c_subset)? {
                "train" => train.push(i),
                "test" => test.push(i),
                other => return Err(bad(line, &format!("unknown subset {other:?}"))),
            }
        }
        if targets.len() != cohort.len() {
            return Err(CliError::input(format!(
                "final_labels.csv has {} rows but cohort_clean.csv has {}",
                targets.len(),
                cohort.len()
            )));
        }
        Ok(RunDir {
            cohort,
            tree,
            metrics,
            targets,
            predictions,
            mean_ranks,
            train,
            test,
        })
    }
}

/// Reads `id,hrg_label` rows and aligns them to `ids`.
pub fn read_hrg_labels(path: &Path, ids: &[&str]) -> CliResult<Vec<HrgLabel>> {
    let bytes = read_input(path)?;
    let mut rdr = csv::Reader::from_reader(bytes.as_slice());
    let mut by_id: HashMap<String, HrgLabel> = HashMap::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let (Some(id), Some(label)) = (row.get(0), row.get(1)) else {
            return Err(CliError::input(format!("{} line {}: expected id,hrg_label", path.display(), i + 2)));
        };
        let label = HrgLabel::parse(label).map_err(|e| CliError::input(format!("{} line {}: {e}", path.display(), i + 2)))?;
        by_id.insert(id.to_string(), label);
    }
    ids.iter()
        .map(|id| {
            by_id.get(*id).copied().ok_or_else(|| {
                CliError::input(format!(
                    "{} has no label for record {id}; labels and cohort do not match",
                    path.display()
                ))
            })
        })
        .collect()
}

pub fn evaluate(run: &RunDir, rules: &[HrgLabel], svg_out: bool, root: &Path, prefix: &str, out: &mut Outputs) -> CliResult<()> {
    let ev = compare_with_rules(
        &run.cohort,
        &run.train,
        &run.test,
        &run.predictions,
        &run.targets,
        rules,
        Some(&run.metrics),
    )?;
    let name = |n: &str| format!("{prefix}{n}");
    out.write(root, &name("comparison.json"), &to_pretty_json(&ev)?)?;
    out.write(root, &name("variance_train.csv"), variance_csv(&ev.train)?.as_bytes())?;
    out.write(root, &name("variance_test.csv"), variance_csv(&ev.test)?.as_bytes())?;
    out.write(root, &name("confusion_test.csv"), confusion_csv(&run.metrics.test)?.as_bytes())?;
    out.write(root, &name("confusion_train.csv"), confusion_csv(&run.metrics.train)?.as_bytes())?;
    let rule_list = extract_rules(&run.tree);
    out.write(root, &name("rules.txt"), rules_to_text(&rule_list).as_bytes())?;
    out.write(root, &name("rules.csv"), rules_to_csv(&rule_list)?.as_bytes())?;

    let k = run.tree.k();
    let tree_expected: Vec<RankedClassLabel> = (0..k).map(RankedClassLabel::from_index).collect();
    let rule_expected: Vec<HrgLabel> = tree_expected.iter().map(|&l| HrgLabel::Ranked(l)).collect();
    let mut boxes: Vec<(String, String, BoxplotReport)> = Vec::new();
    for factor in FACTORS {
        let values = run.cohort.factor_values(factor)?;
        boxes.push(("tree".into(), factor.into(), boxplot_stats(&values, &run.predictions, &tree_expected)?));
        boxes.push(("rules".into(), factor.into(), boxplot_stats(&values, rules, &rule_expected)?));
    }
    out.write(root, &name("boxplot.csv"), boxplot_csv(&boxes)?.as_bytes())?;

    if svg_out {
        let cats: Vec<String> = FACTORS.iter().map(|f| f.to_string()).collect();
        for (subset, c) in [("train", &ev.train), ("test", &ev.test)] {
            let series = vec![
                ("tree".to_string(), c.factors.iter().map(|f| f.tree.mean).collect()),
                ("rules".to_string(), c.factors.iter().map(|f| f.rules.mean).collect()),
            ];
            let chart = svg::bar_chart(
                &format!("Mean intra-group variance ({subset})"),
                &cats,
                &series,
                "variance of log1p",
            );
            out.write(root, &name(&format!("variance_{subset}.svg")), chart.as_bytes())?;
        }
        for (grouping, factor, report) in &boxes {
            let chart = svg::boxplot_chart(&format!("{factor} by {grouping} group"), &report.rows, factor);
            out.write(root, &name(&format!("boxplot_{grouping}_{factor}.svg")), chart.as_bytes())?;
        }
        let points: Vec<(f64, f64)> = run
            .mean_ranks
            .iter()
            .zip(&run.targets)
            .map(|(&m, t)| (m, t.rank() as f64))
            .collect();
        let chart = svg::scatter_chart("Mean factor rank against final class", &points, "mean rank", "final class");
        out.write(root, &name("rank_spread.svg"), chart.as_bytes())?;
    }
    Ok(())
}
