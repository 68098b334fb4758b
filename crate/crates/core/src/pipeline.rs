//! End-to-end grouping: factor classes, factor trees, mean-rank targets,
//! split, oversampling and the final cost-sensitive tree.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::{cluster_1d, cluster_factor};
use crate::cost::CostMatrix;
use crate::dataset::Dataset;
use crate::domain::{RankedClassLabel, COST, LOS, TBSA};
use crate::error::{CasemixError, Result, Stage};
use crate::evaluate::{compare_groupings, confusion, Comparison, ConfusionSummary, DEFAULT_MERGE_THRESHOLD};
use crate::hrg::HrgLabel;
use crate::preprocess::{preprocess, PreprocessConfig, PreprocessReport};
use crate::rng::{keyed_rng, mix_key, tag};
use crate::synth::administrative_fields;
use crate::tree::{build_tree, DecisionTree, TrainingData, TreeParams};

pub const RUN_FORMAT_VERSION: &str = "casemix-run/1";

/// Factors used to engineer targets, in label-vector order.
pub const TARGET_FACTORS: [&str; 3] = [LOS, COST, TBSA];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSeeds {
    pub clustering: u64,
    pub split: u64,
    pub oversample: u64,
}

/// Tree settings without the loss matrix, which follows from `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeSettings {
    #[serde(default = "d_min_split")]
    pub min_split: usize,
    #[serde(default = "d_min_leaf")]
    pub min_leaf: usize,
    #[serde(default = "d_max_depth")]
    pub max_depth: usize,
    #[serde(default = "d_cp", with = "crate::tree::cp_serde")]
    pub cp: f64,
}

fn d_min_split() -> usize {
    20
}
fn d_min_leaf() -> usize {
    7
}
fn d_max_depth() -> usize {
    30
}
fn d_cp() -> f64 {
    0.01
}

impl Default for TreeSettings {
    fn default() -> Self {
        TreeSettings {
            min_split: d_min_split(),
            min_leaf: d_min_leaf(),
            max_depth: d_max_depth(),
            cp: d_cp(),
        }
    }
}

impl TreeSettings {
    pub fn with_loss(&self, loss: CostMatrix) -> TreeParams {
        TreeParams {
            min_split: self.min_split,
            min_leaf: self.min_leaf,
            max_depth: self.max_depth,
            cp: self.cp,
            loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "d_k")]
    pub k: usize,
    #[serde(default = "d_split_fraction")]
    pub split_fraction: f64,
    #[serde(default = "d_top_m")]
    pub importance_top_m: usize,
    #[serde(default = "d_true")]
    pub oversample: bool,
    /// Also train the final tree under 0-1 loss for comparison.
    #[serde(default = "d_true")]
    pub baseline_zero_one: bool,
    pub seeds: PipelineSeeds,
    #[serde(default)]
    pub factor_tree: TreeSettings,
    #[serde(default)]
    pub final_tree: TreeSettings,
    /// Final-model loss; `|i − j|` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<CostMatrix>,
    #[serde(default = "d_preprocess")]
    pub preprocess: PreprocessConfig,
}

fn d_k() -> usize {
    13
}
fn d_split_fraction() -> f64 {
    0.7
}
fn d_top_m() -> usize {
    10
}
fn d_true() -> bool {
    true
}
fn d_preprocess() -> PreprocessConfig {
    PreprocessConfig {
        administrative_fields: administrative_fields(),
        ..PreprocessConfig::default()
    }
}

impl PipelineConfig {
    pub fn new(seeds: PipelineSeeds) -> Self {
        PipelineConfig {
            k: d_k(),
            split_fraction: d_split_fraction(),
            importance_top_m: d_top_m(),
            oversample: true,
            baseline_zero_one: true,
            seeds,
            factor_tree: TreeSettings::default(),
            final_tree: TreeSettings::default(),
            loss: None,
            preprocess: d_preprocess(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(CasemixError::invalid(format!("k must be at least 2, got {}", self.k)));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(CasemixError::invalid(format!(
                "split_fraction must lie in (0,1), got {}",
                self.split_fraction
            )));
        }
        if self.importance_top_m < 1 {
            return Err(CasemixError::invalid("importance_top_m must be at least 1"));
        }
        if let Some(loss) = &self.loss {
            if loss.k() != self.k {
                return Err(CasemixError::invalid(format!(
                    "loss matrix is {}x{} but k = {}",
                    loss.k(),
                    loss.k(),
                    self.k
                )));
            }
        }
        self.factor_params()?.validate()?;
        self.final_params()?.validate()
    }

    pub fn factor_params(&self) -> Result<TreeParams> {
        Ok(self.factor_tree.with_loss(CostMatrix::linear(self.k)?))
    }

    pub fn final_params(&self) -> Result<TreeParams> {
        let loss = match &self.loss {
            Some(l) => l.clone(),
            None => CostMatrix::linear(self.k)?,
        };
        Ok(self.final_tree.with_loss(loss))
    }
}

/// Factor labels in `TARGET_FACTORS` order.
pub type FactorLabels = [Vec<RankedClassLabel>; 3];

/// Clusters each factor on the log1p scale into `k` ranked classes.
pub fn engineer_factor_targets(ds: &Dataset, config: &PipelineConfig) -> Result<FactorLabels> {
    let labels: Vec<Vec<RankedClassLabel>> = TARGET_FACTORS
        .par_iter()
        .enumerate()
        .map(|(i, factor)| {
            let values = ds.factor_values(factor)?;
            cluster_factor(&values, config.k, mix_key(config.seeds.clustering, i as u64, tag::KMEANS))
        })
        .collect::<Result<_>>()?;
    let [a, b, c]: [Vec<RankedClassLabel>; 3] = labels.try_into().expect("three factors");
    Ok([a, b, c])
}

/// Predictors for a factor tree: every feature except raw LOS, raw cost and
/// the factor itself.
pub fn factor_tree_features(ds: &Dataset, factor: &str) -> Vec<String> {
    ds.schema
        .features()
        .into_iter()
        .map(|f| f.name)
        .filter(|n| n != LOS && n != COST && n != factor)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub factor: String,
    pub tree: DecisionTree,
    pub importance: Vec<(String, f64)>,
}

pub fn train_factor_trees(ds: &Dataset, labels: &FactorLabels, config: &PipelineConfig) -> Result<Vec<FactorModel>> {
    let params = config.factor_params()?;
    TARGET_FACTORS
        .par_iter()
        .zip(labels.par_iter())
        .map(|(factor, y)| {
            let data = TrainingData::from_dataset(ds, &factor_tree_features(ds, factor))?;
            let tree = build_tree(&data, y, &params)?;
            Ok(FactorModel {
                factor: factor.to_string(),
                importance: tree.variable_importance(),
                tree,
            })
        })
        .collect()
}

/// Union of each factor model's top-m features plus LOS and TBSA, minus raw
/// cost, in schema order.
pub fn final_feature_set(ds: &Dataset, models: &[FactorModel], top_m: usize) -> Vec<String> {
    let mut chosen: BTreeSet<&str> = [LOS, TBSA].into_iter().collect();
    for m in models {
        chosen.extend(m.importance.iter().take(top_m).map(|(n, _)| n.as_str()));
    }
    chosen.remove(COST);
    ds.schema
        .features()
        .into_iter()
        .map(|f| f.name)
        .filter(|n| chosen.contains(n.as_str()))
        .collect()
}

pub fn mean_ranks(labels: &FactorLabels) -> Result<Vec<f64>> {
    let n = labels[0].len();
    if labels.iter().any(|l| l.len() != n) {
        return Err(CasemixError::invalid("factor label vectors differ in length"));
    }
    Ok((0..n)
        .map(|i| labels.iter().map(|l| l[i].rank() as f64).sum::<f64>() / 3.0)
        .collect())
}

/// Mean of the three factor ranks, clustered untransformed into `k` classes.
pub fn engineer_final_targets(labels: &FactorLabels, k: usize, seed: u64) -> Result<(Vec<f64>, Vec<RankedClassLabel>)> {
    let means = mean_ranks(labels)?;
    let finals = cluster_1d(&means, k, mix_key(seed, 3, tag::KMEANS))?;
    Ok((means, finals))
}

fn by_class(indices: &[usize], labels: &[RankedClassLabel]) -> Result<BTreeMap<RankedClassLabel, Vec<usize>>> {
    let mut by: BTreeMap<RankedClassLabel, Vec<usize>> = BTreeMap::new();
    for &i in indices {
        let l = labels
            .get(i)
            .ok_or_else(|| CasemixError::invalid(format!("index {i} outside {} labels", labels.len())))?;
        by.entry(*l).or_default().push(i);
    }
    Ok(by)
}

/// Per-class random split. Classes with two or more members get at least
/// one on each side; single members go to train. Both outputs are sorted.
pub fn stratified_split(labels: &[RankedClassLabel], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CasemixError::invalid(format!("split fraction must lie in (0,1), got {fraction}")));
    }
    let all: Vec<usize> = (0..labels.len()).collect();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut members) in by_class(&all, labels)? {
        let n = members.len();
        if n == 1 {
            train.push(members[0]);
            continue;
        }
        let mut rng = keyed_rng(seed, class.index() as u64, tag::SPLIT);
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            members.swap(i, j);
        }
        let n_train = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
        train.extend_from_slice(&members[..n_train]);
        test.extend_from_slice(&members[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Tops every class up to the majority count by sampling its own members
/// with replacement. Output: the input indices, then each class's
/// duplicates in class order.
pub fn oversample_duplicate(indices: &[usize], labels: &[RankedClassLabel], seed: u64) -> Result<Vec<usize>> {
    if indices.is_empty() {
        return Err(CasemixError::invalid("cannot oversample an empty index set"));
    }
    let by = by_class(indices, labels)?;
    let majority = by.values().map(Vec::len).max().expect("non-empty");
    let mut out = indices.to_vec();
    for (class, members) in &by {
        let mut rng = keyed_rng(seed, class.index() as u64, tag::OVERSAMPLE);
        for _ in members.len()..majority {
            out.push(members[rng.random_range(0..members.len())]);
        }
    }
    Ok(out)
}

/// Errors unless no test index appears among the training rows.
pub fn check_leakage(train_rows: &[usize], test: &[usize]) -> Result<()> {
    let train: BTreeSet<usize> = train_rows.iter().copied().collect();
    match test.iter().find(|i| train.contains(i)) {
        Some(i) => Err(CasemixError::invalid(format!("record {i} is in both train and test sets"))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineMetrics {
    /// Oversampled held-out rows.
    pub test_oversampled: ConfusionSummary,
    /// Held-out rows, each once.
    pub test: ConfusionSummary,
    /// Training rows, each once.
    pub train: ConfusionSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_test_oversampled: Option<ConfusionSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_test: Option<ConfusionSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub format: String,
    pub tool_version: String,
    pub input_sha256: String,
    pub config_sha256: String,
    pub seeds: PipelineSeeds,
    /// SHA-256 of every other artifact in the run directory.
    pub artifacts: IndexMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineResult {
    pub config: PipelineConfig,
    pub input_sha256: String,
    pub preprocessed: Dataset,
    pub preprocess_report: PreprocessReport,
    pub factor_labels: FactorLabels,
    pub factor_models: Vec<FactorModel>,
    pub final_features: Vec<String>,
    pub mean_ranks: Vec<f64>,
    pub final_labels: Vec<RankedClassLabel>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub final_tree: DecisionTree,
    pub baseline_tree: Option<DecisionTree>,
    pub predictions: Vec<RankedClassLabel>,
    pub baseline_predictions: Option<Vec<RankedClassLabel>>,
    pub metrics: PipelineMetrics,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn pick(labels: &[RankedClassLabel], rows: &[usize]) -> Vec<RankedClassLabel> {
    rows.iter().map(|&i| labels[i]).collect()
}

/// Runs every stage on a raw cohort. Failures carry the stage they came
/// from.
pub fn run_pipeline(raw: &Dataset, config: &PipelineConfig) -> Result<PipelineResult> {
    config.validate()?;
    let input_sha256 = sha256_hex(raw.to_csv_string()?.as_bytes());
    let at = |stage: Stage| move |e: CasemixError| e.at_stage(stage);

    let (clean, preprocess_report) = preprocess(raw, &config.preprocess).map_err(at(Stage::Preprocess))?;
    if clean.is_empty() {
        return Err(CasemixError::invalid("no records survive preprocessing").at_stage(Stage::Preprocess));
    }
    let factor_labels = engineer_factor_targets(&clean, config).map_err(at(Stage::Clustering))?;
    let factor_models = train_factor_trees(&clean, &factor_labels, config).map_err(at(Stage::FactorTrees))?;
    let final_features = final_feature_set(&clean, &factor_models, config.importance_top_m);
    let (mean_ranks, final_labels) = engineer_final_targets(&factor_labels, config.k, config.seeds.clustering)
        .map_err(at(Stage::FinalTargets))?;

    let (train, test) =
        stratified_split(&final_labels, config.split_fraction, config.seeds.split).map_err(at(Stage::Split))?;
    let (train_rows, test_rows) = if config.oversample {
        let seed = |i| mix_key(config.seeds.oversample, i, tag::OVERSAMPLE);
        let tr = oversample_duplicate(&train, &final_labels, seed(0)).map_err(at(Stage::Oversample))?;
        let te = if test.is_empty() {
            Vec::new()
        } else {
            oversample_duplicate(&test, &final_labels, seed(1)).map_err(at(Stage::Oversample))?
        };
        (tr, te)
    } else {
        (train.clone(), test.clone())
    };
    check_leakage(&train_rows, &test).map_err(at(Stage::Oversample))?;

    let data = TrainingData::from_dataset(&clean, &final_features).map_err(at(Stage::FinalTree))?;
    let train_data = data.select_rows(&train_rows);
    let train_y = pick(&final_labels, &train_rows);
    let params = config.final_params()?;
    let fit = |p: &TreeParams| -> Result<(DecisionTree, Vec<RankedClassLabel>)> {
        let tree = build_tree(&train_data, &train_y, p)?;
        let pred = tree.predict_training(&data)?;
        Ok((tree, pred))
    };
    let (final_tree, predictions) = fit(&params).map_err(at(Stage::FinalTree))?;
    let baseline = if config.baseline_zero_one {
        let p = TreeParams {
            loss: CostMatrix::zero_one(config.k)?,
            ..params.clone()
        };
        Some(fit(&p).map_err(at(Stage::FinalTree))?)
    } else {
        None
    };

    let summarize = |pred: &[RankedClassLabel], rows: &[usize]| {
        confusion(&pick(&final_labels, rows), &pick(pred, rows), &params.loss)
    };
    let metrics = (|| -> Result<PipelineMetrics> {
        Ok(PipelineMetrics {
            test_oversampled: summarize(&predictions, &test_rows)?,
            test: summarize(&predictions, &test)?,
            train: summarize(&predictions, &train)?,
            baseline_test_oversampled: baseline.as_ref().map(|b| summarize(&b.1, &test_rows)).transpose()?,
            baseline_test: baseline.as_ref().map(|b| summarize(&b.1, &test)).transpose()?,
        })
    })()
    .map_err(at(Stage::Evaluate))?;

    let (baseline_tree, baseline_predictions) = match baseline {
        Some((t, p)) => (Some(t), Some(p)),
        None => (None, None),
    };
    Ok(PipelineResult {
        config: config.clone(),
        input_sha256,
        preprocessed: clean,
        preprocess_report,
        factor_labels,
        factor_models,
        final_features,
        mean_ranks,
        final_labels,
        train,
        test,
        train_rows,
        test_rows,
        final_tree,
        baseline_tree,
        predictions,
        baseline_predictions,
        metrics,
    })
}

/// Tree-versus-rules comparisons on the cleaned records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingEvaluation {
    /// Tree predictions against rule groups, training records once each.
    pub train: Comparison,
    /// The same on held-out records.
    pub test: Comparison,
    /// Engineered targets against rule groups on training records.
    pub train_targets: Comparison,
}

/// Compares tree groups with rule groups on `ds`, training and held-out
/// records separately, each record once. `rules` is aligned with `ds`.
pub fn compare_with_rules(
    ds: &Dataset,
    train: &[usize],
    test: &[usize],
    predictions: &[RankedClassLabel],
    targets: &[RankedClassLabel],
    rules: &[HrgLabel],
    metrics: Option<&PipelineMetrics>,
) -> Result<GroupingEvaluation> {
    for (what, len) in [("predictions", predictions.len()), ("targets", targets.len()), ("rule labels", rules.len())] {
        if len != ds.len() {
            return Err(CasemixError::invalid(format!("{len} {what} for {} records", ds.len())));
        }
    }
    if let Some(&i) = train.iter().chain(test).find(|&&i| i >= ds.len()) {
        return Err(CasemixError::invalid(format!("record index {i} outside {} records", ds.len())));
    }
    let side = |rows: &[usize], tree: &[RankedClassLabel], conf: Option<&ConfusionSummary>| {
        let sub = ds.select(rows);
        let r: Vec<HrgLabel> = rows.iter().map(|&i| rules[i]).collect();
        compare_groupings(&sub, &pick(tree, rows), &r, conf, DEFAULT_MERGE_THRESHOLD)
    };
    Ok(GroupingEvaluation {
        train: side(train, predictions, metrics.map(|m| &m.train))?,
        test: side(test, predictions, metrics.map(|m| &m.test))?,
        train_targets: side(train, targets, None)?,
    })
}

impl PipelineResult {
    /// Compares the tree's groups with rule-based groups aligned to
    /// `preprocessed`.
    pub fn compare_with_rules(&self, rules: &[HrgLabel]) -> Result<GroupingEvaluation> {
        compare_with_rules(
            &self.preprocessed,
            &self.train,
            &self.test,
            &self.predictions,
            &self.final_labels,
            rules,
            Some(&self.metrics),
        )
    }

    fn subset_of(&self) -> Vec<&'static str> {
        let mut s = vec!["train"; self.final_labels.len()];
        for &i in &self.test {
            s[i] = "test";
        }
        s
    }

    /// Every run artifact except `provenance.json`, by file name.
    pub fn artifacts(&self) -> Result<Vec<(String, Vec<u8>)>> {
        let mut out: Vec<(String, Vec<u8>)> = Vec::new();
        let json = |v: &dyn erased::Json| -> Result<Vec<u8>> { v.pretty() };
        out.push(("config.json".into(), self.config.to_json()?.into_bytes()));
        out.push(("preprocess_report.json".into(), json(&self.preprocess_report)?));
        out.push(("cohort_clean.csv".into(), self.preprocessed.to_csv_string()?.into_bytes()));

        let ids: Vec<&str> = self.preprocessed.records.iter().map(|r| r.id.as_str()).collect();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "los_rank", "cost_rank", "tbsa_rank", "mean_rank"])?;
        for (i, id) in ids.iter().enumerate() {
            w.write_record([
                id.to_string(),
                self.factor_labels[0][i].to_string(),
                self.factor_labels[1][i].to_string(),
                self.factor_labels[2][i].to_string(),
                self.mean_ranks[i].to_string(),
            ])?;
        }
        out.push(("factor_labels.csv".into(), finish(w)?));

        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["factor", "position", "feature", "score"])?;
        for m in &self.factor_models {
            for (pos, (name, score)) in m.importance.iter().enumerate() {
                w.write_record([m.factor.clone(), (pos + 1).to_string(), name.clone(), score.to_string()])?;
            }
        }
        out.push(("importances.csv".into(), finish(w)?));
        for m in &self.factor_models {
            out.push((format!("factor_model_{}.json", m.factor), m.tree.to_json()?.into_bytes()));
        }

        let subset = self.subset_of();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "id",
            "los_rank",
            "cost_rank",
            "tbsa_rank",
            "mean_rank",
            "final_rank",
            "predicted_rank",
            "baseline_rank",
            "subset",
        ])?;
        for (i, id) in ids.iter().enumerate() {
            w.write_record([
                id.to_string(),
                self.factor_labels[0][i].to_string(),
                self.factor_labels[1][i].to_string(),
                self.factor_labels[2][i].to_string(),
                self.mean_ranks[i].to_string(),
                self.final_labels[i].to_string(),
                self.predictions[i].to_string(),
                self.baseline_predictions.as_ref().map(|p| p[i].to_string()).unwrap_or_default(),
                subset[i].to_string(),
            ])?;
        }
        out.push(("final_labels.csv".into(), finish(w)?));

        let mut copies = vec![0usize; ids.len()];
        for &i in self.train_rows.iter().chain(&self.test_rows) {
            copies[i] += 1;
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "subset", "copies"])?;
        for (i, id) in ids.iter().enumerate() {
            w.write_record([id.to_string(), subset[i].to_string(), copies[i].to_string()])?;
        }
        out.push(("split.csv".into(), finish(w)?));

        out.push(("model.json".into(), self.final_tree.to_json()?.into_bytes()));
        if let Some(b) = &self.baseline_tree {
            out.push(("baseline_model.json".into(), b.to_json()?.into_bytes()));
        }
        out.push(("metrics.json".into(), json(&self.metrics)?));
        Ok(out)
    }

    pub fn provenance(&self, artifacts: &[(String, Vec<u8>)]) -> Result<Provenance> {
        Ok(Provenance {
            format: RUN_FORMAT_VERSION.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            input_sha256: self.input_sha256.clone(),
            config_sha256: sha256_hex(self.config.to_json()?.as_bytes()),
            seeds: self.config.seeds,
            artifacts: artifacts.iter().map(|(n, b)| (n.clone(), sha256_hex(b))).collect(),
        })
    }

    /// Writes all artifacts plus `provenance.json` into `dir`, creating
    /// it if needed. Returns the file names written.
    pub fn write_dir(&self, dir: &Path) -> Result<Vec<String>> {
        fs::create_dir_all(dir)?;
        let artifacts = self.artifacts()?;
        let prov = self.provenance(&artifacts)?;
        let mut names = Vec::with_capacity(artifacts.len() + 1);
        for (name, bytes) in &artifacts {
            fs::write(dir.join(name), bytes)?;
            names.push(name.clone());
        }
        let mut text = serde_json::to_string_pretty(&prov)?;
        text.push('\n');
        fs::write(dir.join("provenance.json"), text)?;
        names.push("provenance.json".into());
        Ok(names)
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| CasemixError::Io(e.into_error()))
}

mod erased {
    use crate::error::Result;

    /// Pretty JSON with a trailing newline for any serializable value.
    pub trait Json {
        fn pretty(&self) -> Result<Vec<u8>>;
    }

    impl<T: serde::Serialize> Json for T {
        fn pretty(&self) -> Result<Vec<u8>> {
            let mut s = serde_json::to_string_pretty(self)?;
            s.push('\n');
            Ok(s.into_bytes())
        }
    }
}
