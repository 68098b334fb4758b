//! Benchmark fixtures.

use casemix_core::dataset::Dataset;
use casemix_core::domain::RankedClassLabel;
use casemix_core::pipeline::{run_pipeline, PipelineConfig, PipelineSeeds};
use casemix_core::preprocess::log1p_factor;
use casemix_core::synth::{generate_cohort, CohortConfig};
use casemix_core::tree::{TrainingData, TreeParams};

pub const SEED: u64 = 42;

pub fn cohort(n: usize) -> Dataset {
    generate_cohort(&CohortConfig::new(n, SEED)).expect("valid cohort config")
}

pub fn config() -> PipelineConfig {
    PipelineConfig::new(PipelineSeeds {
        clustering: SEED,
        split: SEED,
        oversample: SEED,
    })
}

/// Log LOS of a generated cohort, the input of factor clustering.
pub fn log_los(n: usize) -> Vec<f64> {
    let ds = cohort(n);
    log1p_factor(&ds.factor_values("los_days").expect("los column")).expect("non-negative LOS")
}

/// Final-tree training inputs taken from a full pipeline run.
pub struct TreeFixture {
    pub data: TrainingData,
    pub labels: Vec<RankedClassLabel>,
    pub params: TreeParams,
}

pub fn tree_fixture(n: usize) -> TreeFixture {
    let cfg = config();
    let r = run_pipeline(&cohort(n), &cfg).expect("pipeline runs");
    let data = TrainingData::from_dataset(&r.preprocessed, &r.final_features).expect("final features present");
    let labels = r.train_rows.iter().map(|&i| r.final_labels[i]).collect();
    TreeFixture {
        data: data.select_rows(&r.train_rows),
        labels,
        params: cfg.final_params().expect("valid tree settings"),
    }
}
