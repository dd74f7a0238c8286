//! The synthetic end-to-end benchmark: three well-separated clusters of
//! 8-dimensional embeddings, 16 genes, 3000 training and 300 held-out spots.
//! Shared by the acceptance suite and the `synthetic_benchmark` example.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use stem::checkpoint::Checkpoint;
use stem::config::RunConfig;
use stem::data::{oracle_conditional_stats, CountTable, Dataset, Split, SyntheticSpec};
use stem::eval::{evaluate, EvalReport, Statistic};
use stem::numerics::RngStream;
use stem::pipeline::{align, cmd_synth, cmd_train, prepare_dataset, sample_split, SampleSet};
use stem::Result;

pub const CLUSTERS: usize = 3;
pub const COND_DIM: usize = 8;
pub const GENES: usize = 16;
/// 1000 training and 100 held-out spots per cluster.
pub const SPOTS_PER_CLUSTER: usize = 1100;
/// Spots are dealt round-robin over 11 slides; the last one is held out.
pub const SLIDES: usize = 11;

/// Centres `N(0, 1)` per coordinate with `τ = 0.1`; log-means `1 + N(0, 1)`
/// and log-stds uniform in `[0.2, 0.4]`.
pub fn benchmark_spec(seed: u64) -> SyntheticSpec {
    let mut rng = RngStream::new(seed, 0xBE7C);
    let mut spec = SyntheticSpec::random(
        CLUSTERS,
        COND_DIM,
        GENES,
        SPOTS_PER_CLUSTER,
        1.0,
        0.1,
        1.0,
        1.0,
        (0.2, 0.4),
        &mut rng,
    );
    spec.slides = SLIDES;
    spec.test_slides = 1;
    spec
}

pub struct Outcome {
    pub spec: SyntheticSpec,
    /// Log-space dataset restricted to the model's panel.
    pub dataset: Dataset,
    data_dir: PathBuf,
    pub checkpoint: Checkpoint<f32>,
    pub losses: Vec<f64>,
    pub draws: SampleSet,
    pub train_time: Duration,
    pub sample_time: Duration,
}

/// Gap between predictions and the analytic conditional means.
pub struct OracleGap {
    /// Per held-out spot, the gene-averaged `|prediction − m_k|`.
    pub per_spot: Vec<f64>,
}

impl OracleGap {
    pub fn max(&self) -> f64 {
        self.per_spot.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.per_spot.iter().sum::<f64>() / self.per_spot.len() as f64
    }
}

impl Outcome {
    /// The generated dataset on disk.
    pub fn dataset_dir(&self) -> PathBuf {
        self.data_dir.clone()
    }

    pub fn predictions(&self, stat: Statistic) -> Result<CountTable> {
        self.draws.summarize(stat)
    }

    pub fn report(&self, pred: &CountTable, k_list: &[usize]) -> Result<EvalReport> {
        let gt = align(pred, &self.dataset, Split::Test)?;
        evaluate(&pred.values, &gt, &pred.genes, k_list)
    }

    pub fn oracle_gap(&self, pred: &CountTable) -> Result<OracleGap> {
        let by_id: std::collections::HashMap<&str, &[f32]> = self
            .dataset
            .records()
            .iter()
            .map(|r| (r.spot_id.as_str(), r.identity().expect("identity view")))
            .collect();
        let columns = stem::model::GenePanel::new(pred.genes.clone(), stem::model::PanelKind::Custom)?
            .positions_in(&(0..GENES).map(|g| format!("gene_{g:03}")).collect::<Vec<_>>())?;
        let per_spot = pred
            .spot_ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let e: Vec<f64> = by_id[id.as_str()].iter().map(|&v| v as f64).collect();
                let (mean, _) = oracle_conditional_stats(&self.spec, &e)?;
                let row = pred.row(i);
                Ok(columns.iter().zip(row).map(|(&g, p)| (p - mean[g]).abs()).sum::<f64>() / row.len() as f64)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(OracleGap { per_spot })
    }

    /// Scores of the analytic conditional mean itself: the ceiling any
    /// predictor can reach on this draw of the data.
    pub fn oracle_report(&self, k_list: &[usize]) -> Result<EvalReport> {
        let genes = self.dataset.panel().genes().to_vec();
        let names: Vec<String> = (0..GENES).map(|g| format!("gene_{g:03}")).collect();
        let columns = stem::model::GenePanel::new(genes.clone(), stem::model::PanelKind::Custom)?.positions_in(&names)?;
        let mut pred = Vec::new();
        let mut gt = Vec::new();
        for r in self.dataset.records().iter().filter(|r| self.dataset.split_of(r) == Split::Test) {
            let e: Vec<f64> = r.identity().expect("identity view").iter().map(|&v| v as f64).collect();
            let (mean, _) = oracle_conditional_stats(&self.spec, &e)?;
            pred.extend(columns.iter().map(|&g| mean[g]));
            gt.extend_from_slice(&r.counts);
        }
        evaluate(&pred, &gt, &genes, k_list)
    }

    /// Means of consecutive non-overlapping windows of `window` losses,
    /// starting at step `from`.
    pub fn smoothed_losses(&self, from: usize, window: usize) -> Vec<f64> {
        self.losses[from.min(self.losses.len())..]
            .chunks_exact(window)
            .map(|w| w.iter().sum::<f64>() / window as f64)
            .collect()
    }
}

/// Generates the benchmark under `dir`, trains with `run` and samples every
/// held-out spot.
pub fn run(dir: &Path, seed: u64, mut run: RunConfig) -> Result<Outcome> {
    let spec = benchmark_spec(seed);
    let spec_path = dir.join("spec.json");
    std::fs::create_dir_all(dir).map_err(|e| stem::Error::Config(e.to_string()))?;
    std::fs::write(&spec_path, serde_json::to_vec_pretty(&spec)?).map_err(|e| stem::Error::Config(e.to_string()))?;
    let data_dir = dir.join("data");
    cmd_synth(&spec_path, &data_dir, seed)?;

    run.train.seed = seed;
    run.infer.seed = seed;
    run.paths.dataset = Some(data_dir.clone());
    run.paths.out = Some(dir.join("run"));
    let start = Instant::now();
    let artifacts = cmd_train(&run)?;
    let train_time = start.elapsed();

    let dataset = prepare_dataset(&data_dir, Some(&artifacts.checkpoint.panel))?;
    let start = Instant::now();
    let draws = sample_split(&artifacts.checkpoint, &dataset, Split::Test, &run.infer)?;
    let sample_time = start.elapsed();
    Ok(Outcome {
        spec,
        dataset,
        data_dir,
        checkpoint: artifacts.checkpoint,
        losses: artifacts.losses,
        draws,
        train_time,
        sample_time,
    })
}
