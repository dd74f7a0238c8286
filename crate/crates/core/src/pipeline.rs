//! The steps behind each `stem` subcommand. Every step validates its inputs
//! before creating outputs, and every output file is written atomically.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{InferSection, RunConfig};
use crate::data::{
    counts_csv, load_dataset, make_synthetic, read_counts_csv, select_hmhvg, select_hvg, write_dataset, CountTable,
    Dataset, SpotRecord, Split, SyntheticData, SyntheticSpec, TrainingSampler,
};
use crate::diffusion::{sample_spots, train, SamplerOptions, STREAM_SAMPLE};
use crate::error::{Error, Result};
use crate::eval::{evaluate, retrieval_baseline, summarize_samples, variation_curve, Distance, EvalReport, RetrievalIndex, Statistic};
use crate::fsutil;
use crate::model::{GenePanel, PanelKind};
use crate::numerics::RngStream;

pub const ORACLE_FILE: &str = "oracle.json";
pub const PANEL_FILE: &str = "panel.json";
pub const CHECKPOINT_FILE: &str = "ckpt.bin";
pub const TRAIN_LOG_FILE: &str = "train.log";
pub const PRED_FILE: &str = "pred.csv";
pub const SAMPLES_FILE: &str = "samples.bin";
pub const REPORT_FILE: &str = "report.json";
pub const CURVE_FILE: &str = "variation_curve.csv";
pub const SAMPLES_MAGIC: &[u8; 8] = b"STEMSMP1";

/// Ground-truth parameters written next to a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleFile {
    pub seed: u64,
    pub spec: SyntheticSpec,
    /// True cluster of every spot.
    pub clusters: BTreeMap<String, usize>,
}

pub fn cmd_synth(spec_file: &Path, out_dir: &Path, seed: u64) -> Result<SyntheticData> {
    let spec: SyntheticSpec = serde_json::from_str(&fsutil::read_string(spec_file)?)
        .map_err(|e| Error::format(spec_file, e.to_string()))?;
    spec.validate().map_err(|e| Error::format(spec_file, e.to_string()))?;
    let data = make_synthetic(&spec, seed)?;
    let oracle = OracleFile {
        seed,
        spec,
        clusters: data
            .dataset
            .records()
            .iter()
            .zip(&data.clusters)
            .map(|(r, &k)| (r.spot_id.clone(), k))
            .collect(),
    };
    write_dataset(out_dir, &data.dataset)?;
    fsutil::write_atomic(&out_dir.join(ORACLE_FILE), &pretty_json(&oracle)?)?;
    Ok(data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectMethod {
    Hmhvg,
    Hvg,
}

impl FromStr for SelectMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hmhvg" => Ok(SelectMethod::Hmhvg),
            "hvg" => Ok(SelectMethod::Hvg),
            other => Err(Error::Selection(format!("unknown method {other:?} (hmhvg or hvg)"))),
        }
    }
}

impl fmt::Display for SelectMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectMethod::Hmhvg => "hmhvg",
            SelectMethod::Hvg => "hvg",
        })
    }
}

/// `panel.json`: the ordered gene names and how they were chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelFile {
    pub genes: Vec<String>,
    pub method: PanelKind,
    pub k: usize,
}

impl PanelFile {
    pub fn read(path: &Path) -> Result<GenePanel> {
        let file: PanelFile = serde_json::from_str(&fsutil::read_string(path)?)
            .map_err(|e| Error::format(path, e.to_string()))?;
        if file.k != file.genes.len() {
            return Err(Error::format(path, format!("k = {} but {} genes listed", file.k, file.genes.len())));
        }
        GenePanel::new(file.genes, file.method).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Selects `k` genes from the log-space training spots.
pub fn cmd_gene_select(dataset_dir: &Path, method: SelectMethod, k: usize, out_dir: &Path) -> Result<GenePanel> {
    let ds = load_dataset(dataset_dir)?.to_log_space()?;
    let train = ds.indices(Split::Train);
    if train.is_empty() {
        return Err(Error::Selection("dataset has no training spots".into()));
    }
    let matrix = ds.count_matrix(&train);
    let names = ds.panel().genes();
    let panel = match method {
        SelectMethod::Hmhvg => select_hmhvg(&matrix, names, k)?,
        SelectMethod::Hvg => select_hvg(&matrix, names, k)?,
    };
    let file = PanelFile {
        genes: panel.genes().to_vec(),
        method: panel.kind(),
        k,
    };
    fsutil::create_dir(out_dir)?;
    fsutil::write_atomic(&out_dir.join(PANEL_FILE), &pretty_json(&file)?)?;
    Ok(panel)
}

/// Loads a dataset in log space, restricted to `panel` when given.
pub fn prepare_dataset(dataset_dir: &Path, panel: Option<&GenePanel>) -> Result<Dataset> {
    let ds = load_dataset(dataset_dir)?.to_log_space()?;
    match panel {
        Some(p) => ds.project(p),
        None => Ok(ds),
    }
}

pub struct TrainArtifacts {
    pub checkpoint: Checkpoint<f32>,
    /// Loss of every step.
    pub losses: Vec<f64>,
}

fn required<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::Config(format!("{key} is not set")))
}

/// Trains on the training slides of `paths.dataset` and writes `ckpt.bin`
/// and `train.log` into `paths.out`.
pub fn cmd_train(run: &RunConfig) -> Result<TrainArtifacts> {
    run.validate()?;
    let dataset_dir = required(&run.paths.dataset, "paths.dataset")?;
    let out_dir = required(&run.paths.out, "paths.out")?;
    let panel = run.paths.panel.as_deref().map(PanelFile::read).transpose()?;
    let ds = prepare_dataset(dataset_dir, panel.as_ref())?;
    let model = run.model.resolve(ds.panel().len(), ds.cond_dim());
    model.validate().map_err(|e| Error::Config(e.to_string()))?;
    let schedule = run.schedule.build()?;
    let sampler = TrainingSampler::new(&ds, run.train.ratio_original, run.train.ratio_augmented)?;

    fsutil::create_dir(out_dir)?;
    let log_path = out_dir.join(TRAIN_LOG_FILE);
    let log_tmp = fsutil::temp_name(&log_path);
    let mut log_file = fs::File::create(&log_tmp).map_err(|e| Error::io(&log_tmp, e))?;
    let outcome = train(&sampler, &model, &run.train, schedule, |rec| {
        log::info!("step {} loss {:.5} ({} ms)", rec.step, rec.loss, rec.wallclock_ms);
        writeln!(log_file, "{}", rec.line()).map_err(|e| Error::io(&log_tmp, e))
    });
    // On failure the partial log stays under its temp name for inspection.
    let outcome = outcome?;
    log_file.sync_all().map_err(|e| Error::io(&log_tmp, e))?;
    drop(log_file);

    // File locations are not part of what a checkpoint describes, so the same
    // data and seed give the same bytes wherever they live.
    let mut stored = run.clone();
    stored.paths = Default::default();
    let checkpoint = Checkpoint {
        run: stored,
        panel: ds.panel().clone(),
        step: outcome.state.step,
        seed: run.train.seed,
        params: outcome.state.params,
        ema_params: outcome.state.ema_params,
    };
    checkpoint.save(&out_dir.join(CHECKPOINT_FILE))?;
    fs::rename(&log_tmp, &log_path).map_err(|e| Error::io(&log_path, e))?;
    Ok(TrainArtifacts {
        checkpoint,
        losses: outcome.losses,
    })
}

/// Raw draws for every spot of one split.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub genes: Vec<String>,
    pub spot_ids: Vec<String>,
    pub slide_ids: Vec<String>,
    pub n: usize,
    /// Per spot, row-major `[n, genes]`.
    pub draws: Vec<Vec<f32>>,
}

impl SampleSet {
    /// Collapses each spot's draws into a prediction row.
    pub fn summarize(&self, stat: Statistic) -> Result<CountTable> {
        let genes = self.genes.len();
        let mut values = Vec::with_capacity(self.draws.len() * genes);
        for d in &self.draws {
            let wide: Vec<f64> = d.iter().map(|&v| v as f64).collect();
            values.extend(summarize_samples(&wide, genes, stat)?);
        }
        Ok(CountTable {
            genes: self.genes.clone(),
            spot_ids: self.spot_ids.clone(),
            slide_ids: self.slide_ids.clone(),
            values,
        })
    }

    /// `STEMSMP1`, u32 spots, u32 n, u32 genes, then per spot a u16-prefixed
    /// spot id followed by `n·genes` little-endian f32 draws.
    pub fn to_bytes(&self) -> Vec<u8> {
        let genes = self.genes.len();
        let mut out = Vec::with_capacity(20 + self.draws.len() * (16 + 4 * self.n * genes));
        out.extend_from_slice(SAMPLES_MAGIC);
        for v in [self.spot_ids.len(), self.n, genes] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for (id, d) in self.spot_ids.iter().zip(&self.draws) {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for v in d {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}

/// Draws `infer.n_samples` chains per spot of `split`, each conditioned on
/// the spot's identity embedding.
pub fn sample_split(ck: &Checkpoint<f32>, ds: &Dataset, split: Split, infer: &InferSection) -> Result<SampleSet> {
    if infer.n_samples == 0 || infer.chunk == 0 {
        return Err(Error::Config("n_samples and chunk must be at least 1".into()));
    }
    if ds.panel().genes() != ck.panel.genes() {
        return Err(Error::Panel("dataset columns differ from the checkpoint panel".into()));
    }
    if ds.cond_dim() != ck.model().cond_dim {
        return Err(Error::Panel(format!(
            "dataset embeddings have length {}, the model expects {}",
            ds.cond_dim(),
            ck.model().cond_dim
        )));
    }
    let spots = ds.indices(split);
    if spots.is_empty() {
        return Err(Error::Parameter(format!("no spots in the {split} split")));
    }
    let records: Vec<_> = spots.iter().map(|&i| &ds.records()[i]).collect();
    let conds: Vec<Vec<f32>> = records
        .iter()
        .map(|r| r.identity().expect("validated dataset").to_vec())
        .collect();
    let params = if infer.use_ema { &ck.ema_params } else { &ck.params };
    let schedule = ck.run.schedule.build()?;
    let rng = RngStream::new(infer.seed, 0).derive(STREAM_SAMPLE);
    let options = SamplerOptions {
        noise_scale: 1.0,
        chunk: infer.chunk,
    };
    let draws = sample_spots(params, &conds, infer.n_samples, &schedule, &rng, options)?;
    if draws.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("sampler produced non-finite values".into()));
    }
    Ok(SampleSet {
        genes: ck.panel.genes().to_vec(),
        spot_ids: records.iter().map(|r| r.spot_id.clone()).collect(),
        slide_ids: records.iter().map(|r| r.slide_id.clone()).collect(),
        n: infer.n_samples,
        draws,
    })
}

pub fn prediction_csv(table: &CountTable) -> Result<Vec<u8>> {
    counts_csv(
        &table.genes,
        (0..table.spot_ids.len()).map(|i| (table.spot_ids[i].as_str(), table.slide_ids[i].as_str(), table.row(i))),
    )
}

/// Samples every spot of `split` and writes `pred.csv`, plus `samples.bin`
/// when `keep_draws` is set.
pub fn cmd_sample(
    ck: &Checkpoint<f32>,
    dataset_dir: &Path,
    split: Split,
    infer: &InferSection,
    out_dir: &Path,
    keep_draws: bool,
) -> Result<CountTable> {
    let ds = prepare_dataset(dataset_dir, Some(&ck.panel))?;
    let set = sample_split(ck, &ds, split, infer)?;
    let pred = set.summarize(infer.statistic)?;
    fsutil::create_dir(out_dir)?;
    fsutil::write_atomic(&out_dir.join(PRED_FILE), &prediction_csv(&pred)?)?;
    if keep_draws {
        fsutil::write_atomic(&out_dir.join(SAMPLES_FILE), &set.to_bytes())?;
    }
    Ok(pred)
}

/// Ground-truth rows of `split` in the order of `pred`, matched by spot id.
pub fn align(pred: &CountTable, ds: &Dataset, split: Split) -> Result<Vec<f64>> {
    let positions = GenePanel::new(pred.genes.clone(), PanelKind::Custom)?
        .positions_in(ds.panel().genes())
        .map_err(|e| Error::Alignment(e.to_string()))?;
    let spots = ds.indices(split);
    let lookup: HashMap<&str, usize> = spots
        .iter()
        .map(|&i| (ds.records()[i].spot_id.as_str(), i))
        .collect();
    let mut seen = HashMap::with_capacity(pred.spot_ids.len());
    let mut gt = Vec::with_capacity(pred.values.len());
    for (row, id) in pred.spot_ids.iter().enumerate() {
        let &i = lookup.get(id.as_str()).ok_or_else(|| {
            Error::Alignment(format!("spot_id {id:?} (row {}) is not in the {split} split", row + 1))
        })?;
        if seen.insert(id.as_str(), row).is_some() {
            return Err(Error::Alignment(format!("spot_id {id:?} appears twice in the predictions")));
        }
        let counts = &ds.records()[i].counts;
        gt.extend(positions.iter().map(|&p| counts[p]));
    }
    if let Some(&i) = spots.iter().find(|&&i| !seen.contains_key(ds.records()[i].spot_id.as_str())) {
        return Err(Error::Alignment(format!(
            "spot_id {:?} of the {split} split has no prediction",
            ds.records()[i].spot_id
        )));
    }
    Ok(gt)
}

/// Scores `pred.csv` against the log-space ground truth of `split` and writes
/// `report.json` and `variation_curve.csv`.
pub fn cmd_eval(pred_csv: &Path, dataset_dir: &Path, split: Split, k_list: &[usize], out_dir: &Path) -> Result<EvalReport> {
    let pred = read_counts_csv(pred_csv)?;
    if pred.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::format(pred_csv, "predictions contain non-finite values"));
    }
    let ds = prepare_dataset(dataset_dir, None)?;
    let gt = align(&pred, &ds, split)?;
    let report = evaluate(&pred.values, &gt, &pred.genes, k_list)?;
    let curve = variation_curve(&pred.values, &gt, &pred.genes)?;
    fsutil::create_dir(out_dir)?;
    fsutil::write_atomic(&out_dir.join(REPORT_FILE), report.to_json()?.as_bytes())?;
    fsutil::write_atomic(&out_dir.join(CURVE_FILE), curve.to_csv().as_bytes())?;
    Ok(report)
}

/// Nearest-neighbour predictions for the test split from the training split,
/// in `pred.csv` layout.
pub fn baseline_predictions(ds: &Dataset, k: usize, distance: Distance) -> Result<CountTable> {
    let train: Vec<_> = ds.indices(Split::Train).iter().map(|&i| &ds.records()[i]).collect();
    let test: Vec<_> = ds.indices(Split::Test).iter().map(|&i| &ds.records()[i]).collect();
    if test.is_empty() {
        return Err(Error::Parameter("dataset has no test spots".into()));
    }
    let index = RetrievalIndex {
        ids: train.iter().map(|r| r.spot_id.as_str()).collect(),
        keys: train.iter().map(|r| identity(r)).collect(),
        profiles: train.iter().map(|r| r.counts.as_slice()).collect(),
    };
    let queries: Vec<&[f32]> = test.iter().map(|r| identity(r)).collect();
    let rows = retrieval_baseline(&index, &queries, k, distance)?;
    Ok(CountTable {
        genes: ds.panel().genes().to_vec(),
        spot_ids: test.iter().map(|r| r.spot_id.clone()).collect(),
        slide_ids: test.iter().map(|r| r.slide_id.clone()).collect(),
        values: rows.concat(),
    })
}

pub fn cmd_baseline(
    dataset_dir: &Path,
    panel: Option<&GenePanel>,
    k: usize,
    distance: Distance,
    out_dir: &Path,
) -> Result<CountTable> {
    let ds = prepare_dataset(dataset_dir, panel)?;
    let pred = baseline_predictions(&ds, k, distance)?;
    fsutil::create_dir(out_dir)?;
    fsutil::write_atomic(&out_dir.join(PRED_FILE), &prediction_csv(&pred)?)?;
    Ok(pred)
}

fn identity(r: &SpotRecord) -> &[f32] {
    r.identity().expect("validated dataset")
}

fn pretty_json<S: Serialize>(value: &S) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}
