//! Spot records, dataset IO, gene-panel selection, augmentation sampling and
//! the synthetic benchmark.

mod augment;
mod io;
mod record;
mod select;
mod synthetic;

pub use augment::{expand_augmented, SamplingPlan, TrainingSampler};
pub use io::{
    counts_csv, load_dataset, read_counts_csv, write_dataset, CountTable, COUNTS_FILE, DATASET_FORMAT_VERSION,
    EMBEDDINGS_FILE, EMBEDDING_MAGIC, META_FILE,
};
pub use record::{Dataset, Embedding, SpotRecord, Split, TransformTag};
pub use select::{gene_stats, log_transform, select_hmhvg, select_hvg};
pub use synthetic::{make_synthetic, oracle_cluster, oracle_conditional_stats, SyntheticData, SyntheticSpec};
