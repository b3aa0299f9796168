//! Pair examples, label schemas, dataset statistics, class weighting,
//! stratified splitting and schema remapping.

mod example;
mod schema;
mod split;
mod stats;

pub use example::{
    load_dataset, load_dataset_file, read_records, read_records_file, save_dataset_file,
    save_records_file, write_dataset, write_records, Confidence, PairExample, PairRecord,
    Relevancy, SourceKind,
};
pub use schema::{LabelSchema, Remap, NEGATIF, NETRAL, POSITIF};
pub use split::{holdout_allocation, remap, stratified_split, to_binary, Remapped};
pub use stats::{
    class_weights, compute_stats, inverse_frequency_weights, percentage_one_decimal,
    stats_from_counts, ClassCount, ClassWeights, CrossTabRow, DatasetStats,
};

/// Class counts of a labeled dataset under `schema`.
pub fn label_counts(dataset: &[PairExample], schema: &LabelSchema) -> Vec<usize> {
    let mut counts = vec![0; schema.len()];
    for example in dataset {
        if example.label < counts.len() {
            counts[example.label] += 1;
        }
    }
    counts
}
