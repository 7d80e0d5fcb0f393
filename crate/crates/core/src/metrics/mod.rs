//! Clustering quality: silhouette, normalised mutual information and homogeneity, plus
//! aggregation of repeated runs.

mod information;
mod report;
mod silhouette;

pub use information::{entropy, homogeneity, mutual_information, nmi, ContingencyTable};
pub use report::{evaluate_runs, write_table, EvaluationReport, RunRecord, Scores, TABLE_HEADER};
pub use silhouette::{silhouette, Silhouette};

/// Maps labels to dense indices in order of their sorted values.
pub fn encode_labels<T: Ord + Clone>(labels: &[T]) -> Vec<usize> {
    let mut values: Vec<T> = labels.to_vec();
    values.sort();
    values.dedup();
    labels
        .iter()
        .map(|l| values.binary_search(l).expect("value present"))
        .collect()
}

/// Sum in ascending order so the result does not depend on the order terms were produced in.
pub(crate) fn ordered_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}
