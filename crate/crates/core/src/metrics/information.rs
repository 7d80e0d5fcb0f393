use super::{encode_labels, ordered_sum};
use crate::error::{Error, Result};

/// Counts `a_ck` of instances with class `c` in cluster `k`, over dense indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    /// `classes × clusters`, row-major.
    pub counts: Vec<usize>,
    pub classes: usize,
    pub clusters: usize,
    pub class_totals: Vec<usize>,
    pub cluster_totals: Vec<usize>,
    pub total: usize,
}

impl ContingencyTable {
    pub fn new(labels: &[usize], clusters: &[usize]) -> Result<Self> {
        if labels.len() != clusters.len() {
            return Err(Error::InvalidInput(format!(
                "label and cluster vectors differ in length: {} vs {}",
                labels.len(),
                clusters.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::InvalidInput("cannot score an empty partition".into()));
        }
        let y = encode_labels(labels);
        let c = encode_labels(clusters);
        let n_classes = y.iter().max().map_or(0, |m| m + 1);
        let n_clusters = c.iter().max().map_or(0, |m| m + 1);
        let mut counts = vec![0; n_classes * n_clusters];
        let mut class_totals = vec![0; n_classes];
        let mut cluster_totals = vec![0; n_clusters];
        for (&a, &b) in y.iter().zip(&c) {
            counts[a * n_clusters + b] += 1;
            class_totals[a] += 1;
            cluster_totals[b] += 1;
        }
        Ok(Self {
            counts,
            classes: n_classes,
            clusters: n_clusters,
            class_totals,
            cluster_totals,
            total: labels.len(),
        })
    }

    pub fn get(&self, class: usize, cluster: usize) -> usize {
        self.counts[class * self.clusters + cluster]
    }

    fn cells(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.classes)
            .flat_map(move |c| (0..self.clusters).map(move |k| (c, k, self.get(c, k))))
            .filter(|&(_, _, a)| a > 0)
    }
}

/// Natural-log entropy of a count vector.
pub fn entropy(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    let h = -ordered_sum(
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                p * p.ln()
            })
            .collect(),
    );
    h.max(0.0)
}

pub fn mutual_information(table: &ContingencyTable) -> f64 {
    let n = table.total as f64;
    let terms = table
        .cells()
        .map(|(c, k, a)| {
            let a = a as f64;
            let expected = table.class_totals[c] as f64 * table.cluster_totals[k] as f64;
            a / n * (a * n / expected).ln()
        })
        .collect();
    ordered_sum(terms).max(0.0)
}

/// `I(y, c) / ((H(y) + H(c)) / 2)`; 1 when both partitions are constant, 0 when exactly one is.
pub fn nmi(labels: &[usize], clusters: &[usize]) -> Result<f64> {
    let t = ContingencyTable::new(labels, clusters)?;
    let hy = entropy(&t.class_totals);
    let hc = entropy(&t.cluster_totals);
    Ok(match (t.classes == 1, t.clusters == 1) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => (mutual_information(&t) / ((hy + hc) / 2.0)).clamp(0.0, 1.0),
    })
}

/// `1 − H(C|K) / H(C)`; 1 when the labels are constant.
pub fn homogeneity(labels: &[usize], clusters: &[usize]) -> Result<f64> {
    let t = ContingencyTable::new(labels, clusters)?;
    let hc = entropy(&t.class_totals);
    if t.classes == 1 {
        return Ok(1.0);
    }
    let n = t.total as f64;
    let conditional = -ordered_sum(
        t.cells()
            .map(|(_, k, a)| {
                let a = a as f64;
                a / n * (a / t.cluster_totals[k] as f64).ln()
            })
            .collect(),
    );
    Ok((1.0 - conditional.max(0.0) / hc).clamp(0.0, 1.0))
}
