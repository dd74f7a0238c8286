//! Log transform and gene-panel selection.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::model::{GenePanel, PanelKind};

/// `ln(1 + x)` elementwise.
pub fn log_transform(counts: &[f64]) -> Result<Vec<f64>> {
    counts
        .iter()
        .map(|&x| {
            if x >= 0.0 && x.is_finite() {
                Ok(x.ln_1p())
            } else {
                Err(Error::Domain(format!("cannot log-transform count {x}")))
            }
        })
        .collect()
}

/// Per-gene mean and population variance over the rows of a `[spots, genes]`
/// matrix. Each column is summed in sorted order, so the result does not
/// depend on row order.
pub fn gene_stats(matrix: &[f64], genes: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if genes == 0 || matrix.is_empty() || !matrix.len().is_multiple_of(genes) {
        return Err(Error::Dimension(format!(
            "{} values do not form a matrix with {genes} columns",
            matrix.len()
        )));
    }
    let n = matrix.len() / genes;
    let mut means = Vec::with_capacity(genes);
    let mut vars = Vec::with_capacity(genes);
    let mut col = Vec::with_capacity(n);
    for g in 0..genes {
        col.clear();
        col.extend(matrix.iter().skip(g).step_by(genes).copied());
        col.sort_by(f64::total_cmp);
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        means.push(mean);
        vars.push(var);
    }
    Ok((means, vars))
}

/// Gene indices sorted by `key` descending, ties by name.
fn ranked(key: &[f64], names: &[String]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..key.len()).collect();
    idx.sort_by(|&a, &b| desc(key[a], key[b]).then_with(|| names[a].cmp(&names[b])));
    idx
}

fn desc(a: f64, b: f64) -> Ordering {
    b.total_cmp(&a)
}

fn check_k(k: usize, genes: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Selection("k must be at least 1".into()));
    }
    if k > genes {
        return Err(Error::Selection(format!(
            "cannot select {k} genes from {genes}"
        )));
    }
    Ok(())
}

/// High-mean ∩ high-variance panel.
///
/// A gene joins the intersection of the top-`N` mean and top-`N` variance
/// sets at `N = max(mean rank, variance rank)`. Genes are taken in order of
/// that entry point (higher mean first among genes entering together, then
/// name) until `k` are chosen; the panel is ordered by descending variance.
pub fn select_hmhvg(matrix: &[f64], names: &[String], k: usize) -> Result<GenePanel> {
    let genes = names.len();
    check_k(k, genes)?;
    let (means, vars) = gene_stats(matrix, genes)?;
    let mut entry = vec![0usize; genes];
    for (rank, &g) in ranked(&means, names).iter().enumerate() {
        entry[g] = rank + 1;
    }
    for (rank, &g) in ranked(&vars, names).iter().enumerate() {
        entry[g] = entry[g].max(rank + 1);
    }
    let mut order: Vec<usize> = (0..genes).collect();
    order.sort_by(|&a, &b| {
        entry[a]
            .cmp(&entry[b])
            .then_with(|| desc(means[a], means[b]))
            .then_with(|| names[a].cmp(&names[b]))
    });
    let mut chosen = order[..k].to_vec();
    chosen.sort_by(|&a, &b| desc(vars[a], vars[b]).then_with(|| names[a].cmp(&names[b])));
    GenePanel::new(chosen.iter().map(|&g| names[g].clone()).collect(), PanelKind::Hmhvg)
}

/// The `k` highest-mean genes among the `min(4k, genes)` most variable ones,
/// ordered by descending mean.
pub fn select_hvg(matrix: &[f64], names: &[String], k: usize) -> Result<GenePanel> {
    let genes = names.len();
    check_k(k, genes)?;
    let (means, vars) = gene_stats(matrix, genes)?;
    let pool = (4 * k).min(genes);
    let mut chosen = ranked(&vars, names)[..pool].to_vec();
    chosen.sort_by(|&a, &b| desc(means[a], means[b]).then_with(|| names[a].cmp(&names[b])));
    chosen.truncate(k);
    GenePanel::new(chosen.iter().map(|&g| names[g].clone()).collect(), PanelKind::Hvg)
}
