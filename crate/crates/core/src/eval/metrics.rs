use std::fmt::Write as _;

use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;

use crate::error::{Error, Result};

fn check_shapes(pred: &[f64], gt: &[f64], genes: usize) -> Result<usize> {
    if genes == 0 || pred.len() != gt.len() || !gt.len().is_multiple_of(genes) {
        return Err(Error::Dimension(format!(
            "prediction has {} values, ground truth {} ({genes} genes per spot)",
            pred.len(),
            gt.len()
        )));
    }
    Ok(gt.len() / genes)
}

fn column(m: &[f64], genes: usize, g: usize) -> impl Iterator<Item = f64> + '_ {
    m.iter().skip(g).step_by(genes).copied()
}

/// Population mean and variance of each column.
pub fn column_moments(m: &[f64], genes: usize) -> (Vec<f64>, Vec<f64>) {
    let n = (m.len() / genes) as f64;
    (0..genes)
        .map(|g| {
            let mean = column(m, genes, g).sum::<f64>() / n;
            let var = column(m, genes, g).map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            (mean, var)
        })
        .unzip()
}

/// Pearson correlation of every gene column across spots. `None` marks a
/// column that is constant in either input.
pub fn pcc_per_gene(pred: &[f64], gt: &[f64], genes: usize) -> Result<Vec<Option<f64>>> {
    let n = check_shapes(pred, gt, genes)?;
    if n < 2 {
        return Err(Error::Metric(format!("correlation needs at least 2 spots, got {n}")));
    }
    let (mp, _) = column_moments(pred, genes);
    let (mg, _) = column_moments(gt, genes);
    Ok((0..genes)
        .map(|g| {
            let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
            for (x, y) in column(pred, genes, g).zip(column(gt, genes, g)) {
                let (dx, dy) = (x - mp[g], y - mg[g]);
                sxy += dx * dy;
                sxx += dx * dx;
                syy += dy * dy;
            }
            if sxx == 0.0 || syy == 0.0 {
                None
            } else {
                Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
            }
        })
        .collect())
}

/// Mean of the `k` largest defined correlations.
pub fn pcc_top_k(per_gene: &[Option<f64>], k: usize) -> Result<f64> {
    let mut defined: Vec<f64> = per_gene.iter().flatten().copied().collect();
    if k == 0 || k > defined.len() {
        return Err(Error::Parameter(format!(
            "PCC-{k} needs {k} defined genes, have {}",
            defined.len()
        )));
    }
    defined.sort_by(|a, b| b.total_cmp(a));
    Ok(defined[..k].iter().sum::<f64>() / k as f64)
}

pub fn mae_mse(pred: &[f64], gt: &[f64]) -> Result<(f64, f64)> {
    if pred.len() != gt.len() || gt.is_empty() {
        return Err(Error::Dimension(format!(
            "prediction has {} values, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    let n = gt.len() as f64;
    let (abs, sq) = pred.iter().zip(gt).fold((0.0, 0.0), |(a, s), (p, g)| {
        let d = p - g;
        (a + d.abs(), s + d * d)
    });
    Ok((abs / n, sq / n))
}

/// `(1/C') Σ (σ²_pred − σ²_gt)² / (σ²_gt)²` over the `C'` genes whose
/// ground-truth variance is positive.
pub fn rvd(pred: &[f64], gt: &[f64], genes: usize) -> Result<f64> {
    check_shapes(pred, gt, genes)?;
    let (_, vp) = column_moments(pred, genes);
    let (_, vg) = column_moments(gt, genes);
    let mut total = 0.0;
    let mut used = 0usize;
    for (p, g) in vp.iter().zip(&vg) {
        if *g > 0.0 {
            total += (p - g) * (p - g) / (g * g);
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::Metric("every ground-truth gene variance is zero".into()));
    }
    if used < genes {
        log::warn!("RVD skips {} genes with zero ground-truth variance", genes - used);
    }
    Ok(total / used as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub gene: String,
    pub gt_var: f64,
    pub pred_var: f64,
    pub gt_var_norm: f64,
    pub pred_var_norm: f64,
}

/// Genes in ascending order of ground-truth variance.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationCurve {
    pub rows: Vec<CurveRow>,
}

pub const CURVE_HEADER: &str = "gene,gt_var,pred_var,gt_var_norm,pred_var_norm";

impl VariationCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CURVE_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.gene, r.gt_var, r.pred_var, r.gt_var_norm, r.pred_var_norm
            );
        }
        out
    }
}

/// Per-gene variances, absolute and normalised by their column sums. An
/// all-zero prediction column normalises to zeros.
pub fn variation_curve(pred: &[f64], gt: &[f64], names: &[String]) -> Result<VariationCurve> {
    let genes = names.len();
    check_shapes(pred, gt, genes)?;
    let (_, vp) = column_moments(pred, genes);
    let (_, vg) = column_moments(gt, genes);
    let sum_g: f64 = vg.iter().sum();
    let sum_p: f64 = vp.iter().sum();
    if sum_g <= 0.0 {
        return Err(Error::Metric("every ground-truth gene variance is zero".into()));
    }
    let mut order: Vec<usize> = (0..genes).collect();
    order.sort_by(|&a, &b| vg[a].total_cmp(&vg[b]));
    let rows = order
        .into_iter()
        .map(|g| CurveRow {
            gene: names[g].clone(),
            gt_var: vg[g],
            pred_var: vp[g],
            gt_var_norm: vg[g] / sum_g,
            pred_var_norm: if sum_p > 0.0 { vp[g] / sum_p } else { 0.0 },
        })
        .collect();
    Ok(VariationCurve { rows })
}

/// `PCC-k` values keyed by `k`, serialised in the order given.
#[derive(Clone, Debug, PartialEq)]
pub struct PccTop(pub Vec<(usize, Option<f64>)>);

impl Serialize for PccTop {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            m.serialize_entry(&k.to_string(), v)?;
        }
        m.end()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub pcc_top: PccTop,
    pub mae: f64,
    pub mse: f64,
    pub rvd: f64,
    pub n_spots: usize,
    pub n_genes: usize,
    pub undefined_genes: Vec<String>,
    pub panel: Vec<String>,
    pub per_gene_pcc: Vec<Option<f64>>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// All metrics for row-major `[spots, genes]` predictions against ground
/// truth. `PCC-k` is `null` when fewer than `k` genes have a defined
/// correlation.
pub fn evaluate(pred: &[f64], gt: &[f64], names: &[String], k_list: &[usize]) -> Result<EvalReport> {
    let genes = names.len();
    let n_spots = check_shapes(pred, gt, genes)?;
    let per_gene = pcc_per_gene(pred, gt, genes)?;
    let pcc_top = k_list
        .iter()
        .map(|&k| (k, pcc_top_k(&per_gene, k).ok()))
        .collect();
    let (mae, mse) = mae_mse(pred, gt)?;
    Ok(EvalReport {
        pcc_top: PccTop(pcc_top),
        mae,
        mse,
        rvd: rvd(pred, gt, genes)?,
        n_spots,
        n_genes: genes,
        undefined_genes: names
            .iter()
            .zip(&per_gene)
            .filter(|(_, p)| p.is_none())
            .map(|(n, _)| n.clone())
            .collect(),
        panel: names.to_vec(),
        per_gene_pcc: per_gene,
    })
}
