use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the draws of one spot collapse into a point prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    #[default]
    Mean,
    Median,
    Mode,
}

impl FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Statistic::Mean),
            "median" => Ok(Statistic::Median),
            "mode" => Ok(Statistic::Mode),
            other => Err(Error::Parameter(format!("unknown statistic {other:?}"))),
        }
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Statistic::Mean => "mean",
            Statistic::Median => "median",
            Statistic::Mode => "mode",
        })
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Centre of the fullest bin of a histogram whose bins are centred on
/// `min + j·w`, with the Freedman–Diaconis width `w = 2·IQR·n^(−1/3)`
/// (`range/√n` when the IQR is zero). Ties go to the lowest bin. A bin wider
/// than the data can centre past the largest draw, so the result is clamped.
fn histogram_mode(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    let (min, max) = (sorted[0], sorted[n - 1]);
    if max == min {
        return min;
    }
    let iqr = quantile(sorted, 0.75) - quantile(sorted, 0.25);
    let width = if iqr > 0.0 {
        2.0 * iqr / (n as f64).cbrt()
    } else {
        (max - min) / (n as f64).sqrt()
    };
    let bins = ((max - min) / width + 0.5).floor() as usize + 1;
    let mut counts = vec![0usize; bins];
    for &v in sorted {
        let j = (((v - min) / width + 0.5).floor() as usize).min(bins - 1);
        counts[j] += 1;
    }
    let best = counts
        .iter()
        .enumerate()
        .fold(0, |best, (j, &c)| if c > counts[best] { j } else { best });
    (min + best as f64 * width).min(max)
}

/// Per-gene statistic of a row-major `[n, genes]` block of draws.
pub fn summarize_samples(samples: &[f64], genes: usize, stat: Statistic) -> Result<Vec<f64>> {
    if genes == 0 || !samples.len().is_multiple_of(genes) {
        return Err(Error::Dimension(format!(
            "{} draws do not divide into {genes} genes",
            samples.len()
        )));
    }
    let n = samples.len() / genes;
    if n == 0 {
        return Err(Error::Parameter("no samples to summarise".into()));
    }
    let mut col = Vec::with_capacity(n);
    Ok((0..genes)
        .map(|g| {
            col.clear();
            col.extend(samples.iter().skip(g).step_by(genes).copied());
            match stat {
                Statistic::Mean => col.iter().sum::<f64>() / n as f64,
                Statistic::Median => {
                    col.sort_by(f64::total_cmp);
                    quantile(&col, 0.5)
                }
                Statistic::Mode => {
                    col.sort_by(f64::total_cmp);
                    histogram_mode(&col)
                }
            }
        })
        .collect())
}
