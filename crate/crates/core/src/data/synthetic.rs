//! Clustered Gaussian benchmark with a closed-form conditional.
//!
//! Spot `n` of cluster `k` gets the embedding `μ_k + τ·z` and the log-space
//! profile `m_k + s_k ⊙ z'`, so `p(x | e)` is known exactly once `e` is
//! attributed to its cluster.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GenePanel, PanelKind};
use crate::numerics::RngStream;

use super::record::{Dataset, Embedding, SpotRecord, Split, TransformTag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub clusters: usize,
    pub cond_dim: usize,
    pub genes: usize,
    /// `[clusters][cond_dim]` embedding centres `μ_k`.
    pub centers: Vec<Vec<f64>>,
    /// Embedding noise scale `τ`.
    pub tau: f64,
    /// `[clusters][genes]` log-space means `m_k`.
    pub log_means: Vec<Vec<f64>>,
    /// `[clusters][genes]` log-space standard deviations `s_k`.
    pub log_stds: Vec<Vec<f64>>,
    pub spots_per_cluster: usize,
    /// Spots are dealt round-robin over this many slides.
    #[serde(default = "one")]
    pub slides: usize,
    /// The last `test_slides` slides form the held-out split.
    #[serde(default)]
    pub test_slides: usize,
}

fn one() -> usize {
    1
}

impl SyntheticSpec {
    /// Random centres and gene parameters: centres are `N(0, separation²)`
    /// per coordinate, log-means `base + N(0, spread²)`, log-stds uniform in
    /// `[s_lo, s_hi]`.
    #[allow(clippy::too_many_arguments)]
    pub fn random(
        clusters: usize,
        cond_dim: usize,
        genes: usize,
        spots_per_cluster: usize,
        separation: f64,
        tau: f64,
        base: f64,
        spread: f64,
        (s_lo, s_hi): (f64, f64),
        rng: &mut RngStream,
    ) -> SyntheticSpec {
        let centers = (0..clusters)
            .map(|_| (0..cond_dim).map(|_| separation * rng.normal()).collect())
            .collect();
        let log_means = (0..clusters)
            .map(|_| (0..genes).map(|_| base + spread * rng.normal()).collect())
            .collect();
        let log_stds = (0..clusters)
            .map(|_| (0..genes).map(|_| s_lo + (s_hi - s_lo) * rng.uniform()).collect())
            .collect();
        SyntheticSpec {
            clusters,
            cond_dim,
            genes,
            centers,
            tau,
            log_means,
            log_stds,
            spots_per_cluster,
            slides: 1,
            test_slides: 0,
        }
    }

    /// Root-mean-square distance per coordinate.
    fn rms(&self, a: &[f64], b: &[f64]) -> f64 {
        let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        (ss / self.cond_dim as f64).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if self.clusters == 0 || self.cond_dim == 0 || self.genes == 0 || self.spots_per_cluster == 0 {
            return bad("clusters, cond_dim, genes and spots_per_cluster must be positive".into());
        }
        if self.centers.len() != self.clusters || self.centers.iter().any(|c| c.len() != self.cond_dim) {
            return bad(format!("centers must be {} x {}", self.clusters, self.cond_dim));
        }
        for (what, m) in [("log_means", &self.log_means), ("log_stds", &self.log_stds)] {
            if m.len() != self.clusters || m.iter().any(|r| r.len() != self.genes) {
                return bad(format!("{what} must be {} x {}", self.clusters, self.genes));
            }
        }
        let finite = |v: &Vec<Vec<f64>>| v.iter().flatten().all(|x| x.is_finite());
        if !finite(&self.centers) || !finite(&self.log_means) || !finite(&self.log_stds) {
            return bad("spec contains non-finite values".into());
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return bad(format!("tau = {} must be a nonnegative number", self.tau));
        }
        if self.log_stds.iter().flatten().any(|&s| s < 0.0) {
            return bad("log_stds must be nonnegative".into());
        }
        for i in 0..self.clusters {
            for j in i + 1..self.clusters {
                let d = self.rms(&self.centers[i], &self.centers[j]);
                if d <= 4.0 * self.tau || d == 0.0 {
                    return bad(format!(
                        "centres {i} and {j} are {d} apart (RMS), need more than 4·tau = {}",
                        4.0 * self.tau
                    ));
                }
            }
        }
        if self.slides == 0 || self.test_slides > self.slides {
            return bad(format!(
                "{} test slides out of {}",
                self.test_slides, self.slides
            ));
        }
        Ok(())
    }

    pub fn n_spots(&self) -> usize {
        self.clusters * self.spots_per_cluster
    }
}

/// A generated dataset together with each record's true cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub clusters: Vec<usize>,
}

/// Spot `n = k·spots_per_cluster + i` uses the stream `derive(n)` of
/// `RngStream::new(seed, 0)`, drawing `cond_dim` embedding normals and then
/// `genes` profile normals. It lies on slide `i mod slides`.
pub fn make_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticData> {
    spec.validate()?;
    let master = RngStream::new(seed, 0);
    let slide_name = |j: usize| format!("slide_{j:03}");
    let mut records = Vec::with_capacity(spec.n_spots());
    let mut clusters = Vec::with_capacity(spec.n_spots());
    let mut z_e = vec![0f64; spec.cond_dim];
    let mut z_x = vec![0f64; spec.genes];
    for k in 0..spec.clusters {
        for i in 0..spec.spots_per_cluster {
            let n = k * spec.spots_per_cluster + i;
            let mut rng = master.derive(n as u64);
            rng.fill_normal(&mut z_e);
            rng.fill_normal(&mut z_x);
            let e = spec.centers[k]
                .iter()
                .zip(&z_e)
                .map(|(mu, z)| (mu + spec.tau * z) as f32)
                .collect();
            let x = spec.log_means[k]
                .iter()
                .zip(&spec.log_stds[k])
                .zip(&z_x)
                .map(|((m, s), z)| m + s * z)
                .collect();
            records.push(SpotRecord {
                spot_id: format!("spot_{n:06}"),
                slide_id: slide_name(i % spec.slides),
                xy: None,
                counts: x,
                embeddings: vec![Embedding {
                    tag: TransformTag::Identity,
                    values: e,
                }],
                patch_size_px: None,
            });
            clusters.push(k);
        }
    }
    let splits: BTreeMap<String, Split> = (0..spec.slides)
        .map(|j| {
            let split = if j >= spec.slides - spec.test_slides {
                Split::Test
            } else {
                Split::Train
            };
            (slide_name(j), split)
        })
        .collect();
    let panel = GenePanel::new((0..spec.genes).map(|g| format!("gene_{g:03}")).collect(), PanelKind::Custom)?;
    let dataset = Dataset::new(records, panel, spec.cond_dim, true, splits)?;
    Ok(SyntheticData { dataset, clusters })
}

/// The cluster whose centre lies within `4τ` (RMS per coordinate) of `e`.
pub fn oracle_cluster(spec: &SyntheticSpec, e: &[f64]) -> Result<usize> {
    if e.len() != spec.cond_dim {
        return Err(Error::Condition(format!(
            "embedding of length {}, expected {}",
            e.len(),
            spec.cond_dim
        )));
    }
    let radius = 4.0 * spec.tau;
    let near: Vec<usize> = (0..spec.clusters)
        .filter(|&k| spec.rms(e, &spec.centers[k]) <= radius)
        .collect();
    match near.as_slice() {
        [k] => Ok(*k),
        [] => Err(Error::Oracle(format!("no centre within {radius} of the embedding"))),
        many => Err(Error::Oracle(format!("embedding is within {radius} of centres {many:?}"))),
    }
}

/// `(m_k, s_k²)` of the cluster `e` belongs to.
pub fn oracle_conditional_stats(spec: &SyntheticSpec, e: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = oracle_cluster(spec, e)?;
    Ok((
        spec.log_means[k].clone(),
        spec.log_stds[k].iter().map(|s| s * s).collect(),
    ))
}
