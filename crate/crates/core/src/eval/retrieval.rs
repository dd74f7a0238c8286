use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    #[default]
    Euclidean,
    /// `1 − cos(a, b)`; a zero vector is at distance 1 from everything.
    Cosine,
}

impl FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Distance::Euclidean),
            "cosine" => Ok(Distance::Cosine),
            other => Err(Error::Parameter(format!("unknown distance {other:?}"))),
        }
    }
}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Distance::Euclidean => "euclidean",
            Distance::Cosine => "cosine",
        })
    }
}

impl Distance {
    pub fn between(self, a: &[f32], b: &[f32]) -> f64 {
        match self {
            Distance::Euclidean => a
                .iter()
                .zip(b)
                .map(|(&x, &y)| {
                    let d = x as f64 - y as f64;
                    d * d
                })
                .sum::<f64>()
                .sqrt(),
            Distance::Cosine => {
                let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
                for (&x, &y) in a.iter().zip(b) {
                    let (x, y) = (x as f64, y as f64);
                    ab += x * y;
                    aa += x * x;
                    bb += y * y;
                }
                if aa == 0.0 || bb == 0.0 {
                    1.0
                } else {
                    1.0 - ab / (aa.sqrt() * bb.sqrt())
                }
            }
        }
    }
}

/// Reference spots a query is matched against.
pub struct RetrievalIndex<'a> {
    pub ids: Vec<&'a str>,
    pub keys: Vec<&'a [f32]>,
    /// Log-space profiles, one per key.
    pub profiles: Vec<&'a [f64]>,
}

/// For each query, the unweighted mean profile of its `k` nearest reference
/// spots; equal distances are broken by ascending spot id.
pub fn retrieval_baseline(
    index: &RetrievalIndex<'_>,
    queries: &[&[f32]],
    k: usize,
    distance: Distance,
) -> Result<Vec<Vec<f64>>> {
    let n = index.keys.len();
    if n == 0 {
        return Err(Error::Parameter("retrieval needs at least one training spot".into()));
    }
    if index.ids.len() != n || index.profiles.len() != n {
        return Err(Error::Dimension("ids, keys and profiles differ in length".into()));
    }
    if k == 0 || k > n {
        return Err(Error::Parameter(format!("k = {k} with {n} training spots")));
    }
    let dim = index.keys[0].len();
    let genes = index.profiles[0].len();
    if index.keys.iter().any(|e| e.len() != dim) || index.profiles.iter().any(|p| p.len() != genes) {
        return Err(Error::Dimension("ragged retrieval index".into()));
    }
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(n);
    queries
        .iter()
        .map(|q| {
            if q.len() != dim {
                return Err(Error::Condition(format!(
                    "query embedding of length {}, index has {dim}",
                    q.len()
                )));
            }
            scored.clear();
            scored.extend(index.keys.iter().enumerate().map(|(i, e)| (distance.between(q, e), i)));
            scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| index.ids[a.1].cmp(index.ids[b.1])));
            let mut mean = vec![0.0; genes];
            for &(_, i) in &scored[..k] {
                for (m, v) in mean.iter_mut().zip(index.profiles[i]) {
                    *m += v;
                }
            }
            for m in &mut mean {
                *m /= k as f64;
            }
            Ok(mean)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_match_with_k1_copies_profile() {
        let keys = [vec![0.0f32, 0.0], vec![1.0, 1.0], vec![5.0, 5.0]];
        let profiles = [vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
        let index = RetrievalIndex {
            ids: vec!["a", "b", "c"],
            keys: keys.iter().map(Vec::as_slice).collect(),
            profiles: profiles.iter().map(Vec::as_slice).collect(),
        };
        let out = retrieval_baseline(&index, &[&keys[1]], 1, Distance::Euclidean).unwrap();
        assert_eq!(out[0], profiles[1]);
        let all = retrieval_baseline(&index, &[&[9.0, -9.0]], 3, Distance::Euclidean).unwrap();
        assert_eq!(all[0], vec![3.0, 4.0]);
    }

    #[test]
    fn line_of_three() {
        let keys = [vec![0.0f32], vec![1.0], vec![10.0]];
        let profiles = [vec![0.0], vec![2.0], vec![100.0]];
        let index = RetrievalIndex {
            ids: vec!["x", "y", "z"],
            keys: keys.iter().map(Vec::as_slice).collect(),
            profiles: profiles.iter().map(Vec::as_slice).collect(),
        };
        let out = retrieval_baseline(&index, &[&[0.6]], 2, Distance::Euclidean).unwrap();
        assert_eq!(out[0], vec![1.0]);
    }

    #[test]
    fn ties_break_by_spot_id() {
        let keys = [vec![1.0f32], vec![-1.0]];
        let profiles = [vec![10.0], vec![20.0]];
        let index = RetrievalIndex {
            ids: vec!["b", "a"],
            keys: keys.iter().map(Vec::as_slice).collect(),
            profiles: profiles.iter().map(Vec::as_slice).collect(),
        };
        let out = retrieval_baseline(&index, &[&[0.0]], 1, Distance::Euclidean).unwrap();
        assert_eq!(out[0], vec![20.0]);
    }

    #[test]
    fn cosine_ignores_scale() {
        let d = Distance::Cosine;
        assert!(d.between(&[1.0, 2.0], &[2.0, 4.0]).abs() < 1e-12);
        assert!((d.between(&[1.0, 0.0], &[0.0, 3.0]) - 1.0).abs() < 1e-12);
        assert_eq!(d.between(&[0.0, 0.0], &[1.0, 0.0]), 1.0);
    }

    #[test]
    fn errors() {
        let index = RetrievalIndex {
            ids: vec![],
            keys: vec![],
            profiles: vec![],
        };
        assert!(matches!(
            retrieval_baseline(&index, &[], 1, Distance::Euclidean),
            Err(Error::Parameter(_))
        ));
    }
}
