use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GenePanel, PanelKind};

/// Which side of the holdout protocol a slide belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Parameter(format!("unknown split {other:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Dihedral view of a patch an embedding was computed from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformTag {
    Identity,
    Hflip,
    Vflip,
    Rot90,
    Rot180,
    Rot270,
    Transpose,
    Transverse,
}

impl TransformTag {
    pub const ALL: [TransformTag; 8] = [
        TransformTag::Identity,
        TransformTag::Hflip,
        TransformTag::Vflip,
        TransformTag::Rot90,
        TransformTag::Rot180,
        TransformTag::Rot270,
        TransformTag::Transpose,
        TransformTag::Transverse,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TransformTag::Identity => "identity",
            TransformTag::Hflip => "hflip",
            TransformTag::Vflip => "vflip",
            TransformTag::Rot90 => "rot90",
            TransformTag::Rot180 => "rot180",
            TransformTag::Rot270 => "rot270",
            TransformTag::Transpose => "transpose",
            TransformTag::Transverse => "transverse",
        }
    }
}

impl fmt::Display for TransformTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TransformTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TransformTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown transform tag {s:?}")))
    }
}

/// One condition embedding of a spot.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub tag: TransformTag,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpotRecord {
    pub spot_id: String,
    pub slide_id: String,
    /// Spot centre in micrometres.
    pub xy: Option<(f64, f64)>,
    /// One value per gene of the dataset panel, raw or log per the dataset flag.
    pub counts: Vec<f64>,
    pub embeddings: Vec<Embedding>,
    pub patch_size_px: Option<u32>,
}

impl SpotRecord {
    pub fn identity(&self) -> Option<&[f32]> {
        self.embeddings
            .iter()
            .find(|e| e.tag == TransformTag::Identity)
            .map(|e| e.values.as_slice())
    }
}

/// Validated collection of spots sharing one gene panel and one embedding width.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    records: Vec<SpotRecord>,
    panel: GenePanel,
    cond_dim: usize,
    log_transformed: bool,
    splits: BTreeMap<String, Split>,
}

impl Dataset {
    pub fn new(
        records: Vec<SpotRecord>,
        panel: GenePanel,
        cond_dim: usize,
        log_transformed: bool,
        splits: BTreeMap<String, Split>,
    ) -> Result<Self> {
        if cond_dim == 0 {
            return Err(Error::Condition("cond_dim must be positive".into()));
        }
        let mut ids = HashSet::with_capacity(records.len());
        for r in &records {
            if !ids.insert(r.spot_id.as_str()) {
                return Err(Error::Parameter(format!("duplicate spot id {:?}", r.spot_id)));
            }
            if r.counts.len() != panel.len() {
                return Err(Error::Panel(format!(
                    "spot {} has {} values for a panel of {} genes",
                    r.spot_id,
                    r.counts.len(),
                    panel.len()
                )));
            }
            if let Some(v) = r.counts.iter().find(|v| !v.is_finite() || (!log_transformed && **v < 0.0)) {
                return Err(Error::Domain(format!("spot {} has count {v}", r.spot_id)));
            }
            if r.identity().is_none() {
                return Err(Error::Condition(format!(
                    "spot {} has no identity embedding",
                    r.spot_id
                )));
            }
            let mut tags = HashSet::new();
            for e in &r.embeddings {
                if e.values.len() != cond_dim {
                    return Err(Error::Condition(format!(
                        "spot {} {} embedding has length {}, expected {cond_dim}",
                        r.spot_id,
                        e.tag,
                        e.values.len()
                    )));
                }
                if !tags.insert(e.tag) {
                    return Err(Error::Condition(format!(
                        "spot {} has two {} embeddings",
                        r.spot_id, e.tag
                    )));
                }
                if e.values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Condition(format!(
                        "spot {} {} embedding is not finite",
                        r.spot_id, e.tag
                    )));
                }
            }
            if !splits.contains_key(&r.slide_id) {
                return Err(Error::Parameter(format!(
                    "slide {:?} of spot {} has no split",
                    r.slide_id, r.spot_id
                )));
            }
        }
        Ok(Dataset {
            records,
            panel,
            cond_dim,
            log_transformed,
            splits,
        })
    }

    pub fn records(&self) -> &[SpotRecord] {
        &self.records
    }

    pub fn panel(&self) -> &GenePanel {
        &self.panel
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    pub fn log_transformed(&self) -> bool {
        self.log_transformed
    }

    pub fn splits(&self) -> &BTreeMap<String, Split> {
        &self.splits
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split_of(&self, record: &SpotRecord) -> Split {
        self.splits[&record.slide_id]
    }

    /// Indices of the records on slides tagged `split`, in file order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.split_of(&self.records[i]) == split)
            .collect()
    }

    /// Counts as a row-major `[spots, genes]` matrix for the given records.
    pub fn count_matrix(&self, indices: &[usize]) -> Vec<f64> {
        indices
            .iter()
            .flat_map(|&i| self.records[i].counts.iter().copied())
            .collect()
    }

    /// `ln(1 + x)` applied to every count; a no-op on log-space data.
    pub fn to_log_space(&self) -> Result<Dataset> {
        if self.log_transformed {
            return Ok(self.clone());
        }
        let mut out = self.clone();
        for r in &mut out.records {
            r.counts = super::select::log_transform(&r.counts)?;
        }
        out.log_transformed = true;
        Ok(out)
    }

    /// Reorders and subsets the gene columns to `panel`.
    pub fn project(&self, panel: &GenePanel) -> Result<Dataset> {
        let positions = panel.positions_in(self.panel.genes())?;
        let mut out = self.clone();
        for r in &mut out.records {
            r.counts = positions.iter().map(|&p| r.counts[p]).collect();
        }
        out.panel = panel.clone();
        Ok(out)
    }

    /// Same records with the panel relabelled as a plain column list.
    pub fn with_panel_kind(mut self, kind: PanelKind) -> Result<Dataset> {
        self.panel = GenePanel::new(self.panel.genes().to_vec(), kind)?;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, slide: &str, counts: Vec<f64>, e: Vec<f32>) -> SpotRecord {
        SpotRecord {
            spot_id: id.into(),
            slide_id: slide.into(),
            xy: None,
            counts,
            embeddings: vec![Embedding {
                tag: TransformTag::Identity,
                values: e,
            }],
            patch_size_px: None,
        }
    }

    fn panel(names: &[&str]) -> GenePanel {
        GenePanel::new(names.iter().map(|s| s.to_string()).collect(), PanelKind::Custom).unwrap()
    }

    fn splits() -> BTreeMap<String, Split> {
        [("a".to_string(), Split::Train), ("b".to_string(), Split::Test)].into()
    }

    #[test]
    fn tags_round_trip_through_strings() {
        for t in TransformTag::ALL {
            assert_eq!(t.as_str().parse::<TransformTag>().unwrap(), t);
        }
        assert!("rot45".parse::<TransformTag>().is_err());
    }

    #[test]
    fn validation_rejects_bad_records() {
        let p = panel(&["g1", "g2"]);
        let ok = record("s1", "a", vec![1.0, 2.0], vec![0.0; 3]);
        assert!(Dataset::new(vec![ok.clone()], p.clone(), 3, false, splits()).is_ok());

        let neg = record("s1", "a", vec![-1.0, 2.0], vec![0.0; 3]);
        assert!(matches!(Dataset::new(vec![neg.clone()], p.clone(), 3, false, splits()), Err(Error::Domain(_))));
        assert!(Dataset::new(vec![neg], p.clone(), 3, true, splits()).is_ok());

        let short = record("s1", "a", vec![1.0], vec![0.0; 3]);
        assert!(matches!(Dataset::new(vec![short], p.clone(), 3, false, splits()), Err(Error::Panel(_))));

        let mut no_id = ok.clone();
        no_id.embeddings[0].tag = TransformTag::Hflip;
        assert!(matches!(Dataset::new(vec![no_id], p.clone(), 3, false, splits()), Err(Error::Condition(_))));

        let wide = record("s1", "a", vec![1.0, 2.0], vec![0.0; 4]);
        assert!(matches!(Dataset::new(vec![wide], p.clone(), 3, false, splits()), Err(Error::Condition(_))));

        let orphan = record("s1", "zz", vec![1.0, 2.0], vec![0.0; 3]);
        assert!(Dataset::new(vec![orphan], p.clone(), 3, false, splits()).is_err());

        assert!(Dataset::new(vec![ok.clone(), ok], p, 3, false, splits()).is_err());
    }

    #[test]
    fn projection_reorders_and_is_idempotent() {
        let p = panel(&["g1", "g2", "g3"]);
        let ds = Dataset::new(
            vec![record("s1", "a", vec![1.0, 2.0, 3.0], vec![0.0])],
            p,
            1,
            false,
            splits(),
        )
        .unwrap();
        let sub = panel(&["g3", "g1"]);
        let once = ds.project(&sub).unwrap();
        assert_eq!(once.records()[0].counts, vec![3.0, 1.0]);
        assert_eq!(once.project(&sub).unwrap(), once);
        assert!(ds.project(&panel(&["g9"])).is_err());
    }

    #[test]
    fn split_indices() {
        let p = panel(&["g1"]);
        let ds = Dataset::new(
            vec![
                record("s1", "a", vec![1.0], vec![0.0]),
                record("s2", "b", vec![1.0], vec![0.0]),
                record("s3", "a", vec![1.0], vec![0.0]),
            ],
            p,
            1,
            false,
            splits(),
        )
        .unwrap();
        assert_eq!(ds.indices(Split::Train), vec![0, 2]);
        assert_eq!(ds.indices(Split::Test), vec![1]);
    }
}
