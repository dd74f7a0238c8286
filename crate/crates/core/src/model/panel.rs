use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PanelKind {
    Hmhvg,
    Hvg,
    Custom,
}

/// Ordered gene list; token `i` is gene `i` for the lifetime of a model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenePanel {
    genes: Vec<String>,
    kind: PanelKind,
}

impl GenePanel {
    pub fn new(genes: Vec<String>, kind: PanelKind) -> Result<Self> {
        if genes.is_empty() {
            return Err(Error::Panel("panel is empty".into()));
        }
        let mut seen = HashSet::with_capacity(genes.len());
        if let Some(dup) = genes.iter().find(|g| !seen.insert(g.as_str())) {
            return Err(Error::Panel(format!("duplicate gene {dup:?} in panel")));
        }
        Ok(GenePanel { genes, kind })
    }

    pub fn genes(&self) -> &[String] {
        &self.genes
    }

    pub fn kind(&self) -> PanelKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.genes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genes.is_empty()
    }

    /// Column index of each panel gene within `columns`.
    pub fn positions_in(&self, columns: &[String]) -> Result<Vec<usize>> {
        let lookup: HashMap<&str, usize> = columns
            .iter()
            .enumerate()
            .map(|(i, g)| (g.as_str(), i))
            .collect();
        self.genes
            .iter()
            .map(|g| {
                lookup
                    .get(g.as_str())
                    .copied()
                    .ok_or_else(|| Error::Panel(format!("gene {g:?} not present in data")))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicates() {
        let err = GenePanel::new(vec!["a".into(), "b".into(), "a".into()], PanelKind::Custom);
        assert!(matches!(err, Err(Error::Panel(_))));
    }

    #[test]
    fn positions() {
        let p = GenePanel::new(vec!["c".into(), "a".into()], PanelKind::Custom).unwrap();
        let cols: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        assert_eq!(p.positions_in(&cols).unwrap(), vec![2, 0]);
        let missing = GenePanel::new(vec!["z".into()], PanelKind::Custom).unwrap();
        assert!(missing.positions_in(&cols).is_err());
    }
}
