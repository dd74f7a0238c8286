//! On-disk dataset directory: `meta.json`, `counts.csv`, `embeddings.bin`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::{self, Reader};
use crate::model::{GenePanel, PanelKind};

use super::record::{Dataset, Embedding, SpotRecord, Split, TransformTag};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const EMBEDDING_MAGIC: &[u8; 8] = b"STEMEMB1";

pub const META_FILE: &str = "meta.json";
pub const COUNTS_FILE: &str = "counts.csv";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    format_version: u32,
    panel: Vec<String>,
    #[serde(default = "custom")]
    panel_kind: PanelKind,
    cond_dim: usize,
    log_transformed: bool,
    split: BTreeMap<String, Split>,
    n_spots: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    spot_meta: BTreeMap<String, SpotMeta>,
}

fn custom() -> PanelKind {
    PanelKind::Custom
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct SpotMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    xy: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    patch_size_px: Option<u32>,
}

/// Formats counts as CSV rows `spot_id,slide_id,<values…>`. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn counts_csv<'a>(genes: &[String], rows: impl Iterator<Item = (&'a str, &'a str, &'a [f64])>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Parameter(format!("csv encoding: {e}"));
    let mut header = vec!["spot_id", "slide_id"];
    header.extend(genes.iter().map(String::as_str));
    w.write_record(&header).map_err(csv_err)?;
    let mut fields = Vec::with_capacity(genes.len() + 2);
    for (spot, slide, values) in rows {
        fields.clear();
        fields.push(spot.to_string());
        fields.push(slide.to_string());
        fields.extend(values.iter().map(|v| v.to_string()));
        w.write_record(&fields).map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::Parameter(format!("csv encoding: {e}")))
}

/// A parsed `counts.csv`-layout table.
#[derive(Clone, Debug, PartialEq)]
pub struct CountTable {
    pub genes: Vec<String>,
    pub spot_ids: Vec<String>,
    pub slide_ids: Vec<String>,
    /// Row-major `[spots, genes]`.
    pub values: Vec<f64>,
}

impl CountTable {
    pub fn row(&self, i: usize) -> &[f64] {
        let g = self.genes.len();
        &self.values[i * g..(i + 1) * g]
    }
}

pub fn read_counts_csv(path: &Path) -> Result<CountTable> {
    let text = fsutil::read(path)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_slice());
    let bad = |msg: String| Error::format(path, msg);
    let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.len() < 3 || &header[0] != "spot_id" || &header[1] != "slide_id" {
        return Err(bad("header must start with spot_id,slide_id and name at least one gene".into()));
    }
    let genes: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let mut table = CountTable {
        genes,
        spot_ids: Vec::new(),
        slide_ids: Vec::new(),
        values: Vec::new(),
    };
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let line = line + 2;
        if rec.len() != header.len() {
            return Err(bad(format!("line {line}: {} fields, header has {}", rec.len(), header.len())));
        }
        table.spot_ids.push(rec[0].to_string());
        table.slide_ids.push(rec[1].to_string());
        for (col, field) in rec.iter().enumerate().skip(2) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| bad(format!("line {line}, column {}: {field:?} is not a number", col + 1)))?;
            table.values.push(v);
        }
    }
    Ok(table)
}

fn encode_embeddings(ds: &Dataset) -> Vec<u8> {
    let count: usize = ds.records().iter().map(|r| r.embeddings.len()).sum();
    let mut out = Vec::with_capacity(16 + count * (16 + 4 * ds.cond_dim()));
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&(count as u32).to_le_bytes());
    out.extend_from_slice(&(ds.cond_dim() as u32).to_le_bytes());
    for (i, r) in ds.records().iter().enumerate() {
        for e in &r.embeddings {
            let tag = e.tag.as_str().as_bytes();
            out.extend_from_slice(&(tag.len() as u16).to_le_bytes());
            out.extend_from_slice(tag);
            out.extend_from_slice(&(i as u32).to_le_bytes());
            for v in &e.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

/// Embeddings grouped per spot index, in file order.
fn decode_embeddings(path: &Path, bytes: &[u8], n_spots: usize) -> Result<(usize, Vec<Vec<Embedding>>)> {
    let mut r = Reader::new(path, bytes);
    if r.take(8)? != EMBEDDING_MAGIC {
        return Err(Error::format(path, "bad magic, expected STEMEMB1"));
    }
    let count = r.u32()? as usize;
    let cond_dim = r.u32()? as usize;
    let mut out: Vec<Vec<Embedding>> = vec![Vec::new(); n_spots];
    for _ in 0..count {
        let at = r.position();
        let len = r.u16()? as usize;
        let tag: TransformTag = r
            .string(len)?
            .parse()
            .map_err(|e: Error| Error::format(path, format!("record at byte {at}: {e}")))?;
        let spot = r.u32()? as usize;
        if spot >= n_spots {
            return Err(Error::format(
                path,
                format!("record at byte {at} refers to spot {spot} of {n_spots}"),
            ));
        }
        let raw = r.take(4 * cond_dim)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        out[spot].push(Embedding { tag, values });
    }
    r.finish()?;
    Ok((cond_dim, out))
}

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fsutil::create_dir(dir)?;
    let spot_meta = ds
        .records()
        .iter()
        .filter(|r| r.xy.is_some() || r.patch_size_px.is_some())
        .map(|r| {
            (
                r.spot_id.clone(),
                SpotMeta {
                    xy: r.xy.map(|(x, y)| [x, y]),
                    patch_size_px: r.patch_size_px,
                },
            )
        })
        .collect();
    let meta = Meta {
        format_version: DATASET_FORMAT_VERSION,
        panel: ds.panel().genes().to_vec(),
        panel_kind: ds.panel().kind(),
        cond_dim: ds.cond_dim(),
        log_transformed: ds.log_transformed(),
        split: ds.splits().clone(),
        n_spots: ds.len(),
        spot_meta,
    };
    let counts = counts_csv(
        ds.panel().genes(),
        ds.records()
            .iter()
            .map(|r| (r.spot_id.as_str(), r.slide_id.as_str(), r.counts.as_slice())),
    )?;
    let mut meta_json = serde_json::to_vec_pretty(&meta)?;
    meta_json.push(b'\n');
    fsutil::write_atomic(&dir.join(COUNTS_FILE), &counts)?;
    fsutil::write_atomic(&dir.join(EMBEDDINGS_FILE), &encode_embeddings(ds))?;
    fsutil::write_atomic(&dir.join(META_FILE), &meta_json)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join(META_FILE);
    let meta: Meta = serde_json::from_str(&fsutil::read_string(&meta_path)?)
        .map_err(|e| Error::format(&meta_path, e.to_string()))?;
    if meta.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::format(
            &meta_path,
            format!("format version {} (supported: {DATASET_FORMAT_VERSION})", meta.format_version),
        ));
    }
    let counts_path = dir.join(COUNTS_FILE);
    let table = read_counts_csv(&counts_path)?;
    if table.genes != meta.panel {
        return Err(Error::format(&counts_path, "gene columns differ from the meta.json panel"));
    }
    if table.spot_ids.len() != meta.n_spots {
        return Err(Error::format(
            &counts_path,
            format!("{} rows, meta.json declares {}", table.spot_ids.len(), meta.n_spots),
        ));
    }
    let emb_path = dir.join(EMBEDDINGS_FILE);
    let (cond_dim, embeddings) = decode_embeddings(&emb_path, &fsutil::read(&emb_path)?, meta.n_spots)?;
    if cond_dim != meta.cond_dim {
        return Err(Error::format(
            &emb_path,
            format!("cond_dim {cond_dim}, meta.json declares {}", meta.cond_dim),
        ));
    }
    let mut spot_meta = meta.spot_meta;
    let records = embeddings
        .into_iter()
        .enumerate()
        .map(|(i, embeddings)| {
            let extra = spot_meta.remove(&table.spot_ids[i]).unwrap_or_default();
            SpotRecord {
                spot_id: table.spot_ids[i].clone(),
                slide_id: table.slide_ids[i].clone(),
                xy: extra.xy.map(|[x, y]| (x, y)),
                counts: table.row(i).to_vec(),
                embeddings,
                patch_size_px: extra.patch_size_px,
            }
        })
        .collect();
    let panel = GenePanel::new(meta.panel, meta.panel_kind)?;
    Dataset::new(records, panel, meta.cond_dim, meta.log_transformed, meta.split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dataset {
        let records = vec![
            SpotRecord {
                spot_id: "a,1".into(),
                slide_id: "s1".into(),
                xy: Some((12.5, -3.25)),
                counts: vec![0.1 + 0.2, 1e-300, 7.0],
                embeddings: vec![
                    Embedding {
                        tag: TransformTag::Identity,
                        values: vec![0.1, -2.5e-8],
                    },
                    Embedding {
                        tag: TransformTag::Rot90,
                        values: vec![f32::MAX, f32::MIN_POSITIVE],
                    },
                ],
                patch_size_px: Some(224),
            },
            SpotRecord {
                spot_id: "b".into(),
                slide_id: "s2".into(),
                xy: None,
                counts: vec![123456789.123, 0.0, 2.0 / 3.0],
                embeddings: vec![Embedding {
                    tag: TransformTag::Identity,
                    values: vec![1.0, 2.0],
                }],
                patch_size_px: None,
            },
        ];
        let genes = vec!["g1".into(), "g 2".into(), "g3".into()];
        let splits = BTreeMap::from([("s1".into(), Split::Train), ("s2".into(), Split::Test)]);
        Dataset::new(records, GenePanel::new(genes, PanelKind::Custom).unwrap(), 2, false, splits).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ds = sample();
        write_dataset(dir.path(), &ds).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
        for (a, b) in back.records().iter().zip(ds.records()) {
            for (x, y) in a.counts.iter().zip(&b.counts) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn parses_scientific_notation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        std::fs::write(&p, "spot_id,slide_id,g\nx,s,1.5e2\ny,s,-2E-1\n").unwrap();
        let t = read_counts_csv(&p).unwrap();
        assert_eq!(t.values, vec![150.0, -0.2]);
        std::fs::write(&p, "spot_id,slide_id,g\nx,s,1,000\n").unwrap();
        assert!(matches!(read_counts_csv(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn corrupt_embeddings_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &sample()).unwrap();
        let path = dir.path().join(EMBEDDINGS_FILE);
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Format { .. })));
    }
}
