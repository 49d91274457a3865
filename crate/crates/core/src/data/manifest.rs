//! Dataset manifests: CSV schema, integrity checks, score normalization
//! and content-disjoint splitting.
//!
//! The on-disk format is UTF-8 CSV with header
//! `image_path,reference_id,distortion_type,distortion_level,score`.
//! Pristine rows carry `PRISTINE,0` and an empty score cell. An optional
//! leading comment `# name=<n> polarity=<quality_mos|impairment_dmos>`
//! records manifest metadata; without it the polarity defaults to
//! DMOS-like (higher = worse).

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, streams};

pub const PRISTINE_LABEL: &str = "PRISTINE";

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ImageRecord {
    pub image_path: String,
    pub reference_id: String,
    /// Distortion label; `PRISTINE` for reference images.
    pub distortion_type: String,
    /// 0 for pristine rows, otherwise >= 1.
    pub distortion_level: u32,
    /// Subjective score; `None` for pristine rows.
    pub score: Option<f64>,
}

impl ImageRecord {
    pub fn is_pristine(&self) -> bool {
        self.distortion_type == PRISTINE_LABEL
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ScorePolarity {
    /// Higher score = better quality (MOS-like).
    QualityMos,
    /// Higher score = worse quality (DMOS-like).
    ImpairmentDmos,
}

impl ScorePolarity {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "quality_mos" => Some(Self::QualityMos),
            "impairment_dmos" => Some(Self::ImpairmentDmos),
            _ => None,
        }
    }
    fn as_str(self) -> &'static str {
        match self {
            Self::QualityMos => "quality_mos",
            Self::ImpairmentDmos => "impairment_dmos",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub score_polarity: ScorePolarity,
    pub records: Vec<ImageRecord>,
    /// Directory image paths are resolved against; set on load, not
    /// serialized.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(name: &str, score_polarity: ScorePolarity, records: Vec<ImageRecord>) -> Self {
        Self {
            name: name.to_string(),
            score_polarity,
            records,
            base_dir: PathBuf::new(),
        }
    }

    /// Absolute-ish path of a record's image file.
    pub fn resolve_path(&self, record: &ImageRecord) -> PathBuf {
        self.base_dir.join(&record.image_path)
    }

    pub fn pristine_records(&self) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(|r| r.is_pristine())
    }

    pub fn distorted_records(&self) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(|r| !r.is_pristine())
    }

    pub fn reference_ids(&self) -> BTreeSet<String> {
        self.records.iter().map(|r| r.reference_id.clone()).collect()
    }

    /// Sorted distinct distortion labels of the distorted records; the
    /// classifier's label vocabulary.
    pub fn distortion_vocabulary(&self) -> Vec<String> {
        let set: BTreeSet<String> = self
            .distorted_records()
            .map(|r| r.distortion_type.clone())
            .collect();
        set.into_iter().collect()
    }

    /// Per-record invariants plus referential integrity of distorted
    /// rows against the pristine set.
    pub fn validate(&self) -> Result<()> {
        let pristine: BTreeSet<&str> = self
            .pristine_records()
            .map(|r| r.reference_id.as_str())
            .collect();
        for r in &self.records {
            if r.is_pristine() != (r.distortion_level == 0) {
                return Err(Error::Integrity(format!(
                    "{}: distortion_level 0 and type {} disagree",
                    r.image_path, r.distortion_type
                )));
            }
            if !r.is_pristine() {
                if r.score.is_none() {
                    return Err(Error::Integrity(format!(
                        "{}: distorted record without score",
                        r.image_path
                    )));
                }
                if !pristine.contains(r.reference_id.as_str()) {
                    return Err(Error::Integrity(format!(
                        "{}: reference_id {} has no pristine record",
                        r.image_path, r.reference_id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Loads and validates a manifest CSV.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path)?;
    if text.trim().is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "empty manifest file".into(),
        });
    }
    let mut name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "manifest".into());
    let mut polarity = ScorePolarity::ImpairmentDmos;

    let mut records = Vec::new();
    let mut header_seen = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            for token in meta.split_whitespace() {
                if let Some(v) = token.strip_prefix("name=") {
                    name = v.to_string();
                } else if let Some(v) = token.strip_prefix("polarity=") {
                    polarity = ScorePolarity::parse(v).ok_or_else(|| Error::Parse {
                        line: line_no,
                        msg: format!("unknown polarity {v}"),
                    })?;
                }
            }
            continue;
        }
        if !header_seen {
            let expect = "image_path,reference_id,distortion_type,distortion_level,score";
            if line != expect {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("bad header, expected `{expect}`"),
                });
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        let distortion_level: u32 = fields[3].trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("bad distortion_level `{}`", fields[3]),
        })?;
        let score_field = fields[4].trim();
        let score = if score_field.is_empty() {
            None
        } else {
            Some(score_field.parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad score `{score_field}`"),
            })?)
        };
        records.push(ImageRecord {
            image_path: fields[0].trim().to_string(),
            reference_id: fields[1].trim().to_string(),
            distortion_type: fields[2].trim().to_string(),
            distortion_level,
            score,
        });
    }
    if !header_seen {
        return Err(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        });
    }
    let mut manifest = DatasetManifest::new(&name, polarity, records);
    manifest.base_dir = path.parent().unwrap_or_else(|| Path::new("")).to_path_buf();
    manifest.validate()?;
    Ok(manifest)
}

/// Writes a manifest CSV; `load_manifest(save) == identity` on records,
/// name and polarity, byte-stable across repeated round trips.
pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!(
        "# name={} polarity={}\n",
        manifest.name,
        manifest.score_polarity.as_str()
    ));
    out.push_str("image_path,reference_id,distortion_type,distortion_level,score\n");
    for r in &manifest.records {
        let score = match r.score {
            Some(s) => format_score(s),
            None => String::new(),
        };
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.image_path, r.reference_id, r.distortion_type, r.distortion_level, score
        ));
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Shortest decimal that round-trips through f64.
fn format_score(s: f64) -> String {
    let mut out = format!("{s}");
    if !out.contains('.') && !out.contains('e') && !out.contains("inf") && !out.contains("NaN") {
        out.push_str(".0");
    }
    out
}

/// Affinely maps distorted scores to DMOS-like [0, 100]: the dataset
/// minimum goes to 0 and the maximum to 100. MOS-like inputs are negated
/// first so that higher always means worse afterwards.
pub fn normalize_scores(manifest: &DatasetManifest) -> Result<DatasetManifest> {
    let polarity_flip = manifest.score_polarity == ScorePolarity::QualityMos;
    let scores: Vec<f64> = manifest
        .distorted_records()
        .filter_map(|r| r.score)
        .map(|s| if polarity_flip { -s } else { s })
        .collect();
    if scores.len() < 2 {
        return Err(Error::DegenerateRange(
            "need at least 2 scored records".into(),
        ));
    }
    let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max - min <= 0.0 {
        return Err(Error::DegenerateRange(format!(
            "all scores equal ({min})"
        )));
    }
    let mut out = manifest.clone();
    out.score_polarity = ScorePolarity::ImpairmentDmos;
    for r in &mut out.records {
        if let Some(s) = r.score {
            let v = if polarity_flip { -s } else { s };
            r.score = Some((v - min) * 100.0 / (max - min));
        }
    }
    Ok(out)
}

/// Partitions reference ids by shuffled ratios; every record follows its
/// reference id, so the three subsets share no content. Remainders after
/// flooring go to the training split.
pub fn split_by_reference(
    manifest: &DatasetManifest,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest, DatasetManifest)> {
    let (rt, rv, rs) = ratios;
    if (rt + rv + rs - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must sum to 1, got {}",
            rt + rv + rs
        )));
    }
    if rt < 0.0 || rv < 0.0 || rs < 0.0 {
        return Err(Error::Config("split ratios must be non-negative".into()));
    }
    let mut refs: Vec<String> = manifest.reference_ids().into_iter().collect();
    if refs.len() < 5 {
        return Err(Error::Config(format!(
            "need at least 5 reference ids to split, got {}",
            refs.len()
        )));
    }
    let mut rng = rng_for(seed, streams::SPLIT, 0);
    // Fisher-Yates over the sorted id list
    for i in (1..refs.len()).rev() {
        let j = rng.gen_range(0..=i);
        refs.swap(i, j);
    }
    let total = refs.len();
    // the epsilon absorbs representation error in ratios like 0.6
    let n_train = ((rt * total as f64) + 1e-9).floor() as usize;
    let n_val = ((rv * total as f64) + 1e-9).floor() as usize;
    let n_test = ((rs * total as f64) + 1e-9).floor() as usize;
    let leftover = total - n_train - n_val - n_test;
    let n_train = n_train + leftover;

    let train_set: BTreeSet<&String> = refs[..n_train].iter().collect();
    let val_set: BTreeSet<&String> = refs[n_train..n_train + n_val].iter().collect();

    let mut parts: BTreeMap<&str, Vec<ImageRecord>> = BTreeMap::new();
    for key in ["train", "val", "test"] {
        parts.insert(key, Vec::new());
    }
    for r in &manifest.records {
        let key = if train_set.contains(&r.reference_id) {
            "train"
        } else if val_set.contains(&r.reference_id) {
            "val"
        } else {
            "test"
        };
        parts.get_mut(key).unwrap().push(r.clone());
    }
    let mk = |key: &str, recs: Vec<ImageRecord>| {
        let mut m = DatasetManifest::new(
            &format!("{}-{key}", manifest.name),
            manifest.score_polarity,
            recs,
        );
        m.base_dir = manifest.base_dir.clone();
        m
    };
    Ok((
        mk("train", parts.remove("train").unwrap()),
        mk("val", parts.remove("val").unwrap()),
        mk("test", parts.remove("test").unwrap()),
    ))
}
