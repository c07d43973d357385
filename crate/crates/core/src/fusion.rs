//! Multi-annotator integration by majority vote and per-element label
//! uncertainty from the entropy of the vote distribution.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{AnnotationSet, ElementKind, LabelId, LabelMap, VOID};

/// Non-void votes for one element, sorted by label id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VoteHistogram {
    votes: Vec<(LabelId, u32)>,
}

impl VoteHistogram {
    pub fn from_votes(labels: impl IntoIterator<Item = LabelId>) -> Self {
        let mut votes: Vec<(LabelId, u32)> = Vec::new();
        for l in labels.into_iter().filter(|&l| l != VOID) {
            match votes.binary_search_by_key(&l, |v| v.0) {
                Ok(i) => votes[i].1 += 1,
                Err(i) => votes.insert(i, (l, 1)),
            }
        }
        Self { votes }
    }

    pub fn counts(&self) -> &[(LabelId, u32)] {
        &self.votes
    }

    pub fn count(&self, label: LabelId) -> u32 {
        self.votes
            .binary_search_by_key(&label, |v| v.0)
            .map(|i| self.votes[i].1)
            .unwrap_or(0)
    }

    /// `n_e`, the number of non-void votes.
    pub fn total(&self) -> u32 {
        self.votes.iter().map(|v| v.1).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.votes.is_empty()
    }

    /// Most voted label, ties to the smallest id; void without votes.
    pub fn argmax(&self) -> LabelId {
        let mut best = (VOID, 0u32);
        for &(l, c) in &self.votes {
            if c > best.1 {
                best = (l, c);
            }
        }
        best.0
    }

    /// Shannon entropy of the vote distribution in nats.
    pub fn entropy(&self) -> f64 {
        let n = self.total() as f64;
        -self
            .votes
            .iter()
            .map(|&(_, c)| {
                let p = c as f64 / n;
                p * p.ln()
            })
            .sum::<f64>()
    }

    /// Entropy normalized by `ln(min(n_e, class_count))` into `[0, 1]`.
    pub fn normalized_uncertainty(&self, class_count: usize) -> f64 {
        let n = self.total() as usize;
        let m = n.min(class_count);
        if m <= 1 || self.votes.len() <= 1 {
            return 0.0;
        }
        if self.votes.len() == m && self.votes.iter().all(|v| v.1 == self.votes[0].1) {
            return 1.0;
        }
        (self.entropy() / (m as f64).ln()).clamp(0.0, 1.0)
    }
}

/// Per-element histograms over one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramSet {
    pub scene_id: String,
    pub kind: ElementKind,
    pub annotators: usize,
    pub elements: Vec<VoteHistogram>,
}

pub fn build_histograms(set: &AnnotationSet) -> HistogramSet {
    let elements = (0..set.element_count())
        .into_par_iter()
        .map(|e| VoteHistogram::from_votes(set.members().iter().map(|(_, m)| m.get(e))))
        .collect();
    HistogramSet {
        scene_id: set.scene_id().to_string(),
        kind: set.kind(),
        annotators: set.annotator_count(),
        elements,
    }
}

/// Majority label per element; elements without votes stay void.
pub fn integrate(h: &HistogramSet) -> LabelMap {
    let labels = h.elements.par_iter().map(VoteHistogram::argmax).collect();
    LabelMap::from_labels(&h.scene_id, h.kind, labels)
}

pub const NORMALIZATION_RULE: &str = "entropy_nats / ln(min(n_votes, class_count)); 0 when that minimum is 1 or votes agree";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyEntry {
    pub u: f64,
    pub raw_entropy: f64,
    pub n_votes: u32,
}

/// Per-element uncertainty. Elements nobody voted on have no entry.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    pub scene_id: String,
    pub kind: ElementKind,
    pub annotators: usize,
    pub class_count: usize,
    entries: Vec<Option<UncertaintyEntry>>,
}

pub fn uncertainty(h: &HistogramSet, class_count: usize) -> UncertaintyMap {
    let entries = h
        .elements
        .par_iter()
        .map(|v| {
            (!v.is_empty()).then(|| UncertaintyEntry {
                u: v.normalized_uncertainty(class_count),
                raw_entropy: v.entropy(),
                n_votes: v.total(),
            })
        })
        .collect();
    UncertaintyMap {
        scene_id: h.scene_id.clone(),
        kind: h.kind,
        annotators: h.annotators,
        class_count,
        entries,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UncertaintySidecar {
    pub scene_id: String,
    pub element_kind: ElementKind,
    pub element_count: usize,
    pub annotators: usize,
    pub class_count: usize,
    pub normalization: String,
    pub singleton_elements: usize,
}

impl UncertaintyMap {
    pub fn new(
        scene_id: impl Into<String>,
        kind: ElementKind,
        annotators: usize,
        class_count: usize,
        entries: Vec<Option<UncertaintyEntry>>,
    ) -> Result<Self> {
        for (e, x) in entries.iter().enumerate() {
            if let Some(x) = x {
                if !(0.0..=1.0).contains(&x.u) {
                    return Err(Error::Invalid(format!("uncertainty {} of element {e} outside [0, 1]", x.u)));
                }
            }
        }
        Ok(Self {
            scene_id: scene_id.into(),
            kind,
            annotators,
            class_count,
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, element: usize) -> Option<&UncertaintyEntry> {
        self.entries.get(element).and_then(Option::as_ref)
    }

    pub fn u(&self, element: usize) -> Option<f64> {
        self.entry(element).map(|e| e.u)
    }

    pub fn entries(&self) -> &[Option<UncertaintyEntry>] {
        &self.entries
    }

    /// Per-element `u`, with `missing` for elements without an entry.
    pub fn dense(&self, missing: f64) -> Vec<f64> {
        self.entries.iter().map(|e| e.map_or(missing, |e| e.u)).collect()
    }

    pub fn check_labels(&self, labels: &LabelMap) -> Result<()> {
        if self.kind != labels.kind() || self.len() != labels.len() {
            return Err(Error::SceneMismatch(format!(
                "uncertainty over {} {}s, labels over {} {}s",
                self.len(),
                self.kind,
                labels.len(),
                labels.kind()
            )));
        }
        Ok(())
    }

    pub fn sidecar(&self) -> UncertaintySidecar {
        UncertaintySidecar {
            scene_id: self.scene_id.clone(),
            element_kind: self.kind,
            element_count: self.len(),
            annotators: self.annotators,
            class_count: self.class_count,
            normalization: NORMALIZATION_RULE.into(),
            singleton_elements: self.entries.iter().flatten().filter(|e| e.n_votes == 1).count(),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["element_id", "u", "raw_entropy", "n_votes"])?;
        for (i, e) in self.entries.iter().enumerate() {
            if let Some(e) = e {
                w.write_record([i.to_string(), e.u.to_string(), e.raw_entropy.to_string(), e.n_votes.to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let (csv_path, json_path) = uncert_paths(path);
        let f = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        self.write_csv(std::io::BufWriter::new(f))?;
        let json = serde_json::to_string_pretty(&self.sidecar())?;
        fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))
    }

    pub fn parse(csv_text: &[u8], sidecar: &UncertaintySidecar) -> Result<Self> {
        let mut entries = vec![None; sidecar.element_count];
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(csv_text);
        let h = rdr.headers()?.clone();
        if h.iter().collect::<Vec<_>>() != ["element_id", "u", "raw_entropy", "n_votes"] {
            return Err(Error::parse(0, "uncertainty csv header must be 'element_id,u,raw_entropy,n_votes'"));
        }
        for rec in rdr.records() {
            let rec = rec?;
            let at = rec.position().map(|p| p.byte()).unwrap_or(0);
            let bad = |i: usize| Error::parse(at, format!("bad field {i}"));
            let e: usize = rec[0].trim().parse().map_err(|_| bad(0))?;
            let u: f64 = rec[1].trim().parse().map_err(|_| bad(1))?;
            let raw_entropy: f64 = rec[2].trim().parse().map_err(|_| bad(2))?;
            let n_votes: u32 = rec[3].trim().parse().map_err(|_| bad(3))?;
            let slot = entries.get_mut(e).ok_or(Error::OutOfRange {
                what: "element id",
                index: e as u64,
                limit: sidecar.element_count as u64,
            })?;
            *slot = Some(UncertaintyEntry { u, raw_entropy, n_votes });
        }
        Self::new(
            &sidecar.scene_id,
            sidecar.element_kind,
            sidecar.annotators,
            sidecar.class_count,
            entries,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (csv_path, json_path) = uncert_paths(path);
        let json = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let sidecar: UncertaintySidecar = serde_json::from_str(&json)?;
        let bytes = fs::read(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        Self::parse(&bytes, &sidecar)
    }
}

/// `<name>.uncert.csv` / `<name>.uncert.json` from any of the two or the
/// bare name.
pub fn uncert_paths(path: &Path) -> (PathBuf, PathBuf) {
    let s = path.to_string_lossy();
    let base = s
        .strip_suffix(".uncert.csv")
        .or_else(|| s.strip_suffix(".uncert.json"))
        .unwrap_or(&s)
        .to_string();
    (
        PathBuf::from(format!("{base}.uncert.csv")),
        PathBuf::from(format!("{base}.uncert.json")),
    )
}
