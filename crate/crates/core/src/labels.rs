//! Label maps, annotation sets, and their CSV + JSON sidecar file format.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::LabelTaxonomy;

/// Label identifier; 0 means void / unlabeled.
pub type LabelId = u16;

pub const VOID: LabelId = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Face,
    Point,
    Voxel,
}

impl std::fmt::Display for ElementKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ElementKind::Face => "face",
            ElementKind::Point => "point",
            ElementKind::Voxel => "voxel",
        })
    }
}

/// Element index to label id over one scene. Stored densely: an element
/// without an explicit label carries [`VOID`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    scene_id: String,
    kind: ElementKind,
    labels: Vec<LabelId>,
}

impl LabelMap {
    pub fn unlabeled(scene_id: impl Into<String>, kind: ElementKind, element_count: usize) -> Self {
        Self {
            scene_id: scene_id.into(),
            kind,
            labels: vec![VOID; element_count],
        }
    }

    pub fn from_labels(scene_id: impl Into<String>, kind: ElementKind, labels: Vec<LabelId>) -> Self {
        Self {
            scene_id: scene_id.into(),
            kind,
            labels,
        }
    }

    pub fn scene_id(&self) -> &str {
        &self.scene_id
    }

    pub fn kind(&self) -> ElementKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[LabelId] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<LabelId> {
        self.labels
    }

    pub fn get(&self, element: usize) -> LabelId {
        self.labels[element]
    }

    pub fn set(&mut self, element: usize, label: LabelId) -> Result<()> {
        let n = self.labels.len();
        let slot = self.labels.get_mut(element).ok_or(Error::OutOfRange {
            what: "element id",
            index: element as u64,
            limit: n as u64,
        })?;
        *slot = label;
        Ok(())
    }

    pub(crate) fn labels_mut(&mut self) -> &mut [LabelId] {
        &mut self.labels
    }

    /// Non-void entries in element order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, LabelId)> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != VOID)
            .map(|(i, &l)| (i, l))
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != VOID).count()
    }

    pub fn unlabeled_elements(&self) -> Vec<u32> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == VOID)
            .map(|(i, _)| i as u32)
            .collect()
    }

    pub fn with_scene_id(mut self, scene_id: impl Into<String>) -> Self {
        self.scene_id = scene_id.into();
        self
    }

    pub fn validate(&self, taxonomy: &LabelTaxonomy) -> Result<()> {
        match self.labels.iter().find(|&&l| !taxonomy.contains(l)) {
            Some(&bad) => Err(Error::UnknownLabel(bad as u32)),
            None => Ok(()),
        }
    }

    /// Checks that `other` describes the same scene and element set.
    pub fn check_compatible(&self, other: &LabelMap) -> Result<()> {
        if self.scene_id != other.scene_id || self.kind != other.kind || self.len() != other.len() {
            return Err(Error::SceneMismatch(format!(
                "({}, {}, {}) vs ({}, {}, {})",
                self.scene_id,
                self.kind,
                self.len(),
                other.scene_id,
                other.kind,
                other.len()
            )));
        }
        Ok(())
    }
}

/// Labels from several annotators over the same scene.
#[derive(Debug, Clone)]
pub struct AnnotationSet {
    members: Vec<(String, LabelMap)>,
}

impl AnnotationSet {
    pub fn new(members: Vec<(String, LabelMap)>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::Invalid("annotation set needs at least one annotator".into()))?;
        for (_, m) in &members[1..] {
            first.1.check_compatible(m)?;
        }
        Ok(Self { members })
    }

    pub fn annotator_count(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[(String, LabelMap)] {
        &self.members
    }

    pub fn element_count(&self) -> usize {
        self.members[0].1.len()
    }

    pub fn scene_id(&self) -> &str {
        self.members[0].1.scene_id()
    }

    pub fn kind(&self) -> ElementKind {
        self.members[0].1.kind()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelSidecar {
    pub scene_id: String,
    pub element_kind: ElementKind,
    pub element_count: usize,
    pub taxonomy: LabelTaxonomy,
}

/// Resolves `<name>.labels.csv` / `<name>.labels.json` from either the CSV
/// path, the JSON path, or the bare `<name>`.
pub fn label_paths(path: &Path) -> (PathBuf, PathBuf) {
    let s = path.to_string_lossy();
    let base = s
        .strip_suffix(".labels.csv")
        .or_else(|| s.strip_suffix(".labels.json"))
        .unwrap_or(&s)
        .to_string();
    (
        PathBuf::from(format!("{base}.labels.csv")),
        PathBuf::from(format!("{base}.labels.json")),
    )
}

pub fn write_label_csv<W: Write>(map: &LabelMap, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["element_id", "label_id"])?;
    for (e, l) in map.entries() {
        w.write_record([e.to_string(), l.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn label_csv_string(map: &LabelMap) -> String {
    let mut buf = Vec::new();
    write_label_csv(map, &mut buf).expect("in-memory write");
    String::from_utf8(buf).expect("ascii csv")
}

pub fn save_label_map(map: &LabelMap, taxonomy: &LabelTaxonomy, path: &Path) -> Result<()> {
    map.validate(taxonomy)?;
    let (csv_path, json_path) = label_paths(path);
    let f = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    write_label_csv(map, std::io::BufWriter::new(f))?;
    let sidecar = LabelSidecar {
        scene_id: map.scene_id.clone(),
        element_kind: map.kind,
        element_count: map.len(),
        taxonomy: taxonomy.clone(),
    };
    let json = serde_json::to_string_pretty(&sidecar)?;
    fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))
}

/// Parses label CSV content against a sidecar. Labels are validated against
/// `taxonomy` when given, else against the sidecar's own taxonomy.
pub fn parse_label_csv(
    csv_text: &[u8],
    sidecar: &LabelSidecar,
    taxonomy: Option<&LabelTaxonomy>,
) -> Result<LabelMap> {
    let tax = taxonomy.unwrap_or(&sidecar.taxonomy);
    let mut map = LabelMap::unlabeled(&sidecar.scene_id, sidecar.element_kind, sidecar.element_count);
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(csv_text);
    let headers = rdr.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "element_id" || &headers[1] != "label_id" {
        return Err(Error::parse(0, "label csv header must be 'element_id,label_id'"));
    }
    for rec in rdr.records() {
        let rec = rec?;
        let at = rec.position().map(|p| p.byte()).unwrap_or(0);
        let field = |i: usize| -> Result<u64> {
            rec.get(i)
                .and_then(|s| s.trim().parse::<u64>().ok())
                .ok_or_else(|| Error::parse(at, format!("bad field {i} in '{}'", rec.iter().collect::<Vec<_>>().join(","))))
        };
        let element = field(0)?;
        let label = field(1)?;
        if element >= sidecar.element_count as u64 {
            return Err(Error::OutOfRange {
                what: "element id",
                index: element,
                limit: sidecar.element_count as u64,
            });
        }
        if label > u32::MAX as u64 {
            return Err(Error::UnknownLabel(u32::MAX));
        }
        let label = tax.check(label as u32)?;
        map.labels[element as usize] = label;
    }
    Ok(map)
}

pub fn load_label_map_with_taxonomy(
    path: &Path,
    taxonomy: Option<&LabelTaxonomy>,
) -> Result<(LabelMap, LabelTaxonomy)> {
    let (csv_path, json_path) = label_paths(path);
    let json = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let sidecar: LabelSidecar = serde_json::from_str(&json)?;
    let bytes = fs::read(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let map = parse_label_csv(&bytes, &sidecar, taxonomy)?;
    Ok((map, taxonomy.cloned().unwrap_or(sidecar.taxonomy)))
}

pub fn load_label_map(path: &Path, taxonomy: Option<&LabelTaxonomy>) -> Result<LabelMap> {
    load_label_map_with_taxonomy(path, taxonomy).map(|(m, _)| m)
}
