//! Area-weighted IoU, mIoU, labeled-area percentage and the uncertainty
//! threshold sweep.
//!
//! Void predictions count as false negatives of their ground-truth class and
//! never as false positives. Classes without ground-truth area are reported
//! as `-` and left out of the mean.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::UncertaintyMap;
use crate::labels::{ElementKind, LabelId, LabelMap, VOID};
use crate::taxonomy::LabelTaxonomy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AreaSource {
    FaceAreas,
    PointCounts,
    VoxelCounts,
}

impl AreaSource {
    pub fn of(kind: ElementKind) -> Self {
        match kind {
            ElementKind::Face => AreaSource::FaceAreas,
            ElementKind::Point => AreaSource::PointCounts,
            ElementKind::Voxel => AreaSource::VoxelCounts,
        }
    }
}

pub const UNLABELED_RULE: &str = "void predictions add to the false-negative area of their ground-truth class, never to false positives";

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: f64,
    pub fn_: f64,
    pub fp: f64,
}

impl Confusion {
    pub fn iou(&self) -> Option<f64> {
        let d = self.tp + self.fn_ + self.fp;
        (d > 0.0).then(|| self.tp / d)
    }

    pub fn gt_area(&self) -> f64 {
        self.tp + self.fn_
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub id: LabelId,
    pub name: String,
    #[serde(flatten)]
    pub confusion: Confusion,
    /// `None` when the class has no ground-truth area.
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<ClassRow>,
    pub miou: Option<f64>,
    pub perc_area: f64,
    /// Number of classes included in the mean.
    pub n: usize,
    pub element_kind: ElementKind,
    pub area_source: AreaSource,
    pub unlabeled_rule: String,
}

fn check_inputs(gt: &LabelMap, pred: &LabelMap, areas: &[f64]) -> Result<()> {
    if gt.kind() != pred.kind() || gt.len() != pred.len() {
        return Err(Error::SceneMismatch(format!(
            "ground truth has {} {}s, prediction {} {}s",
            gt.len(),
            gt.kind(),
            pred.len(),
            pred.kind()
        )));
    }
    check_areas(gt, areas)
}

fn check_areas(map: &LabelMap, areas: &[f64]) -> Result<()> {
    if areas.len() != map.len() {
        return Err(Error::SceneMismatch(format!("{} areas for {} elements", areas.len(), map.len())));
    }
    if let Some(i) = areas.iter().position(|a| !(a.is_finite() && *a >= 0.0)) {
        return Err(Error::Invalid(format!("element {i} has invalid area {}", areas[i])));
    }
    Ok(())
}

/// Confusion areas for every label id up to `max_id`, over elements where
/// `keep` holds. Summation runs in element order.
fn confusion_table(
    gt: &LabelMap,
    pred: &LabelMap,
    areas: &[f64],
    max_id: LabelId,
    keep: impl Fn(usize) -> bool,
) -> Result<Vec<Confusion>> {
    let mut t = vec![Confusion::default(); max_id as usize + 1];
    for e in 0..gt.len() {
        if !keep(e) {
            continue;
        }
        let (g, p, a) = (gt.get(e), pred.get(e), areas[e]);
        if g.max(p) > max_id {
            return Err(Error::UnknownLabel(g.max(p) as u32));
        }
        if g == p {
            if g != VOID {
                t[g as usize].tp += a;
            }
            continue;
        }
        if g != VOID {
            t[g as usize].fn_ += a;
        }
        if p != VOID {
            t[p as usize].fp += a;
        }
    }
    Ok(t)
}

/// IoU of one class; `None` when the class occurs in neither map.
pub fn class_iou(gt: &LabelMap, pred: &LabelMap, areas: &[f64], class: LabelId) -> Result<Option<f64>> {
    check_inputs(gt, pred, areas)?;
    let mut c = Confusion::default();
    for e in 0..gt.len() {
        let (g, p, a) = (gt.get(e) == class, pred.get(e) == class, areas[e]);
        match (g, p) {
            (true, true) => c.tp += a,
            (true, false) => c.fn_ += a,
            (false, true) => c.fp += a,
            _ => {}
        }
    }
    Ok(c.iou())
}

/// `100 * labeled area / total area`.
pub fn perc_area(map: &LabelMap, areas: &[f64]) -> Result<f64> {
    check_areas(map, areas)?;
    let total = areas.iter().fold(0.0, |a, b| a + b);
    if map.is_empty() || total <= 0.0 {
        return Err(Error::Invalid("perc_area of an empty scene".into()));
    }
    Ok(100.0 * labeled_area(map, areas, |_| true) / total)
}

fn labeled_area(map: &LabelMap, areas: &[f64], keep: impl Fn(usize) -> bool) -> f64 {
    map.labels()
        .iter()
        .zip(areas)
        .enumerate()
        .filter(|(e, (&l, _))| l != VOID && keep(*e))
        .fold(0.0, |acc, (_, (_, a))| acc + a)
}

fn build_report(
    table: &[Confusion],
    taxonomy: &LabelTaxonomy,
    kind: ElementKind,
    perc_area: f64,
) -> MetricsReport {
    let classes: Vec<ClassRow> = taxonomy
        .labeled_classes()
        .iter()
        .map(|c| {
            let conf = table[c.id as usize];
            ClassRow {
                id: c.id,
                name: c.name.clone(),
                confusion: conf,
                iou: if conf.gt_area() > 0.0 { conf.iou() } else { None },
            }
        })
        .collect();
    let included: Vec<f64> = classes.iter().filter_map(|c| c.iou).collect();
    let n = included.len();
    MetricsReport {
        classes,
        miou: (n > 0).then(|| included.iter().sum::<f64>() / n as f64),
        perc_area,
        n,
        element_kind: kind,
        area_source: AreaSource::of(kind),
        unlabeled_rule: UNLABELED_RULE.into(),
    }
}

/// Per-class IoU table, mIoU over classes with ground-truth area, and the
/// prediction's Perc.Area.
pub fn mean_iou(gt: &LabelMap, pred: &LabelMap, areas: &[f64], taxonomy: &LabelTaxonomy) -> Result<MetricsReport> {
    check_inputs(gt, pred, areas)?;
    let table = confusion_table(gt, pred, areas, taxonomy.max_id(), |_| true)?;
    let report = build_report(&table, taxonomy, gt.kind(), perc_area(pred, areas)?);
    if report.n == 0 {
        return Err(Error::Invalid("no class has ground-truth area".into()));
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub th: f64,
    /// `None` when no retained element has ground truth.
    pub miou: Option<f64>,
    pub perc_area: f64,
}

/// Scores the prediction restricted to elements with `u <= th` for each
/// threshold. Elements without an uncertainty entry count as `u = 1`.
pub fn uncertainty_sweep(
    gt: &LabelMap,
    pred: &LabelMap,
    u: &UncertaintyMap,
    areas: &[f64],
    taxonomy: &LabelTaxonomy,
    thresholds: &[f64],
) -> Result<Vec<SweepRow>> {
    check_inputs(gt, pred, areas)?;
    u.check_labels(pred)?;
    if thresholds.is_empty() {
        return Err(Error::Invalid("empty threshold list".into()));
    }
    let mut ths = thresholds.to_vec();
    ths.sort_by(f64::total_cmp);
    ths.dedup();
    let dense = u.dense(1.0);
    let total = areas.iter().fold(0.0, |a, b| a + b);
    if total <= 0.0 {
        return Err(Error::Invalid("sweep over an empty scene".into()));
    }
    ths.iter()
        .map(|&th| {
            let keep = |e: usize| dense[e] <= th;
            let table = confusion_table(gt, pred, areas, taxonomy.max_id(), keep)?;
            let pa = 100.0 * labeled_area(pred, areas, keep) / total;
            let r = build_report(&table, taxonomy, gt.kind(), pa);
            Ok(SweepRow {
                th,
                miou: r.miou,
                perc_area: pa,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["th", "miou", "perc_area"])?;
    for r in rows {
        w.write_record([
            r.th.to_string(),
            r.miou.map_or("NA".into(), |m| m.to_string()),
            r.perc_area.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Aligned text table: one column per class, then mIoU and Perc.Area; one
/// line per named report. Classes without ground truth show `-`.
pub fn text_table(rows: &[(&str, &MetricsReport)]) -> String {
    let Some((_, first)) = rows.first() else {
        return String::new();
    };
    let mut header: Vec<String> = vec![String::new()];
    header.extend(first.classes.iter().map(|c| c.name.clone()));
    header.push("mIoU".into());
    header.push("Perc.Area".into());
    let mut lines: Vec<Vec<String>> = vec![header];
    for (name, r) in rows {
        let mut cells = vec![name.to_string()];
        cells.extend(r.classes.iter().map(|c| c.iou.map_or("-".into(), |v| format!("{v:.4}"))));
        cells.push(r.miou.map_or("-".into(), |v| format!("{v:.4}")));
        cells.push(format!("{:.2}", r.perc_area));
        lines.push(cells);
    }
    let widths: Vec<usize> = (0..lines[0].len())
        .map(|i| lines.iter().map(|l| l[i].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for l in &lines {
        for (i, cell) in l.iter().enumerate() {
            if i == 0 {
                let _ = write!(out, "{cell:<w$}", w = widths[i]);
            } else {
                let _ = write!(out, "  {cell:>w$}", w = widths[i]);
            }
        }
        out.push('\n');
    }
    out
}
