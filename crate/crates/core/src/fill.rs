//! K-nearest-neighbor label filling, plain and uncertainty-weighted.
//!
//! Filling is single pass: only elements labeled in the input vote, never
//! elements filled by the same call.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::UncertaintyMap;
use crate::geom::Point;
use crate::labels::{LabelId, LabelMap, VOID};
use crate::spatial::KdTree;

/// How a source's uncertainty turns into its vote weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// `w = 1 - u`: confident neighbors count more.
    #[default]
    Confidence,
    /// `w = u`.
    PaperLiteral,
}

impl Weighting {
    pub fn weight(self, u: f64) -> f64 {
        match self {
            Weighting::Confidence => 1.0 - u,
            Weighting::PaperLiteral => u,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Weighting::Confidence => "confidence",
            Weighting::PaperLiteral => "paper-literal",
        }
    }
}

impl FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "confidence" => Ok(Weighting::Confidence),
            "paper-literal" => Ok(Weighting::PaperLiteral),
            _ => Err(Error::Invalid(format!(
                "unknown weighting '{s}', expected confidence or paper-literal"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FillConfig {
    pub k: usize,
    pub th_u: Option<f64>,
    pub weighting: Weighting,
}

impl Default for FillConfig {
    fn default() -> Self {
        Self {
            k: 5,
            th_u: None,
            weighting: Weighting::Confidence,
        }
    }
}

impl FillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Invalid("k must be at least 1".into()));
        }
        if let Some(t) = self.th_u {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Invalid(format!("th_u {t} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Highest-weight label, ties to the smallest id. `votes` holds
/// `(label, weight)` pairs in any order.
fn weighted_argmax(votes: &mut [(LabelId, f64)]) -> LabelId {
    votes.sort_by_key(|v| v.0);
    let mut best = (VOID, f64::NEG_INFINITY);
    let mut i = 0;
    while i < votes.len() {
        let l = votes[i].0;
        let mut w = 0.0;
        while i < votes.len() && votes[i].0 == l {
            w += votes[i].1;
            i += 1;
        }
        if w > best.1 {
            best = (l, w);
        }
    }
    best.0
}

fn check_positions(labels: &LabelMap, positions: &[Point]) -> Result<()> {
    if positions.len() != labels.len() {
        return Err(Error::SceneMismatch(format!(
            "{} positions for {} elements",
            positions.len(),
            labels.len()
        )));
    }
    Ok(())
}

fn run(
    labels: &LabelMap,
    positions: &[Point],
    k: usize,
    sources: Vec<u32>,
    weights: Vec<f64>,
    targets: Vec<u32>,
) -> Result<LabelMap> {
    if sources.is_empty() {
        return Err(Error::NoSources);
    }
    // Weight lookup by element id.
    let mut weight_of = vec![0.0; labels.len()];
    for (&s, &w) in sources.iter().zip(&weights) {
        weight_of[s as usize] = w;
    }
    let pts: Vec<Point> = sources.iter().map(|&s| positions[s as usize]).collect();
    let tree = KdTree::build_with_ids(&pts, sources)?;
    let filled: Vec<LabelId> = targets
        .par_iter()
        .map(|&t| {
            let mut votes: Vec<(LabelId, f64)> = tree
                .nearest(&positions[t as usize], k)
                .iter()
                .map(|n| (labels.get(n.id as usize), weight_of[n.id as usize]))
                .collect();
            weighted_argmax(&mut votes)
        })
        .collect();
    let mut out = labels.clone();
    for (&t, &l) in targets.iter().zip(&filled) {
        out.labels_mut()[t as usize] = l;
    }
    Ok(out)
}

/// Labels every void element by majority over its `k` nearest labeled
/// elements.
pub fn fill_unlabeled(labels: &LabelMap, positions: &[Point], config: &FillConfig) -> Result<LabelMap> {
    config.validate()?;
    check_positions(labels, positions)?;
    let sources: Vec<u32> = labels.entries().map(|(e, _)| e as u32).collect();
    let weights = vec![1.0; sources.len()];
    run(labels, positions, config.k, sources, weights, labels.unlabeled_elements())
}

/// Relabels void elements and elements with `u > th_u` from the `k` nearest
/// labeled elements with `u <= th_u`, each voting with its uncertainty
/// weight.
pub fn fill_with_uncertainty(
    labels: &LabelMap,
    uncertainty: &UncertaintyMap,
    positions: &[Point],
    config: &FillConfig,
) -> Result<LabelMap> {
    config.validate()?;
    check_positions(labels, positions)?;
    uncertainty.check_labels(labels)?;
    let th = config
        .th_u
        .ok_or_else(|| Error::Invalid("uncertainty fill needs th_u".into()))?;
    let mut sources = Vec::new();
    let mut weights = Vec::new();
    let mut targets = Vec::new();
    for (e, &l) in labels.labels().iter().enumerate() {
        if l == VOID {
            targets.push(e as u32);
            continue;
        }
        let u = uncertainty
            .u(e)
            .ok_or_else(|| Error::Invalid(format!("labeled element {e} has no uncertainty entry")))?;
        if u <= th {
            sources.push(e as u32);
            weights.push(config.weighting.weight(u));
        } else {
            targets.push(e as u32);
        }
    }
    run(labels, positions, config.k, sources, weights, targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::UncertaintyEntry;
    use crate::labels::ElementKind;
    use crate::synth;
    use proptest::prelude::*;
    use rand::Rng;

    fn line(n: usize) -> Vec<Point> {
        (0..n).map(|i| Point::new(i as f64, 0.0, 0.0)).collect()
    }

    fn map(l: &[LabelId]) -> LabelMap {
        LabelMap::from_labels("s", ElementKind::Point, l.to_vec())
    }

    fn umap(u: &[Option<f64>]) -> UncertaintyMap {
        let e = u
            .iter()
            .map(|x| x.map(|u| UncertaintyEntry { u, raw_entropy: 0.0, n_votes: 2 }))
            .collect();
        UncertaintyMap::new("s", ElementKind::Point, 2, 11, e).unwrap()
    }

    #[test]
    fn majority_of_three() {
        // Element 3 sees 2 (A), 4 (A), 1 (B) within k = 3.
        let pos = vec![
            Point::new(10.0, 0.0, 0.0),
            Point::new(1.5, 0.0, 0.0),
            Point::new(1.0, 0.0, 0.0),
            Point::new(0.0, 0.0, 0.0),
            Point::new(-1.0, 0.0, 0.0),
        ];
        let out = fill_unlabeled(&map(&[9, 2, 1, 0, 1]), &pos, &FillConfig { k: 3, ..Default::default() }).unwrap();
        assert_eq!(out.get(3), 1);
        assert_eq!(out.labeled_count(), 5);
    }

    #[test]
    fn complete_input_is_unchanged() {
        let m = map(&[1, 2, 3, 4]);
        assert_eq!(fill_unlabeled(&m, &line(4), &FillConfig::default()).unwrap(), m);
    }

    #[test]
    fn no_sources_is_an_error() {
        let err = fill_unlabeled(&map(&[0, 0]), &line(2), &FillConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NoSources));
        let cfg = FillConfig { th_u: Some(0.1), ..Default::default() };
        let err = fill_with_uncertainty(&map(&[1, 0]), &umap(&[Some(0.5), None]), &line(2), &cfg).unwrap_err();
        assert!(matches!(err, Error::NoSources));
    }

    #[test]
    fn weighted_two_source_example() {
        // Target 1 between a confident A and an uncertain B.
        let m = map(&[3, 0, 5]);
        let u = umap(&[Some(0.0), None, Some(0.9)]);
        let cfg = FillConfig { k: 2, th_u: Some(1.0), weighting: Weighting::Confidence };
        assert_eq!(fill_with_uncertainty(&m, &u, &line(3), &cfg).unwrap().get(1), 3);
        let literal = FillConfig { weighting: Weighting::PaperLiteral, ..cfg };
        assert_eq!(fill_with_uncertainty(&m, &u, &line(3), &literal).unwrap().get(1), 5);
    }

    #[test]
    fn confident_sources_never_change() {
        let m = map(&[1, 1, 2, 2, 2]);
        let u = umap(&[Some(0.0), Some(0.9), Some(0.0), Some(0.2), Some(0.95)]);
        let cfg = FillConfig { k: 2, th_u: Some(0.5), ..Default::default() };
        let out = fill_with_uncertainty(&m, &u, &line(5), &cfg).unwrap();
        for e in [0, 2, 3] {
            assert_eq!(out.get(e), m.get(e));
        }
        // Element 1's nearest confident sources are 0 (label 1) and 2 (label 2), equal weight 1 vs 1.
        assert_eq!(out.get(1), 1);
    }

    #[test]
    fn labeled_element_without_u_is_rejected() {
        let cfg = FillConfig { th_u: Some(0.5), ..Default::default() };
        assert!(fill_with_uncertainty(&map(&[1, 2]), &umap(&[Some(0.0), None]), &line(2), &cfg).is_err());
    }

    fn brute_fill(labels: &[LabelId], pos: &[Point], u: Option<(&[f64], f64, Weighting)>, k: usize) -> Vec<LabelId> {
        let is_source = |e: usize| labels[e] != 0 && u.is_none_or(|(u, th, _)| u[e] <= th);
        (0..labels.len())
            .map(|t| {
                if is_source(t) {
                    return labels[t];
                }
                let mut c: Vec<(f64, usize)> = (0..labels.len())
                    .filter(|&s| is_source(s))
                    .map(|s| ((pos[s] - pos[t]).norm_squared(), s))
                    .collect();
                c.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let mut w = std::collections::BTreeMap::<LabelId, f64>::new();
                for &(_, s) in c.iter().take(k) {
                    let wt = u.map_or(1.0, |(u, _, r)| r.weight(u[s]));
                    *w.entry(labels[s]).or_default() += wt;
                }
                let mut best = (0, f64::NEG_INFINITY);
                for (l, x) in w {
                    if x > best.1 {
                        best = (l, x);
                    }
                }
                best.0
            })
            .collect()
    }

    #[test]
    fn matches_brute_force_on_partial_scene() {
        let cloud = synth::random_cloud(500, [0.0; 3], [1.0; 3], 5);
        let gt = synth::region_labels("s", ElementKind::Point, cloud.points(), 8, 6, 5);
        let mut r = synth::rng(6);
        let partial: Vec<LabelId> = gt.labels().iter().map(|&l| if r.random_bool(0.3) { 0 } else { l }).collect();
        for k in [1, 3, 5] {
            let cfg = FillConfig { k, ..Default::default() };
            let out = fill_unlabeled(&map(&partial), cloud.points(), &cfg).unwrap();
            assert_eq!(out.labels(), brute_fill(&partial, cloud.points(), None, k).as_slice());
            assert_eq!(out.labeled_count(), 500);
        }
    }

    proptest! {
        #[test]
        fn uncertainty_fill_matches_brute_force(seed in 0u64..500, k in 1usize..6, th in 0.2f64..1.0, lit in any::<bool>()) {
            let n = 120;
            let cloud = synth::random_cloud(n, [0.0; 3], [1.0; 3], seed);
            let mut r = synth::rng(seed + 1);
            let labels: Vec<LabelId> = (0..n).map(|_| if r.random_bool(0.2) { 0 } else { r.random_range(1..5) }).collect();
            let u: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
            let um = umap(&labels.iter().zip(&u).map(|(&l, &u)| (l != 0).then_some(u)).collect::<Vec<_>>());
            let w = if lit { Weighting::PaperLiteral } else { Weighting::Confidence };
            let cfg = FillConfig { k, th_u: Some(th), weighting: w };
            match fill_with_uncertainty(&map(&labels), &um, cloud.points(), &cfg) {
                Ok(out) => {
                    let expect = brute_fill(&labels, cloud.points(), Some((&u, th, w)), k);
                    prop_assert_eq!(out.labels(), expect.as_slice());
                    prop_assert_eq!(out.labeled_count(), n);
                }
                Err(Error::NoSources) => prop_assert!(labels.iter().zip(&u).all(|(&l, &x)| l == 0 || x > th)),
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
        }

        #[test]
        fn fill_is_complete_and_idempotent(seed in 0u64..500, frac in 0.0f64..0.95) {
            let cloud = synth::random_cloud(80, [0.0; 3], [1.0; 3], seed);
            let mut r = synth::rng(seed);
            let mut labels: Vec<LabelId> = (0..80).map(|_| if r.random_bool(frac) { 0 } else { r.random_range(1..4) }).collect();
            labels[0] = 1;
            let out = fill_unlabeled(&map(&labels), cloud.points(), &FillConfig::default()).unwrap();
            prop_assert_eq!(out.labeled_count(), 80);
            prop_assert_eq!(fill_unlabeled(&out, cloud.points(), &FillConfig::default()).unwrap(), out);
        }
    }
}
