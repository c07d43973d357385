//! Synthetic noisy annotators for experiments.

use rand::Rng;

use crate::error::{Error, Result};
use crate::labels::{LabelId, LabelMap, VOID};
use crate::synth;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationConfig {
    pub annotators: usize,
    /// Probability that a labeled element keeps its ground-truth label.
    pub accuracy: f64,
    /// Probability that an annotator labels an element at all.
    pub coverage: f64,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            annotators: 5,
            accuracy: 0.8,
            coverage: 1.0,
            seed: 0,
        }
    }
}

/// `annotators` maps over the elements of `gt`. Each non-void element is
/// labeled with probability `coverage`; a labeled element is correct with
/// probability `accuracy`, otherwise uniform over the other labels
/// `1..=class_count`. Void ground truth stays void. Annotator `i` draws from
/// its own stream seeded by `(seed, i)`.
pub fn simulate_annotators(gt: &LabelMap, class_count: usize, cfg: &SimulationConfig) -> Result<Vec<LabelMap>> {
    if cfg.annotators == 0 {
        return Err(Error::Invalid("need at least one annotator".into()));
    }
    if !(0.0..=1.0).contains(&cfg.accuracy) || !(0.0..=1.0).contains(&cfg.coverage) {
        return Err(Error::Invalid("accuracy and coverage must lie in [0, 1]".into()));
    }
    if class_count < 1 || class_count > LabelId::MAX as usize {
        return Err(Error::Invalid(format!("bad class count {class_count}")));
    }
    if let Some(&bad) = gt.labels().iter().find(|&&l| l as usize > class_count) {
        return Err(Error::UnknownLabel(bad as u32));
    }
    if class_count == 1 && cfg.accuracy < 1.0 {
        return Err(Error::Invalid("a wrong label needs at least two classes".into()));
    }
    Ok((0..cfg.annotators)
        .map(|a| {
            let mut r = synth::rng(cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(a as u64));
            let labels = gt
                .labels()
                .iter()
                .map(|&g| {
                    if g == VOID {
                        return VOID;
                    }
                    if cfg.coverage < 1.0 && !r.random_bool(cfg.coverage) {
                        return VOID;
                    }
                    if cfg.accuracy >= 1.0 || r.random_bool(cfg.accuracy) {
                        return g;
                    }
                    // Uniform over the class_count - 1 wrong labels.
                    let k = r.random_range(1..class_count as LabelId);
                    if k >= g {
                        k + 1
                    } else {
                        k
                    }
                })
                .collect();
            LabelMap::from_labels(gt.scene_id(), gt.kind(), labels)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::ElementKind;

    fn gt(n: usize) -> LabelMap {
        LabelMap::from_labels("s", ElementKind::Face, (0..n).map(|i| (i % 11) as LabelId + 1).collect())
    }

    #[test]
    fn perfect_accuracy_copies_gt() {
        let g = gt(500);
        let cfg = SimulationConfig { accuracy: 1.0, ..Default::default() };
        for m in simulate_annotators(&g, 11, &cfg).unwrap() {
            assert_eq!(m, g);
        }
    }

    #[test]
    fn deterministic_and_distinct_per_annotator() {
        let g = gt(2000);
        let a = simulate_annotators(&g, 11, &SimulationConfig::default()).unwrap();
        let b = simulate_annotators(&g, 11, &SimulationConfig::default()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn error_rate_and_wrong_label_spread() {
        let g = gt(50_000);
        let cfg = SimulationConfig { annotators: 1, accuracy: 0.7, ..Default::default() };
        let m = &simulate_annotators(&g, 11, &cfg).unwrap()[0];
        let correct = m.labels().iter().zip(g.labels()).filter(|(a, b)| a == b).count();
        let acc = correct as f64 / 50_000.0;
        assert!((acc - 0.7).abs() < 0.01, "{acc}");
        assert!(m.labels().iter().all(|&l| (1..=11).contains(&l)));
        // Wrong labels for gt = 1 spread over 2..=11.
        let mut hist = [0usize; 12];
        for (&p, &t) in m.labels().iter().zip(g.labels()) {
            if t == 1 && p != 1 {
                hist[p as usize] += 1;
            }
        }
        assert_eq!(hist[0], 0);
        assert!(hist[2..].iter().all(|&c| c > 80));
    }

    #[test]
    fn void_and_coverage() {
        let mut g = gt(10_000);
        g.set(0, VOID).unwrap();
        let cfg = SimulationConfig { annotators: 2, coverage: 0.6, ..Default::default() };
        let ms = simulate_annotators(&g, 11, &cfg).unwrap();
        assert_eq!(ms[0].get(0), VOID);
        let frac = ms[0].labeled_count() as f64 / 10_000.0;
        assert!((frac - 0.6).abs() < 0.02);
    }
}
