//! Threshold accuracy, oracle upper bounds, class-bias diagnostics and the
//! paired signed-rank test.

use crate::mesh::{LabelTable, Mesh};
use crate::sphere::{great_circle_distance, GeoPoint};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use std::fmt::Write as _;
use thiserror::Error;

/// Street, city, region, country and continent scales.
pub const DEFAULT_THRESHOLDS_KM: [f64; 5] = [1.0, 25.0, 200.0, 750.0, 2500.0];

/// Largest sample size whose signed-rank null distribution is computed exactly.
pub const EXACT_WILCOXON_MAX_N: usize = 25;

const SCALE_NAMES: [&str; 5] = ["Street", "City", "Region", "Country", "Continent"];

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no records to evaluate")]
    Empty,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid threshold list: {0}")]
    Thresholds(String),
    #[error("non-finite or negative error value {0}")]
    InvalidError(f64),
    #[error("class {class} has no label (table holds {labels})")]
    MissingLabel { class: usize, labels: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub image_id: String,
    pub predicted_class: usize,
    pub predicted: GeoPoint,
    pub truth: GeoPoint,
    pub error_km: f64,
}

impl EvalRecord {
    pub fn new(image_id: impl Into<String>, predicted_class: usize, predicted: GeoPoint, truth: GeoPoint) -> Self {
        Self {
            image_id: image_id.into(),
            predicted_class,
            predicted,
            truth,
            error_km: great_circle_distance(predicted, truth),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub thresholds_km: Vec<f64>,
    pub accuracy_pct: Vec<f64>,
    pub mean_km: f64,
    pub median_km: f64,
    pub n: usize,
}

fn check_thresholds(thresholds: &[f64]) -> Result<(), MetricsError> {
    if thresholds.is_empty() {
        return Err(MetricsError::Thresholds("empty".into()));
    }
    if thresholds.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(MetricsError::Thresholds("thresholds must be finite and non-negative".into()));
    }
    if thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MetricsError::Thresholds("thresholds must be strictly increasing".into()));
    }
    Ok(())
}

/// Median of a sample; mean of the two middle values for even sizes.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Some(if sorted.len() % 2 == 0 {
        0.5 * (sorted[mid - 1] + sorted[mid])
    } else {
        sorted[mid]
    })
}

/// Percentage of errors at or below each threshold, plus mean and median.
pub fn evaluate_errors(errors_km: &[f64], thresholds_km: &[f64]) -> Result<ThresholdTable, MetricsError> {
    check_thresholds(thresholds_km)?;
    if errors_km.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(bad) = errors_km.iter().find(|e| !e.is_finite() || **e < 0.0) {
        return Err(MetricsError::InvalidError(*bad));
    }
    let n = errors_km.len();
    let accuracy_pct = thresholds_km
        .iter()
        .map(|t| 100.0 * errors_km.iter().filter(|e| **e <= *t).count() as f64 / n as f64)
        .collect();
    Ok(ThresholdTable {
        thresholds_km: thresholds_km.to_vec(),
        accuracy_pct,
        mean_km: errors_km.iter().sum::<f64>() / n as f64,
        median_km: median(errors_km).expect("non-empty"),
        n,
    })
}

pub fn evaluate_thresholds(records: &[EvalRecord], thresholds_km: &[f64]) -> Result<ThresholdTable, MetricsError> {
    let errors: Vec<f64> = records.iter().map(|r| r.error_km).collect();
    evaluate_errors(&errors, thresholds_km)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestPossible {
    pub table: ThresholdTable,
    /// Truth points that fall in cells without a class.
    pub excluded: usize,
    pub total: usize,
}

impl BestPossible {
    pub fn coverage_pct(&self) -> f64 {
        100.0 * self.table.n as f64 / self.total as f64
    }
}

/// Accuracy obtained if every image received its own cell's class.
pub fn best_possible(
    mesh: &Mesh,
    labels: &LabelTable,
    truth: &[GeoPoint],
    thresholds_km: &[f64],
) -> Result<BestPossible, MetricsError> {
    let mut errors = Vec::with_capacity(truth.len());
    let mut excluded = 0;
    for p in truth {
        match mesh.assign(*p) {
            Some(class) => {
                let label = labels.label(class).ok_or(MetricsError::MissingLabel {
                    class,
                    labels: labels.len(),
                })?;
                errors.push(great_circle_distance(label, *p));
            }
            None => excluded += 1,
        }
    }
    Ok(BestPossible {
        table: evaluate_errors(&errors, thresholds_km)?,
        excluded,
        total: truth.len(),
    })
}

/// Mean squared chord distance between each class's member points and its label.
/// Classes without members are reported as `None`.
pub fn label_chord_dispersion(mesh: &Mesh, labels: &LabelTable, points: &[GeoPoint]) -> Vec<Option<f64>> {
    let mut sums = vec![0.0; labels.len()];
    let mut counts = vec![0usize; labels.len()];
    let label_vectors: Vec<_> = labels.points.iter().map(|p| p.to_unit_vector()).collect();
    for p in points {
        if let Some(class) = mesh.assign(*p) {
            if class < label_vectors.len() {
                sums[class] += p.to_unit_vector().chord_sq(&label_vectors[class]);
                counts[class] += 1;
            }
        }
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, c)| (*c > 0).then(|| s / *c as f64))
        .collect()
}

/// Per-class counts with add-one smoothed proportions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub counts: Vec<u64>,
}

impl ClassDistribution {
    pub fn from_counts(counts: Vec<u64>) -> Self {
        Self { counts }
    }

    pub fn from_classes(classes: impl IntoIterator<Item = usize>, num_classes: usize) -> Self {
        let mut counts = vec![0u64; num_classes];
        for c in classes {
            counts[c] += 1;
        }
        Self { counts }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn proportions(&self) -> Vec<f64> {
        let total = self.counts.iter().sum::<u64>() as f64 + self.counts.len() as f64;
        self.counts.iter().map(|c| (*c as f64 + 1.0) / total).collect()
    }

    /// Shannon entropy (nats) of the smoothed proportions.
    pub fn entropy(&self) -> f64 {
        -self.proportions().iter().map(|p| p * p.ln()).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub kl_divergence: f64,
    pub entropy_true: f64,
    pub entropy_pred: f64,
}

/// KL divergence of the predicted class distribution from the true one,
/// `sum p_true * ln(p_true / p_pred)`, with both entropies.
pub fn class_bias_report(truth: &ClassDistribution, predicted: &ClassDistribution) -> Result<BiasReport, MetricsError> {
    if truth.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            left: truth.len(),
            right: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(MetricsError::Empty);
    }
    let p = truth.proportions();
    let q = predicted.proportions();
    let kl = p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum::<f64>();
    Ok(BiasReport {
        kl_divergence: kl.max(0.0),
        entropy_true: truth.entropy(),
        entropy_pred: predicted.entropy(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of positive differences `e2 - e1`.
    pub statistic: f64,
    pub p_value: f64,
    /// `mean(e2) - mean(e1)`.
    pub mean_diff: f64,
    pub median_e1: f64,
    pub median_e2: f64,
    /// Pairs left after dropping zero differences.
    pub n_used: usize,
    pub exact: bool,
}

/// Average ranks (1-based) of `values`, ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|a, b| values[*a].total_cmp(&values[*b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Number of sign assignments giving each doubled positive-rank sum.
fn signed_rank_counts(doubled: &[usize]) -> Vec<u64> {
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &r in doubled {
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    counts
}

/// Two-sided paired signed-rank test on `e2 - e1`. Zero differences are
/// dropped; ties get average ranks. The null distribution is exact (conditional
/// on the observed ranks) up to [`EXACT_WILCOXON_MAX_N`] pairs and a
/// tie-corrected normal approximation beyond.
pub fn wilcoxon_signed_rank(e1: &[f64], e2: &[f64]) -> Result<WilcoxonResult, MetricsError> {
    if e1.len() != e2.len() {
        return Err(MetricsError::LengthMismatch {
            left: e1.len(),
            right: e2.len(),
        });
    }
    if e1.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(bad) = e1.iter().chain(e2).find(|v| !v.is_finite()) {
        return Err(MetricsError::InvalidError(*bad));
    }
    let n_all = e1.len() as f64;
    let mean_diff = e2.iter().sum::<f64>() / n_all - e1.iter().sum::<f64>() / n_all;
    let median_e1 = median(e1).expect("non-empty");
    let median_e2 = median(e2).expect("non-empty");
    let diffs: Vec<f64> = e1.iter().zip(e2).map(|(a, b)| b - a).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    let base = WilcoxonResult {
        statistic: 0.0,
        p_value: 1.0,
        mean_diff,
        median_e1,
        median_e2,
        n_used: n,
        exact: true,
    };
    if n == 0 {
        return Ok(base);
    }
    let magnitudes: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&magnitudes);
    let statistic: f64 = ranks.iter().zip(&diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();

    if n <= EXACT_WILCOXON_MAX_N {
        // Average ranks are multiples of one half, so doubled ranks are integers.
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let counts = signed_rank_counts(&doubled);
        let observed = (2.0 * statistic).round() as usize;
        let total = 2f64.powi(n as i32);
        let lower: u64 = counts[..=observed].iter().sum();
        let upper: u64 = counts[observed..].iter().sum();
        let p = (2.0 * lower.min(upper) as f64 / total).min(1.0);
        return Ok(WilcoxonResult {
            statistic,
            p_value: p,
            ..base
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = ranks.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let p = if var > 0.0 {
        let z = (statistic - mean) / var.sqrt();
        erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
    } else {
        1.0
    };
    Ok(WilcoxonResult {
        statistic,
        p_value: p,
        exact: false,
        ..base
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonSummary {
    pub stat: f64,
    pub p: f64,
}

/// Machine-readable evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub thresholds_km: Vec<f64>,
    pub accuracy_pct: Vec<f64>,
    pub mean_km: f64,
    pub median_km: f64,
    pub kl: Option<f64>,
    pub entropy_true: Option<f64>,
    pub entropy_pred: Option<f64>,
    pub wilcoxon: Option<WilcoxonSummary>,
    pub n: usize,
    pub coverage_pct: f64,
}

impl MetricsReport {
    pub fn new(table: &ThresholdTable, total: usize) -> Self {
        Self {
            thresholds_km: table.thresholds_km.clone(),
            accuracy_pct: table.accuracy_pct.clone(),
            mean_km: table.mean_km,
            median_km: table.median_km,
            kl: None,
            entropy_true: None,
            entropy_pred: None,
            wilcoxon: None,
            n: table.n,
            coverage_pct: if total == 0 { 0.0 } else { 100.0 * table.n as f64 / total as f64 },
        }
    }

    pub fn with_bias(mut self, bias: &BiasReport) -> Self {
        self.kl = Some(bias.kl_divergence);
        self.entropy_true = Some(bias.entropy_true);
        self.entropy_pred = Some(bias.entropy_pred);
        self
    }

    pub fn with_wilcoxon(mut self, w: &WilcoxonResult) -> Self {
        self.wilcoxon = Some(WilcoxonSummary {
            stat: w.statistic,
            p: w.p_value,
        });
        self
    }
}

fn threshold_heading(t: f64) -> String {
    let scale = DEFAULT_THRESHOLDS_KM
        .iter()
        .position(|d| *d == t)
        .map(|i| format!("{} ", SCALE_NAMES[i]))
        .unwrap_or_default();
    format!("{scale}{t} km")
}

/// Aligned text table: one row per named report, accuracy columns followed
/// by KL divergence, mean and median error.
pub fn render_table(rows: &[(&str, &MetricsReport)]) -> String {
    let Some((_, first)) = rows.first() else {
        return String::new();
    };
    let mut headers = vec!["Method".to_string()];
    headers.extend(first.thresholds_km.iter().map(|t| threshold_heading(*t)));
    headers.extend(["KL".to_string(), "Mean km".to_string(), "Median km".to_string(), "N".to_string()]);
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, r)| {
            let mut cells = vec![name.to_string()];
            cells.extend(r.accuracy_pct.iter().map(|a| format!("{a:.2}")));
            cells.push(r.kl.map_or("-".into(), |k| format!("{k:.4}")));
            cells.push(format!("{:.1}", r.mean_km));
            cells.push(format!("{:.1}", r.median_km));
            cells.push(r.n.to_string());
            cells
        })
        .collect();
    let widths: Vec<usize> = (0..headers.len())
        .map(|c| {
            body.iter()
                .filter_map(|row| row.get(c))
                .map(String::len)
                .chain(std::iter::once(headers[c].len()))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let line = |cells: &[String], out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&headers, &mut out);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(&rule, &mut out);
    for row in &body {
        line(row, &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{LabelMode, MeshParams};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn exact_predictions() {
        let t = evaluate_errors(&[0.0; 7], &DEFAULT_THRESHOLDS_KM).unwrap();
        assert_eq!(t.accuracy_pct, vec![100.0; 5]);
        assert_eq!(t.mean_km, 0.0);
        assert_eq!(t.median_km, 0.0);
    }

    #[test]
    fn one_of_ten_within_region() {
        let mut errors = vec![150.0];
        errors.extend([3000.0; 9]);
        let t = evaluate_errors(&errors, &DEFAULT_THRESHOLDS_KM).unwrap();
        assert_eq!(t.accuracy_pct, vec![0.0, 0.0, 10.0, 10.0, 10.0]);
    }

    #[test]
    fn boundary_is_inclusive() {
        let t = evaluate_errors(&[500.0; 4], &DEFAULT_THRESHOLDS_KM).unwrap();
        assert_eq!(t.accuracy_pct, vec![0.0, 0.0, 0.0, 100.0, 100.0]);
        let t = evaluate_errors(&[200.0], &DEFAULT_THRESHOLDS_KM).unwrap();
        assert_eq!(t.accuracy_pct[2], 100.0);
    }

    #[test]
    fn input_validation() {
        assert_eq!(evaluate_errors(&[], &DEFAULT_THRESHOLDS_KM), Err(MetricsError::Empty));
        assert!(matches!(evaluate_errors(&[1.0], &[5.0, 1.0]), Err(MetricsError::Thresholds(_))));
        assert!(matches!(evaluate_errors(&[f64::NAN], &[1.0]), Err(MetricsError::InvalidError(_))));
        assert_eq!(median(&[3.0, 1.0, 2.0, 10.0]), Some(2.5));
    }

    #[test]
    fn records_carry_distance() {
        let a = GeoPoint::new(0.0, 0.0).unwrap();
        let b = GeoPoint::new(0.0, 1.0).unwrap();
        let r = EvalRecord::new("x", 3, a, b);
        assert!(close(r.error_km, 6372.795 * 1f64.to_radians(), 1e-9));
        let t = evaluate_thresholds(&[r], &DEFAULT_THRESHOLDS_KM).unwrap();
        assert_eq!(t.accuracy_pct, vec![0.0, 0.0, 100.0, 100.0, 100.0]);
    }

    proptest! {
        #[test]
        fn accuracy_is_monotone(errors in prop::collection::vec(0.0f64..20_000.0, 1..200)) {
            let t = evaluate_errors(&errors, &DEFAULT_THRESHOLDS_KM).unwrap();
            for w in t.accuracy_pct.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
            prop_assert!(t.accuracy_pct.iter().all(|a| (0.0..=100.0).contains(a)));
        }

        #[test]
        fn kl_is_non_negative(p in prop::collection::vec(0u64..50, 2..12), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q: Vec<u64> = p.iter().map(|_| rng.random_range(0..50)).collect();
            let a = ClassDistribution::from_counts(p.clone());
            let r = class_bias_report(&a, &ClassDistribution::from_counts(q)).unwrap();
            prop_assert!(r.kl_divergence >= 0.0);
            prop_assert!(class_bias_report(&a, &a).unwrap().kl_divergence.abs() < 1e-15);
            let s: f64 = a.proportions().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(a.proportions().iter().all(|v| *v > 0.0));
        }
    }

    #[test]
    fn kl_and_entropy_fixtures() {
        let p = ClassDistribution::from_counts(vec![3, 1]);
        let q = ClassDistribution::from_counts(vec![1, 3]);
        let r = class_bias_report(&p, &q).unwrap();
        // Smoothed (2/3, 1/3) against (1/3, 2/3).
        let expected = (2.0 / 3.0) * (2.0f64).ln() + (1.0 / 3.0) * (0.5f64).ln();
        assert!(close(r.kl_divergence, expected, 1e-12));
        assert!(close(r.kl_divergence, 2f64.ln() / 3.0, 1e-12));
        assert!(close(r.kl_divergence, 0.2310, 5e-5));
        let uniform = ClassDistribution::from_counts(vec![7; 9]);
        assert!(close(uniform.entropy(), 9f64.ln(), 1e-12));
        assert!(close(r.entropy_true, r.entropy_pred, 1e-15));
        assert!(matches!(
            class_bias_report(&p, &ClassDistribution::from_counts(vec![1])),
            Err(MetricsError::LengthMismatch { .. })
        ));
        let d = ClassDistribution::from_classes([0, 2, 2], 3);
        assert_eq!(d.counts, vec![1, 0, 2]);
    }

    /// Two-sided p by walking all sign assignments of the given ranks.
    fn enumerate_p(ranks: &[f64], observed: f64) -> f64 {
        let n = ranks.len();
        let (mut low, mut high) = (0u64, 0u64);
        for mask in 0u64..(1 << n) {
            let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if s <= observed + 1e-9 {
                low += 1;
            }
            if s >= observed - 1e-9 {
                high += 1;
            }
        }
        (2.0 * low.min(high) as f64 / (1u64 << n) as f64).min(1.0)
    }

    #[test]
    fn exact_p_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=12 {
            for trial in 0..6 {
                let e1: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..100.0)).collect();
                // Rounded differences create ties; some trials shift one way.
                let e2: Vec<f64> = e1
                    .iter()
                    .map(|a| a + (rng.random_range(-5.0..5.0f64) + trial as f64).round())
                    .collect();
                let w = wilcoxon_signed_rank(&e1, &e2).unwrap();
                let diffs: Vec<f64> = e1.iter().zip(&e2).map(|(a, b)| b - a).filter(|d| *d != 0.0).collect();
                if diffs.is_empty() {
                    assert_eq!(w.p_value, 1.0);
                    continue;
                }
                let ranks = average_ranks(&diffs.iter().map(|d| d.abs()).collect::<Vec<_>>());
                let p = enumerate_p(&ranks, w.statistic);
                assert_eq!(w.p_value, p, "n={n} trial={trial}");
                assert!(w.exact);
            }
        }
    }

    #[test]
    fn known_small_sample_values() {
        // Six positive differences with distinct ranks: only the all-positive
        // and all-negative assignments are as extreme.
        let e1 = [0.0; 6];
        let e2 = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let w = wilcoxon_signed_rank(&e1, &e2).unwrap();
        assert_eq!(w.statistic, 21.0);
        assert_eq!(w.p_value, 2.0 / 64.0);
        assert_eq!(w.mean_diff, 3.5);
        assert_eq!(w.median_e2, 3.5);
        let same = wilcoxon_signed_rank(&e2, &e2).unwrap();
        assert_eq!((same.statistic, same.p_value), (0.0, 1.0));
        assert!(matches!(wilcoxon_signed_rank(&[1.0], &[]), Err(MetricsError::LengthMismatch { .. })));
    }

    #[test]
    fn p_shrinks_with_shift() {
        let base: Vec<f64> = (0..20).map(|i| ((i * 37) % 23) as f64 * 10.0).collect();
        let noise: Vec<f64> = (0..20).map(|i| ((i * 13) % 7) as f64 * 4.0 - 12.0).collect();
        let mut last = f64::INFINITY;
        for shift in [0.0, 2.0, 4.0, 8.0, 16.0, 32.0] {
            let e2: Vec<f64> = base.iter().zip(&noise).map(|(b, n)| b + n + shift).collect();
            let p = wilcoxon_signed_rank(&base, &e2).unwrap().p_value;
            assert!(p <= last, "shift {shift}: {p} > {last}");
            last = p;
        }
        assert!(last < 1e-4);
    }

    #[test]
    fn normal_approximation_near_exact_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let e1: Vec<f64> = (0..26).map(|_| rng.random_range(0.0..10.0)).collect();
        let e2: Vec<f64> = e1.iter().map(|a| a + rng.random_range(-2.0..3.0)).collect();
        let approx = wilcoxon_signed_rank(&e1, &e2).unwrap();
        assert!(!approx.exact);
        let ranks = average_ranks(&e1.iter().zip(&e2).map(|(a, b)| (b - a).abs()).collect::<Vec<_>>());
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r) as usize).collect();
        let counts = signed_rank_counts(&doubled);
        let obs = (2.0 * approx.statistic).round() as usize;
        let total = 2f64.powi(26);
        let exact = 2.0 * (counts[..=obs].iter().sum::<u64>().min(counts[obs..].iter().sum::<u64>())) as f64 / total;
        assert!((approx.p_value - exact.min(1.0)).abs() < 0.02, "{} vs {exact}", approx.p_value);
    }

    #[test]
    fn average_ranks_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    fn small_mesh() -> Mesh {
        Mesh::build_initial(MeshParams {
            init_rows: 6,
            init_cols: 8,
            refinement_limit: 40,
            minimum_examples: 3,
            max_depth: 4,
        })
        .unwrap()
    }

    #[test]
    fn best_possible_matches_brute_force() {
        let mut mesh = small_mesh();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let points: Vec<GeoPoint> = (0..300)
            .map(|_| GeoPoint::new(rng.random_range(-60.0..60.0), rng.random_range(-170.0..170.0)).unwrap())
            .collect();
        mesh.refine_and_prune(&points).unwrap();
        for mode in [LabelMode::CellCentroid, LabelMode::ImageryCentroid] {
            let labels = mesh.compute_cell_labels(&points, mode).unwrap();
            let bp = best_possible(&mesh, &labels, &points, &DEFAULT_THRESHOLDS_KM).unwrap();
            // Brute force: find the containing cell by scanning every active cell.
            let errors: Vec<f64> = points
                .iter()
                .filter_map(|p| {
                    let v = p.to_unit_vector();
                    let class = (0..mesh.num_classes())
                        .find(|c| mesh.contains(mesh.cell_id_of_class(*c).unwrap(), &v))?;
                    Some(great_circle_distance(labels.label(class).unwrap(), *p))
                })
                .collect();
            assert_eq!(bp.table, evaluate_errors(&errors, &DEFAULT_THRESHOLDS_KM).unwrap());
            assert_eq!(bp.excluded + bp.table.n, bp.total);
        }
    }

    #[test]
    fn single_member_cells_are_exact_with_imagery_labels() {
        let mut mesh = Mesh::build_initial(MeshParams {
            minimum_examples: 1,
            ..small_mesh().params().clone()
        })
        .unwrap();
        let points: Vec<GeoPoint> = mesh.leaves().map(|c| mesh.cell_centroid(c.id)).collect();
        mesh.populate(&points);
        let labels = mesh.compute_cell_labels(&points, LabelMode::ImageryCentroid).unwrap();
        let bp = best_possible(&mesh, &labels, &points, &DEFAULT_THRESHOLDS_KM).unwrap();
        assert_eq!(bp.table.accuracy_pct[0], 100.0);
        assert_eq!(bp.coverage_pct(), 100.0);
    }

    #[test]
    fn imagery_labels_never_have_larger_chord_dispersion() {
        let mut mesh = small_mesh();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let points: Vec<GeoPoint> = (0..500)
            .map(|_| GeoPoint::new(rng.random_range(-89.0..89.0), rng.random_range(-180.0..180.0)).unwrap())
            .collect();
        mesh.populate(&points);
        let cell = mesh.compute_cell_labels(&points, LabelMode::CellCentroid).unwrap();
        let imagery = mesh.compute_cell_labels(&points, LabelMode::ImageryCentroid).unwrap();
        let a = label_chord_dispersion(&mesh, &cell, &points);
        let b = label_chord_dispersion(&mesh, &imagery, &points);
        for (x, y) in a.iter().zip(&b) {
            let (x, y) = (x.unwrap(), y.unwrap());
            assert!(y <= x + 1e-15);
        }
    }

    #[test]
    fn report_json_and_table() {
        let t = evaluate_errors(&[10.0, 300.0, 900.0, 3000.0], &DEFAULT_THRESHOLDS_KM).unwrap();
        let bias = class_bias_report(
            &ClassDistribution::from_counts(vec![3, 1]),
            &ClassDistribution::from_counts(vec![1, 3]),
        )
        .unwrap();
        let w = wilcoxon_signed_rank(&[1.0, 2.0, 3.0], &[2.0, 2.5, 5.0]).unwrap();
        let r = MetricsReport::new(&t, 5).with_bias(&bias).with_wilcoxon(&w);
        let json = serde_json::to_value(&r).unwrap();
        for key in [
            "thresholds_km",
            "accuracy_pct",
            "mean_km",
            "median_km",
            "kl",
            "entropy_true",
            "entropy_pred",
            "wilcoxon",
            "n",
            "coverage_pct",
        ] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert_eq!(json["coverage_pct"], 80.0);
        assert!(json["wilcoxon"].get("stat").is_some() && json["wilcoxon"].get("p").is_some());
        let text = render_table(&[("baseline", &r), ("adjusted", &r)]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].contains("Region 200 km"));
        assert!(lines[2].starts_with("baseline"));
        assert_eq!(lines[2].len(), lines[3].len());
    }
}
