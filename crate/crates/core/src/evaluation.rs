//! Classification metrics, ROC-AUC, the Wilcoxon signed-rank test with
//! Win/Tie/Loss verdicts, and rounds-to-target communication cost.

use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::Label;
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;
/// Largest effective sample size evaluated by exact enumeration.
pub const EXACT_WILCOXON_MAX_N: usize = 25;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn check_lengths(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::LengthMismatch { left, right });
    }
    if left == 0 {
        return Err(Error::EmptyInput("scores"));
    }
    Ok(())
}

/// Predicts defective when `score >= threshold`.
pub fn confusion(scores: &[f64], labels: &[Label], threshold: f64) -> Result<ConfusionCounts> {
    check_lengths(scores.len(), labels.len())?;
    let mut c = ConfusionCounts::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l.is_defective()) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1; any ratio with a zero denominator is 0.
pub fn metrics(c: &ConfusionCounts) -> Metrics {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    Metrics {
        precision,
        recall,
        f1: f1_score(precision, recall),
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Average ranks (1-based) with ties sharing the mean of their positions.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end share their mean
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Area under the ROC curve as the Mann-Whitney statistic: the fraction of
/// (defective, clean) pairs ordered correctly, ties counting one half.
pub fn auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let ranks = average_ranks(scores);
    let n_pos = labels.iter().filter(|l| l.is_defective()).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, l)| l.is_defective())
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WilcoxonMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Two-sided p-value.
    pub p_value: f64,
    /// Sum of ranks of the positive differences.
    pub w_plus: f64,
    /// Pairs left after dropping zero differences.
    pub n_effective: usize,
    /// Fewer than two informative pairs.
    pub degenerate: bool,
    pub method: WilcoxonMethod,
}

/// Two-sided Wilcoxon signed-rank test on paired samples `a` and `b`.
///
/// Zero differences are dropped and tied magnitudes get average ranks. Up to
/// [`EXACT_WILCOXON_MAX_N`] pairs the null distribution over all `2^n` sign
/// assignments is computed exactly; beyond that a tie-corrected normal
/// approximation with continuity correction is used.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::EmptyInput("need at least two pairs"));
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n == 0 {
        return Err(Error::AllZeroDifferences);
    }
    let magnitudes: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&magnitudes);
    let w_plus: f64 = ranks
        .iter()
        .zip(&diffs)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| r)
        .sum();

    let (p_value, method) = if n <= EXACT_WILCOXON_MAX_N {
        (exact_p(&ranks, w_plus), WilcoxonMethod::Exact)
    } else {
        (normal_p(&ranks, w_plus), WilcoxonMethod::Normal)
    };
    Ok(WilcoxonResult {
        p_value,
        w_plus,
        n_effective: n,
        degenerate: n < 2,
        method,
    })
}

/// Exact null distribution of W+ by dynamic programming over doubled
/// (integer) ranks; equivalent to enumerating every sign assignment.
fn exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let observed = (w_plus * 2.0).round() as usize;
    let all: f64 = counts.iter().sum();
    let lower: f64 = counts[..=observed].iter().sum::<f64>() / all;
    let upper: f64 = counts[observed..].iter().sum::<f64>() / all;
    (2.0 * lower.min(upper)).min(1.0)
}

fn normal_p(ranks: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
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
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let mut d = w_plus - mean;
    if d > 0.0 {
        d = (d - 0.5).max(0.0);
    } else if d < 0.0 {
        d = (d + 0.5).min(0.0);
    }
    let z = d / var.sqrt();
    let normal = Normal::standard();
    (2.0 * normal.sf(z.abs())).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Win,
    Tie,
    Loss,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Win => "Win",
            Verdict::Tie => "Tie",
            Verdict::Loss => "Loss",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignificanceVerdict {
    pub p_value: f64,
    pub verdict: Verdict,
}

pub fn win_tie_loss(p_value: f64, mean_ours: f64, mean_baseline: f64) -> SignificanceVerdict {
    let verdict = if p_value < SIGNIFICANCE_LEVEL && mean_ours > mean_baseline {
        Verdict::Win
    } else if p_value < SIGNIFICANCE_LEVEL && mean_baseline > mean_ours {
        Verdict::Loss
    } else {
        Verdict::Tie
    };
    SignificanceVerdict { p_value, verdict }
}

/// First round (1-based) from which a series never drops below the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoundsToTarget {
    Reached(usize),
    Censored,
}

pub fn rounds_to_target(series: &[f64], target: f64) -> RoundsToTarget {
    let below = series.iter().rposition(|&v| v < target);
    match below {
        None if series.is_empty() => RoundsToTarget::Censored,
        None => RoundsToTarget::Reached(1),
        Some(last) if last + 1 == series.len() => RoundsToTarget::Censored,
        Some(last) => RoundsToTarget::Reached(last + 2),
    }
}

/// Mean over repeats; any censored repeat censors the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MeanRounds {
    Mean(f64),
    Censored { horizon: usize },
}

pub fn mean_rounds(runs: &[RoundsToTarget], horizon: usize) -> MeanRounds {
    let mut total = 0usize;
    for run in runs {
        match run {
            RoundsToTarget::Reached(r) => total += r,
            RoundsToTarget::Censored => return MeanRounds::Censored { horizon },
        }
    }
    if runs.is_empty() {
        MeanRounds::Censored { horizon }
    } else {
        MeanRounds::Mean(total as f64 / runs.len() as f64)
    }
}

impl fmt::Display for MeanRounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeanRounds::Mean(m) => write!(f, "{m:.1}"),
            MeanRounds::Censored { horizon } => write!(f, ">{horizon}"),
        }
    }
}

/// Arithmetic mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Percentage with two decimals, e.g. `0.491372 -> "49.14"`.
pub fn percent(value: f64) -> String {
    format!("{:.2}", value * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;
    use proptest::prelude::*;
    use rand::Rng;

    fn labels(bits: &[u8]) -> Vec<Label> {
        bits.iter().map(|&b| if b == 1 { Label::Defective } else { Label::Clean }).collect()
    }

    /// O(n^2) pair counting.
    fn auc_pairs(scores: &[f64], labels: &[Label]) -> f64 {
        let mut num = 0.0;
        let mut pairs = 0.0;
        for (sp, lp) in scores.iter().zip(labels) {
            if !lp.is_defective() {
                continue;
            }
            for (sn, ln) in scores.iter().zip(labels) {
                if ln.is_defective() {
                    continue;
                }
                pairs += 1.0;
                if sp > sn {
                    num += 1.0;
                } else if sp == sn {
                    num += 0.5;
                }
            }
        }
        num / pairs
    }

    /// Enumerates every sign assignment of the ranks.
    fn wilcoxon_enumerated(diffs: &[f64]) -> f64 {
        let nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
        let ranks = average_ranks(&nz.iter().map(|d| d.abs()).collect::<Vec<_>>());
        let observed: f64 = ranks.iter().zip(&nz).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
        let n = nz.len();
        let (mut le, mut ge) = (0u64, 0u64);
        for mask in 0u64..(1 << n) {
            let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if w <= observed + 1e-9 {
                le += 1;
            }
            if w >= observed - 1e-9 {
                ge += 1;
            }
        }
        let total = (1u64 << n) as f64;
        (2.0 * (le as f64 / total).min(ge as f64 / total)).min(1.0)
    }

    #[test]
    fn confusion_examples() {
        let c = confusion(&[1.0; 4], &labels(&[1, 1, 1, 1]), 0.5).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 4, ..Default::default() });
        let c = confusion(&[0.0; 3], &labels(&[1, 1, 1]), 0.5).unwrap();
        assert_eq!(c, ConfusionCounts { fn_: 3, ..Default::default() });
        let c = confusion(&[0.6, 0.4, 0.5], &labels(&[1, 1, 0]), 0.5).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, fn_: 1, fp: 1, tn: 0 });
        assert_eq!(c.total(), 3);
        assert!(matches!(confusion(&[0.1], &labels(&[1, 0]), 0.5), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn metric_examples() {
        let m = metrics(&ConfusionCounts { tp: 50, fp: 50, tn: 0, fn_: 0 });
        assert_eq!((m.precision, m.recall), (0.5, 1.0));
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
        let m = metrics(&ConfusionCounts { tp: 0, fp: 0, tn: 0, fn_: 10 });
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert!((f1_score(0.37, 0.37) - 0.37).abs() < 1e-15);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &labels(&[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(auc(&[0.4; 4], &labels(&[1, 0, 1, 0])).unwrap(), 0.5);
        assert_eq!(auc(&[0.9, 0.8, 0.3], &labels(&[1, 0, 1])).unwrap(), 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &labels(&[1, 1])), Err(Error::SingleClass)));
    }

    #[test]
    fn wilcoxon_all_positive_five() {
        let r = wilcoxon_signed_rank(&[2.0, 3.0, 4.0, 5.0, 6.0], &[1.0; 5]).unwrap();
        assert_eq!(r.p_value, 0.0625);
        assert_eq!(r.method, WilcoxonMethod::Exact);
    }

    #[test]
    fn wilcoxon_single_nonzero_difference() {
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.5], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.n_effective, 1);
        assert!(r.degenerate);
        assert!(matches!(wilcoxon_signed_rank(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::AllZeroDifferences)));
    }

    #[test]
    fn wilcoxon_textbook_sample_matches_enumeration() {
        let diffs = [1.0, 2.0, 3.0, 4.0, -5.0];
        let zeros = [0.0; 5];
        let r = wilcoxon_signed_rank(&diffs, &zeros).unwrap();
        let oracle = wilcoxon_enumerated(&diffs);
        assert!((r.p_value - oracle).abs() < 1e-12);
        // W+ = 10 of 15; P(W+ >= 10) = 10/32 -> p = 0.625
        assert!((r.p_value - 0.625).abs() < 1e-12);
    }

    #[test]
    fn wilcoxon_exact_matches_enumeration_with_ties() {
        let diffs = [0.5, -0.5, 1.0, 2.0, 2.0, -3.0, 0.0, 4.0];
        let r = wilcoxon_signed_rank(&diffs, &[0.0; 8]).unwrap();
        assert!((r.p_value - wilcoxon_enumerated(&diffs)).abs() < 1e-12);
    }

    #[test]
    fn wilcoxon_normal_path_agrees_with_exact_at_n20() {
        for trial in 0..30u64 {
            let mut rng = rng_for(trial, &[0x11]);
            let shift: f64 = rng.random_range(-0.5..0.5);
            let diffs: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0) + shift).collect();
            let zeros = vec![0.0; 20];
            let exact = wilcoxon_signed_rank(&diffs, &zeros).unwrap();
            let ranks = average_ranks(&diffs.iter().map(|d| d.abs()).collect::<Vec<_>>());
            let approx = normal_p(&ranks, exact.w_plus);
            assert!((exact.p_value - approx).abs() < 0.01, "trial {trial}: {} vs {approx}", exact.p_value);
        }
    }

    #[test]
    fn verdict_examples() {
        assert_eq!(win_tie_loss(0.01, 49.0, 46.0).verdict, Verdict::Win);
        assert_eq!(win_tie_loss(0.01, 40.0, 46.0).verdict, Verdict::Loss);
        assert_eq!(win_tie_loss(0.30, 99.0, 1.0).verdict, Verdict::Tie);
        assert_eq!(win_tie_loss(0.01, 46.0, 46.0).verdict, Verdict::Tie);
        assert_eq!(win_tie_loss(0.05, 99.0, 1.0).verdict, Verdict::Tie);
    }

    #[test]
    fn rounds_examples() {
        let t = 0.5;
        let mut s = vec![0.6; 10];
        s[0] = 0.4;
        assert_eq!(rounds_to_target(&s, t), RoundsToTarget::Reached(2));
        let mut s = vec![0.4; 12];
        s[4] = 0.6; // round 5 touches
        for v in &mut s[8..] {
            *v = 0.7; // stable from round 9
        }
        assert_eq!(rounds_to_target(&s, t), RoundsToTarget::Reached(9));
        assert_eq!(rounds_to_target(&[0.6, 0.4], t), RoundsToTarget::Censored);
        let runs = [2, 3, 2, 2, 2].map(RoundsToTarget::Reached);
        assert!(matches!(mean_rounds(&runs, 50), MeanRounds::Mean(m) if (m - 2.2).abs() < 1e-12));
        let censored = [RoundsToTarget::Reached(2), RoundsToTarget::Censored];
        assert_eq!(mean_rounds(&censored, 50).to_string(), ">50");
        assert_eq!(MeanRounds::Mean(2.2).to_string(), "2.2");
    }

    #[test]
    fn percent_formatting() {
        assert_eq!(percent(0.491372), "49.14");
        assert_eq!(percent(0.0), "0.00");
    }

    proptest! {
        #[test]
        fn auc_equals_pair_counting(
            data in prop::collection::vec((0u8..20, any::<bool>()), 2..200),
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64 / 20.0).collect();
            let labels: Vec<Label> = data.iter().map(|(_, d)| if *d { Label::Defective } else { Label::Clean }).collect();
            prop_assume!(labels.iter().any(|l| l.is_defective()) && labels.iter().any(|l| !l.is_defective()));
            prop_assert_eq!(auc(&scores, &labels).unwrap(), auc_pairs(&scores, &labels));
            // rank statistic: invariant under strictly increasing maps
            let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            prop_assert_eq!(auc(&warped, &labels).unwrap(), auc(&scores, &labels).unwrap());
        }

        #[test]
        fn f1_lies_between_precision_and_recall(tp in 1usize..100, fp in 0usize..100, fn_ in 0usize..100) {
            let m = metrics(&ConfusionCounts { tp, fp, tn: 0, fn_ });
            prop_assert!(m.f1 >= m.precision.min(m.recall) - 1e-12 && m.f1 <= m.precision.max(m.recall) + 1e-12);
            prop_assert!((m.f1 - 2.0 * m.precision * m.recall / (m.precision + m.recall)).abs() <= 1e-12);
        }

        #[test]
        fn verdicts_need_significance(p in 0.05f64..=1.0, a in 0.0f64..100.0, b in 0.0f64..100.0) {
            prop_assert_eq!(win_tie_loss(p, a, b).verdict, Verdict::Tie);
        }

        #[test]
        fn rounds_are_monotone_in_target(series in prop::collection::vec(0.0f64..1.0, 1..50), t1 in 0.0f64..1.0, dt in 0.0f64..0.5) {
            let key = |r: RoundsToTarget| match r { RoundsToTarget::Reached(n) => n, RoundsToTarget::Censored => usize::MAX };
            prop_assert!(key(rounds_to_target(&series, t1 + dt)) >= key(rounds_to_target(&series, t1)));
        }
    }
}
