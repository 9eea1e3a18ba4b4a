//! Run-level evaluation: splitting labeled runs, classifying whole runs with
//! the two-threshold rule, and the false-alarm / malware-miss / weighted F1
//! report.
//!
//! The weighted F1 is
//!
//! ```text
//! F1 = 2·TP·w_m / (2·TP·w_m + FP·w_h + FN·w_m)
//! ```
//!
//! By default `w_m = 1 / #malware runs` and `w_h = 1 / #healthy runs` in the
//! evaluated set, which normalizes each class by its size so the usual
//! malware-heavy imbalance cannot inflate the score.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::autoencoder::AeModel;
use crate::detector::{classify_psd, fraction_exceeds, reconstruction_error, Decision, DetectorConfig, PsdClass};
use crate::error::{Error, Result};
use crate::rng;

pub const REPORT_CSV_HEADER: &str = "benchmark_id,fa_rate,mm_rate,f1,tp,fp,fn,tn";
pub const OVERALL_ID: &str = "overall";

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRun {
    pub run_id: String,
    pub benchmark_id: String,
    pub label: Decision,
    /// PSD rows of this run.
    pub features: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    /// (train, validation, test) fractions of healthy runs.
    pub healthy: [f64; 3],
    /// (validation, test) fractions of malware runs.
    pub malware: [f64; 2],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            healthy: [0.60, 0.20, 0.20],
            malware: [0.50, 0.50],
            seed: 0,
        }
    }
}

pub const MIN_HEALTHY_RUNS: usize = 5;
pub const MIN_MALWARE_RUNS: usize = 2;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<LabeledRun>,
    pub val: Vec<LabeledRun>,
    pub test: Vec<LabeledRun>,
}

/// Rounds `fractions · n` to the nearest integer for every part but the
/// last, gives the last part the remainder, then moves runs from the largest
/// part into any empty one.
pub fn partition_sizes(n: usize, fractions: &[f64]) -> Result<Vec<usize>> {
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || fractions.iter().any(|&f| !(0.0..=1.0).contains(&f)) {
        return Err(Error::InvalidConfig(format!(
            "split fractions must be in [0, 1] and sum to 1, got {fractions:?}"
        )));
    }
    if n < fractions.len() {
        return Err(Error::TooFew {
            what: "runs to fill every partition",
            needed: fractions.len(),
            got: n,
        });
    }
    let mut sizes: Vec<usize> = fractions[..fractions.len() - 1]
        .iter()
        .map(|f| (f * n as f64).round() as usize)
        .collect();
    let assigned: usize = sizes.iter().sum();
    sizes.push(n.saturating_sub(assigned));
    while sizes.iter().sum::<usize>() > n {
        let i = argmax(&sizes);
        sizes[i] -= 1;
    }
    while let Some(empty) = sizes.iter().position(|&s| s == 0) {
        let i = argmax(&sizes);
        sizes[i] -= 1;
        sizes[empty] += 1;
    }
    Ok(sizes)
}

fn argmax(v: &[usize]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Splits whole runs per (benchmark, label) group after a seeded shuffle.
/// Healthy runs go to train/val/test, malware runs only to val/test.
pub fn split_runs(runs: Vec<LabeledRun>, spec: &SplitSpec) -> Result<Splits> {
    let mut groups: BTreeMap<(String, Decision), Vec<LabeledRun>> = BTreeMap::new();
    let mut benchmarks: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for run in runs {
        let counts = benchmarks.entry(run.benchmark_id.clone()).or_default();
        match run.label {
            Decision::Healthy => counts.0 += 1,
            Decision::Malware => counts.1 += 1,
        }
        groups
            .entry((run.benchmark_id.clone(), run.label))
            .or_default()
            .push(run);
    }
    if benchmarks.is_empty() {
        return Err(Error::Empty("no runs to split"));
    }
    for (healthy, malware) in benchmarks.values() {
        if *healthy < MIN_HEALTHY_RUNS {
            return Err(Error::TooFew {
                what: "healthy runs per benchmark",
                needed: MIN_HEALTHY_RUNS,
                got: *healthy,
            });
        }
        if *malware < MIN_MALWARE_RUNS {
            return Err(Error::TooFew {
                what: "malware runs per benchmark",
                needed: MIN_MALWARE_RUNS,
                got: *malware,
            });
        }
    }

    let mut prng = rng::seeded(spec.seed);
    let mut out = Splits::default();
    for ((_, label), mut group) in groups {
        group.sort_by(|a, b| a.run_id.cmp(&b.run_id));
        let n = group.len();
        let order = rng::permutation(&mut prng, n);
        let mut slots: Vec<Option<LabeledRun>> = group.into_iter().map(Some).collect();
        let mut shuffled = order.into_iter().map(|i| slots[i].take().expect("permutation"));
        let targets: Vec<(usize, &mut Vec<LabeledRun>)> = match label {
            Decision::Healthy => {
                let sizes = partition_sizes(n, &spec.healthy)?;
                vec![
                    (sizes[0], &mut out.train),
                    (sizes[1], &mut out.val),
                    (sizes[2], &mut out.test),
                ]
            }
            Decision::Malware => {
                let sizes = partition_sizes(n, &spec.malware)?;
                vec![(sizes[0], &mut out.val), (sizes[1], &mut out.test)]
            }
        };
        for (size, dest) in targets {
            dest.extend(shuffled.by_ref().take(size));
        }
    }
    Ok(out)
}

/// Applies the per-PSD threshold to every row of a run and the outlier
/// fraction rule to the run as a whole.
pub fn classify_run(model: &AeModel, run: &LabeledRun, cfg: &DetectorConfig) -> Result<Decision> {
    if cfg.model_id != run.benchmark_id {
        return Err(Error::ModelMismatch {
            model: cfg.model_id.clone(),
            benchmark: run.benchmark_id.clone(),
        });
    }
    run_outlier_decision(model, &run.features, cfg)
}

pub(crate) fn run_outlier_decision(model: &AeModel, rows: &[Vec<f64>], cfg: &DetectorConfig) -> Result<Decision> {
    if rows.is_empty() {
        return Err(Error::Empty("run has no features"));
    }
    let mut outliers = 0;
    for row in rows {
        if classify_psd(reconstruction_error(model, row)?, cfg) == PsdClass::Outlier {
            outliers += 1;
        }
    }
    Ok(if fraction_exceeds(outliers, rows.len(), cfg.t_o) {
        Decision::Malware
    } else {
        Decision::Healthy
    })
}

/// `2·tp·w_m / (2·tp·w_m + fp·w_h + fn·w_m)`.
pub fn weighted_f1(tp: u64, fp: u64, fn_: u64, w_m: f64, w_h: f64) -> Result<f64> {
    if !(w_m > 0.0 && w_h > 0.0 && w_m.is_finite() && w_h.is_finite()) {
        return Err(Error::InvalidConfig("F1 weights must be positive".into()));
    }
    let num = 2.0 * tp as f64 * w_m;
    let den = num + fp as f64 * w_h + fn_ as f64 * w_m;
    if den == 0.0 {
        return Err(Error::Undefined("weighted F1 with tp = fp = fn = 0"));
    }
    Ok(num / den)
}

/// False-alarm rate `fp / (fp + tn)`.
pub fn fa_rate(fp: u64, tn: u64) -> Result<f64> {
    if fp + tn == 0 {
        return Err(Error::Undefined("FA rate without healthy runs"));
    }
    Ok(fp as f64 / (fp + tn) as f64)
}

/// Malware-miss rate `fn / (fn + tp)`.
pub fn mm_rate(fn_: u64, tp: u64) -> Result<f64> {
    if fn_ + tp == 0 {
        return Err(Error::Undefined("MM rate without malware runs"));
    }
    Ok(fn_ as f64 / (fn_ + tp) as f64)
}

pub fn rates(tp: u64, fp: u64, fn_: u64, tn: u64) -> Result<(f64, f64)> {
    Ok((fa_rate(fp, tn)?, mm_rate(fn_, tp)?))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn record(&mut self, label: Decision, predicted: Decision) {
        match (label, predicted) {
            (Decision::Malware, Decision::Malware) => self.tp += 1,
            (Decision::Healthy, Decision::Malware) => self.fp += 1,
            (Decision::Malware, Decision::Healthy) => self.fn_ += 1,
            (Decision::Healthy, Decision::Healthy) => self.tn += 1,
        }
    }

    pub fn malware(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn healthy(&self) -> u64 {
        self.fp + self.tn
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weights {
    /// `w_m = 1/#malware`, `w_h = 1/#healthy` of the set being scored.
    InverseClassCounts,
    Explicit {
        w_m: f64,
        w_h: f64,
    },
}

impl Weights {
    fn resolve(self, c: &Confusion) -> (f64, f64) {
        match self {
            Weights::Explicit { w_m, w_h } => (w_m, w_h),
            Weights::InverseClassCounts => (1.0 / c.malware().max(1) as f64, 1.0 / c.healthy().max(1) as f64),
        }
    }
}

/// Rates and F1 for one group; `None` where the metric is undefined (for
/// example FA on a set without healthy runs).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub fa_rate: Option<f64>,
    pub mm_rate: Option<f64>,
    pub f1: Option<f64>,
    pub confusion: Confusion,
    pub weights: (f64, f64),
}

impl Scores {
    pub fn from_confusion(c: Confusion, weights: Weights) -> Self {
        let (w_m, w_h) = weights.resolve(&c);
        Self {
            fa_rate: fa_rate(c.fp, c.tn).ok(),
            mm_rate: mm_rate(c.fn_, c.tp).ok(),
            f1: weighted_f1(c.tp, c.fp, c.fn_, w_m, w_h).ok(),
            confusion: c,
            weights: (w_m, w_h),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub benchmark_id: String,
    pub label: Decision,
    pub predicted: Decision,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_benchmark: BTreeMap<String, Scores>,
    pub overall: Scores,
}

pub fn build_report(results: &[RunResult], weights: Weights) -> Result<EvalReport> {
    if results.is_empty() {
        return Err(Error::Empty("no results to report"));
    }
    let mut per: BTreeMap<String, Confusion> = BTreeMap::new();
    let mut overall = Confusion::default();
    for r in results {
        per.entry(r.benchmark_id.clone())
            .or_default()
            .record(r.label, r.predicted);
        overall.record(r.label, r.predicted);
    }
    Ok(EvalReport {
        per_benchmark: per
            .into_iter()
            .map(|(k, c)| (k, Scores::from_confusion(c, weights)))
            .collect(),
        overall: Scores::from_confusion(overall, weights),
    })
}

fn csv_num(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| format!("{x:.6}"))
}

fn text_num(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"))
}

impl EvalReport {
    fn rows(&self) -> impl Iterator<Item = (&str, &Scores)> {
        self.per_benchmark
            .iter()
            .map(|(k, s)| (k.as_str(), s))
            .chain(std::iter::once((OVERALL_ID, &self.overall)))
    }

    /// CSV with [`REPORT_CSV_HEADER`], one row per benchmark then `overall`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_CSV_HEADER);
        out.push('\n');
        for (id, s) in self.rows() {
            let c = s.confusion;
            let _ = writeln!(
                out,
                "{id},{},{},{},{},{},{},{}",
                csv_num(s.fa_rate),
                csv_num(s.mm_rate),
                csv_num(s.f1),
                c.tp,
                c.fp,
                c.fn_,
                c.tn
            );
        }
        out
    }

    /// Aligned text table: benchmark, FA rate, MM rate, F1-score.
    pub fn to_text(&self) -> String {
        let width = self
            .rows()
            .map(|(id, _)| id.len())
            .max()
            .unwrap_or(0)
            .max("Benchmark".len());
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>7}  {:>7}  {:>8}",
            "Benchmark", "FA rate", "MM rate", "F1-score"
        );
        let rule = "-".repeat(width + 30);
        let _ = writeln!(out, "{rule}");
        for (id, s) in self.rows() {
            if id == OVERALL_ID {
                let _ = writeln!(out, "{rule}");
            }
            let label = if id == OVERALL_ID { "Overall" } else { id };
            let _ = writeln!(
                out,
                "{label:<width$}  {:>7}  {:>7}  {:>8}",
                text_num(s.fa_rate),
                text_num(s.mm_rate),
                text_num(s.f1)
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(id: &str, bench: &str, label: Decision) -> LabeledRun {
        LabeledRun {
            run_id: id.to_string(),
            benchmark_id: bench.to_string(),
            label,
            features: vec![vec![0.0]],
        }
    }

    fn campaign(healthy: usize, malware: usize) -> Vec<LabeledRun> {
        let mut runs: Vec<LabeledRun> = (0..healthy)
            .map(|i| run(&format!("h{i:02}"), "hpl", Decision::Healthy))
            .collect();
        runs.extend((0..malware).map(|i| run(&format!("m{i:02}"), "hpl", Decision::Malware)));
        runs
    }

    #[test]
    fn thirty_healthy_split_18_6_6() {
        let s = split_runs(campaign(30, 2), &SplitSpec::default()).unwrap();
        assert_eq!(s.train.len(), 18);
        assert_eq!(s.val.iter().filter(|r| r.label == Decision::Healthy).count(), 6);
        assert_eq!(s.test.iter().filter(|r| r.label == Decision::Healthy).count(), 6);
        assert_eq!(s.val.iter().filter(|r| r.label == Decision::Malware).count(), 1);
        assert_eq!(s.test.iter().filter(|r| r.label == Decision::Malware).count(), 1);
        assert!(s.train.iter().all(|r| r.label == Decision::Healthy));
    }

    #[test]
    fn split_is_deterministic_and_order_independent() {
        let a = split_runs(
            campaign(12, 4),
            &SplitSpec {
                seed: 3,
                ..SplitSpec::default()
            },
        )
        .unwrap();
        let mut shuffled = campaign(12, 4);
        shuffled.reverse();
        let b = split_runs(
            shuffled,
            &SplitSpec {
                seed: 3,
                ..SplitSpec::default()
            },
        )
        .unwrap();
        assert_eq!(a, b);
        let c = split_runs(
            campaign(12, 4),
            &SplitSpec {
                seed: 4,
                ..SplitSpec::default()
            },
        )
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn split_needs_enough_runs() {
        assert!(split_runs(campaign(4, 2), &SplitSpec::default()).is_err());
        assert!(split_runs(campaign(5, 1), &SplitSpec::default()).is_err());
        assert!(split_runs(vec![], &SplitSpec::default()).is_err());
    }

    #[test]
    fn partition_sizes_examples() {
        assert_eq!(partition_sizes(30, &[0.6, 0.2, 0.2]).unwrap(), vec![18, 6, 6]);
        assert_eq!(partition_sizes(33, &[0.6, 0.2, 0.2]).unwrap(), vec![20, 7, 6]);
        assert_eq!(partition_sizes(5, &[0.6, 0.2, 0.2]).unwrap(), vec![3, 1, 1]);
        assert_eq!(partition_sizes(2, &[0.5, 0.5]).unwrap(), vec![1, 1]);
        assert_eq!(partition_sizes(3, &[0.9, 0.05, 0.05]).unwrap(), vec![1, 1, 1]);
        assert!(partition_sizes(3, &[0.5, 0.6]).is_err());
    }

    #[test]
    fn f1_examples() {
        assert_eq!(weighted_f1(9, 1, 1, 1.0, 1.0).unwrap(), 0.9);
        assert_eq!(weighted_f1(4, 0, 0, 0.3, 7.0).unwrap(), 1.0);
        assert!(matches!(weighted_f1(0, 0, 0, 1.0, 1.0), Err(Error::Undefined(_))));
        assert_eq!(weighted_f1(0, 3, 0, 1.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn rate_examples() {
        assert_eq!(fa_rate(0, 6).unwrap(), 0.0);
        assert!((mm_rate(1, 94).unwrap() - 1.0 / 95.0).abs() < 1e-15);
        assert_eq!(mm_rate(5, 0).unwrap(), 1.0);
        assert!(rates(0, 0, 1, 0).is_err());
        assert!(rates(1, 0, 0, 0).is_err());
    }

    #[test]
    fn inverse_weights_example() {
        // 6 healthy and 95 malware test runs: FA 1/6, MM 3/95.
        let f1 = weighted_f1(92, 1, 3, 1.0 / 95.0, 1.0 / 6.0).unwrap();
        assert!((f1 - 0.907).abs() < 1e-3, "{f1}");
    }

    #[test]
    fn naive_always_malware_is_penalized() {
        let mut results = Vec::new();
        for i in 0..100 {
            let label = if i < 95 { Decision::Malware } else { Decision::Healthy };
            results.push(RunResult {
                benchmark_id: "b".into(),
                label,
                predicted: Decision::Malware,
            });
        }
        let report = build_report(&results, Weights::InverseClassCounts).unwrap();
        let f1 = report.overall.f1.unwrap();
        let unweighted = weighted_f1(95, 5, 0, 1.0, 1.0).unwrap();
        assert!(f1 < 1.0);
        assert!(f1 < unweighted);
        assert_eq!(report.overall.fa_rate, Some(1.0));
    }

    #[test]
    fn perfect_report_and_rendering() {
        let results = vec![
            RunResult {
                benchmark_id: "qe".into(),
                label: Decision::Malware,
                predicted: Decision::Malware,
            },
            RunResult {
                benchmark_id: "qe".into(),
                label: Decision::Healthy,
                predicted: Decision::Healthy,
            },
            RunResult {
                benchmark_id: "hpl".into(),
                label: Decision::Healthy,
                predicted: Decision::Healthy,
            },
        ];
        let r = build_report(&results, Weights::InverseClassCounts).unwrap();
        assert_eq!(r.per_benchmark["qe"].f1, Some(1.0));
        assert_eq!(r.overall.f1, Some(1.0));
        assert_eq!(r.per_benchmark["hpl"].f1, None);
        assert_eq!(
            r.to_csv(),
            "benchmark_id,fa_rate,mm_rate,f1,tp,fp,fn,tn\n\
             hpl,0.000000,nan,nan,0,0,0,1\n\
             qe,0.000000,0.000000,1.000000,1,0,0,1\n\
             overall,0.000000,0.000000,1.000000,1,0,0,2\n"
        );
        let text = r.to_text();
        assert!(text.contains("Overall"));
        assert!(text.lines().next().unwrap().starts_with("Benchmark"));
        assert!(build_report(&[], Weights::InverseClassCounts).is_err());
    }
}
