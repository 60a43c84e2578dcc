//! Evaluation: endpoint errors, confusion matrices and detection rates.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::EndpointVector;
use crate::decision::Verdict;
use crate::geometry::distance;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("detection rate needs a positive total")]
    EmptyTotal,
    #[error("{detected} detections out of only {total}")]
    TooManyDetected { detected: usize, total: usize },
}

/// Adequate is the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
    /// Cases where the decision or the label was indeterminate; kept out of the rates.
    pub indeterminate: usize,
}

impl ConfusionMatrix {
    pub fn from_counts(tp: usize, fn_: usize, fp: usize, tn: usize) -> Self {
        Self { tp, fn_, fp, tn, indeterminate: 0 }
    }

    pub fn tpr(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn tnr(&self) -> Option<f64> {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.tp + self.fn_ + self.fp + self.tn)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fn_ + self.fp + self.tn + self.indeterminate
    }

    /// `name,value` rows; undefined rates are left empty.
    pub fn to_csv(&self) -> String {
        let rate = |r: Option<f64>| r.map(format_percent).unwrap_or_default();
        let mut s = String::from("metric,value\n");
        let _ = writeln!(s, "tp,{}\nfn,{}\nfp,{}\ntn,{}\nindeterminate,{}", self.tp, self.fn_, self.fp, self.tn, self.indeterminate);
        let _ = writeln!(s, "tpr_percent,{}\ntnr_percent,{}\naccuracy_percent,{}", rate(self.tpr()), rate(self.tnr()), rate(self.accuracy()));
        s
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// A ratio as a percentage with two decimals, e.g. `0.913533… -> "91.35"`.
pub fn format_percent(r: f64) -> String {
    format!("{:.2}", r * 100.0)
}

pub fn confusion(decisions: &[Verdict], labels: &[Verdict]) -> Result<ConfusionMatrix, EvalError> {
    if decisions.len() != labels.len() {
        return Err(EvalError::LengthMismatch(decisions.len(), labels.len()));
    }
    let mut m = ConfusionMatrix::default();
    for (d, l) in decisions.iter().zip(labels) {
        match (l, d) {
            (Verdict::Indeterminate, _) | (_, Verdict::Indeterminate) => m.indeterminate += 1,
            (Verdict::Adequate, Verdict::Adequate) => m.tp += 1,
            (Verdict::Adequate, Verdict::Inadequate) => m.fn_ += 1,
            (Verdict::Inadequate, Verdict::Adequate) => m.fp += 1,
            (Verdict::Inadequate, Verdict::Inadequate) => m.tn += 1,
        }
    }
    Ok(m)
}

pub fn detection_rate(detected: usize, total: usize) -> Result<f64, EvalError> {
    if total == 0 {
        return Err(EvalError::EmptyTotal);
    }
    if detected > total {
        return Err(EvalError::TooManyDetected { detected, total });
    }
    Ok(detected as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p90: f64,
    pub p95: f64,
    pub max: f64,
}

/// Linear interpolation between closest ranks; `sorted` must be ascending and non-empty.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize(values: &[f64]) -> Option<ErrorSummary> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(ErrorSummary {
        count: v.len(),
        mean: v.iter().sum::<f64>() / v.len() as f64,
        median: percentile(&v, 0.5),
        p90: percentile(&v, 0.9),
        p95: percentile(&v, 0.95),
        max: v[v.len() - 1],
    })
}

pub const ENDPOINT_NAMES: [&str; 4] = ["pec_p0", "pec_p1", "pnl_p0", "pnl_p1"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointErrors {
    /// Euclidean error of each endpoint, one row per case, ordered as [`ENDPOINT_NAMES`].
    pub per_case: Vec<[f64; 4]>,
    pub per_endpoint: Vec<Option<ErrorSummary>>,
    pub overall: Option<ErrorSummary>,
}

impl EndpointErrors {
    pub fn all(&self) -> Vec<f64> {
        self.per_case.iter().flatten().copied().collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("case,{}\n", ENDPOINT_NAMES.join(","));
        for (i, row) in self.per_case.iter().enumerate() {
            let _ = writeln!(s, "{i},{},{},{},{}", row[0], row[1], row[2], row[3]);
        }
        s
    }
}

pub fn endpoint_errors(preds: &[EndpointVector], truths: &[EndpointVector]) -> Result<EndpointErrors, EvalError> {
    if preds.len() != truths.len() {
        return Err(EvalError::LengthMismatch(preds.len(), truths.len()));
    }
    let per_case: Vec<[f64; 4]> = preds
        .iter()
        .zip(truths)
        .map(|(p, t)| {
            let (p, t) = (p.points(), t.points());
            [0, 1, 2, 3].map(|k| distance(p[k], t[k]))
        })
        .collect();
    let per_endpoint = (0..4).map(|k| summarize(&per_case.iter().map(|r| r[k]).collect::<Vec<_>>())).collect();
    let overall = summarize(&per_case.iter().flatten().copied().collect::<Vec<_>>());
    Ok(EndpointErrors { per_case, per_endpoint, overall })
}

/// `bin_start,bin_end,count` rows covering every value; the last bin is closed.
pub fn histogram_csv(values: &[f64], bin_width: f64) -> String {
    let mut s = String::from("bin_start,bin_end,count\n");
    if values.is_empty() || !(bin_width > 0.0) {
        return s;
    }
    let max = values.iter().copied().fold(0.0, f64::max);
    let bins = ((max / bin_width).floor() as usize + 1).max(1);
    let mut counts = vec![0usize; bins];
    for &v in values {
        counts[((v.max(0.0) / bin_width).floor() as usize).min(bins - 1)] += 1;
    }
    for (k, c) in counts.iter().enumerate() {
        let _ = writeln!(s, "{},{},{c}", k as f64 * bin_width, (k + 1) as f64 * bin_width);
    }
    s
}

/// Scatter data of true against predicted PNL lengths.
pub fn pnl_length_csv(rows: &[(String, f64, f64)]) -> String {
    let mut s = String::from("case,true_length,predicted_length\n");
    for (name, t, p) in rows {
        let _ = writeln!(s, "{name},{t},{p}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use Verdict::*;

    #[test]
    fn reference_rates() {
        let m = ConfusionMatrix::from_counts(243, 23, 36, 30);
        assert_eq!(format_percent(m.tpr().unwrap()), "91.35");
        assert_eq!(format_percent(m.tnr().unwrap()), "45.45");
        let cc = ConfusionMatrix::from_counts(214, 11, 0, 0);
        assert_eq!(format_percent(cc.tpr().unwrap()), "95.11");
        assert_eq!(cc.tnr(), None);
        assert_eq!(format_percent(detection_rate(225, 266).unwrap()), "84.59");
        assert_eq!(format_percent(detection_rate(199, 200).unwrap()), "99.50");
        assert_eq!(detection_rate(0, 7).unwrap(), 0.0);
        assert_eq!(detection_rate(1, 0), Err(EvalError::EmptyTotal));
        assert!(detection_rate(3, 2).is_err());
    }

    #[test]
    fn all_correct_and_indeterminate() {
        let labels = [Adequate, Inadequate, Adequate, Inadequate, Adequate, Adequate, Inadequate, Adequate, Inadequate, Adequate];
        let m = confusion(&labels, &labels).unwrap();
        assert_eq!((m.tpr(), m.tnr()), (Some(1.0), Some(1.0)));
        let m = confusion(&[Indeterminate, Adequate], &[Adequate, Indeterminate]).unwrap();
        assert_eq!(m.indeterminate, 2);
        assert_eq!(m.tpr(), None);
        assert!(confusion(&[Adequate], &[]).is_err());
        assert!(m.to_csv().contains("indeterminate,2\n"));
    }

    #[test]
    fn endpoint_error_examples() {
        let t = EndpointVector([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let e = endpoint_errors(&[t], &[t]).unwrap();
        assert!(e.all().iter().all(|&v| v == 0.0));
        let mut p = t;
        p.0[4] += 3.0;
        p.0[5] += 4.0;
        let e = endpoint_errors(&[p], &[t]).unwrap();
        assert_eq!(e.per_case[0], [0.0, 0.0, 5.0, 0.0]);
        assert_eq!(e.overall.unwrap().max, 5.0);
        assert!(endpoint_errors(&[p], &[]).is_err());
    }

    #[test]
    fn percentile_interpolates() {
        let s = summarize(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(s.median, 2.5);
        assert_eq!(s.mean, 2.5);
        assert!((s.p90 - 3.7).abs() < 1e-12);
        assert_eq!(histogram_csv(&[0.2, 1.0, 1.5], 1.0), "bin_start,bin_end,count\n0,1,1\n1,2,2\n");
    }

    fn verdict() -> impl Strategy<Value = Verdict> {
        prop_oneof![Just(Adequate), Just(Inadequate), Just(Indeterminate)]
    }

    proptest! {
        #[test]
        fn counts_sum_and_ignore_order(pairs in prop::collection::vec((verdict(), verdict()), 0..60), seed in any::<u64>()) {
            let (d, l): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
            let m = confusion(&d, &l).unwrap();
            prop_assert_eq!(m.total(), pairs.len());
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let (d2, l2): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
            prop_assert_eq!(confusion(&d2, &l2).unwrap(), m);
        }
    }
}
