//! Prediction scores: MSPE, sample CRPS, Bernoulli Hellinger distance,
//! interval score and ROC/AUC, plus replicate-level summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::dimension(what, a, b));
    }
    if a == 0 {
        return Err(Error::Diagnostic(format!("{what}: empty input")));
    }
    Ok(())
}

/// Mean squared prediction error.
pub fn mspe(truth: &[f64], pred: &[f64]) -> Result<f64> {
    same_len(truth.len(), pred.len(), "mspe inputs")?;
    Ok(truth
        .iter()
        .zip(pred)
        .map(|(t, p)| (t - p) * (t - p))
        .sum::<f64>()
        / truth.len() as f64)
}

/// Sample CRPS in its energy form,
/// `mean|Xᵢ − z| − (1/2m²) Σᵢ Σⱼ |Xᵢ − Xⱼ|`, by the exact double sum.
pub fn crps_sample(samples: &[f64], obs: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Diagnostic("crps: no samples".into()));
    }
    let m = samples.len() as f64;
    let first = samples.iter().map(|x| (x - obs).abs()).sum::<f64>() / m;
    let mut pair = 0.0;
    for (i, a) in samples.iter().enumerate() {
        for b in &samples[i + 1..] {
            pair += (a - b).abs();
        }
    }
    // the double sum counts each unordered pair twice
    Ok((first - pair / (m * m)).max(0.0))
}

/// Same value as [`crps_sample`] in `O(m log m)`, using
/// `ΣᵢΣⱼ|Xᵢ − Xⱼ| = 2 Σₖ (2k − m − 1) X₍ₖ₎` over the order statistics.
pub fn crps_sorted(samples: &[f64], obs: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Diagnostic("crps: no samples".into()));
    }
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    Ok(crps_presorted(&x, obs))
}

/// [`crps_sorted`] for samples already in ascending order.
pub fn crps_presorted(sorted: &[f64], obs: f64) -> f64 {
    let m = sorted.len() as f64;
    let mut first = 0.0;
    let mut spread = 0.0;
    for (k, x) in sorted.iter().enumerate() {
        first += (x - obs).abs();
        spread += (2.0 * (k as f64 + 1.0) - m - 1.0) * x;
    }
    (first / m - spread / (m * m)).max(0.0)
}

/// Empirical quantile of ascending `sorted` by the inverted ECDF:
/// the smallest `x₍ₖ₎` with `k/m ≥ p`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let m = sorted.len();
    let k = (p * m as f64).ceil() as usize;
    sorted[k.clamp(1, m) - 1]
}

/// Per-location Bernoulli Hellinger distances with their sum and mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hellinger {
    pub per_location: Vec<f64>,
    pub sum: f64,
    pub mean: f64,
}

/// `H(p, q) = sqrt(1 − √(pq) − √((1−p)(1−q)))` per location.
pub fn hellinger_bernoulli(p: &[f64], q: &[f64]) -> Result<Hellinger> {
    same_len(p.len(), q.len(), "hellinger inputs")?;
    let mut per = Vec::with_capacity(p.len());
    for (i, (&a, &b)) in p.iter().zip(q).enumerate() {
        for v in [a, b] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::domain("probability", v, "must lie in [0, 1]").at("location", i));
            }
        }
        let bc = (a * b).sqrt() + ((1.0 - a) * (1.0 - b)).sqrt();
        per.push((1.0 - bc).max(0.0).sqrt().min(1.0));
    }
    let sum: f64 = per.iter().sum();
    let mean = sum / per.len() as f64;
    Ok(Hellinger {
        per_location: per,
        sum,
        mean,
    })
}

/// `(u − l) + (2/α)(l − z)·1{z < l} + (2/α)(z − u)·1{z > u}`.
pub fn interval_score(lower: f64, upper: f64, obs: f64, alpha: f64) -> Result<f64> {
    if lower > upper {
        return Err(Error::domain(
            "interval",
            lower - upper,
            "lower bound exceeds upper bound",
        ));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain("alpha", alpha, "must lie in (0, 1)"));
    }
    let mut s = upper - lower;
    if obs < lower {
        s += 2.0 / alpha * (lower - obs);
    }
    if obs > upper {
        s += 2.0 / alpha * (obs - upper);
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `≥ threshold` are called positive.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roc {
    pub auc: f64,
    pub curve: Vec<RocPoint>,
}

/// AUC by the Mann–Whitney rank statistic (ties get midranks) and the ROC
/// curve from `(0, 0)` to `(1, 1)` over the distinct score thresholds.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<Roc> {
    same_len(scores.len(), labels.len(), "roc inputs")?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Diagnostic("roc: NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Diagnostic(
            "roc: both classes must be present".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += midrank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (np, nn) = (n_pos as f64, n_neg as f64);
    let auc = (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);

    let mut curve = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = order.len();
    while k > 0 {
        let t = scores[order[k - 1]];
        while k > 0 && scores[order[k - 1]] == t {
            if labels[order[k - 1]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k -= 1;
        }
        curve.push(RocPoint {
            fpr: fp as f64 / nn,
            tpr: tp as f64 / np,
            threshold: t,
        });
    }
    Ok(Roc { auc, curve })
}

/// Mean and sample standard deviation (denominator `k − 1`; zero for `k = 1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
}

pub fn mean_sd(values: &[f64]) -> Result<MeanSd> {
    if values.is_empty() {
        return Err(Error::Diagnostic("summary of an empty list".into()));
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(MeanSd {
        mean,
        sd,
        count: values.len(),
    })
}

/// One cell of a score table: a metric for a response and method, summarized
/// over replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub method: String,
    pub response: String,
    pub metric: String,
    pub summary: MeanSd,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreReport {
    pub entries: Vec<ScoreEntry>,
}

impl ScoreReport {
    pub fn push(
        &mut self,
        method: &str,
        response: &str,
        metric: &str,
        values: &[f64],
    ) -> Result<()> {
        let summary = mean_sd(values)?;
        if !(summary.mean.is_finite() && summary.sd.is_finite()) {
            return Err(Error::Diagnostic(format!(
                "{method}/{response}/{metric}: non-finite summary"
            )));
        }
        self.entries.push(ScoreEntry {
            method: method.into(),
            response: response.into(),
            metric: metric.into(),
            summary,
        });
        Ok(())
    }

    pub fn get(&self, method: &str, response: &str, metric: &str) -> Option<&MeanSd> {
        self.entries
            .iter()
            .find(|e| e.method == method && e.response == response && e.metric == metric)
            .map(|e| &e.summary)
    }
}
