//! Score analytics: AUROC, cosine similarity, inconfidence, histograms and ranking.

use std::cmp::Ordering;
use std::io::{Read, Write};

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{softmax, Mode, Network};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Curvature,
    Inconfidence,
    External,
}

/// Index-aligned per-sample scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
    pub corrupted: Option<Vec<bool>>,
    pub scores: Vec<f64>,
    pub kind: ScoreKind,
    pub epochs_averaged: usize,
    pub config_digest: String,
}

pub const REPORT_HEADER: [&str; 4] = ["index", "label", "corrupted", "score"];

/// Scientific notation with 17 significant digits; parses back to the same `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl ScoreReport {
    /// A report over samples `0..N`.
    pub fn new(labels: Vec<usize>, scores: Vec<f64>, kind: ScoreKind) -> Result<Self> {
        let indices = (0..scores.len()).collect();
        Self::with_indices(indices, labels, scores, kind)
    }

    pub fn with_indices(indices: Vec<usize>, labels: Vec<usize>, scores: Vec<f64>, kind: ScoreKind) -> Result<Self> {
        let report = Self {
            indices,
            labels,
            corrupted: None,
            scores,
            kind,
            epochs_averaged: 0,
            config_digest: String::new(),
        };
        report.validate()?;
        Ok(report)
    }

    pub fn with_corrupted(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.len() {
            return Err(Error::Consistency(format!(
                "corruption mask has {} entries for {} scores",
                mask.len(),
                self.len()
            )));
        }
        self.corrupted = Some(mask);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.scores.len();
        if self.indices.len() != n || self.labels.len() != n {
            return Err(Error::Consistency(format!(
                "{} indices, {} labels, {n} scores",
                self.indices.len(),
                self.labels.len()
            )));
        }
        if let Some(row) = self.indices.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::Alignment {
                row: row + 1,
                detail: "indices must be strictly increasing".into(),
            });
        }
        if let Some(row) = self.scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::UndefinedMetric(format!("non-finite score at row {row}")));
        }
        Ok(())
    }

    /// Errors with the first row whose index differs.
    pub fn check_aligned(&self, other: &ScoreReport) -> Result<()> {
        for (row, (a, b)) in self.indices.iter().zip(&other.indices).enumerate() {
            if a != b {
                return Err(Error::Alignment {
                    row,
                    detail: format!("index {a} vs {b}"),
                });
            }
        }
        if self.len() != other.len() {
            return Err(Error::Alignment {
                row: self.len().min(other.len()),
                detail: format!("{} rows vs {} rows", self.len(), other.len()),
            });
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let csv_err = |e: csv::Error| Error::Consistency(e.to_string());
        w.write_record(REPORT_HEADER).map_err(csv_err)?;
        for i in 0..self.len() {
            let flag = match &self.corrupted {
                Some(m) => if m[i] { "1" } else { "0" }.to_string(),
                None => String::new(),
            };
            w.write_record([
                self.indices[i].to_string(),
                self.labels[i].to_string(),
                flag,
                format_f64(self.scores[i]),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("ascii output")
    }

    /// Parses `index,label,corrupted,score` rows. The `corrupted` column may be
    /// empty for every row.
    pub fn read_csv<R: Read>(reader: R, kind: ScoreKind) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let fmt = |row: usize, detail: String| Error::Format {
            path: format!("<csv row {row}>").into(),
            detail,
        };
        let header = r.headers().map_err(|e| fmt(0, e.to_string()))?.clone();
        if header.iter().collect::<Vec<_>>() != REPORT_HEADER {
            return Err(fmt(0, format!("expected header {}", REPORT_HEADER.join(","))));
        }
        let (mut indices, mut labels, mut scores, mut flags) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut any_flag = false;
        for (row, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| fmt(row + 1, e.to_string()))?;
            let parse = |k: usize| rec.get(k).unwrap_or("").trim().to_string();
            indices.push(parse(0).parse().map_err(|e| fmt(row + 1, format!("index: {e}")))?);
            labels.push(parse(1).parse().map_err(|e| fmt(row + 1, format!("label: {e}")))?);
            let flag = parse(2);
            flags.push(match flag.as_str() {
                "" => false,
                "0" | "false" => {
                    any_flag = true;
                    false
                }
                "1" | "true" => {
                    any_flag = true;
                    true
                }
                other => return Err(fmt(row + 1, format!("corrupted flag {other:?}"))),
            });
            scores.push(parse(3).parse().map_err(|e| fmt(row + 1, format!("score: {e}")))?);
        }
        let mut report = Self::with_indices(indices, labels, scores, kind)?;
        if any_flag {
            report.corrupted = Some(flags);
        }
        Ok(report)
    }

    /// Sample indices of the `k` highest scores.
    pub fn rank_top(&self, k: usize) -> Vec<usize> {
        rank_top(&self.scores, k).into_iter().map(|p| self.indices[p]).collect()
    }

    /// Sample indices of the `k` lowest scores, ascending, ties by index.
    pub fn rank_bottom(&self, k: usize) -> Vec<usize> {
        rank_bottom(&self.scores, k).into_iter().map(|p| self.indices[p]).collect()
    }
}

fn check_finite<T: Scalar>(values: &[T]) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::UndefinedMetric(format!("non-finite value at position {i}")));
    }
    Ok(())
}

/// Area under the ROC curve of `scores` for separating `positives` from the
/// rest: `P(pos > neg) + ½ P(pos = neg)`, computed exactly from sorted tie groups.
pub fn auroc<T: Scalar>(scores: &[T], positives: &[bool]) -> Result<f64> {
    if scores.len() != positives.len() {
        return Err(Error::InputShape {
            expected: scores.len(),
            actual: positives.len(),
        });
    }
    check_finite(scores)?;
    let num_pos = positives.iter().filter(|&&p| p).count() as u64;
    let num_neg = scores.len() as u64 - num_pos;
    if num_pos == 0 || num_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUROC needs at least one positive and one negative".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite"));
    // Twice the Mann-Whitney U statistic, in integers.
    let mut doubled: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let value = scores[order[start]];
        let end = start + order[start..].iter().take_while(|&&i| scores[i] == value).count();
        let pos = order[start..end].iter().filter(|&&i| positives[i]).count() as u64;
        let neg = (end - start) as u64 - pos;
        doubled += 2 * pos * neg_below + pos * neg;
        neg_below += neg;
        start = end;
    }
    Ok(doubled as f64 / (2 * num_pos * num_neg) as f64)
}

pub fn cosine_similarity<T: Scalar>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InputShape {
            expected: a.len(),
            actual: b.len(),
        });
    }
    check_finite(a)?;
    check_finite(b)?;
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.to_f64_lossy(), y.to_f64_lossy());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedMetric("cosine similarity of a zero vector".into()));
    }
    Ok((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

/// Cosine similarity restricted to the `k` samples with the highest reference
/// scores (ties broken by lower index). The selected positions are used in
/// index order, so `k = N` reproduces [`cosine_similarity`] exactly.
pub fn topk_cosine(scores: &ScoreReport, reference: &ScoreReport, k: usize) -> Result<f64> {
    scores.check_aligned(reference)?;
    if k == 0 || k > reference.len() {
        return Err(Error::config(format!("top-k {k} outside 1..={}", reference.len())));
    }
    let mut picked = rank_top(&reference.scores, k);
    picked.sort_unstable();
    let a: Vec<f64> = picked.iter().map(|&i| scores.scores[i]).collect();
    let b: Vec<f64> = picked.iter().map(|&i| reference.scores[i]).collect();
    cosine_similarity(&a, &b)
}

/// `1 − softmax(f(x))[y]`.
pub fn inconfidence<T: Scalar>(net: &Network<T>, x: ArrayView1<'_, T>, label: usize) -> Result<T> {
    if net.mode() != Mode::Eval {
        return Err(Error::NotFrozen("inconfidence"));
    }
    if label >= net.num_classes() {
        return Err(Error::Label {
            label,
            num_classes: net.num_classes(),
        });
    }
    let logits = net.forward(x)?;
    Ok(inconfidence_from_logits(logits.view(), label))
}

pub fn inconfidence_from_logits<T: Scalar>(logits: ArrayView1<'_, T>, label: usize) -> T {
    T::one() - softmax(logits)[label]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistogramScale {
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `num_bins + 1` monotone edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Nonpositive scores on a log scale.
    pub underflow: usize,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.underflow
    }

    /// Bin of `v`, or `None` for values outside the edges (or underflow).
    pub fn bin_of(&self, v: f64) -> Option<usize> {
        let n = self.counts.len();
        if !(v >= self.edges[0] && v <= self.edges[n]) {
            return None;
        }
        // First edge strictly greater than v, minus one.
        let upper = self.edges.partition_point(|&e| e <= v);
        Some(upper.saturating_sub(1).min(n - 1))
    }

    /// Counts of the values selected by `mask`, per bin.
    pub fn count_masked<T: Scalar>(&self, scores: &[T], mask: &[bool]) -> Vec<usize> {
        let mut counts = vec![0; self.counts.len()];
        for (&s, &m) in scores.iter().zip(mask) {
            if m {
                if let Some(b) = self.bin_of(s.to_f64_lossy()) {
                    counts[b] += 1;
                }
            }
        }
        counts
    }
}

/// Equal-width (linear) or equal-ratio (log) bins spanning the observed range.
pub fn histogram<T: Scalar>(scores: &[T], num_bins: usize, scale: HistogramScale) -> Result<Histogram> {
    if num_bins == 0 {
        return Err(Error::config("histogram needs at least one bin"));
    }
    check_finite(scores)?;
    let values: Vec<f64> = scores.iter().map(|s| s.to_f64_lossy()).collect();
    let (kept, underflow): (Vec<f64>, usize) = match scale {
        HistogramScale::Linear => (values, 0),
        HistogramScale::Log => {
            let pos: Vec<f64> = values.iter().copied().filter(|&v| v > 0.0).collect();
            let under = values.len() - pos.len();
            (pos, under)
        }
    };
    let lo = kept.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = kept.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let edges: Vec<f64> = if kept.is_empty() {
        (0..=num_bins).map(|i| i as f64).collect()
    } else {
        match scale {
            HistogramScale::Linear => {
                let width = if hi > lo { hi - lo } else { 1.0 };
                (0..=num_bins)
                    .map(|i| if i == num_bins { lo + width } else { lo + width * i as f64 / num_bins as f64 })
                    .collect()
            }
            HistogramScale::Log => {
                let (llo, lhi) = (lo.log10(), if hi > lo { hi.log10() } else { lo.log10() + 1.0 });
                (0..=num_bins)
                    .map(|i| match i {
                        0 => lo,
                        i if i == num_bins && hi > lo => hi,
                        i => 10f64.powf(llo + (lhi - llo) * i as f64 / num_bins as f64),
                    })
                    .collect()
            }
        }
    };
    let mut hist = Histogram {
        counts: vec![0; num_bins],
        edges,
        underflow,
    };
    for v in kept {
        let b = hist.bin_of(v).expect("edges span the data");
        hist.counts[b] += 1;
    }
    Ok(hist)
}

fn by_score_desc<T: Scalar>(scores: &[T]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    }
}

/// Positions of the `k` largest scores, descending, ties by ascending position.
/// `k` is clamped to the number of scores.
pub fn rank_top<T: Scalar>(scores: &[T], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(by_score_desc(scores));
    order.truncate(k.min(scores.len()));
    order
}

/// Positions of the `k` smallest scores, ascending, ties by ascending position.
pub fn rank_bottom<T: Scalar>(scores: &[T], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .partial_cmp(&scores[b])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k.min(scores.len()));
    order
}

/// Rank of every position under [`rank_top`] ordering (0 = highest score).
pub fn descending_ranks<T: Scalar>(scores: &[T]) -> Vec<usize> {
    let order = rank_top(scores, scores.len());
    let mut ranks = vec![0; scores.len()];
    for (rank, &i) in order.iter().enumerate() {
        ranks[i] = rank;
    }
    ranks
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman<T: Scalar>(a: &[T], b: &[T]) -> Result<f64> {
    fn avg_ranks(v: &[f64]) -> Vec<f64> {
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&x, &y| v[x].partial_cmp(&v[y]).unwrap_or(Ordering::Equal));
        let mut ranks = vec![0.0; v.len()];
        let mut start = 0;
        while start < order.len() {
            let end = start + order[start..].iter().take_while(|&&i| v[i] == v[order[start]]).count();
            let r = (start + end - 1) as f64 / 2.0;
            for &i in &order[start..end] {
                ranks[i] = r;
            }
            start = end;
        }
        ranks
    }
    if a.len() != b.len() {
        return Err(Error::InputShape {
            expected: a.len(),
            actual: b.len(),
        });
    }
    check_finite(a)?;
    check_finite(b)?;
    let ra = avg_ranks(&a.iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>());
    let rb = avg_ranks(&b.iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>());
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let ca: Vec<f64> = ra.iter().map(|r| r - ma).collect();
    let cb: Vec<f64> = rb.iter().map(|r| r - mb).collect();
    cosine_similarity(&ca, &cb)
}
