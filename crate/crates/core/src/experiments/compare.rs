//! Cosine agreement between two index-aligned score files.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{cosine_similarity, topk_cosine, ScoreReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKCosine {
    pub k: usize,
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub num_samples: usize,
    pub full_cosine: f64,
    pub top_k: Vec<TopKCosine>,
}

/// One tenth of the samples, at least one.
pub fn default_top_k(n: usize) -> usize {
    (n / 10).max(1)
}

/// Full cosine plus top-`k` cosine (selected by the reference scores) for each
/// `k`; an empty `ks` uses [`default_top_k`].
pub fn compare_scores(ours: &ScoreReport, reference: &ScoreReport, ks: &[usize]) -> Result<CompareSummary> {
    ours.check_aligned(reference)?;
    if ours.is_empty() {
        return Err(Error::UndefinedMetric("no samples to compare".into()));
    }
    let n = ours.len();
    let ks = if ks.is_empty() { vec![default_top_k(n)] } else { ks.to_vec() };
    let top_k = ks
        .into_iter()
        .map(|k| {
            if k == 0 || k > n {
                return Err(Error::config(format!("top-k {k} must lie in [1, {n}]")));
            }
            Ok(TopKCosine {
                k,
                cosine: topk_cosine(ours, reference, k)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(CompareSummary {
        num_samples: n,
        full_cosine: cosine_similarity(&ours.scores, &reference.scores)?,
        top_k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ScoreKind;

    fn report(scores: Vec<f64>) -> ScoreReport {
        ScoreReport::new(vec![0; scores.len()], scores, ScoreKind::External).unwrap()
    }

    #[test]
    fn self_comparison_is_one() {
        let r = report((0..100).map(|i| ((i * 37) % 101) as f64 + 0.5).collect());
        let s = compare_scores(&r, &r, &[1, 10, 50, 100]).unwrap();
        assert_eq!(s.full_cosine, 1.0);
        assert!(s.top_k.iter().all(|t| t.cosine == 1.0));
        assert_eq!(compare_scores(&r, &r, &[]).unwrap().top_k[0].k, 10);
    }

    #[test]
    fn permuting_the_top_half() {
        let base: Vec<f64> = (1..=10).map(f64::from).collect();
        let mut perm = base.clone();
        // Reverse the five highest scores among themselves.
        perm[5..].reverse();
        let (a, b) = (report(base.clone()), report(perm.clone()));
        let s = compare_scores(&a, &b, &[5]).unwrap();
        let mut sorted_a = a.scores.clone();
        let mut sorted_b = b.scores.clone();
        sorted_a.sort_by(f64::total_cmp);
        sorted_b.sort_by(f64::total_cmp);
        assert_eq!(sorted_a, sorted_b);
        assert!(s.top_k[0].cosine < 1.0);
        assert!(s.full_cosine < 1.0);
    }

    #[test]
    fn default_k_is_a_tenth() {
        assert_eq!(default_top_k(50_000), 5_000);
        assert_eq!(default_top_k(3), 1);
    }

    #[test]
    fn misaligned_and_bad_k() {
        let a = report(vec![1.0, 2.0, 3.0]);
        let b = ScoreReport::with_indices(vec![0, 2, 3], vec![0; 3], vec![1.0, 2.0, 3.0], ScoreKind::External).unwrap();
        match compare_scores(&a, &b, &[1]) {
            Err(Error::Alignment { row, .. }) => assert_eq!(row, 1),
            other => panic!("expected alignment error, got {other:?}"),
        }
        assert!(compare_scores(&a, &a, &[4]).unwrap_err().is_config_error());
    }
}
