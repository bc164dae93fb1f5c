//! Evaluation: Top-K accuracy, distance-based accuracy (DBA), their
//! per-slot breakdown over the prediction horizon, and the averaged
//! report.

use std::path::Path;

use ndarray::Array2;

use crate::dataset::{sample_masks, Sample};
use crate::error::{Error, Result};
use crate::losses::sample_logit_matrix;
use crate::models::{rank_beams, Model};
use crate::preprocess::PreprocessConfig;

pub const DEFAULT_DELTA: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SlotMetrics {
    pub top1: f64,
    pub top3: f64,
    pub top5: f64,
    pub dba: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub per_slot: Vec<SlotMetrics>,
    pub atop1: f64,
    pub atop3: f64,
    pub atop5: f64,
    pub adba: f64,
    pub n_samples: usize,
    pub delta: f64,
}

/// Fraction of samples whose label appears among the first `k` ranked
/// predictions.
pub fn topk_accuracy(ranked: &[Vec<usize>], labels: &[usize], k: usize) -> Result<f64> {
    if ranked.is_empty() {
        return Err(Error::Usage("no samples to score".into()));
    }
    if ranked.len() != labels.len() {
        return Err(Error::Usage("one label per prediction list required".into()));
    }
    if k == 0 || ranked.iter().any(|r| r.len() < k) {
        return Err(Error::Usage(format!("need at least {k} ranked classes per sample")));
    }
    let hits = ranked
        .iter()
        .zip(labels)
        .filter(|(r, &y)| r[..k].contains(&y))
        .count();
    Ok(hits as f64 / ranked.len() as f64)
}

/// Distance-based accuracy over the three top-ranked beams:
/// Y_k = 1 − mean over samples of min_{i≤k} min(|ŷ_i − y|/Δ, 1),
/// and DBA = (Y_1 + Y_2 + Y_3)/3.
pub fn dba_score(top3: &[[usize; 3]], labels: &[usize], delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("distance normalizer must be positive, got {delta}")));
    }
    if top3.is_empty() {
        return Err(Error::Usage("no samples to score".into()));
    }
    if top3.len() != labels.len() {
        return Err(Error::Usage("one label per prediction triple required".into()));
    }
    let m = top3.len() as f64;
    let mut dba = 0.0;
    for k in 1..=3 {
        let mut penalty = 0.0;
        for (preds, &y) in top3.iter().zip(labels) {
            let best = preds[..k]
                .iter()
                .map(|&p| (p.abs_diff(y) as f64 / delta).min(1.0))
                .fold(f64::INFINITY, f64::min);
            penalty += best;
        }
        dba += 1.0 - penalty / m;
    }
    Ok(dba / 3.0)
}

/// Per-slot Top-{1,3,5} and DBA from per-sample C×(J+1) probability
/// matrices, then the across-slot averages.
pub fn slot_report(
    probabilities: &[Array2<f64>],
    labels: &[Vec<usize>],
    delta: f64,
) -> Result<EvalReport> {
    if probabilities.is_empty() {
        return Err(Error::Usage("empty evaluation set".into()));
    }
    if probabilities.len() != labels.len() {
        return Err(Error::Usage("one label vector per probability matrix required".into()));
    }
    let (classes, slots) = probabilities[0].dim();
    for (p, l) in probabilities.iter().zip(labels) {
        if p.dim() != (classes, slots) || l.len() != slots {
            return Err(Error::Usage("inconsistent shapes across the evaluation set".into()));
        }
    }

    let mut per_slot = Vec::with_capacity(slots);
    for j in 0..slots {
        let ranked: Vec<Vec<usize>> = probabilities
            .iter()
            .map(|p| {
                let column: Vec<f64> = (0..classes).map(|c| p[(c, j)]).collect();
                rank_beams(&column)
            })
            .collect();
        let slot_labels: Vec<usize> = labels.iter().map(|l| l[j]).collect();
        let top3: Vec<[usize; 3]> = ranked.iter().map(|r| [r[0], r[1], r[2]]).collect();
        per_slot.push(SlotMetrics {
            top1: topk_accuracy(&ranked, &slot_labels, 1)?,
            top3: topk_accuracy(&ranked, &slot_labels, 3)?,
            top5: topk_accuracy(&ranked, &slot_labels, 5)?,
            dba: dba_score(&top3, &slot_labels, delta)?,
        });
    }

    let mean = |f: &dyn Fn(&SlotMetrics) -> f64| {
        per_slot.iter().map(|s| f(s)).sum::<f64>() / slots as f64
    };
    Ok(EvalReport {
        atop1: mean(&|s| s.top1),
        atop3: mean(&|s| s.top3),
        atop5: mean(&|s| s.top5),
        adba: mean(&|s| s.dba),
        n_samples: probabilities.len(),
        delta,
        per_slot,
    })
}

/// Forward a model over an evaluation set and score it.
pub fn evaluate_model(
    model: &Model,
    samples: &[Sample],
    preprocess: &PreprocessConfig,
    cache_dir: Option<&Path>,
    batch_size: usize,
    delta: f64,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Usage("empty evaluation set".into()));
    }
    let slots = model.config.horizon + 1;
    let mut matrices = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let masks = chunk
            .iter()
            .map(|s| sample_masks(s, preprocess, cache_dir))
            .collect::<Result<Vec<_>>>()?;
        let rows = model.forward_batch(&masks)?;
        for (b, sample) in chunk.iter().enumerate() {
            let logits = sample_logit_matrix(&rows, chunk.len(), slots, b);
            let mut probs = Array2::<f64>::zeros(logits.dim());
            for j in 0..slots {
                let column: Vec<f64> = logits.column(j).to_vec();
                let p = crate::losses::softmax_temperature(&column, 1.0)?;
                for (c, &pc) in p.iter().enumerate() {
                    probs[(c, j)] = pc;
                }
            }
            matrices.push(probs);
            labels.push(sample.labels.clone());
        }
    }
    slot_report(&matrices, &labels, delta)
}

pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() < tol, "{a} vs {b}");
    }

    // set-membership scan, deliberately structured differently from
    // the production path
    fn topk_by_scan(ranked: &[Vec<usize>], labels: &[usize], k: usize) -> f64 {
        let mut hits = 0usize;
        for (m, &y) in labels.iter().enumerate() {
            let mut found = false;
            for i in 0..k {
                if ranked[m][i] == y {
                    found = true;
                }
            }
            if found {
                hits += 1;
            }
        }
        hits as f64 / labels.len() as f64
    }

    fn dba_by_scan(top3: &[[usize; 3]], labels: &[usize], delta: f64) -> f64 {
        let m = labels.len() as f64;
        let mut total = 0.0;
        for k in 1..=3usize {
            let mut sum = 0.0;
            for (preds, &y) in top3.iter().zip(labels) {
                let mut best = f64::INFINITY;
                for &p in &preds[..k] {
                    let d = (p as f64 - y as f64).abs() / delta;
                    best = best.min(if d > 1.0 { 1.0 } else { d });
                }
                sum += best;
            }
            total += 1.0 - sum / m;
        }
        total / 3.0
    }

    #[test]
    fn hand_worked_dba_case() {
        let score = dba_score(&[[12, 10, 30]], &[10], 5.0).unwrap();
        approx(score, 0.8667, 5e-5);
    }

    #[test]
    fn dba_endpoints() {
        let exact = dba_score(&[[4, 9, 1], [7, 0, 2]], &[4, 7], 5.0).unwrap();
        approx(exact, 1.0, 1e-12);
        let far = dba_score(&[[20, 25, 30]], &[0], 5.0).unwrap();
        approx(far, 0.0, 1e-12);
    }

    #[test]
    fn counting_example_with_cross_check() {
        let ranked = vec![
            vec![3, 1, 4, 1, 5],
            vec![2, 7, 1, 8, 2],
            vec![9, 9, 8, 3, 0],
            vec![0, 1, 2, 3, 4],
        ];
        let labels = vec![5, 7, 6, 2];
        let acc = topk_accuracy(&ranked, &labels, 5).unwrap();
        approx(acc, 0.75, 1e-12);
        approx(topk_by_scan(&ranked, &labels, 5), acc, 1e-12);
    }

    #[test]
    fn topk_trivial_endpoints_and_errors() {
        let ranked = vec![vec![1, 2, 3], vec![0, 4, 5]];
        approx(topk_accuracy(&ranked, &[1, 0], 1).unwrap(), 1.0, 1e-12);
        approx(topk_accuracy(&ranked, &[9, 9], 3).unwrap(), 0.0, 1e-12);
        assert!(matches!(topk_accuracy(&ranked, &[1, 0], 4), Err(Error::Usage(_))));
        assert!(matches!(topk_accuracy(&[], &[], 1), Err(Error::Usage(_))));
        assert!(matches!(dba_score(&[[1, 2, 3]], &[1], 0.0), Err(Error::Domain(_))));
        assert!(matches!(dba_score(&[[1, 2, 3]], &[1], -2.0), Err(Error::Domain(_))));
    }

    #[test]
    fn randomized_agreement_with_independent_scoring() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let m = rng.random_range(1..12);
            let c = rng.random_range(5..20);
            let mut ranked = Vec::new();
            let mut labels = Vec::new();
            for _ in 0..m {
                let mut order: Vec<usize> = (0..c).collect();
                order.shuffle(&mut rng);
                ranked.push(order);
                labels.push(rng.random_range(0..c));
            }
            let top3: Vec<[usize; 3]> = ranked.iter().map(|r| [r[0], r[1], r[2]]).collect();
            let delta = rng.random_range(1..8) as f64;
            for k in [1, 3, 5] {
                let a = topk_accuracy(&ranked, &labels, k).unwrap();
                approx(a, topk_by_scan(&ranked, &labels, k), 1e-12);
            }
            let d = dba_score(&top3, &labels, delta).unwrap();
            approx(d, dba_by_scan(&top3, &labels, delta), 1e-12);

            let t1 = topk_accuracy(&ranked, &labels, 1).unwrap();
            let t3 = topk_accuracy(&ranked, &labels, 3).unwrap();
            let t5 = topk_accuracy(&ranked, &labels, 5).unwrap();
            assert!(t1 <= t3 + 1e-12 && t3 <= t5 + 1e-12);
            if delta >= 1.0 {
                assert!(d >= t1 - 1e-12, "dba {d} < top1 {t1}");
            }
            let stricter = dba_score(&top3, &labels, (delta - 0.5).max(0.25)).unwrap();
            assert!(stricter <= d + 1e-12, "smaller delta increased dba");
        }
    }

    fn column_matrix(classes: usize, ranked_cols: &[Vec<usize>]) -> Array2<f64> {
        // build probabilities whose per-column ranking equals ranked_cols
        let slots = ranked_cols.len();
        let mut p = Array2::<f64>::zeros((classes, slots));
        for (j, order) in ranked_cols.iter().enumerate() {
            for (rank, &c) in order.iter().enumerate() {
                p[(c, j)] = 1.0 - rank as f64 / classes as f64;
            }
        }
        p
    }

    #[test]
    fn report_averages_are_slot_means() {
        // slot 0: exact hits (dba 1); slot 1: all three ranked beams
        // one step away (each Y_k = 0.8 at delta 5)
        let classes = 8;
        let m1 = column_matrix(classes, &[vec![2, 0, 1, 3, 4, 5, 6, 7], vec![3, 1, 0, 5, 6, 7, 4, 2]]);
        let m2 = column_matrix(classes, &[vec![5, 1, 2, 3, 4, 0, 6, 7], vec![4, 6, 7, 0, 1, 2, 3, 5]]);
        let labels = vec![vec![2, 2], vec![5, 5]];
        let report = slot_report(&[m1, m2], &labels, 5.0).unwrap();
        approx(report.per_slot[0].dba, 1.0, 1e-12);
        approx(report.per_slot[1].dba, 0.8, 1e-12);
        approx(report.adba, 0.9, 1e-12);
        approx(report.per_slot[0].top1, 1.0, 1e-12);
        approx(report.per_slot[1].top1, 0.0, 1e-12);
        approx(report.atop1, 0.5, 1e-12);
        assert_eq!(report.n_samples, 2);
        let mean_top3: f64 = report.per_slot.iter().map(|s| s.top3).sum::<f64>() / 2.0;
        approx(report.atop3, mean_top3, 1e-12);
    }

    #[test]
    fn single_slot_report_equals_its_slot() {
        let classes = 6;
        let m = column_matrix(classes, &[vec![1, 0, 2, 3, 4, 5]]);
        let report = slot_report(std::slice::from_ref(&m), &[vec![1]], 5.0).unwrap();
        approx(report.atop1, report.per_slot[0].top1, 1e-12);
        approx(report.adba, report.per_slot[0].dba, 1e-12);
        assert!(matches!(slot_report(&[], &[], 5.0), Err(Error::Usage(_))));
    }

    #[test]
    fn report_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        let classes = 8;
        let m = column_matrix(classes, &[vec![0, 1, 2, 3, 4, 5, 6, 7]]);
        let report = slot_report(std::slice::from_ref(&m), &[vec![0]], 5.0).unwrap();
        write_report(&path, &report).unwrap();
        let back = read_report(&path).unwrap();
        assert_eq!(back, report);
        write_report(&path, &back).unwrap();
        let again = read_report(&path).unwrap();
        assert_eq!(again, report);
    }
}
