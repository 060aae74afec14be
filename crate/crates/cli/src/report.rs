//! Evaluation of a trained model over test windows: overall and per-state
//! RMSE, the |actual - corrected| error histogram, and identification
//! metrics at the configured thresholds.

use crate::config::HistogramSection;
use anyhow::{Context, Result};
use gridmend_core::dataset::WindowSample;
use gridmend_core::neural::{Batch, DaeModel};
use gridmend_core::pipeline::IdentificationThresholds;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// One evaluated element: the corrected final row of a test window.
#[derive(Debug, Clone)]
pub struct PredictionRow {
    pub window: usize,
    pub state: usize,
    pub actual: f64,
    pub attacked: f64,
    pub corrected: f64,
    pub is_attacked: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistogramReport {
    /// Bin edges; the final bin is open-ended so counts always sum to the
    /// element count.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentificationReport {
    pub true_positive: u64,
    pub false_positive: u64,
    pub true_negative: u64,
    pub false_negative: u64,
    pub accuracy: f64,
    pub true_positive_rate: f64,
    pub false_positive_rate: f64,
    /// Per-state confusion counts (tp, fp, tn, fn).
    pub per_state: Vec<(u64, u64, u64, u64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// RMSE of corrected vs actual over every evaluated element.
    pub overall_rmse: f64,
    /// RMSE of attacked vs actual over the same elements: the no-correction
    /// baseline.
    pub attacked_rmse: f64,
    pub per_state_rmse: Vec<f64>,
    pub error_histogram: HistogramReport,
    pub identification: IdentificationReport,
    pub n_windows: usize,
    pub n_states: usize,
}

/// Runs the model over the test windows (batched) and assembles the
/// per-element prediction rows.
pub fn predict(model: &DaeModel, test: &[WindowSample]) -> Result<Vec<PredictionRow>> {
    anyhow::ensure!(!test.is_empty(), "no test windows to evaluate");
    let n = model.n_states();
    let w = model.w;
    let mut rows = Vec::with_capacity(test.len() * n);
    let mut window_idx = 0usize;
    for chunk in test.chunks(256) {
        let refs: Vec<&WindowSample> = chunk.iter().collect();
        let (batch, _) = Batch::from_samples(&refs, &model.normalizer)
            .context("batch assembly failed")?;
        let pass = model.forward(&batch).context("forward pass failed")?;
        let last = &pass.outputs[w - 1];
        for (col, sample) in chunk.iter().enumerate() {
            let mut corrected: Vec<f64> = (0..n).map(|row| last[(row, col)]).collect();
            model.normalizer.invert_row(&mut corrected);
            let actual = sample.target_row(w - 1);
            let attacked = sample.input_row(w - 1);
            for state in 0..n {
                rows.push(PredictionRow {
                    window: window_idx,
                    state,
                    actual: actual[state],
                    attacked: attacked[state],
                    corrected: corrected[state],
                    is_attacked: sample.attack_mask[state],
                });
            }
            window_idx += 1;
        }
    }
    Ok(rows)
}

/// Builds the evaluation report from prediction rows.
pub fn evaluate(
    rows: &[PredictionRow],
    n_states: usize,
    thresholds: &IdentificationThresholds,
    histogram: &HistogramSection,
) -> Result<EvalReport> {
    anyhow::ensure!(!rows.is_empty(), "no prediction rows");
    let n_windows = rows.len() / n_states;
    let mut sq_corr = 0.0;
    let mut sq_att = 0.0;
    let mut per_state_sq = vec![0.0; n_states];
    let mut per_state_count = vec![0u64; n_states];

    let mut edges: Vec<f64> = (0..=histogram.bins)
        .map(|k| histogram.lo + (histogram.hi - histogram.lo) * k as f64 / histogram.bins as f64)
        .collect();
    edges.push(f64::INFINITY);
    let mut counts = vec![0u64; histogram.bins + 1];

    let mut id = IdentificationReport {
        true_positive: 0,
        false_positive: 0,
        true_negative: 0,
        false_negative: 0,
        accuracy: 0.0,
        true_positive_rate: 0.0,
        false_positive_rate: 0.0,
        per_state: vec![(0, 0, 0, 0); n_states],
    };
    let n_bus = n_states / 2;

    for row in rows {
        let err = row.actual - row.corrected;
        sq_corr += err * err;
        let base = row.actual - row.attacked;
        sq_att += base * base;
        per_state_sq[row.state] += err * err;
        per_state_count[row.state] += 1;

        let abs_err = err.abs();
        let bin = if abs_err >= histogram.hi {
            histogram.bins
        } else if abs_err < histogram.lo {
            0
        } else {
            (((abs_err - histogram.lo) / (histogram.hi - histogram.lo)
                * histogram.bins as f64) as usize)
                .min(histogram.bins - 1)
        };
        counts[bin] += 1;

        let limit = if row.state < n_bus {
            thresholds.theta
        } else {
            thresholds.v
        };
        let predicted = (row.attacked - row.corrected).abs() > limit;
        let entry = &mut id.per_state[row.state];
        match (row.is_attacked, predicted) {
            (true, true) => {
                id.true_positive += 1;
                entry.0 += 1;
            }
            (false, true) => {
                id.false_positive += 1;
                entry.1 += 1;
            }
            (false, false) => {
                id.true_negative += 1;
                entry.2 += 1;
            }
            (true, false) => {
                id.false_negative += 1;
                entry.3 += 1;
            }
        }
    }

    let total = rows.len() as f64;
    id.accuracy = (id.true_positive + id.true_negative) as f64 / total;
    let positives = id.true_positive + id.false_negative;
    let negatives = id.false_positive + id.true_negative;
    id.true_positive_rate = if positives > 0 {
        id.true_positive as f64 / positives as f64
    } else {
        1.0
    };
    id.false_positive_rate = if negatives > 0 {
        id.false_positive as f64 / negatives as f64
    } else {
        0.0
    };

    Ok(EvalReport {
        overall_rmse: (sq_corr / total).sqrt(),
        attacked_rmse: (sq_att / total).sqrt(),
        per_state_rmse: per_state_sq
            .iter()
            .zip(&per_state_count)
            .map(|(&sq, &c)| (sq / c as f64).sqrt())
            .collect(),
        error_histogram: HistogramReport { edges, counts },
        identification: id,
        n_windows,
        n_states,
    })
}

pub fn write_report_json(path: &Path, report: &EvalReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn write_histogram_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "bin_lo,bin_hi,count")?;
    let hist = &report.error_histogram;
    for (k, &count) in hist.counts.iter().enumerate() {
        writeln!(file, "{},{},{}", hist.edges[k], hist.edges[k + 1], count)?;
    }
    Ok(())
}

pub fn write_predictions_csv(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "window,state,actual,attacked,corrected,is_attacked")?;
    for r in rows {
        writeln!(
            file,
            "{},{},{:.17e},{:.17e},{:.17e},{}",
            r.window, r.state, r.actual, r.attacked, r.corrected, r.is_attacked as u8
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows_from(values: &[(f64, f64, f64, bool)], n_states: usize) -> Vec<PredictionRow> {
        values
            .iter()
            .enumerate()
            .map(|(k, &(actual, attacked, corrected, is_attacked))| PredictionRow {
                window: k / n_states,
                state: k % n_states,
                actual,
                attacked,
                corrected,
                is_attacked,
            })
            .collect()
    }

    #[test]
    fn perfect_model_reports_zero_rmse_and_mass_in_bin_zero() {
        let rows = rows_from(
            &[
                (1.0, 1.1, 1.0, true),
                (2.0, 2.0, 2.0, false),
                (0.5, 0.4, 0.5, true),
                (0.0, 0.0, 0.0, false),
            ],
            2,
        );
        let hist = HistogramSection {
            bins: 4,
            lo: 0.0,
            hi: 0.004,
        };
        let report = evaluate(&rows, 2, &IdentificationThresholds::default(), &hist).unwrap();
        assert_eq!(report.overall_rmse, 0.0);
        assert!(report.attacked_rmse > 0.0);
        assert_eq!(report.error_histogram.counts[0], 4);
        assert_eq!(report.error_histogram.counts.iter().sum::<u64>(), 4);
        // Perfect correction flags exactly the attacked coordinates.
        assert_eq!(report.identification.true_positive, 2);
        assert_eq!(report.identification.false_positive, 0);
        assert_eq!(report.identification.accuracy, 1.0);
    }

    #[test]
    fn histogram_counts_always_sum_to_element_count() {
        let rows = rows_from(
            &[
                (1.0, 1.0, 1.5, false), // |err| = 0.5 beyond hi -> overflow bin
                (1.0, 1.0, 1.0005, false),
                (1.0, 1.0, 0.9999, false),
                (1.0, 1.0, 1.0, false),
            ],
            2,
        );
        let hist = HistogramSection {
            bins: 5,
            lo: 0.0,
            hi: 0.005,
        };
        let report = evaluate(&rows, 2, &IdentificationThresholds::default(), &hist).unwrap();
        assert_eq!(report.error_histogram.counts.iter().sum::<u64>(), 4);
        assert_eq!(*report.error_histogram.counts.last().unwrap(), 1);
        assert_eq!(report.error_histogram.edges.len(), report.error_histogram.counts.len() + 1);
    }

    #[test]
    fn per_state_rmse_matches_hand_computation() {
        // Two windows, two states. State 0 errors: 0.3, 0.4 -> rmse 0.35355;
        // state 1 errors: 0, 0 -> 0.
        let rows = rows_from(
            &[
                (1.0, 1.0, 1.3, false),
                (2.0, 2.0, 2.0, false),
                (1.0, 1.0, 0.6, false),
                (2.0, 2.0, 2.0, false),
            ],
            2,
        );
        let hist = HistogramSection {
            bins: 2,
            lo: 0.0,
            hi: 1.0,
        };
        let report = evaluate(&rows, 2, &IdentificationThresholds::default(), &hist).unwrap();
        let expected = ((0.3f64.powi(2) + 0.4f64.powi(2)) / 2.0).sqrt();
        assert!((report.per_state_rmse[0] - expected).abs() < 1e-12);
        assert_eq!(report.per_state_rmse[1], 0.0);
    }
}
