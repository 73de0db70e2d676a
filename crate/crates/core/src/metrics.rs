//! Agreement statistics between predicted and reference scores.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{load_examples, Example, FeatureSource};
use crate::error::{Error, Result};
use crate::net::{forward, AssessmentResult, ModelParams};
use crate::signal::{Condition, CorpusManifest, Q_MAX, Q_MIN};
use crate::util::write_atomic;

fn check_pair(x: &[f64], y: &[f64], min_len: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < min_len {
        return Err(Error::Empty("metric input"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::UndefinedCorrelation("non-finite value"));
    }
    Ok(())
}

/// Mean squared difference.
pub fn mse(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_pair(truth, pred, 1)?;
    Ok(truth.iter().zip(pred).map(|(t, p)| (t - p) * (t - p)).sum::<f64>() / truth.len() as f64)
}

/// Pearson linear correlation coefficient.
pub fn pearson_lcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant input"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation: Pearson on average ranks.
pub fn spearman_srcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    pearson_lcc(&average_ranks(x), &average_ranks(y))
}

/// Population variance of frame scores, averaged over utterances.
pub fn frame_variance_clean(results: &[AssessmentResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::Empty("clean utterances"));
    }
    let mut total = 0.0;
    for r in results {
        let q = r.frame_scores();
        if q.len() < 2 {
            return Err(Error::TooShort { len: q.len(), needed: 2 });
        }
        let n = q.len() as f64;
        let mean = q.iter().sum::<f64>() / n;
        total += q.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    }
    Ok(total / results.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub utterance_id: String,
    pub condition: Condition,
    pub label_q: f64,
    pub pred_q: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalFailure {
    pub utterance_id: String,
    pub error: String,
}

/// Summary and per-utterance predictions for one evaluated manifest.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub mse: f64,
    /// `None` when the correlation is undefined; see `correlation_error`.
    pub lcc: Option<f64>,
    pub srcc: Option<f64>,
    pub correlation_error: Option<String>,
    /// `None` when the manifest holds no usable clean utterance.
    pub clean_frame_variance: Option<f64>,
    pub clamped: bool,
    pub failures: Vec<EvalFailure>,
    #[serde(skip)]
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn rows_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["utterance_id", "condition", "label_q", "pred_q"])?;
        for r in &self.rows {
            w.write_record([
                r.utterance_id.as_str(),
                r.condition.as_str(),
                &format!("{:.6}", r.label_q),
                &format!("{:.6}", r.pred_q),
            ])?;
        }
        w.into_inner().map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn save(&self, json_path: &Path, csv_path: &Path) -> Result<()> {
        write_atomic(json_path, self.to_json()?.as_bytes())?;
        write_atomic(csv_path, &self.rows_csv()?)
    }
}

/// Scores every example (in parallel, collected in input order).
pub fn predict(params: &ModelParams, examples: &[Example], clamp: bool) -> Result<Vec<AssessmentResult>> {
    examples
        .par_iter()
        .map(|ex| {
            let (r, _) = forward(&ex.spec, params)?;
            Ok(if clamp { r.clamped(Q_MIN, Q_MAX) } else { r })
        })
        .collect()
}

/// Builds a report from examples that already carry features.
pub fn evaluate_examples(params: &ModelParams, examples: &[Example], clamp: bool) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let results = predict(params, examples, clamp)?;
    report_from(examples, &results, clamp, Vec::new())
}

fn report_from(
    examples: &[Example],
    results: &[AssessmentResult],
    clamped: bool,
    failures: Vec<EvalFailure>,
) -> Result<EvalReport> {
    let truth: Vec<f64> = examples.iter().map(|e| e.label).collect();
    let pred: Vec<f64> = results.iter().map(|r| r.utterance_score()).collect();
    let mse = mse(&truth, &pred)?;
    let (lcc, srcc, correlation_error) = match (pearson_lcc(&truth, &pred), spearman_srcc(&truth, &pred)) {
        (Ok(l), Ok(s)) => (Some(l), Some(s), None),
        (Err(e), _) | (_, Err(e)) => (None, None, Some(e.to_string())),
    };
    let clean: Vec<AssessmentResult> = examples
        .iter()
        .zip(results)
        .filter(|(e, r)| e.condition == Condition::Clean && r.frame_scores().len() >= 2)
        .map(|(_, r)| r.clone())
        .collect();
    let clean_frame_variance = if clean.is_empty() {
        None
    } else {
        Some(frame_variance_clean(&clean)?)
    };
    let rows = examples
        .iter()
        .zip(&pred)
        .map(|(e, &p)| EvalRow {
            utterance_id: e.utterance_id.clone(),
            condition: e.condition,
            label_q: e.label,
            pred_q: p,
        })
        .collect();
    Ok(EvalReport {
        n: examples.len(),
        mse,
        lcc,
        srcc,
        correlation_error,
        clean_frame_variance,
        clamped,
        failures,
        rows,
    })
}

/// Loads features for a manifest and evaluates the model on every entry that
/// could be read; unreadable entries are listed in `failures`.
pub fn evaluate(
    params: &ModelParams,
    manifest: &CorpusManifest,
    source: &FeatureSource,
    clamp: bool,
) -> Result<EvalReport> {
    if manifest.is_empty() {
        return Err(Error::Empty("test manifest"));
    }
    let loaded = load_examples(manifest, source);
    let mut examples = Vec::new();
    let mut failures = Vec::new();
    for (entry, res) in manifest.entries.iter().zip(loaded) {
        match res {
            Ok(ex) => examples.push(ex),
            Err(e) => {
                log::warn!("skipping {}: {e}", entry.utterance_id);
                failures.push(EvalFailure {
                    utterance_id: entry.utterance_id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    if examples.is_empty() {
        return Err(Error::Empty("readable test utterances"));
    }
    let results = predict(params, &examples, clamp)?;
    report_from(&examples, &results, clamp, failures)
}
