//! Evaluation metrics shared by the CLI and the test suites.

use nalgebra::DVector;

use crate::error::Result;
use crate::mlp::MLPModel;
use crate::sampler::TrainingSet;

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per-entry relative errors |pred − truth| / max(truth, floor), with the
/// floor set to 1e-6 of the row's largest true value. Entries at or below the
/// numerical-rank floor of the spectrum would otherwise produce meaningless
/// ratios.
pub fn relative_errors(pred: &DVector<f64>, truth: &DVector<f64>) -> Vec<f64> {
    let top = truth.iter().cloned().fold(0.0_f64, f64::max);
    let floor = 1e-6 * top.max(f64::MIN_POSITIVE);
    pred.iter()
        .zip(truth.iter())
        .map(|(&p, &t)| (p - t).abs() / t.max(floor))
        .collect()
}

/// Median relative errors of the predictor over the validation rows:
/// (median over the top `top_k` singular values, median over all entries).
pub fn predictor_median_errors(
    model: &MLPModel,
    set: &TrainingSet,
    top_k: usize,
) -> Result<(f64, f64)> {
    let mut top_errors = Vec::new();
    let mut all_errors = Vec::new();
    for &row in set.val_indices().iter() {
        let input = set.inputs.row(row).transpose();
        let truth = set.targets.row(row).transpose();
        let pred = model.predict_singular_values(&input)?;
        let errs = relative_errors(&pred, &truth);
        for (k, e) in errs.iter().enumerate() {
            if k < top_k {
                top_errors.push(*e);
            }
            all_errors.push(*e);
        }
    }
    Ok((median(&mut top_errors), median(&mut all_errors)))
}

/// Pearson correlation between two equally sized vectors.
pub fn pearson(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    assert_eq!(a.len(), b.len());
    let ma = a.mean();
    let mb = b.mean();
    let am = a.map(|v| v - ma);
    let bm = b.map(|v| v - mb);
    let denom = am.norm() * bm.norm();
    if denom == 0.0 {
        return 0.0;
    }
    am.dot(&bm) / denom
}
