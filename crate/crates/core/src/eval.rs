//! Accuracy reports for a trained field against exact labels.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::PoseCorpus;
use crate::error::{Error, Result};
use crate::field::FieldModel;
use crate::sampler::{LabeledSample, Source};

/// Band edges for per-distance errors, radians; the last band is open.
pub const DISTANCE_BANDS: [f64; 6] = [0.0, 0.1, 0.25, 0.5, 1.0, 2.0];

/// Labels at or below this count toward `mae_within`.
pub const MAE_LABEL_CAP: f64 = 2.0;

/// Median of a nonempty slice (mean of the middle pair for even lengths).
pub fn median(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "median of an empty slice");
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample Pearson correlation; `None` when either side is constant or lengths differ.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ma, mb) = (mean(a), mean(b));
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandError {
    pub lo: f64,
    /// `f64::INFINITY` for the last band.
    pub hi: f64,
    pub count: usize,
    pub mae: Option<f64>,
    pub mean_prediction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub count: usize,
    pub mae: f64,
    /// MAE over queries whose label is at most [`MAE_LABEL_CAP`].
    pub mae_within: Option<f64>,
    pub pearson: Option<f64>,
    pub bands: Vec<BandError>,
    /// Corpus rows never drawn as on-manifold training samples.
    pub unseen_rows: usize,
    pub unseen_row_mean_prediction: Option<f64>,
}

impl EvalReport {
    /// `metric,value` lines followed by a per-band table.
    pub fn to_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| format!("{v:?}")).unwrap_or_default();
        let mut out = String::from("metric,value\n");
        out += &format!("count,{}\n", self.count);
        out += &format!("mae,{:?}\n", self.mae);
        out += &format!("mae_within_{MAE_LABEL_CAP},{}\n", opt(self.mae_within));
        out += &format!("pearson,{}\n", opt(self.pearson));
        out += &format!("unseen_rows,{}\n", self.unseen_rows);
        out += &format!("unseen_row_mean_prediction,{}\n", opt(self.unseen_row_mean_prediction));
        out += "\nband_lo,band_hi,count,mae,mean_prediction\n";
        for b in &self.bands {
            out += &format!("{:?},{:?},{},{},{}\n", b.lo, b.hi, b.count, opt(b.mae), opt(b.mean_prediction));
        }
        out
    }
}

/// Indices of corpus rows that no on-manifold sample in `training` equals.
pub fn unseen_corpus_rows(corpus: &PoseCorpus, training: &[LabeledSample]) -> Result<Vec<usize>> {
    let mut seen = HashSet::new();
    for s in training.iter().filter(|s| s.source == Source::On) {
        let hit = corpus.nearest(&s.q)?;
        if hit.distance == 0.0 {
            seen.insert(hit.index);
        }
    }
    Ok((0..corpus.len()).filter(|i| !seen.contains(i)).collect())
}

/// Compares predictions on `held_out` with its exact labels and reports the
/// mean prediction on the given corpus rows.
pub fn evaluate_field(
    model: &FieldModel,
    held_out: &[LabeledSample],
    corpus: &PoseCorpus,
    unseen_rows: &[usize],
) -> Result<EvalReport> {
    if held_out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let queries: Vec<f64> = held_out.iter().flat_map(|s| s.q.iter().copied()).collect();
    let pred = model.predict_batch(&queries)?;
    let labels: Vec<f64> = held_out.iter().map(|s| s.label).collect();
    let errors: Vec<f64> = pred.iter().zip(&labels).map(|(p, y)| (p - y).abs()).collect();

    let within: Vec<f64> = errors.iter().zip(&labels).filter(|(_, &y)| y <= MAE_LABEL_CAP).map(|(e, _)| *e).collect();
    let mut bands = Vec::with_capacity(DISTANCE_BANDS.len());
    for (i, &lo) in DISTANCE_BANDS.iter().enumerate() {
        let hi = DISTANCE_BANDS.get(i + 1).copied().unwrap_or(f64::INFINITY);
        let idx: Vec<usize> = (0..labels.len()).filter(|&k| labels[k] >= lo && labels[k] < hi).collect();
        let pick = |v: &[f64]| -> Option<f64> {
            (!idx.is_empty()).then(|| idx.iter().map(|&k| v[k]).sum::<f64>() / idx.len() as f64)
        };
        bands.push(BandError { lo, hi, count: idx.len(), mae: pick(&errors), mean_prediction: pick(&pred) });
    }

    let rows: Vec<f64> = unseen_rows.iter().flat_map(|&i| corpus.row(i).iter().copied()).collect();
    let row_pred = model.predict_batch(&rows)?;
    Ok(EvalReport {
        count: held_out.len(),
        mae: mean(&errors),
        mae_within: (!within.is_empty()).then(|| mean(&within)),
        pearson: pearson(&pred, &labels),
        bands,
        unseen_rows: unseen_rows.len(),
        unseen_row_mean_prediction: (!row_pred.is_empty()).then(|| mean(&row_pred)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_and_pearson() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&a, &[2.0, 4.0, 6.0, 8.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&a, &[-1.0, -2.0, -3.0, -4.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&a, &[1.0; 4]), None);
        assert_eq!(pearson(&a, &[1.0; 3]), None);
    }
}
