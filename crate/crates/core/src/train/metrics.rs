use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsi::PatchSet;
use crate::ladder::{predict, LadderParams, LadderSpec};
use crate::real::Real;

/// Classification scores derived from a confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Overall accuracy, `trace / total`.
    pub oa: f64,
    /// Average accuracy: mean recall over classes present in the test set.
    pub aa: f64,
    /// Recall per class; `None` for classes with no test examples.
    pub per_class: Vec<Option<f64>>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

impl Metrics {
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Result<Self> {
        let k = confusion.len();
        if confusion.iter().any(|r| r.len() != k) {
            return Err(Error::Dimension("confusion matrix must be square".into()));
        }
        let total: u64 = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::Precondition("empty test set".into()));
        }
        let trace: u64 = (0..k).map(|i| confusion[i][i]).sum();
        let per_class: Vec<Option<f64>> = confusion
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let n: u64 = row.iter().sum();
                (n > 0).then(|| row[i] as f64 / n as f64)
            })
            .collect();
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        let aa = present.iter().sum::<f64>() / present.len() as f64;
        Ok(Metrics {
            oa: trace as f64 / total as f64,
            aa,
            per_class,
            confusion,
        })
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Dimension(format!(
                "{} labels vs {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut confusion = vec![vec![0u64; classes]; classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= classes || p >= classes {
                return Err(Error::Dimension(format!("class index out of range {classes}")));
            }
            confusion[t][p] += 1;
        }
        Self::from_confusion(confusion)
    }

    /// Recomputes OA from the confusion matrix and compares exactly.
    pub fn is_consistent(&self) -> bool {
        Self::from_confusion(self.confusion.clone()).is_ok_and(|m| m.oa == self.oa && m.aa == self.aa)
    }
}

/// Clean-encoder predictions for `indices`, in chunks of `chunk` rows.
pub fn predict_indices<T: Real>(
    spec: &LadderSpec,
    params: &LadderParams<T>,
    patches: &PatchSet,
    indices: &[usize],
    chunk: usize,
) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(indices.len());
    for part in indices.chunks(chunk.max(1)) {
        let x = patches.gather::<T>(part, &spec.input_shape)?;
        out.extend(predict(spec, params, &x)?);
    }
    Ok(out)
}

/// Scores the clean encoder on labeled `indices`.
pub fn evaluate<T: Real>(
    spec: &LadderSpec,
    params: &LadderParams<T>,
    patches: &PatchSet,
    indices: &[usize],
    chunk: usize,
) -> Result<Metrics> {
    if indices.is_empty() {
        return Err(Error::Precondition("empty test set".into()));
    }
    let truth = indices
        .iter()
        .map(|&i| patches.class_of(i))
        .collect::<Result<Vec<_>>>()?;
    let predicted = predict_indices(spec, params, patches, indices, chunk)?;
    let m = Metrics::from_predictions(&truth, &predicted, spec.num_classes())?;
    debug_assert!(m.is_consistent());
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_confusion() {
        let m = Metrics::from_confusion(vec![vec![2, 1], vec![0, 3]]).unwrap();
        assert!((m.oa - 5.0 / 6.0).abs() < 1e-15);
        assert!((m.aa - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn constant_prediction_on_balanced_nine_classes() {
        let truth: Vec<usize> = (0..9).flat_map(|k| [k; 4]).collect();
        let m = Metrics::from_predictions(&truth, &[0; 36], 9).unwrap();
        assert!((m.oa - 1.0 / 9.0).abs() < 1e-15);
        assert!((m.aa - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictions() {
        let truth = [0, 1, 2, 2, 1];
        let m = Metrics::from_predictions(&truth, &truth, 3).unwrap();
        assert_eq!(m.oa, 1.0);
        for (i, row) in m.confusion.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                assert!(i == j || c == 0);
            }
        }
        assert!(m.is_consistent());
    }

    #[test]
    fn empty_is_error() {
        assert!(Metrics::from_predictions(&[], &[], 3).is_err());
    }
}
