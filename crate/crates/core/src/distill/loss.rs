use ndarray::{Array2, ArrayView2, Zip};

use crate::{Error, Result};

/// Which network produced a [`FeatureBatch`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureSource {
    Teacher,
    Student,
}

/// Last-layer features, one row per image.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBatch {
    pub values: Array2<f64>,
    pub source: FeatureSource,
}

impl FeatureBatch {
    pub fn new(values: Array2<f64>, source: FeatureSource) -> Self {
        FeatureBatch { values, source }
    }

    pub fn from_f32(values: &Array2<f32>, source: FeatureSource) -> Self {
        FeatureBatch {
            values: values.mapv(f64::from),
            source,
        }
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

fn check_pair(teacher: ArrayView2<f64>, student: ArrayView2<f64>) -> Result<()> {
    if teacher.dim() != student.dim() {
        return Err(Error::Shape(format!(
            "teacher features {:?} vs student features {:?}",
            teacher.dim(),
            student.dim()
        )));
    }
    if teacher.nrows() == 0 {
        return Err(Error::Shape("empty feature batch".into()));
    }
    if !teacher.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("teacher features".into()));
    }
    if !student.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("student features".into()));
    }
    Ok(())
}

/// Feature regression loss: squared error summed over the feature
/// dimension and averaged over the batch.
///
/// Summing over features (instead of averaging over every element) scales
/// the loss, and so the effective learning rate, by the feature dimension.
pub fn kd_loss(teacher: &FeatureBatch, student: &FeatureBatch) -> Result<f64> {
    kd_loss_view(teacher.values.view(), student.values.view())
}

pub fn kd_loss_view(teacher: ArrayView2<f64>, student: ArrayView2<f64>) -> Result<f64> {
    check_pair(teacher, student)?;
    let n = teacher.nrows() as f64;
    let mut acc = 0.0;
    Zip::from(&student).and(&teacher).for_each(|&s, &t| acc += (s - t) * (s - t));
    Ok(acc / n)
}

/// Gradient of [`kd_loss`] with respect to the student features,
/// `2 (S - T) / N`. No gradient is defined for the teacher side.
pub fn kd_loss_grad(teacher: &FeatureBatch, student: &FeatureBatch) -> Result<Array2<f64>> {
    check_pair(teacher.values.view(), student.values.view())?;
    let n = teacher.len() as f64;
    Ok((&student.values - &teacher.values) * (2.0 / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fb(v: Array2<f64>, s: FeatureSource) -> FeatureBatch {
        FeatureBatch::new(v, s)
    }

    #[test]
    fn identical_batches_have_zero_loss() {
        let a = array![[0.3, -1.0, 2.0], [4.0, 0.0, 0.5]];
        let l = kd_loss(&fb(a.clone(), FeatureSource::Teacher), &fb(a, FeatureSource::Student)).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn single_sample_two_features() {
        let t = fb(array![[0.0, 0.0]], FeatureSource::Teacher);
        let s = fb(array![[1.0, 1.0]], FeatureSource::Student);
        assert_eq!(kd_loss(&t, &s).unwrap(), 2.0);
        assert_eq!(kd_loss_grad(&t, &s).unwrap(), array![[2.0, 2.0]]);
    }

    #[test]
    fn errors_on_mismatch_and_non_finite() {
        let t = fb(array![[0.0, 0.0]], FeatureSource::Teacher);
        let s = fb(array![[1.0, 1.0, 1.0]], FeatureSource::Student);
        assert!(matches!(kd_loss(&t, &s), Err(Error::Shape(_))));
        let s = fb(array![[f64::NAN, 1.0]], FeatureSource::Student);
        assert!(matches!(kd_loss(&t, &s), Err(Error::NonFinite(_))));
    }
}
