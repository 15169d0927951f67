//! Gaussian naive Bayes.

use serde::{Deserialize, Serialize};

use super::{check_data, Dataset, MlError};

pub const VARIANCE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNb {
    /// Indexed by class (0, 1).
    pub means: [Vec<f64>; 2],
    pub variances: [Vec<f64>; 2],
    pub priors: [f64; 2],
}

impl GaussianNb {
    fn log_joint(&self, class: usize, x: &[f64]) -> f64 {
        let mut s = self.priors[class].ln();
        for ((v, m), var) in x.iter().zip(&self.means[class]).zip(&self.variances[class]) {
            s += -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (v - m) * (v - m) / (2.0 * var);
        }
        s
    }

    /// Posterior of class 1, normalized with log-sum-exp.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let (a0, a1) = (self.log_joint(0, x), self.log_joint(1, x));
        let m = a0.max(a1);
        let lse = m + ((a0 - m).exp() + (a1 - m).exp()).ln();
        (a1 - lse).exp()
    }
}

pub fn train_gaussian_nb(data: &Dataset) -> Result<GaussianNb, MlError> {
    check_data(data)?;
    let mut means = [vec![0.0; data.d], vec![0.0; data.d]];
    let mut variances = [vec![0.0; data.d], vec![0.0; data.d]];
    let mut counts = [0usize; 2];
    for (row, y) in data.x.iter().zip(&data.y) {
        let c = usize::from(*y);
        counts[c] += 1;
        for (m, v) in means[c].iter_mut().zip(row) {
            *m += v;
        }
    }
    if counts.contains(&0) {
        return Err(MlError::Shape("both labels must be present".into()));
    }
    for c in 0..2 {
        for m in &mut means[c] {
            *m /= counts[c] as f64;
        }
    }
    for (row, y) in data.x.iter().zip(&data.y) {
        let c = usize::from(*y);
        for ((s, v), m) in variances[c].iter_mut().zip(row).zip(&means[c]) {
            *s += (v - m) * (v - m);
        }
    }
    for c in 0..2 {
        for s in &mut variances[c] {
            *s = (*s / counts[c] as f64).max(VARIANCE_FLOOR);
        }
    }
    let n = data.len() as f64;
    Ok(GaussianNb { means, variances, priors: [counts[0] as f64 / n, counts[1] as f64 / n] })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirrored_classes_give_half_at_origin() {
        let d = Dataset::new(vec![vec![-2.0], vec![-1.0], vec![1.0], vec![2.0]], vec![0, 0, 1, 1]).unwrap();
        let m = train_gaussian_nb(&d).unwrap();
        assert!((m.predict_proba(&[0.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn hand_computed_posterior() {
        // class 0: {0, 2} -> mean 1, var 1; class 1: {3, 5, 7} -> mean 5, var 8/3; priors 2/5, 3/5
        let d = Dataset::new(vec![vec![0.0], vec![2.0], vec![3.0], vec![5.0], vec![7.0]], vec![0, 0, 1, 1, 1]).unwrap();
        let m = train_gaussian_nb(&d).unwrap();
        let pdf = |x: f64, mu: f64, var: f64| (-(x - mu) * (x - mu) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
        let x = 2.5;
        let j0 = 0.4 * pdf(x, 1.0, 1.0);
        let j1 = 0.6 * pdf(x, 5.0, 8.0 / 3.0);
        assert!((m.predict_proba(&[x]) - j1 / (j0 + j1)).abs() < 1e-9);
    }

    #[test]
    fn constant_column_is_floored() {
        let d = Dataset::new(vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0], vec![1.0, 3.0]], vec![0, 0, 1, 1]).unwrap();
        let m = train_gaussian_nb(&d).unwrap();
        assert_eq!(m.variances[0][0], VARIANCE_FLOOR);
        let p = m.predict_proba(&[1.0, 1.5]);
        assert!(p.is_finite() && (0.0..=1.0).contains(&p));
    }
}
