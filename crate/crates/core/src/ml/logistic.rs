//! Logistic regression by full-batch gradient descent on standardized inputs.

use serde::{Deserialize, Serialize};

use super::{check_data, sigmoid, softplus, Dataset, MlError, Standardizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticParams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self { learning_rate: 0.5, epochs: 300, l2: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub scaler: Standardizer,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub loss_trace: Vec<f64>,
}

impl LogisticModel {
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let z = self.scaler.transform(x).iter().zip(&self.weights).map(|(a, w)| a * w).sum::<f64>() + self.bias;
        sigmoid(z)
    }
}

/// Mean cross-entropy plus `l2 / 2 * |w|^2` and its gradient. `theta` holds the weights
/// followed by the bias; `x` must already be standardized.
pub fn loss_and_gradient(theta: &[f64], x: &[Vec<f64>], y: &[u8], l2: f64) -> (f64, Vec<f64>) {
    let d = theta.len() - 1;
    let n = x.len() as f64;
    let mut grad = vec![0.0; d + 1];
    let mut loss = 0.0;
    for (row, label) in x.iter().zip(y) {
        let z = row.iter().zip(&theta[..d]).map(|(a, w)| a * w).sum::<f64>() + theta[d];
        let t = f64::from(*label);
        loss += softplus(z) - t * z;
        let r = sigmoid(z) - t;
        for (g, a) in grad[..d].iter_mut().zip(row) {
            *g += r * a;
        }
        grad[d] += r;
    }
    for g in &mut grad {
        *g /= n;
    }
    let mut penalty = 0.0;
    for (g, w) in grad[..d].iter_mut().zip(&theta[..d]) {
        *g += l2 * w;
        penalty += w * w;
    }
    (loss / n + 0.5 * l2 * penalty, grad)
}

pub fn train_logistic_regression(data: &Dataset, params: &LogisticParams) -> Result<LogisticModel, MlError> {
    check_data(data)?;
    let scaler = Standardizer::fit(data);
    let x: Vec<Vec<f64>> = data.x.iter().map(|r| scaler.transform(r)).collect();
    let mut theta = vec![0.0; data.d + 1];
    let mut loss_trace = Vec::with_capacity(params.epochs);
    for _ in 0..params.epochs {
        let (loss, grad) = loss_and_gradient(&theta, &x, &data.y, params.l2);
        loss_trace.push(loss);
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= params.learning_rate * g;
        }
    }
    let bias = theta.pop().unwrap_or(0.0);
    Ok(LogisticModel { scaler, weights: theta, bias, loss_trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable() -> Dataset {
        let xs: Vec<f64> = (0..30).map(|i| f64::from(i) / 3.0 - 5.0).collect();
        Dataset::new(xs.iter().map(|x| vec![*x]).collect(), xs.iter().map(|x| u8::from(*x > 0.0)).collect()).unwrap()
    }

    #[test]
    fn loss_decreases_every_epoch() {
        let m = train_logistic_regression(&separable(), &LogisticParams { learning_rate: 0.5, epochs: 200, l2: 0.0 }).unwrap();
        assert!(m.loss_trace.windows(2).all(|w| w[1] < w[0]));
        assert!(m.predict_proba(&[4.0]) > 0.9 && m.predict_proba(&[-4.0]) < 0.1);
    }

    #[test]
    fn zero_epochs_is_half() {
        let m = train_logistic_regression(&separable(), &LogisticParams { epochs: 0, ..Default::default() }).unwrap();
        assert_eq!(m.predict_proba(&[123.0]), 0.5);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let data = separable();
        let theta = [0.7, -0.3];
        let (_, grad) = loss_and_gradient(&theta, &data.x, &data.y, 0.1);
        for i in 0..theta.len() {
            let h = 1e-6;
            let (mut up, mut down) = (theta, theta);
            up[i] += h;
            down[i] -= h;
            let numeric = (loss_and_gradient(&up, &data.x, &data.y, 0.1).0 - loss_and_gradient(&down, &data.x, &data.y, 0.1).0) / (2.0 * h);
            assert!((numeric - grad[i]).abs() <= 1e-6 * numeric.abs().max(1.0), "{i}: {numeric} vs {}", grad[i]);
        }
    }
}
