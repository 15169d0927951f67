//! A one-hidden-layer network with logistic units, trained by full-batch gradient descent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_data, sigmoid, softplus, Dataset, MlError, Standardizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeuralParams {
    pub hidden_units: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for NeuralParams {
    fn default() -> Self {
        Self { hidden_units: 12, learning_rate: 1.0, epochs: 600, l2: 1e-4 }
    }
}

/// Parameter layout: `w1` (`hidden x inputs`, row major), `b1` (`hidden`), `w2` (`hidden`),
/// then `b2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub inputs: usize,
    pub hidden: usize,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.hidden * self.inputs + 2 * self.hidden + 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralNet {
    pub scaler: Standardizer,
    pub shape: Shape,
    pub params: Vec<f64>,
    pub loss_trace: Vec<f64>,
}

fn forward(theta: &[f64], shape: Shape, x: &[f64], hidden: &mut [f64]) -> f64 {
    let (d, h) = (shape.inputs, shape.hidden);
    let (w1, rest) = theta.split_at(h * d);
    let (b1, rest) = rest.split_at(h);
    let (w2, b2) = rest.split_at(h);
    let mut z = b2[0];
    for j in 0..h {
        let a = w1[j * d..(j + 1) * d].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b1[j];
        hidden[j] = sigmoid(a);
        z += w2[j] * hidden[j];
    }
    z
}

impl NeuralNet {
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let mut hidden = vec![0.0; self.shape.hidden];
        sigmoid(forward(&self.params, self.shape, &self.scaler.transform(x), &mut hidden))
    }
}

/// Mean cross-entropy plus `l2 / 2` times the squared weights (biases excluded), and its
/// gradient by backpropagation. `x` must already be standardized.
pub fn loss_and_gradient(theta: &[f64], shape: Shape, x: &[Vec<f64>], y: &[u8], l2: f64) -> (f64, Vec<f64>) {
    let (d, h) = (shape.inputs, shape.hidden);
    let n = x.len() as f64;
    let mut grad = vec![0.0; shape.len()];
    let mut hidden = vec![0.0; h];
    let mut loss = 0.0;
    let w2_at = h * d + h;
    for (row, label) in x.iter().zip(y) {
        let z = forward(theta, shape, row, &mut hidden);
        let t = f64::from(*label);
        loss += softplus(z) - t * z;
        let r = sigmoid(z) - t;
        for j in 0..h {
            grad[w2_at + j] += r * hidden[j];
            let delta = r * theta[w2_at + j] * hidden[j] * (1.0 - hidden[j]);
            for (g, v) in grad[j * d..(j + 1) * d].iter_mut().zip(row) {
                *g += delta * v;
            }
            grad[h * d + j] += delta;
        }
        grad[w2_at + h] += r;
    }
    for g in &mut grad {
        *g /= n;
    }
    let mut penalty = 0.0;
    for i in (0..h * d).chain(w2_at..w2_at + h) {
        grad[i] += l2 * theta[i];
        penalty += theta[i] * theta[i];
    }
    (loss / n + 0.5 * l2 * penalty, grad)
}

/// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` from a seeded stream.
pub fn init_params(shape: Shape, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r1 = 1.0 / (shape.inputs.max(1) as f64).sqrt();
    let r2 = 1.0 / (shape.hidden as f64).sqrt();
    let mut theta = Vec::with_capacity(shape.len());
    theta.extend((0..shape.hidden * shape.inputs).map(|_| rng.gen_range(-r1..=r1)));
    theta.extend(std::iter::repeat_n(0.0, shape.hidden));
    theta.extend((0..shape.hidden).map(|_| rng.gen_range(-r2..=r2)));
    theta.push(0.0);
    theta
}

pub fn train_neural_net(data: &Dataset, params: &NeuralParams, seed: u64) -> Result<NeuralNet, MlError> {
    if params.hidden_units == 0 {
        return Err(MlError::InvalidParams("hidden_units must be at least 1".into()));
    }
    check_data(data)?;
    let scaler = Standardizer::fit(data);
    let x: Vec<Vec<f64>> = data.x.iter().map(|r| scaler.transform(r)).collect();
    let shape = Shape { inputs: data.d, hidden: params.hidden_units };
    let mut theta = init_params(shape, seed);
    let mut loss_trace = Vec::with_capacity(params.epochs);
    for _ in 0..params.epochs {
        let (loss, grad) = loss_and_gradient(&theta, shape, &x, &data.y, params.l2);
        loss_trace.push(loss);
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= params.learning_rate * g;
        }
    }
    Ok(NeuralNet { scaler, shape, params: theta, loss_trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xor_like() -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let y = x.iter().map(|r| u8::from(r[0] * r[1] > 0.0)).collect();
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn zero_hidden_units_rejected() {
        let p = NeuralParams { hidden_units: 0, ..Default::default() };
        assert!(matches!(train_neural_net(&xor_like(), &p, 1), Err(MlError::InvalidParams(_))));
    }

    #[test]
    fn zero_epochs_depend_only_on_seed() {
        let p = NeuralParams { epochs: 0, ..Default::default() };
        let a = train_neural_net(&xor_like(), &p, 5).unwrap();
        let b = train_neural_net(&xor_like(), &p, 5).unwrap();
        let c = train_neural_net(&xor_like(), &p, 6).unwrap();
        assert_eq!(a.predict_proba(&[0.3, 0.2]), b.predict_proba(&[0.3, 0.2]));
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn learns_a_nonlinear_boundary() {
        let p = NeuralParams { hidden_units: 8, learning_rate: 2.0, epochs: 3000, l2: 0.0 };
        let m = train_neural_net(&xor_like(), &p, 1).unwrap();
        let right = xor_like().x.iter().zip(&xor_like().y).filter(|(x, y)| (m.predict_proba(x) >= 0.5) == (**y == 1)).count();
        assert!(right >= 180, "{right}");
        assert!(m.loss_trace.last() < m.loss_trace.first());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let data = xor_like();
        let shape = Shape { inputs: 2, hidden: 3 };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let theta: Vec<f64> = (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, grad) = loss_and_gradient(&theta, shape, &data.x, &data.y, 0.01);
        for i in 0..theta.len() {
            let h = 1e-6;
            let (mut up, mut down) = (theta.clone(), theta.clone());
            up[i] += h;
            down[i] -= h;
            let loss = |t: &[f64]| loss_and_gradient(t, shape, &data.x, &data.y, 0.01).0;
            let numeric = (loss(&up) - loss(&down)) / (2.0 * h);
            assert!((numeric - grad[i]).abs() <= 1e-6 * numeric.abs().max(1.0), "{i}: {numeric} vs {}", grad[i]);
        }
    }
}
