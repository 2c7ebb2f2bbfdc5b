//! Linear classifier trained by single-sample stochastic gradient descent.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_training, sigmoid, Classifier, ClassifierError, Result};
use crate::features::Rows;
use crate::raster::Class;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SgdLoss {
    Hinge,
    Logistic,
    /// Modified Huber: quadratically smoothed hinge, linear below margin -1.
    Huber,
}

impl SgdLoss {
    pub const ALL: [SgdLoss; 3] = [SgdLoss::Hinge, SgdLoss::Logistic, SgdLoss::Huber];

    pub fn name(self) -> &'static str {
        match self {
            SgdLoss::Hinge => "hinge",
            SgdLoss::Logistic => "logistic",
            SgdLoss::Huber => "huber",
        }
    }

    /// Loss and its derivative with respect to the margin `m = y * score`.
    pub fn eval(self, m: f64) -> (f64, f64) {
        match self {
            SgdLoss::Hinge => {
                if m < 1.0 {
                    (1.0 - m, -1.0)
                } else {
                    (0.0, 0.0)
                }
            }
            SgdLoss::Logistic => {
                let loss = if m > 0.0 {
                    (-m).exp().ln_1p()
                } else {
                    -m + m.exp().ln_1p()
                };
                (loss, -sigmoid(-m))
            }
            SgdLoss::Huber => {
                if m >= 1.0 {
                    (0.0, 0.0)
                } else if m >= -1.0 {
                    ((1.0 - m) * (1.0 - m), -2.0 * (1.0 - m))
                } else {
                    (-4.0 * m, -4.0)
                }
            }
        }
    }
}

impl std::str::FromStr for SgdLoss {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        SgdLoss::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown loss `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdParams {
    pub loss: SgdLoss,
    pub alpha: f64,
    pub rebalance: bool,
    pub learning_rate: f64,
    pub decay: f64,
    pub patience: usize,
    pub min_epochs: usize,
    pub max_epochs: usize,
    pub min_learning_rate: f64,
    /// Required drop in epoch loss to count as an improvement.
    pub tolerance: f64,
}

impl Default for SgdParams {
    fn default() -> Self {
        SgdParams {
            loss: SgdLoss::Hinge,
            alpha: 1e-4,
            rebalance: false,
            learning_rate: 0.01,
            decay: 0.5,
            patience: 2,
            min_epochs: 5,
            max_epochs: 20,
            min_learning_rate: 1e-6,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSgdModel {
    pub loss: SgdLoss,
    pub alpha: f64,
    pub weights: Vec<f64>,
    pub bias: f64,
    /// `[dry, water]` sample weights.
    pub class_weights: [f64; 2],
    pub epochs: usize,
    pub final_learning_rate: f64,
    /// Regularized weighted training loss after each epoch.
    pub epoch_losses: Vec<f64>,
}

impl LinearSgdModel {
    fn raw_score(&self, x: &[f32]) -> f64 {
        self.bias + x.iter().zip(&self.weights).map(|(v, w)| *v as f64 * w).sum::<f64>()
    }
}

impl Classifier for LinearSgdModel {
    fn n_features(&self) -> usize {
        self.weights.len()
    }

    fn score(&self, x: &[f32]) -> f64 {
        self.raw_score(x)
    }

    fn probability(&self, score: f64) -> f64 {
        match self.loss {
            SgdLoss::Huber => 0.5 * (score.clamp(-1.0, 1.0) + 1.0),
            SgdLoss::Hinge | SgdLoss::Logistic => sigmoid(score),
        }
    }
}

fn sign(c: Class) -> f64 {
    if c.is_water() { 1.0 } else { -1.0 }
}

pub fn fit_sgd(x: Rows<'_>, y: &[Class], params: &SgdParams, seed: u64) -> Result<LinearSgdModel> {
    if !(params.alpha >= 0.0 && params.alpha.is_finite()) {
        return Err(ClassifierError::InvalidHyper(format!("alpha must be >= 0, got {}", params.alpha)));
    }
    if !(params.learning_rate > 0.0 && params.decay > 0.0 && params.decay < 1.0) {
        return Err(ClassifierError::InvalidHyper(
            "learning rate must be positive and decay in (0, 1)".into(),
        ));
    }
    let (dry, water) = check_training(&x, y)?;
    let n = y.len() as f64;
    let class_weights = if params.rebalance {
        [n / (2.0 * dry as f64), n / (2.0 * water as f64)]
    } else {
        [1.0, 1.0]
    };
    let mut model = LinearSgdModel {
        loss: params.loss,
        alpha: params.alpha,
        weights: vec![0.0; x.n_cols()],
        bias: 0.0,
        class_weights,
        epochs: 0,
        final_learning_rate: params.learning_rate,
        epoch_losses: Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..y.len()).collect();
    let mut rate = params.learning_rate;
    let mut best = f64::INFINITY;
    let mut stale = 0;
    while model.epochs < params.max_epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let row = x.row(i);
            let yi = sign(y[i]);
            let c = class_weights[usize::from(y[i].is_water())];
            let (_, dloss) = params.loss.eval(yi * model.raw_score(row));
            let g = c * dloss * yi;
            // Gradient step on the loss, then an exact proximal step on the L2 term.
            let shrink = 1.0 / (1.0 + rate * params.alpha);
            for (w, v) in model.weights.iter_mut().zip(row) {
                *w = (*w - rate * g * *v as f64) * shrink;
            }
            model.bias -= rate * g;
        }
        model.epochs += 1;

        let data_loss: f64 = (0..y.len())
            .map(|i| {
                let c = class_weights[usize::from(y[i].is_water())];
                c * params.loss.eval(sign(y[i]) * model.raw_score(x.row(i))).0
            })
            .sum::<f64>()
            / n;
        let l2: f64 = model.weights.iter().map(|w| w * w).sum();
        let loss = data_loss + 0.5 * params.alpha * l2;
        if !loss.is_finite() || model.weights.iter().any(|w| !w.is_finite()) {
            return Err(ClassifierError::Diverged(format!(
                "epoch {} loss {loss} at learning rate {rate}",
                model.epochs
            )));
        }
        model.epoch_losses.push(loss);
        if loss < best - params.tolerance {
            best = loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= params.patience {
                rate *= params.decay;
                stale = 0;
            }
        }
        model.final_learning_rate = rate;
        if model.epochs >= params.min_epochs && rate < params.min_learning_rate {
            break;
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::fixtures::two_clouds;
    use crate::classifiers::{predict, predict_proba};

    fn separable() -> (Vec<f32>, Vec<Class>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..200 {
            let a = (i % 20) as f32 / 20.0;
            let b = (i / 20) as f32 / 10.0;
            let water = a + b > 1.0;
            // Keep a margin around the boundary.
            if (a + b - 1.0).abs() < 0.15 {
                continue;
            }
            x.extend_from_slice(&[a, b]);
            y.push(Class::from_water(water));
        }
        (x, y)
    }

    #[test]
    fn hinge_separates_linearly_separable_data() {
        let (x, y) = separable();
        let params = SgdParams {
            alpha: 0.0,
            learning_rate: 1.0,
            max_epochs: 50,
            ..Default::default()
        };
        let model = fit_sgd(Rows::new(&x, 2).unwrap(), &y, &params, 0).unwrap();
        let pred = predict(&model, Rows::new(&x, 2).unwrap()).unwrap();
        assert_eq!(pred, y);
        assert_eq!(*model.epoch_losses.last().unwrap(), 0.0, "{:?}", model.epoch_losses);
    }

    #[test]
    fn huge_alpha_shrinks_weights_to_zero() {
        let (x, y) = two_clouds(200, 3, 2.0, 1);
        for loss in SgdLoss::ALL {
            let params = SgdParams {
                loss,
                alpha: 1e6,
                ..Default::default()
            };
            let m = fit_sgd(Rows::new(&x, 3).unwrap(), &y, &params, 3).unwrap();
            let norm = m.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
            assert!(norm < 1e-2, "{loss:?}: {norm}");
        }
    }

    #[test]
    fn same_seed_same_weights() {
        let (x, y) = two_clouds(300, 4, 1.0, 2);
        let params = SgdParams {
            loss: SgdLoss::Logistic,
            rebalance: true,
            ..Default::default()
        };
        let a = fit_sgd(Rows::new(&x, 4).unwrap(), &y, &params, 42).unwrap();
        let b = fit_sgd(Rows::new(&x, 4).unwrap(), &y, &params, 42).unwrap();
        let c = fit_sgd(Rows::new(&x, 4).unwrap(), &y, &params, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.weights, c.weights);
    }

    #[test]
    fn rebalancing_weights_are_inverse_frequency() {
        let (mut x, mut y) = two_clouds(100, 1, 2.0, 4);
        x.truncate(130);
        y.truncate(130);
        let params = SgdParams {
            rebalance: true,
            ..Default::default()
        };
        let m = fit_sgd(Rows::new(&x, 1).unwrap(), &y, &params, 0).unwrap();
        assert!((m.class_weights[0] - 130.0 / 200.0).abs() < 1e-12);
        assert!((m.class_weights[1] - 130.0 / 60.0).abs() < 1e-12);
        let plain = fit_sgd(Rows::new(&x, 1).unwrap(), &y, &SgdParams::default(), 0).unwrap();
        assert_eq!(plain.class_weights, [1.0, 1.0]);
    }

    #[test]
    fn loss_derivatives_match_finite_differences() {
        for loss in SgdLoss::ALL {
            for m in [-3.0, -0.5, 0.2, 0.7, 2.0] {
                let h = 1e-6;
                let fd = (loss.eval(m + h).0 - loss.eval(m - h).0) / (2.0 * h);
                assert!((fd - loss.eval(m).1).abs() < 1e-5, "{loss:?} at {m}");
            }
        }
    }

    #[test]
    fn schedule_respects_epoch_bounds_and_probabilities_normalize() {
        let (x, y) = two_clouds(100, 2, 0.1, 5);
        for loss in SgdLoss::ALL {
            let params = SgdParams {
                loss,
                ..Default::default()
            };
            let m = fit_sgd(Rows::new(&x, 2).unwrap(), &y, &params, 1).unwrap();
            assert!(m.epochs >= params.min_epochs && m.epochs <= params.max_epochs);
            assert!(m.final_learning_rate <= params.learning_rate);
            for p in predict_proba(&m, Rows::new(&x, 2).unwrap()).unwrap() {
                assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn divergence_is_reported() {
        let x = vec![f32::MAX, -f32::MAX, f32::MAX, -f32::MAX];
        let y = [Class::Water, Class::Dry, Class::Dry, Class::Water];
        let params = SgdParams {
            loss: SgdLoss::Huber,
            alpha: 0.0,
            learning_rate: 1e300,
            ..Default::default()
        };
        assert!(matches!(
            fit_sgd(Rows::new(&x, 1).unwrap(), &y, &params, 0),
            Err(ClassifierError::Diverged(_))
        ));
    }
}
