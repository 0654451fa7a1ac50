//! Full-batch gradient descent on the embedding losses.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::provider::{EmbeddingScene, LinearSemanticProvider, LossBreakdown};
use super::{Assignment, EmbeddingLossConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Standard deviation of the Gaussian weight initialization.
    pub init_std: f64,
    /// Share of scenes held out for provider selection.
    pub holdout_fraction: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            iterations: 2000,
            seed: 0,
            init_std: 0.5,
            holdout_fraction: 0.2,
        }
    }
}

/// Mean per-box losses at one iteration, measured before that iteration's update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord<T> {
    pub iteration: usize,
    pub train: LossBreakdown<T>,
    pub holdout: Option<T>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// Weights with the lowest held-out loss seen (training loss when nothing is held out).
    pub provider: LinearSemanticProvider<T>,
    pub initial: LinearSemanticProvider<T>,
    pub selected_iteration: usize,
    pub curve: Vec<LossRecord<T>>,
}

/// The seeded starting point of [`train_provider`].
pub fn initial_provider<T: Scalar>(dim: usize, hyper: &TrainHyper) -> Result<LinearSemanticProvider<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    LinearSemanticProvider::random(dim, hyper.init_std, &mut rng)
}

struct Split<'a, T> {
    scenes: Vec<(&'a EmbeddingScene<T>, Vec<Assignment>)>,
    boxes: usize,
}

impl<'a, T: Scalar> Split<'a, T> {
    fn new(all: &'a [EmbeddingScene<T>], idx: &[usize], cfg: &EmbeddingLossConfig<T>) -> Self {
        let scenes: Vec<_> = idx.iter().map(|&i| (&all[i], all[i].assign(cfg))).collect();
        let boxes = scenes.iter().map(|(s, _)| s.boxes().len()).sum();
        Self { scenes, boxes }
    }

    fn mean_loss(&self, provider: &LinearSemanticProvider<T>, sigma: T, grad: Option<&mut [T]>) -> LossBreakdown<T> {
        let mut total = LossBreakdown::default();
        if self.boxes == 0 {
            return total;
        }
        let scale = T::one() / T::from_count(self.boxes);
        match grad {
            Some(g) => {
                g.iter_mut().for_each(|v| *v = T::zero());
                for (scene, asg) in &self.scenes {
                    total += scene.accumulate(provider, asg, sigma, Some((&mut *g, scale)));
                }
            }
            None => {
                for (scene, asg) in &self.scenes {
                    total += scene.accumulate(provider, asg, sigma, None);
                }
            }
        }
        LossBreakdown {
            group: total.group * scale,
            separation: total.separation * scale,
        }
    }
}

/// Trains a [`LinearSemanticProvider`] on the group + separation loss with
/// fixed-step gradient descent, deterministic for a given seed.
pub fn train_provider<T: Scalar>(
    scenes: &[EmbeddingScene<T>],
    cfg: &EmbeddingLossConfig<T>,
    hyper: &TrainHyper,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if !(hyper.learning_rate.is_finite() && hyper.learning_rate > 0.0) {
        return Err(Error::InvalidParameter("learning rate must be positive".into()));
    }
    if !(0.0..1.0).contains(&hyper.holdout_fraction) {
        return Err(Error::InvalidParameter("holdout fraction must lie in [0, 1)".into()));
    }
    let dim = scenes
        .iter()
        .find(|s| s.dim() > 0)
        .map(|s| s.dim())
        .ok_or_else(|| Error::InvalidParameter("no training boxes".into()))?;
    if scenes.iter().any(|s| s.dim() != 0 && s.dim() != dim) {
        return Err(Error::InvalidParameter(
            "scenes disagree on descriptor dimension".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let initial = LinearSemanticProvider::random(dim, hyper.init_std, &mut rng)?;
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    order.shuffle(&mut rng);
    let n_hold = if scenes.len() >= 2 && hyper.holdout_fraction > 0.0 {
        ((scenes.len() as f64 * hyper.holdout_fraction).round() as usize).clamp(1, scenes.len() - 1)
    } else {
        0
    };
    let (hold_idx, train_idx) = order.split_at(n_hold);
    let train = Split::new(scenes, train_idx, cfg);
    let holdout = (n_hold > 0).then(|| Split::new(scenes, hold_idx, cfg));

    let lr = T::lit(hyper.learning_rate);
    let mut provider = initial.clone();
    let mut grad = vec![T::zero(); provider.weights().len()];
    let mut curve = Vec::with_capacity(hyper.iterations + 1);
    let mut best: Option<(T, usize, LinearSemanticProvider<T>)> = None;

    for iteration in 0..=hyper.iterations {
        let last = iteration == hyper.iterations;
        let train_loss = train.mean_loss(&provider, cfg.sigma, (!last).then_some(&mut grad[..]));
        let hold_loss = holdout
            .as_ref()
            .map(|h| h.mean_loss(&provider, cfg.sigma, None).total());
        let select = hold_loss.unwrap_or_else(|| train_loss.total());
        if !train_loss.total().is_finite() || !select.is_finite() {
            return Err(Error::NonFiniteLoss { iteration });
        }
        curve.push(LossRecord {
            iteration,
            train: train_loss,
            holdout: hold_loss,
        });
        if best.as_ref().is_none_or(|(b, _, _)| select < *b) {
            best = Some((select, iteration, provider.clone()));
        }
        if !last {
            provider.step(&grad, lr);
            if provider.weights().iter().any(|w| !w.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    iteration: iteration + 1,
                });
            }
        }
    }

    let (_, selected_iteration, provider) = best.expect("at least one iteration recorded");
    Ok(TrainOutcome {
        provider,
        initial,
        selected_iteration,
        curve,
    })
}
