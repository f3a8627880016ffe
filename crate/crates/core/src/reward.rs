//! Length-debiased Bradley-Terry reward heads, one per aspect.
//!
//! Each head is linear over the response features. Training draws a
//! length-balanced subsample of the aspect slice and minimizes the
//! length-penalized pairwise logistic loss with plain mini-batch gradient
//! descent from a zero initialization.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;

use crate::corpus::{length_frequencies, partition_indices, AggregatedDataset, PreferencePair, Response};
use crate::error::{Error, Result};
use crate::math::{neg_log_sigmoid, rounded_count, seeded_rng, sigmoid, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    pub aspect: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl RewardModel {
    pub fn zeros(aspect: usize, dim: usize) -> Self {
        RewardModel {
            aspect,
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// `weights · features + bias`.
    pub fn score(&self, response: &Response) -> Result<f64> {
        if response.features.len() != self.weights.len() {
            return Err(Error::Dimension {
                expected: self.weights.len(),
                found: response.features.len(),
            });
        }
        let dot: f64 = self.weights.iter().zip(&response.features).map(|(w, x)| w * x).sum();
        Ok(dot + self.bias)
    }

    /// Length-penalized reward gap `r(chosen) - r(rejected) - rho * Δlen`.
    pub fn penalized_gap(&self, pair: &PreferencePair, rho: f64) -> Result<f64> {
        Ok(self.score(&pair.chosen)? - self.score(&pair.rejected)? - rho * pair.length_delta())
    }
}

pub fn reward_score(model: &RewardModel, response: &Response) -> Result<f64> {
    model.score(response)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    /// Length penalty, reward units per length unit.
    pub rho: f64,
    /// Balance temperature for the plus/minus sampling ratios.
    pub tau: f64,
    /// Fraction of each aspect slice used for training.
    pub p_r: f64,
    pub seed: u64,
    /// Length-balanced sampling; when off, `p_r` of the slice is drawn uniformly.
    pub balanced: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            epochs: 50,
            batch_size: 64,
            l2: 1e-4,
            rho: 0.0,
            tau: 1.0,
            p_r: 0.3,
            seed: 0,
            balanced: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param("learning_rate", "must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::param("epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be positive"));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::param("l2", "must be nonnegative"));
        }
        if !self.rho.is_finite() {
            return Err(Error::param("rho", "must be finite"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::param("tau", "must be positive"));
        }
        if !(self.p_r > 0.0 && self.p_r <= 1.0) {
            return Err(Error::param("p_r", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Temperature-softened sampling ratios for the plus and minus partitions.
pub fn balance_ratios(f_plus: f64, f_minus: f64, tau: f64) -> Result<(f64, f64)> {
    if !(tau > 0.0) {
        return Err(Error::param("tau", format!("must be positive, got {tau}")));
    }
    if !(0.0..=1.0).contains(&f_plus) || !(0.0..=1.0).contains(&f_minus) || (f_plus + f_minus - 1.0).abs() > 1e-12 {
        return Err(Error::param(
            "frequencies",
            format!("f_plus = {f_plus} and f_minus = {f_minus} must be frequencies summing to 1"),
        ));
    }
    // exp(a) / (exp(a) + exp(b)) == σ(a - b)
    let plus = sigmoid((f_plus - f_minus) / tau);
    Ok((plus, 1.0 - plus))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingWarning {
    pub aspect: usize,
    pub partition: &'static str,
    pub requested: usize,
    pub available: usize,
}

impl fmt::Display for SamplingWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "aspect {}: requested {} pairs from the {} partition but only {} exist; taking all of them",
            self.aspect, self.requested, self.partition, self.available
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalancedSample {
    /// Dataset positions: the plus draw followed by the minus draw, each in
    /// dataset order.
    pub indices: Vec<usize>,
    pub requested_plus: usize,
    pub requested_minus: usize,
    pub warnings: Vec<SamplingWarning>,
}

impl BalancedSample {
    pub fn ids(&self, dataset: &AggregatedDataset) -> Vec<String> {
        self.indices.iter().map(|&i| dataset.pairs()[i].id.clone()).collect()
    }
}

fn draw_without_replacement(pool: &[usize], amount: usize, rng: &mut impl rand::Rng) -> Vec<usize> {
    let mut picked: Vec<usize> = rand::seq::index::sample(rng, pool.len(), amount)
        .into_iter()
        .map(|j| pool[j])
        .collect();
    picked.sort_unstable();
    picked
}

/// Draws the reward-model training subset of one aspect slice.
pub fn sample_balanced(dataset: &AggregatedDataset, aspect: usize, config: &TrainConfig) -> Result<BalancedSample> {
    config.validate()?;
    let (plus, minus) = partition_indices(dataset, aspect)?;
    let n = plus.len() + minus.len();
    if n == 0 {
        return Err(Error::EmptyAspect(aspect));
    }
    let mut rng = seeded_rng(config.seed, Stream::RewardSample, aspect as u64);
    if !config.balanced {
        let mut pool = plus;
        pool.extend(minus);
        pool.sort_unstable();
        let requested = rounded_count(config.p_r * n as f64).min(n);
        return Ok(BalancedSample {
            indices: draw_without_replacement(&pool, requested, &mut rng),
            requested_plus: requested,
            requested_minus: 0,
            warnings: Vec::new(),
        });
    }
    let (f_plus, f_minus) = length_frequencies(plus.len(), minus.len()).expect("slice is nonempty");
    let (ratio_plus, ratio_minus) = balance_ratios(f_plus, f_minus, config.tau)?;
    let requested_plus = rounded_count(config.p_r * n as f64 * ratio_plus);
    let requested_minus = rounded_count(config.p_r * n as f64 * ratio_minus);
    let mut warnings = Vec::new();
    let mut take = |pool: &[usize], requested: usize, partition: &'static str| {
        if requested > pool.len() {
            warnings.push(SamplingWarning {
                aspect,
                partition,
                requested,
                available: pool.len(),
            });
        }
        draw_without_replacement(pool, requested.min(pool.len()), &mut rng)
    };
    let mut indices = take(&plus, requested_plus, "plus");
    indices.extend(take(&minus, requested_minus, "minus"));
    Ok(BalancedSample {
        indices,
        requested_plus,
        requested_minus,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// Mean penalized BT loss over a batch plus `(l2 / 2) * ||w||^2`.
fn penalized_objective(model: &RewardModel, batch: &[&PreferencePair], rho: f64, l2: f64) -> Result<(f64, Gradient)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let dim = model.dim();
    let mut grad = vec![0.0; dim];
    let mut total = 0.0;
    for pair in batch {
        for response in [&pair.chosen, &pair.rejected] {
            if response.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    id: pair.id.clone(),
                    field: "features",
                });
            }
        }
        let gap = model.penalized_gap(pair, rho)?;
        total += neg_log_sigmoid(gap);
        // d/dgap of -ln σ(gap)
        let slope = -sigmoid(-gap);
        for ((g, xc), xr) in grad.iter_mut().zip(&pair.chosen.features).zip(&pair.rejected.features) {
            *g += slope * (xc - xr);
        }
    }
    let n = batch.len() as f64;
    let mut loss = total / n;
    for g in &mut grad {
        *g /= n;
    }
    if l2 > 0.0 {
        loss += 0.5 * l2 * model.weights.iter().map(|w| w * w).sum::<f64>();
        for (g, w) in grad.iter_mut().zip(&model.weights) {
            *g += l2 * w;
        }
    }
    // The bias cancels inside every gap.
    Ok((
        loss,
        Gradient {
            weights: grad,
            bias: 0.0,
        },
    ))
}

/// Mean of `-ln σ(r(chosen) - r(rejected) - rho * Δlen)` over the batch and its
/// exact gradient with respect to the weights and bias.
pub fn bt_loss_penalized(model: &RewardModel, batch: &[&PreferencePair], rho: f64) -> Result<(f64, Gradient)> {
    penalized_objective(model, batch, rho, 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: RewardModel,
    /// Mean per-pair loss of each epoch, accumulated over its mini-batches.
    pub epoch_losses: Vec<f64>,
    pub sample: BalancedSample,
}

pub fn train_reward_model(dataset: &AggregatedDataset, aspect: usize, config: &TrainConfig) -> Result<RewardModel> {
    train_reward_model_traced(dataset, aspect, config).map(|o| o.model)
}

pub fn train_reward_model_traced(
    dataset: &AggregatedDataset,
    aspect: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let sample = sample_balanced(dataset, aspect, config)?;
    if sample.indices.is_empty() {
        return Err(Error::EmptyAspect(aspect));
    }
    let pairs = dataset.pairs();
    let mut order: Vec<&PreferencePair> = sample.indices.iter().map(|&i| &pairs[i]).collect();
    let mut model = RewardModel::zeros(aspect, dataset.feature_dim());
    let mut rng = seeded_rng(config.seed, Stream::RewardShuffle, aspect as u64);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (loss, grad) = penalized_objective(&model, batch, config.rho, config.l2)?;
            weighted += loss * batch.len() as f64;
            for (w, g) in model.weights.iter_mut().zip(&grad.weights) {
                *w -= config.learning_rate * g;
            }
            model.bias -= config.learning_rate * grad.bias;
        }
        epoch_losses.push(weighted / order.len() as f64);
    }
    Ok(TrainOutcome {
        model,
        epoch_losses,
        sample,
    })
}

/// Fraction of pairs whose penalized gap is positive; exact ties count one half.
pub fn pairwise_accuracy(model: &RewardModel, pairs: &[&PreferencePair], rho: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("pairs"));
    }
    let mut credit = 0.0;
    for pair in pairs {
        let gap = model.penalized_gap(pair, rho)?;
        if gap > 0.0 {
            credit += 1.0;
        } else if gap == 0.0 {
            credit += 0.5;
        }
    }
    Ok(credit / pairs.len() as f64)
}
