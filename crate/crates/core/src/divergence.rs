//! Cross-aspect pseudo-reward gaps and the preference-divergence term.
//!
//! A pair labeled by aspect `k` is scored by every foreign head `k' != k`.
//! Gaps of head `k'` are divided by the γ-quantile `q_k'` of its absolute
//! foreign gaps, clipped to `[-1, 1]`, and the PD term is the negated sum of
//! those normalized gaps. Negative PD means the other aspects agree with the
//! label; positive PD means they contradict it.

use alloc::string::String;
use alloc::vec::Vec;

use crate::corpus::{AggregatedDataset, PreferencePair};
use crate::error::{Error, Result};
use crate::reward::RewardModel;

/// Length-penalized gap of a foreign head on a pair from another aspect.
pub fn pseudo_gap(model: &RewardModel, pair: &PreferencePair, rho: f64) -> Result<f64> {
    if pair.aspect == model.aspect {
        return Err(Error::SameAspect {
            aspect: model.aspect,
            id: pair.id.clone(),
        });
    }
    model.penalized_gap(pair, rho)
}

/// 1-based rank `ceil(gamma * n)` clamped to `[1, n]`. Products within 1e-9
/// (relative) of an integer are treated as that integer so that e.g.
/// `0.9 * 10` selects rank 9 regardless of representation error.
pub fn nearest_rank(gamma: f64, n: usize) -> usize {
    let x = gamma * n as f64;
    let nearest = libm::round(x);
    let rank = if (x - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        libm::ceil(x)
    };
    (rank as usize).clamp(1, n.max(1))
}

/// Nearest-rank γ-quantile; zero for an empty set.
pub fn nearest_rank_quantile(values: &[f64], gamma: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted[nearest_rank(gamma, sorted.len()) - 1]
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileScales {
    pub gamma: f64,
    /// `q[k]`: scale of head `k`, computed from pairs of the other aspects.
    pub q: Vec<f64>,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::param("gamma", alloc::format!("must lie in (0, 1), got {gamma}")))
    }
}

/// Requires exactly one head per aspect, in aspect order, of the dataset's dimension.
pub fn check_models(dataset: &AggregatedDataset, models: &[RewardModel]) -> Result<()> {
    for k in 0..dataset.kappa() {
        let model = models.get(k).filter(|m| m.aspect == k).ok_or(Error::MissingModel(k))?;
        if model.dim() != dataset.feature_dim() {
            return Err(Error::Dimension {
                expected: dataset.feature_dim(),
                found: model.dim(),
            });
        }
    }
    if models.len() != dataset.kappa() {
        return Err(Error::param("models", "one reward model per aspect is required"));
    }
    Ok(())
}

/// `|pseudo_gap|` of `model` over every pair outside its own aspect, in dataset order.
pub fn foreign_abs_gaps(dataset: &AggregatedDataset, model: &RewardModel, rho: f64) -> Result<Vec<f64>> {
    dataset
        .pairs()
        .iter()
        .filter(|p| p.aspect != model.aspect)
        .map(|p| pseudo_gap(model, p, rho).map(f64::abs))
        .collect()
}

pub fn compute_quantile_scales(
    dataset: &AggregatedDataset,
    models: &[RewardModel],
    rho: f64,
    gamma: f64,
) -> Result<QuantileScales> {
    check_gamma(gamma)?;
    check_models(dataset, models)?;
    let q = models
        .iter()
        .map(|m| foreign_abs_gaps(dataset, m, rho).map(|gaps| nearest_rank_quantile(&gaps, gamma)))
        .collect::<Result<_>>()?;
    Ok(QuantileScales { gamma, q })
}

/// `clip(gap / q, -1, 1)`, or `sign(gap)` when `q == 0`.
pub fn normalize_gap(gap: f64, q: f64) -> f64 {
    if q > 0.0 {
        (gap / q).clamp(-1.0, 1.0)
    } else if gap > 0.0 {
        1.0
    } else if gap < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForeignGap {
    pub aspect: usize,
    /// Unset when the row was read back from a table file.
    pub raw: Option<f64>,
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdRow {
    pub id: String,
    pub aspect: usize,
    /// One entry per foreign aspect, ascending.
    pub gaps: Vec<ForeignGap>,
    pub pd: f64,
}

impl PdRow {
    /// Builds a row from normalized foreign gaps; PD is their negated sum.
    pub fn from_gaps(id: String, aspect: usize, gaps: Vec<ForeignGap>) -> Self {
        let pd = -gaps.iter().map(|g| g.normalized).sum::<f64>();
        PdRow { id, aspect, gaps, pd }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdScoreTable {
    pub aspect_names: Vec<String>,
    pub scales: QuantileScales,
    /// Same order as the dataset.
    pub rows: Vec<PdRow>,
}

impl PdScoreTable {
    pub fn kappa(&self) -> usize {
        self.aspect_names.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn pd_values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.pd).collect()
    }
}

/// PD row of one pair given all heads and their scales.
pub fn pd_row(pair: &PreferencePair, models: &[RewardModel], scales: &QuantileScales, rho: f64) -> Result<PdRow> {
    let mut gaps = Vec::with_capacity(models.len().saturating_sub(1));
    for model in models.iter().filter(|m| m.aspect != pair.aspect) {
        let raw = pseudo_gap(model, pair, rho)?;
        let q = *scales.q.get(model.aspect).ok_or(Error::MissingModel(model.aspect))?;
        gaps.push(ForeignGap {
            aspect: model.aspect,
            raw: Some(raw),
            normalized: normalize_gap(raw, q),
        });
    }
    Ok(PdRow::from_gaps(pair.id.clone(), pair.aspect, gaps))
}

pub fn compute_pd_table(
    dataset: &AggregatedDataset,
    models: &[RewardModel],
    rho: f64,
    gamma: f64,
) -> Result<PdScoreTable> {
    let scales = compute_quantile_scales(dataset, models, rho, gamma)?;
    let rows = dataset
        .pairs()
        .iter()
        .map(|p| pd_row(p, models, &scales, rho))
        .collect::<Result<_>>()?;
    Ok(PdScoreTable {
        aspect_names: dataset.aspect_names().to_vec(),
        scales,
        rows,
    })
}
