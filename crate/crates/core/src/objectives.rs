//! Preference margins, DPO/DMPO losses, the DMPO loss bounds for a split of
//! the data, the condition under which PD selection minimizes both bounds,
//! and the win-score metric.
//!
//! PD values here follow the PD-term convention (`Δφ_k`): they enter the
//! DMPO logistic argument with a plus sign.

use alloc::format;
use alloc::vec::Vec;

use crate::corpus::PreferencePair;
use crate::error::{Error, Result};
use crate::math::{log_sigmoid, mean, neg_log_sigmoid};

#[derive(Debug, Clone, PartialEq)]
pub struct MarginRecord {
    pub pair_id: alloc::string::String,
    pub margin: f64,
    pub pd: f64,
}

/// `beta * [(π(w) - ref(w)) - (π(l) - ref(l))]` from stored log-probabilities.
pub fn preference_margin(pair: &PreferencePair, beta: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::param("beta", format!("must be positive, got {beta}")));
    }
    let missing = || Error::MissingLogProb(pair.id.clone());
    let policy_w = pair.chosen.logp_policy.ok_or_else(missing)?;
    let ref_w = pair.chosen.logp_ref.ok_or_else(missing)?;
    let policy_l = pair.rejected.logp_policy.ok_or_else(missing)?;
    let ref_l = pair.rejected.logp_ref.ok_or_else(missing)?;
    Ok(beta * ((policy_w - ref_w) - (policy_l - ref_l)))
}

/// Mean of `-ln σ(κ·margin + pd)` (or without `pd`), in softplus form.
pub fn dmpo_loss(records: &[MarginRecord], kappa: usize, use_pd: bool) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty("margin records"));
    }
    let k = kappa as f64;
    let total: f64 = records
        .iter()
        .map(|r| {
            let arg = if use_pd { k * r.margin + r.pd } else { k * r.margin };
            neg_log_sigmoid(arg)
        })
        .sum();
    Ok(total / records.len() as f64)
}

pub fn dpo_loss(records: &[MarginRecord]) -> Result<f64> {
    dmpo_loss(records, 1, false)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundParams {
    /// Mean margin on the complement.
    pub c0: f64,
    /// Smallest margin on the selected subset.
    pub c1: f64,
    /// Largest margin on the selected subset.
    pub c2: f64,
    /// Mean unweighted DMPO loss (`-ln σ(κ·margin)`) on the complement.
    pub l1: f64,
    /// Selected fraction `|selected| / |D|`.
    pub lambda: f64,
    pub kappa: usize,
    /// Range bound of the per-aspect (normalized) rewards.
    pub r_bound: f64,
}

/// Instantiates the bound constants from the margins actually observed.
/// An empty complement yields `c0 = l1 = 0` and `lambda = 1`.
pub fn estimate_bound_params(
    selected: &[MarginRecord],
    complement: &[MarginRecord],
    kappa: usize,
    r_bound: f64,
) -> Result<BoundParams> {
    if selected.is_empty() {
        return Err(Error::Empty("selected margin records"));
    }
    let (mut c1, mut c2) = (f64::INFINITY, f64::NEG_INFINITY);
    for r in selected {
        c1 = c1.min(r.margin);
        c2 = c2.max(r.margin);
    }
    let comp_margins: Vec<f64> = complement.iter().map(|r| r.margin).collect();
    let c0 = mean(&comp_margins).unwrap_or(0.0);
    let l1 = if complement.is_empty() {
        0.0
    } else {
        dmpo_loss(complement, kappa, false)?
    };
    let total = selected.len() + complement.len();
    Ok(BoundParams {
        c0,
        c1,
        c2,
        l1,
        lambda: selected.len() as f64 / total as f64,
        kappa,
        r_bound,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBounds {
    pub lower: f64,
    pub upper: f64,
}

/// Lower and upper DMPO bounds for a split of the PD values.
///
/// lower = -λ ln σ(κc2 + E_sel[pd]) - (1-λ) ln σ(κc0 + E_comp[pd])
/// upper = -λ E_sel[ln σ(κc1 + pd)] - (1-λ) (E_comp[ln σ(pd)] - l1)
///
/// Complement terms vanish when the complement is empty.
pub fn dmpo_bounds(pd_selected: &[f64], pd_complement: &[f64], params: &BoundParams) -> Result<LossBounds> {
    if pd_selected.is_empty() {
        return Err(Error::Empty("selected PD values"));
    }
    let k = params.kappa as f64;
    let lambda = params.lambda;
    let sel_mean = mean(pd_selected).expect("nonempty");
    let sel_upper = pd_selected
        .iter()
        .map(|&pd| log_sigmoid(k * params.c1 + pd))
        .sum::<f64>()
        / pd_selected.len() as f64;
    let mut lower = lambda * neg_log_sigmoid(k * params.c2 + sel_mean);
    let mut upper = -lambda * sel_upper;
    if let Some(comp_mean) = mean(pd_complement) {
        let comp_upper = pd_complement.iter().map(|&pd| log_sigmoid(pd)).sum::<f64>() / pd_complement.len() as f64;
        lower += (1.0 - lambda) * neg_log_sigmoid(k * params.c0 + comp_mean);
        upper -= (1.0 - lambda) * (comp_upper - params.l1);
    }
    Ok(LossBounds { lower, upper })
}

/// `2(κ-1)·r/κ <= c2 - c0`.
pub fn mild_condition(params: &BoundParams) -> bool {
    let k = params.kappa as f64;
    2.0 * (k - 1.0) * params.r_bound / k <= params.c2 - params.c0
}

/// `(wins - losses) / total + 1`, in `[0, 2]`.
pub fn win_score(wins: u64, losses: u64, total: u64) -> Result<f64> {
    if total == 0 {
        return Err(Error::param("total", "must be positive"));
    }
    if wins + losses > total {
        return Err(Error::param(
            "wins",
            format!("{wins} wins + {losses} losses exceed {total} comparisons"),
        ));
    }
    Ok((wins as f64 - losses as f64) / total as f64 + 1.0)
}
