//! Machine checks for the selection theory.
//!
//! The three supporting lemmas are exercised with randomized trials, and the
//! optimality of most-negative-PD selection for both DMPO bounds is checked by
//! enumerating every size-k subset of small instances.
//!
//! Instances store PD values in the PD-term convention. The lemmas and the
//! exchange argument are phrased in the negated convention, reached through
//! [`negated_phi`] and nowhere else.

use alloc::vec::Vec;
use alloc::{format, vec};

use rand::Rng;

use crate::divergence::{PdRow, PdScoreTable, QuantileScales};
use crate::error::{Error, Result};
use crate::math::{neg_log_sigmoid, seeded_rng, Stream};
use crate::objectives::{dmpo_bounds, mild_condition, BoundParams, LossBounds};
use crate::selection::select_pd;

/// Largest instance accepted by the subset enumerator.
pub const MAX_ENUMERATION: usize = 16;
/// Two bound values closer than this are the same optimum.
pub const TIE_TOLERANCE: f64 = 1e-12;
/// Slack allowed on every lemma inequality.
pub const LEMMA_SLACK: f64 = 1e-12;
/// Points of the monotonicity/convexity grid for the second lemma.
pub const LEMMA2_GRID_POINTS: usize = 1001;
/// Width of that grid, ending at the stationary point.
pub const LEMMA2_GRID_SPAN: f64 = 10.0;

/// Maps a PD value (`Δφ_k`) to the negated convention `Δφ = -Δφ_k` in which
/// the lemmas and the exchange argument are stated.
pub fn negated_phi(pd: f64) -> f64 {
    -pd
}

/// `f(x, y) = -ln σ(-x + γ) - ln σ(-y)`.
pub fn lemma1_f(x: f64, y: f64, gamma: f64) -> f64 {
    neg_log_sigmoid(-x + gamma) + neg_log_sigmoid(-y)
}

/// `f̃(x) = -a ln σ(-x + γ) - (1 - a) ln σ((a x - μ) / (1 - a))`.
pub fn lemma2_f(x: f64, a: f64, mu: f64, gamma: f64) -> f64 {
    let b = 1.0 - a;
    a * neg_log_sigmoid(-x + gamma) + b * neg_log_sigmoid((a * x - mu) / b)
}

/// Stationary point `μ + (1 - a) γ` of [`lemma2_f`].
pub fn lemma2_minimizer(a: f64, mu: f64, gamma: f64) -> f64 {
    mu + (1.0 - a) * gamma
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaReport {
    pub trials: usize,
    pub violations: usize,
    /// Largest observed `lhs - rhs` of the checked inequality.
    pub worst_excess: f64,
}

impl LemmaReport {
    fn new(trials: usize) -> Self {
        LemmaReport {
            trials,
            violations: 0,
            worst_excess: f64::NEG_INFINITY,
        }
    }

    fn record(&mut self, excess: f64, slack: f64) {
        self.worst_excess = self.worst_excess.max(excess);
        if excess > slack {
            self.violations += 1;
        }
    }
}

fn check_range(name: &'static str, lo: f64, hi: f64) -> Result<()> {
    if lo.is_finite() && hi.is_finite() && lo <= hi {
        Ok(())
    } else {
        Err(Error::param(name, format!("invalid range ({lo}, {hi})")))
    }
}

/// For `x >= y` and `γ > 0`: `f(x, y) <= f(y, x)`.
pub fn verify_lemma1(trials: usize, gamma_range: (f64, f64), xy_range: (f64, f64), seed: u64) -> Result<LemmaReport> {
    check_range("gamma_range", gamma_range.0, gamma_range.1)?;
    check_range("xy_range", xy_range.0, xy_range.1)?;
    if gamma_range.0 <= 0.0 {
        return Err(Error::param("gamma_range", "gamma must be positive"));
    }
    let mut rng = seeded_rng(seed, Stream::Theory, 1);
    let mut report = LemmaReport::new(trials);
    for _ in 0..trials {
        let gamma = rng.random_range(gamma_range.0..=gamma_range.1);
        let u = rng.random_range(xy_range.0..=xy_range.1);
        let v = rng.random_range(xy_range.0..=xy_range.1);
        let (x, y) = if u >= v { (u, v) } else { (v, u) };
        report.record(lemma1_f(x, y, gamma) - lemma1_f(y, x, gamma), LEMMA_SLACK);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lemma2Report {
    pub trials: usize,
    pub violations: usize,
    pub monotone_violations: usize,
    pub convexity_violations: usize,
    pub argmin_violations: usize,
}

/// Grid points `x* - span + i * span / (points - 1)`.
fn lemma2_grid(end: f64, span: f64, points: usize) -> impl Iterator<Item = f64> {
    let step = span / (points - 1) as f64;
    (0..points).map(move |i| end - span + i as f64 * step)
}

/// Argmin of [`lemma2_f`] over a grid of step `10 / 1000` spanning
/// `[x* - 10, x* + 10]`, so the minimizer is interior.
pub fn lemma2_grid_argmin(a: f64, mu: f64, gamma: f64) -> f64 {
    let center = lemma2_minimizer(a, mu, gamma);
    let points = 2 * LEMMA2_GRID_POINTS - 1;
    lemma2_grid(center + LEMMA2_GRID_SPAN, 2.0 * LEMMA2_GRID_SPAN, points)
        .map(|x| (x, lemma2_f(x, a, mu, gamma)))
        .fold(
            (f64::NAN, f64::INFINITY),
            |best, (x, fx)| if fx < best.1 { (x, fx) } else { best },
        )
        .0
}

/// Per-trial checks of the second lemma. Returns `(monotone, convexity, argmin)`
/// violation counts.
fn lemma2_trial(a: f64, mu: f64, gamma: f64, rng: &mut impl Rng) -> (usize, usize, usize) {
    let end = lemma2_minimizer(a, mu, gamma);
    let values: Vec<f64> = lemma2_grid(end, LEMMA2_GRID_SPAN, LEMMA2_GRID_POINTS)
        .map(|x| lemma2_f(x, a, mu, gamma))
        .collect();
    let mut monotone = values.windows(2).filter(|w| w[1] - w[0] > LEMMA_SLACK).count();
    // Random ordered pairs below the stationary point.
    for _ in 0..8 {
        let u = rng.random_range(end - LEMMA2_GRID_SPAN..end);
        let v = rng.random_range(end - LEMMA2_GRID_SPAN..end);
        let (x0, x1) = if u <= v { (u, v) } else { (v, u) };
        if lemma2_f(x1, a, mu, gamma) - lemma2_f(x0, a, mu, gamma) > LEMMA_SLACK {
            monotone += 1;
        }
    }
    // A second difference only counts against convexity when it is negative
    // beyond the rounding noise of its three terms.
    let convexity = values
        .windows(3)
        .filter(|w| {
            let second = w[0] - 2.0 * w[1] + w[2];
            let noise = 16.0 * f64::EPSILON * (w[0].abs() + 2.0 * w[1].abs() + w[2].abs());
            second <= -noise
        })
        .count();
    let step = LEMMA2_GRID_SPAN / (LEMMA2_GRID_POINTS - 1) as f64;
    let argmin = lemma2_grid_argmin(a, mu, gamma);
    let argmin_miss = usize::from((argmin - end).abs() > step * (1.0 + 1e-9));
    (monotone, convexity, argmin_miss)
}

/// Draws `a ∈ [0.05, 0.95]`, `μ ∈ [-3, 3]`, `γ ∈ [0.1, 5]` per trial and checks
/// monotone decrease up to `μ + (1 - a) γ`, convexity, and the minimizer location.
pub fn verify_lemma2(trials: usize, seed: u64) -> Lemma2Report {
    let mut rng = seeded_rng(seed, Stream::Theory, 2);
    let mut report = Lemma2Report {
        trials,
        violations: 0,
        monotone_violations: 0,
        convexity_violations: 0,
        argmin_violations: 0,
    };
    for _ in 0..trials {
        let a = rng.random_range(0.05..=0.95);
        let mu = rng.random_range(-3.0..=3.0);
        let gamma = rng.random_range(0.1..=5.0);
        let (m, c, g) = lemma2_trial(a, mu, gamma, &mut rng);
        report.monotone_violations += m;
        report.convexity_violations += c;
        report.argmin_violations += g;
        if m + c + g > 0 {
            report.violations += 1;
        }
    }
    report
}

/// `mean(subset) - mean(all) <= 2 (1 - a) r` with `a = |subset| / |all|`.
pub fn lemma3_excess(values: &[f64], subset: &[f64], r_bound: f64) -> f64 {
    let a = subset.len() as f64 / values.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    mean(subset) - mean(values) - 2.0 * (1.0 - a) * r_bound
}

/// Each trial draws `Q ⊂ [-r, r]` of size in `n_range`, checks a uniformly
/// random subset and the top-valued subset of the same size.
pub fn verify_lemma3(trials: usize, n_range: (usize, usize), r_bound: f64, seed: u64) -> Result<LemmaReport> {
    if !(r_bound > 0.0 && r_bound.is_finite()) {
        return Err(Error::param("r_bound", "must be positive"));
    }
    if n_range.0 == 0 || n_range.0 > n_range.1 {
        return Err(Error::param("n_range", format!("invalid range {n_range:?}")));
    }
    let mut rng = seeded_rng(seed, Stream::Theory, 3);
    let mut report = LemmaReport::new(trials);
    for _ in 0..trials {
        let n = rng.random_range(n_range.0..=n_range.1);
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-r_bound..=r_bound)).collect();
        let m = rng.random_range(1..=n);
        let subset: Vec<f64> = rand::seq::index::sample(&mut rng, n, m)
            .into_iter()
            .map(|i| values[i])
            .collect();
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let excess = lemma3_excess(&values, &subset, r_bound).max(lemma3_excess(&values, &sorted[..m], r_bound));
        report.record(excess, LEMMA_SLACK);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryInstance {
    /// PD values (`Δφ_k` convention), each in `[-(κ-1) r, (κ-1) r]`.
    pub pd_values: Vec<f64>,
    pub params: BoundParams,
    pub k_select: usize,
}

impl TheoryInstance {
    /// Validates the ranges and pins `params.lambda` to `k_select / n`.
    pub fn new(pd_values: Vec<f64>, mut params: BoundParams, k_select: usize) -> Result<Self> {
        let n = pd_values.len();
        if n > MAX_ENUMERATION {
            return Err(Error::TooLarge {
                found: n,
                max: MAX_ENUMERATION,
            });
        }
        if k_select == 0 || k_select > n {
            return Err(Error::param(
                "k_select",
                format!("must lie in [1, {n}], got {k_select}"),
            ));
        }
        if params.kappa == 0 || !(params.r_bound > 0.0) {
            return Err(Error::param("params", "kappa >= 1 and r_bound > 0 are required"));
        }
        let limit = (params.kappa - 1) as f64 * params.r_bound;
        if let Some(v) = pd_values.iter().find(|v| !(v.abs() <= limit)) {
            return Err(Error::param("pd_values", format!("{v} outside [-{limit}, {limit}]")));
        }
        if params.c1 > params.c2 || params.l1 < 0.0 {
            return Err(Error::param("params", "c1 <= c2 and l1 >= 0 are required"));
        }
        params.lambda = k_select as f64 / n as f64;
        Ok(TheoryInstance {
            pd_values,
            params,
            k_select,
        })
    }

    pub fn mild_condition(&self) -> bool {
        mild_condition(&self.params)
    }

    /// Both bounds for the subset given by `mask` (bit `i` = value `i` selected).
    pub fn bounds_for_mask(&self, mask: u32) -> LossBounds {
        let mut selected = Vec::with_capacity(self.k_select);
        let mut complement = Vec::with_capacity(self.pd_values.len() - self.k_select);
        for (i, &v) in self.pd_values.iter().enumerate() {
            if mask & (1 << i) != 0 {
                selected.push(v);
            } else {
                complement.push(v);
            }
        }
        dmpo_bounds(&selected, &complement, &self.params).expect("k_select >= 1")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundArgmin {
    /// Index sets (ascending) attaining the minimum lower bound.
    pub best_lower_subsets: Vec<Vec<usize>>,
    pub best_upper_subsets: Vec<Vec<usize>>,
    pub min_lower: f64,
    pub min_upper: f64,
    pub mild_condition: bool,
}

fn mask_to_indices(mask: u32, n: usize) -> Vec<usize> {
    (0..n).filter(|i| mask & (1 << i) != 0).collect()
}

fn indices_to_mask(indices: &[usize]) -> u32 {
    indices.iter().fold(0, |m, &i| m | (1 << i))
}

/// Enumerates every size-k subset and keeps all minimizers of each bound.
pub fn brute_force_bound_argmin(instance: &TheoryInstance) -> Result<BoundArgmin> {
    let n = instance.pd_values.len();
    if n > MAX_ENUMERATION {
        return Err(Error::TooLarge {
            found: n,
            max: MAX_ENUMERATION,
        });
    }
    let masks: Vec<u32> = (0u32..(1u32 << n))
        .filter(|m| m.count_ones() as usize == instance.k_select)
        .collect();
    let bounds: Vec<LossBounds> = masks.iter().map(|&m| instance.bounds_for_mask(m)).collect();
    let min_lower = bounds.iter().map(|b| b.lower).fold(f64::INFINITY, f64::min);
    let min_upper = bounds.iter().map(|b| b.upper).fold(f64::INFINITY, f64::min);
    let pick = |f: &dyn Fn(&LossBounds) -> bool| -> Vec<Vec<usize>> {
        masks
            .iter()
            .zip(&bounds)
            .filter(|(_, b)| f(b))
            .map(|(&m, _)| mask_to_indices(m, n))
            .collect()
    };
    Ok(BoundArgmin {
        best_lower_subsets: pick(&|b| b.lower - min_lower <= TIE_TOLERANCE),
        best_upper_subsets: pick(&|b| b.upper - min_upper <= TIE_TOLERANCE),
        min_lower,
        min_upper,
        mild_condition: instance.mild_condition(),
    })
}

/// The subset chosen by [`select_pd`] on the instance, as value indices.
pub fn pd_selection_indices(instance: &TheoryInstance) -> Result<Vec<usize>> {
    let table = PdScoreTable {
        aspect_names: (0..instance.params.kappa).map(|k| format!("aspect{k}")).collect(),
        scales: QuantileScales {
            gamma: 0.5,
            q: vec![0.0; instance.params.kappa],
        },
        rows: instance
            .pd_values
            .iter()
            .enumerate()
            .map(|(i, &pd)| PdRow {
                id: format!("{i:02}"),
                aspect: 0,
                gaps: Vec::new(),
                pd,
            })
            .collect(),
    };
    let report = select_pd(&table, instance.params.lambda)?;
    let mut picked: Vec<usize> = report
        .selected_ids
        .iter()
        .map(|id| id.parse().expect("ids are indices"))
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceOutcome {
    pub mild_condition: bool,
    pub pd_subset: Vec<usize>,
    /// Whether the PD subset attains each minimum; `None` when the mild
    /// condition fails and no claim is made.
    pub attains_lower: Option<bool>,
    pub attains_upper: Option<bool>,
}

pub fn check_instance(instance: &TheoryInstance) -> Result<InstanceOutcome> {
    let argmin = brute_force_bound_argmin(instance)?;
    let pd_subset = pd_selection_indices(instance)?;
    if !argmin.mild_condition {
        return Ok(InstanceOutcome {
            mild_condition: false,
            pd_subset,
            attains_lower: None,
            attains_upper: None,
        });
    }
    let attains_lower = argmin.best_lower_subsets.contains(&pd_subset);
    let attains_upper = argmin.best_upper_subsets.contains(&pd_subset);
    Ok(InstanceOutcome {
        mild_condition: true,
        pd_subset,
        attains_lower: Some(attains_lower),
        attains_upper: Some(attains_upper),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeOutcome {
    pub before: f64,
    pub after: f64,
    /// Lemma-1 inequality on the swapped pair, in the negated convention.
    pub lemma_holds: bool,
}

/// Swaps `inside` (selected) with `outside` (not selected) where
/// `pd(inside) > pd(outside)`, and reports the upper bound before and after.
pub fn exchange_step(instance: &TheoryInstance, mask: u32, inside: usize, outside: usize) -> ExchangeOutcome {
    let swapped = (mask & !(1 << inside)) | (1 << outside);
    let before = instance.bounds_for_mask(mask).upper;
    let after = instance.bounds_for_mask(swapped).upper;
    let gamma = instance.params.kappa as f64 * instance.params.c1;
    let phi_in = negated_phi(instance.pd_values[inside]);
    let phi_out = negated_phi(instance.pd_values[outside]);
    let lemma_holds = lemma1_f(phi_out, phi_in, gamma) <= lemma1_f(phi_in, phi_out, gamma) + LEMMA_SLACK;
    ExchangeOutcome {
        before,
        after,
        lemma_holds,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceFailure {
    pub instance: usize,
    pub pd_values: Vec<f64>,
    pub k_select: usize,
    pub bound: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremReport {
    pub instances: usize,
    pub passes: usize,
    pub failures: Vec<InstanceFailure>,
    pub exchange_checks: usize,
    pub exchange_violations: usize,
}

impl TheoremReport {
    pub fn pass_rate(&self) -> f64 {
        if self.instances == 0 {
            1.0
        } else {
            self.passes as f64 / self.instances as f64
        }
    }
}

/// Random instance with `|D| ∈ n_range`, `κ` from `kappas`, `r = 1`, positive
/// `c1` and the mild condition satisfied.
pub fn random_instance(rng: &mut impl Rng, n_range: (usize, usize), kappas: &[usize]) -> TheoryInstance {
    let n = rng.random_range(n_range.0..=n_range.1);
    let kappa = kappas[rng.random_range(0..kappas.len())];
    let r_bound = 1.0;
    let limit = (kappa - 1) as f64 * r_bound;
    let pd_values = (0..n).map(|_| rng.random_range(-limit..=limit)).collect();
    let k_select = rng.random_range(1..=n);
    let c1 = rng.random_range(0.05..=2.0);
    let c2 = c1 + rng.random_range(0.0..=2.0);
    let k = kappa as f64;
    let c0 = c2 - 2.0 * (k - 1.0) * r_bound / k - rng.random_range(0.0..=1.0);
    let params = BoundParams {
        c0,
        c1,
        c2,
        l1: rng.random_range(0.0..=2.0),
        lambda: 0.0,
        kappa,
        r_bound,
    };
    TheoryInstance::new(pd_values, params, k_select).expect("generated within range")
}

/// Checks that most-negative-PD selection attains both bound minima on random
/// instances, and runs exchange steps on random non-optimal subsets.
pub fn verify_selection_optimality(instances: usize, seed: u64) -> Result<TheoremReport> {
    let mut rng = seeded_rng(seed, Stream::Theory, 4);
    let mut report = TheoremReport {
        instances,
        passes: 0,
        failures: Vec::new(),
        exchange_checks: 0,
        exchange_violations: 0,
    };
    for index in 0..instances {
        let instance = random_instance(&mut rng, (6, 12), &[2, 3, 4]);
        let outcome = check_instance(&instance)?;
        let mut failed = None;
        if outcome.attains_lower != Some(true) {
            failed = Some("lower");
        } else if outcome.attains_upper != Some(true) {
            failed = Some("upper");
        }
        match failed {
            None => report.passes += 1,
            Some(bound) => report.failures.push(InstanceFailure {
                instance: index,
                pd_values: instance.pd_values.clone(),
                k_select: instance.k_select,
                bound,
            }),
        }
        let n = instance.pd_values.len();
        if instance.k_select < n {
            let mask = indices_to_mask(&rand::seq::index::sample(&mut rng, n, instance.k_select).into_vec());
            let inside: Vec<usize> = mask_to_indices(mask, n);
            let outside: Vec<usize> = (0..n).filter(|i| mask & (1 << i) == 0).collect();
            for &i in &inside {
                for &o in &outside {
                    if instance.pd_values[i] > instance.pd_values[o] {
                        let step = exchange_step(&instance, mask, i, o);
                        report.exchange_checks += 1;
                        if step.after > step.before + TIE_TOLERANCE || !step.lemma_holds {
                            report.exchange_violations += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheorySuite {
    pub lemma1: LemmaReport,
    pub lemma2: Lemma2Report,
    pub lemma3: LemmaReport,
    pub theorem2: TheoremReport,
}

impl TheorySuite {
    pub fn total_violations(&self) -> usize {
        self.lemma1.violations
            + self.lemma2.violations
            + self.lemma3.violations
            + self.theorem2.failures.len()
            + self.theorem2.exchange_violations
    }
}

/// Runs every check with the default ranges: lemma 1 with `γ ∈ [0.01, 10]`,
/// `x, y ∈ [-20, 20]`; lemma 3 with `|Q| ∈ [1, 64]`, `r = 1`.
pub fn run_suite(trials: usize, instances: usize, seed: u64) -> Result<TheorySuite> {
    Ok(TheorySuite {
        lemma1: verify_lemma1(trials, (0.01, 10.0), (-20.0, 20.0), seed)?,
        lemma2: verify_lemma2(trials, seed),
        lemma3: verify_lemma3(trials, (1, 64), 1.0, seed)?,
        theorem2: verify_selection_optimality(instances, seed)?,
    })
}
