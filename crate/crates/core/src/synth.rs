//! Synthetic aggregated preference corpora with a controlled conflict rate.
//!
//! Every prompt gets `responses_per_prompt` responses with latent aspect
//! scores in `[0, 1]`; the holistic score is their mean. The best holistic
//! response is paired with a random other one, and the pair is labeled by one
//! aspect. A fixed quota of pairs is marked to conflict with the holistic
//! order; the labeling aspect of each pair is rejection-sampled until its
//! conflict status matches the plan.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{AggregatedDataset, GroundTruth, PreferencePair, Response};
use crate::error::{Error, Result};
use crate::math::{rounded_count, seeded_rng, Stream};

/// Response lengths are drawn uniformly from this inclusive range.
pub const LENGTH_RANGE: (u64, u64) = (20, 800);
/// Response redraws per prompt before the conflict plan is declared infeasible.
pub const MAX_REDRAWS: usize = 200;
/// Aspect draws per response set before redrawing the responses.
const ASPECT_DRAWS: usize = 64;

const DEFAULT_ASPECTS: [&str; 4] = ["helpfulness", "honesty", "instruction_following", "truthfulness"];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_prompts: usize,
    pub responses_per_prompt: usize,
    pub kappa: usize,
    /// Fraction of pairs whose label contradicts the holistic order.
    pub conflict_target: f64,
    /// Probability that the chosen response is the longer one.
    pub length_bias_prob: f64,
    /// `kappa` noisy scores, then `length / 1000`, then pure-noise columns.
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub margin_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_prompts: 1000,
            responses_per_prompt: 4,
            kappa: 4,
            conflict_target: 0.2,
            length_bias_prob: 0.5,
            feature_dim: 5,
            feature_noise: 0.05,
            margin_noise: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_prompts == 0 {
            return Err(Error::param("n_prompts", "must be positive"));
        }
        if self.responses_per_prompt < 2 {
            return Err(Error::param(
                "responses_per_prompt",
                "at least two responses are needed",
            ));
        }
        if self.kappa == 0 {
            return Err(Error::param("kappa", "must be at least 1"));
        }
        if !(0.0..=0.5).contains(&self.conflict_target) {
            return Err(Error::param("conflict_target", "must lie in [0, 0.5]"));
        }
        if !(0.0..=1.0).contains(&self.length_bias_prob) {
            return Err(Error::param("length_bias_prob", "must lie in [0, 1]"));
        }
        if self.feature_dim < self.kappa {
            return Err(Error::param("feature_dim", "must be at least kappa"));
        }
        for (name, v) in [
            ("feature_noise", self.feature_noise),
            ("margin_noise", self.margin_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(name, "must be nonnegative"));
            }
        }
        Ok(())
    }
}

pub fn aspect_names(kappa: usize) -> Vec<String> {
    (0..kappa)
        .map(|k| match DEFAULT_ASPECTS.get(k) {
            Some(name) if kappa <= DEFAULT_ASPECTS.len() => String::from(*name),
            _ => format!("aspect_{k}"),
        })
        .collect()
}

struct Candidate {
    scores: Vec<f64>,
    holistic: f64,
}

fn draw_candidate(kappa: usize, rng: &mut impl Rng) -> Candidate {
    let scores: Vec<f64> = (0..kappa).map(|_| rng.random::<f64>()).collect();
    let holistic = scores.iter().sum::<f64>() / kappa as f64;
    Candidate { scores, holistic }
}

/// Labeled pair of one prompt: (aspect, chosen, rejected).
fn label_prompt<'a>(
    best: &'a Candidate,
    other: &'a Candidate,
    want_conflict: bool,
    rng: &mut impl Rng,
) -> Option<(usize, &'a Candidate, &'a Candidate)> {
    let kappa = best.scores.len();
    for _ in 0..ASPECT_DRAWS {
        let k = rng.random_range(0..kappa);
        // Aspect order decides the label; holistic order breaks ties, and
        // `best` wins holistic ties by construction.
        let other_wins = other.scores[k] > best.scores[k];
        let (chosen, rejected) = if other_wins { (other, best) } else { (best, other) };
        let conflict = other_wins && other.holistic < best.holistic;
        if conflict == want_conflict {
            return Some((k, chosen, rejected));
        }
    }
    None
}

fn response(
    candidate: &Candidate,
    length: u64,
    config: &SynthConfig,
    noise: &Normal<f64>,
    margin: &Normal<f64>,
    rng: &mut impl Rng,
) -> Response {
    let mut features = Vec::with_capacity(config.feature_dim);
    features.extend(candidate.scores.iter().map(|s| s + noise.sample(rng)));
    if config.feature_dim > config.kappa {
        features.push(length as f64 / 1000.0);
    }
    while features.len() < config.feature_dim {
        features.push(noise.sample(rng));
    }
    let logp_ref = -(length as f64) / 100.0;
    Response {
        text: None,
        features,
        length,
        logp_policy: Some(logp_ref + (candidate.holistic - 0.5) + margin.sample(rng)),
        logp_ref: Some(logp_ref),
    }
}

pub fn generate(config: &SynthConfig) -> Result<AggregatedDataset> {
    config.validate()?;
    let n = config.n_prompts;
    let n_conflict = rounded_count(config.conflict_target * n as f64).min(n);
    if config.kappa == 1 && n_conflict > 0 {
        return Err(Error::InfeasibleConflict {
            target: config.conflict_target,
            reason: String::from("a single aspect always agrees with the holistic score"),
        });
    }
    let mut want_conflict = alloc::vec![false; n];
    let mut plan_rng = seeded_rng(config.seed, Stream::SynthPlan, 0);
    for i in rand::seq::index::sample(&mut plan_rng, n, n_conflict) {
        want_conflict[i] = true;
    }
    let noise = Normal::new(0.0, config.feature_noise).map_err(|_| Error::param("feature_noise", "invalid"))?;
    let margin = Normal::new(0.0, config.margin_noise).map_err(|_| Error::param("margin_noise", "invalid"))?;

    let mut pairs = Vec::with_capacity(n);
    for (i, &want) in want_conflict.iter().enumerate() {
        let mut rng = seeded_rng(config.seed, Stream::SynthPrompt, i as u64);
        let mut labeled = None;
        for _ in 0..MAX_REDRAWS {
            let candidates: Vec<Candidate> = (0..config.responses_per_prompt)
                .map(|_| draw_candidate(config.kappa, &mut rng))
                .collect();
            let best = (1..candidates.len()).fold(0, |b, j| {
                if candidates[j].holistic > candidates[b].holistic {
                    j
                } else {
                    b
                }
            });
            let mut other = rng.random_range(0..candidates.len() - 1);
            if other >= best {
                other += 1;
            }
            if let Some((k, chosen, rejected)) = label_prompt(&candidates[best], &candidates[other], want, &mut rng) {
                labeled = Some((
                    k,
                    chosen.scores.clone(),
                    chosen.holistic,
                    rejected.scores.clone(),
                    rejected.holistic,
                ));
                break;
            }
        }
        let (aspect, chosen_scores, chosen_h, rejected_scores, rejected_h) =
            labeled.ok_or_else(|| Error::InfeasibleConflict {
                target: config.conflict_target,
                reason: format!("prompt {i} found no matching aspect after {MAX_REDRAWS} redraws"),
            })?;

        let short = rng.random_range(LENGTH_RANGE.0..LENGTH_RANGE.1);
        let long = rng.random_range(short + 1..=LENGTH_RANGE.1);
        let (len_chosen, len_rejected) = if rng.random_bool(config.length_bias_prob) {
            (long, short)
        } else {
            (short, long)
        };
        let chosen_c = Candidate {
            scores: chosen_scores,
            holistic: chosen_h,
        };
        let rejected_c = Candidate {
            scores: rejected_scores,
            holistic: rejected_h,
        };
        let chosen = response(&chosen_c, len_chosen, config, &noise, &margin, &mut rng);
        let rejected = response(&rejected_c, len_rejected, config, &noise, &margin, &mut rng);
        let truth = GroundTruth::new(chosen_h, rejected_h, chosen_c.scores, rejected_c.scores, aspect);
        pairs.push(PreferencePair {
            id: format!("pair-{i:06}"),
            aspect,
            prompt_id: format!("prompt-{i:06}"),
            chosen,
            rejected,
            truth: Some(truth),
        });
    }
    AggregatedDataset::new(aspect_names(config.kappa), config.feature_dim, pairs)
}

/// Fraction of conflicting pairs. Every pair needs ground truth, and every
/// stored flag must agree with the flag recomputed from its scores.
pub fn measure_conflict(dataset: &AggregatedDataset) -> Result<f64> {
    let mut conflicts = 0usize;
    for pair in dataset.pairs() {
        let truth = pair
            .truth
            .as_ref()
            .ok_or_else(|| Error::MissingTruth(pair.id.clone()))?;
        if truth.conflict_at(pair.aspect) != truth.conflict {
            return Err(Error::ConflictMismatch(pair.id.clone()));
        }
        conflicts += usize::from(truth.conflict);
    }
    Ok(conflicts as f64 / dataset.len() as f64)
}
