//! Preference-data model: responses, labeled pairs, aggregated datasets and
//! length-based partitioning.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub text: Option<String>,
    pub features: Vec<f64>,
    /// Caller-defined length unit (tokens, characters, ...); never interpreted.
    pub length: u64,
    /// Summed log-probability under the policy.
    pub logp_policy: Option<f64>,
    /// Summed log-probability under the reference model.
    pub logp_ref: Option<f64>,
}

impl Response {
    pub fn new(features: Vec<f64>, length: u64) -> Self {
        Response {
            text: None,
            features,
            length,
            logp_policy: None,
            logp_ref: None,
        }
    }
}

/// Latent scores attached to synthetic pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub holistic_chosen: f64,
    pub holistic_rejected: f64,
    pub aspect_scores_chosen: Vec<f64>,
    pub aspect_scores_rejected: Vec<f64>,
    pub conflict: bool,
}

impl GroundTruth {
    /// Builds the record and derives the conflict flag at the labeling aspect.
    pub fn new(
        holistic_chosen: f64,
        holistic_rejected: f64,
        aspect_scores_chosen: Vec<f64>,
        aspect_scores_rejected: Vec<f64>,
        aspect: usize,
    ) -> Self {
        let mut truth = GroundTruth {
            holistic_chosen,
            holistic_rejected,
            aspect_scores_chosen,
            aspect_scores_rejected,
            conflict: false,
        };
        truth.conflict = truth.conflict_at(aspect);
        truth
    }

    /// The labeling aspect prefers the chosen response while the holistic
    /// score prefers the rejected one.
    pub fn conflict_at(&self, aspect: usize) -> bool {
        let chosen = self.aspect_scores_chosen.get(aspect).copied();
        let rejected = self.aspect_scores_rejected.get(aspect).copied();
        match (chosen, rejected) {
            (Some(c), Some(r)) => c > r && self.holistic_chosen < self.holistic_rejected,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub id: String,
    /// Index of the sub-preference aspect that produced the label.
    pub aspect: usize,
    pub prompt_id: String,
    pub chosen: Response,
    pub rejected: Response,
    pub truth: Option<GroundTruth>,
}

impl PreferencePair {
    /// `len(chosen) - len(rejected)` as a real number.
    pub fn length_delta(&self) -> f64 {
        self.chosen.length as f64 - self.rejected.length as f64
    }

    /// Belongs to the `len(chosen) >= len(rejected)` partition.
    pub fn is_length_plus(&self) -> bool {
        self.chosen.length >= self.rejected.length
    }

    pub fn validate(&self, kappa: usize, feature_dim: usize) -> Result<()> {
        if self.aspect >= kappa {
            return Err(Error::AspectOutOfRange {
                aspect: self.aspect,
                kappa,
            });
        }
        for (field, response) in [("chosen.features", &self.chosen), ("rejected.features", &self.rejected)] {
            if response.features.len() != feature_dim {
                return Err(Error::DimensionMismatch {
                    id: self.id.clone(),
                    field,
                    expected: feature_dim,
                    found: response.features.len(),
                });
            }
            if response.features.iter().any(|v| !v.is_finite()) {
                return Err(self.non_finite(field));
            }
            let logps = [response.logp_policy, response.logp_ref];
            if logps.iter().flatten().any(|v| !v.is_finite()) {
                return Err(self.non_finite("logp"));
            }
        }
        if let Some(truth) = &self.truth {
            for (field, scores) in [
                ("truth.aspect_scores_chosen", &truth.aspect_scores_chosen),
                ("truth.aspect_scores_rejected", &truth.aspect_scores_rejected),
            ] {
                if scores.len() != kappa {
                    return Err(Error::DimensionMismatch {
                        id: self.id.clone(),
                        field,
                        expected: kappa,
                        found: scores.len(),
                    });
                }
                if scores.iter().any(|v| !v.is_finite()) {
                    return Err(self.non_finite(field));
                }
            }
            if !truth.holistic_chosen.is_finite() || !truth.holistic_rejected.is_finite() {
                return Err(self.non_finite("truth.holistic"));
            }
            if truth.conflict != truth.conflict_at(self.aspect) {
                return Err(Error::ConflictMismatch(self.id.clone()));
            }
        }
        Ok(())
    }

    fn non_finite(&self, field: &'static str) -> Error {
        Error::NonFinite {
            id: self.id.clone(),
            field,
        }
    }
}

/// Union of κ sub-preference datasets; every pair is labeled by one aspect.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedDataset {
    aspect_names: Vec<String>,
    feature_dim: usize,
    pairs: Vec<PreferencePair>,
    by_id: BTreeMap<String, usize>,
}

impl AggregatedDataset {
    /// Validates every invariant and keeps the pairs in the given order.
    pub fn new(aspect_names: Vec<String>, feature_dim: usize, pairs: Vec<PreferencePair>) -> Result<Self> {
        if aspect_names.is_empty() {
            return Err(Error::param("kappa", "at least one aspect is required"));
        }
        let names: BTreeSet<&str> = aspect_names.iter().map(String::as_str).collect();
        if names.len() != aspect_names.len() {
            return Err(Error::param("aspects", "aspect names must be distinct"));
        }
        if pairs.is_empty() {
            return Err(Error::NoRecords);
        }
        let kappa = aspect_names.len();
        let mut by_id = BTreeMap::new();
        for (i, pair) in pairs.iter().enumerate() {
            pair.validate(kappa, feature_dim)?;
            if by_id.insert(pair.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(pair.id.clone()));
            }
        }
        Ok(AggregatedDataset {
            aspect_names,
            feature_dim,
            pairs,
            by_id,
        })
    }

    pub fn kappa(&self) -> usize {
        self.aspect_names.len()
    }

    pub fn aspect_names(&self) -> &[String] {
        &self.aspect_names
    }

    pub fn aspect_index(&self, name: &str) -> Option<usize> {
        self.aspect_names.iter().position(|n| n == name)
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn pairs(&self) -> &[PreferencePair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&PreferencePair> {
        self.by_id.get(id).map(|&i| &self.pairs[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    /// Dataset positions of the pairs labeled by `aspect`.
    pub fn aspect_indices(&self, aspect: usize) -> Vec<usize> {
        self.pairs
            .iter()
            .enumerate()
            .filter(|(_, p)| p.aspect == aspect)
            .map(|(i, _)| i)
            .collect()
    }

    pub(crate) fn check_aspect(&self, aspect: usize) -> Result<()> {
        if aspect < self.kappa() {
            Ok(())
        } else {
            Err(Error::AspectOutOfRange {
                aspect,
                kappa: self.kappa(),
            })
        }
    }

    pub fn into_pairs(self) -> Vec<PreferencePair> {
        self.pairs
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LengthPartition {
    /// `len(chosen) >= len(rejected)`.
    pub plus: Vec<String>,
    /// `len(chosen) < len(rejected)`.
    pub minus: Vec<String>,
}

/// Positions of the plus and minus partitions of one aspect slice.
pub(crate) fn partition_indices(dataset: &AggregatedDataset, aspect: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    dataset.check_aspect(aspect)?;
    let (plus, minus) = dataset
        .aspect_indices(aspect)
        .into_iter()
        .partition(|&i| dataset.pairs[i].is_length_plus());
    Ok((plus, minus))
}

/// Splits one aspect slice by the sign of the length difference. Ties go to
/// the plus side.
pub fn partition_by_length(dataset: &AggregatedDataset, aspect: usize) -> Result<LengthPartition> {
    let (plus, minus) = partition_indices(dataset, aspect)?;
    let ids = |idx: Vec<usize>| idx.into_iter().map(|i| dataset.pairs[i].id.clone()).collect();
    Ok(LengthPartition {
        plus: ids(plus),
        minus: ids(minus),
    })
}

/// Plus/minus frequencies `(f+, f-)` of a slice with `plus` and `minus` members.
/// `None` for an empty slice.
pub fn length_frequencies(plus: usize, minus: usize) -> Option<(f64, f64)> {
    let n = plus + minus;
    if n == 0 {
        return None;
    }
    Some((plus as f64 / n as f64, minus as f64 / n as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AspectSummary {
    pub name: String,
    pub pairs: usize,
    pub plus: usize,
    pub minus: usize,
    pub f_plus: Option<f64>,
    pub f_minus: Option<f64>,
}

/// Upper edges of the length-difference histogram. Bucket `i` holds
/// `EDGES[i-1] <= Δlen < EDGES[i]`, with open-ended first and last buckets.
pub const LENGTH_DELTA_EDGES: [i64; 13] = [-1000, -500, -250, -100, -50, -10, 0, 10, 50, 100, 250, 500, 1000];

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSummary {
    pub kappa: usize,
    pub feature_dim: usize,
    pub total_pairs: usize,
    pub aspects: Vec<AspectSummary>,
    /// Counts per bucket of [`LENGTH_DELTA_EDGES`]; one more bucket than edges.
    pub length_delta_histogram: Vec<usize>,
    /// Fraction of conflicting pairs, when every pair carries ground truth.
    pub conflict_rate: Option<f64>,
}

pub fn dataset_summary(dataset: &AggregatedDataset) -> DatasetSummary {
    let kappa = dataset.kappa();
    let mut plus = alloc::vec![0usize; kappa];
    let mut minus = alloc::vec![0usize; kappa];
    let mut histogram = alloc::vec![0usize; LENGTH_DELTA_EDGES.len() + 1];
    let mut conflicts = 0usize;
    let mut all_truth = true;
    for pair in dataset.pairs() {
        if pair.is_length_plus() {
            plus[pair.aspect] += 1;
        } else {
            minus[pair.aspect] += 1;
        }
        let delta = pair.chosen.length as i128 - pair.rejected.length as i128;
        let bucket = LENGTH_DELTA_EDGES.iter().take_while(|&&e| delta >= e as i128).count();
        histogram[bucket] += 1;
        match &pair.truth {
            Some(t) if t.conflict => conflicts += 1,
            Some(_) => {}
            None => all_truth = false,
        }
    }
    let aspects = (0..kappa)
        .map(|k| {
            let freq = length_frequencies(plus[k], minus[k]);
            AspectSummary {
                name: dataset.aspect_names()[k].clone(),
                pairs: plus[k] + minus[k],
                plus: plus[k],
                minus: minus[k],
                f_plus: freq.map(|f| f.0),
                f_minus: freq.map(|f| f.1),
            }
        })
        .collect();
    DatasetSummary {
        kappa,
        feature_dim: dataset.feature_dim(),
        total_pairs: dataset.len(),
        aspects,
        length_delta_histogram: histogram,
        conflict_rate: all_truth.then(|| conflicts as f64 / dataset.len() as f64),
    }
}
