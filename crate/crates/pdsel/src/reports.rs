//! Machine-readable stage and run reports.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pdsel_core::corpus::{DatasetSummary, LENGTH_DELTA_EDGES};
use pdsel_core::objectives::{BoundParams, LossBounds};
use pdsel_core::theory::{Lemma2Report, LemmaReport, TheoremReport, TheorySuite};
use serde::{Deserialize, Serialize};
use serde_json::Map;

use crate::formats::{PdStatsRecord, PdSummaryRecord, SynthConfigRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectCounts {
    pub name: String,
    pub pairs: usize,
    pub plus: usize,
    pub minus: usize,
    pub f_plus: Option<f64>,
    pub f_minus: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBucket {
    /// Inclusive lower edge; `None` is unbounded.
    pub from: Option<i64>,
    /// Exclusive upper edge; `None` is unbounded.
    pub to: Option<i64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateReport {
    pub path: PathBuf,
    pub kappa: usize,
    pub feature_dim: usize,
    pub total_pairs: usize,
    pub aspects: Vec<AspectCounts>,
    pub length_delta_histogram: Vec<HistogramBucket>,
    pub conflict_rate: Option<f64>,
}

impl ValidateReport {
    pub fn new(path: PathBuf, s: DatasetSummary) -> Self {
        let edge = |i: usize| LENGTH_DELTA_EDGES.get(i).copied();
        let length_delta_histogram = s
            .length_delta_histogram
            .iter()
            .enumerate()
            .map(|(i, &count)| HistogramBucket {
                from: i.checked_sub(1).and_then(edge),
                to: edge(i),
                count,
            })
            .collect();
        ValidateReport {
            path,
            kappa: s.kappa,
            feature_dim: s.feature_dim,
            total_pairs: s.total_pairs,
            aspects: s
                .aspects
                .into_iter()
                .map(|a| AspectCounts {
                    name: a.name,
                    pairs: a.pairs,
                    plus: a.plus,
                    minus: a.minus,
                    f_plus: a.f_plus,
                    f_minus: a.f_minus,
                })
                .collect(),
            length_delta_histogram,
            conflict_rate: s.conflict_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub path: PathBuf,
    pub pairs: usize,
    pub kappa: usize,
    pub conflict_rate: f64,
    pub synth_config: SynthConfigRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectTraining {
    pub aspect: usize,
    pub name: String,
    pub pairs: usize,
    pub requested_plus: usize,
    pub requested_minus: usize,
    pub sampled: usize,
    pub first_epoch_loss: f64,
    pub final_epoch_loss: f64,
    /// Penalized-gap accuracy on every pair of the aspect.
    pub accuracy: f64,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config_digest: String,
    pub models: Vec<AspectTraining>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub path: PathBuf,
    pub rows: usize,
    pub gamma: f64,
    pub q: Map<String, serde_json::Value>,
    pub pd: Option<PdSummaryRecord>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectStageReport {
    pub strategy: String,
    pub lambda: f64,
    pub seed: Option<u64>,
    pub selected: usize,
    pub total: usize,
    pub pd_stats: PdStatsRecord,
    pub selection_path: PathBuf,
    pub subset_path: PathBuf,
    /// Fraction of selected pairs without a ground-truth conflict, when known.
    pub consistency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub path: PathBuf,
    pub records: usize,
    pub kappa: usize,
    pub beta: f64,
    pub dpo: f64,
    pub dmpo: f64,
    pub dmpo_with_pd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundParamsRecord {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub l1: f64,
    pub lambda: f64,
    pub kappa: usize,
    pub r_bound: f64,
}

impl From<&BoundParams> for BoundParamsRecord {
    fn from(p: &BoundParams) -> Self {
        BoundParamsRecord {
            c0: p.c0,
            c1: p.c1,
            c2: p.c2,
            l1: p.l1,
            lambda: p.lambda,
            kappa: p.kappa,
            r_bound: p.r_bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub lower: f64,
    pub upper: f64,
    pub measured: f64,
    pub mild_condition: bool,
    pub params: BoundParamsRecord,
}

impl BoundsReport {
    pub fn new(bounds: LossBounds, measured: f64, mild_condition: bool, params: &BoundParams) -> Self {
        BoundsReport {
            lower: bounds.lower,
            upper: bounds.upper,
            measured,
            mild_condition,
            params: params.into(),
        }
    }

    pub fn holds(&self, tol: f64) -> bool {
        self.lower - tol <= self.measured && self.measured <= self.upper + tol
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaRecord {
    pub trials: usize,
    pub violations: usize,
    pub worst_excess: Option<f64>,
}

impl From<&LemmaReport> for LemmaRecord {
    fn from(r: &LemmaReport) -> Self {
        LemmaRecord {
            trials: r.trials,
            violations: r.violations,
            worst_excess: r.worst_excess.is_finite().then_some(r.worst_excess),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Record {
    pub trials: usize,
    pub violations: usize,
    pub monotone_violations: usize,
    pub convexity_violations: usize,
    pub argmin_violations: usize,
}

impl From<&Lemma2Report> for Lemma2Record {
    fn from(r: &Lemma2Report) -> Self {
        Lemma2Record {
            trials: r.trials,
            violations: r.violations,
            monotone_violations: r.monotone_violations,
            convexity_violations: r.convexity_violations,
            argmin_violations: r.argmin_violations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub instance: usize,
    pub pd_values: Vec<f64>,
    pub k_select: usize,
    pub bound: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremRecord {
    pub instances: usize,
    pub passes: usize,
    pub failures: Vec<FailureRecord>,
    pub exchange_checks: usize,
    pub exchange_violations: usize,
}

impl From<&TheoremReport> for TheoremRecord {
    fn from(r: &TheoremReport) -> Self {
        TheoremRecord {
            instances: r.instances,
            passes: r.passes,
            failures: r
                .failures
                .iter()
                .map(|f| FailureRecord {
                    instance: f.instance,
                    pd_values: f.pd_values.clone(),
                    k_select: f.k_select,
                    bound: f.bound.to_owned(),
                })
                .collect(),
            exchange_checks: r.exchange_checks,
            exchange_violations: r.exchange_violations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub lemma1: LemmaRecord,
    pub lemma2: Lemma2Record,
    pub lemma3: LemmaRecord,
    pub theorem2: TheoremRecord,
    pub total_violations: usize,
}

impl From<&TheorySuite> for TheoryReport {
    fn from(s: &TheorySuite) -> Self {
        TheoryReport {
            lemma1: (&s.lemma1).into(),
            lemma2: (&s.lemma2).into(),
            lemma3: (&s.lemma3).into(),
            theorem2: (&s.theorem2).into(),
            total_violations: s.total_violations(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub path: PathBuf,
    pub pairs: usize,
    pub kappa: usize,
    pub feature_dim: usize,
    pub aspects: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub stage: String,
    pub exit_code: u8,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// Written by `run`, also on failure. Timings are wall-clock milliseconds
/// per stage and are the only nondeterministic fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub status: RunStatus,
    pub config_digest: String,
    pub dataset: Option<DatasetInfo>,
    pub training: Option<TrainReport>,
    pub scores: Option<ScoreReport>,
    pub selection: Option<SelectStageReport>,
    pub outputs: Vec<PathBuf>,
    /// Set on failure: files already written by the completed stages.
    pub partial_outputs: bool,
    pub warnings: Vec<String>,
    pub error: Option<ErrorRecord>,
    pub timings_ms: BTreeMap<String, f64>,
}
