//! The pipeline stages. Each stage reads its inputs from the files named in
//! the config and writes its outputs back to files, so `run` is exactly the
//! composition of `validate`, `train-rm`, `score` and `select`.

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::time::Instant;

use log::warn;
use pdsel_core::corpus::dataset_summary;
use pdsel_core::objectives::{
    dmpo_bounds, dmpo_loss, dpo_loss, estimate_bound_params, mild_condition, preference_margin,
};
use pdsel_core::reward::pairwise_accuracy;
use pdsel_core::selection::{select, subset_pairs, PdSummary};
use pdsel_core::synth::{generate, measure_conflict};
use pdsel_core::theory::run_suite;
use pdsel_core::{AggregatedDataset, MarginRecord, PdScoreTable, PreferencePair, RewardModel};
use serde_json::Value;

use crate::config::{train_config_digest, PipelineConfig};
use crate::error::{Failure, StageExt};
use crate::formats::{
    self, header_for, FormatError, PdStatsRecord, PdSummaryRecord, SelectionReportRecord, SynthConfigRecord,
};
use crate::parallel;
use crate::reports::*;

/// Slack allowed on both sides of the loss sandwich.
pub const BOUNDS_TOLERANCE: f64 = 1e-9;

fn fmt_err(stage: &'static str) -> impl Fn(FormatError) -> Failure {
    move |e| e.into_failure(stage)
}

fn load_dataset(config: &PipelineConfig, stage: &'static str) -> Result<AggregatedDataset, Failure> {
    formats::load_dataset(&config.paths.dataset).map_err(fmt_err(stage))
}

fn load_models(
    config: &PipelineConfig,
    dataset: &AggregatedDataset,
    stage: &'static str,
) -> Result<Vec<RewardModel>, Failure> {
    let records = formats::load_models(&config.paths.models_dir, dataset.kappa(), dataset.feature_dim())
        .map_err(fmt_err(stage))?;
    Ok(records.iter().map(RewardModel::from).collect())
}

/// Loads the PD table and checks it lists the dataset's pairs in order.
fn load_table(
    config: &PipelineConfig,
    dataset: &AggregatedDataset,
    stage: &'static str,
) -> Result<PdScoreTable, Failure> {
    let table = formats::load_table(&config.paths.table).map_err(fmt_err(stage))?;
    if table.aspect_names != dataset.aspect_names() {
        return Err(Failure::data(stage, "PD table aspects differ from the dataset header"));
    }
    if table.len() != dataset.len() {
        return Err(Failure::data(
            stage,
            format!("PD table has {} rows for {} pairs", table.len(), dataset.len()),
        ));
    }
    for (row, pair) in table.rows.iter().zip(dataset.pairs()) {
        if row.id != pair.id || row.aspect != pair.aspect {
            return Err(Failure::data(
                stage,
                format!("PD table row `{}` does not match pair `{}`", row.id, pair.id),
            ));
        }
    }
    Ok(table)
}

fn summary_record(s: Option<PdSummary>) -> Option<PdSummaryRecord> {
    s.map(|p| PdSummaryRecord {
        min: p.min,
        mean: p.mean,
        max: p.max,
    })
}

fn finite(stage: &'static str, what: &str, x: f64) -> Result<f64, Failure> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Failure::numeric(stage, format!("{what} is not finite ({x})")))
    }
}

pub fn synth(config: &PipelineConfig) -> Result<SynthReport, Failure> {
    const STAGE: &str = "synth";
    let sc = config.synth_config();
    let dataset = generate(&sc).stage(STAGE)?;
    let conflict_rate = measure_conflict(&dataset).stage(STAGE)?;
    formats::save_dataset(&config.paths.dataset, &dataset, Some(&sc)).map_err(fmt_err(STAGE))?;
    Ok(SynthReport {
        path: config.paths.dataset.clone(),
        pairs: dataset.len(),
        kappa: dataset.kappa(),
        conflict_rate,
        synth_config: SynthConfigRecord::from(&sc),
    })
}

pub fn validate(config: &PipelineConfig) -> Result<ValidateReport, Failure> {
    let dataset = load_dataset(config, "validate")?;
    Ok(ValidateReport::new(
        config.paths.dataset.clone(),
        dataset_summary(&dataset),
    ))
}

fn dataset_info(config: &PipelineConfig, dataset: &AggregatedDataset) -> DatasetInfo {
    DatasetInfo {
        path: config.paths.dataset.clone(),
        pairs: dataset.len(),
        kappa: dataset.kappa(),
        feature_dim: dataset.feature_dim(),
        aspects: dataset.aspect_names().to_vec(),
    }
}

fn train_on(config: &PipelineConfig, dataset: &AggregatedDataset) -> Result<(TrainReport, Vec<PathBuf>), Failure> {
    const STAGE: &str = "train-rm";
    let tc = config.train_config();
    let outcomes = parallel::train_models(dataset, &tc).stage(STAGE)?;
    let mut warnings = Vec::new();
    for o in &outcomes {
        for &w in o.model.weights.iter().chain([&o.model.bias]) {
            finite(STAGE, &format!("reward model {} parameter", o.model.aspect), w)?;
        }
        for w in &o.sample.warnings {
            warn!("{w}");
            warnings.push(w.to_string());
        }
    }
    let models: Vec<RewardModel> = outcomes.iter().map(|o| o.model.clone()).collect();
    let digest = train_config_digest(&tc);
    let paths = formats::save_models(&config.paths.models_dir, &models, &digest).map_err(fmt_err(STAGE))?;
    let mut reports = Vec::with_capacity(outcomes.len());
    for (o, path) in outcomes.iter().zip(&paths) {
        let k = o.model.aspect;
        let pairs: Vec<&PreferencePair> = dataset
            .aspect_indices(k)
            .into_iter()
            .map(|i| &dataset.pairs()[i])
            .collect();
        reports.push(AspectTraining {
            aspect: k,
            name: dataset.aspect_names()[k].clone(),
            pairs: pairs.len(),
            requested_plus: o.sample.requested_plus,
            requested_minus: o.sample.requested_minus,
            sampled: o.sample.indices.len(),
            first_epoch_loss: o.epoch_losses.first().copied().unwrap_or(f64::NAN),
            final_epoch_loss: o.epoch_losses.last().copied().unwrap_or(f64::NAN),
            accuracy: pairwise_accuracy(&o.model, &pairs, tc.rho).stage(STAGE)?,
            path: path.clone(),
        });
    }
    Ok((
        TrainReport {
            config_digest: digest,
            models: reports,
            warnings,
        },
        paths,
    ))
}

pub fn train_rm(config: &PipelineConfig) -> Result<TrainReport, Failure> {
    let dataset = load_dataset(config, "train-rm")?;
    train_on(config, &dataset).map(|(r, _)| r)
}

fn score_on(
    config: &PipelineConfig,
    dataset: &AggregatedDataset,
    models: &[RewardModel],
) -> Result<(ScoreReport, PdScoreTable), Failure> {
    const STAGE: &str = "score";
    let table = parallel::pd_table(dataset, models, config.train.rho, config.gamma).stage(STAGE)?;
    for row in &table.rows {
        finite(STAGE, &format!("PD of `{}`", row.id), row.pd)?;
    }
    formats::save_table(&config.paths.table, &table).map_err(fmt_err(STAGE))?;
    let mut warnings = Vec::new();
    if dataset.kappa() == 1 {
        let w = "kappa = 1: every PD term is 0, so selection reduces to id order".to_owned();
        warn!("{w}");
        warnings.push(w);
    }
    let q = dataset
        .aspect_names()
        .iter()
        .cloned()
        .zip(table.scales.q.iter().map(|&q| Value::from(q)))
        .collect();
    Ok((
        ScoreReport {
            path: config.paths.table.clone(),
            rows: table.len(),
            gamma: table.scales.gamma,
            q,
            pd: summary_record(PdSummary::of(&table.pd_values())),
            warnings,
        },
        table,
    ))
}

pub fn score(config: &PipelineConfig) -> Result<ScoreReport, Failure> {
    let dataset = load_dataset(config, "score")?;
    let models = load_models(config, &dataset, "score")?;
    score_on(config, &dataset, &models).map(|(r, _)| r)
}

fn select_on(
    config: &PipelineConfig,
    dataset: &AggregatedDataset,
    table: &PdScoreTable,
) -> Result<SelectStageReport, Failure> {
    const STAGE: &str = "select";
    let strategy = config.strategy()?;
    let report = select(table, strategy, config.lambda, Some(config.seeds.selection)).stage(STAGE)?;
    let subset = subset_pairs(dataset, &report).stage(STAGE)?;
    formats::save_corpus(&config.paths.subset, &header_for(dataset, None), &subset).map_err(fmt_err(STAGE))?;
    formats::save_selection(&config.paths.selection, &report).map_err(fmt_err(STAGE))?;
    let consistency = subset
        .iter()
        .map(|p| p.truth.as_ref().map(|t| !t.conflict))
        .collect::<Option<Vec<bool>>>()
        .filter(|v| !v.is_empty())
        .map(|v| v.iter().filter(|&&ok| ok).count() as f64 / v.len() as f64);
    let record = SelectionReportRecord::from(&report);
    Ok(SelectStageReport {
        strategy: record.strategy,
        lambda: record.lambda,
        seed: record.seed,
        selected: record.selected_ids.len(),
        total: table.len(),
        pd_stats: PdStatsRecord {
            selected: summary_record(report.pd_stats.selected),
            complement: summary_record(report.pd_stats.complement),
        },
        selection_path: config.paths.selection.clone(),
        subset_path: config.paths.subset.clone(),
        consistency,
    })
}

pub fn select_stage(config: &PipelineConfig) -> Result<SelectStageReport, Failure> {
    let dataset = load_dataset(config, "select")?;
    let table = load_table(config, &dataset, "select")?;
    select_on(config, &dataset, &table)
}

/// Margins of every pair from its stored log-probabilities, paired with its PD.
pub fn eval_loss(config: &PipelineConfig) -> Result<LossReport, Failure> {
    const STAGE: &str = "eval-loss";
    let dataset = load_dataset(config, STAGE)?;
    let table = load_table(config, &dataset, STAGE)?;
    let records = dataset
        .pairs()
        .iter()
        .zip(&table.rows)
        .map(|(pair, row)| {
            let margin = finite(
                STAGE,
                &format!("margin of `{}`", pair.id),
                preference_margin(pair, config.beta).stage(STAGE)?,
            )?;
            Ok(MarginRecord {
                pair_id: pair.id.clone(),
                margin,
                pd: row.pd,
            })
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    formats::save_margins(&config.paths.margins, &records).map_err(fmt_err(STAGE))?;
    let kappa = dataset.kappa();
    Ok(LossReport {
        path: config.paths.margins.clone(),
        records: records.len(),
        kappa,
        beta: config.beta,
        dpo: finite(STAGE, "DPO loss", dpo_loss(&records).stage(STAGE)?)?,
        dmpo: finite(STAGE, "DMPO loss", dmpo_loss(&records, kappa, false).stage(STAGE)?)?,
        dmpo_with_pd: finite(STAGE, "DMPO loss", dmpo_loss(&records, kappa, true).stage(STAGE)?)?,
    })
}

/// Loss bounds for the current selection against the measured DMPO loss.
pub fn bounds(config: &PipelineConfig) -> Result<BoundsReport, Failure> {
    const STAGE: &str = "bounds";
    let dataset = load_dataset(config, STAGE)?;
    let margins = formats::load_margins(&config.paths.margins).map_err(fmt_err(STAGE))?;
    let selection = formats::load_selection(&config.paths.selection).map_err(fmt_err(STAGE))?;
    let chosen: HashSet<&str> = selection.selected_ids.iter().map(String::as_str).collect();
    let known: HashSet<&str> = margins.iter().map(|m| m.pair_id.as_str()).collect();
    if let Some(id) = selection.selected_ids.iter().find(|id| !known.contains(id.as_str())) {
        return Err(Failure::data(
            STAGE,
            format!("selected pair `{id}` has no margin record"),
        ));
    }
    let (selected, complement): (Vec<MarginRecord>, Vec<MarginRecord>) = margins
        .iter()
        .cloned()
        .partition(|m| chosen.contains(m.pair_id.as_str()));
    let kappa = dataset.kappa();
    let params = estimate_bound_params(&selected, &complement, kappa, config.r_bound).stage(STAGE)?;
    let pd = |v: &[MarginRecord]| v.iter().map(|m| m.pd).collect::<Vec<f64>>();
    let loss_bounds = dmpo_bounds(&pd(&selected), &pd(&complement), &params).stage(STAGE)?;
    let measured = dmpo_loss(&margins, kappa, true).stage(STAGE)?;
    Ok(BoundsReport::new(
        loss_bounds,
        measured,
        mild_condition(&params),
        &params,
    ))
}

/// Numeric verdict on a bounds report.
pub fn bounds_verdict(report: &BoundsReport) -> Result<(), Failure> {
    let values = [report.lower, report.upper, report.measured];
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Failure::numeric("bounds", "non-finite bound or loss"));
    }
    if !report.holds(BOUNDS_TOLERANCE) {
        return Err(Failure::numeric(
            "bounds",
            format!(
                "measured loss {} lies outside [{}, {}]",
                report.measured, report.lower, report.upper
            ),
        ));
    }
    Ok(())
}

pub fn verify_theory(config: &PipelineConfig, trials: usize, instances: usize) -> Result<TheoryReport, Failure> {
    let suite = run_suite(trials, instances, config.seeds.theory).stage("verify-theory")?;
    Ok(TheoryReport::from(&suite))
}

pub fn theory_verdict(report: &TheoryReport) -> Result<(), Failure> {
    if report.total_violations == 0 {
        Ok(())
    } else {
        Err(Failure::numeric(
            "verify-theory",
            format!("{} violation(s)", report.total_violations),
        ))
    }
}

struct Runner<'a> {
    config: &'a PipelineConfig,
    report: RunReport,
}

impl Runner<'_> {
    fn timed<T>(&mut self, stage: &str, f: impl FnOnce(&PipelineConfig) -> Result<T, Failure>) -> Result<T, Failure> {
        let start = Instant::now();
        let out = f(self.config);
        self.report
            .timings_ms
            .insert(stage.to_owned(), start.elapsed().as_secs_f64() * 1e3);
        out
    }

    fn steps(&mut self) -> Result<(), Failure> {
        let dataset = self.timed("validate", |c| load_dataset(c, "validate"))?;
        self.report.dataset = Some(dataset_info(self.config, &dataset));
        let (train, paths) = self.timed("train-rm", |c| train_on(c, &dataset))?;
        self.report.outputs.extend(paths);
        self.report.warnings.extend(train.warnings.iter().cloned());
        self.report.training = Some(train);
        // Score from the files just written, as the `score` subcommand would.
        let models = load_models(self.config, &dataset, "score")?;
        let (scores, _) = self.timed("score", |c| score_on(c, &dataset, &models))?;
        self.report.outputs.push(self.config.paths.table.clone());
        self.report.warnings.extend(scores.warnings.iter().cloned());
        self.report.scores = Some(scores);
        let table = load_table(self.config, &dataset, "select")?;
        let selection = self.timed("select", |c| select_on(c, &dataset, &table))?;
        self.report
            .outputs
            .extend([self.config.paths.subset.clone(), self.config.paths.selection.clone()]);
        self.report.selection = Some(selection);
        Ok(())
    }
}

/// Validate, train, score and select. Always returns a report; on failure
/// it carries the error and flags any files already written.
pub fn run(config: &PipelineConfig) -> (RunReport, Option<Failure>) {
    let mut runner = Runner {
        config,
        report: RunReport {
            status: RunStatus::Ok,
            config_digest: config.digest(),
            dataset: None,
            training: None,
            scores: None,
            selection: None,
            outputs: Vec::new(),
            partial_outputs: false,
            warnings: Vec::new(),
            error: None,
            timings_ms: BTreeMap::new(),
        },
    };
    let start = Instant::now();
    let outcome = runner.steps();
    let mut report = runner.report;
    report
        .timings_ms
        .insert("total".into(), start.elapsed().as_secs_f64() * 1e3);
    match outcome {
        Ok(()) => (report, None),
        Err(failure) => {
            report.status = RunStatus::Failed;
            report.partial_outputs = !report.outputs.is_empty();
            report.error = Some(ErrorRecord {
                stage: failure.stage.to_owned(),
                exit_code: failure.kind.code(),
                message: failure.message.clone(),
            });
            (report, Some(failure))
        }
    }
}
