//! JSONL corpora, model files, PD tables, margins and selection reports.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use pdsel_core::divergence::{ForeignGap, PdRow};
use pdsel_core::selection::{PdStats, PdSummary};
use pdsel_core::{
    AggregatedDataset, Error as CoreError, GroundTruth, MarginRecord, PdScoreTable, PreferencePair, QuantileScales,
    Response, RewardModel, SelectionReport, Strategy, SynthConfig,
};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{ExitKind, Failure};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {source}")]
    Record { line: usize, source: CoreError },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl FormatError {
    pub fn into_failure(self, stage: &'static str) -> Failure {
        Failure::new(stage, ExitKind::Data, self)
    }

    fn io(path: &Path, source: io::Error) -> Self {
        FormatError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn parse(line: usize, message: impl ToString) -> Self {
        FormatError::Parse {
            line,
            message: message.to_string(),
        }
    }
}

pub type FormatResult<T> = Result<T, FormatError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfigRecord {
    pub n_prompts: usize,
    pub responses_per_prompt: usize,
    pub kappa: usize,
    pub conflict_target: f64,
    pub length_bias_prob: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub margin_noise: f64,
    pub seed: u64,
}

impl From<&SynthConfig> for SynthConfigRecord {
    fn from(c: &SynthConfig) -> Self {
        SynthConfigRecord {
            n_prompts: c.n_prompts,
            responses_per_prompt: c.responses_per_prompt,
            kappa: c.kappa,
            conflict_target: c.conflict_target,
            length_bias_prob: c.length_bias_prob,
            feature_dim: c.feature_dim,
            feature_noise: c.feature_noise,
            margin_noise: c.margin_noise,
            seed: c.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub kappa: usize,
    pub aspects: Vec<String>,
    pub feature_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth_config: Option<SynthConfigRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResponseRecord {
    features: Vec<f64>,
    length: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    logp_policy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    logp_ref: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthRecord {
    holistic_chosen: f64,
    holistic_rejected: f64,
    aspect_scores_chosen: Vec<f64>,
    aspect_scores_rejected: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    conflict: Option<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairRecord {
    id: String,
    aspect: String,
    prompt_id: String,
    chosen: ResponseRecord,
    rejected: ResponseRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    truth: Option<TruthRecord>,
}

impl ResponseRecord {
    fn from_response(r: &Response) -> Self {
        ResponseRecord {
            features: r.features.clone(),
            length: r.length,
            text: r.text.clone(),
            logp_policy: r.logp_policy,
            logp_ref: r.logp_ref,
        }
    }

    fn into_response(self) -> Response {
        Response {
            text: self.text,
            features: self.features,
            length: self.length,
            logp_policy: self.logp_policy,
            logp_ref: self.logp_ref,
        }
    }
}

fn pair_record(pair: &PreferencePair, names: &[String]) -> PairRecord {
    PairRecord {
        id: pair.id.clone(),
        aspect: names[pair.aspect].clone(),
        prompt_id: pair.prompt_id.clone(),
        chosen: ResponseRecord::from_response(&pair.chosen),
        rejected: ResponseRecord::from_response(&pair.rejected),
        truth: pair.truth.as_ref().map(|t| TruthRecord {
            holistic_chosen: t.holistic_chosen,
            holistic_rejected: t.holistic_rejected,
            aspect_scores_chosen: t.aspect_scores_chosen.clone(),
            aspect_scores_rejected: t.aspect_scores_rejected.clone(),
            conflict: Some(t.conflict),
        }),
    }
}

fn record_pair(record: PairRecord, header: &Header, line: usize) -> FormatResult<PreferencePair> {
    let aspect = header
        .aspects
        .iter()
        .position(|a| *a == record.aspect)
        .ok_or_else(|| FormatError::Record {
            line,
            source: CoreError::UnknownAspect {
                id: record.id.clone(),
                aspect: record.aspect.clone(),
            },
        })?;
    let truth = match record.truth {
        None => None,
        Some(t) => {
            let mut truth = GroundTruth {
                holistic_chosen: t.holistic_chosen,
                holistic_rejected: t.holistic_rejected,
                aspect_scores_chosen: t.aspect_scores_chosen,
                aspect_scores_rejected: t.aspect_scores_rejected,
                conflict: false,
            };
            truth.conflict = t.conflict.unwrap_or_else(|| truth.conflict_at(aspect));
            Some(truth)
        }
    };
    Ok(PreferencePair {
        id: record.id,
        aspect,
        prompt_id: record.prompt_id,
        chosen: record.chosen.into_response(),
        rejected: record.rejected.into_response(),
        truth,
    })
}

fn read_lines<R: BufRead>(reader: R) -> impl Iterator<Item = (usize, io::Result<String>)> {
    reader.lines().enumerate().map(|(i, l)| (i + 1, l))
}

fn line_io(line: usize, e: io::Error) -> FormatError {
    FormatError::parse(line, e)
}

/// Reads a corpus: one header line, then one pair per line. Blank lines are
/// skipped; a byte-order mark is rejected.
pub fn read_corpus<R: BufRead>(reader: R) -> FormatResult<(Header, AggregatedDataset)> {
    let mut header: Option<Header> = None;
    let mut pairs = Vec::new();
    let mut seen = HashSet::new();
    for (line, text) in read_lines(reader) {
        let text = text.map_err(|e| line_io(line, e))?;
        if line == 1 && text.starts_with('\u{feff}') {
            return Err(FormatError::parse(line, "byte-order mark is not allowed"));
        }
        if text.trim().is_empty() {
            continue;
        }
        let Some(h) = &header else {
            let h: Header =
                serde_json::from_str(&text).map_err(|e| FormatError::parse(line, format!("header: {e}")))?;
            if h.kappa != h.aspects.len() {
                return Err(FormatError::parse(
                    line,
                    format!(
                        "header declares kappa = {} but lists {} aspects",
                        h.kappa,
                        h.aspects.len()
                    ),
                ));
            }
            header = Some(h);
            continue;
        };
        let record: PairRecord = serde_json::from_str(&text).map_err(|e| FormatError::parse(line, e))?;
        let pair = record_pair(record, h, line)?;
        pair.validate(h.kappa, h.feature_dim)
            .map_err(|source| FormatError::Record { line, source })?;
        if !seen.insert(pair.id.clone()) {
            return Err(FormatError::Record {
                line,
                source: CoreError::DuplicateId(pair.id),
            });
        }
        pairs.push(pair);
    }
    let header = header.ok_or(CoreError::NoRecords)?;
    let dataset = AggregatedDataset::new(header.aspects.clone(), header.feature_dim, pairs)?;
    Ok((header, dataset))
}

pub fn load_corpus(path: &Path) -> FormatResult<(Header, AggregatedDataset)> {
    let file = File::open(path).map_err(|e| FormatError::io(path, e))?;
    read_corpus(BufReader::new(file))
}

/// Loads a corpus file; the header's extra fields are dropped.
pub fn load_dataset(path: &Path) -> FormatResult<AggregatedDataset> {
    load_corpus(path).map(|(_, d)| d)
}

pub fn header_for(dataset: &AggregatedDataset, synth_config: Option<&SynthConfig>) -> Header {
    Header {
        kappa: dataset.kappa(),
        aspects: dataset.aspect_names().to_vec(),
        feature_dim: dataset.feature_dim(),
        synth_config: synth_config.map(SynthConfigRecord::from),
    }
}

pub fn write_corpus<W: Write>(mut out: W, header: &Header, pairs: &[PreferencePair]) -> io::Result<()> {
    serde_json::to_writer(&mut out, header)?;
    out.write_all(b"\n")?;
    for pair in pairs {
        serde_json::to_writer(&mut out, &pair_record(pair, &header.aspects))?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

fn create(path: &Path) -> FormatResult<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| FormatError::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| FormatError::io(path, e))
}

pub fn save_corpus(path: &Path, header: &Header, pairs: &[PreferencePair]) -> FormatResult<()> {
    let out = create(path)?;
    write_corpus(out, header, pairs).map_err(|e| FormatError::io(path, e))
}

pub fn save_dataset(path: &Path, dataset: &AggregatedDataset, synth_config: Option<&SynthConfig>) -> FormatResult<()> {
    save_corpus(path, &header_for(dataset, synth_config), dataset.pairs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRecord {
    pub aspect: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub config_digest: String,
}

pub fn model_path(dir: &Path, aspect: usize) -> PathBuf {
    dir.join(format!("rm-{aspect}.json"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> FormatResult<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)
        .map_err(|e| FormatError::Invalid(format!("{}: {e}", path.display())))?;
    out.write_all(b"\n")
        .and_then(|_| out.flush())
        .map_err(|e| FormatError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> FormatResult<T> {
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| FormatError::Invalid(format!("{}: {e}", path.display())))
}

/// Writes `rm-<k>.json` per model and returns the paths.
pub fn save_models(dir: &Path, models: &[RewardModel], config_digest: &str) -> FormatResult<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    models
        .iter()
        .map(|m| {
            let path = model_path(dir, m.aspect);
            write_json(
                &path,
                &ModelRecord {
                    aspect: m.aspect,
                    weights: m.weights.clone(),
                    bias: m.bias,
                    config_digest: config_digest.to_owned(),
                },
            )?;
            Ok(path)
        })
        .collect()
}

/// Loads one model per aspect and checks it fits the dataset.
pub fn load_models(dir: &Path, kappa: usize, feature_dim: usize) -> FormatResult<Vec<ModelRecord>> {
    (0..kappa)
        .map(|k| {
            let path = model_path(dir, k);
            let record: ModelRecord = read_json(&path)?;
            if record.aspect != k {
                return Err(FormatError::Invalid(format!(
                    "{}: holds aspect {} instead of {k}",
                    path.display(),
                    record.aspect
                )));
            }
            if record.weights.len() != feature_dim {
                return Err(FormatError::Invalid(format!(
                    "{}: {} weights for feature_dim {feature_dim}",
                    path.display(),
                    record.weights.len()
                )));
            }
            Ok(record)
        })
        .collect()
}

impl From<&ModelRecord> for RewardModel {
    fn from(r: &ModelRecord) -> Self {
        RewardModel {
            aspect: r.aspect,
            weights: r.weights.clone(),
            bias: r.bias,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableRowRecord {
    id: String,
    aspect: String,
    normalized_gaps: Map<String, Value>,
    pd: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableTrailer {
    gamma: f64,
    q: Map<String, Value>,
}

pub fn write_table<W: Write>(mut out: W, table: &PdScoreTable) -> io::Result<()> {
    let names = &table.aspect_names;
    for row in &table.rows {
        let normalized_gaps = row
            .gaps
            .iter()
            .map(|g| (names[g.aspect].clone(), Value::from(g.normalized)))
            .collect();
        let record = TableRowRecord {
            id: row.id.clone(),
            aspect: names[row.aspect].clone(),
            normalized_gaps,
            pd: row.pd,
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    let trailer = TableTrailer {
        gamma: table.scales.gamma,
        q: names
            .iter()
            .cloned()
            .zip(table.scales.q.iter().map(|&q| Value::from(q)))
            .collect(),
    };
    serde_json::to_writer(&mut out, &trailer)?;
    out.write_all(b"\n")?;
    out.flush()
}

pub fn save_table(path: &Path, table: &PdScoreTable) -> FormatResult<()> {
    let out = create(path)?;
    write_table(out, table).map_err(|e| FormatError::io(path, e))
}

fn number(v: &Value, line: usize, what: &str) -> FormatResult<f64> {
    v.as_f64()
        .ok_or_else(|| FormatError::parse(line, format!("{what} must be a number")))
}

/// Reads a PD table; the aspect order comes from the trailer. Raw gaps are
/// not stored, so they come back unset.
pub fn read_table<R: BufRead>(reader: R) -> FormatResult<PdScoreTable> {
    let mut lines = Vec::new();
    for (line, text) in read_lines(reader) {
        let text = text.map_err(|e| line_io(line, e))?;
        if !text.trim().is_empty() {
            lines.push((line, text));
        }
    }
    let (trailer_line, trailer_text) = lines.pop().ok_or(CoreError::NoRecords)?;
    let trailer: TableTrailer =
        serde_json::from_str(&trailer_text).map_err(|e| FormatError::parse(trailer_line, format!("trailer: {e}")))?;
    let aspect_names: Vec<String> = trailer.q.keys().cloned().collect();
    let q = trailer
        .q
        .values()
        .map(|v| number(v, trailer_line, "q"))
        .collect::<FormatResult<Vec<f64>>>()?;
    let index = |name: &str, id: &str, line: usize| {
        aspect_names
            .iter()
            .position(|a| a == name)
            .ok_or_else(|| FormatError::Record {
                line,
                source: CoreError::UnknownAspect {
                    id: id.to_owned(),
                    aspect: name.to_owned(),
                },
            })
    };
    let mut rows = Vec::with_capacity(lines.len());
    let mut seen = HashSet::new();
    for (line, text) in lines {
        let record: TableRowRecord = serde_json::from_str(&text).map_err(|e| FormatError::parse(line, e))?;
        let aspect = index(&record.aspect, &record.id, line)?;
        let mut gaps = Vec::with_capacity(record.normalized_gaps.len());
        for (name, value) in &record.normalized_gaps {
            gaps.push(ForeignGap {
                aspect: index(name, &record.id, line)?,
                raw: None,
                normalized: number(value, line, "normalized gap")?,
            });
        }
        let expected: Vec<usize> = (0..aspect_names.len()).filter(|&k| k != aspect).collect();
        if gaps.iter().map(|g| g.aspect).collect::<Vec<_>>() != expected {
            return Err(FormatError::parse(
                line,
                "normalized_gaps must list every foreign aspect in order",
            ));
        }
        if gaps.iter().any(|g| !(-1.0..=1.0).contains(&g.normalized)) {
            return Err(FormatError::parse(line, "normalized gaps must lie in [-1, 1]"));
        }
        let row = PdRow::from_gaps(record.id, aspect, gaps);
        if row.pd.to_bits() != record.pd.to_bits() {
            return Err(FormatError::parse(
                line,
                format!("pd {} is not the negated gap sum {}", record.pd, row.pd),
            ));
        }
        if !seen.insert(row.id.clone()) {
            return Err(FormatError::Record {
                line,
                source: CoreError::DuplicateId(row.id),
            });
        }
        rows.push(row);
    }
    Ok(PdScoreTable {
        aspect_names,
        scales: QuantileScales {
            gamma: trailer.gamma,
            q,
        },
        rows,
    })
}

pub fn load_table(path: &Path) -> FormatResult<PdScoreTable> {
    let file = File::open(path).map_err(|e| FormatError::io(path, e))?;
    read_table(BufReader::new(file))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdSummaryRecord {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdStatsRecord {
    pub selected: Option<PdSummaryRecord>,
    pub complement: Option<PdSummaryRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionReportRecord {
    pub strategy: String,
    pub lambda: f64,
    pub seed: Option<u64>,
    pub selected_ids: Vec<String>,
    pub pd_stats: PdStatsRecord,
}

impl From<&SelectionReport> for SelectionReportRecord {
    fn from(r: &SelectionReport) -> Self {
        let s = |x: Option<PdSummary>| {
            x.map(|p| PdSummaryRecord {
                min: p.min,
                mean: p.mean,
                max: p.max,
            })
        };
        SelectionReportRecord {
            strategy: r.strategy.as_str().to_owned(),
            lambda: r.lambda,
            seed: r.seed,
            selected_ids: r.selected_ids.clone(),
            pd_stats: PdStatsRecord {
                selected: s(r.pd_stats.selected),
                complement: s(r.pd_stats.complement),
            },
        }
    }
}

impl TryFrom<SelectionReportRecord> for SelectionReport {
    type Error = CoreError;

    fn try_from(r: SelectionReportRecord) -> Result<Self, CoreError> {
        let s = |x: Option<PdSummaryRecord>| {
            x.map(|p| PdSummary {
                min: p.min,
                mean: p.mean,
                max: p.max,
            })
        };
        Ok(SelectionReport {
            strategy: r.strategy.parse::<Strategy>()?,
            lambda: r.lambda,
            seed: r.seed,
            selected_ids: r.selected_ids,
            pd_stats: PdStats {
                selected: s(r.pd_stats.selected),
                complement: s(r.pd_stats.complement),
            },
        })
    }
}

pub fn save_selection(path: &Path, report: &SelectionReport) -> FormatResult<()> {
    write_json(path, &SelectionReportRecord::from(report))
}

pub fn load_selection(path: &Path) -> FormatResult<SelectionReport> {
    let record: SelectionReportRecord = read_json(path)?;
    Ok(SelectionReport::try_from(record)?)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MarginLine {
    id: String,
    margin: f64,
    pd: f64,
}

pub fn save_margins(path: &Path, records: &[MarginRecord]) -> FormatResult<()> {
    let mut out = create(path)?;
    let mut write = || -> io::Result<()> {
        for r in records {
            let line = MarginLine {
                id: r.pair_id.clone(),
                margin: r.margin,
                pd: r.pd,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    };
    write().map_err(|e| FormatError::io(path, e))
}

pub fn load_margins(path: &Path) -> FormatResult<Vec<MarginRecord>> {
    let file = File::open(path).map_err(|e| FormatError::io(path, e))?;
    let mut records = Vec::new();
    for (line, text) in read_lines(BufReader::new(file)) {
        let text = text.map_err(|e| line_io(line, e))?;
        if text.trim().is_empty() {
            continue;
        }
        let m: MarginLine = serde_json::from_str(&text).map_err(|e| FormatError::parse(line, e))?;
        records.push(MarginRecord {
            pair_id: m.id,
            margin: m.margin,
            pd: m.pd,
        });
    }
    Ok(records)
}

/// Writes any report as pretty JSON to `path`, or to stdout when `None`.
pub fn emit_report<T: Serialize>(path: Option<&Path>, report: &T) -> FormatResult<()> {
    match path {
        Some(p) => write_json(p, report),
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            serde_json::to_writer_pretty(&mut lock, report).map_err(|e| FormatError::Invalid(e.to_string()))?;
            lock.write_all(b"\n")
                .map_err(|e| FormatError::io(Path::new("<stdout>"), e))
        }
    }
}
