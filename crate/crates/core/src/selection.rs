//! Budgeted subset selection over a PD table.
//!
//! All strategies keep `round_half_even(lambda * n)` rows. Orderings break PD
//! ties by ascending pair id so every selection is a pure function of the
//! table (plus the seed for `RAND`).

use alloc::borrow::ToOwned;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use core::str::FromStr;

use crate::corpus::{AggregatedDataset, PreferencePair};
use crate::divergence::{PdRow, PdScoreTable};
use crate::error::{Error, Result};
use crate::math::{rounded_count, seeded_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Most negative PD first.
    Pd,
    Rand,
    /// Largest PD first.
    High,
    /// Contiguous window around the median PD rank.
    Mid,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Pd, Strategy::Rand, Strategy::High, Strategy::Mid];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Pd => "PD",
            Strategy::Rand => "RAND",
            Strategy::High => "HIGH",
            Strategy::Mid => "MID",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::param(
                    "strategy",
                    format!("unknown strategy `{s}` (expected PD, RAND, HIGH or MID)"),
                )
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdSummary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl PdSummary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &v in values {
            min = min.min(v);
            max = max.max(v);
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        Some(PdSummary { min, mean, max })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdStats {
    pub selected: Option<PdSummary>,
    pub complement: Option<PdSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport {
    pub strategy: Strategy,
    pub lambda: f64,
    /// Only set for `RAND`.
    pub seed: Option<u64>,
    pub selected_ids: Vec<String>,
    pub pd_stats: PdStats,
}

/// `round_half_even(lambda * n)`, capped at `n`.
pub fn budget(lambda: f64, n: usize) -> Result<usize> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::param("lambda", format!("must lie in (0, 1], got {lambda}")));
    }
    Ok(rounded_count(lambda * n as f64).min(n))
}

fn by_pd_then_id(a: &PdRow, b: &PdRow) -> Ordering {
    a.pd.total_cmp(&b.pd).then_with(|| a.id.cmp(&b.id))
}

/// Row positions sorted by (PD ascending, id ascending).
pub fn ascending_order(table: &PdScoreTable) -> Vec<usize> {
    let mut order: Vec<usize> = (0..table.rows.len()).collect();
    order.sort_by(|&a, &b| by_pd_then_id(&table.rows[a], &table.rows[b]));
    order
}

fn report(
    table: &PdScoreTable,
    strategy: Strategy,
    lambda: f64,
    seed: Option<u64>,
    picked: Vec<usize>,
) -> SelectionReport {
    let mut mask = alloc::vec![false; table.rows.len()];
    for &i in &picked {
        mask[i] = true;
    }
    let (selected, complement): (Vec<f64>, Vec<f64>) = {
        let mut s = Vec::with_capacity(picked.len());
        let mut c = Vec::with_capacity(table.rows.len() - picked.len());
        for &i in &picked {
            s.push(table.rows[i].pd);
        }
        for (i, row) in table.rows.iter().enumerate() {
            if !mask[i] {
                c.push(row.pd);
            }
        }
        (s, c)
    };
    SelectionReport {
        strategy,
        lambda,
        seed,
        selected_ids: picked.into_iter().map(|i| table.rows[i].id.clone()).collect(),
        pd_stats: PdStats {
            selected: PdSummary::of(&selected),
            complement: PdSummary::of(&complement),
        },
    }
}

fn nonempty(table: &PdScoreTable) -> Result<()> {
    if table.is_empty() {
        Err(Error::Empty("PD table"))
    } else {
        Ok(())
    }
}

/// Keeps the rows with the most negative PD.
pub fn select_pd(table: &PdScoreTable, lambda: f64) -> Result<SelectionReport> {
    nonempty(table)?;
    let m = budget(lambda, table.len())?;
    let mut order = ascending_order(table);
    order.truncate(m);
    Ok(report(table, Strategy::Pd, lambda, None, order))
}

/// Comparison strategies. `RAND` needs a seed; `PD` is accepted and forwarded
/// to [`select_pd`].
pub fn select_baseline(
    table: &PdScoreTable,
    strategy: Strategy,
    lambda: f64,
    seed: Option<u64>,
) -> Result<SelectionReport> {
    nonempty(table)?;
    let n = table.len();
    let m = budget(lambda, n)?;
    match strategy {
        Strategy::Pd => select_pd(table, lambda),
        Strategy::Rand => {
            let seed = seed.ok_or_else(|| Error::param("seed", "RAND selection requires a seed"))?;
            let mut rng = seeded_rng(seed, Stream::RandomSelection, 0);
            let mut picked = rand::seq::index::sample(&mut rng, n, m).into_vec();
            picked.sort_unstable();
            Ok(report(table, strategy, lambda, Some(seed), picked))
        }
        Strategy::High => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                let (ra, rb) = (&table.rows[a], &table.rows[b]);
                rb.pd.total_cmp(&ra.pd).then_with(|| ra.id.cmp(&rb.id))
            });
            order.truncate(m);
            Ok(report(table, strategy, lambda, None, order))
        }
        Strategy::Mid => {
            let order = ascending_order(table);
            let start = (n - m) / 2;
            Ok(report(table, strategy, lambda, None, order[start..start + m].to_vec()))
        }
    }
}

pub fn select(table: &PdScoreTable, strategy: Strategy, lambda: f64, seed: Option<u64>) -> Result<SelectionReport> {
    select_baseline(table, strategy, lambda, seed)
}

/// The selected pairs in dataset order. Every id must exist and appear once.
pub fn subset_pairs(dataset: &AggregatedDataset, report: &SelectionReport) -> Result<Vec<PreferencePair>> {
    let mut positions = BTreeSet::new();
    for id in &report.selected_ids {
        let pos = dataset.position(id).ok_or_else(|| Error::UnknownId(id.to_owned()))?;
        if !positions.insert(pos) {
            return Err(Error::DuplicateId(id.to_owned()));
        }
    }
    Ok(positions.into_iter().map(|i| dataset.pairs()[i].clone()).collect())
}
