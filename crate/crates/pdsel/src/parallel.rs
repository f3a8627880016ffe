//! Rayon versions of the heavy stages. Every item is computed exactly as in
//! the sequential core routines and collected in input order, so results are
//! bitwise identical for any thread count.

use pdsel_core::divergence::{check_models, foreign_abs_gaps, nearest_rank_quantile, pd_row};
use pdsel_core::reward::{train_reward_model_traced, TrainOutcome};
use pdsel_core::{AggregatedDataset, Error, PdScoreTable, QuantileScales, RewardModel, TrainConfig};
use rayon::prelude::*;

use crate::error::Failure;

/// Runs `f` inside a pool of `threads` workers (rayon's default when `None`).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, Failure> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::usage("threads", "--threads must be at least 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Failure::usage("threads", e))?;
    Ok(pool.install(f))
}

/// One reward head per aspect, trained concurrently.
pub fn train_models(dataset: &AggregatedDataset, config: &TrainConfig) -> Result<Vec<TrainOutcome>, Error> {
    config.validate()?;
    (0..dataset.kappa())
        .into_par_iter()
        .map(|k| train_reward_model_traced(dataset, k, config))
        .collect()
}

/// Quantile scales per head, then PD rows per pair.
pub fn pd_table(
    dataset: &AggregatedDataset,
    models: &[RewardModel],
    rho: f64,
    gamma: f64,
) -> Result<PdScoreTable, Error> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidParameter {
            name: "gamma",
            reason: format!("must lie in (0, 1), got {gamma}"),
        });
    }
    check_models(dataset, models)?;
    let q = models
        .par_iter()
        .map(|m| foreign_abs_gaps(dataset, m, rho).map(|gaps| nearest_rank_quantile(&gaps, gamma)))
        .collect::<Result<Vec<f64>, Error>>()?;
    let scales = QuantileScales { gamma, q };
    let rows = dataset
        .pairs()
        .par_iter()
        .map(|p| pd_row(p, models, &scales, rho))
        .collect::<Result<Vec<_>, Error>>()?;
    Ok(PdScoreTable {
        aspect_names: dataset.aspect_names().to_vec(),
        scales,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use pdsel_core::divergence::compute_pd_table;
    use pdsel_core::reward::train_reward_model;
    use pdsel_core::synth::{generate, SynthConfig};

    #[test]
    fn matches_sequential_bitwise() {
        let ds = generate(&SynthConfig {
            n_prompts: 600,
            seed: 3,
            ..SynthConfig::default()
        })
        .unwrap();
        let config = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let sequential: Vec<RewardModel> = (0..ds.kappa())
            .map(|k| train_reward_model(&ds, k, &config).unwrap())
            .collect();
        let parallel = with_threads(Some(4), || train_models(&ds, &config)).unwrap().unwrap();
        let parallel: Vec<RewardModel> = parallel.into_iter().map(|o| o.model).collect();
        assert_eq!(parallel, sequential);
        let a = compute_pd_table(&ds, &sequential, config.rho, 0.9).unwrap();
        let b = with_threads(Some(4), || pd_table(&ds, &sequential, config.rho, 0.9))
            .unwrap()
            .unwrap();
        assert_eq!(
            a.scales.q.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.scales.q.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert!(a
            .rows
            .iter()
            .zip(&b.rows)
            .all(|(x, y)| x.id == y.id && x.pd.to_bits() == y.pd.to_bits()));
    }

    #[test]
    fn zero_threads_is_a_usage_error() {
        assert!(with_threads(Some(0), || ()).is_err());
    }
}
