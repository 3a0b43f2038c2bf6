//! Localization-error measurement: randomized trials over a site, k sweeps,
//! and CSV reporting.
//!
//! Test positions are sampled continuously rather than on the map grid, so
//! the true location usually falls between fixed points. Trial i simulates
//! its scan with seed `seed ^ i`, which keeps trials decoupled yet fully
//! reproducible; sweeping k over the same (trials, seed) pair therefore
//! compares every k on an identical test set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::locator::{locate, LocateError, NNIndex};
use crate::model::{RadioMap, ScanMode};
use crate::sim::{simulate_scan, PathLossModel, SimError, Site};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("at least one trial is required")]
    NoTrials,
    #[error(transparent)]
    Locate(#[from] LocateError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Planar localization errors from one batch of trials, in metres.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    /// Every trial's error, sorted ascending.
    pub errors: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
}

impl ErrorReport {
    fn from_errors(mut errors: Vec<f64>) -> Self {
        errors.sort_unstable_by(f64::total_cmp);
        let n = errors.len();
        let mean = errors.iter().sum::<f64>() / n as f64;
        let median = if n % 2 == 1 {
            errors[n / 2]
        } else {
            (errors[n / 2 - 1] + errors[n / 2]) / 2.0
        };
        // Nearest-rank 95th percentile.
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        let p95 = errors[rank - 1];
        ErrorReport {
            errors,
            mean,
            median,
            p95,
        }
    }
}

/// Samples `n_trials` uniform positions inside the site, reproducibly.
pub fn sample_positions(site: &Site, n_trials: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_trials)
        .map(|_| {
            let x = rng.gen::<f64>() * site.width();
            let y = rng.gen::<f64>() * site.depth();
            (x, y)
        })
        .collect()
}

/// Runs one localization trial per given true position and reports the
/// planar error distribution. Trial i scans with seed `seed ^ i`.
pub fn evaluate_at(
    map: &RadioMap,
    site: &Site,
    model: &PathLossModel,
    positions: &[(f64, f64)],
    k: usize,
    epsilon: f64,
    seed: u64,
) -> Result<ErrorReport, EvalError> {
    if positions.is_empty() {
        return Err(EvalError::NoTrials);
    }
    let index = NNIndex::build(map);
    let mut errors = Vec::with_capacity(positions.len());
    for (i, &(x, y)) in positions.iter().enumerate() {
        let obs = simulate_scan(site, (x, y), ScanMode::Passive, model, seed ^ i as u64)?;
        let est = locate(map, &index, &obs, k, epsilon)?;
        let (dx, dy) = (est.pos.0 - x, est.pos.1 - y);
        errors.push((dx * dx + dy * dy).sqrt());
    }
    Ok(ErrorReport::from_errors(errors))
}

/// Samples `n_trials` random true positions and evaluates localization
/// error at the given k.
pub fn evaluate(
    map: &RadioMap,
    site: &Site,
    model: &PathLossModel,
    k: usize,
    epsilon: f64,
    n_trials: usize,
    seed: u64,
) -> Result<ErrorReport, EvalError> {
    if n_trials == 0 {
        return Err(EvalError::NoTrials);
    }
    let positions = sample_positions(site, n_trials, seed);
    evaluate_at(map, site, model, &positions, k, epsilon, seed)
}

/// One row of a k sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub k: usize,
    pub mean_m: f64,
    pub median_m: f64,
    pub p95_m: f64,
}

/// Evaluates each k against the same test positions and scan seeds, so the
/// comparison across k values is paired.
pub fn k_sweep(
    map: &RadioMap,
    site: &Site,
    model: &PathLossModel,
    k_values: &[usize],
    epsilon: f64,
    n_trials: usize,
    seed: u64,
) -> Result<Vec<SweepRow>, EvalError> {
    if n_trials == 0 {
        return Err(EvalError::NoTrials);
    }
    let positions = sample_positions(site, n_trials, seed);
    k_values
        .iter()
        .map(|&k| {
            let report = evaluate_at(map, site, model, &positions, k, epsilon, seed)?;
            Ok(SweepRow {
                k,
                mean_m: report.mean,
                median_m: report.median,
                p95_m: report.p95,
            })
        })
        .collect()
}

/// Renders sweep rows as CSV: header row, '.' decimal separator, LF
/// endings. Output is byte-stable for a given input.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("k,mean_m,median_m,p95_m\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.4},{:.4},{:.4}\n",
            r.k, r.mean_m, r.median_m, r.p95_m
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{build_radio_map, uq_centre_preset};

    fn uq_fixture(sigma: f64) -> (RadioMap, Site, PathLossModel) {
        let site = uq_centre_preset();
        let model = PathLossModel::default().with_sigma(sigma).unwrap();
        let map = build_radio_map(&site, 5.0, &model).unwrap();
        (map, site, model)
    }

    #[test]
    fn noise_free_grid_points_localize_exactly() {
        let (map, site, model) = uq_fixture(0.0);
        let grid: Vec<(f64, f64)> = map.entries().iter().map(|e| e.pos).collect();
        let report = evaluate_at(&map, &site, &model, &grid, 1, 0.0, 3).unwrap();
        assert!(report.errors.iter().all(|&e| e == 0.0));
        assert_eq!(report.mean, 0.0);
        assert_eq!(report.median, 0.0);
    }

    #[test]
    fn same_seed_reproduces_the_report() {
        let (map, site, model) = uq_fixture(4.0);
        let a = evaluate(&map, &site, &model, 3, 0.0, 50, 7).unwrap();
        let b = evaluate(&map, &site, &model, 3, 0.0, 50, 7).unwrap();
        assert_eq!(a, b);
        let c = evaluate(&map, &site, &model, 3, 0.0, 50, 8).unwrap();
        assert_ne!(a.errors, c.errors);
    }

    #[test]
    fn sweep_has_one_row_per_k_and_stable_csv() {
        let (map, site, model) = uq_fixture(4.0);
        let rows = k_sweep(&map, &site, &model, &[1, 3, 9], 0.0, 30, 1).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows.iter().map(|r| r.k).collect::<Vec<_>>(), vec![1, 3, 9]);

        let single = k_sweep(&map, &site, &model, &[1], 0.0, 30, 1).unwrap();
        assert_eq!(single.len(), 1);

        let csv_a = sweep_csv(&rows);
        let csv_b = sweep_csv(&k_sweep(&map, &site, &model, &[1, 3, 9], 0.0, 30, 1).unwrap());
        assert_eq!(csv_a, csv_b);
        assert!(csv_a.starts_with("k,mean_m,median_m,p95_m\n"));
        assert_eq!(csv_a.lines().count(), 4);
    }

    #[test]
    fn sweep_is_paired_so_k1_matches_direct_evaluate() {
        let (map, site, model) = uq_fixture(4.0);
        let rows = k_sweep(&map, &site, &model, &[1, 5], 0.0, 40, 11).unwrap();
        let direct = evaluate(&map, &site, &model, 1, 0.0, 40, 11).unwrap();
        assert_eq!(rows[0].mean_m, direct.mean);
    }

    #[test]
    fn errors_are_bounded_by_the_site_diagonal() {
        let (map, site, model) = uq_fixture(4.0);
        let diagonal = (site.width().powi(2) + site.depth().powi(2)).sqrt();
        let report = evaluate(&map, &site, &model, 77, 0.0, 100, 2).unwrap();
        assert!(report.errors.iter().all(|&e| (0.0..=diagonal).contains(&e)));
    }

    #[test]
    fn zero_trials_is_an_error() {
        let (map, site, model) = uq_fixture(0.0);
        assert!(matches!(
            evaluate(&map, &site, &model, 1, 0.0, 0, 0),
            Err(EvalError::NoTrials)
        ));
    }
}
