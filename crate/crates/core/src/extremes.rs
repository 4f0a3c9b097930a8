//! Gumbel diagnostics for the longest excursion.
//!
//! The longest excursion is integer valued, so `{gamma_N <= threshold}` is
//! evaluated as `{gamma_N <= floor(threshold)}`; the two events are equal.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::renewal_dp::{
    longest_cdf_from, renewal_mass, restricted_masses, LongestLaw, RenewalTable,
};
use crate::sampler::{run_experiment, Mode};
use crate::tilt::TiltedModel;

pub fn gumbel_cdf(x: f64) -> f64 {
    (-(-x).exp()).exp()
}

/// 71 points on `[-3, 4]` with step 0.1.
pub fn default_x_grid() -> Vec<f64> {
    (0..=70).map(|i| (i as f64 - 30.0) / 10.0).collect()
}

/// `F gamma - log(N / mu) + alpha log log(N / mu) - C`.
pub fn normalize(model: &TiltedModel, gamma: f64, horizon: usize) -> Result<f64> {
    let n_eff = horizon as f64 / model.mean_excursion();
    if !(n_eff > std::f64::consts::E) {
        return Err(Error::Domain(format!(
            "normalization needs N / mu > e, got {n_eff}"
        )));
    }
    let c = model.centering_constant()?;
    let alpha = model.tail_params()?.alpha;
    Ok(model.free_energy() * gamma - n_eff.ln() + alpha * n_eff.ln().ln() - c)
}

/// Which finite-`N` probability is compared with the Gumbel cdf.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    /// `P^c(gamma_N <= floor(threshold))`, the constrained polymer law.
    Pinned,
    /// `mu * Q(M_{sigma_N} <= floor(threshold), N in tau)`, the joint tilted event.
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub x: f64,
    pub threshold: f64,
    pub cap: i64,
    pub exact_cdf: f64,
    pub gumbel_cdf: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GumbelComparison {
    pub horizon: usize,
    pub points: Vec<GridPoint>,
    pub sup_gap: f64,
}

pub fn gumbel_comparison(
    model: &TiltedModel,
    table: &RenewalTable,
    horizon: usize,
    x_grid: &[f64],
    measure: Measure,
) -> Result<GumbelComparison> {
    let n_eff = horizon as f64 / model.mean_excursion();
    let thresholds = x_grid
        .iter()
        .map(|&x| model.gamma_threshold(x, n_eff))
        .collect::<Result<Vec<_>>>()?;
    let caps: Vec<i64> = thresholds.iter().map(|t| t.floor() as i64).collect();
    let mut distinct: Vec<usize> = caps
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| c as usize)
        .collect();
    distinct.sort_unstable();
    distinct.dedup();
    let values = match measure {
        Measure::Pinned => longest_cdf_from(model, table, horizon, &distinct)?,
        Measure::Joint => restricted_masses(model, horizon, &distinct)?
            .into_iter()
            .map(|um| um * model.mean_excursion())
            .collect(),
    };
    let lookup = |cap: i64| -> f64 {
        if cap <= 0 {
            0.0
        } else {
            let i = distinct
                .binary_search(&(cap as usize))
                .expect("cap was computed");
            values[i]
        }
    };
    let points: Vec<GridPoint> = x_grid
        .iter()
        .zip(thresholds.iter().zip(&caps))
        .map(|(&x, (&threshold, &cap))| {
            let exact_cdf = lookup(cap);
            let g = gumbel_cdf(x);
            GridPoint {
                x,
                threshold,
                cap,
                exact_cdf,
                gumbel_cdf: g,
                gap: (exact_cdf - g).abs(),
            }
        })
        .collect();
    let sup_gap = points.iter().map(|p| p.gap).fold(0.0, f64::max);
    Ok(GumbelComparison {
        horizon,
        points,
        sup_gap,
    })
}

/// `sup_x |P^c(gamma_N <= floor(gamma_x(N / mu))) - exp(-exp(-x))|` over the grid.
pub fn exact_gumbel_gap(
    model: &TiltedModel,
    table: &RenewalTable,
    horizon: usize,
    x_grid: &[f64],
) -> Result<f64> {
    Ok(gumbel_comparison(model, table, horizon, x_grid, Measure::Pinned)?.sup_gap)
}

/// Two-sided KS statistic of a sample against a continuous cdf. Tied sample
/// values are treated as one jump of the empirical cdf.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    let mut stat: f64 = 0.0;
    let mut i = 0;
    while i < xs.len() {
        let mut j = i;
        while j < xs.len() && xs[j] == xs[i] {
            j += 1;
        }
        let target = cdf(xs[i]);
        let below = i as f64 / n;
        let at = j as f64 / n;
        stat = stat.max(at - target).max(target - below);
        i = j;
    }
    Ok(stat)
}

/// `sup_m |F_n(m) - cdf(m)|` for an integer sample against a lattice cdf. Both
/// step functions jump only at integers, so this is the KS distance.
pub fn ks_distance_lattice<F: Fn(i64) -> f64>(samples: &[i64], cdf: F) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut xs = samples.to_vec();
    xs.sort_unstable();
    let n = xs.len() as f64;
    let (lo, hi) = (xs[0] - 1, xs[xs.len() - 1]);
    let mut stat: f64 = 0.0;
    let mut idx = 0;
    for m in lo..=hi {
        while idx < xs.len() && xs[idx] <= m {
            idx += 1;
        }
        stat = stat.max((idx as f64 / n - cdf(m)).abs());
    }
    // beyond the sample range the empirical cdf is 0 or 1
    stat = stat.max(cdf(lo)).max(1.0 - cdf(hi));
    Ok(stat)
}

/// Dvoretzky–Kiefer–Wolfowitz radius: `P(sup |F_n - F| > eps) <= alpha`.
pub fn dkw_epsilon(n: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * n as f64)).sqrt()
}

/// Total variation between an integer sample and an exact pmf.
pub fn total_variation<F: Fn(usize) -> f64>(samples: &[u32], max_value: usize, pmf: F) -> f64 {
    let top = max_value.max(samples.iter().copied().max().unwrap_or(0) as usize);
    let mut counts = vec![0u64; top + 1];
    for &s in samples {
        counts[s as usize] += 1;
    }
    let n = samples.len() as f64;
    0.5 * counts
        .iter()
        .enumerate()
        .map(|(m, &c)| (c as f64 / n - pmf(m)).abs())
        .sum::<f64>()
}

/// `E^c[gamma_N] F / log N` from the exact constrained law.
pub fn lln_ratio(model: &TiltedModel, table: &RenewalTable, horizon: usize) -> Result<f64> {
    if horizon < 2 {
        return Err(Error::Domain("LLN ratio needs N >= 2".into()));
    }
    let law = LongestLaw::exact(model, table, horizon)?;
    Ok(law.mean() * model.free_energy() / (horizon as f64).ln())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRecord {
    pub horizon: usize,
    pub sup_gap: f64,
    pub joint_sup_gap: f64,
    pub ks_monte_carlo: Option<f64>,
    pub lln_ratio: f64,
    pub renewal_gap: f64,
    /// Fractional part of `gamma_0(N / mu)`; the lattice phase of the threshold.
    pub threshold_phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub records: Vec<ConvergenceRecord>,
    /// Set when the sup gaps are not strictly decreasing in `N`.
    pub non_monotone: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonteCarloSpec {
    pub n_samples: usize,
    pub seed: u64,
    pub workers: usize,
}

pub fn convergence_report(
    model: &TiltedModel,
    horizons: &[usize],
    x_grid: &[f64],
    monte_carlo: Option<MonteCarloSpec>,
) -> Result<ConvergenceReport> {
    let mut sorted = horizons.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut records = Vec::with_capacity(sorted.len());
    for &n in &sorted {
        let table = renewal_mass(model, n)?;
        let pinned = gumbel_comparison(model, &table, n, x_grid, Measure::Pinned)?;
        let joint = gumbel_comparison(model, &table, n, x_grid, Measure::Joint)?;
        let ks_monte_carlo = match monte_carlo {
            Some(mc) => {
                let recs =
                    run_experiment(model, Mode::Pinned, n, mc.n_samples, mc.seed, mc.workers)?;
                let xs = recs
                    .iter()
                    .map(|r| normalize(model, r.gamma as f64, n))
                    .collect::<Result<Vec<_>>>()?;
                Some(ks_distance(&xs, gumbel_cdf)?)
            }
            None => None,
        };
        let threshold = model.gamma_threshold(0.0, n as f64 / model.mean_excursion())?;
        records.push(ConvergenceRecord {
            horizon: n,
            sup_gap: pinned.sup_gap,
            joint_sup_gap: joint.sup_gap,
            ks_monte_carlo,
            lln_ratio: lln_ratio(model, &table, n)?,
            renewal_gap: (table.get(n) * model.mean_excursion() - 1.0).abs(),
            threshold_phase: threshold - threshold.floor(),
        });
    }
    let non_monotone = records.windows(2).any(|w| w[1].sup_gap >= w[0].sup_gap);
    Ok(ConvergenceReport {
        records,
        non_monotone,
    })
}
