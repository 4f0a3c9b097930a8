//! Exact renewal recursions under the tilted law.
//!
//! `u(n) = Q(n in tau)` satisfies `u(n) = sum_j Q(j) u(n - j)`. Capping the
//! convolution at `m` gives `u_m(n) = Q(n in tau, every excursion <= m)`, and
//! the constrained polymer law of the longest excursion is the ratio
//! `u_m(N) / u(N)`: the tilting factor is the same for every composition of
//! `N`, so conditioning the tilted renewal on `N in tau` is exact.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::laws::ExcursionLaw;
use crate::numeric::CompensatedSum;
use crate::tilt::TiltedModel;

pub const MAX_HORIZON: usize = 10_000_000;
pub const ORACLE_MAX_HORIZON: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct RenewalTable {
    u: Vec<f64>,
}

impl RenewalTable {
    pub fn horizon(&self) -> usize {
        self.u.len() - 1
    }

    pub fn get(&self, n: usize) -> f64 {
        self.u[n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.u
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestrictedTable {
    cap: usize,
    u: Vec<f64>,
}

impl RestrictedTable {
    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn horizon(&self) -> usize {
        self.u.len() - 1
    }

    pub fn get(&self, n: usize) -> f64 {
        self.u[n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.u
    }
}

fn check_horizon(horizon: usize) -> Result<()> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be >= 1".into()));
    }
    if horizon > MAX_HORIZON {
        return Err(Error::ResourceLimit {
            horizon,
            limit: MAX_HORIZON,
        });
    }
    Ok(())
}

/// `u(0) = 1`, `u(n) = sum_{j=1}^{min(n, cap)} q[j-1] u(n-j)`.
fn convolve(q: &[f64], horizon: usize, cap: usize) -> Vec<f64> {
    let width = cap.min(q.len());
    let mut u = vec![0.0; horizon + 1];
    u[0] = 1.0;
    for n in 1..=horizon {
        let k = n.min(width);
        let mut acc = 0.0;
        for (qj, uj) in q[..k].iter().zip(u[n - k..n].iter().rev()) {
            acc += qj * uj;
        }
        u[n] = acc;
    }
    u
}

/// Renewal mass function over `0..=horizon`, computed from the unit-mass table.
pub fn renewal_mass(model: &TiltedModel, horizon: usize) -> Result<RenewalTable> {
    check_horizon(horizon)?;
    let q = model.normalized_table();
    Ok(RenewalTable {
        u: convolve(&q, horizon, q.len()),
    })
}

pub fn restricted_renewal_mass(
    model: &TiltedModel,
    horizon: usize,
    cap: usize,
) -> Result<RestrictedTable> {
    check_horizon(horizon)?;
    let q = model.normalized_table();
    Ok(restricted_from(&q, horizon, cap))
}

fn restricted_from(q: &[f64], horizon: usize, cap: usize) -> RestrictedTable {
    RestrictedTable {
        cap,
        u: convolve(q, horizon, cap),
    }
}

/// `P^c_{beta,N}(longest excursion <= cap)`.
pub fn longest_cdf_exact(model: &TiltedModel, horizon: usize, cap: usize) -> Result<f64> {
    let table = renewal_mass(model, horizon)?;
    longest_cdf_from(model, &table, horizon, &[cap]).map(|v| v[0])
}

/// The constrained cdf at each cap in `caps`. Restricted tables for distinct
/// caps are built in parallel; each is a sequential recursion, so results do
/// not depend on scheduling.
pub fn longest_cdf_from(
    model: &TiltedModel,
    table: &RenewalTable,
    horizon: usize,
    caps: &[usize],
) -> Result<Vec<f64>> {
    let total = pinned_mass(table, horizon)?;
    Ok(restricted_masses(model, horizon, caps)?
        .into_iter()
        .map(|um| (um / total).min(1.0))
        .collect())
}

/// `u_m(horizon)` for each cap (the joint mass `Q(longest <= m, N in tau)`).
pub fn restricted_masses(model: &TiltedModel, horizon: usize, caps: &[usize]) -> Result<Vec<f64>> {
    check_horizon(horizon)?;
    let q = model.normalized_table();
    let full = q.len();
    Ok(caps
        .par_iter()
        .map(|&cap| {
            if cap == 0 {
                0.0
            } else {
                // caps at or above min(horizon, M) coincide with the unrestricted table
                let cap = cap.min(full).min(horizon);
                restricted_from(&q, horizon, cap).u[horizon]
            }
        })
        .collect())
}

fn pinned_mass(table: &RenewalTable, horizon: usize) -> Result<f64> {
    if horizon > table.horizon() {
        return Err(Error::InvalidParameter(format!(
            "renewal table horizon {} is shorter than {horizon}",
            table.horizon()
        )));
    }
    let total = table.get(horizon);
    if !(total > 0.0) {
        return Err(Error::DegenerateHorizon(horizon));
    }
    Ok(total)
}

/// Exact law of the longest excursion under the constrained polymer measure.
#[derive(Debug, Clone, PartialEq)]
pub struct LongestLaw {
    horizon: usize,
    /// `cdf[m] = P(longest <= m)` for `m = 0..=cdf.len()-1`; equal to 1 beyond.
    cdf: Vec<f64>,
}

impl LongestLaw {
    pub fn exact(model: &TiltedModel, table: &RenewalTable, horizon: usize) -> Result<Self> {
        let top = horizon.min(model.truncation());
        let caps: Vec<usize> = (0..=top).collect();
        let mut cdf = longest_cdf_from(model, table, horizon, &caps)?;
        // the cap is inactive from min(N, M) on
        cdf[top] = 1.0;
        Ok(Self { horizon, cdf })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn cdf(&self, m: i64) -> f64 {
        if m < 0 {
            0.0
        } else {
            self.cdf.get(m as usize).copied().unwrap_or(1.0)
        }
    }

    pub fn cdf_values(&self) -> &[f64] {
        &self.cdf
    }

    pub fn pmf(&self, m: usize) -> f64 {
        if m == 0 || m >= self.cdf.len() {
            return 0.0;
        }
        (self.cdf[m] - self.cdf[m - 1]).max(0.0)
    }

    /// Largest value with positive probability is at most this.
    pub fn max_value(&self) -> usize {
        self.cdf.len() - 1
    }

    /// `E[longest] = sum_{m >= 0} P(longest > m)`.
    pub fn mean(&self) -> f64 {
        self.cdf
            .iter()
            .map(|c| 1.0 - c)
            .collect::<CompensatedSum>()
            .value()
    }

    pub fn median(&self) -> usize {
        self.cdf
            .iter()
            .position(|&c| c >= 0.5)
            .unwrap_or(self.max_value())
    }
}

/// `log Z^c_{beta,N} = N F + log u(N)`.
///
/// Uses the raw (not renormalized) tilted table, for which the identity is
/// exact on every composition whose parts fit in the table.
pub fn log_partition_constrained(model: &TiltedModel, horizon: usize) -> Result<f64> {
    check_horizon(horizon)?;
    let q = model.table();
    let u = convolve(q, horizon, q.len());
    if !(u[horizon] > 0.0) {
        return Err(Error::DegenerateHorizon(horizon));
    }
    Ok(horizon as f64 * model.free_energy() + u[horizon].ln())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub log_zc: f64,
    /// `longest_pmf[g - 1] = P^c(longest = g)` for `g = 1..=N`.
    pub longest_pmf: Vec<f64>,
}

impl OracleResult {
    pub fn cdf(&self) -> Vec<f64> {
        let mut acc = CompensatedSum::new();
        self.longest_pmf
            .iter()
            .map(|&p| {
                acc.add(p);
                acc.value()
            })
            .collect()
    }
}

/// Visits every composition of `horizon` as its list of parts. Bit `i` of the
/// mask set means a renewal right after position `i + 1`.
fn for_each_composition(horizon: usize, mut visit: impl FnMut(&[usize])) {
    let mut parts = Vec::with_capacity(horizon);
    for mask in 0u32..(1u32 << (horizon - 1)) {
        parts.clear();
        let mut run = 1;
        for i in 0..horizon - 1 {
            if mask >> i & 1 == 1 {
                parts.push(run);
                run = 1;
            } else {
                run += 1;
            }
        }
        parts.push(run);
        visit(&parts);
    }
}

fn check_oracle(beta: f64, horizon: usize) -> Result<()> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be >= 1".into()));
    }
    if horizon > ORACLE_MAX_HORIZON {
        return Err(Error::TooLarge {
            horizon,
            limit: ORACLE_MAX_HORIZON,
        });
    }
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "beta must be > 0, got {beta}"
        )));
    }
    Ok(())
}

/// Enumerates all `2^{N-1}` compositions of `N` with weight
/// `e^{beta k} prod K(n_i)` straight from the untilted law.
pub fn brute_force_oracle(law: &ExcursionLaw, beta: f64, horizon: usize) -> Result<OracleResult> {
    check_oracle(beta, horizon)?;
    let pmf: Vec<f64> = (1..=horizon as u64).map(|n| law.pmf(n)).collect();
    let mut total = CompensatedSum::new();
    let mut by_longest = vec![CompensatedSum::new(); horizon];
    for_each_composition(horizon, |parts| {
        let w = parts
            .iter()
            .fold((beta * parts.len() as f64).exp(), |w, &p| w * pmf[p - 1]);
        let longest = *parts.iter().max().unwrap();
        total.add(w);
        by_longest[longest - 1].add(w);
    });
    let z = total.value();
    if !(z > 0.0) {
        return Err(Error::DegenerateHorizon(horizon));
    }
    Ok(OracleResult {
        log_zc: z.ln(),
        longest_pmf: by_longest.iter().map(|s| s.value() / z).collect(),
    })
}

/// Every composition of `N` with its probability under the constrained polymer measure.
pub fn composition_law(
    law: &ExcursionLaw,
    beta: f64,
    horizon: usize,
) -> Result<Vec<(Vec<usize>, f64)>> {
    check_oracle(beta, horizon)?;
    let pmf: Vec<f64> = (1..=horizon as u64).map(|n| law.pmf(n)).collect();
    let mut out = Vec::with_capacity(1 << (horizon - 1));
    let mut total = CompensatedSum::new();
    for_each_composition(horizon, |parts| {
        let w = parts
            .iter()
            .fold((beta * parts.len() as f64).exp(), |w, &p| w * pmf[p - 1]);
        total.add(w);
        if w > 0.0 {
            out.push((parts.to_vec(), w));
        }
    });
    let z = total.value();
    if !(z > 0.0) {
        return Err(Error::DegenerateHorizon(horizon));
    }
    out.iter_mut().for_each(|(_, w)| *w /= z);
    Ok(out)
}
