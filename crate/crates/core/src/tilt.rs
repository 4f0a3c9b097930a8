//! The free energy `F(beta)` and the tilted excursion law `Q(n) = e^beta K(n) e^{-n F}`.
//!
//! `F` is the unique root of `sum_n K(n) e^{-n F} = e^{-beta}`; under that
//! normalization `Q` is a probability law with mean `mu`. The tilted law has
//! exponentially light tails, so it is stored as a finite table `Q(1..=M)`
//! whose discarded tail mass is certified below `eps_trunc`.

use crate::error::{Error, Result};
use crate::laws::{ExcursionLaw, TailParams};
use crate::numeric::CompensatedSum;

pub const DEFAULT_EPS_TRUNC: f64 = 1e-12;
pub const DEFAULT_TOL: f64 = 1e-13;

/// Largest table the tilted law may need.
pub const MAX_TABLE_LEN: u64 = 10_000_000;

const BISECTION_FLOOR: f64 = 1e-12;
const TAIL_CHECK_EVERY: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltOptions {
    pub eps_trunc: f64,
    pub tol: f64,
}

impl Default for TiltOptions {
    fn default() -> Self {
        Self {
            eps_trunc: DEFAULT_EPS_TRUNC,
            tol: DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeEnergy {
    pub value: f64,
    /// Certified bound on `|sum_n K(n) e^{-n F} - e^{-beta}|` at `value`.
    pub residual: f64,
}

/// Lower and upper bounds on `G(f) = sum_n K(n) e^{-n f}`.
#[derive(Debug, Clone, Copy)]
struct Bracket {
    lo: f64,
    hi: f64,
}

/// Sums `G(f)` until the remainder bound `e^{-(L+1) f} P(tau > L)` drops below
/// `abs_tol`, or, when `target` is given, until the bounds exclude it.
fn laplace_bounds(law: &ExcursionLaw, f: f64, abs_tol: f64, target: Option<f64>) -> Bracket {
    let mut acc = CompensatedSum::new();
    let decay = (-f).exp();
    let mut weight = 1.0;
    let support = law.support_max().unwrap_or(u64::MAX);
    let mut n = 0u64;
    loop {
        n += 1;
        weight *= decay;
        acc.add(law.pmf(n) * weight);
        if n >= support {
            let s = acc.value();
            return Bracket { lo: s, hi: s };
        }
        if n.is_multiple_of(TAIL_CHECK_EVERY) || n < TAIL_CHECK_EVERY {
            let s = acc.value();
            let rem = law.tail(n) * (-(n as f64 + 1.0) * f).exp();
            let bracket = Bracket { lo: s, hi: s + rem };
            if rem <= abs_tol {
                return bracket;
            }
            if let Some(t) = target {
                if bracket.lo > t || bracket.hi < t {
                    return bracket;
                }
            }
        }
    }
}

/// `sum_n n K(n) e^{-n f}`, the magnitude of the residual's derivative.
fn laplace_slope(law: &ExcursionLaw, f: f64, abs_tol: f64) -> f64 {
    let mut acc = CompensatedSum::new();
    let decay = (-f).exp();
    let mut weight = 1.0;
    let support = law.support_max().unwrap_or(u64::MAX);
    let mut n = 0u64;
    loop {
        n += 1;
        weight *= decay;
        let term = n as f64 * law.pmf(n) * weight;
        acc.add(term);
        if n >= support || (n > 8 && term < abs_tol * 1e-3) {
            return acc.value();
        }
    }
}

/// Solves `sum_n K(n) e^{-n F} = e^{-beta}` for `F` in `(0, beta]`.
///
/// Bisection on the strictly decreasing residual, with a Newton polish at the
/// end. The returned residual is certified: truncation of the infinite sum is
/// bounded below `tol / 10`.
pub fn solve_free_energy(law: &ExcursionLaw, beta: f64, tol: f64) -> Result<FreeEnergy> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "beta must be > 0, got {beta}"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tol must be > 0, got {tol}"
        )));
    }
    let target = (-beta).exp();
    let sum_tol = tol / 10.0;

    // residual(f) > 0 iff G(f) > target
    let sign = |f: f64| -> Option<bool> {
        let b = laplace_bounds(law, f, sum_tol, Some(target));
        if b.lo > target {
            Some(true)
        } else if b.hi < target {
            Some(false)
        } else {
            None
        }
    };

    let mut lo = BISECTION_FLOOR.min(beta * 0.5);
    let mut hi = beta;
    if sign(lo) == Some(false) {
        return Err(Error::NoBracket { beta });
    }
    if sign(hi) == Some(true) {
        return Err(Error::NoBracket { beta });
    }

    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match sign(mid) {
            Some(true) => lo = mid,
            Some(false) => hi = mid,
            None => {
                // bounds straddle the target at full precision: use the midpoint estimate
                let b = laplace_bounds(law, mid, sum_tol, None);
                if 0.5 * (b.lo + b.hi) > target {
                    lo = mid
                } else {
                    hi = mid
                }
            }
        }
    }

    let residual_at = |f: f64| -> (f64, f64) {
        let b = laplace_bounds(law, f, sum_tol, None);
        let mid = 0.5 * (b.lo + b.hi) - target;
        let certified = (b.lo - target).abs().max((b.hi - target).abs());
        (mid, certified)
    };

    let mut f = 0.5 * (lo + hi);
    let (mut r, mut certified) = residual_at(f);
    for _ in 0..3 {
        let slope = laplace_slope(law, f, sum_tol);
        if !(slope > 0.0) {
            break;
        }
        let candidate = f + r / slope;
        if !(candidate > 0.0 && candidate <= beta) {
            break;
        }
        let (r_new, c_new) = residual_at(candidate);
        if c_new < certified {
            f = candidate;
            r = r_new;
            certified = c_new;
        } else {
            break;
        }
    }

    if certified > tol {
        return Err(Error::ToleranceNotMet {
            residual: certified,
            tol,
        });
    }
    Ok(FreeEnergy {
        value: f,
        residual: certified,
    })
}

/// `C = log(F^alpha D e^{beta - F} / (1 - e^{-F}))`.
pub fn centering_constant(beta: f64, free_energy: f64, tail: TailParams) -> f64 {
    tail.alpha * free_energy.ln() + tail.d.ln() + beta
        - free_energy
        - (-(-free_energy).exp_m1()).ln()
}

/// `e^{-kF} k^{-alpha} D e^{beta - F} / (1 - e^{-F})`, in log form.
fn ln_asymptotic_tail(beta: f64, free_energy: f64, tail: TailParams, k: f64) -> f64 {
    -k * free_energy - tail.alpha * k.ln() + tail.d.ln() + beta
        - free_energy
        - (-(-free_energy).exp_m1()).ln()
}

pub fn asymptotic_tail(beta: f64, free_energy: f64, tail: TailParams, k: f64) -> f64 {
    ln_asymptotic_tail(beta, free_energy, tail, k).exp()
}

#[derive(Debug, Clone)]
pub struct TiltedModel {
    law: ExcursionLaw,
    beta: f64,
    free_energy: FreeEnergy,
    mean: f64,
    centering: Option<f64>,
    table: Vec<f64>,
    table_mass: f64,
    tail_bound: f64,
    eps_trunc: f64,
}

impl TiltedModel {
    pub fn build(law: ExcursionLaw, beta: f64, opts: TiltOptions) -> Result<Self> {
        if !(opts.eps_trunc > 0.0 && opts.eps_trunc <= 1e-6) {
            return Err(Error::InvalidParameter(format!(
                "eps_trunc must lie in (0, 1e-6], got {}",
                opts.eps_trunc
            )));
        }
        let free_energy = solve_free_energy(&law, beta, opts.tol)?;
        let f = free_energy.value;

        // e^beta P(tau > M) e^{-M F} / (1 - e^{-F}) bounds the tilted mass beyond M
        let ln_geom = beta - (-(-f).exp_m1()).ln();
        let bound = |m: u64| -> f64 {
            let t = law.tail(m);
            if t <= 0.0 {
                0.0
            } else {
                (ln_geom + t.ln() - m as f64 * f).exp()
            }
        };
        let eps = opts.eps_trunc;
        let mut hi = 1u64;
        while bound(hi) > eps {
            if hi >= MAX_TABLE_LEN {
                return Err(Error::ResourceLimit {
                    horizon: hi as usize,
                    limit: MAX_TABLE_LEN as usize,
                });
            }
            hi = (hi * 2).min(MAX_TABLE_LEN);
        }
        let mut lo = hi / 2; // bound(lo) > eps unless lo == 0
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if bound(mid) <= eps {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let len = match law.support_max() {
            Some(s) => hi.min(s),
            None => hi,
        };

        let table: Vec<f64> = (1..=len)
            .map(|n| law.pmf(n) * (beta - n as f64 * f).exp())
            .collect();
        let table_mass = table.iter().copied().collect::<CompensatedSum>().value();
        let mean = table
            .iter()
            .enumerate()
            .map(|(i, q)| (i + 1) as f64 * q)
            .collect::<CompensatedSum>()
            .value();
        let centering = law
            .tail_params()
            .ok()
            .map(|tp| centering_constant(beta, f, tp));

        Ok(Self {
            tail_bound: bound(len),
            law,
            beta,
            free_energy,
            mean,
            centering,
            table,
            table_mass,
            eps_trunc: eps,
        })
    }

    pub fn law(&self) -> &ExcursionLaw {
        &self.law
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn free_energy(&self) -> f64 {
        self.free_energy.value
    }

    pub fn residual(&self) -> f64 {
        self.free_energy.residual
    }

    /// `mu = sum_n n Q(n)`, the mean excursion length under the tilted law.
    pub fn mean_excursion(&self) -> f64 {
        self.mean
    }

    /// Truncation index `M`.
    pub fn truncation(&self) -> usize {
        self.table.len()
    }

    pub fn eps_trunc(&self) -> f64 {
        self.eps_trunc
    }

    /// Certified bound on the tilted mass beyond the table.
    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    /// `Q(1..=M)`, with `table()[n - 1] = Q(n)`.
    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn table_mass(&self) -> f64 {
        self.table_mass
    }

    /// The table rescaled to unit mass, as used by the renewal recursions and samplers.
    pub fn normalized_table(&self) -> Vec<f64> {
        self.table.iter().map(|q| q / self.table_mass).collect()
    }

    pub fn tail_params(&self) -> Result<TailParams> {
        self.law.tail_params()
    }

    pub fn centering_constant(&self) -> Result<f64> {
        self.centering.ok_or(Error::AssumptionNotSatisfied)
    }

    /// `(x + C + log n_eff - alpha log log n_eff) / F`.
    pub fn gamma_threshold(&self, x: f64, n_eff: f64) -> Result<f64> {
        let c = self.centering_constant()?;
        let alpha = self.law.tail_params()?.alpha;
        if !(n_eff > std::f64::consts::E) {
            return Err(Error::Domain(format!(
                "threshold needs N_eff > e, got {n_eff}"
            )));
        }
        Ok((x + c + n_eff.ln() - alpha * n_eff.ln().ln()) / self.free_energy())
    }

    /// `ln Q(tau_1 > k)`, summed directly from the untruncated law to full
    /// relative precision; `-inf` when the tail is empty.
    pub fn ln_tilted_tail(&self, k: u64) -> f64 {
        if k == 0 {
            return 0.0;
        }
        let f = self.free_energy();
        let decay = (-f).exp();
        let support = self.law.support_max().unwrap_or(u64::MAX);
        if k >= support {
            return f64::NEG_INFINITY;
        }
        // sum_{j >= 1} K(k + j) e^{-j F}
        let mut acc = CompensatedSum::new();
        let mut weight = 1.0;
        let mut j = 0u64;
        loop {
            j += 1;
            weight *= decay;
            acc.add(self.law.pmf(k + j) * weight);
            if k + j >= support {
                break;
            }
            if j.is_multiple_of(TAIL_CHECK_EVERY) {
                let rem = self.law.tail(k + j) * weight * decay;
                if rem <= 1e-17 * acc.value() {
                    break;
                }
            }
        }
        self.beta - k as f64 * f + acc.value().ln()
    }

    pub fn tilted_tail_exact(&self, k: u64) -> f64 {
        self.ln_tilted_tail(k).exp()
    }

    pub fn tilted_tail_asymptotic(&self, k: f64) -> Result<f64> {
        Ok(self.ln_tilted_tail_asymptotic(k)?.exp())
    }

    fn ln_tilted_tail_asymptotic(&self, k: f64) -> Result<f64> {
        let tp = self.law.tail_params()?;
        if !(k > 0.0) {
            return Err(Error::Domain(format!(
                "asymptotic tail needs k > 0, got {k}"
            )));
        }
        Ok(ln_asymptotic_tail(self.beta, self.free_energy(), tp, k))
    }

    /// `Q(tau_1 > k)` divided by its asymptotic form; tends to 1.
    pub fn tail_ratio(&self, k: u64) -> Result<f64> {
        let asym = self.ln_tilted_tail_asymptotic(k as f64)?;
        Ok((self.ln_tilted_tail(k) - asym).exp())
    }
}
