//! Monte Carlo over excursion sequences.
//!
//! Every sample draws from its own ChaCha stream keyed by `(seed, index)`, so
//! results are identical for any number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::renewal_dp::{renewal_mass, RenewalTable};
use crate::tilt::TiltedModel;

/// The random stream for sample `index` of a run seeded with `seed`.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Vose's alias table over `0..len`.
#[derive(Debug, Clone)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<usize>,
}

impl AliasTable {
    pub fn new(weights: &[f64]) -> Result<Self> {
        let n = weights.len();
        if n == 0 {
            return Err(Error::InvalidParameter(
                "alias table needs at least one weight".into(),
            ));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidParameter(
                "alias weights must be finite and >= 0".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidParameter("alias weights sum to zero".into()));
        }
        let mut scaled: Vec<f64> = weights.iter().map(|w| w * n as f64 / total).collect();
        let mut prob = vec![1.0; n];
        let mut alias: Vec<usize> = (0..n).collect();
        let (mut small, mut large): (Vec<usize>, Vec<usize>) =
            (0..n).partition(|&i| scaled[i] < 1.0);
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            prob[s] = scaled[s];
            alias[s] = l;
            scaled[l] -= 1.0 - scaled[s];
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // leftovers are 1 up to rounding
        for i in small.into_iter().chain(large) {
            prob[i] = 1.0;
        }
        Ok(Self { prob, alias })
    }

    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let column = rng.random_range(0..self.prob.len());
        if rng.random::<f64>() < self.prob[column] {
            column
        } else {
            self.alias[column]
        }
    }

    /// The pmf the table actually samples from.
    pub fn reconstructed_pmf(&self) -> Vec<f64> {
        let n = self.prob.len() as f64;
        let mut pmf = vec![0.0; self.prob.len()];
        for (i, (&p, &a)) in self.prob.iter().zip(&self.alias).enumerate() {
            pmf[i] += p / n;
            pmf[a] += (1.0 - p) / n;
        }
        pmf
    }
}

/// One excursion sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathSample {
    pub lengths: Vec<u32>,
    pub total: u64,
    pub gamma: u32,
}

impl PathSample {
    fn from_lengths(lengths: Vec<u32>) -> Self {
        let total = lengths.iter().map(|&l| l as u64).sum();
        let gamma = lengths.iter().copied().max().unwrap_or(0);
        Self {
            lengths,
            total,
            gamma,
        }
    }

    /// Number of excursions.
    pub fn k(&self) -> usize {
        self.lengths.len()
    }
}

/// Samplers for the tilted excursion law of one model.
#[derive(Debug, Clone)]
pub struct TiltedSampler {
    q: Vec<f64>,
    alias: AliasTable,
}

impl TiltedSampler {
    pub fn new(model: &TiltedModel) -> Result<Self> {
        let q = model.normalized_table();
        let alias = AliasTable::new(&q)?;
        Ok(Self { q, alias })
    }

    pub fn alias(&self) -> &AliasTable {
        &self.alias
    }

    #[inline]
    pub fn draw_length<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        self.alias.sample(rng) as u32 + 1
    }

    /// i.i.d. excursions until their sum first reaches `horizon`; `k` is then `sigma_N`.
    pub fn sample_free<R: Rng + ?Sized>(&self, rng: &mut R, horizon: u64) -> PathSample {
        let mut lengths = Vec::new();
        let mut total = 0u64;
        while total < horizon {
            let t = self.draw_length(rng);
            total += t as u64;
            lengths.push(t);
        }
        PathSample::from_lengths(lengths)
    }

    /// Exact draw from the tilted renewal conditioned on `horizon in tau`.
    ///
    /// With `rem` steps left the next excursion is `n` with probability
    /// `Q(n) u(rem - n) / u(rem)`, found by inverse cdf from `n = 1`.
    pub fn sample_pinned<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        table: &RenewalTable,
        horizon: usize,
    ) -> Result<PathSample> {
        if horizon > table.horizon() {
            return Err(Error::InvalidParameter(format!(
                "renewal table horizon {} is shorter than {horizon}",
                table.horizon()
            )));
        }
        let u = table.as_slice();
        if !(u[horizon] > 0.0) {
            return Err(Error::DegenerateHorizon(horizon));
        }
        let mut lengths = Vec::new();
        let mut rem = horizon;
        while rem > 0 {
            let target = rng.random::<f64>() * u[rem];
            let top = rem.min(self.q.len());
            let mut acc = 0.0;
            let mut chosen = 0;
            for n in 1..=top {
                let w = self.q[n - 1] * u[rem - n];
                if w > 0.0 {
                    chosen = n;
                    acc += w;
                    if acc > target {
                        break;
                    }
                }
            }
            lengths.push(chosen as u32);
            rem -= chosen;
        }
        Ok(PathSample::from_lengths(lengths))
    }
}

/// State of the overshoot chain: the excursion straddling the current time and
/// the steps left until it ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OvershootState {
    pub excursion: u32,
    pub residual: u32,
}

impl OvershootState {
    pub const START: OvershootState = OvershootState {
        excursion: 1,
        residual: 0,
    };

    pub fn new(excursion: u32, residual: u32) -> Result<Self> {
        if excursion == 0 || residual >= excursion {
            return Err(Error::InvalidParameter(format!(
                "overshoot state needs 0 <= j < i, got ({excursion}, {residual})"
            )));
        }
        Ok(Self {
            excursion,
            residual,
        })
    }

    pub fn at_renewal(&self) -> bool {
        self.residual == 0
    }
}

pub fn overshoot_step<R: Rng + ?Sized>(
    state: OvershootState,
    rng: &mut R,
    sampler: &TiltedSampler,
) -> OvershootState {
    if state.residual >= 1 {
        OvershootState {
            residual: state.residual - 1,
            ..state
        }
    } else {
        let t = sampler.draw_length(rng);
        OvershootState {
            excursion: t,
            residual: t - 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OvershootSummary {
    pub steps: u64,
    pub renewal_visits: u64,
    pub renewal_fraction: f64,
    pub inverse_mean: f64,
    pub binomial_sigma: f64,
    /// Total variation between the excursion length seen at renewal visits and the tilted law.
    pub marginal_tv: f64,
}

/// Runs the chain from `(1, 0)` for `steps` steps and records visits to `j = 0`
/// at times `1..=steps`.
pub fn run_overshoot_chain(model: &TiltedModel, steps: u64, seed: u64) -> Result<OvershootSummary> {
    if steps == 0 {
        return Err(Error::InvalidParameter("steps must be >= 1".into()));
    }
    let sampler = TiltedSampler::new(model)?;
    let mut rng = stream(seed, 0);
    let mut state = OvershootState::START;
    let mut counts = vec![0u64; sampler.q.len()];
    let mut visits = 0u64;
    for _ in 0..steps {
        state = overshoot_step(state, &mut rng, &sampler);
        if state.at_renewal() {
            visits += 1;
            counts[state.excursion as usize - 1] += 1;
        }
    }
    let p = 1.0 / model.mean_excursion();
    let marginal_tv = 0.5
        * counts
            .iter()
            .zip(&sampler.q)
            .map(|(&c, &q)| (c as f64 / visits.max(1) as f64 - q).abs())
            .sum::<f64>();
    Ok(OvershootSummary {
        steps,
        renewal_visits: visits,
        renewal_fraction: visits as f64 / steps as f64,
        inverse_mean: p,
        binomial_sigma: (p * (1.0 - p) / steps as f64).sqrt(),
        marginal_tv,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Free,
    Pinned,
}

/// `(gamma, k)` of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleRecord {
    pub gamma: u32,
    pub k: u64,
}

/// Draws `n_samples` paths on a pool of `workers` threads. Sample `s` uses
/// `stream(seed, s)`, and output is ordered by sample index.
pub fn run_experiment(
    model: &TiltedModel,
    mode: Mode,
    horizon: usize,
    n_samples: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<SampleRecord>> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be >= 1".into()));
    }
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be >= 1".into()));
    }
    let sampler = TiltedSampler::new(model)?;
    let table = match mode {
        Mode::Pinned => Some(renewal_mass(model, horizon)?),
        Mode::Free => None,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    pool.install(|| {
        (0..n_samples)
            .into_par_iter()
            .map(|s| {
                let mut rng = stream(seed, s as u64);
                let path = match &table {
                    Some(t) => sampler.sample_pinned(&mut rng, t, horizon)?,
                    None => sampler.sample_free(&mut rng, horizon as u64),
                };
                Ok(SampleRecord {
                    gamma: path.gamma,
                    k: path.k() as u64,
                })
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laws::ExcursionLaw;
    use crate::tilt::TiltOptions;
    use proptest::prelude::*;

    fn two_point_model() -> TiltedModel {
        let law = ExcursionLaw::two_point(0.5).unwrap();
        TiltedModel::build(law, (8.0f64 / 3.0).ln(), TiltOptions::default()).unwrap()
    }

    fn zeta2_model() -> TiltedModel {
        TiltedModel::build(
            ExcursionLaw::zeta(2.0).unwrap(),
            1.0,
            TiltOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn alias_round_trip() {
        let m = zeta2_model();
        let q = m.normalized_table();
        let alias = AliasTable::new(&q).unwrap();
        let back = alias.reconstructed_pmf();
        for (a, b) in q.iter().zip(&back) {
            assert!((a - b).abs() <= 1e-15);
        }
        let total: f64 = back.iter().sum();
        assert!((total - q.iter().sum::<f64>()).abs() <= 1e-14);
        assert!(AliasTable::new(&[]).is_err());
        assert!(AliasTable::new(&[0.0, 0.0]).is_err());
        assert!(AliasTable::new(&[1.0, -0.5]).is_err());
    }

    proptest! {
        #[test]
        fn alias_reconstructs_arbitrary_weights(ws in prop::collection::vec(0.0f64..10.0, 1..40)) {
            prop_assume!(ws.iter().sum::<f64>() > 1e-3);
            let total: f64 = ws.iter().sum();
            let back = AliasTable::new(&ws).unwrap().reconstructed_pmf();
            for (w, b) in ws.iter().zip(&back) {
                prop_assert!((w / total - b).abs() <= 1e-14);
            }
        }

        #[test]
        fn pinned_paths_hit_horizon(seed in any::<u64>(), horizon in 1usize..300) {
            let m = zeta2_model();
            let s = TiltedSampler::new(&m).unwrap();
            let t = renewal_mass(&m, horizon).unwrap();
            let p = s.sample_pinned(&mut stream(seed, 0), &t, horizon).unwrap();
            prop_assert_eq!(p.total, horizon as u64);
            prop_assert_eq!(p.gamma, *p.lengths.iter().max().unwrap());
            prop_assert_eq!(p.lengths.iter().map(|&l| l as u64).sum::<u64>(), p.total);
        }
    }

    #[test]
    fn free_sample_with_unit_horizon() {
        let m = zeta2_model();
        let s = TiltedSampler::new(&m).unwrap();
        for i in 0..100 {
            let p = s.sample_free(&mut stream(3, i), 1);
            assert_eq!(p.k(), 1);
            assert!(p.total >= 1);
        }
    }

    #[test]
    fn pinned_unit_horizon_is_deterministic() {
        let m = zeta2_model();
        let s = TiltedSampler::new(&m).unwrap();
        let t = renewal_mass(&m, 1).unwrap();
        let p = s.sample_pinned(&mut stream(1, 1), &t, 1).unwrap();
        assert_eq!(p.lengths, vec![1]);
    }

    #[test]
    fn pinned_two_point_first_step() {
        // P(first = 1 | N = 2) = Q(1) u(1) / u(2) = 4/7
        let m = two_point_model();
        let s = TiltedSampler::new(&m).unwrap();
        let t = renewal_mass(&m, 2).unwrap();
        let n = 200_000;
        let ones = (0..n)
            .filter(|&i| s.sample_pinned(&mut stream(11, i), &t, 2).unwrap().lengths[0] == 1)
            .count();
        let p = 4.0 / 7.0;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((ones as f64 / n as f64 - p).abs() < 4.0 * se);
    }

    #[test]
    fn free_mean_matches_mu() {
        let m = zeta2_model();
        let s = TiltedSampler::new(&m).unwrap();
        let mut rng = stream(5, 0);
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n).map(|_| s.draw_length(&mut rng) as f64).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - m.mean_excursion()).abs() < 4.0 * se);
    }

    #[test]
    fn sigma_over_n_approaches_inverse_mu() {
        let m = zeta2_model();
        let recs = run_experiment(&m, Mode::Free, 10_000, 400, 9, 4).unwrap();
        let ratio = recs.iter().map(|r| r.k as f64).sum::<f64>() / (400.0 * 10_000.0);
        assert!((ratio - 1.0 / m.mean_excursion()).abs() < 2e-3, "{ratio}");
    }

    #[test]
    fn overshoot_transitions() {
        let m = zeta2_model();
        let s = TiltedSampler::new(&m).unwrap();
        let mut rng = stream(0, 0);
        let st = OvershootState::new(3, 2).unwrap();
        assert_eq!(
            overshoot_step(st, &mut rng, &s),
            OvershootState::new(3, 1).unwrap()
        );
        for _ in 0..100 {
            let next = overshoot_step(OvershootState::new(5, 0).unwrap(), &mut rng, &s);
            assert_eq!(next.residual, next.excursion - 1);
        }
        assert!(OvershootState::new(3, 3).is_err());
        assert!(OvershootState::new(0, 0).is_err());
    }

    #[test]
    fn experiment_is_worker_independent() {
        let m = zeta2_model();
        for mode in [Mode::Free, Mode::Pinned] {
            let a = run_experiment(&m, mode, 500, 300, 42, 1).unwrap();
            let b = run_experiment(&m, mode, 500, 300, 42, 8).unwrap();
            assert_eq!(a, b);
        }
        assert!(run_experiment(&m, Mode::Free, 10, 0, 1, 1).is_err());
    }
}
