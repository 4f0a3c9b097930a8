//! Return-time laws `K(n) = P(tau_1 = n)` for the excursions of the walk.
//!
//! Periodic walks are stored in reduced time: a law with period `p` exposes
//! `K(p n)` as its pmf at `n`, and everything downstream works in reduced steps.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numeric::{central_binomial_ratio, compensated_sum, hurwitz_zeta, CompensatedSum};

/// Tail parameters `(D, alpha)` of a law with `K(n) ~ D n^{-alpha}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailParams {
    pub d: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    Zeta { alpha: f64 },
    TwoPoint { q: f64 },
    Srw1d,
    Tabulated(Table),
}

/// Finite pmf table, `pmf[n - 1] = K(n)` in reduced time.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pmf: Vec<f64>,
    declared: Option<TailParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExcursionLaw {
    family: Family,
    period: u32,
    // 1 / zeta(alpha) for the zeta family, unused otherwise
    zeta_norm: f64,
}

impl ExcursionLaw {
    pub fn zeta(alpha: f64) -> Result<Self> {
        if !(alpha > 1.0) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "zeta family needs alpha > 1, got {alpha}"
            )));
        }
        Ok(Self {
            family: Family::Zeta { alpha },
            period: 1,
            zeta_norm: 1.0 / hurwitz_zeta(alpha, 1.0),
        })
    }

    pub fn two_point(q: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::InvalidParameter(format!(
                "two-point family needs q in [0, 1], got {q}"
            )));
        }
        Ok(Self {
            family: Family::TwoPoint { q },
            period: 1,
            zeta_norm: f64::NAN,
        })
    }

    /// First-return law of simple random walk on Z, in reduced time (period 2).
    pub fn srw1d() -> Self {
        Self {
            family: Family::Srw1d,
            period: 2,
            zeta_norm: f64::NAN,
        }
    }

    /// Builds a law from `(n, weight)` pairs in original time.
    ///
    /// Weights are renormalized to unit mass. If every supported `n` shares a
    /// common factor `p > 1`, the table is stored in reduced time with period
    /// `p`. Negative weights are kept so that [`ExcursionLaw::validate`] can
    /// report them.
    pub fn tabulated(entries: &[(u64, f64)], declared: Option<TailParams>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidParameter("empty pmf table".into()));
        }
        if let Some(&(n, _)) = entries.iter().find(|(n, _)| *n == 0) {
            return Err(Error::InvalidParameter(format!(
                "table index must be >= 1, got {n}"
            )));
        }
        if let Some(&(_, w)) = entries.iter().find(|(_, w)| !w.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite table value {w}"
            )));
        }
        let period = entries
            .iter()
            .filter(|(_, w)| *w != 0.0)
            .fold(0u64, |g, &(n, _)| gcd(g, n))
            .max(1);
        let len = entries.iter().map(|(n, _)| n / period).max().unwrap_or(1) as usize;
        let mut pmf = vec![0.0; len];
        for &(n, w) in entries {
            if n % period != 0 {
                continue;
            }
            pmf[(n / period) as usize - 1] += w;
        }
        let mass = compensated_sum(pmf.iter().copied());
        if !(mass > 0.0) {
            return Err(Error::InvalidParameter("table has no positive mass".into()));
        }
        pmf.iter_mut().for_each(|w| *w /= mass);
        // drop trailing zeros so the support end is exact
        while pmf.len() > 1 && pmf[pmf.len() - 1] == 0.0 {
            pmf.pop();
        }
        Ok(Self {
            family: Family::Tabulated(Table { pmf, declared }),
            period: u32::try_from(period)
                .map_err(|_| Error::InvalidParameter("table period too large".into()))?,
            zeta_norm: f64::NAN,
        })
    }

    /// Reads a plain-text table, one whitespace-separated `n value` pair per line.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn from_table_file(path: &Path, declared: Option<TailParams>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |why: &str| {
                Error::InvalidParameter(format!(
                    "{}:{}: {why}: `{line}`",
                    path.display(),
                    lineno + 1
                ))
            };
            let mut fields = line.split_whitespace();
            let (Some(n), Some(v), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(bad("expected `n value`"));
            };
            let n: u64 = n.parse().map_err(|_| bad("bad index"))?;
            let v: f64 = v.parse().map_err(|_| bad("bad value"))?;
            if v < 0.0 {
                return Err(bad("negative value"));
            }
            entries.push((n, v));
        }
        let law = Self::tabulated(&entries, declared)?;
        law.validate()?;
        Ok(law)
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    /// Multiplier from reduced steps back to walk steps.
    pub fn period(&self) -> u32 {
        self.period
    }

    /// Largest `n` with `K(n) > 0`, or `None` for infinite support.
    pub fn support_max(&self) -> Option<u64> {
        match &self.family {
            Family::Zeta { .. } | Family::Srw1d => None,
            Family::TwoPoint { q } => Some(if *q == 1.0 { 1 } else { 2 }),
            Family::Tabulated(t) => Some(t.pmf.len() as u64),
        }
    }

    pub fn pmf(&self, n: u64) -> f64 {
        if n == 0 {
            return 0.0;
        }
        match &self.family {
            Family::Zeta { alpha } => (n as f64).powf(-alpha) * self.zeta_norm,
            Family::TwoPoint { q } => match n {
                1 => *q,
                2 => 1.0 - q,
                _ => 0.0,
            },
            Family::Srw1d => central_binomial_ratio(n) / (2 * n - 1) as f64,
            Family::Tabulated(t) => t.pmf.get(n as usize - 1).copied().unwrap_or(0.0),
        }
    }

    /// `P(tau_1 > k)`.
    pub fn tail(&self, k: u64) -> f64 {
        if k == 0 {
            return 1.0;
        }
        match &self.family {
            Family::Zeta { alpha } => hurwitz_zeta(*alpha, (k + 1) as f64) * self.zeta_norm,
            Family::TwoPoint { q } => {
                if k == 1 {
                    1.0 - q
                } else {
                    0.0
                }
            }
            // P(tau > 2k) = P(S_{2k} = 0) for simple random walk
            Family::Srw1d => central_binomial_ratio(k),
            Family::Tabulated(t) => {
                let k = k as usize;
                if k >= t.pmf.len() {
                    0.0
                } else {
                    compensated_sum(t.pmf[k..].iter().rev().copied())
                }
            }
        }
    }

    pub fn tail_params(&self) -> Result<TailParams> {
        match &self.family {
            Family::Zeta { alpha } => Ok(TailParams {
                d: self.zeta_norm,
                alpha: *alpha,
            }),
            Family::Srw1d => Ok(TailParams {
                d: 0.5 / std::f64::consts::PI.sqrt(),
                alpha: 1.5,
            }),
            Family::TwoPoint { .. } => Err(Error::AssumptionNotSatisfied),
            Family::Tabulated(t) => t.declared.ok_or(Error::AssumptionNotSatisfied),
        }
    }

    /// Checks normalization, nonnegativity and, where a power-law tail is
    /// claimed, the ratio `K(n) n^alpha / D` against 1.
    pub fn validate(&self) -> Result<ValidationReport> {
        const MASS_TOL: f64 = 1e-12;
        const RATIO_TOL: f64 = 1e-2;

        let mut failures = Vec::new();
        let mut notes = Vec::new();

        let head = self.support_max().unwrap_or(1000).min(1000);
        let min_pmf = (1..=head)
            .map(|n| self.pmf(n))
            .fold(f64::INFINITY, f64::min);
        if min_pmf < 0.0 {
            let n = (1..=head).find(|&n| self.pmf(n) < 0.0).unwrap_or(0);
            failures.push(format!("negative pmf value {:e} at n = {n}", self.pmf(n)));
        }

        let mut mass = (1..=head).map(|n| self.pmf(n)).collect::<CompensatedSum>();
        mass.add(self.tail(head));
        let mass_error = (mass.value() - 1.0).abs();
        if !(mass_error <= MASS_TOL) {
            failures.push(format!("total mass deviates from 1 by {mass_error:e}"));
        }

        let mut ratio_deviations = Vec::new();
        match self.tail_params() {
            Ok(params) => {
                let mut points: Vec<u64> = [1_000u64, 10_000, 100_000]
                    .into_iter()
                    .filter(|&n| self.support_max().is_none_or(|m| n <= m))
                    .collect();
                if points.is_empty() {
                    let last = self.support_max().unwrap_or(1);
                    notes.push(format!(
                        "finite support; tail ratio checked only at n = {last}"
                    ));
                    points.push(last);
                }
                for n in points {
                    let ratio = self.pmf(n) * (n as f64).powf(params.alpha) / params.d;
                    ratio_deviations.push((n, (ratio - 1.0).abs()));
                }
                if let Some(&(n, dev)) = ratio_deviations.last() {
                    if !(dev <= RATIO_TOL) {
                        failures.push(format!(
                            "tail ratio K(n) n^alpha / D deviates from 1 by {dev:e} at n = {n}"
                        ));
                    }
                }
            }
            Err(_) => notes.push("no tail claim".into()),
        }

        if failures.is_empty() {
            Ok(ValidationReport {
                mass_error,
                min_pmf,
                ratio_deviations,
                notes,
            })
        } else {
            Err(Error::ValidationFailure(failures))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub mass_error: f64,
    pub min_pmf: f64,
    /// `(n, |K(n) n^alpha / D - 1|)` at the checked points.
    pub ratio_deviations: Vec<(u64, f64)>,
    pub notes: Vec<String>,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl fmt::Display for ExcursionLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.family {
            Family::Zeta { alpha } => write!(f, "zeta:alpha={alpha}"),
            Family::TwoPoint { q } => write!(f, "twopoint:q={q}"),
            Family::Srw1d => write!(f, "srw1d"),
            Family::Tabulated(t) => write!(f, "table:len={},period={}", t.pmf.len(), self.period),
        }
    }
}

/// Parses `zeta:alpha=2.0`, `twopoint:q=0.5`, `srw1d` or
/// `table:path=<file>[,D=<d>,alpha=<a>]`.
impl FromStr for ExcursionLaw {
    type Err = Error;

    fn from_str(spec: &str) -> Result<Self> {
        let fail = |reason: String| Error::LawSpec {
            spec: spec.to_string(),
            reason,
        };
        let (name, rest) = spec.split_once(':').unwrap_or((spec, ""));
        let mut params = Vec::new();
        for kv in rest.split(',').filter(|s| !s.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| fail(format!("expected key=value, got `{kv}`")))?;
            params.push((k.trim(), v.trim()));
        }
        let get = |key: &str| params.iter().find(|(k, _)| *k == key).map(|(_, v)| *v);
        let num = |key: &str| -> Result<Option<f64>> {
            get(key)
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| fail(format!("bad number for {key}: `{v}`")))
                })
                .transpose()
        };
        let allow = |keys: &[&str]| -> Result<()> {
            match params.iter().find(|(k, _)| !keys.contains(k)) {
                Some((k, _)) => Err(fail(format!("unknown key `{k}`"))),
                None => Ok(()),
            }
        };

        match name.trim() {
            "zeta" => {
                allow(&["alpha"])?;
                let alpha = num("alpha")?.ok_or_else(|| fail("missing alpha".into()))?;
                Self::zeta(alpha)
            }
            "twopoint" => {
                allow(&["q"])?;
                let q = num("q")?.ok_or_else(|| fail("missing q".into()))?;
                Self::two_point(q)
            }
            "srw1d" => {
                allow(&[])?;
                Ok(Self::srw1d())
            }
            "table" => {
                allow(&["path", "D", "alpha"])?;
                let path = get("path").ok_or_else(|| fail("missing path".into()))?;
                let declared = match (num("D")?, num("alpha")?) {
                    (Some(d), Some(alpha)) => Some(TailParams { d, alpha }),
                    (None, None) => None,
                    _ => return Err(fail("D and alpha must be given together".into())),
                };
                Self::from_table_file(Path::new(path), declared)
            }
            other => Err(fail(format!("unknown family `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pmf_examples() {
        let tp = ExcursionLaw::two_point(0.5).unwrap();
        assert_eq!(tp.pmf(1), 0.5);
        // 1/zeta(2) = 6/pi^2
        let z = ExcursionLaw::zeta(2.0).unwrap();
        assert_relative_eq!(z.pmf(1), 0.607_927_101_854_026_6, max_relative = 1e-15);
        assert_eq!(ExcursionLaw::srw1d().pmf(1), 0.5);
        assert_eq!(tp.pmf(0), 0.0);
        assert_eq!(tp.pmf(3), 0.0);
    }

    #[test]
    fn tail_examples() {
        for law in [
            ExcursionLaw::two_point(0.5).unwrap(),
            ExcursionLaw::zeta(2.0).unwrap(),
            ExcursionLaw::srw1d(),
        ] {
            assert_eq!(law.tail(0), 1.0);
        }
        assert_eq!(ExcursionLaw::two_point(0.5).unwrap().tail(1), 0.5);
        // mpmath: zeta(2, 11) / zeta(2)
        let z = ExcursionLaw::zeta(2.0).unwrap();
        assert_relative_eq!(z.tail(10), 0.057_854_194_645_034_66, max_relative = 1e-14);
    }

    #[test]
    fn zeta_ratio_is_exact() {
        let law = ExcursionLaw::zeta(2.0).unwrap();
        let zeta2 = std::f64::consts::PI.powi(2) / 6.0;
        for n in [1u64, 7, 100, 12345, 1_000_000] {
            let r = law.pmf(n) * (n as f64).powi(2) * zeta2;
            assert_relative_eq!(r, 1.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn tail_params_examples() {
        let z = ExcursionLaw::zeta(2.0).unwrap().tail_params().unwrap();
        assert_relative_eq!(
            z.d,
            6.0 / std::f64::consts::PI.powi(2),
            max_relative = 1e-15
        );
        assert_eq!(z.alpha, 2.0);

        let s = ExcursionLaw::srw1d().tail_params().unwrap();
        assert_relative_eq!(
            s.d,
            1.0 / (2.0 * std::f64::consts::PI.sqrt()),
            max_relative = 1e-15
        );
        assert_eq!(s.alpha, 1.5);
        // numerical cross-check via K(n) n^{3/2}
        let n = 200_000u64;
        let approx_d = ExcursionLaw::srw1d().pmf(n) * (n as f64).powf(1.5);
        assert_relative_eq!(approx_d, s.d, max_relative = 1e-5);

        assert!(matches!(
            ExcursionLaw::two_point(0.5).unwrap().tail_params(),
            Err(Error::AssumptionNotSatisfied)
        ));
    }

    fn srw_first_return_brute_force(two_n: usize) -> f64 {
        let mut count = 0u64;
        for path in 0u64..(1 << two_n) {
            let mut pos = 0i64;
            let mut first_return = None;
            for step in 0..two_n {
                pos += if path >> step & 1 == 1 { 1 } else { -1 };
                if pos == 0 {
                    first_return = Some(step + 1);
                    break;
                }
            }
            if first_return == Some(two_n) {
                count += 1;
            }
        }
        count as f64 / (1u64 << two_n) as f64
    }

    #[test]
    fn srw1d_matches_path_enumeration() {
        let law = ExcursionLaw::srw1d();
        for n in 1..=10u64 {
            let brute = srw_first_return_brute_force(2 * n as usize);
            assert_relative_eq!(law.pmf(n), brute, max_relative = 1e-14);
        }
    }

    #[test]
    fn telescoping_and_monotone_tails() {
        for law in [
            ExcursionLaw::two_point(0.3).unwrap(),
            ExcursionLaw::zeta(1.5).unwrap(),
            ExcursionLaw::zeta(3.0).unwrap(),
            ExcursionLaw::srw1d(),
        ] {
            let mut prev = law.tail(0);
            for k in 0..300u64 {
                let next = law.tail(k + 1);
                assert!(next <= prev, "{law}: tail increased at {k}");
                assert!((prev - next - law.pmf(k + 1)).abs() < 1e-15, "{law}: k={k}");
                prev = next;
            }
        }
    }

    #[test]
    fn validate_examples() {
        let report = ExcursionLaw::zeta(2.0).unwrap().validate().unwrap();
        for &(_, dev) in &report.ratio_deviations {
            assert!(dev < 1e-3);
        }
        assert_eq!(report.ratio_deviations.last().unwrap().0, 100_000);

        let report = ExcursionLaw::two_point(0.5).unwrap().validate().unwrap();
        assert!(report.notes.iter().any(|n| n == "no tail claim"));

        ExcursionLaw::srw1d().validate().unwrap();

        let bad = ExcursionLaw::tabulated(&[(1, 0.6), (2, -0.1), (3, 0.5)], None).unwrap();
        assert!(matches!(bad.validate(), Err(Error::ValidationFailure(_))));
    }

    #[test]
    fn tabulated_reduces_period_and_renormalizes() {
        let law = ExcursionLaw::tabulated(&[(2, 2.0), (4, 1.0), (6, 1.0)], None).unwrap();
        assert_eq!(law.period(), 2);
        assert_eq!(law.pmf(1), 0.5);
        assert_eq!(law.pmf(2), 0.25);
        assert_eq!(law.pmf(3), 0.25);
        assert_eq!(law.support_max(), Some(3));
        assert_eq!(law.tail(1), 0.5);
        law.validate().unwrap();
    }

    #[test]
    fn parses_law_specs() {
        let z: ExcursionLaw = "zeta:alpha=2.0".parse().unwrap();
        assert_eq!(z, ExcursionLaw::zeta(2.0).unwrap());
        let t: ExcursionLaw = "twopoint:q=0.5".parse().unwrap();
        assert_eq!(t.pmf(2), 0.5);
        let s: ExcursionLaw = "srw1d".parse().unwrap();
        assert_eq!(s.period(), 2);
        assert!("zeta".parse::<ExcursionLaw>().is_err());
        assert!("zeta:alpha=0.5".parse::<ExcursionLaw>().is_err());
        assert!("zeta:beta=2".parse::<ExcursionLaw>().is_err());
        assert!("cauchy:x=1".parse::<ExcursionLaw>().is_err());
    }

    #[test]
    fn loads_table_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.txt");
        std::fs::write(&path, "# n value\n1 3\n2 1\n\n").unwrap();
        let spec = format!("table:path={},D=1,alpha=2", path.display());
        let law: ExcursionLaw = spec.parse().unwrap();
        assert_eq!(law.pmf(1), 0.75);
        assert_eq!(law.tail_params().unwrap().alpha, 2.0);

        std::fs::write(&path, "1 0.5\n2 -0.5\n").unwrap();
        let spec = format!("table:path={}", path.display());
        assert!(spec.parse::<ExcursionLaw>().is_err());
    }
}
