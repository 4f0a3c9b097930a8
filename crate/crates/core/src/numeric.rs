//! Small numerical kernels shared by the law and tilt modules: compensated
//! summation, the Hurwitz zeta function, and the central binomial ratio.

/// Neumaier's variant of Kahan summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<CompensatedSum>().value()
}

// B_{2k} / (2k)! for k = 1..=10.
const BERNOULLI_OVER_FACTORIAL: [f64; 10] = [
    1.0 / 12.0,
    -1.0 / 720.0,
    1.0 / 30240.0,
    -1.0 / 1209600.0,
    1.0 / 47900160.0,
    -691.0 / 1307674368000.0,
    1.0 / 74724249600.0,
    -3617.0 / 10670622842880000.0,
    43867.0 / 5109094217170944000.0,
    -174611.0 / 802857662698291200000.0,
];

const EULER_MACLAURIN_SHIFT: f64 = 16.0;

/// Hurwitz zeta `sum_{n >= 0} (n + a)^{-s}` for `s > 1`, `a >= 1`.
///
/// Terms below `a + 16` are summed directly, the remainder by Euler–Maclaurin
/// with ten Bernoulli corrections. Relative error is at the level of a few ulp.
pub fn hurwitz_zeta(s: f64, a: f64) -> f64 {
    debug_assert!(s > 1.0 && a >= 1.0);
    let mut acc = CompensatedSum::new();
    let mut x = a;
    if a < EULER_MACLAURIN_SHIFT {
        let direct = (EULER_MACLAURIN_SHIFT - a).ceil() as u64;
        // smallest terms first
        for n in (0..direct).rev() {
            acc.add((a + n as f64).powf(-s));
        }
        x = a + direct as f64;
    }
    let x_pow = x.powf(-s);
    let mut tail = CompensatedSum::new();
    tail.add(x * x_pow / (s - 1.0));
    tail.add(0.5 * x_pow);
    // rising product s (s+1) ... (s+2k-2) times x^{-s-2k+1}
    let inv_x2 = 1.0 / (x * x);
    let mut term = s * x_pow / x;
    for (k, &coef) in BERNOULLI_OVER_FACTORIAL.iter().enumerate() {
        if k > 0 {
            let k = k as f64;
            term *= (s + 2.0 * k - 1.0) * (s + 2.0 * k) * inv_x2;
        }
        tail.add(coef * term);
    }
    acc.add(tail.value());
    acc.value()
}

/// Riemann zeta for `s > 1`.
pub fn riemann_zeta(s: f64) -> f64 {
    hurwitz_zeta(s, 1.0)
}

const CENTRAL_BINOMIAL_SERIES_FROM: u64 = 64;

/// `C(2n, n) / 4^n`, the probability that simple random walk sits at the
/// origin after `2n` steps.
///
/// Small `n` use the exact product; large `n` use the log-Gamma (Stirling)
/// difference `ln C(2n,n) - 2n ln 2`, whose leading terms cancel in closed form.
pub fn central_binomial_ratio(n: u64) -> f64 {
    if n < CENTRAL_BINOMIAL_SERIES_FROM {
        let mut c = 1.0;
        for k in 1..=n {
            c *= (2 * k - 1) as f64 / (2 * k) as f64;
        }
        return c;
    }
    let x = n as f64;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series =
        inv * (-1.0 / 8.0 + inv2 * (1.0 / 192.0 + inv2 * (-1.0 / 640.0 + inv2 * (17.0 / 14336.0))));
    (series - 0.5 * (std::f64::consts::PI * x).ln()).exp()
}
