//! Scalar distribution primitives: standard normal PDF/CDF/quantile,
//! categorical marginals, and the continuous extension (jittering) of
//! discrete CDFs/PDFs.

use crate::ndcore::Rng;

const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

/// Lower clamp applied to CDF values before quantile calls, so normal scores
/// stay bounded (|q| <= ~7.03) for extreme inputs.
pub const CDF_CLAMP: f64 = 1e-12;

/// Standard normal density.
pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

/// Standard normal CDF.
///
/// Central region via the series `1/2 + pdf(x) * sum x^(2n+1)/(2n+1)!!`,
/// tails via the Mills-ratio continued fraction evaluated directly (so small
/// tail probabilities keep full relative precision instead of being formed
/// as `1 - (value near 1)`).
pub fn std_normal_cdf(x: f64) -> f64 {
    assert!(x.is_finite(), "std_normal_cdf: non-finite input");
    const SPLIT: f64 = 4.0;
    let ax = x.abs();
    let result = if x >= 0.0 {
        if ax <= SPLIT {
            0.5 + std_normal_pdf(ax) * central_series(ax)
        } else {
            1.0 - tail_q(ax)
        }
    } else if ax <= SPLIT {
        0.5 - std_normal_pdf(ax) * central_series(ax)
    } else {
        tail_q(ax)
    };
    // keep the contract result in (0,1) even when the tail underflows
    result.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// `sum_{n>=0} x^(2n+1) / (2n+1)!!`; all terms positive, so no cancellation.
fn central_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    let mut k = 1.0;
    while term > sum * 1e-18 {
        term *= x * x / (2.0 * k + 1.0);
        sum += term;
        k += 1.0;
        if k > 200.0 {
            break;
        }
    }
    sum
}

/// Upper tail `Q(x) = pdf(x) / (x + 1/(x + 2/(x + 3/(...))))` for x > 0,
/// by the modified Lentz continued-fraction algorithm.
fn tail_q(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for n in 1..200 {
        let a = n as f64;
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-17 {
            break;
        }
    }
    std_normal_pdf(x) / f
}

/// Standard normal quantile.
///
/// Rational seed (Acklam 2003) refined by two Halley steps against
/// [`std_normal_cdf`]; roundtrip |cdf(quantile(u)) - u| stays below 1e-9.
///
/// Panics when `u` is outside the open interval (0, 1).
pub fn std_normal_quantile(u: f64) -> f64 {
    assert!(
        u > 0.0 && u < 1.0,
        "std_normal_quantile: u must lie in (0,1), got {u}"
    );
    let mut x = acklam_seed(u);
    for _ in 0..2 {
        let e = std_normal_cdf(x) - u;
        let pdf = std_normal_pdf(x);
        if pdf == 0.0 {
            break;
        }
        let t = e / pdf;
        x -= t / (1.0 + 0.5 * x * t);
    }
    x
}

fn acklam_seed(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        // the rational tail expression is negative at q = sqrt(-2 ln p)
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p > 1.0 - P_LOW {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -((((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0))
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Clamp a probability into `[CDF_CLAMP, 1 - CDF_CLAMP]` before a quantile call.
pub fn clamp_unit(u: f64) -> f64 {
    u.clamp(CDF_CLAMP, 1.0 - CDF_CLAMP)
}

/// Normal score of a probability: `quantile(clamp(u))`.
pub fn normal_score(u: f64) -> f64 {
    std_normal_quantile(clamp_unit(u))
}

/// Categorical distribution over categories `1..=J`.
#[derive(Clone, Debug)]
pub struct Categorical {
    probs: Vec<f64>,
}

impl Categorical {
    /// Panics if any probability is negative or the sum is not 1 within 1e-9.
    /// The stored probabilities are renormalized to sum to 1 exactly at f64.
    pub fn new(probs: Vec<f64>) -> Self {
        assert!(!probs.is_empty(), "Categorical: empty probability vector");
        assert!(
            probs.iter().all(|&p| p >= 0.0 && p.is_finite()),
            "Categorical: probabilities must be finite and non-negative"
        );
        let sum: f64 = probs.iter().sum();
        assert!(
            (sum - 1.0).abs() <= 1e-9,
            "Categorical: probabilities sum to {sum}, expected 1"
        );
        let probs = probs.iter().map(|p| p / sum).collect();
        Categorical { probs }
    }

    pub fn uniform(j: usize) -> Self {
        Categorical::new(vec![1.0 / j as f64; j])
    }

    /// Number of categories J.
    pub fn cardinality(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// P(x = j) for j in 1..=J.
    pub fn pmf(&self, j: usize) -> f64 {
        assert!(
            (1..=self.probs.len()).contains(&j),
            "pmf: category {j} out of 1..={}",
            self.probs.len()
        );
        self.probs[j - 1]
    }

    /// F(j) = P(x <= j) for j in 0..=J, with F(0) = 0 and F(J) = 1.
    pub fn cdf(&self, j: usize) -> f64 {
        assert!(j <= self.probs.len(), "cdf: {j} out of 0..={}", self.probs.len());
        if j == self.probs.len() {
            return 1.0;
        }
        self.probs[..j].iter().sum()
    }

    /// Smallest category j with F(j) >= u; inverse-CDF sampling helper.
    pub fn quantile(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (idx, p) in self.probs.iter().enumerate() {
            acc += p;
            if u <= acc {
                return idx + 1;
            }
        }
        self.probs.len()
    }

    pub fn sample(&self, rng: &mut Rng) -> usize {
        self.quantile(rng.uniform())
    }
}

/// A categorical value pushed to the continuous line by subtracting a jitter.
#[derive(Clone, Copy, Debug)]
pub struct JitteredValue {
    /// Original category in 1..=J.
    pub category: usize,
    /// Jitter v in (0, 1).
    pub jitter: f64,
    /// Continuous stand-in `category - jitter`, in [category-1, category).
    pub value: f64,
}

/// Continuously-extended CDF of a categorical variable:
/// `F*(xi) = F(floor(xi)) + frac(xi) * P(x = floor(xi) + 1)` on `[0, J]`.
pub fn ce_cdf(c: &Categorical, xi: f64) -> f64 {
    let j = c.cardinality() as f64;
    assert!(
        (0.0..=j).contains(&xi),
        "ce_cdf: argument {xi} outside [0, {j}]"
    );
    if xi == j {
        return 1.0;
    }
    let lower = xi.floor();
    c.cdf(lower as usize) + (xi - lower) * c.pmf(lower as usize + 1)
}

/// Continuously-extended density: `p*(xi) = P(x = floor(xi) + 1)` on `[0, J)`.
pub fn ce_pdf(c: &Categorical, xi: f64) -> f64 {
    let j = c.cardinality() as f64;
    assert!(
        xi >= 0.0 && xi < j,
        "ce_pdf: argument {xi} outside [0, {j})"
    );
    c.pmf(xi.floor() as usize + 1)
}

/// Replace a category by `category - v` with a fresh uniform jitter v in (0,1),
/// so the continuous extension applies. The resulting value lies in
/// `[category - 1, category)`.
pub fn jitter(c: &Categorical, category: usize, rng: &mut Rng) -> JitteredValue {
    assert!(
        (1..=c.cardinality()).contains(&category),
        "jitter: category {category} out of 1..={}",
        c.cardinality()
    );
    let v = draw_jitter(rng);
    JitteredValue {
        category,
        jitter: v,
        value: category as f64 - v,
    }
}

/// Uniform jitter in the open interval (0, 1).
pub fn draw_jitter(rng: &mut Rng) -> f64 {
    loop {
        let u = rng.uniform();
        if u > 0.0 {
            // u in (0,1) multiples of 2^-53, so 1-u is exact and in (0,1)
            return 1.0 - u;
        }
    }
}
