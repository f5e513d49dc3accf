//! Scalar special functions used by the densities and the variational updates.
//!
//! Everything that touches the modified Bessel function of the third kind goes
//! through [`log_bessel_k`]; the raw value is never formed, since the products
//! `E[A]·E[B]` seen during inference push the argument well past the point
//! where `K_nu(x)` underflows.

use std::f64::consts::{FRAC_2_SQRT_PI, LN_2, PI};

use thiserror::Error;

/// Largest order magnitude accepted by [`log_bessel_k`].
pub const MAX_BESSEL_ORDER: f64 = 64.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecialError {
    #[error("{function}: argument {value} is outside the domain")]
    Domain { function: &'static str, value: f64 },
}

fn domain(function: &'static str, value: f64) -> SpecialError {
    SpecialError::Domain { function, value }
}

// Chebyshev coefficients for the Temme auxiliary gamma functions
// g1(mu) = (1/Gamma(1-mu) - 1/Gamma(1+mu)) / (2 mu) and
// g2(mu) = (1/Gamma(1-mu) + 1/Gamma(1+mu)) / 2 on |mu| <= 1/2.
const TEMME_G1: [f64; 14] = [
    -1.145_164_083_662_683,
    0.006_360_853_113_470_843,
    0.001_862_451_930_072_068_5,
    0.000_152_833_085_873_453_5,
    0.000_017_017_464_011_802_04,
    -6.459_750_292_334_735e-7,
    -5.181_984_843_251_938e-8,
    4.518_909_289_485_818e-10,
    3.243_322_737_102_087e-11,
    6.830_943_402_494_752e-13,
    2.835_350_275_517_21e-14,
    -7.988_390_576_932_359e-16,
    -3.372_667_730_077_195e-17,
    -3.658_633_480_921_052e-20,
];

const TEMME_G2: [f64; 15] = [
    1.882_645_524_949_671_8,
    -0.077_490_658_396_167_52,
    -0.018_256_714_847_324_93,
    0.000_633_803_020_907_489_6,
    0.000_076_229_054_350_872_9,
    -9.550_164_756_172_044e-7,
    -8.892_726_810_788_635e-8,
    -1.952_133_477_231_961_4e-9,
    -9.400_305_273_588_516e-11,
    4.687_513_384_953_239e-12,
    2.265_853_574_692_576e-13,
    -1.172_550_969_848_801_5e-15,
    -7.044_133_820_024_522e-17,
    -2.437_787_831_010_769_4e-18,
    -7.522_524_321_825_39e-20,
];

fn chebyshev(coeffs: &[f64], t: f64) -> f64 {
    let t2 = 2.0 * t;
    let (mut d, mut dd) = (0.0, 0.0);
    for &c in coeffs[1..].iter().rev() {
        let tmp = d;
        d = t2 * d - dd + c;
        dd = tmp;
    }
    t * d - dd + 0.5 * coeffs[0]
}

/// Returns `(1/Gamma(1+mu), 1/Gamma(1-mu), g1, g2)` for `|mu| <= 1/2`.
fn temme_gamma(mu: f64) -> (f64, f64, f64, f64) {
    let t = 4.0 * mu.abs() - 1.0;
    let g1 = chebyshev(&TEMME_G1, t);
    let g2 = chebyshev(&TEMME_G2, t);
    (g2 - mu * g1, g2 + mu * g1, g1, g2)
}

/// Temme's series for `x < 2`. Returns `(ln K_mu(x), x K_{mu+1}(x) / K_mu(x))`.
fn temme_series(mu: f64, x: f64) -> (f64, f64) {
    let half_x = 0.5 * x;
    let ln_half_x = half_x.ln();
    let half_x_mu = (mu * ln_half_x).exp();
    let pi_mu = PI * mu;
    let sigma = -mu * ln_half_x;
    let sinrat = if pi_mu.abs() < f64::EPSILON {
        1.0
    } else {
        pi_mu / pi_mu.sin()
    };
    let sinhrat = if sigma.abs() < f64::EPSILON {
        1.0
    } else {
        sigma.sinh() / sigma
    };
    let (inv_g1p, inv_g1m, g1, g2) = temme_gamma(mu);

    let mut fk = sinrat * (sigma.cosh() * g1 - sinhrat * ln_half_x * g2);
    let mut pk = 0.5 / (half_x_mu * inv_g1p);
    let mut qk = 0.5 * half_x_mu / inv_g1m;
    let mut ck = 1.0;
    let mut sum0 = fk;
    let mut sum1 = pk;
    for k in 1..500 {
        let kf = k as f64;
        fk = (kf * fk + pk + qk) / (kf * kf - mu * mu);
        ck *= half_x * half_x / kf;
        pk /= kf - mu;
        qk /= kf + mu;
        let hk = -kf * fk + pk;
        let del0 = ck * fk;
        sum0 += del0;
        sum1 += ck * hk;
        if del0.abs() < 0.5 * sum0.abs() * f64::EPSILON {
            break;
        }
    }
    // K_mu = sum0, K_{mu+1} = 2 sum1 / x
    (sum0.ln(), 2.0 * sum1 / sum0)
}

/// Steed's continued fraction for `x >= 2`. Returns the same pair as
/// [`temme_series`].
fn steed_cf2(mu: f64, x: f64) -> (f64, f64) {
    let mut bi = 2.0 * (1.0 + x);
    let mut di = 1.0 / bi;
    let mut delhi = di;
    let mut hi = di;
    let mut qi = 0.0;
    let mut qip1 = 1.0;
    let mut ai = -(0.25 - mu * mu);
    let a1 = ai;
    let mut ci = -ai;
    let mut bqi = -ai;
    let mut s = 1.0 + bqi * delhi;
    for i in 2..20_000 {
        ai -= 2.0 * (i - 1) as f64;
        ci = -ai * ci / i as f64;
        let tmp = (qi - bi * qip1) / ai;
        qi = qip1;
        qip1 = tmp;
        bqi += ci * qip1;
        bi += 2.0;
        di = 1.0 / (bi + ai * di);
        delhi *= bi * di - 1.0;
        hi += delhi;
        let dels = bqi * delhi;
        s += dels;
        if (dels / s).abs() < f64::EPSILON {
            break;
        }
    }
    hi *= -a1;
    // exp(x) K_mu(x) = sqrt(pi / 2x) / s
    let ln_k = 0.5 * (PI / (2.0 * x)).ln() - s.ln() - x;
    (ln_k, mu + x + 0.5 - hi)
}

/// Natural log of the modified Bessel function of the third kind, `ln K_nu(x)`.
///
/// Valid for `|nu| <= 64` and any positive finite `x`. The order is reduced to
/// `mu` in `[-1/2, 1/2)`, evaluated by Temme's series (`x < 2`) or Steed's
/// continued fraction, and carried upward by the three-term recurrence on the
/// scaled ratio `x K_{m+1} / K_m`, which stays finite for tiny `x`.
pub fn log_bessel_k(nu: f64, x: f64) -> Result<f64, SpecialError> {
    if !nu.is_finite() || nu.abs() > MAX_BESSEL_ORDER {
        return Err(domain("log_bessel_k order", nu));
    }
    if !(x.is_finite() && x > 0.0) {
        return Err(domain("log_bessel_k", x));
    }
    let nu = nu.abs();
    let steps = (nu + 0.5).floor();
    let mu = nu - steps;
    let (mut ln_k, mut scaled_ratio) = if x < 2.0 {
        temme_series(mu, x)
    } else {
        steed_cf2(mu, x)
    };
    let ln_x = x.ln();
    let x2 = x * x;
    for j in 0..steps as usize {
        ln_k += scaled_ratio.ln() - ln_x;
        let order = mu + (j + 1) as f64;
        scaled_ratio = 2.0 * order + x2 / scaled_ratio;
    }
    Ok(ln_k)
}

/// `K_num(x) / K_den(x)`, formed as the exponential of a log difference.
pub fn bessel_k_ratio(nu_num: f64, nu_den: f64, x: f64) -> Result<f64, SpecialError> {
    if nu_num.abs() == nu_den.abs() {
        // still validate the argument
        log_bessel_k(nu_den, x)?;
        return Ok(1.0);
    }
    Ok((log_bessel_k(nu_num, x)? - log_bessel_k(nu_den, x)?).exp())
}

/// The digamma function `Psi(x)` for `x > 0`.
pub fn digamma(x: f64) -> Result<f64, SpecialError> {
    if !(x.is_finite() && x > 0.0) {
        return Err(domain("digamma", x));
    }
    let mut acc = 0.0;
    let mut z = x;
    while z < 10.0 {
        acc -= 1.0 / z;
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    // ln z - 1/(2z) - sum B_2k / (2k z^2k)
    let tail = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2
                                        * (1.0 / 132.0
                                            - inv2 * (691.0 / 32_760.0 - inv2 / 12.0))))));
    Ok(acc + z.ln() - 0.5 * inv - tail)
}

/// `ln Gamma(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> Result<f64, SpecialError> {
    if !(x.is_finite() && x > 0.0) {
        return Err(domain("ln_gamma", x));
    }
    Ok(libm::lgamma(x))
}

/// Scaled complementary error function `exp(x^2) erfc(x)`.
pub fn erfcx(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 * (x * x).exp() - erfcx(-x);
    }
    if x < 5.0 {
        return libm::erfc(x) * (x * x).exp();
    }
    // erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
    let mut t = x;
    for k in (1..=80).rev() {
        t = x + 0.5 * k as f64 / t;
    }
    FRAC_2_SQRT_PI * 0.5 / t
}

/// Standard normal log-survival `ln P(Z > a)`.
pub fn ln_normal_sf(a: f64) -> f64 {
    let z = a / std::f64::consts::SQRT_2;
    if z < 0.0 {
        return (0.5 * libm::erfc(z)).ln();
    }
    (0.5 * erfcx(z)).ln() - z * z
}

/// A normal `N(m, s^2)` restricted to `(0, inf)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncNormalSpec {
    pub m: f64,
    pub s: f64,
}

impl TruncNormalSpec {
    pub fn new(m: f64, s: f64) -> Result<Self, SpecialError> {
        if !m.is_finite() {
            return Err(domain("trunc_normal location", m));
        }
        if !(s.is_finite() && s > 0.0) {
            return Err(domain("trunc_normal scale", s));
        }
        Ok(Self { m, s })
    }
}

/// Returns `(E[X], E[X^2])` for `X ~ N(m, s^2) I(X > 0)`.
pub fn trunc_normal_moments(spec: TruncNormalSpec) -> Result<(f64, f64), SpecialError> {
    let TruncNormalSpec { m, s } = spec;
    if !(m.is_finite() && s > 0.0) {
        return Err(domain("trunc_normal_moments", s));
    }
    // standardized truncation point
    let alpha = -m / s;
    if alpha < 5.0 {
        let hazard = (2.0 / PI).sqrt() / erfcx(alpha / std::f64::consts::SQRT_2);
        let mean = m + s * hazard;
        let second = m * m + s * s + m * s * hazard;
        return Ok((mean, second));
    }
    // Far tail: hazard = alpha + 1/(alpha + t), t = 2/(alpha + 3/(alpha + ...)).
    let mut inner = alpha;
    for k in (3..=120).rev() {
        inner = alpha + k as f64 / inner;
    }
    let tail = 2.0 / inner;
    // hazard - alpha
    let excess = 1.0 / (alpha + tail);
    let mean = s * excess;
    let second = s * s * tail * excess;
    Ok((mean, second))
}

/// `E[sqrt(X)]` for `X ~ Gamma(shape, rate)` (shape-rate convention).
pub fn sqrt_gamma_moment(shape: f64, rate: f64) -> Result<f64, SpecialError> {
    if !(shape.is_finite() && shape > 0.0) {
        return Err(domain("sqrt_gamma_moment shape", shape));
    }
    if !(rate.is_finite() && rate > 0.0) {
        return Err(domain("sqrt_gamma_moment rate", rate));
    }
    Ok(gamma_half_ratio(shape) / rate.sqrt())
}

/// `Gamma(k + 1/2) / Gamma(k)`.
fn gamma_half_ratio(k: f64) -> f64 {
    if k > 60.0 {
        let inv = 1.0 / k;
        let series = 1.0 - inv / 8.0 + inv * inv / 128.0 + 5.0 * inv.powi(3) / 1024.0
            - 21.0 * inv.powi(4) / 32_768.0
            - 399.0 * inv.powi(5) / 262_144.0
            + 869.0 * inv.powi(6) / 4_194_304.0;
        return k.sqrt() * series;
    }
    (libm::lgamma(k + 0.5) - libm::lgamma(k)).exp()
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z_prev = z;
            z = z_prev - p1 / dp;
            if (z - z_prev).abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// `ln 2`, re-exported for the GIG normalizers.
pub(crate) const LN_TWO: f64 = LN_2;
