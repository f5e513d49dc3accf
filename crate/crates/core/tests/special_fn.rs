mod common;

use std::f64::consts::PI;

use common::{integrate, rel_err, trunc_normal_quad};
use nigvb::special_fn::{
    bessel_k_ratio, digamma, erfcx, ln_gamma, ln_normal_sf, log_bessel_k, sqrt_gamma_moment,
    trunc_normal_moments, TruncNormalSpec,
};
use proptest::prelude::*;

const XS: [f64; 10] = [0.1, 0.3, 0.5, 1.0, 2.0, 3.5, 5.0, 10.0, 50.0, 100.0];

/// `K_{n+1/2}(x) = sqrt(pi/(2x)) e^-x sum_k (n+k)! / (k! (n-k)! (2x)^k)`.
fn half_integer_k(n: u32, x: f64) -> f64 {
    let mut sum = 0.0;
    let mut term = 1.0;
    for k in 0..=n {
        if k > 0 {
            term *= f64::from((n + k) * (n + 1 - k)) / (f64::from(k) * 2.0 * x);
        }
        sum += term;
    }
    (PI / (2.0 * x)).sqrt() * (-x).exp() * sum
}

#[test]
fn half_integer_closed_forms() {
    for n in 0..6u32 {
        for &x in &XS {
            let closed = half_integer_k(n, x).ln();
            let nu = f64::from(n) + 0.5;
            for order in [nu, -nu] {
                let got = log_bessel_k(order, x).unwrap();
                let rel = (got - closed).exp_m1().abs();
                assert!(rel < 1e-12, "K_{order}({x}): rel {rel:e}");
            }
        }
    }
}

#[test]
fn order_recurrence() {
    for &nu in &[0.0, 0.2, 0.7, 1.0, 2.3, 5.5, 9.9] {
        for &x in &XS {
            let k = |v: f64| log_bessel_k(v, x).unwrap().exp();
            let lhs = k(nu + 1.0);
            let rhs = k(nu - 1.0) + 2.0 * nu / x * k(nu);
            assert!(rel_err(lhs, rhs) < 1e-9, "nu={nu} x={x}");
        }
    }
}

#[test]
fn integral_representation() {
    // K_nu(x) = ∫_0^∞ exp(-x cosh t) cosh(nu t) dt
    for &nu in &[0.0, 0.3, 1.0, 2.5, 4.2] {
        for &x in &[0.1, 1.0, 7.0, 40.0] {
            let q = integrate(
                |t| (-x * (t.cosh() - 1.0)).exp() * (nu * t).cosh(),
                0.0,
                40.0,
                1e-14,
                0.0,
            );
            let expected = q.ln() - x;
            let got = log_bessel_k(nu, x).unwrap();
            assert!(
                (got - expected).abs() < 1e-11,
                "nu={nu} x={x}: {got} vs {expected}"
            );
        }
    }
}

#[test]
fn ratio_matches_difference_of_logs() {
    for &(a, b, x) in &[(2.0, 1.0, 0.5), (-0.5, 0.5, 3.0), (0.0, -2.5, 20.0)] {
        let direct = (log_bessel_k(a, x).unwrap() - log_bessel_k(b, x).unwrap()).exp();
        assert!(rel_err(bessel_k_ratio(a, b, x).unwrap(), direct) < 1e-13);
    }
}

#[test]
fn digamma_recurrence_and_reference() {
    for &x in &[1e-3, 0.1, 0.5, 1.0, 2.5, 7.3, 30.0, 1e3] {
        let d = digamma(x + 1.0).unwrap() - digamma(x).unwrap() - 1.0 / x;
        assert!(d.abs() < 1e-12 * (1.0 / x).max(1.0), "x={x}: {d:e}");
        let reference = statrs::function::gamma::digamma(x);
        assert!((digamma(x).unwrap() - reference).abs() < 1e-12 * reference.abs().max(1.0));
        let lg = statrs::function::gamma::ln_gamma(x);
        assert!((ln_gamma(x).unwrap() - lg).abs() < 1e-12 * lg.abs().max(1.0));
    }
}

#[test]
fn domain_errors() {
    assert!(log_bessel_k(1.0, 0.0).is_err());
    assert!(log_bessel_k(1.0, -1.0).is_err());
    assert!(digamma(0.0).is_err());
    assert!(TruncNormalSpec::new(0.0, 0.0).is_err());
}

#[test]
fn normal_tail_helpers() {
    for &x in &[-3.0, -0.5, 0.0, 0.7, 4.0, 20.0] {
        let reference = libm::erfc(x) * (x * x).exp();
        assert!(rel_err(erfcx(x), reference) < 1e-13, "erfcx({x})");
    }
    // Deep tail against the asymptotic series.
    let a: f64 = 40.0;
    let asym = -0.5 * a * a - a.ln() - 0.5 * (2.0 * PI).ln()
        + (1.0 - 1.0 / (a * a) + 3.0 / a.powi(4)).ln();
    assert!((ln_normal_sf(a) - asym).abs() < 1e-8);
}

#[test]
fn truncated_normal_matches_quadrature() {
    for &(m, s) in &[
        (0.0, 1.0),
        (3.0, 0.5),
        (-4.0, 1.0),
        (-30.0, 2.0),
        (50.0, 3.0),
        (0.2, 1e-3),
    ] {
        let (q1, q2) = trunc_normal_quad(m, s);
        let (e1, e2) = trunc_normal_moments(TruncNormalSpec::new(m, s).unwrap()).unwrap();
        assert!(rel_err(e1, q1) < 1e-9, "m={m} s={s}: {e1} vs {q1}");
        assert!(rel_err(e2, q2) < 1e-9, "m={m} s={s}: {e2} vs {q2}");
    }
}

#[test]
fn sqrt_gamma_moment_matches_quadrature() {
    for &(shape, rate) in &[(1.5, 2.0), (30.0, 0.1), (500.0, 7.0)] {
        let mean = shape / rate;
        let ln_norm = shape * f64::ln(rate) - ln_gamma(shape).unwrap();
        let dens = |t: f64| {
            if t <= 0.0 {
                0.0
            } else {
                (ln_norm + (shape - 1.0) * t.ln() - rate * t).exp()
            }
        };
        let hi = mean + 60.0 * shape.sqrt() / rate + 60.0 / rate;
        let q = integrate(|t| t.sqrt() * dens(t), 0.0, hi, 1e-14, 0.0);
        assert!(rel_err(sqrt_gamma_moment(shape, rate).unwrap(), q) < 1e-10);
    }
}

proptest! {
    #[test]
    fn bessel_k_increases_with_order(nu in 0.0f64..20.0, x in 0.01f64..200.0) {
        prop_assert!(log_bessel_k(nu + 0.5, x).unwrap() > log_bessel_k(nu, x).unwrap());
    }

    #[test]
    fn bessel_k_is_even_in_order(nu in 0.0f64..30.0, x in 0.01f64..500.0) {
        let a = log_bessel_k(nu, x).unwrap();
        prop_assert!((a - log_bessel_k(-nu, x).unwrap()).abs() <= 1e-14 * a.abs().max(1.0));
    }

    #[test]
    fn truncated_moments_are_consistent(m in -50.0f64..50.0, s in 0.01f64..10.0) {
        let (e1, e2) = trunc_normal_moments(TruncNormalSpec::new(m, s).unwrap()).unwrap();
        prop_assert!(e1 > 0.0);
        prop_assert!(e2 >= e1 * e1 * (1.0 - 1e-12));
        prop_assert!(e1 >= m);
    }
}
