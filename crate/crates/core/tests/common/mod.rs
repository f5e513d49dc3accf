//! Test oracles: adaptive Gauss-Kronrod quadrature and quantities built on it.
#![allow(dead_code)]

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let pair = f(c - x) + f(c + x);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive G7-K15 on `[a, b]` to relative tolerance `rel` (absolute floor
/// `abs`), bisecting the worst interval first.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel: f64, abs: f64) -> f64 {
    let mut parts = vec![(a, b, gk15(&f, a, b))];
    for _ in 0..5000 {
        let total: f64 = parts.iter().map(|p| p.2 .0).sum();
        let err: f64 = parts.iter().map(|p| p.2 .1).sum();
        if err <= (rel * total.abs()).max(abs) {
            break;
        }
        let worst = (0..parts.len())
            .max_by(|&i, &j| parts[i].2 .1.total_cmp(&parts[j].2 .1))
            .unwrap();
        let (lo, hi, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        parts.push((lo, mid, gk15(&f, lo, mid)));
        parts.push((mid, hi, gk15(&f, mid, hi)));
    }
    parts.iter().map(|p| p.2 .0).sum()
}

/// GIG(lambda, chi, psi) moments `(E[U], E[1/U])` by quadrature in `log u`,
/// centred on the mode and scaled by the peak value.
pub fn gig_moments_quad(lambda: f64, chi: f64, psi: f64) -> (f64, f64) {
    let log_kernel = |t: f64| lambda * t - 0.5 * (chi * (-t).exp() + psi * t.exp());
    let mode = ((lambda - 1.0) + ((lambda - 1.0).powi(2) + chi * psi).sqrt()) / psi;
    let t0 = mode.ln();
    let peak = log_kernel(t0);
    // Width in log space: the curvature at the mode sets the scale.
    let curvature = 0.5 * (chi / mode + psi * mode);
    let width = 1.0 / curvature.sqrt().max(1e-3);
    let (lo, hi) = (t0 - 60.0 * width.max(0.05), t0 + 60.0 * width.max(0.05));
    let moment = |k: f64| integrate(|t| (log_kernel(t) - peak + k * t).exp(), lo, hi, 1e-14, 0.0);
    let z = moment(0.0);
    (moment(1.0) / z, moment(-1.0) / z)
}

/// `ln ∫ u^(lambda-1) exp(-(a/u + b u)/2) du`.
pub fn gig_log_normalizer_quad(lambda: f64, a: f64, b: f64) -> f64 {
    let log_kernel = |t: f64| lambda * t - 0.5 * (a * (-t).exp() + b * t.exp());
    let mode = ((lambda - 1.0) + ((lambda - 1.0).powi(2) + a * b).sqrt()) / b;
    let t0 = mode.ln();
    let peak = log_kernel(t0);
    let width = 1.0 / (0.5 * (a / mode + b * mode)).sqrt().max(1e-3);
    let (lo, hi) = (t0 - 60.0 * width.max(0.05), t0 + 60.0 * width.max(0.05));
    peak + integrate(|t| (log_kernel(t) - peak).exp(), lo, hi, 1e-14, 0.0).ln()
}

/// First two moments of `N(m, s^2)` truncated to `(0, inf)`, by quadrature.
pub fn trunc_normal_quad(m: f64, s: f64) -> (f64, f64) {
    let lo = (m - 40.0 * s).max(0.0);
    let hi = m.max(0.0) + 40.0 * s;
    let peak = if m > 0.0 { 0.0 } else { -0.5 * (m / s).powi(2) };
    let dens = |x: f64| (-0.5 * ((x - m) / s).powi(2) - peak).exp();
    let z = integrate(dens, lo, hi, 1e-14, 0.0);
    let m1 = integrate(|x| x * dens(x), lo, hi, 1e-14, 0.0);
    let m2 = integrate(|x| x * x * dens(x), lo, hi, 1e-14, 0.0);
    (m1 / z, m2 / z)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Normalizes log scores with the max-shift.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let total: f64 = e.iter().sum();
    e.iter().map(|x| x / total).collect()
}
