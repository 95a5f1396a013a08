//! Modified Bessel function of the second kind `K_ν(x)` and the gamma
//! function, for the Matérn kernel.
//!
//! `K_μ` for `|μ| ≤ 1/2` comes from Temme's series (`x < 2`) or Steed's
//! continued fraction (`x ≥ 2`); integer shifts use upward recurrence, which
//! is stable for `K`.

use std::f64::consts::PI;

/// Taylor coefficients of `1/Γ(z) = Σ c_k z^k`, k = 1..=26.
const RECIP_GAMMA: [f64; 26] = [
    1.0,
    0.577_215_664_901_532_9,
    -0.655_878_071_520_253_8,
    -0.042_002_635_034_095_2,
    0.166_538_611_382_291_5,
    -0.042_197_734_555_544_3,
    -0.009_621_971_527_877_0,
    0.007_218_943_246_663_0,
    -0.001_165_167_591_859_1,
    -0.000_215_241_674_114_9,
    0.000_128_050_282_388_2,
    -0.000_020_134_854_780_7,
    -0.000_001_250_493_482_1,
    0.000_001_133_027_232_0,
    -0.000_000_205_633_841_7,
    0.000_000_006_116_095_0,
    0.000_000_005_002_007_5,
    -0.000_000_001_181_274_6,
    0.000_000_000_104_342_7,
    0.000_000_000_007_782_3,
    -0.000_000_000_003_696_8,
    0.000_000_000_000_510_0,
    -0.000_000_000_000_020_6,
    -0.000_000_000_000_005_4,
    0.000_000_000_000_001_4,
    0.000_000_000_000_000_1,
];

/// `1/Γ(1+x)` for `|x| ≤ 1/2`.
fn recip_gamma_1p(x: f64) -> f64 {
    RECIP_GAMMA.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Temme's auxiliary values for `|mu| ≤ 1/2`:
/// `g1 = (1/Γ(1-μ) - 1/Γ(1+μ)) / 2μ`, `g2 = (1/Γ(1-μ) + 1/Γ(1+μ)) / 2`,
/// plus `1/Γ(1+μ)` and `1/Γ(1-μ)`.
fn temme_gammas(mu: f64) -> (f64, f64, f64, f64) {
    let mu2 = mu * mu;
    // even-indexed (c_2, c_4, …) and odd-indexed (c_1, c_3, …) coefficient sums
    let mut g1 = 0.0;
    let mut g2 = 0.0;
    for k in (0..RECIP_GAMMA.len()).rev() {
        if k % 2 == 1 {
            g1 = g1 * mu2 + RECIP_GAMMA[k];
        } else {
            g2 = g2 * mu2 + RECIP_GAMMA[k];
        }
    }
    let g1 = -g1;
    let recip_plus = g2 - mu * g1;
    let recip_minus = g2 + mu * g1;
    (g1, g2, recip_plus, recip_minus)
}

/// Gamma function for `x > 0`.
pub fn gamma(x: f64) -> f64 {
    assert!(x > 0.0, "gamma is only implemented for positive arguments");
    let shift = (x + 0.5).floor();
    let mu = x - shift;
    let g1p = 1.0 / recip_gamma_1p(mu);
    if shift == 0.0 {
        return g1p / mu;
    }
    let mut g = g1p;
    let mut k = 1.0;
    while k < shift {
        g *= k + mu;
        k += 1.0;
    }
    g
}

const MAX_ITER: usize = 20_000;

/// `(K_μ(x), K_{μ+1}(x))` for `|μ| ≤ 1/2`, `x > 0`.
fn bessel_k_pair(mu: f64, x: f64) -> (f64, f64) {
    if x < 2.0 {
        temme_series(mu, x)
    } else {
        steed_cf2(mu, x)
    }
}

fn temme_series(mu: f64, x: f64) -> (f64, f64) {
    let (g1, g2, recip_plus, recip_minus) = temme_gammas(mu);
    let half_x = 0.5 * x;
    let pi_mu = PI * mu;
    let fact = if pi_mu.abs() < f64::EPSILON {
        1.0
    } else {
        pi_mu / pi_mu.sin()
    };
    let d = -half_x.ln();
    let e = mu * d;
    let fact2 = if e.abs() < f64::EPSILON { 1.0 } else { e.sinh() / e };
    let mut f = fact * (g1 * e.cosh() + g2 * fact2 * d);
    let ee = e.exp();
    let mut p = 0.5 * ee / recip_plus;
    let mut q = 0.5 / (ee * recip_minus);
    let mut c = 1.0;
    let quarter_x2 = half_x * half_x;
    let mut sum = f;
    let mut sum1 = p;
    for i in 1..MAX_ITER {
        let k = i as f64;
        f = (k * f + p + q) / (k * k - mu * mu);
        c *= quarter_x2 / k;
        p /= k - mu;
        q /= k + mu;
        let del = c * f;
        sum += del;
        sum1 += c * (p - k * f);
        if del.abs() < sum.abs() * f64::EPSILON {
            break;
        }
    }
    (sum, sum1 * 2.0 / x)
}

fn steed_cf2(mu: f64, x: f64) -> (f64, f64) {
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut h = d;
    let mut delh = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let a1 = 0.25 - mu * mu;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    for i in 2..MAX_ITER {
        a -= 2.0 * (i - 1) as f64;
        c = -a * c / i as f64;
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh *= b * d - 1.0;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < f64::EPSILON {
            break;
        }
    }
    h *= a1;
    let k_mu = (PI / (2.0 * x)).sqrt() * (-x).exp() / s;
    let k_mu1 = k_mu * (mu + x + 0.5 - h) / x;
    (k_mu, k_mu1)
}

/// `K_ν(x)` for `ν ≥ 0`, `x > 0`.
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    assert!(x > 0.0, "K_nu is singular at x = 0");
    let nu = nu.abs();
    let shift = (nu + 0.5).floor();
    let mu = nu - shift;
    let (mut k_lo, mut k_hi) = bessel_k_pair(mu, x);
    let mut order = mu;
    let steps = shift as usize;
    for _ in 0..steps {
        let next = 2.0 * (order + 1.0) / x * k_hi + k_lo;
        k_lo = k_hi;
        k_hi = next;
        order += 1.0;
    }
    k_lo
}
