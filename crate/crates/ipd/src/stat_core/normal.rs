//! Standard normal CDF, its numerical inverse, and normal-quantile
//! confidence intervals.
//!
//! The CDF integrates the density with composite Simpson panels (panel count
//! grows with |x|, keeping the error near 1e-13); the quantile inverts it by
//! bisection. Constants are computed in `f64` regardless of the scalar type
//! requested for the interval endpoints.

use crate::stat_core::Real;

/// Φ(x) to absolute accuracy ~1e-13.
pub fn normal_cdf(x: f64) -> f64 {
    if x < 0.0 {
        return 1.0 - normal_cdf(-x);
    }
    if x > 12.0 {
        // tail mass below 2e-33: indistinguishable from 1 in f64
        return 1.0;
    }
    let panels = {
        let p = (256.0 * x).ceil() as usize;
        let p = p.max(64);
        if p % 2 == 1 {
            p + 1
        } else {
            p
        }
    };
    let h = x / panels as f64;
    let density = |t: f64| (-0.5 * t * t).exp();
    let mut acc = density(0.0) + density(x);
    for i in 1..panels {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * density(h * i as f64);
    }
    let integral = acc * h / 3.0 / (2.0 * std::f64::consts::PI).sqrt();
    0.5 + integral
}

/// Φ⁻¹(p) by bisection; absolute accuracy well below 1e-10.
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile needs p in (0,1)");
    if p < 0.5 {
        return -normal_quantile(1.0 - p);
    }
    if p == 0.5 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0f64, 12.0f64);
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Two-sided normal interval: estimate ∓ z_{1−α/2}·se.
pub fn normal_ci<F: Real>(estimate: F, se: F, alpha: f64) -> (F, F) {
    assert!(se >= F::zero(), "negative standard error");
    assert!(alpha > 0.0 && alpha < 1.0, "alpha outside (0,1)");
    let z = F::from_f64_lossy(normal_quantile(1.0 - alpha / 2.0));
    (estimate - z * se, estimate + z * se)
}
