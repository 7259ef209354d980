//! Closed-form Black–Scholes prices used as reference values.

/// Standard normal cumulative distribution function.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn d1(s: f64, k: f64, sigma: f64, tau: f64, r: f64) -> f64 {
    ((s / k).ln() + (r + 0.5 * sigma * sigma) * tau) / (sigma * tau.sqrt())
}

/// European call price with time to maturity `tau`; reduces to the payoff at `tau = 0`.
pub fn bs_call(s: f64, k: f64, sigma: f64, tau: f64, r: f64) -> f64 {
    if tau <= 0.0 || sigma <= 0.0 {
        return (s - k * (-r * tau.max(0.0)).exp()).max(0.0);
    }
    if s <= 0.0 {
        return 0.0;
    }
    let d1 = d1(s, k, sigma, tau, r);
    let d2 = d1 - sigma * tau.sqrt();
    s * norm_cdf(d1) - k * (-r * tau).exp() * norm_cdf(d2)
}

/// Call delta `∂C/∂s`.
pub fn bs_call_delta(s: f64, k: f64, sigma: f64, tau: f64, r: f64) -> f64 {
    if tau <= 0.0 || sigma <= 0.0 {
        return if s > k { 1.0 } else { 0.0 };
    }
    if s <= 0.0 {
        return 0.0;
    }
    norm_cdf(d1(s, k, sigma, tau, r))
}
