//! Link rates, packet-error probabilities and the Rayleigh-fading expectation.
//!
//! Realized gains `|h|^2` (path loss times fading) drive the rates. Packet
//! errors use the expectation over fast fading given the path loss when
//! fading is on, and the closed form at the realized gain when it is frozen.

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::scenario::{stream, Domain, FadingMode, ScenarioConfig};
use crate::special;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkState {
    pub gain_sq: f64,
    pub path_loss_linear: f64,
    pub rb_count: usize,
    pub tx_power_w: f64,
}

/// `k B log2(1 + p |h|^2 / (B N0))` without the `k = 0` check.
pub fn uplink_rate_raw(rb_count: usize, tx_power_w: f64, gain_sq: f64, cfg: &ScenarioConfig) -> f64 {
    let b = cfg.rb_bandwidth_hz;
    rb_count as f64 * b * (tx_power_w * gain_sq / (b * cfg.noise_psd_w_per_hz)).ln_1p()
        / std::f64::consts::LN_2
}

pub fn uplink_rate(link: &LinkState, cfg: &ScenarioConfig) -> Result<f64> {
    if link.rb_count == 0 {
        return Err(Error::NoUplink);
    }
    Ok(uplink_rate_raw(link.rb_count, link.tx_power_w, link.gain_sq, cfg))
}

pub fn downlink_rate(gain_sq: f64, cfg: &ScenarioConfig) -> f64 {
    let b = cfg.downlink_bandwidth_hz;
    b * (cfg.server_tx_power_w * gain_sq / (b * cfg.noise_psd_w_per_hz)).ln_1p()
        / std::f64::consts::LN_2
}

/// `alpha B N0 k`: the packet-error exponent numerator before dividing by
/// `p |h|^2`.
pub fn error_exponent_scale(rb_count: usize, cfg: &ScenarioConfig) -> f64 {
    cfg.waterfall_threshold * cfg.rb_bandwidth_hz * cfg.noise_psd_w_per_hz * rb_count as f64
}

/// Probability the uploaded packet survives, `1 - s`, for a given exponent
/// numerator `a = alpha B N0 k` and power `p`.
pub fn success_probability(a: f64, tx_power_w: f64, gain_sq: f64, theta: f64, fading: FadingMode) -> f64 {
    if tx_power_w <= 0.0 {
        return 0.0;
    }
    let c = a / tx_power_w;
    match fading {
        FadingMode::Frozen => (-c / gain_sq).exp(),
        FadingMode::On => expected_exp_ratio(c / theta),
    }
}

pub fn packet_error_rate(link: &LinkState, cfg: &ScenarioConfig, fading: FadingMode) -> Result<f64> {
    if link.rb_count == 0 {
        return Err(Error::NoUplink);
    }
    let a = error_exponent_scale(link.rb_count, cfg);
    let success = success_probability(a, link.tx_power_w, link.gain_sq, link.path_loss_linear, fading);
    Ok((1.0 - success).clamp(0.0, 1.0))
}

/// `E[exp(-c / X)]` for `X ~ Exp(mean theta)`, by adaptive quadrature.
pub fn fading_expectation(c: f64, theta: f64) -> Result<f64> {
    if !c.is_finite() || c < 0.0 {
        return Err(Error::NonFinite("fading_expectation: c"));
    }
    if !theta.is_finite() || theta <= 0.0 {
        return Err(Error::NonFinite("fading_expectation: theta"));
    }
    Ok(expected_exp_ratio(c / theta))
}

/// Relative tolerance and panel cap of the fading quadrature. Each panel is
/// a 15-point Kronrod rule; smooth integrands settle within 4 to 12 panels.
pub const QUAD_REL_TOL: f64 = 1e-12;
pub const QUAD_MAX_PANELS: usize = 64;

/// `I(kappa) = int_0^inf exp(-t - kappa / t) dt`, equal to
/// `2 sqrt(kappa) K1(2 sqrt(kappa))`.
///
/// Substituting `t = e^u` gives the integrand `exp(h(u))` with
/// `h(u) = u - e^u - kappa e^-u`, a log-concave bump peaking at
/// `e^u = (1 + sqrt(1 + 4 kappa)) / 2`. The range is cut where `h` falls 60
/// below its peak and the peak value is factored out for relative accuracy.
pub fn expected_exp_ratio(kappa: f64) -> f64 {
    if kappa == 0.0 {
        return 1.0;
    }
    if kappa.is_infinite() {
        return 0.0;
    }
    let h = |u: f64| u - u.exp() - kappa * (-u).exp();
    let u_peak = (0.5 * (1.0 + (1.0 + 4.0 * kappa).sqrt())).ln();
    let h_peak = h(u_peak);
    if h_peak < -745.0 {
        return 0.0;
    }
    let floor = h_peak - 60.0;
    let edge = |dir: f64| {
        let mut step = 1.0;
        while h(u_peak + dir * step) > floor {
            step *= 2.0;
        }
        u_peak + dir * step
    };
    let (lo, hi) = (edge(-1.0), edge(1.0));
    let integrand = |u: f64| {
        let e = u.exp();
        (u - e - kappa / e - h_peak).exp()
    };
    let q = special::integrate(integrand, lo, hi, QUAD_REL_TOL, 0.0, QUAD_MAX_PANELS);
    (q.value * h_peak.exp()).min(1.0)
}

/// Independent closed form of [`fading_expectation`] through `K1`.
pub fn fading_expectation_bessel(c: f64, theta: f64) -> f64 {
    if c == 0.0 {
        return 1.0;
    }
    let z = 2.0 * (c / theta).sqrt();
    if z > 1400.0 {
        return 0.0;
    }
    z * special::bessel_k1(z)
}

/// Monte Carlo estimate `(mean, standard error)` of `E[exp(-c / X)]`.
///
/// For `c / theta > 1` the mass sits in the far tail of `X`, near
/// `sqrt(c theta)`, so draws come from an exponential with that mean and are
/// reweighted by the density ratio; otherwise `X` is sampled directly.
/// Draws are split into fixed chunks, each with its own stream, so the
/// result does not depend on the execution strategy.
pub fn fading_expectation_monte_carlo(c: f64, theta: f64, draws: usize, seed: u64, exec: Exec) -> (f64, f64) {
    const CHUNK: usize = 1 << 16;
    let mean = theta * (c / theta).sqrt().max(1.0);
    let tilt = 1.0 / mean - 1.0 / theta;
    let chunks = draws.div_ceil(CHUNK);
    let partial = par::map_range(exec, chunks, |i| {
        let mut rng = stream(seed, Domain::MonteCarlo, i as u64);
        let n = CHUNK.min(draws - i * CHUNK);
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let x = mean * rng.sample::<f64, _>(Exp1);
            let v = if tilt == 0.0 {
                (-c / x).exp()
            } else {
                mean / theta * (tilt * x - c / x).exp()
            };
            s += v;
            s2 += v * v;
        }
        (s, s2)
    });
    let (s, s2) = partial.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = draws as f64;
    let mean = s / n;
    let var = (s2 / n - mean * mean).max(0.0) * n / (n - 1.0);
    (mean, (var / n).sqrt())
}
