//! Delay and energy of one training round as pure functions of the decisions.
//!
//! Costs are assembled from per-client [`ClientTerms`] so that solvers can
//! tabulate them once per `(client, rb count)` and recombine candidates
//! without repeating radio evaluations. [`round_costs`] is the reference
//! path and uses exactly the same arithmetic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radio;
use crate::scenario::{ChannelDraw, ClientProfile, FadingMode, ScenarioConfig};

/// Per-layer sizes and workloads; every vector has length M.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerProfile {
    pub size_bits: Vec<f64>,
    pub output_bits: Vec<f64>,
    pub flops_fp: Vec<f64>,
    pub flops_bp: Vec<f64>,
}

impl LayerProfile {
    /// Profile of a dense network with the given widths: 32-bit parameters
    /// and activations, `2 * fan_in * fan_out` FLOPs forward per sample and
    /// twice that backward, FLOPs multiplied by `workload_scale`.
    pub fn from_widths(widths: &[usize], workload_scale: f64) -> Self {
        let layers = widths.windows(2);
        let mut p = LayerProfile {
            size_bits: Vec::new(),
            output_bits: Vec::new(),
            flops_fp: Vec::new(),
            flops_bp: Vec::new(),
        };
        for w in layers {
            let (fan_in, fan_out) = (w[0] as f64, w[1] as f64);
            let fp = 2.0 * fan_in * fan_out * workload_scale;
            p.size_bits.push(32.0 * (fan_in * fan_out + fan_out));
            p.output_bits.push(32.0 * fan_out);
            p.flops_fp.push(fp);
            p.flops_bp.push(2.0 * fp);
        }
        p
    }

    /// The configured explicit profile, or one derived from the widths.
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        match &cfg.layer_profile {
            Some(a) => LayerProfile {
                size_bits: a.size_bits.clone(),
                output_bits: a.output_bits.clone(),
                flops_fp: a.flops_fp.clone(),
                flops_bp: a.flops_bp.clone(),
            },
            None => Self::from_widths(&cfg.model_widths, cfg.workload_scale),
        }
    }

    pub fn n_layers(&self) -> usize {
        self.size_bits.len()
    }

    /// `lambda^T v^FP` for a cut at `cut` client-side layers.
    pub fn client_fp(&self, cut: usize) -> f64 {
        self.flops_fp[..cut].iter().sum()
    }

    pub fn client_bp(&self, cut: usize) -> f64 {
        self.flops_bp[..cut].iter().sum()
    }

    /// `(1 - lambda)^T v^FP`.
    pub fn server_fp(&self, cut: usize) -> f64 {
        self.flops_fp[cut..].iter().sum()
    }

    pub fn server_bp(&self, cut: usize) -> f64 {
        self.flops_bp[cut..].iter().sum()
    }

    /// Bits of the layers strictly between the two cuts.
    pub fn migration_bits(&self, from: usize, to: usize) -> f64 {
        let (lo, hi) = if from <= to { (from, to) } else { (to, from) };
        self.size_bits[lo..hi].iter().sum()
    }

    /// Per-sample intermediate output size, `sum_m (lambda_m - lambda_{m+1}) q_m`.
    pub fn cut_output_bits(&self, cut: usize) -> f64 {
        let lambda = |m: usize| if m <= cut { 1.0 } else { 0.0 };
        (1..self.n_layers())
            .map(|m| (lambda(m) - lambda(m + 1)) * self.output_bits[m - 1])
            .sum()
    }

    /// Gradient payload per sample, `sum_m (lambda_m - lambda_{m+1}) psi_{m+1}`.
    pub fn gradient_bits(&self, cut: usize) -> f64 {
        let lambda = |m: usize| if m <= cut { 1.0 } else { 0.0 };
        (1..self.n_layers())
            .map(|m| (lambda(m) - lambda(m + 1)) * self.size_bits[m])
            .sum()
    }
}

/// The cut position and which positions are permitted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitDecision {
    pub cut: usize,
    pub allowed_cuts: Vec<bool>,
}

impl SplitDecision {
    pub fn new(cut: usize, allowed_cuts: Vec<bool>) -> Result<Self> {
        if cut == 0 || !allowed_cuts.get(cut).copied().unwrap_or(false) {
            return Err(Error::Infeasible(format!("cut {cut} is not an allowed position")));
        }
        Ok(SplitDecision { cut, allowed_cuts })
    }

    /// The binary `lambda` vector: 1 for client-side layers.
    pub fn lambda(&self) -> Vec<u8> {
        (1..self.allowed_cuts.len()).map(|m| u8::from(m <= self.cut)).collect()
    }
}

/// Decisions of one round: cut, previous cut, RB counts and powers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundDecisions {
    pub cut: usize,
    pub prev_cut: usize,
    pub rb_counts: Vec<usize>,
    pub tx_powers: Vec<f64>,
}

impl RoundDecisions {
    pub fn validate(&self, cfg: &ScenarioConfig) -> Result<()> {
        let n = cfg.n_clients;
        if self.rb_counts.len() != n || self.tx_powers.len() != n {
            return Err(Error::Infeasible("decision vectors must have one entry per client".into()));
        }
        let total: usize = self.rb_counts.iter().sum();
        if total > cfg.n_rbs {
            return Err(Error::Infeasible(format!("{total} RBs assigned, {} available", cfg.n_rbs)));
        }
        if let Some(p) = self
            .tx_powers
            .iter()
            .find(|p| !(**p >= 0.0 && **p <= cfg.max_tx_power_w))
        {
            return Err(Error::Infeasible(format!("power {p} outside [0, {}]", cfg.max_tx_power_w)));
        }
        let m = cfg.n_layers();
        if !(1..=m).contains(&self.cut) || !(1..=m).contains(&self.prev_cut) {
            return Err(Error::Infeasible(format!("cut {} outside 1..={m}", self.cut)));
        }
        Ok(())
    }

    pub fn participating(&self, n: usize) -> bool {
        self.rb_counts[n] > 0
    }
}

/// Everything fixed within a round that costs depend on.
#[derive(Clone, Copy, Debug)]
pub struct CostContext<'a> {
    pub cfg: &'a ScenarioConfig,
    pub profile: &'a LayerProfile,
    pub clients: &'a [ClientProfile],
    pub channels: &'a [ChannelDraw],
}

impl CostContext<'_> {
    pub fn fading(&self) -> FadingMode {
        self.cfg.fading
    }
}

/// One client's contribution to the round. Stage-3 terms are expectations
/// over packet loss. A client without RBs skips the round and every term is
/// zero with `s = 1`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClientTerms {
    pub participating: bool,
    pub s: f64,
    pub t_migrate: f64,
    pub t_fp: f64,
    pub t_up: f64,
    pub t_dn: f64,
    pub t_cbp: f64,
    /// `(1 - s) D_n`, this client's expected share of server work.
    pub server_load: f64,
    pub e_ms: f64,
    pub e_fp: f64,
    pub e_up: f64,
    pub e_cbp: f64,
}

impl ClientTerms {
    pub fn energy(&self) -> f64 {
        self.e_ms + self.e_fp + self.e_up + self.e_cbp
    }

    pub fn stage2(&self) -> f64 {
        self.t_fp + self.t_up
    }

    pub fn stage3_own(&self) -> f64 {
        self.t_dn + self.t_cbp
    }
}

/// Evaluates one client's terms for `k` RBs at power `p`.
pub fn client_terms(ctx: &CostContext, n: usize, k: usize, p: f64, cut: usize, prev_cut: usize) -> ClientTerms {
    if k == 0 {
        return ClientTerms {
            s: 1.0,
            ..ClientTerms::default()
        };
    }
    let cfg = ctx.cfg;
    let prof = ctx.profile;
    let ch = &ctx.channels[n];
    let cl = &ctx.clients[n];
    let d = cl.n_samples as f64;
    let c_up = radio::uplink_rate_raw(k, p, ch.gain_sq, cfg);
    let c_dn = radio::downlink_rate(ch.gain_sq, cfg);
    let a = radio::error_exponent_scale(k, cfg);
    let s = 1.0 - radio::success_probability(a, p, ch.gain_sq, ch.path_loss_linear, ctx.fading());
    let ok = 1.0 - s;

    let mig_bits = prof.migration_bits(prev_cut, cut);
    let t_migrate = if mig_bits == 0.0 {
        0.0
    } else if cut >= prev_cut {
        mig_bits / c_dn
    } else {
        mig_bits / c_up
    };
    let e_ms = if cut < prev_cut { p * t_migrate } else { 0.0 };

    let cycles_per_joule = cfg.energy_coeff * cfg.client_cycles_per_flop * cl.cpu_hz * cl.cpu_hz;
    let t_fp = cfg.client_cycles_per_flop * prof.client_fp(cut) * d / cl.cpu_hz;
    let up_bits = d * prof.cut_output_bits(cut);
    let t_up = if up_bits == 0.0 { 0.0 } else { up_bits / c_up };
    let grad_bits = d * prof.gradient_bits(cut);
    let t_dn = if grad_bits == 0.0 { 0.0 } else { ok * grad_bits / c_dn };
    let t_cbp = cfg.client_cycles_per_flop * ok * prof.client_bp(cut) * d / cl.cpu_hz;

    ClientTerms {
        participating: true,
        s,
        t_migrate,
        t_fp,
        t_up,
        t_dn,
        t_cbp,
        server_load: ok * d,
        e_ms,
        e_fp: d * prof.client_fp(cut) * cycles_per_joule,
        e_up: p * t_up,
        e_cbp: ok * d * prof.client_bp(cut) * cycles_per_joule,
    }
}

/// Aggregated costs of a round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundCosts {
    pub t_stage1_s: f64,
    pub t_stage2_s: f64,
    pub t_stage3_expected_s: f64,
    pub t_total_expected_s: f64,
    /// Server FP plus BP time for the expected received workload.
    pub t_server_s: f64,
    pub e_ms_j: Vec<f64>,
    pub e_fp_j: Vec<f64>,
    pub e_up_j: Vec<f64>,
    pub e_cbp_expected_j: Vec<f64>,
    pub e_total_expected_j: Vec<f64>,
    pub s: Vec<f64>,
    pub terms: Vec<ClientTerms>,
}

impl RoundCosts {
    pub fn max_energy(&self) -> f64 {
        self.e_total_expected_j.iter().copied().fold(0.0, f64::max)
    }
}

/// Server FP+BP seconds per unit of expected received samples.
pub fn server_seconds_per_sample(ctx: &CostContext, cut: usize) -> f64 {
    let cfg = ctx.cfg;
    cfg.server_cycles_per_flop * (ctx.profile.server_fp(cut) + ctx.profile.server_bp(cut)) / cfg.server_cpu_hz
}

/// Combines per-client terms into the round totals.
pub fn combine(ctx: &CostContext, cut: usize, terms: Vec<ClientTerms>) -> RoundCosts {
    let max_of = |f: &dyn Fn(&ClientTerms) -> f64| {
        terms
            .iter()
            .filter(|t| t.participating)
            .map(f)
            .fold(0.0, f64::max)
    };
    let t1 = max_of(&|t| t.t_migrate);
    let t2 = max_of(&|t| t.stage2());
    let load: f64 = terms.iter().map(|t| t.server_load).sum();
    let t_server = server_seconds_per_sample(ctx, cut) * load;
    let t3 = if terms.iter().any(|t| t.participating) {
        t_server + max_of(&|t| t.stage3_own())
    } else {
        0.0
    };
    RoundCosts {
        t_stage1_s: t1,
        t_stage2_s: t2,
        t_stage3_expected_s: t3,
        t_total_expected_s: t1 + t2 + t3,
        t_server_s: t_server,
        e_ms_j: terms.iter().map(|t| t.e_ms).collect(),
        e_fp_j: terms.iter().map(|t| t.e_fp).collect(),
        e_up_j: terms.iter().map(|t| t.e_up).collect(),
        e_cbp_expected_j: terms.iter().map(|t| t.e_cbp).collect(),
        e_total_expected_j: terms.iter().map(ClientTerms::energy).collect(),
        s: terms.iter().map(|t| t.s).collect(),
        terms,
    }
}

pub fn round_costs(dec: &RoundDecisions, ctx: &CostContext) -> Result<RoundCosts> {
    dec.validate(ctx.cfg)?;
    let terms = (0..ctx.cfg.n_clients)
        .map(|n| client_terms(ctx, n, dec.rb_counts[n], dec.tx_powers[n], dec.cut, dec.prev_cut))
        .collect();
    let costs = combine(ctx, dec.cut, terms);
    if !costs.t_total_expected_s.is_finite() || costs.e_total_expected_j.iter().any(|e| !e.is_finite()) {
        return Err(Error::Infeasible("zero transmit power with RBs assigned".into()));
    }
    Ok(costs)
}

/// Stage-1 delay and its per-client breakdown.
pub fn stage1_delay(dec: &RoundDecisions, ctx: &CostContext) -> Result<(f64, Vec<f64>)> {
    let c = round_costs(dec, ctx)?;
    Ok((c.t_stage1_s, c.terms.iter().map(|t| t.t_migrate).collect()))
}

pub fn stage2_delay(dec: &RoundDecisions, ctx: &CostContext) -> Result<(f64, Vec<f64>)> {
    let c = round_costs(dec, ctx)?;
    Ok((c.t_stage2_s, c.terms.iter().map(ClientTerms::stage2).collect()))
}

/// Expected stage-3 delay and each client's path (shared server time plus
/// its own gradient download and BP).
pub fn stage3_delay_expected(dec: &RoundDecisions, ctx: &CostContext) -> Result<(f64, Vec<f64>)> {
    let c = round_costs(dec, ctx)?;
    let paths = c
        .terms
        .iter()
        .map(|t| if t.participating { c.t_server_s + t.stage3_own() } else { 0.0 })
        .collect();
    Ok((c.t_stage3_expected_s, paths))
}
