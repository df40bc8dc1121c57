use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Converts a power spectral density from dBm/Hz to W/Hz.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// How fast fading enters the packet-error model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FadingMode {
    /// Rayleigh fading is drawn each round; packet errors use the expectation
    /// over fading given the path loss.
    #[default]
    On,
    /// No fading: |h|^2 equals the path loss and packet errors use the
    /// closed form at that gain.
    Frozen,
}

/// Which server-side term the discrepancy objective uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveMode {
    /// `(1 - s)^2 ||w_bar||^2`, the literal form of the objective.
    Verbatim,
    /// `||w_bar - (1 - s) w_n||^2`, matching the power-solver coefficients.
    #[default]
    Consistent,
}

/// How the power solver turns energy and stage-3 budgets into power bounds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundForm {
    /// Invert the true constraint functions numerically.
    #[default]
    Exact,
    /// The closed-form bounds with the low-SNR Taylor expansion and the
    /// log-form stage-3 / client-BP approximations.
    Printed,
}

/// Initialization of the auxiliary stage budgets in the power iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxInit {
    #[default]
    Proportional,
    Random,
    /// Realized components at the incoming powers plus an even share of
    /// the remaining slack.
    Warm,
}

/// The four independent RNG streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub env: u64,
    pub data: u64,
    pub model: u64,
    pub sampling: u64,
}

impl Seeds {
    /// Derives four decorrelated stream seeds from one master seed.
    pub fn from_master(master: u64) -> Self {
        let mut state = master;
        let mut next = || {
            state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            z ^ (z >> 31)
        };
        Seeds {
            env: next(),
            data: next(),
            model: next(),
            sampling: next(),
        }
    }
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds::from_master(42)
    }
}

/// Per-layer cost profile given explicitly instead of derived from widths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileArrays {
    pub size_bits: Vec<f64>,
    pub output_bits: Vec<f64>,
    pub flops_fp: Vec<f64>,
    pub flops_bp: Vec<f64>,
}

/// Every physical, learning and solver parameter of a run, in SI units.
///
/// Deserializes from a JSON object whose keys are the field names below.
/// Missing keys take the defaults; the noise density is given in dBm/Hz in
/// the file and converted once by [`ScenarioConfig::finalize`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_clients: usize,
    pub n_rounds: usize,
    pub n_rbs: usize,
    pub rb_bandwidth_hz: f64,
    pub downlink_bandwidth_hz: f64,
    pub noise_psd_dbm_per_hz: f64,
    #[serde(skip)]
    pub noise_psd_w_per_hz: f64,
    pub waterfall_threshold: f64,
    pub max_tx_power_w: f64,
    pub server_tx_power_w: f64,
    pub server_cpu_hz: f64,
    pub server_cycles_per_flop: f64,
    pub client_cycles_per_flop: f64,
    pub energy_coeff: f64,
    pub delay_budget_s: f64,
    pub energy_budget_j: f64,
    pub sampling_ratio: f64,
    pub queue_memory: f64,
    pub penalty_weight: f64,
    pub dirichlet_alpha: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub solver_tol_outer: f64,
    pub solver_tol_power: f64,
    pub coverage_radius_m: f64,
    pub cpu_freq_range_hz: [f64; 2],
    pub seeds: Seeds,

    /// D_n: samples held by each client, used by the cost model and partition.
    pub samples_per_client: usize,
    /// Layer widths of the toy network, input first; M = len - 1 layers.
    pub model_widths: Vec<usize>,
    pub class_separation: f64,
    pub test_samples: usize,
    /// Multiplier on the FLOP counts derived from the widths, so the toy
    /// network can stand in for a heavier model in the cost accounting.
    pub workload_scale: f64,
    pub layer_profile: Option<ProfileArrays>,
    /// Allowed cut positions (1-based, number of client-side layers).
    pub allowed_cuts: Option<Vec<usize>>,
    /// Permits cut = M (no server-side layers) in the default mask.
    pub allow_full_client_cut: bool,
    pub initial_cut: usize,
    pub redraw_positions: bool,
    pub fading: FadingMode,
    pub objective_mode: ObjectiveMode,
    pub power_bounds: BoundForm,
    pub power_init: AuxInit,
    pub bcd_max_outer: usize,
    pub power_max_iters: usize,
    pub rb_exact_budget: u64,
    pub snapshot_every: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let noise_dbm = -173.0;
        ScenarioConfig {
            n_clients: 10,
            n_rounds: 200,
            n_rbs: 8,
            rb_bandwidth_hz: 1e6,
            downlink_bandwidth_hz: 8e6,
            noise_psd_dbm_per_hz: noise_dbm,
            noise_psd_w_per_hz: dbm_to_watts(noise_dbm),
            waterfall_threshold: 1.0,
            max_tx_power_w: 1.5,
            server_tx_power_w: 5.0,
            server_cpu_hz: 1e10,
            server_cycles_per_flop: 1.0 / 32.0,
            client_cycles_per_flop: 1.0 / 16.0,
            energy_coeff: 1e-28,
            delay_budget_s: 20.0,
            energy_budget_j: 0.5,
            sampling_ratio: 0.05,
            queue_memory: 0.5,
            penalty_weight: 10.0,
            dirichlet_alpha: 10.0,
            learning_rate: 1e-4,
            batch_size: 64,
            solver_tol_outer: 0.01,
            solver_tol_power: 0.01,
            coverage_radius_m: 500.0,
            cpu_freq_range_hz: [1e9, 1.6e9],
            seeds: Seeds::default(),

            samples_per_client: 200,
            model_widths: vec![32, 32, 32, 32, 32, 32, 10],
            class_separation: 1.0,
            test_samples: 1000,
            workload_scale: 6.0e3,
            layer_profile: None,
            allowed_cuts: None,
            allow_full_client_cut: false,
            initial_cut: 3,
            redraw_positions: false,
            fading: FadingMode::On,
            objective_mode: ObjectiveMode::Consistent,
            power_bounds: BoundForm::Exact,
            power_init: AuxInit::Proportional,
            bcd_max_outer: 20,
            power_max_iters: 50,
            rb_exact_budget: 1_000_000,
            snapshot_every: 0,
        }
    }
}

impl ScenarioConfig {
    /// Number of model layers M.
    pub fn n_layers(&self) -> usize {
        self.model_widths.len().saturating_sub(1)
    }

    /// Boolean mask over cut positions `1..=M` (index 0 unused).
    pub fn allowed_cut_mask(&self) -> Vec<bool> {
        let m = self.n_layers();
        let mut mask = vec![false; m + 1];
        match &self.allowed_cuts {
            Some(cuts) => {
                for &c in cuts {
                    if (1..=m).contains(&c) {
                        mask[c] = true;
                    }
                }
            }
            None => {
                let last = if self.allow_full_client_cut { m } else { m - 1 };
                for c in mask.iter_mut().take(last + 1).skip(1) {
                    *c = true;
                }
            }
        }
        mask
    }

    /// Applies unit conversion and checks every invariant.
    pub fn finalize(mut self) -> Result<Self> {
        self.noise_psd_w_per_hz = dbm_to_watts(self.noise_psd_dbm_per_hz);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rb_bandwidth_hz", self.rb_bandwidth_hz),
            ("downlink_bandwidth_hz", self.downlink_bandwidth_hz),
            ("noise_psd_w_per_hz", self.noise_psd_w_per_hz),
            ("waterfall_threshold", self.waterfall_threshold),
            ("max_tx_power_w", self.max_tx_power_w),
            ("server_tx_power_w", self.server_tx_power_w),
            ("server_cpu_hz", self.server_cpu_hz),
            ("server_cycles_per_flop", self.server_cycles_per_flop),
            ("client_cycles_per_flop", self.client_cycles_per_flop),
            ("delay_budget_s", self.delay_budget_s),
            ("energy_budget_j", self.energy_budget_j),
            ("dirichlet_alpha", self.dirichlet_alpha),
            ("learning_rate", self.learning_rate),
            ("solver_tol_outer", self.solver_tol_outer),
            ("solver_tol_power", self.solver_tol_power),
            ("coverage_radius_m", self.coverage_radius_m),
            ("class_separation", self.class_separation),
            ("workload_scale", self.workload_scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || v.is_nan() {
                return Err(Error::invalid(name, "(0, inf)", v));
            }
        }
        if !(self.energy_coeff >= 0.0 && self.energy_coeff.is_finite()) {
            return Err(Error::invalid("energy_coeff", "[0, inf)", self.energy_coeff));
        }
        if !(0.0..=1.0).contains(&self.queue_memory) {
            return Err(Error::invalid("queue_memory", "[0,1]", self.queue_memory));
        }
        if !(self.sampling_ratio > 0.0 && self.sampling_ratio <= 1.0) {
            return Err(Error::invalid("sampling_ratio", "(0,1]", self.sampling_ratio));
        }
        if !(self.penalty_weight >= 0.0 && self.penalty_weight.is_finite()) {
            return Err(Error::invalid("penalty_weight", "[0, inf)", self.penalty_weight));
        }
        let [f_lo, f_hi] = self.cpu_freq_range_hz;
        if !(f_lo > 0.0 && f_hi >= f_lo && f_hi.is_finite()) {
            return Err(Error::invalid(
                "cpu_freq_range_hz",
                "0 < lo <= hi",
                format!("[{f_lo}, {f_hi}]"),
            ));
        }
        for (name, v) in [
            ("n_clients", self.n_clients),
            ("n_rbs", self.n_rbs),
            ("batch_size", self.batch_size),
            ("samples_per_client", self.samples_per_client),
            ("bcd_max_outer", self.bcd_max_outer),
            ("power_max_iters", self.power_max_iters),
        ] {
            if v == 0 {
                return Err(Error::invalid(name, "[1, inf)", v));
            }
        }
        let m = self.n_layers();
        if m < 2 || self.model_widths.iter().any(|&w| w == 0) {
            return Err(Error::invalid(
                "model_widths",
                "at least three positive widths",
                format!("{:?}", self.model_widths),
            ));
        }
        if let Some(p) = &self.layer_profile {
            let lens = [p.size_bits.len(), p.output_bits.len(), p.flops_fp.len(), p.flops_bp.len()];
            if lens.iter().any(|&l| l != m) {
                return Err(Error::invalid("layer_profile", "arrays of length M", format!("{lens:?}")));
            }
            let all = p.size_bits.iter().chain(&p.output_bits).chain(&p.flops_fp).chain(&p.flops_bp);
            if all.clone().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::invalid("layer_profile", "non-negative finite values", "negative entry"));
            }
        }
        let mask = self.allowed_cut_mask();
        if !mask.iter().any(|&b| b) {
            return Err(Error::invalid("allowed_cuts", "a non-empty subset of 1..=M", "empty"));
        }
        if !(1..=m).contains(&self.initial_cut) {
            return Err(Error::invalid("initial_cut", "[1, M]", self.initial_cut));
        }
        Ok(())
    }

    /// Parses a JSON configuration document; an empty document means defaults.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value = if text.trim().is_empty() {
            Value::Object(Default::default())
        } else {
            serde_json::from_str::<Value>(text).map_err(|e| Error::ConfigParse(e.to_string()))?
        };
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_value(value).map_err(|e| {
            let msg = e.to_string();
            match msg.strip_prefix("unknown field `").and_then(|r| r.split('`').next()) {
                Some(key) => Error::UnknownKey(key.to_string()),
                None => Error::ConfigParse(msg),
            }
        })?;
        cfg.finalize()
    }

    /// The configuration as a JSON value, suitable for a run manifest.
    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Returns a copy with `key=value` overrides applied. Values are parsed
    /// as JSON when possible and taken as strings otherwise.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut value = self.to_value();
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("--set expects key=value, got `{item}`")))?;
            let parsed = serde_json::from_str::<Value>(raw.trim())
                .unwrap_or_else(|_| Value::String(raw.trim().to_string()));
            set_path(&mut value, key.trim(), parsed)?;
        }
        Self::from_value(value)
    }
}

fn set_path(root: &mut Value, key: &str, new: Value) -> Result<()> {
    let mut cursor = root;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        let obj = cursor
            .as_object_mut()
            .ok_or_else(|| Error::UnknownKey(key.to_string()))?;
        if parts.peek().is_none() {
            if !obj.contains_key(part) {
                return Err(Error::UnknownKey(key.to_string()));
            }
            obj.insert(part.to_string(), new);
            return Ok(());
        }
        cursor = obj
            .get_mut(part)
            .ok_or_else(|| Error::UnknownKey(key.to_string()))?;
    }
    Err(Error::UnknownKey(key.to_string()))
}

/// Reads and validates a configuration file.
///
/// The special path `default` yields the built-in defaults.
pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    if path.as_os_str() == "default" {
        return ScenarioConfig::default().finalize();
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ScenarioConfig::from_json_str(&text)
}
