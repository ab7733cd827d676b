use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Result, TomoError};
use crate::estimators::Estimator;
use crate::simulation::{BiasNorm, FidelityMeasure};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    /// MSE vs probe count, one panel per event budget.
    Fig1,
    /// Bias of the effective DPT design matrix vs probe count.
    Fig2,
    /// MSE vs inverse condition number of the measurement.
    Fig3,
    /// An `(N, M)` sweep with arbitrary parameters.
    Custom,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Fig1 => "fig1",
            ExperimentKind::Fig2 => "fig2",
            ExperimentKind::Fig3 => "fig3",
            ExperimentKind::Custom => "custom",
        }
    }
}

/// Full description of one experiment run. Serialized verbatim into
/// `meta.json`, and any `meta.json` is accepted back as a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Hilbert-space dimension.
    pub d: usize,
    /// Number of measurement outcomes.
    pub m: usize,
    #[serde(rename = "M_grid")]
    pub probe_grid: Vec<usize>,
    #[serde(rename = "N_grid")]
    pub event_grid: Vec<u64>,
    /// Trials per sweep point (accepted measurements per bin for fig3).
    pub trials: usize,
    pub admixture_signal: f64,
    pub admixture_probes: f64,
    pub estimator: Estimator,
    pub master_seed: u64,
    /// Target inverse condition numbers for fig3; empty selects them from a
    /// pre-pass of unconditioned draws.
    pub inv_cond_grid: Vec<f64>,
    pub inv_cond_bins: usize,
    pub prepass_draws: usize,
    pub window: f64,
    pub max_attempts: usize,
    /// Events per probe pattern; `null` uses the signal budget `N`.
    pub pattern_events: Option<u64>,
    pub fidelity: FidelityMeasure,
    pub bias_norm: BiasNorm,
    pub bootstrap_resamples: usize,
}

pub const DESK_TRIALS: usize = 300;
pub const FULL_SCALE_TRIALS: usize = 1000;
pub const DEFAULT_SEED: u64 = 20_200_917;

/// Keys that `meta.json` adds on top of the config.
pub const META_ONLY_KEYS: &[&str] = &["version", "timestamp", "elapsed_seconds", "diagnostics"];

impl ExperimentConfig {
    pub fn fig1() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::Fig1,
            d: 6,
            m: 40,
            probe_grid: vec![50, 100, 200, 400, 800, 1200],
            event_grid: vec![500, 1000, 2000, 5000],
            trials: DESK_TRIALS,
            admixture_signal: 0.1,
            admixture_probes: 0.0,
            estimator: Estimator::Ols,
            master_seed: DEFAULT_SEED,
            inv_cond_grid: Vec::new(),
            inv_cond_bins: 6,
            prepass_draws: 2000,
            window: 0.001,
            max_attempts: 200_000,
            pattern_events: None,
            fidelity: FidelityMeasure::Root,
            bias_norm: BiasNorm::Frobenius,
            bootstrap_resamples: 200,
        }
    }

    pub fn fig2() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::Fig2,
            event_grid: vec![500, 1000, 3000],
            ..Self::fig1()
        }
    }

    pub fn fig3() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::Fig3,
            probe_grid: vec![1200],
            event_grid: vec![1000],
            ..Self::fig1()
        }
    }

    pub fn custom() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::Custom,
            ..Self::fig1()
        }
    }

    pub fn defaults_for(kind: ExperimentKind) -> Self {
        match kind {
            ExperimentKind::Fig1 => Self::fig1(),
            ExperimentKind::Fig2 => Self::fig2(),
            ExperimentKind::Fig3 => Self::fig3(),
            ExperimentKind::Custom => Self::custom(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(TomoError::Config(msg));
        if self.d < 2 {
            return fail(format!("d must be >= 2, got {}", self.d));
        }
        if self.m < self.d * self.d - 1 {
            return fail(format!(
                "m = {} outcomes cannot be informationally complete for d = {} (need >= {})",
                self.m,
                self.d,
                self.d * self.d - 1
            ));
        }
        if self.trials < 2 {
            return fail("trials must be >= 2".into());
        }
        if self.probe_grid.is_empty() || self.probe_grid.contains(&0) {
            return fail("M_grid must be non-empty with positive entries".into());
        }
        if self.event_grid.is_empty() || self.event_grid.contains(&0) {
            return fail("N_grid must be non-empty with positive entries".into());
        }
        for (name, x) in [("admixture_signal", self.admixture_signal), ("admixture_probes", self.admixture_probes)] {
            if !(0.0..=1.0).contains(&x) {
                return fail(format!("{name} must lie in [0, 1], got {x}"));
            }
        }
        if !(self.window > 0.0) {
            return fail("window must be positive".into());
        }
        if self.inv_cond_grid.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
            return fail("inv_cond_grid entries must lie in (0, 1)".into());
        }
        if self.kind == ExperimentKind::Fig3 && self.inv_cond_grid.is_empty() && (self.inv_cond_bins == 0 || self.prepass_draws < 2) {
            return fail("fig3 needs inv_cond_grid or inv_cond_bins > 0 with a pre-pass".into());
        }
        if self.pattern_events == Some(0) {
            return fail("pattern_events must be positive".into());
        }
        Ok(())
    }

    /// Overrides one key, with the same names and JSON types as `meta.json`.
    /// Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: Value) -> Result<()> {
        let mut map = match serde_json::to_value(&*self) {
            Ok(Value::Object(map)) => map,
            _ => unreachable!("config serializes to an object"),
        };
        if !map.contains_key(key) {
            return Err(TomoError::Config(format!("unknown config key `{key}`")));
        }
        map.insert(key.to_owned(), value);
        *self = serde_json::from_value(Value::Object(map))
            .map_err(|e| TomoError::Config(format!("bad value for `{key}`: {e}")))?;
        Ok(())
    }

    /// Parses a `key=value` override. The value is read as JSON when
    /// possible, then as a comma-separated list, then as a bare string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| TomoError::Config(format!("override `{assignment}` is not key=value")))?;
        let key = key.trim();
        let raw = raw.trim();
        let candidates = [
            serde_json::from_str::<Value>(raw).ok(),
            serde_json::from_str::<Value>(&format!("[{raw}]")).ok(),
            Some(Value::String(raw.to_owned())),
        ];
        let mut last_err = None;
        for value in candidates.into_iter().flatten() {
            let mut trial = self.clone();
            match trial.set(key, value) {
                Ok(()) => {
                    *self = trial;
                    return Ok(());
                }
                Err(e @ TomoError::Config(_)) if e.to_string().contains("unknown config key") => return Err(e),
                Err(e) => last_err = Some(e),
            }
        }
        Err(last_err.expect("at least one candidate"))
    }

    /// Applies every key of a JSON object (a config file or an earlier
    /// `meta.json`), on top of the defaults for its `kind`.
    pub fn from_json_object(object: &Map<String, Value>) -> Result<Self> {
        let kind = match object.get("kind") {
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| TomoError::Config(format!("bad value for `kind`: {e}")))?,
            None => ExperimentKind::Custom,
        };
        let mut config = Self::defaults_for(kind);
        for (key, value) in object {
            if META_ONLY_KEYS.contains(&key.as_str()) {
                continue;
            }
            config.set(key, value.clone())?;
        }
        Ok(config)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        match serde_json::from_str::<Value>(text) {
            Ok(Value::Object(map)) => Self::from_json_object(&map),
            Ok(_) => Err(TomoError::Config("config must be a JSON object".into())),
            Err(e) => Err(TomoError::Config(format!("config is not valid JSON: {e}"))),
        }
    }

    /// Events per probe pattern at signal budget `n`.
    pub fn pattern_events_for(&self, n: u64) -> u64 {
        self.pattern_events.unwrap_or(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        for kind in [ExperimentKind::Fig1, ExperimentKind::Fig2, ExperimentKind::Fig3, ExperimentKind::Custom] {
            ExperimentConfig::defaults_for(kind).validate().unwrap();
        }
        assert_eq!(ExperimentConfig::fig2().event_grid, vec![500, 1000, 3000]);
    }

    #[test]
    fn overrides_parse_scalars_lists_and_enums() {
        let mut c = ExperimentConfig::fig1();
        c.apply_override("trials=12").unwrap();
        c.apply_override("M_grid=40,80").unwrap();
        c.apply_override("N_grid=[100]").unwrap();
        c.apply_override("estimator=gls").unwrap();
        c.apply_override("pattern_events=5000").unwrap();
        assert_eq!(c.trials, 12);
        assert_eq!(c.probe_grid, vec![40, 80]);
        assert_eq!(c.event_grid, vec![100]);
        assert_eq!(c.estimator, Estimator::Gls);
        assert_eq!(c.pattern_events, Some(5000));
    }

    #[test]
    fn unknown_and_malformed_overrides_fail() {
        let mut c = ExperimentConfig::fig1();
        assert!(c.apply_override("bogus=1").unwrap_err().to_string().contains("unknown config key"));
        assert!(c.apply_override("trials=many").is_err());
        assert!(c.apply_override("trials").is_err());
        assert_eq!(c, ExperimentConfig::fig1());
    }

    #[test]
    fn meta_keys_are_ignored_when_loading() {
        let mut value = serde_json::to_value(ExperimentConfig::fig3()).unwrap();
        let obj = value.as_object_mut().unwrap();
        obj.insert("version".into(), Value::from("v0"));
        obj.insert("elapsed_seconds".into(), Value::from(1.5));
        obj.insert("trials".into(), Value::from(7));
        let c = ExperimentConfig::from_json_object(obj).unwrap();
        assert_eq!(c.kind, ExperimentKind::Fig3);
        assert_eq!(c.trials, 7);
        assert!(ExperimentConfig::from_json_str("{\"nope\": 1}").is_err());
        assert!(ExperimentConfig::from_json_str("[1]").is_err());
    }
}
