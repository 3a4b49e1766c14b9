//! Run configuration and its flat `section.key = value` text form.
//!
//! ```text
//! # comments start with '#'
//! params.s = 10
//! params.R = 12
//! integrator.rel_tol = 1e-10
//! shoot.word = "1311"
//! enclose.center = [1.0, 2.0, 3.0]
//! ```
//!
//! Values are numbers, `true`/`false`, `none`, bracketed lists of numbers,
//! or strings (quoted or bare).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{Map, Number, Value};

use crate::conditions::{ConditionAConfig, ConditionBConfig};
use crate::dynamics::Params;
use crate::error::ConfigError;
use crate::integrator::IntegratorConfig;
use crate::manifold::{ClassifyConfig, SeedConfig};
use crate::sequence::ShootConfig;
use crate::trace::BranchCriteria;
use crate::validated::CertifyConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Report file, or directory for commands writing several files.
    /// Reports go to stdout when absent.
    pub path: Option<String>,
    pub format: OutputFormat,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartKind {
    /// The seed on the positive branch of the unstable manifold.
    #[default]
    GammaPlus,
    P0,
    /// `integrate.point`.
    Point,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrateSettings {
    pub start: StartKind,
    pub point: [f64; 3],
    pub backward: bool,
    /// Dense-output samples written per accepted step.
    pub samples_per_step: usize,
}

impl Default for IntegrateSettings {
    fn default() -> Self {
        IntegrateSettings { start: StartKind::GammaPlus, point: [1.0, 1.0, 1.0], backward: false, samples_per_step: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RStarSettings {
    pub lo: f64,
    pub hi: f64,
    pub width_tol: f64,
    /// Classification horizon past departure; automatic when absent.
    pub horizon: Option<f64>,
    pub horizon_doublings: u32,
    pub pos_tol: f64,
    pub departure_radius: f64,
    /// Also report closest approaches for these nested bracket widths.
    pub diagnostic_widths: Vec<f64>,
}

impl Default for RStarSettings {
    fn default() -> Self {
        let criteria = BranchCriteria::default();
        RStarSettings {
            lo: 1.01,
            hi: 1000.0,
            width_tol: 1e-5,
            horizon: None,
            horizon_doublings: 3,
            pos_tol: criteria.pos_tol,
            departure_radius: criteria.departure_radius,
            diagnostic_widths: vec![1e-2, 1e-4, 1e-6],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    pub r_min: f64,
    pub r_max: f64,
    pub r_step: f64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings { r_min: 5.0, r_max: 20.0, r_step: 0.1 }
    }
}

impl SweepSettings {
    pub fn grid(&self) -> Result<Vec<f64>, ConfigError> {
        if !(self.r_step > 0.0 && self.r_max > self.r_min) {
            return Err(ConfigError::Invalid(format!("sweep range {}..{} step {}", self.r_min, self.r_max, self.r_step)));
        }
        let n = ((self.r_max - self.r_min) / self.r_step + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| self.r_min + i as f64 * self.r_step).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionBSettings {
    pub n_samples: usize,
    pub back_horizon: f64,
    pub delta: f64,
    pub l_tol: f64,
    pub window_forward: f64,
    pub ellipsoid_override: bool,
    pub p1_horizon: f64,
    /// Try interval certification on this many sub-intervals.
    pub certify_count: usize,
    pub certify_width: f64,
    pub certify_back_span: f64,
    pub certify_step: f64,
}

impl Default for ConditionBSettings {
    fn default() -> Self {
        let b = ConditionBConfig::default();
        let c = CertifyConfig::default();
        ConditionBSettings {
            n_samples: 256,
            back_horizon: b.back_horizon,
            delta: b.delta,
            l_tol: b.l_tol,
            window_forward: b.window_forward,
            ellipsoid_override: b.ellipsoid_override,
            p1_horizon: b.p1_horizon,
            certify_count: 4,
            certify_width: 1e-10,
            certify_back_span: c.back_span,
            certify_step: c.step,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShootSettings {
    #[serde(deserialize_with = "string_or_number")]
    pub word: String,
    pub jump_tol: f64,
    pub resolution: f64,
    pub grid: usize,
    pub max_samples_per_step: usize,
    pub horizon_base: f64,
    pub horizon_per_letter: f64,
    pub max_len: usize,
    pub p1_horizon: f64,
    pub endpoint_near_p0: f64,
    pub endpoint_near_p1: f64,
    pub endpoint_horizon: f64,
    /// Dump the witness trajectory next to the report.
    pub witness_csv: Option<String>,
}

impl Default for ShootSettings {
    fn default() -> Self {
        let c = ShootConfig::default();
        ShootSettings {
            word: "13".into(),
            jump_tol: c.jump_tol,
            resolution: c.resolution,
            grid: c.grid,
            max_samples_per_step: c.max_samples_per_step,
            horizon_base: c.horizon_base,
            horizon_per_letter: c.horizon_per_letter,
            max_len: c.max_len,
            p1_horizon: c.p1_horizon,
            endpoint_near_p0: 0.999,
            endpoint_near_p1: 0.01,
            endpoint_horizon: 30.0,
            witness_csv: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncloseStart {
    /// The manifold seed, a point on the positive branch near the origin.
    #[default]
    GammaPlus,
    P0,
    /// `enclose.center`.
    Point,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncloseSettings {
    pub start: EncloseStart,
    pub center: [f64; 3],
    /// Width of the start box in each coordinate.
    pub width: f64,
    pub t_span: f64,
    pub step: f64,
}

impl Default for EncloseSettings {
    fn default() -> Self {
        EncloseSettings { start: EncloseStart::GammaPlus, center: [1.0, 1.0, 1.0], width: 1e-12, t_span: 2.0, step: 1e-4 }
    }
}

/// Everything a CLI run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub params: Params,
    pub integrator: IntegratorConfig,
    pub seed: SeedConfig,
    /// Horizon override for commands that take one.
    pub horizon: Option<f64>,
    pub output: OutputConfig,
    /// Seed for randomized checks.
    pub random_seed: u64,
    pub integrate: IntegrateSettings,
    pub rstar: RStarSettings,
    pub cond_a: ConditionAConfigSettings,
    pub sweep: SweepSettings,
    pub cond_b: ConditionBSettings,
    pub shoot: ShootSettings,
    pub enclose: EncloseSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionAConfigSettings {
    pub horizon: f64,
}

impl Default for ConditionAConfigSettings {
    fn default() -> Self {
        ConditionAConfigSettings { horizon: ConditionAConfig::default().horizon }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            params: Params { s: 10.0, q: 1.0, r: 12.0 },
            integrator: IntegratorConfig::default(),
            seed: SeedConfig::default(),
            horizon: None,
            output: OutputConfig::default(),
            random_seed: 0,
            integrate: IntegrateSettings::default(),
            rstar: RStarSettings::default(),
            cond_a: ConditionAConfigSettings::default(),
            sweep: SweepSettings::default(),
            cond_b: ConditionBSettings::default(),
            shoot: ShootSettings::default(),
            enclose: EncloseSettings::default(),
        }
    }
}

fn string_or_number<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    match Value::deserialize(d)? {
        Value::String(s) => Ok(s),
        Value::Number(n) => Ok(n.to_string()),
        other => Err(serde::de::Error::custom(format!("expected a string, got {other}"))),
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.params.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.integrator.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.seed.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let Some(h) = self.horizon {
            if !(h > 0.0 && h.is_finite()) {
                return Err(ConfigError::Invalid(format!("horizon must be positive, got {h}")));
            }
        }
        Ok(())
    }

    pub fn classify_config(&self) -> ClassifyConfig {
        ClassifyConfig {
            seed: self.seed,
            integrator: self.integrator,
            criteria: BranchCriteria { pos_tol: self.rstar.pos_tol, departure_radius: self.rstar.departure_radius },
            horizon: self.rstar.horizon.or(self.horizon),
            horizon_doublings: self.rstar.horizon_doublings,
        }
    }

    pub fn condition_a_config(&self) -> ConditionAConfig {
        ConditionAConfig { seed: self.seed, integrator: self.integrator, horizon: self.horizon.unwrap_or(self.cond_a.horizon) }
    }

    pub fn condition_b_config(&self) -> ConditionBConfig {
        let b = &self.cond_b;
        ConditionBConfig {
            n_samples: b.n_samples,
            back_horizon: self.horizon.unwrap_or(b.back_horizon),
            delta: b.delta,
            l_tol: b.l_tol,
            pos_tol: BranchCriteria::default().pos_tol,
            window_forward: b.window_forward,
            ellipsoid_override: b.ellipsoid_override,
            integrator: self.integrator,
            seed: self.seed,
            p1_horizon: b.p1_horizon,
        }
    }

    pub fn certify_config(&self) -> CertifyConfig {
        CertifyConfig {
            back_span: self.cond_b.certify_back_span,
            step: self.cond_b.certify_step,
            l_tol: self.cond_b.l_tol,
            ..CertifyConfig::default()
        }
    }

    pub fn shoot_config(&self) -> ShootConfig {
        let s = &self.shoot;
        ShootConfig {
            integrator: self.integrator,
            condition_a: self.condition_a_config(),
            p1_horizon: s.p1_horizon,
            jump_tol: s.jump_tol,
            resolution: s.resolution,
            grid: s.grid,
            max_samples_per_step: s.max_samples_per_step,
            horizon_base: s.horizon_base,
            horizon_per_letter: s.horizon_per_letter,
            max_len: s.max_len,
        }
    }

    /// Parses the flat text form. Keys absent from the text keep their
    /// defaults.
    pub fn from_flat(text: &str) -> Result<Self, ConfigError> {
        let pairs = parse_flat(text)?;
        let mut cfg = RunConfig::default();
        cfg.apply(&pairs)?;
        Ok(cfg)
    }

    /// Sets dotted keys on top of the current values.
    pub fn apply(&mut self, pairs: &[(String, Value)]) -> Result<(), ConfigError> {
        let known = flat_keys(self);
        let mut tree = serde_json::to_value(&*self).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for (key, value) in pairs {
            if !known.contains(key.as_str()) {
                return Err(ConfigError::UnknownKey(key.clone()));
            }
            let mut node = &mut tree;
            for part in key.split('.') {
                node = node
                    .as_object_mut()
                    .ok_or_else(|| ConfigError::UnknownKey(key.clone()))?
                    .entry(part.to_string())
                    .or_insert(Value::Null);
            }
            *node = value.clone();
        }
        *self = serde_json::from_value(tree).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Sets one dotted key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = parse_value(value).map_err(|message| ConfigError::Syntax { line: 0, message })?;
        self.apply(&[(key.to_string(), v)])
    }

    /// The flat text form, one key per line in sorted order.
    pub fn to_flat(&self) -> String {
        let tree = serde_json::to_value(self).expect("config serializes");
        let mut out = BTreeMap::new();
        flatten("", &tree, &mut out);
        out.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, String>) {
    match v {
        Value::Object(m) => {
            for (k, child) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        _ => {
            out.insert(prefix.to_string(), render(v));
        }
    }
}

fn render(v: &Value) -> String {
    match v {
        Value::Null => "none".into(),
        Value::Array(items) => format!("[{}]", items.iter().map(render).collect::<Vec<_>>().join(", ")),
        other => other.to_string(),
    }
}

fn flat_keys(cfg: &RunConfig) -> BTreeSet<String> {
    let mut out = BTreeMap::new();
    flatten("", &serde_json::to_value(cfg).expect("config serializes"), &mut out);
    out.into_keys().collect()
}

/// Parses `key = value` lines into ordered pairs.
pub fn parse_flat(text: &str) -> Result<Vec<(String, Value)>, ConfigError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = strip_comment(raw).trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) =
            body.split_once('=').ok_or(ConfigError::Syntax { line, message: format!("expected key = value, got {body:?}") })?;
        let key = key.trim();
        let valid = !key.is_empty() && key.split('.').all(|p| !p.is_empty() && p.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'));
        if !valid {
            return Err(ConfigError::Syntax { line, message: format!("bad key {key:?}") });
        }
        if !seen.insert(key.to_string()) {
            return Err(ConfigError::Duplicate { line, key: key.to_string() });
        }
        let value = parse_value(value.trim()).map_err(|message| ConfigError::Syntax { line, message })?;
        out.push((key.to_string(), value));
    }
    Ok(out)
}

fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '#' if !quoted => return &line[..i],
            _ => {}
        }
    }
    line
}

fn parse_value(v: &str) -> Result<Value, String> {
    if v.is_empty() {
        return Err("missing value".into());
    }
    if let Some(inner) = v.strip_prefix('"') {
        let s = inner.strip_suffix('"').ok_or_else(|| format!("unterminated string {v:?}"))?;
        return serde_json::from_str(&format!("\"{s}\"")).map_err(|e| format!("bad string {v:?}: {e}"));
    }
    if let Some(inner) = v.strip_prefix('[') {
        let inner = inner.strip_suffix(']').ok_or_else(|| format!("unterminated list {v:?}"))?;
        if inner.trim().is_empty() {
            return Ok(Value::Array(Vec::new()));
        }
        return inner.split(',').map(|item| parse_value(item.trim())).collect::<Result<Vec<_>, _>>().map(Value::Array);
    }
    match v {
        "true" => return Ok(Value::Bool(true)),
        "false" => return Ok(Value::Bool(false)),
        "none" | "null" => return Ok(Value::Null),
        _ => {}
    }
    if let Ok(i) = v.parse::<u64>() {
        return Ok(Value::Number(i.into()));
    }
    if let Ok(i) = v.parse::<i64>() {
        return Ok(Value::Number(i.into()));
    }
    if let Ok(x) = v.parse::<f64>() {
        return Number::from_f64(x).map(Value::Number).ok_or_else(|| format!("non-finite number {v:?}"));
    }
    Ok(Value::String(v.to_string()))
}

/// Nested object form of flat pairs, for callers that want JSON.
pub fn pairs_to_json(pairs: &[(String, Value)]) -> Value {
    let mut root = Map::new();
    for (key, value) in pairs {
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for part in &parts[..parts.len() - 1] {
            node = node
                .entry(part.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("intermediate keys are objects");
        }
        node.insert(parts[parts.len() - 1].to_string(), value.clone());
    }
    Value::Object(root)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_flat(&cfg.to_flat()).unwrap(), cfg);
    }

    #[test]
    fn parses_sections_and_comments() {
        let text = "# header\nparams.R = 28 # trailing\nparams.q = 2.6666666666666665\nshoot.word = 1311\nenclose.center = [1, 2.5, -3]\nhorizon = none\noutput.format = csv\n";
        let cfg = RunConfig::from_flat(text).unwrap();
        assert_eq!(cfg.params.r, 28.0);
        assert_eq!(cfg.params.q, 8.0 / 3.0);
        assert_eq!(cfg.shoot.word, "1311");
        assert_eq!(cfg.enclose.center, [1.0, 2.5, -3.0]);
        assert_eq!(cfg.output.format, OutputFormat::Csv);
        assert_eq!(cfg.horizon, None);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(matches!(RunConfig::from_flat("params.R"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(RunConfig::from_flat("params.R = 2\nparams.R = 3"), Err(ConfigError::Duplicate { line: 2, .. })));
        assert!(matches!(RunConfig::from_flat("params.T = 2"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(RunConfig::from_flat("params.R = abc"), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::from_flat("shoot.word = \"13"), Err(ConfigError::Syntax { .. })));
    }

    #[test]
    fn set_overrides_one_key() {
        let mut cfg = RunConfig::default();
        cfg.set("integrator.rel_tol", "1e-11").unwrap();
        assert_eq!(cfg.integrator.rel_tol, 1e-11);
        assert!(cfg.set("integrator.nope", "1").is_err());
    }

    #[test]
    fn sweep_grid_is_inclusive() {
        let g = SweepSettings { r_min: 5.0, r_max: 6.0, r_step: 0.25 }.grid().unwrap();
        assert_eq!(g, vec![5.0, 5.25, 5.5, 5.75, 6.0]);
    }
}
