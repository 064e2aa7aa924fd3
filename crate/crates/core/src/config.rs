//! Run configuration and the flat `key = value` file format.
//!
//! ```text
//! # comment
//! delta = 12
//! absorbing = true
//! beta = 0.25
//! ```
//!
//! Files whose first non-blank character is `{` are read as JSON instead, so a
//! `run.json` written by the CLI can be fed back as a config.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::crf::CrfParams;
use crate::loss::{DiceConfig, LossWeights};
use crate::retrieval::{DropoutConfig, Hops};
use crate::tpm::SinkhornConfig;
use crate::{Error, Result};

/// Every tunable of the pipeline, with the published defaults where one exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed offset from an extreme point, in resized-crop pixels.
    pub delta: u32,
    pub target_side: u32,
    /// Patches per crop side.
    pub patch_side: u32,
    /// Crop margin as a fraction of the box extent.
    pub crop_pad: f64,
    pub alpha: u32,
    pub absorbing: bool,
    pub beta: f64,
    pub tau_fg: f64,
    pub tau_bg: f64,
    pub dropout_rate: f64,
    pub keep_floor: usize,
    pub epoch: u64,
    pub lambda_point: f64,
    pub lambda_crf: f64,
    pub lambda_mil: f64,
    pub dice_eps: f64,
    pub sinkhorn_tolerance: f64,
    pub sinkhorn_max_iterations: usize,
    pub crf_iterations: usize,
    pub crf_w_spatial: f64,
    pub crf_w_bilateral: f64,
    pub crf_theta_gamma: f64,
    pub crf_theta_alpha: f64,
    pub crf_theta_beta: f64,
    pub crf_compat: f64,
    /// Threshold the CRF refinement instead of the densified labels.
    pub refine_pseudo_masks: bool,
    /// Softmax temperature of synthetic similarities.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let crf = CrfParams::default();
        let weights = LossWeights::default();
        let sinkhorn = SinkhornConfig::default();
        RunConfig {
            delta: 12,
            target_side: 512,
            patch_side: 32,
            crop_pad: 0.2,
            alpha: 3,
            absorbing: false,
            beta: 0.25,
            tau_fg: 1e-3,
            tau_bg: -1e-4,
            dropout_rate: DropoutConfig::default().rate,
            keep_floor: DropoutConfig::default().keep_floor,
            epoch: 0,
            lambda_point: weights.point,
            lambda_crf: weights.crf,
            lambda_mil: weights.mil,
            dice_eps: DiceConfig::default().eps,
            sinkhorn_tolerance: sinkhorn.tolerance,
            // sharp softmax similarities need a few hundred sweeps
            sinkhorn_max_iterations: 1000,
            crf_iterations: crf.iterations,
            crf_w_spatial: crf.w_spatial,
            crf_w_bilateral: crf.w_bilateral,
            crf_theta_gamma: crf.theta_gamma,
            crf_theta_alpha: crf.theta_alpha,
            crf_theta_beta: crf.theta_beta,
            crf_compat: crf.compat,
            refine_pseudo_masks: false,
            temperature: 0.2,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn hops(&self) -> Hops {
        if self.absorbing {
            Hops::Absorbing { beta: self.beta }
        } else {
            Hops::Power { alpha: self.alpha }
        }
    }

    pub fn sinkhorn(&self) -> SinkhornConfig {
        SinkhornConfig {
            tolerance: self.sinkhorn_tolerance,
            max_iterations: self.sinkhorn_max_iterations,
        }
    }

    pub fn crf(&self) -> CrfParams {
        CrfParams {
            iterations: self.crf_iterations,
            w_spatial: self.crf_w_spatial,
            w_bilateral: self.crf_w_bilateral,
            theta_gamma: self.crf_theta_gamma,
            theta_alpha: self.crf_theta_alpha,
            theta_beta: self.crf_theta_beta,
            compat: self.crf_compat,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            point: self.lambda_point,
            crf: self.lambda_crf,
            mil: self.lambda_mil,
        }
    }

    pub fn dice(&self) -> DiceConfig {
        DiceConfig { eps: self.dice_eps }
    }

    pub fn dropout(&self) -> DropoutConfig {
        DropoutConfig {
            rate: self.dropout_rate,
            seed: self.seed,
            keep_floor: self.keep_floor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_side == 0 || !self.target_side.is_multiple_of(self.patch_side) {
            return Err(Error::InvalidParameter(format!(
                "target_side {} not divisible by patch_side {}",
                self.target_side, self.patch_side
            )));
        }
        if !(self.crop_pad >= 0.0 && self.crop_pad.is_finite()) {
            return Err(Error::InvalidParameter(format!("crop_pad {}", self.crop_pad)));
        }
        if self.absorbing {
            if !(0.0..1.0).contains(&self.beta) {
                return Err(Error::InvalidParameter(format!("beta {} outside [0, 1)", self.beta)));
            }
        } else if self.alpha == 0 {
            return Err(Error::InvalidParameter("alpha must be at least 1".into()));
        }
        if !(self.tau_bg < self.tau_fg) {
            return Err(Error::InvalidThresholds {
                tau_fg: self.tau_fg,
                tau_bg: self.tau_bg,
            });
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidParameter(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidParameter(format!("temperature {}", self.temperature)));
        }
        self.weights().validate()?;
        self.dice().validate()?;
        self.sinkhorn().validate()?;
        self.crf().validate()
    }

    /// Parses `key = value` text or JSON and validates the result. A JSON
    /// document with a `config` member (a `run.json`) yields that member.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = match serde_json::from_str::<Value>(text) {
            Ok(Value::Object(mut doc)) if doc.contains_key("config") => {
                serde_json::from_value(doc.remove("config").unwrap_or_default()).map_err(|e| {
                    Error::Parse {
                        line: 0,
                        message: format!("config member: {e}"),
                    }
                })?
            }
            _ => parse_settings(text)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Deserializes a settings struct from `key = value` lines or a JSON object,
/// starting from its defaults.
pub fn parse_settings<T>(text: &str) -> Result<T>
where
    T: Serialize + DeserializeOwned + Default,
{
    if text.trim_start().starts_with('{') {
        return serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        });
    }
    let mut fields: Map<String, Value> = match serde_json::to_value(T::default()) {
        Ok(Value::Object(map)) => map,
        _ => Map::new(),
    };
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
            line,
            message: format!("expected `key = value`, found {content:?}"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty key".into(),
            });
        }
        let value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.into()));
        fields.insert(key.to_string(), value);
        // deserialize after each line so a bad key or value reports its own line
        serde_json::from_value::<T>(Value::Object(fields.clone())).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
    }
    serde_json::from_value(Value::Object(fields)).map_err(|e| Error::Parse {
        line: 0,
        message: e.to_string(),
    })
}

/// `key = value` lines for every field of `value`, in declaration order.
pub fn settings_text<T: Serialize>(value: &T) -> String {
    let mut out = String::new();
    if let Ok(Value::Object(map)) = serde_json::to_value(value) {
        for (k, v) in map {
            out.push_str(&format!("{k} = {v}\n"));
        }
    }
    out
}
