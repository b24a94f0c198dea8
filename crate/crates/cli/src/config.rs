//! Experiment configuration: built-in defaults, overridden by a JSON config
//! file, overridden by command-line flags.

use std::path::{Path, PathBuf};

use scse::model::{Boundary, CouplingSpec, ShapeFunction, ShapeKind};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Every parameter any command reads. A bare coupling-spec document
/// (`L`, `w`, `w_s`, `alpha_b`, `alpha_s`, `shape`, `J`, `boundary`) is a valid
/// config on its own.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_s: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_s: Option<f64>,
    #[serde(rename = "L", skip_serializing_if = "Option::is_none")]
    pub blocks: Option<usize>,
    #[serde(rename = "J", skip_serializing_if = "Option::is_none")]
    pub strength: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shape: Option<ShapeFunction>,
    /// Tilts; commands other than `speed-curve` use the first one.
    #[serde(rename = "A", skip_serializing_if = "Option::is_none")]
    pub tilts: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary: Option<Boundary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_list: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ws_range: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_b_range: Option<String>,
    #[serde(rename = "N", skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rng_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub damping: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_front: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profiles: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub persist: Option<PathBuf>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($f:ident),* $(,)?) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))
    }

    /// Fields set in `top` replace those in `self`.
    pub fn overlay(mut self, top: &ExperimentConfig) -> Self {
        let s = &mut self;
        overlay!(s, top; rho, delta, w, w_s, alpha_b, alpha_s, blocks, strength, shape, tilts, boundary, tol,
            kind, rho_grid, w_list, ws_range, alpha_b_range, n, rng_seed, seeds, iterations, damping,
            max_iter, eps_front, out, profiles, persist);
        self
    }

    fn tilt(&self) -> Option<f64> {
        self.tilts.as_ref().and_then(|t| t.first().copied())
    }

    /// Shape from `shape`, with a top-level `A` taking precedence over `shape.A`.
    pub fn resolved_shape(&self) -> ShapeFunction {
        match (self.shape, self.tilt()) {
            (Some(s), None) => s,
            (Some(s), Some(a)) if s.kind == ShapeKind::Flat && a == 0.0 => s,
            (_, Some(a)) => ShapeFunction::with_tilt(a),
            (None, None) => ShapeFunction::flat(),
        }
    }

    pub fn spec(&self) -> Result<CouplingSpec, CliError> {
        let need = |name: &str| CliError::Config(format!("missing parameter {name}"));
        let spec = CouplingSpec::new(
            self.blocks.ok_or_else(|| need("L"))?,
            self.w.ok_or_else(|| need("w"))?,
            self.w_s.ok_or_else(|| need("w_s"))?,
            self.alpha_b.ok_or_else(|| need("alpha_b"))?,
            self.alpha_s.ok_or_else(|| need("alpha_s"))?,
        )
        .with_shape(self.resolved_shape())
        .with_strength(self.strength.unwrap_or(1.0))
        .with_boundary(self.boundary.unwrap_or_default());
        spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(spec)
    }

    pub fn get<T: Copy>(&self, v: Option<T>, name: &str) -> Result<T, CliError> {
        v.ok_or_else(|| CliError::Config(format!("missing parameter {name}")))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }
}

/// `a:b:step`, inclusive of `b` up to rounding.
pub fn parse_float_range(s: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Config(format!("expected a:b:step, got {s:?}"));
    let parts: Vec<f64> = s.split(':').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
    let [a, b, step] = parts[..] else { return Err(bad()) };
    if !(step > 0.0) || b < a {
        return Err(bad());
    }
    let n = ((b - a) / step + 1e-9).floor() as usize;
    // snap to the step's decimal grid so values print cleanly
    let scale = 1e12;
    Ok((0..=n).map(|k| ((a + k as f64 * step) * scale).round() / scale).collect())
}

/// `a:b` or `a:b:step` over integers, inclusive.
pub fn parse_int_range(s: &str) -> Result<Vec<usize>, CliError> {
    let bad = || CliError::Config(format!("expected a:b or a:b:step, got {s:?}"));
    let parts: Vec<usize> = s.split(':').map(|p| p.trim().parse::<usize>()).collect::<Result<_, _>>().map_err(|_| bad())?;
    let (a, b, step) = match parts[..] {
        [a, b] => (a, b, 1),
        [a, b, st] => (a, b, st),
        _ => return Err(bad()),
    };
    if step == 0 || b < a {
        return Err(bad());
    }
    Ok((a..=b).step_by(step).collect())
}
