use std::path::{Path, PathBuf};

use btc_metrology::monitoring::{FiMethod, InitialState, Scheme};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Parameters shared by every subcommand. Each one reads the fields it
/// needs and ignores the rest. Rates and times are in units of `κ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n_spins: Vec<usize>,
    pub omega: f64,
    pub kappa: f64,
    pub eta: Vec<f64>,
    pub scheme: Scheme,
    pub dt: Option<f64>,
    pub horizon: f64,
    pub n_traj: usize,
    pub seed: u64,
    /// Regression window for monitoring rates; second half of the run
    /// when absent.
    pub window: Option<(f64, f64)>,
    pub initial: InitialState,
    pub method: FiMethod,
    /// Use the large-drive generator instead of the full model.
    pub extreme_limit: bool,
    /// Also write correlation-mode amplitudes (spectrum).
    pub amplitudes: bool,
    /// Also write per-trajectory checkpoints (monitoring).
    pub trajectories: bool,
    /// Tracked modes (scaling).
    pub modes: usize,
    /// Scaling series from the closed-form rate instead of spectra.
    pub analytic: bool,
    /// Not echoed into outputs, so that runs into different directories
    /// stay byte-identical.
    #[serde(skip_serializing)]
    pub out: PathBuf,
    pub format: Format,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_spins: vec![2],
            omega: 4.0,
            kappa: 1.0,
            eta: vec![1.0],
            scheme: Scheme::Homodyne,
            dt: None,
            horizon: 60.0,
            n_traj: 400,
            seed: 0,
            window: None,
            initial: InitialState::Steady,
            method: FiMethod::Compensator,
            extreme_limit: false,
            amplitudes: false,
            trajectories: false,
            modes: 3,
            analytic: false,
            out: PathBuf::from("btcm-out"),
            format: Format::Csv,
        }
    }
}

/// Command-line overrides; anything given here beats the config file.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// TOML file with `RunConfig` keys.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Spin numbers, comma separated.
    #[arg(long = "n", value_delimiter = ',')]
    pub n_spins: Option<Vec<usize>>,
    #[arg(long, allow_negative_numbers = true)]
    pub omega: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub kappa: Option<f64>,
    /// Detector efficiencies, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub eta: Option<Vec<f64>>,
    #[arg(long, value_parser = parse_scheme)]
    pub scheme: Option<Scheme>,
    #[arg(long, allow_negative_numbers = true)]
    pub dt: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub n_traj: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `start,end` of the rate window.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub window: Option<Vec<f64>>,
    #[arg(long, value_parser = parse_initial)]
    pub initial: Option<InitialState>,
    #[arg(long, value_parser = parse_method)]
    pub method: Option<FiMethod>,
    #[arg(long)]
    pub extreme_limit: bool,
    #[arg(long)]
    pub amplitudes: bool,
    #[arg(long)]
    pub trajectories: bool,
    #[arg(long)]
    pub modes: Option<usize>,
    #[arg(long)]
    pub analytic: bool,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

fn parse_kebab<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    parse_kebab(s)
}

fn parse_initial(s: &str) -> Result<InitialState, String> {
    parse_kebab(s)
}

fn parse_method(s: &str) -> Result<FiMethod, String> {
    parse_kebab(s)
}

impl Overrides {
    pub fn resolve(&self, defaults: RunConfig) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => load(path, &defaults)?,
            None => defaults,
        };
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field { cfg.$field = v.clone(); })*
            };
        }
        take!(n_spins, omega, kappa, eta, scheme, horizon, n_traj, seed, initial, method, modes, out, format);
        if self.dt.is_some() {
            cfg.dt = self.dt;
        }
        if let Some(w) = &self.window {
            cfg.window = Some((w[0], w[1]));
        }
        cfg.extreme_limit |= self.extreme_limit;
        cfg.amplitudes |= self.amplitudes;
        cfg.trajectories |= self.trajectories;
        cfg.analytic |= self.analytic;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Reads a config file; keys it leaves out keep their values in `base`.
pub fn load(path: &Path, base: &RunConfig) -> Result<RunConfig, CliError> {
    let err = |e: &dyn std::fmt::Display| CliError::Config(format!("{}: {e}", path.display()));
    let text = std::fs::read_to_string(path).map_err(|e| err(&e))?;
    let file: toml::Table = toml::from_str(&text).map_err(|e| err(&e))?;
    let mut merged = toml::Table::try_from(base).map_err(|e| err(&e))?;
    merged.insert("out".into(), toml::Value::String(base.out.display().to_string()));
    merged.extend(file);
    merged.try_into().map_err(|e| err(&e))
}

impl RunConfig {
    fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, why: &str| Err(CliError::Config(format!("invalid `{field}`: {why}")));
        if self.n_spins.is_empty() || self.n_spins.contains(&0) {
            return bad("n_spins", "needs at least one positive spin number");
        }
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return bad("kappa", "must be positive and finite");
        }
        if !(self.omega >= 0.0) || !self.omega.is_finite() {
            return bad("omega", "must be non-negative and finite");
        }
        if self.eta.is_empty() || self.eta.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
            return bad("eta", "every efficiency must lie in (0, 1]");
        }
        if let Some((a, b)) = self.window {
            if !(0.0 <= a && a < b) {
                return bad("window", "needs 0 <= start < end");
            }
        }
        if self.modes == 0 {
            return bad("modes", "must be positive");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig {
            n_spins: vec![1, 2, 8],
            eta: vec![0.25, 0.9],
            window: Some((10.0, 20.0)),
            dt: Some(1e-3),
            ..Default::default()
        };
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn flags_beat_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "n_spins = [3]\nomega = 2.0\nseed = 9\n").unwrap();
        let o = Overrides {
            config: Some(path),
            omega: Some(5.0),
            ..Default::default()
        };
        let cfg = o.resolve(RunConfig::default()).unwrap();
        assert_eq!(cfg.n_spins, vec![3]);
        assert_eq!(cfg.omega, 5.0);
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn rejects_bad_fields() {
        for (o, field) in [
            (Overrides { kappa: Some(0.0), ..Default::default() }, "kappa"),
            (Overrides { eta: Some(vec![1.5]), ..Default::default() }, "eta"),
            (Overrides { n_spins: Some(vec![0]), ..Default::default() }, "n_spins"),
        ] {
            let err = o.resolve(RunConfig::default()).unwrap_err().to_string();
            assert!(err.contains(field), "{err}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("omgea = 1.0").is_err());
    }
}
