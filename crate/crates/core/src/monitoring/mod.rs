//! Conditional dynamics under continuous photodetection or homodyne
//! detection, and the classical Fisher information carried by the record.
//!
//! Each trajectory propagates the unnormalized conditional state together
//! with its ω-derivative along one sampled record. The running score is the
//! trace of the derivative relative to the trace of the state.

mod filter;
mod fisher;
pub mod kernel;
mod persist;

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CMat;

pub use filter::{simulate_homodyne, simulate_photodetection, simulate_trajectory, waiting_times};
pub use fisher::{
    conditional_qfi_term, run_ensemble, signal_fisher, signal_fisher_rate, Ensemble, FiEstimate,
    FiMethod, MeanState, BOOTSTRAP_RESAMPLES,
};
pub use persist::{git_describe, write_checkpoint_csv, write_manifest, Manifest};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Photodetection,
    Homodyne,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Photodetection => "photodetection",
            Scheme::Homodyne => "homodyne",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialState {
    Dark,
    FullyExcited,
    MaximallyMixed,
    Steady,
    /// A pure eigenvector of the steady state, drawn per trajectory with its
    /// eigenvalue as probability.
    SteadySample,
}

impl InitialState {
    fn is_pure(self) -> bool {
        matches!(
            self,
            InitialState::Dark | InitialState::FullyExcited | InitialState::SteadySample
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnravellingConfig {
    pub scheme: Scheme,
    pub eta: f64,
    pub homodyne_phase: f64,
    /// Defaults to `min(1e-3, 0.05/max jump rate)` in units of `1/κ`.
    pub dt: Option<f64>,
    pub horizon: f64,
    pub seed: u64,
    pub n_traj: usize,
    pub omega: f64,
    pub kappa: f64,
    pub n_spins: usize,
    pub initial: InitialState,
    pub checkpoints_per_decade: usize,
    /// Times added to the geometric checkpoint grid.
    pub extra_times: Vec<f64>,
    /// Run the two shifted filters of the likelihood oracle at `ω ± δ`.
    pub finite_difference: Option<f64>,
    /// Evaluate the QFI of the conditional state at each checkpoint.
    pub conditional_qfi: bool,
    /// Keep states and their derivatives at checkpoints.
    pub keep_states: bool,
    /// Keep the full measurement record.
    pub keep_record: bool,
    /// Propagate density matrices even when a pure-state filter would do.
    pub force_density: bool,
}

impl Default for UnravellingConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Homodyne,
            eta: 1.0,
            homodyne_phase: FRAC_PI_2,
            dt: None,
            horizon: 40.0,
            seed: 0,
            n_traj: 1000,
            omega: 4.0,
            kappa: 1.0,
            n_spins: 1,
            initial: InitialState::Dark,
            checkpoints_per_decade: 20,
            extra_times: Vec::new(),
            finite_difference: None,
            conditional_qfi: false,
            keep_states: false,
            keep_record: false,
            force_density: false,
        }
    }
}

/// Largest jump rate `(2κ/N)‖J+J-‖`.
pub fn max_jump_rate(n_spins: usize, kappa: f64) -> f64 {
    let j = n_spins as f64 / 2.0;
    // J+J- = j(j+1) − m(m−1) peaks at m = 1/2 or 0.
    let peak = (0..=n_spins)
        .map(|k| {
            let m = j - k as f64;
            j * (j + 1.0) - m * (m - 1.0)
        })
        .fold(0.0, f64::max);
    2.0 * kappa / n_spins as f64 * peak
}

impl UnravellingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::param("eta", format!("must lie in (0, 1], got {}", self.eta)));
        }
        if self.n_spins == 0 {
            return Err(Error::InvalidSector("N must be >= 1".into()));
        }
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return Err(Error::param("kappa", format!("must be > 0, got {}", self.kappa)));
        }
        if !(self.omega >= 0.0) || !self.omega.is_finite() {
            return Err(Error::param("omega", format!("must be >= 0, got {}", self.omega)));
        }
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return Err(Error::param("horizon", format!("must be >= 0, got {}", self.horizon)));
        }
        if self.n_traj == 0 {
            return Err(Error::param("n_traj", "at least one trajectory is required"));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) || !dt.is_finite() {
                return Err(Error::param("dt", format!("must be > 0, got {dt}")));
            }
        }
        if self.checkpoints_per_decade == 0 {
            return Err(Error::param("checkpoints_per_decade", "must be >= 1"));
        }
        if let Some(delta) = self.finite_difference {
            if !(delta > 0.0) || delta > self.omega.max(self.kappa) {
                return Err(Error::param(
                    "finite_difference",
                    format!("step must be positive and small, got {delta}"),
                ));
            }
        }
        if self.extra_times.iter().any(|t| !(*t >= 0.0) || *t > self.horizon) {
            return Err(Error::param("extra_times", "must lie in [0, horizon]"));
        }
        let p = self.step() * max_jump_rate(self.n_spins, self.kappa);
        if p > 0.1 {
            log::warn!("jump probability per step up to {p:.3}; consider a smaller dt");
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        self.dt.unwrap_or_else(|| {
            let rate = max_jump_rate(self.n_spins, self.kappa);
            (1e-3 / self.kappa).min(0.05 / rate)
        })
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.step()).round() as usize
    }

    /// Pure-state propagation applies at unit efficiency from a pure start.
    pub fn uses_pure_filter(&self) -> bool {
        self.eta == 1.0 && self.initial.is_pure() && !self.force_density
    }

    /// Step indices of the retained times: a geometric grid from `10·dt` to
    /// the horizon plus the extra times, sorted and deduplicated. Index 0 is
    /// always included.
    pub fn checkpoint_steps(&self) -> Vec<usize> {
        let dt = self.step();
        let n = self.n_steps();
        let mut steps = vec![0, n];
        let start = 10.0 * dt;
        if self.horizon > start {
            let decades = (self.horizon / start).log10();
            let count = (decades * self.checkpoints_per_decade as f64).ceil() as usize;
            for i in 0..=count {
                let t = start * 10f64.powf(i as f64 / self.checkpoints_per_decade as f64);
                steps.push(((t.min(self.horizon)) / dt).round() as usize);
            }
        }
        for t in &self.extra_times {
            steps.push((t / dt).round() as usize);
        }
        steps.sort_unstable();
        steps.dedup();
        steps.retain(|&s| s <= n);
        steps
    }
}

/// Per-trajectory values at one retained time.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub time: f64,
    pub score: f64,
    /// Accumulated predictable quadratic variation of the score.
    pub compensator: f64,
    pub score_fd: Option<f64>,
    pub purity: f64,
    pub jy: f64,
    pub jz: f64,
    pub conditional_qfi: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub index: u64,
    pub seed: u64,
    pub scheme: Scheme,
    pub checkpoints: Vec<Checkpoint>,
    /// Normalized conditional states and their ω-derivatives, aligned with
    /// `checkpoints` when kept.
    pub states: Vec<(CMat, CMat)>,
    /// Jump times (photodetection).
    pub jumps: Vec<f64>,
    /// Current samples `dY/dt` on the step grid (homodyne).
    pub current: Vec<f64>,
    pub dt: f64,
}

impl TrajectoryRecord {
    pub fn times(&self) -> Vec<f64> {
        self.checkpoints.iter().map(|c| c.time).collect()
    }

    pub fn final_checkpoint(&self) -> &Checkpoint {
        self.checkpoints.last().expect("checkpoint 0 is always present")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let ok = UnravellingConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            UnravellingConfig { eta: 0.0, ..ok.clone() },
            UnravellingConfig { eta: 1.5, ..ok.clone() },
            UnravellingConfig { n_traj: 0, ..ok.clone() },
            UnravellingConfig { dt: Some(-1.0), ..ok.clone() },
            UnravellingConfig { n_spins: 0, ..ok.clone() },
            UnravellingConfig { extra_times: vec![50.0], ..ok.clone() },
        ] {
            assert!(bad.validate().unwrap_err().is_config_error());
        }
    }

    #[test]
    fn default_step_shrinks_with_n() {
        let c = |n| UnravellingConfig { n_spins: n, ..Default::default() }.step();
        assert_eq!(c(1), 1e-3);
        assert_eq!(c(8), 1e-3);
        assert!(c(200) < 1e-3);
        assert!(c(200) * max_jump_rate(200, 1.0) <= 0.05 + 1e-12);
        assert_eq!(max_jump_rate(1, 1.0), 2.0);
        assert_eq!(max_jump_rate(2, 1.0), 2.0);
    }

    #[test]
    fn checkpoints_are_geometric() {
        let cfg = UnravellingConfig {
            horizon: 10.0,
            extra_times: vec![5.0],
            ..Default::default()
        };
        let s = cfg.checkpoint_steps();
        assert_eq!(s[0], 0);
        assert_eq!(*s.last().unwrap(), 10_000);
        assert!(s.contains(&5000));
        // 10 ms to 10 s is three decades.
        assert!((60..=63).contains(&s.len()));
        assert!(s.windows(2).all(|w| w[0] < w[1]));
    }
}
