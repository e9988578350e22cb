use std::io::Write;

use serde::{Deserialize, Serialize};

use super::fisher::Ensemble;
use super::UnravellingConfig;
use crate::error::Result;

/// Build description captured at compile time, `unknown` outside a checkout.
pub fn git_describe() -> &'static str {
    option_env!("BTCM_GIT_DESCRIBE").unwrap_or("unknown")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub config: UnravellingConfig,
    pub seed: u64,
    pub n_traj: usize,
    pub dt: f64,
    pub checkpoints: usize,
    pub git_describe: String,
    pub version: String,
}

impl Manifest {
    pub fn new(ensemble: &Ensemble) -> Self {
        let cfg = ensemble.config();
        Self {
            config: cfg.clone(),
            seed: cfg.seed,
            n_traj: ensemble.n_traj(),
            dt: cfg.step(),
            checkpoints: ensemble.times().len(),
            git_describe: git_describe().to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

pub fn write_manifest<W: Write>(ensemble: &Ensemble, w: W) -> Result<()> {
    serde_json::to_writer_pretty(w, &Manifest::new(ensemble))?;
    Ok(())
}

/// One row per trajectory and checkpoint.
pub fn write_checkpoint_csv<W: Write>(ensemble: &Ensemble, mut w: W) -> Result<()> {
    let cfg = ensemble.config();
    writeln!(w, "# scheme={} eta={} N={} omega={} seed={}", cfg.scheme, cfg.eta, cfg.n_spins, cfg.omega, cfg.seed)?;
    writeln!(w, "# units: time in 1/kappa, omega in kappa")?;
    writeln!(w, "trajectory,t,score,compensator,purity,jy,jz")?;
    for r in ensemble.records() {
        for c in &r.checkpoints {
            writeln!(
                w,
                "{},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                r.index, c.time, c.score, c.compensator, c.purity, c.jy, c.jz
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::monitoring::run_ensemble;

    #[test]
    fn csv_and_manifest_round_trip() {
        let cfg = UnravellingConfig {
            horizon: 0.5,
            n_traj: 3,
            ..Default::default()
        };
        let ens = run_ensemble(&cfg).unwrap();
        let mut csv = Vec::new();
        write_checkpoint_csv(&ens, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let rows = text.lines().filter(|l| !l.starts_with('#')).count();
        assert_eq!(rows, 1 + 3 * ens.times().len());

        let mut json = Vec::new();
        write_manifest(&ens, &mut json).unwrap();
        let back: Manifest = serde_json::from_slice(&json).unwrap();
        assert_eq!(back.config, cfg);
        assert_eq!(back.n_traj, 3);
    }
}
