use faer::c64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::filter::{run, Model};
use super::{TrajectoryRecord, UnravellingConfig};
use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::qfi::pairwise_sum;

pub const BOOTSTRAP_RESAMPLES: usize = 200;
/// RNG stream reserved for bootstrap resampling.
const BOOTSTRAP_STREAM: u64 = u64::MAX;
/// Quadratic terms this many bootstrap deviations from zero reject a window.
const CURVATURE_SIGMAS: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FiMethod {
    /// Ensemble mean of the squared tangent-filter score.
    Tangent,
    /// Squared score from two shifted filters on the same record.
    FiniteDifferenceLikelihood,
    /// Ensemble mean of the accumulated conditional variance of the score
    /// increments; same expectation as `Tangent`, smaller spread.
    Compensator,
}

impl std::fmt::Display for FiMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FiMethod::Tangent => "tangent",
            FiMethod::FiniteDifferenceLikelihood => "finite-difference-likelihood",
            FiMethod::Compensator => "compensator",
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FiEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_traj: usize,
    pub horizon: f64,
    pub method: FiMethod,
    /// Regression window for rates.
    pub window: Option<(f64, f64)>,
    /// Ensemble mean of the score at the horizon and its standard error.
    pub mean_score: (f64, f64),
}

/// Ensemble-averaged conditional state at one checkpoint.
#[derive(Clone, Debug)]
pub struct MeanState {
    pub time: f64,
    pub mean: CMat,
    /// `½√d` times the Frobenius standard error: bounds the trace-distance
    /// fluctuation of the mean.
    pub mc_error: f64,
    pub n_traj: usize,
}

pub struct Ensemble {
    config: UnravellingConfig,
    records: Vec<TrajectoryRecord>,
}

/// All trajectories of `cfg`, in index order regardless of scheduling.
pub fn run_ensemble(cfg: &UnravellingConfig) -> Result<Ensemble> {
    let model = Model::new(cfg)?;
    let records = (0..cfg.n_traj as u64)
        .into_par_iter()
        .map(|i| run(&model, cfg, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble {
        config: cfg.clone(),
        records,
    })
}

fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    (pairwise_sum(&sq) / (xs.len() - 1) as f64).sqrt()
}

/// Least-squares polynomial coefficients (degree 1 or 2) in centred time.
fn poly_fit(t: &[f64], y: &[f64], degree: usize) -> Vec<f64> {
    let t0 = mean(t);
    let cols = degree + 1;
    let mut ata = vec![vec![0.0; cols]; cols];
    let mut aty = vec![0.0; cols];
    for (&ti, &yi) in t.iter().zip(y) {
        let x = ti - t0;
        let pow: Vec<f64> = (0..cols).map(|k| x.powi(k as i32)).collect();
        for r in 0..cols {
            aty[r] += pow[r] * yi;
            for c in 0..cols {
                ata[r][c] += pow[r] * pow[c];
            }
        }
    }
    // Gaussian elimination on the tiny normal equations.
    for k in 0..cols {
        let piv = ata[k][k];
        for r in k + 1..cols {
            let f = ata[r][k] / piv;
            for c in k..cols {
                ata[r][c] -= f * ata[k][c];
            }
            aty[r] -= f * aty[k];
        }
    }
    let mut coef = vec![0.0; cols];
    for k in (0..cols).rev() {
        let s: f64 = (k + 1..cols).map(|c| ata[k][c] * coef[c]).sum();
        coef[k] = (aty[k] - s) / ata[k][k];
    }
    coef
}

impl Ensemble {
    pub fn config(&self) -> &UnravellingConfig {
        &self.config
    }

    pub fn records(&self) -> &[TrajectoryRecord] {
        &self.records
    }

    pub fn n_traj(&self) -> usize {
        self.records.len()
    }

    pub fn times(&self) -> Vec<f64> {
        self.records[0].times()
    }

    /// Checkpoint closest to `time`.
    pub fn checkpoint_index(&self, time: f64) -> usize {
        let times = self.times();
        let mut best = 0;
        for (k, t) in times.iter().enumerate() {
            if (t - time).abs() < (times[best] - time).abs() {
                best = k;
            }
        }
        best
    }

    /// Per-trajectory Fisher contributions at checkpoint `k`.
    pub fn samples(&self, k: usize, method: FiMethod) -> Result<Vec<f64>> {
        self.records
            .iter()
            .map(|r| {
                let c = &r.checkpoints[k];
                match method {
                    FiMethod::Tangent => Ok(c.score * c.score),
                    FiMethod::Compensator => Ok(c.compensator),
                    FiMethod::FiniteDifferenceLikelihood => c
                        .score_fd
                        .map(|s| s * s)
                        .ok_or_else(|| Error::param("finite_difference", "shifted filters were not run")),
                }
            })
            .collect()
    }

    fn bootstrap_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(BOOTSTRAP_STREAM);
        rng
    }

    /// Index sets for each resample, shared by every statistic so that the
    /// same resamples are used throughout.
    fn resamples(&self) -> Vec<Vec<usize>> {
        let n = self.n_traj();
        let mut rng = self.bootstrap_rng();
        (0..BOOTSTRAP_RESAMPLES)
            .map(|_| (0..n).map(|_| rng.random_range(0..n)).collect())
            .collect()
    }

    fn bootstrap_mean_error(&self, xs: &[f64]) -> f64 {
        let means: Vec<f64> = self
            .resamples()
            .iter()
            .map(|idx| mean(&idx.iter().map(|&i| xs[i]).collect::<Vec<_>>()))
            .collect();
        std_dev(&means)
    }

    fn score_stats(&self, k: usize) -> (f64, f64) {
        let s: Vec<f64> = self.records.iter().map(|r| r.checkpoints[k].score).collect();
        (mean(&s), std_dev(&s) / (s.len() as f64).sqrt())
    }

    /// `F_signal` at checkpoint `k`.
    pub fn fisher_at(&self, k: usize, method: FiMethod) -> Result<FiEstimate> {
        let xs = self.samples(k, method)?;
        Ok(FiEstimate {
            value: mean(&xs),
            std_error: self.bootstrap_mean_error(&xs),
            n_traj: self.n_traj(),
            horizon: self.records[0].checkpoints[k].time,
            method,
            window: None,
            mean_score: self.score_stats(k),
        })
    }

    /// `(t, F, error)` over all checkpoints.
    pub fn fisher_curve(&self, method: FiMethod) -> Result<Vec<(f64, f64, f64)>> {
        let times = self.times();
        (0..times.len())
            .map(|k| {
                let e = self.fisher_at(k, method)?;
                Ok((times[k], e.value, e.std_error))
            })
            .collect()
    }

    /// Mean score and its standard error at every checkpoint.
    pub fn score_means(&self) -> Vec<(f64, f64, f64)> {
        self.times()
            .iter()
            .enumerate()
            .map(|(k, &t)| {
                let (m, e) = self.score_stats(k);
                (t, m, e)
            })
            .collect()
    }

    /// Slope of `F_signal(t)` over the checkpoints in `window` (default the
    /// second half of the horizon), bootstrap error. A significant quadratic
    /// term is rejected.
    pub fn rate(&self, window: Option<(f64, f64)>, method: FiMethod) -> Result<FiEstimate> {
        let horizon = self.config.horizon;
        let (lo, hi) = window.unwrap_or((0.5 * horizon, horizon));
        if !(lo < hi) || lo < 0.0 || hi > horizon * (1.0 + 1e-12) {
            return Err(Error::param("window", format!("[{lo}, {hi}] must lie inside [0, {horizon}]")));
        }
        let times = self.times();
        let eps = 1e-9 * horizon.max(1.0);
        let ks: Vec<usize> = (0..times.len())
            .filter(|&k| times[k] >= lo - eps && times[k] <= hi + eps)
            .collect();
        if ks.len() < 4 {
            return Err(Error::param(
                "window",
                format!("only {} checkpoints inside; need at least 4", ks.len()),
            ));
        }
        let t: Vec<f64> = ks.iter().map(|&k| times[k]).collect();
        let per: Vec<Vec<f64>> = ks
            .iter()
            .map(|&k| self.samples(k, method))
            .collect::<Result<_>>()?;
        let curve = |idx: Option<&[usize]>| -> Vec<f64> {
            per.iter()
                .map(|xs| match idx {
                    Some(idx) => mean(&idx.iter().map(|&i| xs[i]).collect::<Vec<_>>()),
                    None => mean(xs),
                })
                .collect()
        };
        let y = curve(None);
        let slope = poly_fit(&t, &y, 1)[1];
        let curvature = poly_fit(&t, &y, 2)[2];
        let mut slopes = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
        let mut curvatures = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
        for idx in self.resamples() {
            let yb = curve(Some(&idx));
            slopes.push(poly_fit(&t, &yb, 1)[1]);
            curvatures.push(poly_fit(&t, &yb, 2)[2]);
        }
        let spread = std_dev(&curvatures);
        if spread > 0.0 && curvature.abs() > CURVATURE_SIGMAS * spread {
            return Err(Error::WindowTooEarly {
                curvature,
                sigmas: curvature.abs() / spread,
            });
        }
        Ok(FiEstimate {
            value: slope,
            std_error: std_dev(&slopes),
            n_traj: self.n_traj(),
            horizon,
            method,
            window: Some((t[0], t[t.len() - 1])),
            mean_score: self.score_stats(*ks.last().unwrap()),
        })
    }

    /// Ensemble mean of the QFI of the conditional state at checkpoint `k`.
    pub fn conditional_qfi_at(&self, k: usize) -> Result<FiEstimate> {
        let xs: Vec<f64> = self
            .records
            .iter()
            .map(|r| {
                r.checkpoints[k]
                    .conditional_qfi
                    .ok_or_else(|| Error::param("conditional_qfi", "not evaluated in this run"))
            })
            .collect::<Result<_>>()?;
        Ok(FiEstimate {
            value: mean(&xs),
            std_error: self.bootstrap_mean_error(&xs),
            n_traj: self.n_traj(),
            horizon: self.records[0].checkpoints[k].time,
            method: FiMethod::Tangent,
            window: None,
            mean_score: self.score_stats(k),
        })
    }

    /// Mean conditional state at checkpoint `k`; needs `keep_states`.
    pub fn mean_state(&self, k: usize) -> Result<MeanState> {
        if self.records[0].states.is_empty() {
            return Err(Error::param("keep_states", "states were not kept in this run"));
        }
        let d = self.records[0].states[k].0.nrows();
        let n = self.n_traj();
        let mut mean_m = linalg::zeros(d, d);
        let mut var = 0.0;
        for i in 0..d {
            for j in 0..d {
                let xs: Vec<c64> = self.records.iter().map(|r| r.states[k].0[(i, j)]).collect();
                let re_part: Vec<f64> = xs.iter().map(|z| z.re).collect();
                let im_part: Vec<f64> = xs.iter().map(|z| z.im).collect();
                mean_m[(i, j)] = c64::new(mean(&re_part), mean(&im_part));
                var += std_dev(&re_part).powi(2) + std_dev(&im_part).powi(2);
            }
        }
        Ok(MeanState {
            time: self.records[0].checkpoints[k].time,
            mean: mean_m,
            mc_error: 0.5 * (d as f64).sqrt() * (var / n as f64).sqrt(),
            n_traj: n,
        })
    }
}

/// `F_signal(T)` from the squared tangent-filter score.
pub fn signal_fisher(cfg: &UnravellingConfig) -> Result<FiEstimate> {
    let ens = run_ensemble(cfg)?;
    let last = ens.times().len() - 1;
    ens.fisher_at(last, FiMethod::Tangent)
}

/// Slope of `F_signal` over `window`, default `[T/2, T]`.
pub fn signal_fisher_rate(cfg: &UnravellingConfig, window: Option<(f64, f64)>) -> Result<FiEstimate> {
    run_ensemble(cfg)?.rate(window, FiMethod::Tangent)
}

/// `E[F_Q(ρ_c(T))]` over the ensemble.
pub fn conditional_qfi_term(cfg: &UnravellingConfig) -> Result<FiEstimate> {
    let cfg = UnravellingConfig {
        conditional_qfi: true,
        ..cfg.clone()
    };
    let ens = run_ensemble(&cfg)?;
    let last = ens.times().len() - 1;
    ens.conditional_qfi_at(last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::monitoring::{InitialState, Scheme};

    #[test]
    fn poly_fit_recovers_coefficients() {
        let t: Vec<f64> = (0..8).map(|i| 1.0 + i as f64).collect();
        let y: Vec<f64> = t.iter().map(|x| 2.0 + 3.0 * x).collect();
        assert!((poly_fit(&t, &y, 1)[1] - 3.0).abs() < 1e-12);
        let y: Vec<f64> = t.iter().map(|x| 1.0 - x + 0.5 * x * x).collect();
        assert!((poly_fit(&t, &y, 2)[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_horizon_carries_no_information() {
        let cfg = UnravellingConfig {
            horizon: 0.0,
            n_traj: 8,
            conditional_qfi: true,
            ..Default::default()
        };
        let ens = run_ensemble(&cfg).unwrap();
        assert_eq!(ens.times(), vec![0.0]);
        assert_eq!(ens.fisher_at(0, FiMethod::Tangent).unwrap().value, 0.0);
        assert_eq!(ens.conditional_qfi_at(0).unwrap().value, 0.0);
    }

    #[test]
    fn ensemble_is_reproducible() {
        let cfg = UnravellingConfig {
            horizon: 1.0,
            n_traj: 6,
            eta: 0.5,
            n_spins: 2,
            seed: 11,
            ..Default::default()
        };
        let a = signal_fisher(&cfg).unwrap();
        let b = signal_fisher(&cfg).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
        assert!(a.value >= 0.0 && a.std_error >= 0.0);
    }

    #[test]
    fn estimators_agree_on_short_runs() {
        let cfg = UnravellingConfig {
            horizon: 3.0,
            n_traj: 300,
            n_spins: 1,
            seed: 3,
            finite_difference: Some(1e-3),
            initial: InitialState::Dark,
            scheme: Scheme::Photodetection,
            ..Default::default()
        };
        let ens = run_ensemble(&cfg).unwrap();
        let k = ens.times().len() - 1;
        let t = ens.fisher_at(k, FiMethod::Tangent).unwrap();
        let fd = ens.fisher_at(k, FiMethod::FiniteDifferenceLikelihood).unwrap();
        let q = ens.fisher_at(k, FiMethod::Compensator).unwrap();
        assert!((t.value - fd.value).abs() < 1e-3 * t.value);
        assert!((t.value - q.value).abs() < 3.0 * (t.std_error.powi(2) + q.std_error.powi(2)).sqrt());
        assert!(t.mean_score.0.abs() < 3.0 * t.mean_score.1);
    }

    #[test]
    fn rate_window_validation() {
        let cfg = UnravellingConfig {
            horizon: 2.0,
            n_traj: 4,
            ..Default::default()
        };
        let ens = run_ensemble(&cfg).unwrap();
        assert!(ens.rate(Some((1.5, 1.0)), FiMethod::Tangent).is_err());
        assert!(ens.rate(Some((0.0, 3.0)), FiMethod::Tangent).is_err());
        assert!(ens.mean_state(0).is_err());
    }
}
