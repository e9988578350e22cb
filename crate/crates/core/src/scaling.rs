//! Finite-size scaling: local exponents between neighbouring sizes, the
//! offset power-law fit `e_N = a + b N^{-x}`, and mode tracking across a
//! family of spectra.

use std::io::Write;

use faer::c64;
use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liouvillian::{build_liouvillian, steady_state};
use crate::qfi::{build_correlation_model, global_rate_spectral, steady_state_derivative};
use crate::spectrum::spectral_decomposition;
use crate::spin::{build_spin_operators, SpinSector};

/// Default sizes, filtered by the dense spectral cap.
pub const DEFAULT_GRID: [usize; 7] = [8, 12, 16, 24, 32, 48, 64];

/// Threshold on `|A_k|/C(0)` for a mode to count as contributing.
pub const AMPLITUDE_THRESHOLD: f64 = 1e-8;

/// Correlation-length exponent used by the susceptibility route.
pub const NU: f64 = 1.5;

pub fn default_grid(dense_cap: usize) -> Vec<usize> {
    DEFAULT_GRID
        .iter()
        .copied()
        .filter(|n| (n + 1) * (n + 1) <= dense_cap)
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub a: f64,
    pub b: f64,
    pub x: f64,
    /// Row-major 3×3 covariance of `(a, b, x)`; absent when singular.
    pub covariance: Option<[[f64; 3]; 3]>,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingSeries {
    pub sizes: Vec<f64>,
    pub values: Vec<f64>,
    /// `(N, e_N)`, one per neighbouring pair, attached to the larger size.
    pub exponents: Vec<(f64, f64)>,
    pub fit: Option<PowerLawFit>,
}

impl ScalingSeries {
    pub fn exponent_values(&self) -> Vec<f64> {
        self.exponents.iter().map(|e| e.1).collect()
    }

    /// Exponents with flipped sign, for quantities that shrink with `N`.
    pub fn negated(&self) -> Vec<(f64, f64)> {
        self.exponents.iter().map(|&(n, e)| (n, -e)).collect()
    }

    pub fn with_fit(mut self) -> Result<Self> {
        self.fit = Some(fit_power_law_offset(&self.exponents)?);
        Ok(self)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "N,e_N")?;
        for (n, e) in &self.exponents {
            writeln!(w, "{n},{e:.12e}")?;
        }
        Ok(())
    }
}

/// `e_i = log(v_i/v_{i−1}) / log(N_i/N_{i−1})`.
pub fn local_exponents(sizes: &[f64], values: &[f64]) -> Result<ScalingSeries> {
    if sizes.len() != values.len() {
        return Err(Error::InvalidSeries("sizes and values differ in length".into()));
    }
    if sizes.len() < 3 {
        return Err(Error::InvalidSeries(format!(
            "need at least 3 sizes, got {}",
            sizes.len()
        )));
    }
    if sizes.windows(2).any(|w| !(w[1] > w[0])) || !(sizes[0] > 0.0) {
        return Err(Error::InvalidSeries("sizes must be positive and increasing".into()));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidSeries(format!("nonpositive value {v}")));
    }
    let exponents = (1..sizes.len())
        .map(|i| {
            let e = (values[i] / values[i - 1]).ln() / (sizes[i] / sizes[i - 1]).ln();
            (sizes[i], e)
        })
        .collect();
    Ok(ScalingSeries {
        sizes: sizes.to_vec(),
        values: values.to_vec(),
        exponents,
        fit: None,
    })
}

/// Linear least squares of `e = a + b N^{-x}` at fixed `x`.
fn linear_part(points: &[(f64, f64)], x: f64) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let (mut su, mut suu, mut se, mut sue) = (0.0, 0.0, 0.0, 0.0);
    for &(size, e) in points {
        let u = size.powf(-x);
        su += u;
        suu += u * u;
        se += e;
        sue += u * e;
    }
    let det = n * suu - su * su;
    let (a, b) = if det.abs() < 1e-300 {
        (se / n, 0.0)
    } else {
        ((suu * se - su * sue) / det, (n * sue - su * se) / det)
    };
    let rss = points
        .iter()
        .map(|&(size, e)| (e - a - b * size.powf(-x)).powi(2))
        .sum();
    (a, b, rss)
}

/// Variable projection: `a, b` solved linearly, `log x` by golden section
/// after a coarse scan over `x ∈ [1e-3, 10]`.
pub fn fit_power_law_offset(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    if points.len() < 5 {
        return Err(Error::InvalidSeries(format!(
            "need at least 5 exponent points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|p| !(p.0 > 0.0) || !p.1.is_finite()) {
        return Err(Error::InvalidSeries("non-finite exponent point".into()));
    }
    let rss = |lx: f64| linear_part(points, lx.exp()).2;
    let (lo, hi) = ((1e-3f64).ln(), (10.0f64).ln());
    let scan = 200;
    let grid: Vec<f64> = (0..=scan)
        .map(|i| lo + (hi - lo) * i as f64 / scan as f64)
        .collect();
    let best = (0..grid.len())
        .min_by(|&i, &j| rss(grid[i]).total_cmp(&rss(grid[j])))
        .unwrap();
    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(scan)];
    let g = 0.5 * (5.0f64.sqrt() - 1.0);
    let max_iter = 200;
    let mut iterations = 0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    while (b - a).abs() > 1e-12 {
        iterations += 1;
        if iterations > max_iter {
            return Err(Error::FitFailure {
                iterations,
                reason: format!("bracket [{a}, {b}] did not shrink"),
            });
        }
        if rss(c) < rss(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    let x = (0.5 * (a + b)).exp();
    let (pa, pb, residual) = linear_part(points, x);
    if !pa.is_finite() || !pb.is_finite() {
        return Err(Error::FitFailure {
            iterations,
            reason: "non-finite parameters".into(),
        });
    }
    Ok(PowerLawFit {
        a: pa,
        b: pb,
        x,
        covariance: covariance(points, pb, x, residual),
        residual,
        iterations,
    })
}

/// `σ² (JᵀJ)⁻¹` with `σ² = RSS/(n − 3)`.
fn covariance(points: &[(f64, f64)], b: f64, x: f64, rss: f64) -> Option<[[f64; 3]; 3]> {
    let dof = points.len().checked_sub(3).filter(|&d| d > 0)?;
    let mut jtj = [[0.0; 3]; 3];
    for &(n, _) in points {
        let u = n.powf(-x);
        let row = [1.0, u, -b * u * n.ln()];
        for i in 0..3 {
            for j in 0..3 {
                jtj[i][j] += row[i] * row[j];
            }
        }
    }
    let inv = invert3(jtj)?;
    let s2 = rss / dof as f64;
    Some(inv.map(|r| r.map(|v| v * s2)))
}

fn invert3(m: [[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let det = m[0][0] * cof(1, 2, 1, 2) - m[0][1] * cof(1, 2, 0, 2) + m[0][2] * cof(1, 2, 0, 1);
    let scale = m.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    if det.abs() <= 1e-14 * scale.powi(3) {
        return None;
    }
    let adj = [
        [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
        [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
        [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
    ];
    Some(adj.map(|r| r.map(|v| v / det)))
}

/// Per-size data needed for the scaling analysis.
#[derive(Clone, Debug)]
pub struct FamilyMember {
    pub n_spins: usize,
    /// Contributing modes `(λ, A)`, Ω ≥ 0 representatives.
    pub modes: Vec<(c64, c64)>,
    pub c0: f64,
    pub f_global: f64,
}

pub fn build_family(sizes: &[usize], omega: f64, kappa: f64) -> Result<Vec<FamilyMember>> {
    sizes
        .iter()
        .map(|&n| {
            let sector = SpinSector::new(n)?;
            let l = build_liouvillian(sector, omega, kappa)?;
            let rho = steady_state(&l)?;
            let spectrum = spectral_decomposition(&l)?;
            let jx = build_spin_operators(sector).jx.into_matrix();
            let model = build_correlation_model(&spectrum, &rho, &jx)?;
            let f_global = global_rate_spectral(&model)?.value;
            info!("family member N={n}: f_global={f_global:.6e}");
            let modes = model
                .significant_modes(AMPLITUDE_THRESHOLD)
                .into_iter()
                .map(|m| (m.eigenvalue(), m.amplitude))
                .collect();
            Ok(FamilyMember {
                n_spins: n,
                modes,
                c0: model.value_at_zero,
                f_global,
            })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrackedMode {
    pub sizes: Vec<usize>,
    /// `(Re λ, Im λ)` per size.
    pub eigenvalues: Vec<(f64, f64)>,
    pub amplitudes: Vec<f64>,
}

impl TrackedMode {
    pub fn decay_rates(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|e| -e.0).collect()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|e| e.1).collect()
    }
}

/// Follows the `count` slowest contributing modes of the smallest size
/// through the family. Each step picks the joint assignment of tracks to
/// modes minimizing the summed distance, with `Re λ` scaled by `N`; a
/// runner-up assignment within tolerance of the best is reported as a tie.
pub fn track_modes(family: &[FamilyMember], count: usize) -> Result<Vec<TrackedMode>> {
    let first = family
        .first()
        .ok_or_else(|| Error::InvalidSeries("empty family".into()))?;
    let scaled = |z: c64, n: usize| c64::new(z.re * n as f64, z.im);
    let mut start: Vec<(c64, c64)> = first.modes.clone();
    start.sort_by(|a, b| (-a.0.re).total_cmp(&(-b.0.re)));
    start.truncate(count);
    let mut tracks: Vec<TrackedMode> = start
        .iter()
        .map(|&(l, a)| TrackedMode {
            sizes: vec![first.n_spins],
            eigenvalues: vec![(l.re, l.im)],
            amplitudes: vec![a.norm()],
        })
        .collect();
    for member in &family[1..] {
        if member.modes.len() < tracks.len() {
            return Err(Error::InvalidSeries(format!(
                "only {} contributing modes at N={}",
                member.modes.len(),
                member.n_spins
            )));
        }
        let cost: Vec<Vec<f64>> = tracks
            .iter()
            .map(|t| {
                let (pr, pi) = *t.eigenvalues.last().unwrap();
                let prev = scaled(c64::new(pr, pi), *t.sizes.last().unwrap());
                member
                    .modes
                    .iter()
                    .map(|m| (scaled(m.0, member.n_spins) - prev).norm())
                    .collect()
            })
            .collect();
        let mut best: Vec<(f64, Vec<usize>)> = Vec::new();
        let mut current = Vec::with_capacity(tracks.len());
        search_assignments(&cost, &mut current, 0.0, &mut best);
        let (c1, assignment) = best[0].clone();
        if let Some((c2, other)) = best.get(1) {
            if c2 - c1 <= 1e-6 * (1.0 + c1) {
                let candidates = assignment
                    .iter()
                    .chain(other)
                    .map(|&j| (member.modes[j].0.re, member.modes[j].0.im))
                    .collect();
                let from = *tracks[0].sizes.last().unwrap();
                return Err(Error::TrackingAmbiguity {
                    from,
                    to: member.n_spins,
                    candidates,
                });
            }
        }
        for (track, &j) in tracks.iter_mut().zip(&assignment) {
            let (l, a) = member.modes[j];
            track.sizes.push(member.n_spins);
            track.eigenvalues.push((l.re, l.im));
            track.amplitudes.push(a.norm());
        }
    }
    Ok(tracks)
}

/// Keeps the two cheapest injective assignments of rows to columns.
fn search_assignments(
    cost: &[Vec<f64>],
    current: &mut Vec<usize>,
    acc: f64,
    best: &mut Vec<(f64, Vec<usize>)>,
) {
    if best.len() == 2 && acc > best[1].0 {
        return;
    }
    let row = current.len();
    if row == cost.len() {
        best.push((acc, current.clone()));
        best.sort_by(|a, b| a.0.total_cmp(&b.0));
        best.truncate(2);
        return;
    }
    for j in 0..cost[row].len() {
        if current.contains(&j) {
            continue;
        }
        current.push(j);
        search_assignments(cost, current, acc + cost[row][j], best);
        current.pop();
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModeExponents {
    /// `z_{k,N}`: decay rates scale as `N^{-z}`.
    pub z: Vec<(f64, f64)>,
    /// Same for the oscillation frequency, when the mode oscillates.
    pub frequency_z: Option<Vec<(f64, f64)>>,
    /// `Δ_{k,N}` with amplitudes scaling as `N^{-2Δ}`.
    pub delta: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriticalAnalysis {
    pub sizes: Vec<usize>,
    pub modes: Vec<TrackedMode>,
    pub mode_exponents: Vec<ModeExponents>,
    /// Local exponent `ζ_N` of the global rate.
    pub zeta: ScalingSeries,
    /// `Δ` from the scaling of `C(0)`.
    pub delta_from_c0: Vec<(f64, f64)>,
}

/// Exponents of the tracked modes and of `C(0)` and `f_global`.
pub fn critical_amplitude_exponents(
    family: &[FamilyMember],
    count: usize,
) -> Result<CriticalAnalysis> {
    let sizes: Vec<f64> = family.iter().map(|m| m.n_spins as f64).collect();
    let modes = track_modes(family, count)?;
    let mut mode_exponents = Vec::new();
    for m in &modes {
        let z = local_exponents(&sizes, &m.decay_rates())?.negated();
        let freqs = m.frequencies();
        let frequency_z = if freqs.iter().all(|&w| w > 1e-12) {
            Some(local_exponents(&sizes, &freqs)?.negated())
        } else {
            None
        };
        let delta = local_exponents(&sizes, &m.amplitudes)?
            .exponents
            .iter()
            .map(|&(n, e)| (n, -0.5 * e))
            .collect();
        mode_exponents.push(ModeExponents {
            z,
            frequency_z,
            delta,
        });
    }
    let f: Vec<f64> = family.iter().map(|m| m.f_global).collect();
    let c0: Vec<f64> = family.iter().map(|m| m.c0).collect();
    let zeta = local_exponents(&sizes, &f)?;
    let delta_from_c0 = local_exponents(&sizes, &c0)?
        .exponents
        .iter()
        .map(|&(n, e)| (n, -0.5 * e))
        .collect();
    Ok(CriticalAnalysis {
        sizes: family.iter().map(|m| m.n_spins).collect(),
        modes,
        mode_exponents,
        zeta,
        delta_from_c0,
    })
}

/// `Δ = 1/ν − e` where `e` is the local exponent of `|∂_ω⟨J_α⟩|` in the
/// steady state, for `α = y` and `α = z`.
pub fn susceptibility_exponents(
    sizes: &[usize],
    omega: f64,
    kappa: f64,
) -> Result<(Vec<(f64, f64)>, Vec<(f64, f64)>)> {
    let mut sy = Vec::new();
    let mut sz = Vec::new();
    for &n in sizes {
        let sector = SpinSector::new(n)?;
        let d = steady_state_derivative(sector, omega, kappa, 1e-4 * kappa)?;
        let ops = build_spin_operators(sector);
        let tr = |a: &crate::linalg::CMat| crate::linalg::trace(&(a * &d)).re.abs();
        sy.push(tr(ops.jy.matrix()));
        sz.push(tr(ops.jz.matrix()));
    }
    let ns: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    let route = |v: &[f64]| -> Result<Vec<(f64, f64)>> {
        Ok(local_exponents(&ns, v)?
            .exponents
            .iter()
            .map(|&(n, e)| (n, 1.0 / NU - e))
            .collect())
    };
    Ok((route(&sy)?, route(&sz)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qfi::analytic_fglobal;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn exact_power_law() {
        let sizes = [2.0, 3.0, 5.0, 8.0, 13.0];
        let values: Vec<f64> = sizes.iter().map(|n: &f64| 0.7 * n.powi(3)).collect();
        let s = local_exponents(&sizes, &values).unwrap();
        assert_eq!(s.exponents.len(), 4);
        for (n, e) in &s.exponents {
            assert!((e - 3.0).abs() < 1e-10, "N={n}");
        }
        assert_eq!(s.exponents[0].0, 3.0);
    }

    #[test]
    fn analytic_rate_exponent_rises() {
        let sizes: Vec<f64> = (10..=100).step_by(10).map(|n| n as f64).collect();
        let values: Vec<f64> = sizes.iter().map(|&n| analytic_fglobal(n as usize, 1.0)).collect();
        let e = local_exponents(&sizes, &values).unwrap().exponent_values();
        assert!(e.windows(2).all(|w| w[1] > w[0]));
        assert!(*e.last().unwrap() > 2.9 && *e.last().unwrap() < 3.0);
    }

    #[test]
    fn invalid_series() {
        assert!(local_exponents(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(local_exponents(&[1.0, 2.0, 3.0], &[1.0, 0.0, 2.0]).is_err());
        assert!(local_exponents(&[1.0, 3.0, 2.0], &[1.0, 1.0, 2.0]).is_err());
    }

    #[test]
    fn fit_recovers_synthetic_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = Normal::new(0.0, 1e-4).unwrap();
        let points: Vec<(f64, f64)> = [8.0, 12.0, 16.0, 24.0, 32.0, 48.0, 64.0, 96.0]
            .iter()
            .map(|&n: &f64| (n, 1.0 / 3.0 + 2.0 * n.powf(-0.5) + noise.sample(&mut rng)))
            .collect();
        let fit = fit_power_law_offset(&points).unwrap();
        assert!((fit.a - 1.0 / 3.0).abs() < 1e-2, "{fit:?}");
        assert!((fit.x - 0.5).abs() < 0.1);
        let cov = fit.covariance.unwrap();
        assert!(cov[0][0] > 0.0 && cov[0][0].sqrt() < 0.05);
    }

    #[test]
    fn fit_constant_series() {
        let points: Vec<(f64, f64)> = (1..8).map(|i| (4.0 * i as f64, 1.5)).collect();
        let fit = fit_power_law_offset(&points).unwrap();
        assert_relative_eq!(fit.a, 1.5, max_relative = 1e-9);
        assert!(fit.b.abs() < 1e-9);
    }

    #[test]
    fn fit_needs_five_points() {
        assert!(fit_power_law_offset(&[(1.0, 1.0); 4]).is_err());
    }

    #[test]
    fn tracking_is_deterministic() {
        let family = build_family(&[4, 6, 8], 1.0, 1.0).unwrap();
        let a = track_modes(&family, 3).unwrap();
        let b = track_modes(&family, 3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.eigenvalues, y.eigenvalues);
        }
    }

    #[test]
    fn tracking_reports_ties() {
        let m = |n: usize, modes: Vec<(c64, c64)>| FamilyMember {
            n_spins: n,
            modes,
            c0: 1.0,
            f_global: 1.0,
        };
        let one = c64::new(1.0, 0.0);
        let family = vec![
            m(2, vec![(c64::new(-1.0, 0.0), one)]),
            m(4, vec![(c64::new(-0.5, 1.0), one), (c64::new(-0.5, -1.0), one)]),
        ];
        assert!(matches!(
            track_modes(&family, 1),
            Err(Error::TrackingAmbiguity { .. })
        ));
    }
}
