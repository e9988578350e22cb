//! Steady-state autocorrelations of `J_x`, the global Fisher information
//! of the drive frequency (finite time and rate), and the QFI of explicit
//! states.

use std::io::Write;

use faer::c64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, re, CMat, ZERO};
use crate::liouvillian::{build_liouvillian, steady_state, Liouvillian};
use crate::spectrum::{liouvillian_eigenvalues, LiouvillianSpectrum};
use crate::spin::{build_spin_operators, DensityOperator, SpinSector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateMethod {
    Spectral,
    TimeIntegral,
    Analytic,
}

impl std::fmt::Display for RateMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RateMethod::Spectral => "spectral",
            RateMethod::TimeIntegral => "time-integral",
            RateMethod::Analytic => "analytic",
        })
    }
}

/// Fisher information per unit time.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct QfiRate {
    pub value: f64,
    pub method: RateMethod,
    pub modes_retained: usize,
    /// Dropped-mode contribution (spectral) or quadrature error estimate
    /// (time integral).
    pub residual: f64,
}

/// One relaxation mode of the correlation function, conjugate pairs merged
/// onto the member with `Ω ≥ 0`. Its contribution to `C(t)` is
/// `2 Re[A e^{(−γ + iΩ)|t|}]`; `A` is real whenever the steady state is
/// symmetric enough, but not in general.
#[derive(Clone, Copy, Debug)]
pub struct CorrelationMode {
    pub amplitude: c64,
    pub gamma: f64,
    pub omega: f64,
}

impl CorrelationMode {
    pub fn eigenvalue(&self) -> c64 {
        c64::new(-self.gamma, self.omega)
    }

    /// `8 Re[A/(γ − iΩ)]`, i.e. `8Aγ/(γ² + Ω²)` for real `A`.
    pub fn rate_contribution(&self) -> f64 {
        8.0 * (self.amplitude / c64::new(self.gamma, -self.omega)).re
    }

    pub fn evaluate(&self, t: f64) -> f64 {
        2.0 * (self.amplitude * (self.eigenvalue() * t.abs()).exp()).re
    }
}

#[derive(Clone, Debug)]
pub struct CorrelationModel {
    pub modes: Vec<CorrelationMode>,
    /// `2 Re Tr[J_x² ρ] − 2⟨J_x⟩²`, computed directly.
    pub value_at_zero: f64,
    /// Amplitude `⟨J_x⟩²` carried by the steady mode, excluded from `modes`.
    pub steady_amplitude: f64,
    pub kappa: f64,
}

impl CorrelationModel {
    pub fn evaluate(&self, t: f64) -> f64 {
        pairwise_sum(&self.modes.iter().map(|m| m.evaluate(t)).collect::<Vec<_>>())
    }

    /// Modes with `|A| > rel·C(0)`.
    pub fn significant_modes(&self, rel: f64) -> Vec<CorrelationMode> {
        let cut = rel * self.value_at_zero.abs();
        self.modes
            .iter()
            .copied()
            .filter(|m| m.amplitude.norm() > cut)
            .collect()
    }
}

pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n => pairwise_sum(&xs[..n / 2]) + pairwise_sum(&xs[n / 2..]),
    }
}

/// `2 Re Tr[J_x e^{L|t|}((J_x − ⟨J_x⟩)ρ)]` by dense propagation.
pub fn correlation_function(
    liouvillian: &Liouvillian,
    rho: &DensityOperator,
    jx: &CMat,
    t: f64,
) -> Result<f64> {
    let x = connected_source(rho, jx);
    let prop = linalg::expm(&linalg::scale(liouvillian.generator(), re(t.abs())));
    let v = linalg::mat_vec(&prop, &linalg::vectorize(&x));
    let c = 2.0 * linalg::dot_conj(&linalg::vectorize(jx), &v).re;
    if !c.is_finite() {
        return Err(Error::Propagation(c));
    }
    Ok(c)
}

/// `(J_x − ⟨J_x⟩)ρ`.
fn connected_source(rho: &DensityOperator, jx: &CMat) -> CMat {
    let m = rho.expectation(jx);
    let mut x = jx * rho.matrix();
    linalg::axpy(&mut x, re(-m), rho.matrix());
    x
}

/// Relative tolerance for the `C(0)` consistency check of a complete
/// spectrum.
pub const CONSISTENCY_TOLERANCE: f64 = 1e-8;

pub fn build_correlation_model(
    spectrum: &LiouvillianSpectrum,
    rho: &DensityOperator,
    jx: &CMat,
) -> Result<CorrelationModel> {
    let vj = linalg::vectorize(jx);
    let vx = linalg::vectorize(&(jx * rho.matrix()));
    let right = spectrum.right_vectors();
    let left = spectrum.left_vectors();
    let n = right.nrows();
    let amp = |k: usize| -> c64 {
        let a: c64 = (0..n).map(|i| vj[i].conj() * right[(i, k)]).sum();
        let b: c64 = (0..n).map(|i| left[(i, k)].conj() * vx[i]).sum();
        a * b
    };
    let vals = spectrum.eigenvalues();
    let q = 1e-9 * spectrum.kappa().max(1.0);
    let steady = spectrum.steady_index();
    let mut amps: Vec<c64> = (0..vals.len()).map(amp).collect();
    let steady_amplitude = amps[steady].re;
    amps[steady] = ZERO;

    // Merge each λ with its conjugate partner.
    let mut used = vec![false; vals.len()];
    let mut modes = Vec::new();
    for k in 0..vals.len() {
        if used[k] || k == steady {
            continue;
        }
        used[k] = true;
        let lam = vals[k];
        if lam.im.abs() <= q {
            modes.push(CorrelationMode {
                amplitude: amps[k],
                gamma: -lam.re,
                omega: 0.0,
            });
            continue;
        }
        let partner = (0..vals.len())
            .filter(|&j| !used[j] && j != steady)
            .min_by(|&a, &b| {
                (vals[a] - lam.conj())
                    .norm()
                    .total_cmp(&(vals[b] - lam.conj()).norm())
            });
        let combined = match partner {
            Some(j) if (vals[j] - lam.conj()).norm() < 1e-6 * lam.norm().max(1.0) => {
                used[j] = true;
                amps[k] + amps[j].conj()
            }
            _ => amps[k],
        };
        // Store on the Ω ≥ 0 member: Re[A e^{λt}] = Re[Ā e^{λ̄t}].
        let (amplitude, lam) = if lam.im < 0.0 {
            (combined.conj(), lam.conj())
        } else {
            (combined, lam)
        };
        modes.push(CorrelationMode {
            amplitude,
            gamma: -lam.re,
            omega: lam.im,
        });
    }

    let m = rho.expectation(jx);
    let direct = 2.0 * linalg::trace(&(&(jx * jx) * rho.matrix())).re - 2.0 * m * m;
    let model = CorrelationModel {
        modes,
        value_at_zero: direct,
        steady_amplitude,
        kappa: spectrum.kappa(),
    };
    if spectrum.is_complete() {
        let from_modes = model.evaluate(0.0);
        if (from_modes - direct).abs() > CONSISTENCY_TOLERANCE * direct.abs().max(1e-300) {
            return Err(Error::CorrelationMismatch {
                model: from_modes,
                direct,
            });
        }
    }
    Ok(model)
}

/// Modes with `|contribution|` below this fraction of the total are dropped.
pub const TRUNCATION: f64 = 1e-12;

/// `8 Σ Re[A_k/(γ_k − iΩ_k)]` over the non-steady modes.
pub fn global_rate_spectral(model: &CorrelationModel) -> Result<QfiRate> {
    let gamma_tol = 1e-10 * model.kappa;
    let amp_tol = 1e-10 * model.value_at_zero.abs().max(1.0);
    for m in &model.modes {
        if m.gamma <= gamma_tol && m.amplitude.norm() > amp_tol {
            return Err(Error::DivergentRate {
                gamma: m.gamma,
                amplitude: m.amplitude.norm(),
            });
        }
    }
    let terms: Vec<f64> = model
        .modes
        .iter()
        .filter(|m| m.gamma > gamma_tol)
        .map(CorrelationMode::rate_contribution)
        .collect();
    let scale: f64 = terms.iter().map(|t| t.abs()).sum();
    let (kept, dropped): (Vec<f64>, Vec<f64>) =
        terms.iter().partition(|t| t.abs() >= TRUNCATION * scale);
    let value = pairwise_sum(&kept);
    if value < 0.0 {
        return Err(Error::InvalidState(format!("negative rate {value:e}")));
    }
    Ok(QfiRate {
        value,
        method: RateMethod::Spectral,
        modes_retained: kept.len(),
        residual: pairwise_sum(&dropped).abs(),
    })
}

/// `2N²(N+2)/(3κ)`.
pub fn analytic_fglobal(n_spins: usize, kappa: f64) -> f64 {
    let n = n_spins as f64;
    2.0 * n * n * (n + 2.0) / (3.0 * kappa)
}

pub fn analytic_rate(n_spins: usize, kappa: f64) -> QfiRate {
    QfiRate {
        value: analytic_fglobal(n_spins, kappa),
        method: RateMethod::Analytic,
        modes_retained: 1,
        residual: 0.0,
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TimeIntegralOptions {
    /// Upper limit of the lag integral; by default `40/gap`.
    pub horizon: Option<f64>,
    /// Relative accuracy target of the adaptive quadrature.
    pub tolerance: f64,
    /// `|C(horizon)|` allowed, relative to `C(0)`.
    pub tail_tolerance: f64,
    pub max_panels: usize,
}

impl Default for TimeIntegralOptions {
    fn default() -> Self {
        Self {
            horizon: None,
            tolerance: 1e-9,
            tail_tolerance: 1e-9,
            max_panels: 1 << 14,
        }
    }
}

const GK_NODES: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const G7_WEIGHTS: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// Kronrod nodes on [0, 1] with Kronrod and Gauss weights (Gauss weight 0
/// for Kronrod-only nodes).
fn gk_rule() -> Vec<(f64, f64, f64)> {
    let mut out = Vec::with_capacity(15);
    for i in 0..8 {
        let g = if i % 2 == 1 { G7_WEIGHTS[i / 2] } else { 0.0 };
        let (x, wk) = (GK_NODES[i], GK_WEIGHTS[i]);
        out.push((0.5 * (1.0 - x), 0.5 * wk, 0.5 * g));
        if x != 0.0 {
            out.push((0.5 * (1.0 + x), 0.5 * wk, 0.5 * g));
        }
    }
    out
}

/// Panel integrals of `C(t)` and `t·C(t)` over `[0, horizon]` with
/// `panels` equal Gauss-Kronrod panels. Returns `(∫C, ∫tC, error, C(horizon))`.
fn integrate_correlation(
    generator: &CMat,
    x0: &[c64],
    vj: &[c64],
    horizon: f64,
    panels: usize,
) -> (f64, f64, f64, f64) {
    let h = horizon / panels as f64;
    let rule = gk_rule();
    let node_props: Vec<CMat> = rule
        .iter()
        .map(|&(x, _, _)| linalg::expm(&linalg::scale(generator, re(x * h))))
        .collect();
    let step = linalg::expm(&linalg::scale(generator, re(h)));
    let c_of = |v: &[c64]| 2.0 * linalg::dot_conj(vj, v).re;
    let mut x = x0.to_vec();
    let (mut i0, mut i1, mut err) = (Vec::new(), Vec::new(), 0.0);
    for p in 0..panels {
        let t0 = p as f64 * h;
        let (mut k, mut g, mut kt) = (0.0, 0.0, 0.0);
        for (prop, &(node, wk, wg)) in node_props.iter().zip(&rule) {
            let c = c_of(&linalg::mat_vec(prop, &x));
            k += wk * c;
            g += wg * c;
            kt += wk * c * (t0 + node * h);
        }
        i0.push(k * h);
        i1.push(kt * h);
        err += ((k - g) * h).abs();
        x = linalg::mat_vec(&step, &x);
    }
    (pairwise_sum(&i0), pairwise_sum(&i1), err, c_of(&x))
}

/// `4∫_0^H C(t) dt` by adaptive panel refinement.
pub fn global_rate_time_integral(
    liouvillian: &Liouvillian,
    opts: &TimeIntegralOptions,
) -> Result<QfiRate> {
    let rho = steady_state(liouvillian)?;
    let jx = build_spin_operators(liouvillian.sector()).jx.into_matrix();
    let horizon = match opts.horizon {
        Some(h) => h,
        None => default_horizon(liouvillian)?,
    };
    if !(horizon > 0.0) {
        return Err(Error::param("horizon", "must be > 0"));
    }
    let x0 = linalg::vectorize(&connected_source(&rho, &jx));
    let vj = linalg::vectorize(&jx);
    let c0 = 2.0 * linalg::dot_conj(&vj, &x0).re;
    let scale = liouvillian.omega().max(liouvillian.kappa());
    let mut panels = ((horizon * scale).ceil() as usize).clamp(8, opts.max_panels);
    loop {
        let (i0, _, err, tail) =
            integrate_correlation(liouvillian.generator(), &x0, &vj, horizon, panels);
        if tail.abs() > opts.tail_tolerance * c0.abs() {
            return Err(Error::HorizonTooShort {
                horizon,
                tail: tail.abs(),
                tolerance: opts.tail_tolerance * c0.abs(),
            });
        }
        if err <= opts.tolerance * i0.abs() {
            return Ok(QfiRate {
                value: 4.0 * i0,
                method: RateMethod::TimeIntegral,
                modes_retained: 0,
                residual: 4.0 * err,
            });
        }
        if panels * 2 > opts.max_panels {
            return Err(Error::Quadrature { error: err, panels });
        }
        panels *= 2;
    }
}

/// `40/gap`, the gap taken from the eigenvalues of the generator.
pub fn default_horizon(liouvillian: &Liouvillian) -> Result<f64> {
    let vals = liouvillian_eigenvalues(liouvillian)?;
    let gap = vals
        .iter()
        .skip(1)
        .map(|z| -z.re)
        .fold(f64::INFINITY, f64::min);
    if !(gap > 0.0) || !gap.is_finite() {
        return Err(Error::InvalidState(format!("no spectral gap ({gap:e})")));
    }
    Ok(40.0 / gap)
}

#[derive(Clone, Copy, Debug)]
pub struct FiniteTimeOptions {
    /// Grid steps per unit time for the two-time grid; by default enough
    /// to resolve `max(ω, κ)`.
    pub steps_per_time: Option<f64>,
    /// `‖L(ρ0)‖` below which the stationary lag form is used.
    pub stationary_tolerance: f64,
}

impl Default for FiniteTimeOptions {
    fn default() -> Self {
        Self {
            steps_per_time: None,
            stationary_tolerance: 1e-10,
        }
    }
}

pub fn global_qfi_finite_t(
    liouvillian: &Liouvillian,
    rho0: &DensityOperator,
    horizon: f64,
) -> Result<f64> {
    global_qfi_finite_t_with(liouvillian, rho0, horizon, &FiniteTimeOptions::default())
}

/// `2∫_0^T∫_0^T ⟨{δJ_x(τ), δJ_x(τ')}⟩ dτ dτ'` from initial state `rho0`.
pub fn global_qfi_finite_t_with(
    liouvillian: &Liouvillian,
    rho0: &DensityOperator,
    horizon: f64,
    opts: &FiniteTimeOptions,
) -> Result<f64> {
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::param("T", format!("must be >= 0, got {horizon}")));
    }
    if horizon == 0.0 {
        return Ok(0.0);
    }
    let jx = build_spin_operators(liouvillian.sector()).jx.into_matrix();
    let stationary =
        crate::liouvillian::residual(liouvillian, rho0.matrix()) < opts.stationary_tolerance;
    if stationary {
        return stationary_finite_t(liouvillian, rho0, &jx, horizon);
    }
    let rate = opts
        .steps_per_time
        .unwrap_or(8.0 * liouvillian.omega().max(liouvillian.kappa()).max(1.0 / horizon));
    let coarse = ((horizon * rate).ceil() as usize).max(32);
    let fine = two_time_trapezoid(liouvillian, rho0, &jx, horizon, 2 * coarse)?;
    Ok((4.0 * fine.0 - fine.1) / 3.0)
}

/// Trapezoid over the triangle `τ' ≤ τ` on a grid of `m` steps; returns the
/// estimate at `m` and at `m/2` (every second node).
fn two_time_trapezoid(
    liouvillian: &Liouvillian,
    rho0: &DensityOperator,
    jx: &CMat,
    horizon: f64,
    m: usize,
) -> Result<(f64, f64)> {
    let h = horizon / m as f64;
    let gen = liouvillian.generator();
    let step = linalg::expm(&linalg::scale(gen, re(h)));
    let step_adj = linalg::dagger(&step);
    let vj = linalg::vectorize(jx);
    // Schrödinger states and J_x ρ(τ') on the grid.
    let mut rho = linalg::vectorize(rho0.matrix());
    let d = liouvillian.sector().dimension();
    let mut means = Vec::with_capacity(m + 1);
    let mut sources = Vec::with_capacity(m + 1);
    for _ in 0..=m {
        let r = linalg::devectorize(&rho, d);
        means.push(linalg::trace(&(jx * &r)).re);
        sources.push(linalg::vectorize(&(jx * &r)));
        rho = linalg::mat_vec(&step, &rho);
    }
    // Heisenberg-evolved observable e^{L†kh} J_x.
    let mut lag = Vec::with_capacity(m + 1);
    let mut w = vj.clone();
    for _ in 0..=m {
        lag.push(w.clone());
        w = linalg::mat_vec(&step_adj, &w);
    }
    let g = |i: usize, j: usize| -> f64 {
        let c = linalg::dot_conj(&lag[i - j], &sources[j]);
        2.0 * c.re - 2.0 * means[i] * means[j]
    };
    let mut fine_rows = Vec::with_capacity(m + 1);
    let mut coarse_rows = Vec::with_capacity(m / 2 + 1);
    let mut table = vec![Vec::new(); m + 1];
    for i in 0..=m {
        table[i] = (0..=i).map(|j| g(i, j)).collect::<Vec<f64>>();
    }
    for (i, row) in table.iter().enumerate() {
        fine_rows.push(trapezoid(row, h));
        if i % 2 == 0 {
            let sub: Vec<f64> = row.iter().step_by(2).copied().collect();
            coarse_rows.push(trapezoid(&sub, 2.0 * h));
        }
    }
    let fine = 4.0 * trapezoid(&fine_rows, h);
    let coarse = 4.0 * trapezoid(&coarse_rows, 2.0 * h);
    if !fine.is_finite() {
        return Err(Error::Propagation(fine));
    }
    Ok((fine, coarse))
}

fn trapezoid(ys: &[f64], h: f64) -> f64 {
    match ys.len() {
        0 | 1 => 0.0,
        n => h * (pairwise_sum(&ys[1..n - 1]) + 0.5 * (ys[0] + ys[n - 1])),
    }
}

/// `4∫_0^T (T − t) C(t) dt`.
fn stationary_finite_t(
    liouvillian: &Liouvillian,
    rho: &DensityOperator,
    jx: &CMat,
    horizon: f64,
) -> Result<f64> {
    let x0 = linalg::vectorize(&connected_source(rho, jx));
    let vj = linalg::vectorize(jx);
    let scale = liouvillian.omega().max(liouvillian.kappa());
    let mut panels = ((horizon * scale).ceil() as usize).max(4);
    let mut prev: Option<f64> = None;
    for _ in 0..12 {
        let (i0, i1, err, _) =
            integrate_correlation(liouvillian.generator(), &x0, &vj, horizon, panels);
        let f = 4.0 * (horizon * i0 - i1);
        if err * horizon < 1e-10 * f.abs().max(1e-300) {
            return Ok(f);
        }
        if let Some(p) = prev {
            if (p - f).abs() < 1e-10 * f.abs() {
                return Ok(f);
            }
        }
        prev = Some(f);
        panels *= 2;
    }
    Err(Error::Quadrature {
        error: prev.unwrap_or(f64::NAN),
        panels,
    })
}

/// Eigenvalue pairs with `p_a + p_b` below this are skipped.
pub const SLD_CUTOFF: f64 = 1e-12;

/// `Σ 2|⟨a|∂ρ|b⟩|²/(p_a + p_b)` over eigenpairs of `rho`.
pub fn qfi_of_state(rho: &DensityOperator, drho: &CMat) -> Result<f64> {
    let tol = 1e-8;
    let tr = linalg::trace(drho);
    if tr.norm() > tol {
        return Err(Error::InconsistentDerivative(tr.norm()));
    }
    if linalg::hermiticity_defect(drho) > tol {
        return Err(Error::InconsistentDerivative(linalg::hermiticity_defect(drho)));
    }
    let (p, u) = linalg::eigh(rho.matrix())?;
    let m = &(&linalg::dagger(&u) * drho) * &u;
    let d = p.len();
    let mut terms = Vec::with_capacity(d * d);
    for a in 0..d {
        for b in 0..d {
            let s = p[a] + p[b];
            if s > SLD_CUTOFF {
                terms.push(2.0 * m[(a, b)].norm_sqr() / s);
            }
        }
    }
    Ok(pairwise_sum(&terms))
}

/// `∂ρ_ss/∂ω` by a Richardson-extrapolated central difference.
pub fn steady_state_derivative(
    sector: SpinSector,
    omega: f64,
    kappa: f64,
    step: f64,
) -> Result<CMat> {
    if !(step > 0.0) || omega < step {
        return Err(Error::param("step", format!("need 0 < step <= omega, got {step}")));
    }
    let central = |delta: f64| -> Result<CMat> {
        let plus = steady_state(&build_liouvillian(sector, omega + delta, kappa)?)?;
        let minus = steady_state(&build_liouvillian(sector, omega - delta, kappa)?)?;
        Ok(linalg::scale(
            &(plus.matrix() - minus.matrix()),
            re(0.5 / delta),
        ))
    };
    let wide = central(step)?;
    let narrow = central(0.5 * step)?;
    let mut out = linalg::scale(&narrow, re(4.0 / 3.0));
    linalg::axpy(&mut out, re(-1.0 / 3.0), &wide);
    Ok(linalg::hermitian_part(&out))
}

/// QFI of the steady state with respect to ω, step `1e-4·κ`.
pub fn steady_state_qfi(sector: SpinSector, omega: f64, kappa: f64) -> Result<f64> {
    let rho = steady_state(&build_liouvillian(sector, omega, kappa)?)?;
    let drho = steady_state_derivative(sector, omega, kappa, 1e-4 * kappa)?;
    qfi_of_state(&rho, &drho)
}

/// `κt, C` samples.
pub fn write_correlation_csv<W: Write>(samples: &[(f64, f64)], kappa: f64, mut w: W) -> Result<()> {
    writeln!(w, "# kappa={kappa}")?;
    writeln!(w, "kappa_t,c")?;
    for &(t, c) in samples {
        writeln!(w, "{:.12e},{:.15e}", kappa * t, c)?;
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RateSweepRow {
    pub n_spins: usize,
    pub f_global: f64,
    pub method: RateMethod,
    pub residual: f64,
}

/// `N, f_global, method, residual`, rates in units of `1/κ`.
pub fn write_rate_sweep_csv<W: Write>(rows: &[RateSweepRow], kappa: f64, mut w: W) -> Result<()> {
    writeln!(w, "# kappa={kappa}")?;
    writeln!(w, "N,f_global,method,residual")?;
    for r in rows {
        writeln!(
            w,
            "{},{:.15e},{},{:.3e}",
            r.n_spins,
            r.f_global * kappa,
            r.method,
            r.residual * kappa
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liouvillian::extreme_limit_generator;
    use crate::spectrum::spectral_decomposition;
    use crate::spin::{dark_state, fully_excited};
    use approx::assert_relative_eq;
    use faer::Mat;

    fn sector(n: usize) -> SpinSector {
        SpinSector::new(n).unwrap()
    }

    fn model_for(l: &Liouvillian) -> (CorrelationModel, DensityOperator, CMat) {
        let rho = steady_state(l).unwrap();
        let spec = spectral_decomposition(l).unwrap();
        let jx = build_spin_operators(l.sector()).jx.into_matrix();
        (build_correlation_model(&spec, &rho, &jx).unwrap(), rho, jx)
    }

    #[test]
    fn analytic_values() {
        assert_relative_eq!(analytic_fglobal(2, 1.0), 32.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(analytic_fglobal(1, 2.0), 1.0, max_relative = 1e-15);
        let r = analytic_fglobal(2000, 1.0) / analytic_fglobal(1000, 1.0);
        assert!((r - 8.0).abs() < 1e-2);
    }

    #[test]
    fn extreme_limit_single_mode() {
        for n in [2usize, 4, 7] {
            let l = extreme_limit_generator(sector(n), 5.0, 1.0).unwrap();
            let (model, _, _) = model_for(&l);
            let big = model.significant_modes(1e-10);
            assert_eq!(big.len(), 1, "N={n}");
            let a = n as f64 * (n as f64 + 2.0) / 12.0;
            assert_relative_eq!(big[0].amplitude.re, a, max_relative = 1e-9);
            assert_relative_eq!(big[0].gamma, 1.0 / n as f64, max_relative = 1e-9);
            assert_relative_eq!(model.value_at_zero, 2.0 * a, max_relative = 1e-12);
            let f = global_rate_spectral(&model).unwrap();
            assert_relative_eq!(f.value, analytic_fglobal(n, 1.0), max_relative = 1e-9);
        }
    }

    #[test]
    fn dark_state_correlation_at_zero() {
        for n in [1usize, 3, 6, 12] {
            let s = sector(n);
            let l = build_liouvillian(s, 0.0, 1.0).unwrap();
            let jx = build_spin_operators(s).jx.into_matrix();
            let c0 = correlation_function(&l, &dark_state(s), &jx, 0.0).unwrap();
            assert_relative_eq!(c0, n as f64 / 2.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn model_matches_propagation() {
        let l = build_liouvillian(sector(8), 4.0, 1.0).unwrap();
        let (model, rho, jx) = model_for(&l);
        assert!(model.steady_amplitude.abs() < 1e-10);
        for k in 0..20 {
            let t = 0.37 * k as f64 - 2.0;
            let direct = correlation_function(&l, &rho, &jx, t).unwrap();
            let m = model.evaluate(t);
            assert!((m - direct).abs() <= 1e-6 * direct.abs().max(1e-3), "t={t}");
            assert_eq!(model.evaluate(t), model.evaluate(-t));
        }
    }

    #[test]
    fn correlation_decays() {
        let l = build_liouvillian(sector(6), 4.0, 1.0).unwrap();
        let rho = steady_state(&l).unwrap();
        let jx = build_spin_operators(sector(6)).jx.into_matrix();
        let gap = -liouvillian_eigenvalues(&l).unwrap()[1].re;
        let c = correlation_function(&l, &rho, &jx, 10.0 * 6.0 / gap).unwrap();
        assert!(c.abs() < 1e-6);
    }

    #[test]
    fn time_integral_agrees_with_spectral() {
        let l = build_liouvillian(sector(6), 4.0, 1.0).unwrap();
        let (model, _, _) = model_for(&l);
        let spectral = global_rate_spectral(&model).unwrap().value;
        let ti = global_rate_time_integral(&l, &TimeIntegralOptions::default())
            .unwrap()
            .value;
        assert_relative_eq!(ti, spectral, max_relative = 1e-4);
    }

    #[test]
    fn time_integral_extreme_limit() {
        let l = extreme_limit_generator(sector(4), 6.0, 1.0).unwrap();
        let f = global_rate_time_integral(&l, &TimeIntegralOptions::default()).unwrap();
        assert_relative_eq!(f.value, 64.0, max_relative = 1e-6);
    }

    #[test]
    fn static_phase_below_analytic() {
        let l = build_liouvillian(sector(6), 0.5, 1.0).unwrap();
        let f = global_rate_time_integral(&l, &TimeIntegralOptions::default())
            .unwrap()
            .value;
        assert!(f > 0.0 && f < analytic_fglobal(6, 1.0));
    }

    #[test]
    fn short_horizon_rejected() {
        let l = build_liouvillian(sector(4), 4.0, 1.0).unwrap();
        let opts = TimeIntegralOptions {
            horizon: Some(0.5),
            ..Default::default()
        };
        assert!(matches!(
            global_rate_time_integral(&l, &opts),
            Err(Error::HorizonTooShort { .. })
        ));
    }

    #[test]
    fn finite_time_unitary_limit() {
        let s = sector(1);
        let l = build_liouvillian(s, 1.0, 1e-9).unwrap();
        for t in [0.5, 1.0, 2.0] {
            let f = global_qfi_finite_t(&l, &fully_excited(s), t).unwrap();
            assert_relative_eq!(f, t * t, max_relative = 1e-6);
        }
        assert_eq!(global_qfi_finite_t(&l, &fully_excited(s), 0.0).unwrap(), 0.0);
        assert!(global_qfi_finite_t(&l, &fully_excited(s), -1.0).is_err());
    }

    #[test]
    fn finite_time_slope_approaches_rate() {
        let n = 2;
        let l = build_liouvillian(sector(n), 4.0, 1.0).unwrap();
        let (model, rho, _) = model_for(&l);
        let rate = global_rate_spectral(&model).unwrap().value;
        let t = 50.0 * n as f64;
        let f = global_qfi_finite_t(&l, &rho, t).unwrap();
        assert!((f / t - rate).abs() < 0.02 * rate);
    }

    #[test]
    fn finite_time_general_matches_stationary() {
        // Force the two-time grid on a stationary state.
        let l = build_liouvillian(sector(2), 2.0, 1.0).unwrap();
        let rho = steady_state(&l).unwrap();
        let stationary = global_qfi_finite_t(&l, &rho, 3.0).unwrap();
        let opts = FiniteTimeOptions {
            stationary_tolerance: -1.0,
            ..Default::default()
        };
        let grid = global_qfi_finite_t_with(&l, &rho, 3.0, &opts).unwrap();
        assert_relative_eq!(grid, stationary, max_relative = 1e-5);
    }

    #[test]
    fn qubit_great_circle() {
        let s = sector(1);
        let theta: f64 = 0.7;
        let psi = [(theta / 2.0).cos(), (theta / 2.0).sin()];
        let dpsi = [-(theta / 2.0).sin() / 2.0, (theta / 2.0).cos() / 2.0];
        let rho = Mat::from_fn(2, 2, |i, j| re(psi[i] * psi[j]));
        let drho = Mat::from_fn(2, 2, |i, j| re(dpsi[i] * psi[j] + psi[i] * dpsi[j]));
        let rho = DensityOperator::new(s, rho, 1e-12).unwrap();
        assert_relative_eq!(qfi_of_state(&rho, &drho).unwrap(), 1.0, max_relative = 1e-10);
    }

    #[test]
    fn qfi_of_mixed_state_with_zero_derivative() {
        let s = sector(3);
        let rho = crate::spin::maximally_mixed(s);
        assert_eq!(qfi_of_state(&rho, &linalg::zeros(4, 4)).unwrap(), 0.0);
        let bad = linalg::identity(4);
        assert!(matches!(
            qfi_of_state(&rho, &bad),
            Err(Error::InconsistentDerivative(_))
        ));
    }

    #[test]
    fn csv_exports() {
        let mut buf = Vec::new();
        write_correlation_csv(&[(0.0, 1.0), (0.5, 0.2)], 2.0, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(3).unwrap().starts_with("1.0"));
        let mut buf = Vec::new();
        let rows = [RateSweepRow {
            n_spins: 4,
            f_global: 64.0,
            method: RateMethod::Analytic,
            residual: 0.0,
        }];
        write_rate_sweep_csv(&rows, 1.0, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("4,6.4"));
        assert!(text.contains(",analytic,"));
    }
}
