//! Precision limits under inefficient detection, the collective advantage
//! coefficient and the time-rescaling consistency check.

use std::io::Write;

use faer::c64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, re, CMat};
use crate::liouvillian::{build_liouvillian, build_unscaled_liouvillian, steady_state, Liouvillian};
use crate::qfi::{build_correlation_model, global_rate_spectral};
use crate::spectrum::spectral_decomposition;
use crate::spin::{build_spin_operators, SpinSector};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum Bound {
    Finite(f64),
    /// Perfect detection: no finite limit from this argument.
    Divergent,
}

impl Bound {
    pub fn value(&self) -> f64 {
        match self {
            Bound::Finite(v) => *v,
            Bound::Divergent => f64::INFINITY,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Bound::Finite(_))
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::param("eta", format!("must lie in (0, 1], got {eta}")));
    }
    Ok(())
}

/// `N/(2(1−η)κ)` for `η < 1`.
pub fn inefficiency_bound(n_spins: usize, eta: f64, kappa: f64) -> Result<Bound> {
    check_eta(eta)?;
    if n_spins == 0 {
        return Err(Error::InvalidSector("N must be >= 1".into()));
    }
    if !(kappa > 0.0) {
        return Err(Error::param("kappa", format!("must be > 0, got {kappa}")));
    }
    if eta == 1.0 {
        return Ok(Bound::Divergent);
    }
    Ok(Bound::Finite(n_spins as f64 / (2.0 * (1.0 - eta) * kappa)))
}

/// The pair of operators whose constrained minimization yields the bound:
/// the rate is at most `4‖α‖` over all parameters with `β = 0`.
#[derive(Clone, Debug)]
pub struct BoundWitness {
    pub gamma1: c64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub alpha: CMat,
    pub beta: CMat,
    /// Largest-magnitude eigenvalue of the Hermitian `α`.
    pub alpha_norm: f64,
    /// Largest-magnitude eigenvalue of `β`.
    pub beta_residual: f64,
}

impl BoundWitness {
    pub fn rate_bound(&self) -> f64 {
        4.0 * self.alpha_norm
    }
}

/// `γ1 = −½√(N/(2(1−η)κ))`, `γ2 = γ3 = 0`.
pub fn optimal_gammas(n_spins: usize, eta: f64, kappa: f64) -> Result<(c64, f64, f64)> {
    check_eta(eta)?;
    if eta == 1.0 {
        return Err(Error::param("eta", "optimum exists only for eta < 1"));
    }
    let g1 = -0.5 * (n_spins as f64 / (2.0 * (1.0 - eta) * kappa)).sqrt();
    Ok((c64::new(g1, 0.0), 0.0, 0.0))
}

pub fn verify_bound_optimum(
    sector: SpinSector,
    eta: f64,
    kappa: f64,
    gamma1: c64,
    gamma2: f64,
    gamma3: f64,
) -> Result<BoundWitness> {
    check_eta(eta)?;
    let ops = build_spin_operators(sector);
    let d = sector.dimension();
    let noise = 2.0 * (1.0 - eta) * kappa / sector.n_spins() as f64;
    let root = noise.sqrt();
    let jp = ops.jplus.matrix();
    let jm = ops.jminus.matrix();
    let jpjm = ops.jplus_jminus();
    let mut lin = linalg::scale(jp, gamma1.conj());
    linalg::axpy(&mut lin, gamma1, jm);

    let mut alpha = linalg::scale(&linalg::identity(d), re(gamma1.norm_sqr()));
    linalg::axpy(&mut alpha, re(gamma2 * root), &lin);
    linalg::axpy(&mut alpha, re(gamma2 * gamma2 * noise), &jpjm);

    let mut beta = linalg::scale(&lin, re(root));
    linalg::axpy(&mut beta, re(gamma2 * noise), &jpjm);
    linalg::axpy(&mut beta, re(1.0), ops.jx.matrix());
    linalg::axpy(&mut beta, re(gamma3), &linalg::identity(d));

    let alpha_norm = linalg::hermitian_norm(&alpha)?;
    let beta_residual = linalg::hermitian_norm(&beta)?;
    Ok(BoundWitness {
        gamma1,
        gamma2,
        gamma3,
        alpha,
        beta,
        alpha_norm,
        beta_residual,
    })
}

/// A Monte Carlo rate with its standard error.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RateSample {
    pub value: f64,
    pub std_error: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Advantage {
    pub n_spins: usize,
    pub xi: f64,
    pub std_error: f64,
    /// `(2(1−η)κ f(1))^{-1}`, absent at `η = 1`.
    pub cap: Option<f64>,
}

/// `ξ_N = f(N)/(N f(1))` with delta-method error from independent inputs.
pub fn collective_advantage(
    f_n: RateSample,
    f_1: RateSample,
    n_spins: usize,
    eta: f64,
    kappa: f64,
) -> Result<Advantage> {
    check_eta(eta)?;
    if !(f_1.value > 0.0) {
        return Err(Error::InvalidBaseline(f_1.value));
    }
    let n = n_spins as f64;
    let xi = f_n.value / (n * f_1.value);
    let rel = ((f_n.std_error / f_n.value).powi(2) + (f_1.std_error / f_1.value).powi(2)).sqrt();
    let std_error = if f_n.value == 0.0 {
        f_n.std_error / (n * f_1.value)
    } else {
        xi.abs() * rel
    };
    let cap = (eta < 1.0).then(|| 1.0 / (2.0 * (1.0 - eta) * kappa * f_1.value));
    Ok(Advantage {
        n_spins,
        xi,
        std_error,
        cap,
    })
}

/// `(η, N, ξ, error, cap)` rows.
pub fn write_advantage_csv<W: Write>(rows: &[(f64, Advantage)], mut w: W) -> Result<()> {
    writeln!(w, "eta,N,xi,error,cap")?;
    for (eta, a) in rows {
        let cap = a.cap.map_or_else(|| "inf".to_string(), |c| format!("{c:.10e}"));
        writeln!(w, "{eta},{},{:.10e},{:.3e},{cap}", a.n_spins, a.xi, a.std_error)?;
    }
    Ok(())
}

/// Spectral global rate of an arbitrary generator.
pub fn spectral_rate(liouvillian: &Liouvillian) -> Result<f64> {
    let rho = steady_state(liouvillian)?;
    let spectrum = spectral_decomposition(liouvillian)?;
    let jx = build_spin_operators(liouvillian.sector()).jx.into_matrix();
    let model = build_correlation_model(&spectrum, &rho, &jx)?;
    Ok(global_rate_spectral(&model)?.value)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RescalingCheck {
    pub n_spins: usize,
    pub omega: f64,
    pub scaled_rate: f64,
    pub unscaled_rate: f64,
    pub ratio: f64,
}

/// Rate of the `2κ/N` model at `ω` against the rate of the `2κ` model at
/// `Nω`, measured per unit of its own (rescaled) time; the ratio is `N`.
pub fn rescaling_check(n_spins: usize, omega: f64, kappa: f64) -> Result<RescalingCheck> {
    let sector = SpinSector::new(n_spins)?;
    let scaled = spectral_rate(&build_liouvillian(sector, omega, kappa)?)?;
    let unscaled =
        spectral_rate(&build_unscaled_liouvillian(sector, n_spins as f64 * omega, kappa)?)?;
    Ok(RescalingCheck {
        n_spins,
        omega,
        scaled_rate: scaled,
        unscaled_rate: unscaled,
        ratio: scaled / unscaled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn bound_values() {
        assert_eq!(inefficiency_bound(10, 0.5, 1.0).unwrap(), Bound::Finite(10.0));
        assert_eq!(inefficiency_bound(3, 1.0, 1.0).unwrap(), Bound::Divergent);
        assert!(inefficiency_bound(3, 0.0, 1.0).is_err());
        assert!(inefficiency_bound(3, 1.2, 1.0).is_err());
        let a = inefficiency_bound(4, 0.99, 1.0).unwrap().value();
        let b = inefficiency_bound(4, 0.999, 1.0).unwrap().value();
        assert_relative_eq!(b / a, 10.0, max_relative = 1e-10);
        for n in [1, 7, 40] {
            let per = inefficiency_bound(n, 0.3, 2.0).unwrap().value() / n as f64;
            assert_relative_eq!(per, 1.0 / (2.0 * 0.7 * 2.0), max_relative = 1e-14);
        }
    }

    #[test]
    fn optimum_closes_constraint() {
        let s = SpinSector::new(5).unwrap();
        let (g1, g2, g3) = optimal_gammas(5, 0.5, 1.0).unwrap();
        let w = verify_bound_optimum(s, 0.5, 1.0, g1, g2, g3).unwrap();
        assert!(w.beta_residual < 1e-14);
        assert_relative_eq!(w.alpha_norm, 1.25, max_relative = 1e-14);
        assert_relative_eq!(w.rate_bound(), 5.0, max_relative = 1e-14);
    }

    #[test]
    fn perturbed_gammas_violate_constraint() {
        let s = SpinSector::new(3).unwrap();
        let (g1, _, _) = optimal_gammas(3, 0.4, 1.0).unwrap();
        let w = verify_bound_optimum(s, 0.4, 1.0, g1 * 1.01, 0.0, 0.0).unwrap();
        assert!(w.beta_residual > 1e-3);
        let w = verify_bound_optimum(s, 0.4, 1.0, g1, 0.2, 0.0).unwrap();
        assert!(w.beta_residual > 1e-3);
        // The γ2 term is proportional to J+J-.
        let ops = build_spin_operators(s);
        let noise = 2.0 * 0.6 / 3.0;
        let expected = linalg::scale(&ops.jplus_jminus(), re(0.2 * noise));
        assert!(linalg::max_abs(&(&w.beta - &expected)) < 1e-14);
    }

    #[test]
    fn advantage_basics() {
        let f1 = RateSample {
            value: 2.0,
            std_error: 0.1,
        };
        let a = collective_advantage(f1, f1, 1, 0.5, 1.0).unwrap();
        assert_eq!(a.xi, 1.0);
        assert_relative_eq!(a.cap.unwrap(), 0.5, max_relative = 1e-15);
        assert_relative_eq!(a.std_error, (2.0f64).sqrt() * 0.05, max_relative = 1e-12);
        let zero = RateSample {
            value: 0.0,
            std_error: 0.1,
        };
        assert!(matches!(
            collective_advantage(f1, zero, 2, 0.5, 1.0),
            Err(Error::InvalidBaseline(_))
        ));
        assert!(collective_advantage(f1, f1, 1, 1.0, 1.0).unwrap().cap.is_none());
    }

    #[test]
    fn rescaling_ratio() {
        assert_relative_eq!(rescaling_check(1, 4.0, 1.0).unwrap().ratio, 1.0, max_relative = 1e-9);
        assert_relative_eq!(rescaling_check(4, 4.0, 1.0).unwrap().ratio, 4.0, max_relative = 1e-6);
        assert_relative_eq!(rescaling_check(8, 1.0, 1.0).unwrap().ratio, 8.0, max_relative = 1e-6);
    }
}
