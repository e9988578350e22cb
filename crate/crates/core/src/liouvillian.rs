//! Vectorized generator of the collective-decay master equation
//!
//! ```text
//! dρ/dt = −iω[J_x, ρ] + Γ D[J_-]ρ,    Γ = 2κ/N,
//! D[c]ρ = cρc† − ½{c†c, ρ},
//! ```
//!
//! acting on column-stacked operators. Steady states, superspin operators
//! and the extreme-limit generator also live here; the spectral
//! decomposition is in [`crate::spectrum`].

use faer::linalg::solvers::Solve;
use faer::{c64, Mat};

use crate::error::{Error, Result};
use crate::linalg::{self, kron, re, CMat, I, ONE, ZERO};
use crate::spin::{build_spin_operators, DensityOperator, SpinOperators, SpinSector};

/// Generators up to this dimension use an SVD for the null space; above
/// it a bordered LU solve is used.
pub const SVD_STEADY_STATE_CAP: usize = 1100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GeneratorKind {
    /// Dissipator weighted by `2κ/N`.
    Scaled,
    /// Dissipator weighted by `2κ`, no thermodynamic-limit rescaling.
    Unscaled,
    /// First-order expansion in `κ/ω` built from superspin operators.
    ExtremeLimit,
}

#[derive(Clone, Debug)]
pub struct Liouvillian {
    sector: SpinSector,
    omega: f64,
    kappa: f64,
    kind: GeneratorKind,
    generator: CMat,
}

fn check_rates(omega: f64, kappa: f64) -> Result<()> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::param("kappa", format!("must be > 0, got {kappa}")));
    }
    if !(omega >= 0.0) || !omega.is_finite() {
        return Err(Error::param("omega", format!("must be >= 0, got {omega}")));
    }
    Ok(())
}

/// `vec(A X B)` superoperator: `B^T ⊗ A`.
fn sandwich(a: &CMat, b: &CMat) -> CMat {
    kron(&linalg::transpose(b), a)
}

/// Superoperator for `X ↦ −i[H, X] + Σ_k rate_k D[c_k]X`.
pub fn lindblad_superoperator(h: &CMat, jumps: &[(f64, &CMat)]) -> CMat {
    let d = h.nrows();
    let id = linalg::identity(d);
    let mut gen = linalg::scale(&(&sandwich(h, &id) - &sandwich(&id, h)), -I);
    for &(rate, c) in jumps {
        let cd = linalg::dagger(c);
        let cdc = &cd * c;
        linalg::axpy(&mut gen, re(rate), &sandwich(c, &cd));
        linalg::axpy(&mut gen, re(-0.5 * rate), &sandwich(&cdc, &id));
        linalg::axpy(&mut gen, re(-0.5 * rate), &sandwich(&id, &cdc));
    }
    gen
}

/// The generator of the boundary-time-crystal master equation.
pub fn build_liouvillian(sector: SpinSector, omega: f64, kappa: f64) -> Result<Liouvillian> {
    build_with_decay(sector, omega, kappa, GeneratorKind::Scaled)
}

/// Same dynamics with the collective decay weighted by `2κ` instead of
/// `2κ/N`; with `ω̃ = Nω` this is the time-rescaled equation.
pub fn build_unscaled_liouvillian(
    sector: SpinSector,
    omega: f64,
    kappa: f64,
) -> Result<Liouvillian> {
    build_with_decay(sector, omega, kappa, GeneratorKind::Unscaled)
}

fn build_with_decay(
    sector: SpinSector,
    omega: f64,
    kappa: f64,
    kind: GeneratorKind,
) -> Result<Liouvillian> {
    check_rates(omega, kappa)?;
    let ops = build_spin_operators(sector);
    let rate = match kind {
        GeneratorKind::Unscaled => 2.0 * kappa,
        _ => 2.0 * kappa / sector.n_spins() as f64,
    };
    let h = linalg::scale(ops.jx.matrix(), re(omega));
    let generator = lindblad_superoperator(&h, &[(rate, ops.jminus.matrix())]);
    Ok(Liouvillian {
        sector,
        omega,
        kappa,
        kind,
        generator,
    })
}

/// `L ≈ −iω S_x − (κ/2N)(S_x² + S²)`.
///
/// The Hamiltonian part carries the same sign as the exact generator, so
/// mode `(s, s_x)` has eigenvalue `−(κ/2N)(s(s+1) + s_x²) − iω s_x`; the
/// spectrum as a set is unchanged under `s_x → −s_x`.
pub fn extreme_limit_generator(sector: SpinSector, omega: f64, kappa: f64) -> Result<Liouvillian> {
    check_rates(omega, kappa)?;
    let sup = build_superspin(sector);
    let mut generator = linalg::scale(&sup.sx, -I * omega);
    let sx2 = &sup.sx * &sup.sx;
    let w = -kappa / (2.0 * sector.n_spins() as f64);
    linalg::axpy(&mut generator, re(w), &sx2);
    linalg::axpy(&mut generator, re(w), &sup.s_sq);
    Ok(Liouvillian {
        sector,
        omega,
        kappa,
        kind: GeneratorKind::ExtremeLimit,
        generator,
    })
}

impl Liouvillian {
    pub fn sector(&self) -> SpinSector {
        self.sector
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn kind(&self) -> GeneratorKind {
        self.kind
    }

    /// `(N+1)²`.
    pub fn dim(&self) -> usize {
        self.generator.nrows()
    }

    pub fn generator(&self) -> &CMat {
        &self.generator
    }

    /// `L(X)` for an operator `X` on the sector.
    pub fn apply(&self, x: &CMat) -> CMat {
        let d = self.sector.dimension();
        linalg::devectorize(&linalg::mat_vec(&self.generator, &linalg::vectorize(x)), d)
    }

    pub fn apply_vec(&self, v: &[c64]) -> Vec<c64> {
        linalg::mat_vec(&self.generator, v)
    }

    /// Generator of the Heisenberg-picture evolution, `L†` with respect to
    /// the Hilbert-Schmidt product.
    pub fn adjoint_generator(&self) -> CMat {
        linalg::dagger(&self.generator)
    }

    /// `∂L/∂ω = −i[J_x, ·]` as a superoperator.
    pub fn omega_derivative(&self) -> CMat {
        let ops = build_spin_operators(self.sector);
        let id = linalg::identity(self.sector.dimension());
        let jx = ops.jx.matrix();
        linalg::scale(&(&sandwich(jx, &id) - &sandwich(&id, jx)), -I)
    }

    pub fn spin_operators(&self) -> SpinOperators {
        build_spin_operators(self.sector)
    }
}

/// Commutator superoperators `S_α vec(X) = vec([J_α, X])` and their total
/// square.
#[derive(Clone, Debug)]
pub struct SuperspinSet {
    pub sector: SpinSector,
    pub sx: CMat,
    pub sy: CMat,
    pub sz: CMat,
    pub s_sq: CMat,
}

/// Superspin operators in the column-stacking convention. `S_α` is written
/// `J_α ⊗ 1 − 1 ⊗ J_α^T` for row stacking; with column stacking the same
/// commutator action is `1 ⊗ J_α − J_α^T ⊗ 1`.
pub fn build_superspin(sector: SpinSector) -> SuperspinSet {
    let ops = build_spin_operators(sector);
    let id = linalg::identity(sector.dimension());
    let sup = |j: &CMat| &kron(&id, j) - &kron(&linalg::transpose(j), &id);
    let sx = sup(ops.jx.matrix());
    let sy = sup(ops.jy.matrix());
    let sz = sup(ops.jz.matrix());
    let s_sq = &(&(&sx * &sx) + &(&sy * &sy)) + &(&sz * &sz);
    SuperspinSet {
        sector,
        sx,
        sy,
        sz,
        s_sq,
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SteadyStateOptions {
    /// Singular values below this (in units of κ) count as null directions.
    pub null_tolerance: f64,
    /// PSD / trace tolerance on the returned state.
    pub state_tolerance: f64,
}

impl Default for SteadyStateOptions {
    fn default() -> Self {
        Self {
            null_tolerance: 1e-8,
            state_tolerance: 1e-8,
        }
    }
}

pub fn steady_state(liouvillian: &Liouvillian) -> Result<DensityOperator> {
    steady_state_with(liouvillian, &SteadyStateOptions::default())
}

pub fn steady_state_with(
    liouvillian: &Liouvillian,
    opts: &SteadyStateOptions,
) -> Result<DensityOperator> {
    let dim = liouvillian.dim();
    let d = liouvillian.sector.dimension();
    let v = if dim <= SVD_STEADY_STATE_CAP {
        null_vector_svd(liouvillian, opts.null_tolerance)?
    } else {
        null_vector_bordered(liouvillian)
    };
    let rho = linalg::devectorize(&v, d);
    DensityOperator::from_approximate(liouvillian.sector, rho, opts.state_tolerance)
}

fn null_vector_svd(liouvillian: &Liouvillian, tol: f64) -> Result<Vec<c64>> {
    let svd = liouvillian
        .generator
        .svd()
        .map_err(|e| Error::Eigensolver(format!("svd: {e:?}")))?;
    let s: Vec<f64> = svd.S().column_vector().iter().map(|x| x.re).collect();
    let threshold = tol * liouvillian.kappa;
    let count = s.iter().filter(|&&x| x < threshold).count();
    if count > 1 {
        return Err(Error::NonUniqueSteadyState {
            count,
            tolerance: threshold,
        });
    }
    let last = s.len() - 1;
    let v = svd.V();
    Ok((0..v.nrows()).map(|i| v[(i, last)]).collect())
}

/// Solves `L x = 0` with the first equation replaced by `Tr[X] = 1`.
fn null_vector_bordered(liouvillian: &Liouvillian) -> Vec<c64> {
    let d = liouvillian.sector.dimension();
    let dim = liouvillian.dim();
    let mut a = liouvillian.generator.clone();
    // Tr∘L = 0, so the rows are linearly dependent and any one can go.
    for j in 0..dim {
        a[(0, j)] = ZERO;
    }
    for k in 0..d {
        a[(0, k + k * d)] = ONE;
    }
    let mut rhs = Mat::<c64>::zeros(dim, 1);
    rhs[(0, 0)] = ONE;
    let lu = a.partial_piv_lu();
    let mut x = lu.solve(&rhs);
    // One step of iterative refinement.
    let resid = &rhs - &(&a * &x);
    let corr = lu.solve(&resid);
    x = &x + &corr;
    (0..dim).map(|i| x[(i, 0)]).collect()
}

/// `‖L(ρ)‖_F`.
pub fn residual(liouvillian: &Liouvillian, rho: &CMat) -> f64 {
    linalg::frobenius(&liouvillian.apply(rho))
}

/// Unconditional evolution `exp(L t) ρ0` via the dense propagator.
pub fn evolve(liouvillian: &Liouvillian, rho0: &CMat, t: f64) -> CMat {
    let prop = linalg::expm(&linalg::scale(&liouvillian.generator, re(t)));
    let d = liouvillian.sector.dimension();
    linalg::devectorize(&linalg::mat_vec(&prop, &linalg::vectorize(rho0)), d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs, trace, vectorize};
    use crate::spin::{dark_state, maximally_mixed};

    fn sector(n: usize) -> SpinSector {
        SpinSector::new(n).unwrap()
    }

    fn random_hermitian(d: usize, seed: u64) -> CMat {
        // Small deterministic LCG, enough for test inputs.
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let a = Mat::from_fn(d, d, |_, _| c64::new(next(), next()));
        linalg::hermitian_part(&a)
    }

    #[test]
    fn rejects_nonpositive_kappa() {
        let e = build_liouvillian(sector(3), 1.0, 0.0).unwrap_err();
        assert!(matches!(e, Error::InvalidParameter { name: "kappa", .. }));
        assert!(build_liouvillian(sector(3), 1.0, -2.0).is_err());
        assert!(build_liouvillian(sector(3), -1.0, 1.0).is_err());
    }

    #[test]
    fn trace_and_hermiticity_preserved() {
        for (n, omega) in [(1, 0.0), (3, 1.0), (5, 4.0), (8, 0.5)] {
            let l = build_liouvillian(sector(n), omega, 1.0).unwrap();
            for seed in 0..25 {
                let x = random_hermitian(n + 1, seed);
                let y = l.apply(&x);
                assert!(trace(&y).norm() < 1e-10);
                assert!(linalg::hermiticity_defect(&y) < 1e-10);
            }
        }
    }

    #[test]
    fn dissipator_matches_direct_formula() {
        let s = sector(3);
        let ops = build_spin_operators(s);
        let l = build_liouvillian(s, 2.5, 0.7).unwrap();
        let x = random_hermitian(4, 11);
        let jm = ops.jminus.matrix();
        let jp = ops.jplus.matrix();
        let jx = ops.jx.matrix();
        let rate = 2.0 * 0.7 / 3.0;
        let mut want = linalg::scale(&linalg::commutator(jx, &x), -I * 2.5);
        let jump = &(jm * &x) * jp;
        let anti = &(&(jp * jm) * &x) + &(&x * &(jp * jm));
        linalg::axpy(&mut want, re(rate), &jump);
        linalg::axpy(&mut want, re(-0.5 * rate), &anti);
        assert!(max_abs(&(&l.apply(&x) - &want)) < 1e-13);
    }

    #[test]
    fn steady_state_at_zero_drive_is_dark() {
        for n in [1, 2, 5, 9] {
            let s = sector(n);
            let l = build_liouvillian(s, 0.0, 1.0).unwrap();
            let rho = steady_state(&l).unwrap();
            assert!(max_abs(&(rho.matrix() - dark_state(s).matrix())) < 1e-9, "N={n}");
        }
    }

    #[test]
    fn steady_state_residual_and_positivity() {
        let l = build_liouvillian(sector(10), 4.0, 1.0).unwrap();
        let rho = steady_state(&l).unwrap();
        assert!(residual(&l, rho.matrix()) < 1e-10);
        let min = rho.eigenvalues().unwrap().into_iter().fold(f64::INFINITY, f64::min);
        assert!(min > -1e-12);
        assert!((trace(rho.matrix()).re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn steady_state_deep_time_crystal_is_nearly_mixed() {
        let s = sector(6);
        let l = build_liouvillian(s, 1e3, 1.0).unwrap();
        let rho = steady_state(&l).unwrap();
        let dist = linalg::trace_distance(rho.matrix(), maximally_mixed(s).matrix()).unwrap();
        assert!(dist < 0.05, "distance {dist}");
    }

    #[test]
    fn bordered_solver_agrees_with_svd() {
        let l = build_liouvillian(sector(7), 1.3, 1.0).unwrap();
        let a = null_vector_svd(&l, 1e-8).unwrap();
        let b = null_vector_bordered(&l);
        let d = 8;
        let ra = linalg::devectorize(&a, d);
        let ra = linalg::scale(&ra, re(1.0) / trace(&ra));
        let rb = linalg::devectorize(&b, d);
        assert!(max_abs(&(&ra - &rb)) < 1e-11);
    }

    #[test]
    fn superspin_acts_as_commutator() {
        let s = sector(4);
        let sup = build_superspin(s);
        let ops = build_spin_operators(s);
        let x = random_hermitian(5, 3);
        let got = linalg::devectorize(&linalg::mat_vec(&sup.sy, &vectorize(&x)), 5);
        let want = linalg::commutator(ops.jy.matrix(), &x);
        assert!(max_abs(&(&got - &want)) < 1e-13);
    }

    #[test]
    fn jx_is_joint_superspin_eigenvector() {
        for n in 1..=10 {
            let s = sector(n);
            let sup = build_superspin(s);
            let vjx = vectorize(build_spin_operators(s).jx.matrix());
            let a = linalg::mat_vec(&sup.sx, &vjx);
            assert!(a.iter().all(|z| z.norm() < 1e-12), "N={n}");
            let b = linalg::mat_vec(&sup.s_sq, &vjx);
            for (bi, vi) in b.iter().zip(&vjx) {
                assert!((bi - vi * 2.0).norm() < 1e-12, "N={n}");
            }
            assert!(linalg::hermiticity_defect(&sup.s_sq) < 1e-12);
        }
    }

    #[test]
    fn superspin_casimir_spectrum() {
        for n in 1..=6 {
            let sup = build_superspin(sector(n));
            let vals = linalg::eigvalsh(&sup.s_sq).unwrap();
            for v in vals {
                // v = s(s+1) for integer 0 ≤ s ≤ N
                let s = (-0.5 + (0.25 + v).sqrt()).round();
                assert!((s * (s + 1.0) - v).abs() < 1e-9, "N={n}, eigenvalue {v}");
                assert!(s >= 0.0 && s <= n as f64);
            }
        }
    }

    #[test]
    fn evolve_preserves_trace() {
        let s = sector(3);
        let l = build_liouvillian(s, 4.0, 1.0).unwrap();
        let rho = evolve(&l, dark_state(s).matrix(), 2.0);
        assert!((trace(&rho).re - 1.0).abs() < 1e-12);
    }
}
