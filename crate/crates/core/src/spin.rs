//! Collective spin operators in the symmetric (Dicke) sector of N spin-1/2
//! particles.
//!
//! The basis is the Dicke ladder `|j, m⟩` with `j = N/2`, ordered by
//! descending `m`: index `k` carries `m = j − k`, so `|j, j⟩` comes first and
//! the lowest-weight (dark) state `|j, −j⟩` is the last basis vector.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, re, CMat, I, ZERO};

/// Default tolerance for Hermiticity, trace and positivity checks.
pub const DEFAULT_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpinSector {
    n_spins: usize,
}

impl SpinSector {
    pub fn new(n_spins: usize) -> Result<Self> {
        if n_spins == 0 {
            return Err(Error::InvalidSector("N must be at least 1".into()));
        }
        Ok(Self { n_spins })
    }

    /// Accepts signed input from user-facing layers.
    pub fn from_signed(n_spins: i64) -> Result<Self> {
        if n_spins <= 0 {
            return Err(Error::InvalidSector(format!(
                "N must be at least 1, got {n_spins}"
            )));
        }
        Self::new(n_spins as usize)
    }

    pub fn n_spins(&self) -> usize {
        self.n_spins
    }

    pub fn dimension(&self) -> usize {
        self.n_spins + 1
    }

    /// Total angular momentum `j = N/2`.
    pub fn j(&self) -> f64 {
        self.n_spins as f64 / 2.0
    }

    /// Magnetic quantum number of basis index `k`.
    pub fn m(&self, k: usize) -> f64 {
        self.j() - k as f64
    }
}

/// An operator acting on a spin sector.
#[derive(Clone, Debug)]
pub struct Operator {
    sector: SpinSector,
    entries: CMat,
}

impl Operator {
    pub fn new(sector: SpinSector, entries: CMat) -> Result<Self> {
        let d = sector.dimension();
        if entries.nrows() != d || entries.ncols() != d {
            return Err(Error::param(
                "entries",
                format!(
                    "expected {d}x{d}, got {}x{}",
                    entries.nrows(),
                    entries.ncols()
                ),
            ));
        }
        Ok(Self { sector, entries })
    }

    pub fn sector(&self) -> SpinSector {
        self.sector
    }

    pub fn matrix(&self) -> &CMat {
        &self.entries
    }

    pub fn into_matrix(self) -> CMat {
        self.entries
    }

    pub fn adjoint(&self) -> Operator {
        Operator {
            sector: self.sector,
            entries: linalg::dagger(&self.entries),
        }
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        linalg::hermiticity_defect(&self.entries) <= tol
    }
}

/// The full set of collective angular momentum operators.
#[derive(Clone, Debug)]
pub struct SpinOperators {
    pub sector: SpinSector,
    pub jx: Operator,
    pub jy: Operator,
    pub jz: Operator,
    pub jplus: Operator,
    pub jminus: Operator,
}

impl SpinOperators {
    /// `J_+ J_-`, the jump-rate operator of collective decay.
    pub fn jplus_jminus(&self) -> CMat {
        self.jplus.matrix() * self.jminus.matrix()
    }
}

/// Ladder construction of `J_x, J_y, J_z, J_±` in the descending-m basis.
pub fn build_spin_operators(sector: SpinSector) -> SpinOperators {
    let d = sector.dimension();
    let j = sector.j();
    let mut jplus = linalg::zeros(d, d);
    for k in 1..d {
        // J_+ |m⟩ = sqrt(j(j+1) − m(m+1)) |m+1⟩ with m = j − k, m+1 at index k−1.
        let m = sector.m(k);
        jplus[(k - 1, k)] = re((j * (j + 1.0) - m * (m + 1.0)).sqrt());
    }
    let jminus = linalg::dagger(&jplus);
    let jx = Mat::from_fn(d, d, |r, c| (jplus[(r, c)] + jminus[(r, c)]) * 0.5);
    let jy = Mat::from_fn(d, d, |r, c| (jplus[(r, c)] - jminus[(r, c)]) * (-0.5 * I));
    let jz = Mat::from_fn(d, d, |r, c| if r == c { re(sector.m(r)) } else { ZERO });
    let wrap = |entries| Operator { sector, entries };
    SpinOperators {
        sector,
        jx: wrap(jx),
        jy: wrap(jy),
        jz: wrap(jz),
        jplus: wrap(jplus),
        jminus: wrap(jminus),
    }
}

/// A validated density operator: Hermitian, unit trace, positive
/// semidefinite up to tolerance.
#[derive(Clone, Debug)]
pub struct DensityOperator {
    sector: SpinSector,
    entries: CMat,
}

impl DensityOperator {
    pub fn new(sector: SpinSector, entries: CMat, tol: f64) -> Result<Self> {
        let op = Operator::new(sector, entries)?;
        let herm = linalg::hermiticity_defect(op.matrix());
        if herm > tol {
            return Err(Error::InvalidState(format!("not Hermitian (defect {herm:e})")));
        }
        let tr = linalg::trace(op.matrix());
        if (tr.re - 1.0).abs() > tol || tr.im.abs() > tol {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let min = linalg::eigvalsh(op.matrix())?
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        if min < -tol {
            return Err(Error::InvalidState(format!("negative eigenvalue {min:e}")));
        }
        Ok(Self {
            sector,
            entries: op.entries,
        })
    }

    /// Hermitize, renormalize and clip small negative eigenvalues; fails if
    /// the negative part exceeds `tol`.
    pub fn from_approximate(sector: SpinSector, entries: CMat, tol: f64) -> Result<Self> {
        let h = linalg::hermitian_part(&entries);
        let tr = linalg::trace(&h).re;
        if tr.abs() < f64::MIN_POSITIVE {
            return Err(Error::InvalidState("zero trace".into()));
        }
        let h = linalg::scale(&h, re(1.0 / tr));
        let (vals, vecs) = linalg::eigh(&h)?;
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -tol {
            return Err(Error::InvalidState(format!("negative eigenvalue {min:e}")));
        }
        let entries = if min < 0.0 {
            let d = h.nrows();
            let clipped: Vec<f64> = vals.iter().map(|v| v.max(0.0)).collect();
            let total: f64 = clipped.iter().sum();
            Mat::from_fn(d, d, |r, c| {
                (0..d)
                    .map(|k| vecs[(r, k)] * vecs[(c, k)].conj() * (clipped[k] / total))
                    .sum()
            })
        } else {
            h
        };
        Ok(Self { sector, entries })
    }

    pub fn sector(&self) -> SpinSector {
        self.sector
    }

    pub fn matrix(&self) -> &CMat {
        &self.entries
    }

    pub fn purity(&self) -> f64 {
        linalg::hs_inner(&self.entries, &self.entries).re
    }

    /// `Tr[A ρ]`, real part.
    pub fn expectation(&self, a: &CMat) -> f64 {
        linalg::trace(&(a * &self.entries)).re
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        linalg::eigvalsh(&self.entries)
    }
}

/// `identity / (N + 1)`.
pub fn maximally_mixed(sector: SpinSector) -> DensityOperator {
    let d = sector.dimension();
    DensityOperator {
        sector,
        entries: linalg::scale(&linalg::identity(d), re(1.0 / d as f64)),
    }
}

/// Projector onto the lowest-weight state `|j, −j⟩`.
pub fn dark_state(sector: SpinSector) -> DensityOperator {
    basis_projector(sector, sector.dimension() - 1)
}

/// Projector onto the highest-weight state `|j, j⟩`.
pub fn fully_excited(sector: SpinSector) -> DensityOperator {
    basis_projector(sector, 0)
}

fn basis_projector(sector: SpinSector, k: usize) -> DensityOperator {
    let d = sector.dimension();
    let mut entries = linalg::zeros(d, d);
    entries[(k, k)] = re(1.0);
    DensityOperator { sector, entries }
}
