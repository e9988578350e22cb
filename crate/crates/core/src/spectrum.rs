//! Biorthogonal eigendecomposition of a [`Liouvillian`].
//!
//! Small generators are diagonalized densely. The generator preserves
//! Hermiticity, so in an orthonormal basis of Hermitian matrices it is a
//! real matrix; the real eigensolver then returns exact conjugate pairs and
//! the left eigenvectors follow from the inverse of the eigenvector matrix.
//! Beyond the dense cap the slowest modes are extracted by shift-invert
//! Arnoldi.

use std::io::Write;

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{c64, Mat};
use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, ONE, ZERO};
use crate::liouvillian::Liouvillian;
use crate::spin::SpinSector;

#[derive(Clone, Copy, Debug)]
pub struct SpectrumOptions {
    /// Largest generator dimension `(N+1)²` diagonalized densely.
    pub dense_cap: usize,
    /// Number of slow modes kept by the iterative route.
    pub slow_modes: usize,
    /// Eigenvalues closer than this (times κ) form a cluster.
    pub cluster_tolerance: f64,
    /// Clusters whose worst eigenvalue condition number exceeds this are
    /// reported.
    pub condition_warning: f64,
    /// Relative tolerance of the reconstruction and biorthonormality checks.
    pub reconstruction_tolerance: f64,
    /// Eigenvalues with `|λ| < null_tolerance·κ` count as steady.
    pub null_tolerance: f64,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self {
            dense_cap: 4096,
            slow_modes: 64,
            cluster_tolerance: 1e-9,
            condition_warning: 1e8,
            reconstruction_tolerance: 1e-4,
            null_tolerance: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpectrumMethod {
    Dense,
    ShiftInvert { shift: f64 },
}

/// Eigenvalues that nearly coincide and whose eigenvectors are badly
/// conditioned, i.e. the generator is close to defective there.
#[derive(Clone, Debug)]
pub struct ClusterDiagnostic {
    pub eigenvalue: c64,
    pub size: usize,
    pub condition: f64,
}

#[derive(Clone, Debug)]
pub struct LiouvillianSpectrum {
    sector: SpinSector,
    omega: f64,
    kappa: f64,
    method: SpectrumMethod,
    eigenvalues: Vec<c64>,
    right: CMat,
    left: CMat,
    steady_index: usize,
    null_count: usize,
    complete: bool,
    reconstruction_error: f64,
    clusters: Vec<ClusterDiagnostic>,
}

impl LiouvillianSpectrum {
    pub fn sector(&self) -> SpinSector {
        self.sector
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn method(&self) -> SpectrumMethod {
        self.method
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Sorted by ascending `|Re λ|`, then `|Im λ|`, positive `Im λ` first.
    pub fn eigenvalues(&self) -> &[c64] {
        &self.eigenvalues
    }

    pub fn eigenvalue(&self, k: usize) -> c64 {
        self.eigenvalues[k]
    }

    /// `γ_k = −Re λ_k`.
    pub fn decay_rate(&self, k: usize) -> f64 {
        -self.eigenvalues[k].re
    }

    /// `Ω_k = Im λ_k`.
    pub fn frequency(&self, k: usize) -> f64 {
        self.eigenvalues[k].im
    }

    /// Vectorized right eigen-operators, one per column.
    pub fn right_vectors(&self) -> &CMat {
        &self.right
    }

    /// Vectorized left eigen-operators, normalized so that
    /// `left[:,k]† right[:,l] = δ_kl`.
    pub fn left_vectors(&self) -> &CMat {
        &self.left
    }

    pub fn right_operator(&self, k: usize) -> CMat {
        let d = self.sector.dimension();
        Mat::from_fn(d, d, |r, c| self.right[(r + c * d, k)])
    }

    pub fn left_operator(&self, k: usize) -> CMat {
        let d = self.sector.dimension();
        Mat::from_fn(d, d, |r, c| self.left[(r + c * d, k)])
    }

    pub fn steady_index(&self) -> usize {
        self.steady_index
    }

    /// Number of eigenvalues within the null tolerance of zero.
    pub fn null_count(&self) -> usize {
        self.null_count
    }

    /// Smallest decay rate among the non-steady modes.
    pub fn gap(&self) -> Option<f64> {
        (0..self.len())
            .filter(|&k| k != self.steady_index)
            .map(|k| self.decay_rate(k))
            .reduce(f64::min)
    }

    /// False when only the slowest modes were extracted.
    pub fn is_complete(&self) -> bool {
        self.complete
    }

    pub fn reconstruction_error(&self) -> f64 {
        self.reconstruction_error
    }

    pub fn clusters(&self) -> &[ClusterDiagnostic] {
        &self.clusters
    }

    /// `‖l_k‖ ‖r_k‖` for the biorthonormal pair.
    pub fn condition_number(&self, k: usize) -> f64 {
        column_norm(&self.left, k) * column_norm(&self.right, k)
    }

    /// `max |l_k† r_l − δ_kl|` over all retained pairs.
    pub fn gram_defect(&self) -> f64 {
        let g = &linalg::dagger(&self.left) * &self.right;
        let n = g.nrows();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { ONE } else { ZERO };
                worst = worst.max((g[(i, j)] - target).norm());
            }
        }
        worst
    }

    /// Writes `k, Re λ_k, Im λ_k` in units of κ.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# N={} omega={} kappa={}", self.sector.n_spins(), self.omega, self.kappa)?;
        writeln!(w, "k,re_lambda,im_lambda")?;
        for (k, l) in self.eigenvalues.iter().enumerate() {
            writeln!(w, "{k},{:.15e},{:.15e}", l.re / self.kappa, l.im / self.kappa)?;
        }
        Ok(())
    }
}

fn column_norm(m: &CMat, k: usize) -> f64 {
    (0..m.nrows()).map(|i| m[(i, k)].norm_sqr()).sum::<f64>().sqrt()
}

/// Orthonormal basis of Hermitian `d×d` matrices: `E_kk`,
/// `(E_kl + E_lk)/√2` and `i(E_kl − E_lk)/√2`, stored sparsely as the
/// (at most two) nonzero entries of each vectorized element.
struct HermitianBasis {
    cols: Vec<[(usize, c64); 2]>,
}

impl HermitianBasis {
    fn new(d: usize) -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut cols = Vec::with_capacity(d * d);
        for k in 0..d {
            cols.push([(k + k * d, ONE), (k + k * d, ZERO)]);
        }
        for k in 0..d {
            for l in k + 1..d {
                let kl = k + l * d;
                let lk = l + k * d;
                cols.push([(kl, c64::new(h, 0.0)), (lk, c64::new(h, 0.0))]);
                cols.push([(kl, c64::new(0.0, h)), (lk, c64::new(0.0, -h))]);
            }
        }
        Self { cols }
    }

    fn len(&self) -> usize {
        self.cols.len()
    }

    /// `U† A U` for a Hermiticity-preserving `A`, whose result is real.
    fn real_representation(&self, a: &CMat) -> (Mat<f64>, f64) {
        let n = self.len();
        let mut au = Mat::<c64>::zeros(n, n);
        for (b, col) in self.cols.iter().enumerate() {
            for &(q, c) in col {
                if c == ZERO {
                    continue;
                }
                for p in 0..n {
                    au[(p, b)] += a[(p, q)] * c;
                }
            }
        }
        let mut out = Mat::<f64>::zeros(n, n);
        let mut imag = 0.0f64;
        for b in 0..n {
            for (r, col) in self.cols.iter().enumerate() {
                let v: c64 = col.iter().map(|&(p, c)| c.conj() * au[(p, b)]).sum();
                out[(r, b)] = v.re;
                imag = imag.max(v.im.abs());
            }
        }
        (out, imag)
    }

    /// `U x`.
    fn expand(&self, x: impl Fn(usize) -> c64) -> Vec<c64> {
        let mut out = vec![ZERO; self.len()];
        for (a, col) in self.cols.iter().enumerate() {
            let xa = x(a);
            for &(p, c) in col {
                out[p] += c * xa;
            }
        }
        out
    }
}

/// Eigenvalues only, sorted like [`LiouvillianSpectrum::eigenvalues`].
pub fn liouvillian_eigenvalues(liouvillian: &Liouvillian) -> Result<Vec<c64>> {
    let basis = HermitianBasis::new(liouvillian.sector().dimension());
    let (lr, _) = basis.real_representation(liouvillian.generator());
    let mut vals = lr
        .eigenvalues()
        .map_err(|e| Error::Eigensolver(format!("{e:?}")))?;
    let q = SpectrumOptions::default().cluster_tolerance * liouvillian.kappa();
    let order = sort_order(&vals, q);
    vals = order.iter().map(|&i| vals[i]).collect();
    Ok(vals)
}

pub fn spectral_decomposition(liouvillian: &Liouvillian) -> Result<LiouvillianSpectrum> {
    spectral_decomposition_with(liouvillian, &SpectrumOptions::default())
}

pub fn spectral_decomposition_with(
    liouvillian: &Liouvillian,
    opts: &SpectrumOptions,
) -> Result<LiouvillianSpectrum> {
    let (eigenvalues, right, left, method, complete) = if liouvillian.dim() <= opts.dense_cap {
        let (v, r, l) = dense_modes(liouvillian)?;
        (v, r, l, SpectrumMethod::Dense, true)
    } else {
        let shift = 0.01 * liouvillian.kappa() / liouvillian.sector().n_spins() as f64;
        let (v, r, l) = shift_invert_modes(liouvillian, shift, opts)?;
        (v, r, l, SpectrumMethod::ShiftInvert { shift }, false)
    };

    let kappa = liouvillian.kappa();
    let q = opts.cluster_tolerance * kappa;
    let order = sort_order(&eigenvalues, q);
    let eigenvalues: Vec<c64> = order.iter().map(|&i| eigenvalues[i]).collect();
    let right = Mat::from_fn(right.nrows(), order.len(), |i, k| right[(i, order[k])]);
    let left = Mat::from_fn(left.nrows(), order.len(), |i, k| left[(i, order[k])]);

    let null_count = eigenvalues
        .iter()
        .filter(|l| l.norm() < opts.null_tolerance * kappa)
        .count();
    let steady_index = (0..eigenvalues.len())
        .min_by(|&a, &b| eigenvalues[a].norm().total_cmp(&eigenvalues[b].norm()))
        .unwrap_or(0);

    let mut spectrum = LiouvillianSpectrum {
        sector: liouvillian.sector(),
        omega: liouvillian.omega(),
        kappa,
        method,
        eigenvalues,
        right,
        left,
        steady_index,
        null_count,
        complete,
        reconstruction_error: 0.0,
        clusters: Vec::new(),
    };
    spectrum.clusters = find_clusters(&spectrum, q, opts.condition_warning);
    for c in &spectrum.clusters {
        warn!(
            "near-defective eigenvalue cluster at {:.6e}{:+.6e}i: size {}, condition {:.3e}",
            c.eigenvalue.re, c.eigenvalue.im, c.size, c.condition
        );
    }
    spectrum.reconstruction_error = verify(liouvillian, &spectrum, opts)?;
    Ok(spectrum)
}

fn dense_modes(liouvillian: &Liouvillian) -> Result<(Vec<c64>, CMat, CMat)> {
    let basis = HermitianBasis::new(liouvillian.sector().dimension());
    let (lr, imag) = basis.real_representation(liouvillian.generator());
    let scale = linalg::max_abs(liouvillian.generator()).max(1.0);
    if imag > 1e-10 * scale {
        return Err(Error::Eigensolver(format!(
            "generator does not preserve Hermiticity (imaginary part {imag:e})"
        )));
    }
    let eig = lr
        .eigen()
        .map_err(|e| Error::Eigensolver(format!("{e:?}")))?;
    let x = eig.U().to_owned();
    let vals: Vec<c64> = eig.S().column_vector().iter().copied().collect();
    let y = x.partial_piv_lu().inverse();
    let n = vals.len();
    let mut right = Mat::<c64>::zeros(n, n);
    let mut left = Mat::<c64>::zeros(n, n);
    for k in 0..n {
        let r = basis.expand(|a| x[(a, k)]);
        let l = basis.expand(|a| y[(k, a)].conj());
        for i in 0..n {
            right[(i, k)] = r[i];
            left[(i, k)] = l[i];
        }
    }
    Ok((vals, right, left))
}

/// Sort permutation on keys quantized to `q`.
fn sort_order(vals: &[c64], q: f64) -> Vec<usize> {
    let key = |z: c64| {
        let re = (z.re.abs() / q).round() as i64;
        let im = (z.im.abs() / q).round() as i64;
        let sign = if z.im < -0.5 * q { 1 } else { 0 };
        (re, im, sign)
    };
    let mut idx: Vec<usize> = (0..vals.len()).collect();
    idx.sort_by_key(|&i| key(vals[i]));
    idx
}

fn find_clusters(spectrum: &LiouvillianSpectrum, q: f64, threshold: f64) -> Vec<ClusterDiagnostic> {
    let vals = &spectrum.eigenvalues;
    let n = vals.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if (vals[i] - vals[j]).norm() < q {
                let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                if a != b {
                    parent[b] = a;
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let r = root(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups
        .into_values()
        .filter(|g| g.len() > 1)
        .filter_map(|g| {
            let condition = g
                .iter()
                .map(|&k| spectrum.condition_number(k))
                .fold(0.0, f64::max);
            (condition > threshold).then(|| ClusterDiagnostic {
                eigenvalue: vals[g[0]],
                size: g.len(),
                condition,
            })
        })
        .collect()
}

/// Reconstruction `L v ≈ Σ λ_k r_k (l_k† v)` on random vectors (on the
/// retained subspace when incomplete) and biorthonormality of the pairs.
fn verify(
    liouvillian: &Liouvillian,
    spectrum: &LiouvillianSpectrum,
    opts: &SpectrumOptions,
) -> Result<f64> {
    let n = spectrum.right.nrows();
    let m = spectrum.len();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let v: Vec<c64> = if spectrum.complete {
            (0..n)
                .map(|_| c64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect()
        } else {
            let c: Vec<c64> = (0..m)
                .map(|_| c64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect();
            (0..n)
                .map(|i| (0..m).map(|k| spectrum.right[(i, k)] * c[k]).sum())
                .collect()
        };
        let coeffs: Vec<c64> = (0..m)
            .map(|k| (0..n).map(|i| spectrum.left[(i, k)].conj() * v[i]).sum())
            .collect();
        let mut back = vec![ZERO; n];
        let mut image = vec![ZERO; n];
        for k in 0..m {
            let ck = coeffs[k];
            let lk = spectrum.eigenvalues[k] * ck;
            for i in 0..n {
                back[i] += spectrum.right[(i, k)] * ck;
                image[i] += spectrum.right[(i, k)] * lk;
            }
        }
        let lv = liouvillian.apply_vec(&v);
        let vn = linalg::vec_norm(&v);
        let complete_err = linalg::vec_norm(
            &back.iter().zip(&v).map(|(a, b)| a - b).collect::<Vec<_>>(),
        ) / vn;
        let scale = linalg::vec_norm(&lv).max(liouvillian.kappa() * vn);
        let recon_err = linalg::vec_norm(
            &image.iter().zip(&lv).map(|(a, b)| a - b).collect::<Vec<_>>(),
        ) / scale;
        worst = worst.max(complete_err).max(recon_err);
    }
    if !worst.is_finite() || worst > opts.reconstruction_tolerance {
        return Err(Error::Biorthonormalization {
            residual: worst,
            tolerance: opts.reconstruction_tolerance,
        });
    }
    Ok(worst)
}

/// Slowest modes from Arnoldi on `(L − σ)⁻¹` and `(L − σ)^{-†}`, sharing
/// one LU factorization; left and right Ritz vectors are matched by
/// eigenvalue and biorthonormalized cluster by cluster.
fn shift_invert_modes(
    liouvillian: &Liouvillian,
    shift: f64,
    opts: &SpectrumOptions,
) -> Result<(Vec<c64>, CMat, CMat)> {
    let n = liouvillian.dim();
    let want = opts.slow_modes.min(n);
    let krylov = (3 * want).max(want + 30).min(n);
    let mut shifted = liouvillian.generator().clone();
    for i in 0..n {
        shifted[(i, i)] -= c64::new(shift, 0.0);
    }
    let lu = shifted.partial_piv_lu();
    let forward = |v: &CMat| lu.solve(v);
    let backward = |v: &CMat| lu.solve_adjoint(v);

    let (rv, rvec) = arnoldi_ritz(&forward, n, krylov, want, 1)?;
    let (lv, lvec) = arnoldi_ritz(&backward, n, krylov, want, 2)?;
    let to_lambda = |mu: c64| c64::new(shift, 0.0) + ONE / mu;
    let right_vals: Vec<c64> = rv.iter().map(|&mu| to_lambda(mu)).collect();
    // Adjoint Ritz values are conj(μ); map back to λ of L.
    let left_vals: Vec<c64> = lv.iter().map(|&mu| to_lambda(mu.conj())).collect();

    let gen = liouvillian.generator();
    let tol = 1e-8 * liouvillian.kappa();
    let mut keep = Vec::new();
    for (k, &lam) in right_vals.iter().enumerate() {
        let r: Vec<c64> = (0..n).map(|i| rvec[(i, k)]).collect();
        let lr = linalg::mat_vec(gen, &r);
        let res: f64 = lr
            .iter()
            .zip(&r)
            .map(|(a, b)| (a - lam * b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        if res < tol.max(1e-8 * lam.norm()) {
            keep.push(k);
        }
    }
    if keep.len() < want {
        warn!(
            "shift-invert extraction converged {} of {} requested modes",
            keep.len(),
            want
        );
    }
    let q = opts.cluster_tolerance.max(1e-7) * liouvillian.kappa();
    let mut used = vec![false; left_vals.len()];
    let mut vals = Vec::new();
    let mut right_cols: Vec<Vec<c64>> = Vec::new();
    let mut left_cols: Vec<Vec<c64>> = Vec::new();
    let mut done = vec![false; right_vals.len()];
    for &k in &keep {
        if done[k] {
            continue;
        }
        let cluster: Vec<usize> = keep
            .iter()
            .copied()
            .filter(|&j| !done[j] && (right_vals[j] - right_vals[k]).norm() < q)
            .collect();
        let partners: Vec<usize> = (0..left_vals.len())
            .filter(|&j| !used[j] && (left_vals[j] - right_vals[k]).norm() < q)
            .take(cluster.len())
            .collect();
        if partners.len() != cluster.len() {
            for &j in &cluster {
                done[j] = true;
            }
            warn!("no left partner for eigenvalue {}", right_vals[k]);
            continue;
        }
        let rc = Mat::from_fn(n, cluster.len(), |i, j| rvec[(i, cluster[j])]);
        let lc = Mat::from_fn(n, partners.len(), |i, j| lvec[(i, partners[j])]);
        let g = &linalg::dagger(&lc) * &rc;
        let ginv_dag = linalg::dagger(&g.partial_piv_lu().inverse());
        let lc = &lc * &ginv_dag;
        for (c, &j) in cluster.iter().enumerate() {
            done[j] = true;
            vals.push(right_vals[j]);
            right_cols.push((0..n).map(|i| rc[(i, c)]).collect());
            left_cols.push((0..n).map(|i| lc[(i, c)]).collect());
        }
        for &j in &partners {
            used[j] = true;
        }
    }
    let m = vals.len();
    let right = Mat::from_fn(n, m, |i, k| right_cols[k][i]);
    let left = Mat::from_fn(n, m, |i, k| left_cols[k][i]);
    let gram = &linalg::dagger(&left) * &right;
    let mut defect = 0.0f64;
    for i in 0..m {
        for j in 0..m {
            let t = if i == j { ONE } else { ZERO };
            defect = defect.max((gram[(i, j)] - t).norm());
        }
    }
    if defect > opts.reconstruction_tolerance {
        return Err(Error::Biorthonormalization {
            residual: defect,
            tolerance: opts.reconstruction_tolerance,
        });
    }
    Ok((vals, right, left))
}

/// Arnoldi with full reorthogonalization; returns the `want` Ritz values of
/// largest modulus with their (unit-norm) Ritz vectors.
fn arnoldi_ritz(
    op: &dyn Fn(&CMat) -> CMat,
    n: usize,
    m: usize,
    want: usize,
    seed: u64,
) -> Result<(Vec<c64>, CMat)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis = Mat::<c64>::zeros(n, m + 1);
    let mut h = Mat::<c64>::zeros(m + 1, m);
    let mut v = Mat::from_fn(n, 1, |_, _| c64::new(rng.random::<f64>() - 0.5, 0.0));
    let nv = column_norm(&v, 0);
    for i in 0..n {
        basis[(i, 0)] = v[(i, 0)] / nv;
    }
    let mut steps = m;
    for j in 0..m {
        let q = Mat::from_fn(n, 1, |i, _| basis[(i, j)]);
        v = op(&q);
        for _ in 0..2 {
            for k in 0..=j {
                let c: c64 = (0..n).map(|i| basis[(i, k)].conj() * v[(i, 0)]).sum();
                h[(k, j)] += c;
                for i in 0..n {
                    v[(i, 0)] -= c * basis[(i, k)];
                }
            }
        }
        let beta = column_norm(&v, 0);
        h[(j + 1, j)] = c64::new(beta, 0.0);
        if beta < 1e-14 {
            steps = j + 1;
            break;
        }
        for i in 0..n {
            basis[(i, j + 1)] = v[(i, 0)] / beta;
        }
    }
    let hm = Mat::from_fn(steps, steps, |i, j| h[(i, j)]);
    let eig = hm
        .eigen()
        .map_err(|e| Error::Eigensolver(format!("{e:?}")))?;
    let mu: Vec<c64> = eig.S().column_vector().iter().copied().collect();
    let y = eig.U();
    let mut idx: Vec<usize> = (0..steps).collect();
    idx.sort_by(|&a, &b| mu[b].norm().total_cmp(&mu[a].norm()));
    idx.truncate(want);
    let mut vecs = Mat::<c64>::zeros(n, idx.len());
    for (c, &k) in idx.iter().enumerate() {
        for i in 0..n {
            vecs[(i, c)] = (0..steps).map(|j| basis[(i, j)] * y[(j, k)]).sum();
        }
        let nk = column_norm(&vecs, c);
        for i in 0..n {
            vecs[(i, c)] /= nk;
        }
    }
    Ok((idx.iter().map(|&k| mu[k]).collect(), vecs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liouvillian::{build_liouvillian, extreme_limit_generator};

    fn sector(n: usize) -> SpinSector {
        SpinSector::new(n).unwrap()
    }

    fn contains(vals: &[c64], z: c64, tol: f64) -> bool {
        vals.iter().any(|v| (v - z).norm() < tol)
    }

    #[test]
    fn single_spin_no_drive() {
        let l = build_liouvillian(sector(1), 0.0, 1.0).unwrap();
        let s = spectral_decomposition(&l).unwrap();
        let re: Vec<f64> = s.eigenvalues().iter().map(|z| z.re).collect();
        let expect = [0.0, -1.0, -1.0, -2.0];
        for (a, b) in re.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{re:?}");
        }
        assert!(s.eigenvalues().iter().all(|z| z.im.abs() < 1e-12));
        assert!(s.gram_defect() < 1e-8);
        assert_eq!(s.null_count(), 1);
    }

    #[test]
    fn conjugation_closure_and_gram() {
        let l = build_liouvillian(sector(6), 4.0, 1.0).unwrap();
        let s = spectral_decomposition(&l).unwrap();
        let vals = s.eigenvalues();
        for v in vals {
            assert!(contains(vals, v.conj(), 1e-10));
            assert!(v.re < 1e-10);
        }
        assert!(s.gram_defect() < 1e-8);
        assert!(s.reconstruction_error() < 1e-9);
        assert_eq!(s.null_count(), 1);
    }

    #[test]
    fn right_modes_are_eigenvectors() {
        let l = build_liouvillian(sector(4), 1.0, 1.0).unwrap();
        let s = spectral_decomposition(&l).unwrap();
        for k in 0..s.len() {
            let r = s.right_operator(k);
            let lr = l.apply(&r);
            let diff = &lr - &linalg::scale(&r, s.eigenvalue(k));
            assert!(linalg::max_abs(&diff) < 1e-10);
            let lo = s.left_operator(k);
            let overlap = linalg::hs_inner(&lo, &r);
            assert!((overlap - ONE).norm() < 1e-9);
        }
    }

    #[test]
    fn sorted_by_decay_then_frequency() {
        let l = build_liouvillian(sector(5), 2.0, 1.0).unwrap();
        let s = spectral_decomposition(&l).unwrap();
        let v = s.eigenvalues();
        for w in v.windows(2) {
            assert!(w[0].re.abs() <= w[1].re.abs() + 1e-9);
        }
        assert!(v[0].norm() < 1e-10);
    }

    #[test]
    fn extreme_limit_matches_closed_form() {
        for n in 1..=6usize {
            let (omega, kappa) = (3.0, 1.0);
            let l = extreme_limit_generator(sector(n), omega, kappa).unwrap();
            let vals = liouvillian_eigenvalues(&l).unwrap();
            for s in 0..=n as i64 {
                for sx in -s..=s {
                    let z = c64::new(
                        -kappa / (2.0 * n as f64) * ((s * (s + 1) + sx * sx) as f64),
                        omega * sx as f64,
                    );
                    assert!(contains(&vals, z, 1e-9), "N={n} s={s} sx={sx}");
                }
            }
        }
    }

    #[test]
    fn large_drive_approaches_extreme_limit() {
        let n = 4;
        let l = build_liouvillian(sector(n), 1e3, 1.0).unwrap();
        let vals = liouvillian_eigenvalues(&l).unwrap();
        let target = c64::new(-1.0 / n as f64, 0.0);
        let nearest = vals
            .iter()
            .copied()
            .min_by(|a, b| (a - target).norm().total_cmp(&(b - target).norm()))
            .unwrap();
        assert!(((nearest - target).norm() / target.norm()) < 1e-2);
    }

    #[test]
    fn shift_invert_recovers_slow_modes() {
        let l = build_liouvillian(sector(6), 4.0, 1.0).unwrap();
        let dense = spectral_decomposition(&l).unwrap();
        let opts = SpectrumOptions {
            dense_cap: 0,
            slow_modes: 8,
            ..Default::default()
        };
        let it = spectral_decomposition_with(&l, &opts).unwrap();
        assert!(!it.is_complete());
        assert!(it.len() >= 6);
        for v in it.eigenvalues() {
            assert!(contains(dense.eigenvalues(), *v, 1e-7), "{v}");
        }
        assert!(it.gram_defect() < 1e-6);
        assert!(it.eigenvalue(0).norm() < 1e-8);
    }

    #[test]
    fn csv_export() {
        let l = build_liouvillian(sector(1), 0.0, 2.0).unwrap();
        let s = spectral_decomposition(&l).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "k,re_lambda,im_lambda");
        assert_eq!(lines.len(), 6);
        assert!(lines[5].starts_with("3,-2.0"));
    }
}
