//! Dense kernels for the small matrices (`d ≤ ~20`) of the trajectory
//! inner loop. Row-major storage, no allocation in the hot paths.

use faer::c64;

use crate::linalg::CMat;

const ZERO: c64 = c64 { re: 0.0, im: 0.0 };
const ONE: c64 = c64 { re: 1.0, im: 0.0 };

#[derive(Clone, Debug, PartialEq)]
pub struct Small {
    n: usize,
    data: Vec<c64>,
}

impl Small {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![ZERO; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = ONE;
        }
        m
    }

    pub fn from_cmat(a: &CMat) -> Self {
        let n = a.nrows();
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.data[i * n + j] = a[(i, j)];
            }
        }
        m
    }

    pub fn to_cmat(&self) -> CMat {
        CMat::from_fn(self.n, self.n, |i, j| self.data[i * self.n + j])
    }

    /// `|v⟩⟨v|`.
    pub fn projector(v: &[c64]) -> Self {
        let n = v.len();
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.data[i * n + j] = v[i] * v[j].conj();
            }
        }
        m
    }

    pub fn set_identity(&mut self) {
        self.data.fill(ZERO);
        for i in 0..self.n {
            self.data[i * self.n + i] = ONE;
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> c64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: c64) {
        self.data[i * self.n + j] = v;
    }

    pub fn trace(&self) -> c64 {
        (0..self.n).map(|i| self.data[i * self.n + i]).sum()
    }

    /// `Tr[self · b]`.
    pub fn trace_product(&self, b: &Small) -> c64 {
        let n = self.n;
        let mut acc = ZERO;
        for i in 0..n {
            for k in 0..n {
                acc += self.data[i * n + k] * b.data[k * n + i];
            }
        }
        acc
    }

    pub fn scale(&mut self, s: f64) {
        for x in &mut self.data {
            *x *= s;
        }
    }

    pub fn axpy(&mut self, s: c64, b: &Small) {
        for (x, y) in self.data.iter_mut().zip(&b.data) {
            *x += s * y;
        }
    }

    pub fn copy_from(&mut self, b: &Small) {
        self.data.copy_from_slice(&b.data);
    }

    /// Replaces `self` by `(self + self†)/2`.
    pub fn hermitize(&mut self) {
        let n = self.n;
        for i in 0..n {
            self.data[i * n + i].im = 0.0;
            for j in i + 1..n {
                let v = 0.5 * (self.data[i * n + j] + self.data[j * n + i].conj());
                self.data[i * n + j] = v;
                self.data[j * n + i] = v.conj();
            }
        }
    }

    pub fn purity(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a, z| a.max(z.norm()))
    }
}

/// `out = a · b`.
pub fn mul(a: &Small, b: &Small, out: &mut Small) {
    let n = a.n;
    for i in 0..n {
        let row = &mut out.data[i * n..(i + 1) * n];
        row.fill(ZERO);
        for k in 0..n {
            let aik = a.data[i * n + k];
            if aik == ZERO {
                continue;
            }
            let brow = &b.data[k * n..(k + 1) * n];
            for (o, bkj) in row.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
}

/// `out = a · b†`.
pub fn mul_adj(a: &Small, b: &Small, out: &mut Small) {
    let n = a.n;
    for i in 0..n {
        let arow = &a.data[i * n..(i + 1) * n];
        for j in 0..n {
            let brow = &b.data[j * n..(j + 1) * n];
            let mut acc = ZERO;
            for (x, y) in arow.iter().zip(brow) {
                acc += x * y.conj();
            }
            out.data[i * n + j] = acc;
        }
    }
}

/// `out += a + a†`.
pub fn add_with_adjoint(a: &Small, out: &mut Small) {
    let n = a.n;
    for i in 0..n {
        for j in 0..n {
            out.data[i * n + j] += a.data[i * n + j] + a.data[j * n + i].conj();
        }
    }
}

pub fn mat_vec(a: &Small, v: &[c64], out: &mut [c64]) {
    let n = a.n;
    for i in 0..n {
        let row = &a.data[i * n..(i + 1) * n];
        out[i] = row.iter().zip(v).map(|(x, y)| x * y).sum();
    }
}

/// A matrix with a single nonzero diagonal `offset` places below the main
/// one: entry `values[i]` sits at `(i + offset, i)`.
#[derive(Clone, Debug)]
pub struct Band {
    pub offset: usize,
    pub values: Vec<c64>,
    n: usize,
}

impl Band {
    pub fn from_cmat(a: &CMat, offset: usize) -> Self {
        let n = a.nrows();
        let values = (0..n.saturating_sub(offset))
            .map(|i| a[(i + offset, i)])
            .collect();
        Self { offset, values, n }
    }

    pub fn scaled(&self, s: c64) -> Self {
        Self {
            offset: self.offset,
            values: self.values.iter().map(|v| v * s).collect(),
            n: self.n,
        }
    }

    pub fn apply(&self, v: &[c64], out: &mut [c64]) {
        out.fill(ZERO);
        for (i, b) in self.values.iter().enumerate() {
            out[i + self.offset] = b * v[i];
        }
    }

    /// `out = B ρ B†`.
    pub fn sandwich(&self, rho: &Small, out: &mut Small) {
        let n = self.n;
        let k = self.offset;
        out.data.fill(ZERO);
        for (i, bi) in self.values.iter().enumerate() {
            for (j, bj) in self.values.iter().enumerate() {
                out.data[(i + k) * n + j + k] = bi * rho.data[i * n + j] * bj.conj();
            }
        }
    }

    /// `out += s · B`.
    pub fn add_to(&self, s: c64, out: &mut Small) {
        let n = self.n;
        for (i, b) in self.values.iter().enumerate() {
            out.data[(i + self.offset) * n + i] += s * b;
        }
    }
}

/// `out = a · g` with `g = 1 + lower-banded terms` given as dense.
pub fn mul_lower(a: &Small, g: &Small, bandwidth: usize, out: &mut Small) {
    let n = a.n;
    for i in 0..n {
        for j in 0..n {
            let mut acc = ZERO;
            for l in j..(j + bandwidth + 1).min(n) {
                acc += a.data[i * n + l] * g.data[l * n + j];
            }
            out.data[i * n + j] = acc;
        }
    }
}
