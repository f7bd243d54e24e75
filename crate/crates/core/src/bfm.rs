//! Beamforming feedback matrix emulation.
//!
//! A station derives its feedback matrix from the right-singular vectors of the
//! measured channel `H[k] = U[k] Σ[k] V[k]^H`. Here that step is reproduced from CSI:
//! a one-sided (Hestenes) Jacobi SVD per subcarrier followed by a column phase
//! canonicalization that makes the result independent of the arbitrary unit-modulus
//! factor every singular vector carries.

use num_complex::Complex64;
use thiserror::Error;

use crate::cmat::CMat;
use crate::sim::CsiSample;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BfmError {
    #[error("CSI contains non-finite entries at subcarrier {subcarrier}")]
    NonFinite { subcarrier: usize },
}

/// Full SVD of one `N × M` channel slice.
///
/// `u` is `N × N`, `s` holds `min(M, N)` nonincreasing singular values and `v` is the
/// economy right factor of shape `M × min(M, N)`.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: CMat,
    pub s: Vec<f64>,
    pub v: CMat,
}

impl SvdFactors {
    /// `U[:, :r] · diag(S) · V^H`.
    pub fn reconstruct(&self) -> CMat {
        let rows = self.u.rows();
        let cols = self.v.rows();
        let mut out = CMat::zeros(rows, cols);
        for (r, &sigma) in self.s.iter().enumerate() {
            for i in 0..rows {
                let us = self.u[(i, r)] * sigma;
                for j in 0..cols {
                    out[(i, j)] += us * self.v[(j, r)].conj();
                }
            }
        }
        out
    }
}

/// Feedback matrices for every subcarrier of one CSI sample, layout `[k][m][s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BfmSample {
    pub t: u64,
    pub k: usize,
    pub m: usize,
    pub s_cols: usize,
    pub data: Vec<Complex64>,
}

impl BfmSample {
    pub fn slice(&self, k: usize) -> CMat {
        let len = self.m * self.s_cols;
        CMat::from_row_major(self.m, self.s_cols, self.data[k * len..(k + 1) * len].to_vec())
    }
}

const MAX_SWEEPS: usize = 100;
const ROTATION_TOL: f64 = 1e-15;

/// Singular value decomposition of an arbitrary complex matrix.
pub fn svd(h: &CMat) -> SvdFactors {
    if h.rows() >= h.cols() {
        let (u, s, v) = svd_tall(h);
        SvdFactors { u, s, v }
    } else {
        // H^H = U' S V'^H  =>  H = V' S U'^H
        let (u_adj, s, v_adj) = svd_tall(&h.adjoint());
        let v = CMat::from_row_major(u_adj.rows(), s.len(), {
            let mut data = Vec::with_capacity(u_adj.rows() * s.len());
            for i in 0..u_adj.rows() {
                for j in 0..s.len() {
                    data.push(u_adj[(i, j)]);
                }
            }
            data
        });
        SvdFactors { u: v_adj, s, v }
    }
}

/// SVD of a matrix with `rows >= cols`. Returns the full `rows × rows` left factor,
/// the `cols` singular values and the square right factor.
fn svd_tall(h: &CMat) -> (CMat, Vec<f64>, CMat) {
    let rows = h.rows();
    let cols = h.cols();
    let mut a = h.clone();
    let mut v = CMat::identity(cols);

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = Complex64::new(0.0, 0.0);
                for i in 0..rows {
                    let ap = a[(i, p)];
                    let aq = a[(i, q)];
                    alpha += ap.norm_sqr();
                    beta += aq.norm_sqr();
                    gamma += ap.conj() * aq;
                }
                let g = gamma.norm();
                if g == 0.0 || g <= ROTATION_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                // Rotate column q onto a real inner product, then apply a real Jacobi rotation.
                let phase = gamma / g;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut a, p, q, phase, c, s);
                rotate_columns(&mut v, p, q, phase, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = (0..cols)
        .map(|j| (0..rows).map(|i| a[(i, j)].norm_sqr()).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));

    let s: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let s_max = s.first().copied().unwrap_or(0.0);
    let zero_tol = s_max * 1e-13;

    let mut v_sorted = CMat::zeros(cols, cols);
    let mut u_cols: Vec<Vec<Complex64>> = Vec::with_capacity(rows);
    for (dst, &src) in order.iter().enumerate() {
        v_sorted.set_column(dst, &v.column(src));
        if s[dst] > zero_tol && s[dst] > 0.0 {
            let inv = 1.0 / s[dst];
            u_cols.push(a.column(src).iter().map(|z| z * inv).collect());
        } else {
            u_cols.push(Vec::new());
        }
    }

    // Fill null-space columns and extend to a full unitary basis.
    let mut u = CMat::zeros(rows, rows);
    let mut basis: Vec<Vec<Complex64>> = u_cols.iter().filter(|c| !c.is_empty()).cloned().collect();
    let mut filled = Vec::with_capacity(rows);
    for col in u_cols {
        if col.is_empty() {
            let next = complete_basis(&basis, rows);
            basis.push(next.clone());
            filled.push(next);
        } else {
            filled.push(col);
        }
    }
    while filled.len() < rows {
        let next = complete_basis(&basis, rows);
        basis.push(next.clone());
        filled.push(next);
    }
    for (j, col) in filled.iter().enumerate() {
        u.set_column(j, col);
    }
    (u, s, v_sorted)
}

fn rotate_columns(m: &mut CMat, p: usize, q: usize, phase: Complex64, c: f64, s: f64) {
    for i in 0..m.rows() {
        let xp = m[(i, p)];
        let xq = m[(i, q)] * phase.conj();
        m[(i, p)] = xp * c - xq * s;
        m[(i, q)] = (xp * s + xq * c) * phase;
    }
}

/// Returns a unit vector orthogonal to every vector in `basis`, chosen as the
/// standard basis vector with the largest residual after projection.
fn complete_basis(basis: &[Vec<Complex64>], dim: usize) -> Vec<Complex64> {
    let mut best: Option<(f64, Vec<Complex64>)> = None;
    for e in 0..dim {
        let mut r = vec![Complex64::new(0.0, 0.0); dim];
        r[e] = Complex64::new(1.0, 0.0);
        // Two Gram-Schmidt passes.
        for _ in 0..2 {
            for b in basis {
                let proj: Complex64 = b.iter().zip(&r).map(|(bi, ri)| bi.conj() * ri).sum();
                for (ri, bi) in r.iter_mut().zip(b) {
                    *ri -= proj * bi;
                }
            }
        }
        let norm = r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if best.as_ref().is_none_or(|(n, _)| norm > *n) {
            best = Some((norm, r));
        }
    }
    let (norm, r) = best.expect("basis completion needs dim > 0");
    r.into_iter().map(|z| z / norm).collect()
}

/// Per-subcarrier SVD of a CSI sample.
pub fn svd_per_subcarrier(csi: &CsiSample) -> Result<Vec<SvdFactors>, BfmError> {
    (0..csi.k)
        .map(|k| {
            let slice = csi.slice(k);
            if !slice.is_finite() {
                return Err(BfmError::NonFinite { subcarrier: k });
            }
            Ok(svd(&slice))
        })
        .collect()
}

/// Rotates each column by a unit-modulus scalar so that its largest-magnitude entry
/// (lowest row on ties) is real and non-negative. Zero columns pass through.
pub fn canonicalize(v: &CMat) -> CMat {
    let mut out = v.clone();
    for j in 0..v.cols() {
        let mut pivot = 0;
        let mut best = -1.0;
        for i in 0..v.rows() {
            let mag = v[(i, j)].norm();
            if mag > best {
                best = mag;
                pivot = i;
            }
        }
        if best <= 0.0 {
            continue;
        }
        let rot = v[(pivot, j)].conj() / best;
        for i in 0..v.rows() {
            out[(i, j)] = v[(i, j)] * rot;
        }
        // Pin the pivot exactly onto the non-negative real axis.
        out[(pivot, j)] = Complex64::new(best, 0.0);
    }
    out
}

/// Emulates the feedback matrix sequence for one CSI sample, keeping `min(M, N)` columns.
pub fn emulate_bfm(csi: &CsiSample) -> Result<BfmSample, BfmError> {
    let factors = svd_per_subcarrier(csi)?;
    let s_cols = csi.m.min(csi.n);
    let mut data = Vec::with_capacity(csi.k * csi.m * s_cols);
    for f in &factors {
        data.extend_from_slice(canonicalize(&f.v).as_slice());
    }
    Ok(BfmSample {
        t: csi.t,
        k: csi.k,
        m: csi.m,
        s_cols,
        data,
    })
}
