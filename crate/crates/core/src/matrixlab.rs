//! Dense linear-algebra helpers: pseudo-inverses, tolerance-based rank,
//! multi-index enumeration and the uniform sub-rank of an input matrix.
//!
//! Every routine here is a pure function over `nalgebra` dynamic matrices.
//! Column and multi-index positions exposed to callers are 1-based, matching
//! the way actuators are numbered throughout the crate.

use std::fmt;

use itertools::Itertools;
use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};

/// Relative singular-value threshold used for every rank decision.
pub const RANK_TOL: f64 = 1e-9;

/// Strictly positive column indices selecting a sub-matrix `W_J`.
///
/// Enumerated indices are strictly increasing. Explicit observer assignments
/// may carry a caller-chosen order (e.g. `(3, 4, 1)`), in which case the
/// indices only need to be distinct; see [`MultiIndex::ordered`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    indices: Vec<usize>,
    domain: usize,
}

impl MultiIndex {
    /// Builds a strictly increasing multi-index over `1..=domain`.
    pub fn increasing(indices: Vec<usize>, domain: usize) -> Result<Self> {
        let mi = Self::ordered(indices, domain)?;
        if !mi.is_increasing() {
            return Err(Error::InvalidArgument(format!(
                "multi-index {mi} is not strictly increasing"
            )));
        }
        Ok(mi)
    }

    /// Builds a multi-index whose entries are distinct but kept in the given order.
    pub fn ordered(indices: Vec<usize>, domain: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument("empty multi-index".into()));
        }
        if indices.len() > domain {
            return Err(Error::InvalidArgument(format!(
                "multi-index length {} exceeds domain {domain}",
                indices.len()
            )));
        }
        for &j in &indices {
            if j == 0 || j > domain {
                return Err(Error::IndexOutOfRange {
                    index: j,
                    max: domain,
                });
            }
        }
        if !indices.iter().all_unique() {
            return Err(Error::InvalidArgument(format!(
                "multi-index {indices:?} has repeated entries"
            )));
        }
        Ok(Self { indices, domain })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn domain(&self) -> usize {
        self.domain
    }

    pub fn is_increasing(&self) -> bool {
        self.indices.windows(2).all(|w| w[0] < w[1])
    }

    /// 0-based slot of column `j` within this multi-index.
    pub fn position(&self, j: usize) -> Option<usize> {
        self.indices.iter().position(|&i| i == j)
    }

    pub fn contains(&self, j: usize) -> bool {
        self.position(j).is_some()
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({})", self.indices.iter().join(","))
    }
}

/// Outcome of a numerical rank test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankReport {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub tol: f64,
}

/// Counts singular values above `tol` times the largest one.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> RankReport {
    let (rows, cols) = m.shape();
    let mut report = RankReport {
        rows,
        cols,
        rank: 0,
        tol,
    };
    if rows == 0 || cols == 0 {
        return report;
    }
    let sv = m.singular_values();
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    if smax > 0.0 && smax.is_finite() {
        report.rank = sv.iter().filter(|&&s| s > tol * smax).count();
    }
    report
}

pub fn rank(m: &DMatrix<f64>) -> usize {
    numerical_rank(m, RANK_TOL).rank
}

/// `Gᵀ(GGᵀ)⁻¹` for a full-row-rank `G`, evaluated through a QR factorisation
/// of `Gᵀ` so that badly scaled rows do not square the condition number.
pub fn right_pseudo_inverse(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = g.nrows();
    let found = rank(g);
    if found < k || g.ncols() < k {
        return Err(Error::RankDeficient { expected: k, found });
    }
    // Gᵀ = QR  =>  G⁻ᴿ = Q R⁻ᵀ
    let qr = g.transpose().qr();
    let r_inv = upper_inverse(&qr.r(), k)?;
    Ok(qr.q() * r_inv.transpose())
}

/// `(MᵀM)⁻¹Mᵀ` for a full-column-rank `M`.
pub fn left_pseudo_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let l = m.ncols();
    let found = rank(m);
    if found < l || m.nrows() < l {
        return Err(Error::RankDeficient { expected: l, found });
    }
    // M = QR  =>  M⁻ᴸ = R⁻¹ Qᵀ
    let qr = m.clone().qr();
    let r_inv = upper_inverse(&qr.r(), l)?;
    Ok(r_inv * qr.q().transpose())
}

fn upper_inverse(r: &DMatrix<f64>, size: usize) -> Result<DMatrix<f64>> {
    r.solve_upper_triangular(&DMatrix::identity(size, size))
        .ok_or(Error::RankDeficient {
            expected: size,
            found: r.diagonal().iter().filter(|d| **d != 0.0).count(),
        })
}

/// All multi-indices of the given length over `1..=domain`, in lexicographic order.
pub fn enumerate_multi_indices(length: usize, domain: usize) -> Result<Vec<MultiIndex>> {
    if length < 1 || length > domain {
        return Err(Error::InvalidArgument(format!(
            "multi-index length {length} must lie in 1..={domain}"
        )));
    }
    Ok((1..=domain)
        .combinations(length)
        .map(|indices| MultiIndex { indices, domain })
        .collect())
}

/// Gathers the (1-based) columns `idx` of `w` in the given order.
pub fn select_columns(w: &DMatrix<f64>, idx: &[usize]) -> Result<DMatrix<f64>> {
    let m = w.ncols();
    if let Some(&bad) = idx.iter().find(|&&j| j == 0 || j > m) {
        return Err(Error::IndexOutOfRange { index: bad, max: m });
    }
    let zero_based: Vec<usize> = idx.iter().map(|j| j - 1).collect();
    Ok(w.select_columns(&zero_based))
}

/// Largest `ℓ` such that every `ℓ`-column subset of `w` has rank `ℓ`.
///
/// Columns are scaled to unit norm first; a numerically zero column (or an
/// empty / all-zero matrix) yields 0.
pub fn uniform_sub_rank(w: &DMatrix<f64>, tol: f64) -> usize {
    let Some(normalized) = normalize_columns(w, tol) else {
        return 0;
    };
    let full = numerical_rank(&normalized, tol).rank;
    let m = normalized.ncols();
    for ell in 2..=full {
        // the all-subsets property is monotone in ℓ, so the first failure ends the search
        let all_full = (0..m)
            .combinations(ell)
            .all(|cols| numerical_rank(&normalized.select_columns(&cols), tol).rank == ell);
        if !all_full {
            return ell - 1;
        }
    }
    full
}

/// Scales every column to unit Euclidean norm; `None` if some column is
/// numerically zero relative to the largest one.
pub(crate) fn normalize_columns(w: &DMatrix<f64>, tol: f64) -> Option<DMatrix<f64>> {
    if w.nrows() == 0 || w.ncols() == 0 {
        return None;
    }
    let norms: Vec<f64> = w.column_iter().map(|c| c.norm()).collect();
    let largest = norms.iter().cloned().fold(0.0_f64, f64::max);
    if largest == 0.0 || norms.iter().any(|&n| n <= tol * largest) {
        return None;
    }
    let mut out = w.clone();
    for (mut col, n) in out.column_iter_mut().zip(norms) {
        col /= n;
    }
    Some(out)
}

pub fn eigenvalues(f: &DMatrix<f64>) -> Vec<Complex<f64>> {
    f.clone().complex_eigenvalues().iter().cloned().collect()
}

/// Largest real part over the spectrum of `f`.
pub fn spectral_abscissa(f: &DMatrix<f64>) -> f64 {
    eigenvalues(f)
        .iter()
        .map(|c| c.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// True iff every eigenvalue of `f` has real part strictly below `-margin`.
pub fn is_hurwitz(f: &DMatrix<f64>, margin: f64) -> bool {
    if !f.is_square() || f.nrows() == 0 {
        return false;
    }
    eigenvalues(f).iter().all(|c| c.re < -margin)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}
