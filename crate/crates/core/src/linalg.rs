//! Small dense complex linear algebra for monodromy matrices.
//!
//! Matrices here are `n × n` with `n` the operator order, so everything is
//! written for clarity rather than blocking. Eigenvalues and singular values
//! come from `faer`; clustering, Jordan detection, the exponential and the
//! logarithm are implemented on top.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Warning;

pub type C64 = Complex64;

/// Relative rank threshold used by the Jordan staircase.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Relative clustering radius; the absolute radius is this times
/// `max(1, ‖M‖)`.
pub const DEFAULT_CLUSTER_REL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("eigenvalue iteration failed to converge")]
    ConvergenceFailure,
    #[error("matrix is singular (smallest singular value {smallest_sv:e})")]
    SingularMatrix { smallest_sv: f64 },
    #[error("matrix exponential overflowed (norm {norm:e})")]
    Overflow { norm: f64 },
    #[error("{mu} is not an eigenvalue: smallest singular value {smallest_sv:e} exceeds {tol:e}")]
    NotAnEigenvalue { mu: C64, smallest_sv: f64, tol: f64 },
}

/// Dense complex matrix stored row-major.
#[derive(Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                let z = self[(i, j)];
                write!(f, "{:+.6e}{:+.6e}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        CMatrix { rows, cols, data }
    }

    /// Builds from row-major data.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<C64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length does not match shape");
        CMatrix { rows, cols, data }
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        Self::from_fn(r, c, |i, j| C64::new(rows[i][j], 0.0))
    }

    pub fn diag(values: &[C64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn row_vecs(&self) -> Vec<Vec<C64>> {
        self.data.chunks(self.cols.max(1)).map(|r| r.to_vec()).collect()
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn scale(&self, s: C64) -> CMatrix {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn scale_real(&self, s: f64) -> CMatrix {
        self.scale(C64::new(s, 0.0))
    }

    pub fn transpose(&self) -> CMatrix {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn adjoint(&self) -> CMatrix {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn norm_fro(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `self − mu·I`.
    pub fn shifted(&self, mu: C64) -> CMatrix {
        let mut m = self.clone();
        for i in 0..self.rows.min(self.cols) {
            m[(i, i)] -= mu;
        }
        m
    }

    pub fn pow(&self, k: u32) -> CMatrix {
        let mut result = CMatrix::identity(self.rows);
        for _ in 0..k {
            result = &result * self;
        }
        result
    }

    pub fn mul_vec(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self[(i, j)] * v[j]).sum())
            .collect()
    }

    pub fn submatrix(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> CMatrix {
        let r0 = rows.start;
        let c0 = cols.start;
        Self::from_fn(rows.len(), cols.len(), |i, j| self[(r0 + i, c0 + j)])
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, block: &CMatrix) {
        for i in 0..block.rows {
            for j in 0..block.cols {
                self[(r0 + i, c0 + j)] = block[(i, j)];
            }
        }
    }

    pub fn to_faer(&self) -> Mat<C64> {
        Mat::from_fn(self.rows, self.cols, |i, j| self[(i, j)])
    }

    pub fn from_faer(m: faer::MatRef<'_, C64>) -> CMatrix {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }

    fn require_square(&self) -> Result<usize, LinalgError> {
        if !self.is_square() {
            return Err(LinalgError::NotSquare {
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(self.rows)
    }

    /// LU factorization with partial pivoting; returns `(lu, perm, sign)`.
    fn lu(&self) -> Result<(CMatrix, Vec<usize>, f64), LinalgError> {
        let n = self.require_square()?;
        let mut a = self.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        for k in 0..n {
            let (p, best) = (k..n)
                .map(|i| (i, a[(i, k)].norm()))
                .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if best == 0.0 {
                return Err(LinalgError::SingularMatrix { smallest_sv: 0.0 });
            }
            if p != k {
                for j in 0..n {
                    a.data.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
                sign = -sign;
            }
            let pivot = a[(k, k)];
            for i in k + 1..n {
                let factor = a[(i, k)] / pivot;
                a[(i, k)] = factor;
                for j in k + 1..n {
                    let akj = a[(k, j)];
                    a[(i, j)] -= factor * akj;
                }
            }
        }
        Ok((a, perm, sign))
    }

    pub fn det(&self) -> Result<C64, LinalgError> {
        match self.lu() {
            Ok((lu, _, sign)) => {
                let mut d = C64::new(sign, 0.0);
                for i in 0..self.rows {
                    d *= lu[(i, i)];
                }
                Ok(d)
            }
            Err(LinalgError::SingularMatrix { .. }) => Ok(C64::new(0.0, 0.0)),
            Err(e) => Err(e),
        }
    }

    /// Solves `self · X = rhs`.
    pub fn solve(&self, rhs: &CMatrix) -> Result<CMatrix, LinalgError> {
        let n = self.require_square()?;
        assert_eq!(rhs.rows, n);
        let (lu, perm, _) = self.lu()?;
        let mut x = CMatrix::zeros(n, rhs.cols);
        for c in 0..rhs.cols {
            let mut y: Vec<C64> = perm.iter().map(|&p| rhs[(p, c)]).collect();
            for i in 0..n {
                for j in 0..i {
                    let l = lu[(i, j)];
                    y[i] = y[i] - l * y[j];
                }
            }
            for i in (0..n).rev() {
                for j in i + 1..n {
                    let u = lu[(i, j)];
                    y[i] = y[i] - u * y[j];
                }
                y[i] /= lu[(i, i)];
            }
            for i in 0..n {
                x[(i, c)] = y[i];
            }
        }
        Ok(x)
    }

    pub fn inverse(&self) -> Result<CMatrix, LinalgError> {
        let n = self.require_square()?;
        let inv = self.solve(&CMatrix::identity(n))?;
        if !inv.is_finite() {
            return Err(LinalgError::SingularMatrix { smallest_sv: 0.0 });
        }
        Ok(inv)
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;

    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;

    fn mul(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.cols, rhs.rows, "shape mismatch in product");
        let mut out = CMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs.data[k * rhs.cols + j];
                }
            }
        }
        out
    }
}

impl Add for &CMatrix {
    type Output = CMatrix;

    fn add(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &CMatrix {
    type Output = CMatrix;

    fn sub(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Serialize for CMatrix {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<crate::Complex>> = self
            .row_vecs()
            .into_iter()
            .map(|r| r.into_iter().map(Into::into).collect())
            .collect();
        rows.serialize(serializer)
    }
}

/// Singular values in descending order.
pub fn singular_values(m: &CMatrix) -> Result<Vec<f64>, LinalgError> {
    if m.rows() == 0 || m.cols() == 0 {
        return Ok(Vec::new());
    }
    if !m.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let mut sv = m
        .to_faer()
        .singular_values()
        .map_err(|_| LinalgError::ConvergenceFailure)?;
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

pub fn spectral_norm(m: &CMatrix) -> Result<f64, LinalgError> {
    Ok(singular_values(m)?.first().copied().unwrap_or(0.0))
}

/// `σ_max / σ_min`; infinite for singular input.
pub fn condition_number(m: &CMatrix) -> Result<f64, LinalgError> {
    let sv = singular_values(m)?;
    let max = sv.first().copied().unwrap_or(0.0);
    let min = sv.last().copied().unwrap_or(0.0);
    Ok(if min == 0.0 { f64::INFINITY } else { max / min })
}

/// Orthonormal basis (as columns) of the right singular vectors belonging to
/// the `k` smallest singular values.
fn smallest_right_singular_vectors(m: &CMatrix, k: usize) -> Result<CMatrix, LinalgError> {
    let n = m.cols();
    let svd = m.to_faer().svd().map_err(|_| LinalgError::ConvergenceFailure)?;
    let s = svd.S().column_vector();
    let mut order: Vec<usize> = (0..s.nrows()).collect();
    order.sort_by(|&a, &b| s[a].re.total_cmp(&s[b].re));
    let v = svd.V();
    Ok(CMatrix::from_fn(n, k, |i, j| v[(i, order[j])]))
}

/// Default absolute clustering radius for `m`.
pub fn default_cluster_radius(m: &CMatrix) -> f64 {
    DEFAULT_CLUSTER_REL * m.max_abs().max(m.norm_one()).max(1.0)
}

/// A group of raw eigenvalues merged into one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigCluster {
    #[serde(with = "crate::serde_c64")]
    pub value: C64,
    pub multiplicity: usize,
    #[serde(with = "crate::serde_c64::vec")]
    pub members: Vec<C64>,
}

#[derive(Debug, Clone)]
pub struct EigResult {
    pub clusters: Vec<EigCluster>,
    /// Unit right eigenvectors for clusters of multiplicity one.
    pub vectors: Vec<Option<Vec<C64>>>,
}

impl EigResult {
    pub fn eigenvalues(&self) -> Vec<C64> {
        self.clusters.iter().map(|c| c.value).collect()
    }

    pub fn total_multiplicity(&self) -> usize {
        self.clusters.iter().map(|c| c.multiplicity).sum()
    }
}

fn raw_eigen(m: &CMatrix) -> Result<(Vec<C64>, Mat<C64>), LinalgError> {
    m.require_square()?;
    if !m.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let evd = m.to_faer().eigen().map_err(|_| LinalgError::ConvergenceFailure)?;
    let values: Vec<C64> = evd.S().column_vector().iter().copied().collect();
    if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(LinalgError::ConvergenceFailure);
    }
    Ok((values, evd.U().to_owned()))
}

/// Single-linkage grouping of `values` at `radius`; groups are returned as
/// index lists.
fn single_linkage(values: &[C64], radius: f64) -> Vec<Vec<usize>> {
    let n = values.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if (values[i] - values[j]).norm() <= radius {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_index = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if root_index[r] == usize::MAX {
            root_index[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[root_index[r]].push(i);
    }
    groups
}

fn mean(values: &[C64]) -> C64 {
    values.iter().sum::<C64>() / values.len() as f64
}

fn cluster_order(a: &EigCluster, b: &EigCluster) -> std::cmp::Ordering {
    b.value
        .norm()
        .total_cmp(&a.value.norm())
        .then(a.value.arg().total_cmp(&b.value.arg()))
}

/// Eigenvalues of `m` with any two raw eigenvalues within `cluster_radius`
/// merged into their mean.
pub fn eig(m: &CMatrix, cluster_radius: f64) -> Result<EigResult, LinalgError> {
    let (raw, vecs) = raw_eigen(m)?;
    let groups = single_linkage(&raw, cluster_radius);
    let mut entries: Vec<(EigCluster, Option<Vec<C64>>)> = groups
        .into_iter()
        .map(|g| {
            let members: Vec<C64> = g.iter().map(|&i| raw[i]).collect();
            let vector = (g.len() == 1).then(|| {
                let col: Vec<C64> = (0..m.rows()).map(|r| vecs[(r, g[0])]).collect();
                let norm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                col.into_iter().map(|z| z / norm).collect()
            });
            (
                EigCluster {
                    value: mean(&members),
                    multiplicity: members.len(),
                    members,
                },
                vector,
            )
        })
        .collect();
    entries.sort_by(|a, b| cluster_order(&a.0, &b.0));
    let (clusters, vectors) = entries.into_iter().unzip();
    Ok(EigResult { clusters, vectors })
}

/// Jordan structure of one eigenvalue.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JordanStructure {
    #[serde(with = "crate::serde_c64")]
    pub eigenvalue: C64,
    /// Block orders, descending.
    pub block_orders: Vec<usize>,
    pub algebraic_mult: usize,
    pub geometric_mult: usize,
}

impl JordanStructure {
    pub fn max_order(&self) -> usize {
        self.block_orders.first().copied().unwrap_or(0)
    }
}

/// Nullities of `(m − mu·I)^k` for `k = 1, 2, …` until they stabilize.
/// Ranks are counted against `rank_tol · max(1, σ_max(m))^k`.
fn nullity_sequence(m: &CMatrix, mu: C64, rank_tol: f64) -> Result<Vec<usize>, LinalgError> {
    let n = m.rows();
    let scale = spectral_norm(m)?.max(1.0);
    let x = m.shifted(mu);
    let mut power = CMatrix::identity(n);
    let mut nullities = vec![0usize];
    for k in 1..=n {
        power = &power * &x;
        let threshold = rank_tol * scale.powi(k as i32);
        let rank = singular_values(&power)?
            .iter()
            .filter(|&&s| s > threshold)
            .count();
        let nullity = (n - rank).max(*nullities.last().unwrap_or(&0));
        let stalled = nullity == *nullities.last().unwrap_or(&0);
        nullities.push(nullity);
        if stalled || nullity == n {
            break;
        }
    }
    Ok(nullities)
}

/// Block orders from the staircase: the number of blocks of order at least
/// `k` equals `ν_k − ν_{k−1}` for nullities `ν_k` of `(m − μI)^k`.
fn blocks_from_nullities(nullities: &[usize]) -> Vec<usize> {
    let mut at_least: Vec<usize> = nullities.windows(2).map(|w| w[1] - w[0]).collect();
    for k in 1..at_least.len() {
        at_least[k] = at_least[k].min(at_least[k - 1]);
    }
    let mut blocks = Vec::new();
    for k in (0..at_least.len()).rev() {
        let next = at_least.get(k + 1).copied().unwrap_or(0);
        for _ in 0..at_least[k] - next {
            blocks.push(k + 1);
        }
    }
    blocks.sort_unstable_by(|a, b| b.cmp(a));
    blocks
}

/// Jordan block orders of `m` at the eigenvalue `mu`, from the rank
/// sequence of `(m − μI)^k` with the default clustering radius as the
/// eigenvalue acceptance test.
pub fn jordan_block_orders(m: &CMatrix, mu: C64, rank_tol: f64) -> Result<JordanStructure, LinalgError> {
    jordan_block_orders_with(m, mu, rank_tol, default_cluster_radius(m))
}

pub fn jordan_block_orders_with(
    m: &CMatrix,
    mu: C64,
    rank_tol: f64,
    eigen_tol: f64,
) -> Result<JordanStructure, LinalgError> {
    m.require_square()?;
    let smallest = singular_values(&m.shifted(mu))?.last().copied().unwrap_or(0.0);
    if smallest > eigen_tol {
        return Err(LinalgError::NotAnEigenvalue {
            mu,
            smallest_sv: smallest,
            tol: eigen_tol,
        });
    }
    let nullities = nullity_sequence(m, mu, rank_tol)?;
    let mut blocks = blocks_from_nullities(&nullities);
    if blocks.is_empty() {
        // σ_min is within the clustering tolerance but above the rank
        // threshold: a simple eigenvalue known only to that accuracy.
        blocks.push(1);
    }
    Ok(JordanStructure {
        eigenvalue: mu,
        algebraic_mult: blocks.iter().sum(),
        geometric_mult: blocks.len(),
        block_orders: blocks,
    })
}

/// An eigenvalue cluster together with its Jordan structure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralCluster {
    #[serde(with = "crate::serde_c64")]
    pub value: C64,
    #[serde(with = "crate::serde_c64::vec")]
    pub members: Vec<C64>,
    pub jordan: JordanStructure,
}

impl SpectralCluster {
    pub fn multiplicity(&self) -> usize {
        self.jordan.algebraic_mult
    }
}

/// Tolerances for [`spectral_clusters`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterOptions {
    /// Absolute radius; `None` means `1e-6 · max(1, ‖M‖)`.
    pub cluster_radius: Option<f64>,
    pub rank_tol: f64,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        ClusterOptions {
            cluster_radius: None,
            rank_tol: DEFAULT_RANK_TOL,
        }
    }
}

fn fit_blocks(mut blocks: Vec<usize>, multiplicity: usize) -> Vec<usize> {
    let mut total: usize = blocks.iter().sum();
    while total > multiplicity {
        let last = blocks.len() - 1;
        if blocks[last] > total - multiplicity {
            blocks[last] -= total - multiplicity;
            total = multiplicity;
        } else {
            total -= blocks.pop().unwrap_or(0);
        }
    }
    while total < multiplicity {
        blocks.push(1);
        total += 1;
    }
    blocks.retain(|&b| b > 0);
    blocks.sort_unstable_by(|a, b| b.cmp(a));
    blocks
}

/// Eigenvalue clusters with Jordan structure.
///
/// Raw eigenvalues are first grouped at the clustering radius. A perturbed
/// Jordan block of order `k` splits by roughly the `k`-th root of the
/// perturbation, so neighbouring groups within `sqrt` of the relative radius
/// are tentatively merged and the merge is kept only when the rank staircase
/// at their mean confirms a single eigenvalue of the combined multiplicity.
pub fn spectral_clusters(m: &CMatrix, opts: ClusterOptions) -> Result<Vec<SpectralCluster>, LinalgError> {
    let n = m.require_square()?;
    let radius = opts.cluster_radius.unwrap_or_else(|| default_cluster_radius(m));
    let fine = eig(m, radius)?;
    let scale = m.max_abs().max(m.norm_one()).max(1.0);
    let coarse_radius = (radius / scale).sqrt() * scale;

    let fine_values: Vec<C64> = fine.clusters.iter().map(|c| c.value).collect();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for group in single_linkage(&fine_values, coarse_radius) {
        if group.len() == 1 {
            groups.push(group);
            continue;
        }
        let members: Vec<C64> = group
            .iter()
            .flat_map(|&i| fine.clusters[i].members.iter().copied())
            .collect();
        let mu = mean(&members);
        let mult = members.len();
        let nullities = nullity_sequence(m, mu, opts.rank_tol)?;
        let confirmed = nullities.get(1).copied().unwrap_or(0) >= 1 && nullities.last() == Some(&mult);
        if confirmed {
            groups.push(group);
        } else {
            groups.extend(group.into_iter().map(|i| vec![i]));
        }
    }

    let mut clusters = Vec::with_capacity(groups.len());
    for group in groups {
        let members: Vec<C64> = group
            .iter()
            .flat_map(|&i| fine.clusters[i].members.iter().copied())
            .collect();
        let mu = mean(&members);
        let mult = members.len();
        let nullities = nullity_sequence(m, mu, opts.rank_tol)?;
        let blocks = fit_blocks(blocks_from_nullities(&nullities), mult);
        clusters.push(SpectralCluster {
            value: mu,
            jordan: JordanStructure {
                eigenvalue: mu,
                algebraic_mult: mult,
                geometric_mult: blocks.len(),
                block_orders: blocks,
            },
            members,
        });
    }
    clusters.sort_by(|a, b| {
        b.value
            .norm()
            .total_cmp(&a.value.norm())
            .then(a.value.arg().total_cmp(&b.value.arg()))
    });
    debug_assert_eq!(clusters.iter().map(|c| c.multiplicity()).sum::<usize>(), n);
    Ok(clusters)
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

/// Matrix exponential by scaling and squaring with a degree-13 Padé
/// approximant.
pub fn matrix_exp(m: &CMatrix) -> Result<CMatrix, LinalgError> {
    let n = m.require_square()?;
    if !m.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let norm = m.norm_one();
    if norm == 0.0 {
        return Ok(CMatrix::identity(n));
    }
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    if squarings > 1000 {
        return Err(LinalgError::Overflow { norm });
    }
    let a = m.scale_real(0.5f64.powi(squarings));
    let id = CMatrix::identity(n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = |k: usize| C64::new(PADE13[k], 0.0);
    let lin = |terms: &[(&CMatrix, usize)]| {
        let mut acc = CMatrix::zeros(n, n);
        for (mat, k) in terms {
            acc = &acc + &mat.scale(b(*k));
        }
        acc
    };
    let u_inner = &(&a6 * &lin(&[(&a6, 13), (&a4, 11), (&a2, 9)])) + &lin(&[(&a6, 7), (&a4, 5), (&a2, 3), (&id, 1)]);
    let u = &a * &u_inner;
    let v = &(&a6 * &lin(&[(&a6, 12), (&a4, 10), (&a2, 8)])) + &lin(&[(&a6, 6), (&a4, 4), (&a2, 2), (&id, 0)]);
    let mut r = (&v - &u).solve(&(&v + &u))?;
    for _ in 0..squarings {
        r = &r * &r;
        if !r.is_finite() {
            return Err(LinalgError::Overflow { norm });
        }
    }
    if !r.is_finite() {
        return Err(LinalgError::Overflow { norm });
    }
    Ok(r)
}

/// Principal logarithm of a nonzero complex number, `arg ∈ (−π, π]`.
pub fn principal_ln(z: C64) -> C64 {
    let mut arg = z.im.atan2(z.re);
    if arg <= -std::f64::consts::PI {
        arg = std::f64::consts::PI;
    }
    C64::new(z.norm().ln(), arg)
}

/// One invariant block of the logarithm.
#[derive(Debug, Clone)]
pub struct LogBlock {
    /// Multiplicator (eigenvalue of the input).
    pub mu: C64,
    pub log_mu: C64,
    /// Columns of the basis spanning this block's invariant subspace.
    pub cols: std::ops::Range<usize>,
    /// Restriction of the input to the subspace, in basis coordinates.
    pub block: CMatrix,
    /// Logarithm of `block`.
    pub log_block: CMatrix,
    pub jordan: JordanStructure,
}

#[derive(Debug, Clone)]
pub struct MatrixLog {
    pub value: CMatrix,
    pub blocks: Vec<LogBlock>,
    /// Columns are bases of the invariant subspaces, block by block.
    pub basis: CMatrix,
    pub basis_inv: CMatrix,
    pub basis_condition: f64,
    pub warnings: Vec<Warning>,
}

/// `log(I + x)` by its power series; `x` must have small spectral radius
/// (nilpotent up to clustering noise).
fn log_one_plus(x: &CMatrix) -> CMatrix {
    let n = x.rows();
    let mut result = CMatrix::zeros(n, n);
    let mut power = CMatrix::identity(n);
    for k in 1..=400 {
        power = &power * x;
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        let term = power.scale_real(sign / k as f64);
        let size = term.max_abs();
        result = &result + &term;
        if size <= 1e-18 * result.max_abs().max(1.0) || size == 0.0 {
            break;
        }
    }
    result
}

/// Principal matrix logarithm.
///
/// The input is split into invariant subspaces, one per eigenvalue cluster
/// (null spaces of `(M − ρI)^m`). On each subspace the restriction is
/// `ρ(I + N/ρ)` with `N` nilpotent up to clustering noise, so its logarithm
/// is `(ln ρ)I + log(I + N/ρ)`.
pub fn matrix_log(m: &CMatrix, cluster_radius: f64) -> Result<MatrixLog, LinalgError> {
    let n = m.require_square()?;
    let sv = singular_values(m)?;
    let smallest = sv.last().copied().unwrap_or(0.0);
    if smallest <= 1e-14 * sv.first().copied().unwrap_or(0.0) || smallest == 0.0 {
        return Err(LinalgError::SingularMatrix { smallest_sv: smallest });
    }
    let clusters = spectral_clusters(
        m,
        ClusterOptions {
            cluster_radius: Some(cluster_radius),
            rank_tol: DEFAULT_RANK_TOL,
        },
    )?;

    let mut warnings = Vec::new();
    let mut basis = CMatrix::zeros(n, n);
    let mut ranges = Vec::with_capacity(clusters.len());
    let mut col = 0;
    for cluster in &clusters {
        let mult = cluster.multiplicity();
        let power = m.shifted(cluster.value).pow(mult as u32);
        let v = smallest_right_singular_vectors(&power, mult)?;
        basis.set_block(0, col, &v);
        ranges.push(col..col + mult);
        col += mult;
        if cluster.value.re < 0.0 && cluster.value.im.abs() <= cluster_radius {
            warnings.push(Warning::BranchAmbiguity {
                eigenvalue: cluster.value.into(),
            });
        }
    }
    let basis_inv = basis.inverse()?;
    let basis_condition = condition_number(&basis)?;
    let projected = &(&basis_inv * m) * &basis;

    let mut log_diag = CMatrix::zeros(n, n);
    let mut blocks = Vec::with_capacity(clusters.len());
    for (cluster, range) in clusters.into_iter().zip(ranges) {
        let block = projected.submatrix(range.clone(), range.clone());
        let mu = cluster.value;
        // Eigenvalues on the cut within clustering noise take arg = π.
        let log_mu = if mu.re < 0.0 && mu.im.abs() <= cluster_radius {
            C64::new(mu.norm().ln(), std::f64::consts::PI)
        } else {
            principal_ln(mu)
        };
        let x = block.shifted(mu).scale(C64::new(1.0, 0.0) / mu);
        let log_block = &CMatrix::identity(range.len()).scale(log_mu) + &log_one_plus(&x);
        log_diag.set_block(range.start, range.start, &log_block);
        blocks.push(LogBlock {
            mu,
            log_mu,
            cols: range,
            block,
            log_block,
            jordan: cluster.jordan,
        });
    }
    let value = &(&basis * &log_diag) * &basis_inv;
    Ok(MatrixLog {
        value,
        blocks,
        basis,
        basis_inv,
        basis_condition,
        warnings,
    })
}
