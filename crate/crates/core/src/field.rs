//! Discretized mollified log-correlated field on a ball.
//!
//! The field value of a cell is the average of Z over a cube of side ε
//! centered at the cell center, so its covariance is the exact double cube
//! average ln T − ln ε − ℓ(h·Δk/ε) of the kernel (see
//! [`crate::potential::cell_log_mean`]). This is the mollified field for the
//! uniform-cube mollifier, which keeps the covariance positive semidefinite
//! and makes grids on B(0, r) exact rescalings of grids on B(0, 1).

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, GmcError, Result};
use crate::grid::Grid;
use crate::params::ModelParams;
use crate::potential::{cell_gram, CellKernel};
use crate::rng::{stream, Domain};

/// Default gate on the relative Frobenius size of a PSD repair.
pub const DEFAULT_REPAIR_GATE: f64 = 1e-6;

/// Block size of the factorization and of the triangular product.
const BLOCK: usize = 128;

/// Factor L with L·Lᵀ equal to the (possibly repaired) covariance.
#[derive(Debug, Clone)]
pub struct CovarianceFactor {
    pub grid: Grid,
    pub params: ModelParams,
    pub epsilon: f64,
    /// Lower triangular when `triangular`; otherwise V·Λ₊^{1/2} from the
    /// eigenvalue-floored covariance.
    pub matrix_factor: DMatrix<f64>,
    pub triangular: bool,
    /// Per-cell variance (L·Lᵀ)_ii.
    pub diag: Vec<f64>,
    /// ‖A₊ − A‖_F/‖A‖_F, zero when the Cholesky factorization succeeded.
    pub repair_magnitude: f64,
}

impl CovarianceFactor {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Covariance L·Lᵀ implied by the factor.
    pub fn implied_covariance(&self) -> DMatrix<f64> {
        &self.matrix_factor * self.matrix_factor.transpose()
    }
}

/// One field realization.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub values: Vec<f64>,
    pub bank_id: u64,
    pub sample_index: u64,
}

/// Covariance matrix of the cube-averaged field on `grid`.
pub fn covariance_matrix(grid: &Grid, params: &ModelParams, epsilon: f64) -> Result<DMatrix<f64>> {
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon must be positive"));
    }
    if grid.dim != params.d {
        return Err(invalid(format!("grid dimension {} differs from model dimension {}", grid.dim, params.d)));
    }
    let kernel = CellKernel::new(grid.dim, grid.cells_per_axis, grid.spacing / epsilon, 1e-12)?;
    Ok(cell_gram(grid, &kernel, params.t.ln(), epsilon))
}

/// Builds and factors the covariance with the default repair gate.
pub fn covariance_factor(grid: &Grid, params: &ModelParams, epsilon: f64) -> Result<CovarianceFactor> {
    covariance_factor_with_gate(grid, params, epsilon, DEFAULT_REPAIR_GATE)
}

/// Builds and factors the covariance. A factor is accepted only when its
/// repair magnitude is strictly below `gate`.
pub fn covariance_factor_with_gate(
    grid: &Grid,
    params: &ModelParams,
    epsilon: f64,
    gate: f64,
) -> Result<CovarianceFactor> {
    let cov = covariance_matrix(grid, params, epsilon)?;
    let (matrix_factor, triangular, repair_magnitude) = factor_psd(cov)?;
    if !(repair_magnitude < gate) {
        return Err(GmcError::RepairGate { magnitude: repair_magnitude, gate });
    }
    let n = matrix_factor.nrows();
    let diag = (0..n).map(|i| matrix_factor.row(i).norm_squared()).collect();
    Ok(CovarianceFactor {
        grid: grid.clone(),
        params: *params,
        epsilon,
        matrix_factor,
        triangular,
        diag,
        repair_magnitude,
    })
}

/// Cholesky factor when the matrix is positive definite; otherwise the
/// square root of its eigenvalue-floored projection.
fn factor_psd(a: DMatrix<f64>) -> Result<(DMatrix<f64>, bool, f64)> {
    let mut l = a.clone();
    if cholesky_in_place(&mut l).is_ok() {
        return Ok((l, true, 0.0));
    }
    let norm = a.norm();
    let eig = SymmetricEigen::try_new(a, 1e-14, 0)
        .ok_or_else(|| GmcError::Factorization("symmetric eigensolver did not converge".into()))?;
    let neg: f64 = eig.eigenvalues.iter().filter(|&&v| v < 0.0).map(|v| v * v).sum();
    let mut f = eig.eigenvectors;
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        f.column_mut(j).scale_mut(s);
    }
    Ok((f, false, neg.sqrt() / norm))
}

/// Right-looking blocked Cholesky on the lower triangle; the strict upper
/// triangle is zeroed. Returns the failing pivot on breakdown.
pub fn cholesky_in_place(a: &mut DMatrix<f64>) -> std::result::Result<(), usize> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut k0 = 0;
    while k0 < n {
        let kb = BLOCK.min(n - k0);
        // Unblocked factorization of the diagonal block.
        for j in k0..k0 + kb {
            let mut djj = a[(j, j)];
            for p in k0..j {
                djj -= a[(j, p)] * a[(j, p)];
            }
            if !(djj > 0.0) || !djj.is_finite() {
                return Err(j);
            }
            let ljj = djj.sqrt();
            a[(j, j)] = ljj;
            for i in j + 1..k0 + kb {
                let mut v = a[(i, j)];
                for p in k0..j {
                    v -= a[(i, p)] * a[(j, p)];
                }
                a[(i, j)] = v / ljj;
            }
        }
        let r0 = k0 + kb;
        let rest = n - r0;
        if rest > 0 {
            // Panel: L21 = A21·L11^{-T}, one contiguous column at a time.
            let s = a.as_mut_slice();
            for j in 0..kb {
                let cj = (k0 + j) * n;
                for p in 0..j {
                    let cp = (k0 + p) * n;
                    // L11[j, p] lives at row k0 + j of column k0 + p.
                    let f = s[cp + k0 + j];
                    if f != 0.0 {
                        let (lo, hi) = s.split_at_mut(cj);
                        let src = &lo[cp + r0..cp + n];
                        let dst = &mut hi[r0..n];
                        for (d, x) in dst.iter_mut().zip(src) {
                            *d -= f * x;
                        }
                    }
                }
                let ljj = s[cj + k0 + j];
                for v in &mut s[cj + r0..cj + n] {
                    *v /= ljj;
                }
            }
            // Trailing update of the lower triangle: A22 −= L21·L21ᵀ.
            let l21 = a.view((r0, k0), (rest, kb)).clone_owned();
            let mut j0 = r0;
            while j0 < n {
                let jb = BLOCK.min(n - j0);
                let bt = l21.rows(j0 - r0, jb).transpose();
                let lrows = l21.rows(j0 - r0, n - j0);
                a.view_mut((j0, j0), (n - j0, jb)).gemm(-1.0, &lrows, &bt, 1.0);
                j0 += jb;
            }
        }
        k0 += kb;
    }
    for j in 1..n {
        for i in 0..j {
            a[(i, j)] = 0.0;
        }
    }
    Ok(())
}

/// Standard normal vector of length `n` for one sample index.
fn normals(n: usize, bank_id: u64, sample_index: u64) -> impl Iterator<Item = f64> {
    let mut rng = stream(Domain::Field, bank_id, sample_index);
    (0..n).map(move |_| rng.sample::<f64, _>(StandardNormal))
}

/// Field realization L·ξ with ξ drawn from the stream keyed by
/// (`bank_id`, `sample_index`).
pub fn sample_field(factor: &CovarianceFactor, bank_id: u64, sample_index: u64) -> FieldSample {
    let n = factor.len();
    let xi = nalgebra::DVector::from_iterator(n, normals(n, bank_id, sample_index));
    let z = &factor.matrix_factor * xi;
    FieldSample { values: z.iter().copied().collect(), bank_id, sample_index }
}

/// Field realizations for sample indices `start..start + count` as the
/// columns of an n × count matrix. Uses the same normals as
/// [`sample_field`]; values agree with it up to floating-point summation
/// order.
pub fn sample_field_batch(factor: &CovarianceFactor, bank_id: u64, start: u64, count: usize) -> DMatrix<f64> {
    let n = factor.len();
    let mut xi = DMatrix::<f64>::zeros(n, count);
    for (j, mut col) in xi.column_iter_mut().enumerate() {
        for (slot, v) in col.iter_mut().zip(normals(n, bank_id, start + j as u64)) {
            *slot = v;
        }
    }
    let l = &factor.matrix_factor;
    if !factor.triangular {
        return l * xi;
    }
    // Row blocks of a lower-triangular product only touch the leading columns.
    let mut z = DMatrix::<f64>::zeros(n, count);
    let mut i0 = 0;
    while i0 < n {
        let ib = (2 * BLOCK).min(n - i0);
        let end = i0 + ib;
        z.view_mut((i0, 0), (ib, count)).gemm(1.0, &l.view((i0, 0), (ib, end)), &xi.rows(0, end), 0.0);
        i0 = end;
    }
    z
}
