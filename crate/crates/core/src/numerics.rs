//! Dense complex linear algebra on Hermitian matrices, complex-Gaussian
//! sampling, and the zeroth-order Bessel function of the first kind.
//!
//! All covariance work goes through an eigendecomposition rather than a
//! Cholesky factor, since predicted covariances can be singular up to
//! round-off. Matrices here are small (M ≤ 64), so the O(M³) cost is fine.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

const HERMITIAN_RTOL: f64 = 1e-12;
const PSD_ERROR_RTOL: f64 = 1e-8;
const PD_RTOL: f64 = 1e-12;

/// Returns `true` when every entry of `m` is finite.
pub fn all_finite(m: &CMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Relative Frobenius distance `‖a − b‖_F / ‖b‖_F` (absolute when `b` is zero).
pub fn rel_frobenius(a: &CMatrix, b: &CMatrix) -> f64 {
    let diff = (a - b).norm();
    let scale = b.norm();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// A Hermitian positive-semidefinite matrix (PSD up to round-off).
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianCov {
    matrix: CMatrix,
}

impl HermitianCov {
    /// Wraps `matrix` after checking it is square, finite and Hermitian to
    /// within a relative tolerance of 1e-12. The stored matrix is the exact
    /// Hermitian part `(A + Aᴴ)/2`.
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::DimMismatch(format!(
                "covariance must be square and non-empty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if !all_finite(&matrix) {
            return Err(Error::NotHermitian { asymmetry: f64::NAN });
        }
        let scale = matrix.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let mut asymmetry = 0.0f64;
        let n = matrix.nrows();
        for r in 0..n {
            for c in 0..=r {
                asymmetry = asymmetry.max((matrix[(r, c)] - matrix[(c, r)].conj()).norm());
            }
        }
        if asymmetry > HERMITIAN_RTOL * scale {
            return Err(Error::NotHermitian { asymmetry });
        }
        Ok(Self::from_hermitian_part(matrix))
    }

    /// Symmetrizes without validation. Used internally where the matrix is
    /// Hermitian by construction and only round-off asymmetry is possible.
    pub(crate) fn from_hermitian_part(matrix: CMatrix) -> Self {
        let adj = matrix.adjoint();
        Self {
            matrix: (matrix + adj).scale(0.5),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: CMatrix::identity(dim, dim),
        }
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        Self {
            matrix: CMatrix::identity(dim, dim).scale(scale),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            matrix: CMatrix::zeros(dim, dim),
        }
    }

    /// Diagonal matrix from real (nonnegative) entries.
    pub fn from_diagonal(diag: &[f64]) -> Self {
        let d = DVector::from_iterator(diag.len(), diag.iter().map(|&v| Complex64::new(v, 0.0)));
        Self {
            matrix: CMatrix::from_diagonal(&d),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn trace(&self) -> f64 {
        self.matrix.diagonal().iter().map(|z| z.re).sum()
    }

    /// Real linear combination `a·self + b·other`.
    pub fn blend(&self, a: f64, other: &HermitianCov, b: f64) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::DimMismatch(format!(
                "blend of {}x{} and {}x{}",
                self.dim(),
                self.dim(),
                other.dim(),
                other.dim()
            )));
        }
        Ok(Self {
            matrix: self.matrix.scale(a) + other.matrix.scale(b),
        })
    }

    pub fn eigen(&self) -> HermitianEigen {
        let eig = SymmetricEigen::new(self.matrix.clone());
        HermitianEigen {
            values: eig.eigenvalues,
            vectors: eig.eigenvectors,
        }
    }

    /// Quadratic form `vᴴ·A·v` (real for Hermitian `A`).
    pub fn quadratic_form(&self, v: &CVector) -> f64 {
        v.dotc(&(&self.matrix * v)).re
    }
}

/// Eigendecomposition `A = U·diag(λ)·Uᴴ` of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: DVector<f64>,
    pub vectors: CMatrix,
}

impl HermitianEigen {
    pub fn max_eigenvalue(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn trace(&self) -> f64 {
        self.values.sum()
    }

    /// `U·diag(f(λ))·Uᴴ`.
    pub fn reconstruct(&self, f: impl Fn(f64) -> f64) -> CMatrix {
        let scaled_cols = {
            let mut u = self.vectors.clone();
            for (c, &lambda) in self.values.iter().enumerate() {
                let s = f(lambda);
                u.column_mut(c).iter_mut().for_each(|z| *z *= s);
            }
            u
        };
        scaled_cols * self.vectors.adjoint()
    }

    /// Zeroes negative eigenvalues, failing when any of them is below
    /// −1e-8·Σ|λ| (a genuinely indefinite matrix rather than round-off).
    pub fn clamp_psd(&mut self) -> Result<()> {
        let trace_abs = self.values.iter().map(|v| v.abs()).sum::<f64>();
        let min = self.min_eigenvalue();
        if min < -PSD_ERROR_RTOL * trace_abs {
            return Err(Error::NotPsd {
                min_eigenvalue: min,
                trace: self.trace(),
            });
        }
        self.values.iter_mut().for_each(|v| *v = v.max(0.0));
        Ok(())
    }
}

/// Hermitian square root `L` with `L·Lᴴ = cov`.
pub fn hermitian_sqrt(cov: &HermitianCov) -> Result<CMatrix> {
    let mut eig = cov.eigen();
    eig.clamp_psd()?;
    Ok(eig.reconstruct(f64::sqrt))
}

/// Inverse of a positive-definite Hermitian matrix.
pub fn hermitian_inverse(cov: &HermitianCov) -> Result<HermitianCov> {
    let eig = cov.eigen();
    let min = eig.min_eigenvalue();
    let trace = eig.trace();
    if !(min > PD_RTOL * trace) {
        return Err(Error::Singular {
            min_eigenvalue: min,
            trace,
        });
    }
    Ok(HermitianCov::from_hermitian_part(eig.reconstruct(|l| 1.0 / l)))
}

/// Seeded, platform-independent random stream (ChaCha8).
///
/// Sub-streams are derived from a root seed and a path of integers
/// (e.g. trial, component), so every trial owns an independent stream no
/// matter which thread runs it.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a root seed with a derivation path into a new 64-bit seed.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(root), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn derive(root: u64, path: &[u64]) -> Self {
        Self::new(derive_seed(root, path))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// One CN(0, 1) draw: real and imaginary parts each N(0, 1/2).
    pub fn complex_normal(&mut self) -> Complex64 {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let re = self.standard_normal();
        let im = self.standard_normal();
        Complex64::new(re * s, im * s)
    }

    pub fn complex_normal_vector(&mut self, len: usize) -> CVector {
        CVector::from_fn(len, |_, _| self.complex_normal())
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0 && n <= u32::MAX as usize);
        self.rng.random_range(0..n as u32) as usize
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

/// Draws `mean + cov^{1/2}·g` with `g` i.i.d. CN(0, 1).
pub fn sample_complex_gaussian(
    rng: &mut RngStream,
    mean: &CVector,
    cov: &HermitianCov,
) -> Result<CVector> {
    if mean.len() != cov.dim() {
        return Err(Error::DimMismatch(format!(
            "mean length {} vs covariance dim {}",
            mean.len(),
            cov.dim()
        )));
    }
    let root = hermitian_sqrt(cov)?;
    Ok(sample_with_root(rng, mean, &root))
}

/// Same as [`sample_complex_gaussian`] with a precomputed square root.
pub fn sample_with_root(rng: &mut RngStream, mean: &CVector, root: &CMatrix) -> CVector {
    let g = rng.complex_normal_vector(root.ncols());
    mean + root * g
}

/// Zeroth-order Bessel function of the first kind.
///
/// Power series for |z| ≤ 8, Miller's backward recurrence normalized by
/// `J0 + 2·Σ J_2k = 1` beyond. Absolute error stays below 1e-12 for |z| ≤ 50.
pub fn bessel_j0(z: f64) -> f64 {
    let x = z.abs();
    if x <= 8.0 {
        j0_series(x)
    } else {
        j0_miller(x)
    }
}

fn j0_series(x: f64) -> f64 {
    let q = -0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / ((k * k) as f64);
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

fn j0_miller(x: f64) -> f64 {
    let start = {
        let n = (x + 20.0 + 6.0 * x.cbrt()).ceil() as usize + 20;
        n + (n & 1)
    };
    let two_over_x = 2.0 / x;
    let mut j_next = 0.0; // J_{n+1}
    let mut j_cur = 1e-300; // J_n
    let mut norm = 0.0;
    for n in (1..=start).rev() {
        let j_prev = (n as f64) * two_over_x * j_cur - j_next;
        j_next = j_cur;
        j_cur = j_prev;
        // j_cur now holds J_{n-1}
        if (n - 1) % 2 == 0 && n - 1 > 0 {
            norm += 2.0 * j_cur;
        }
        if j_cur.abs() > 1e250 {
            j_cur *= 1e-250;
            j_next *= 1e-250;
            norm *= 1e-250;
        }
    }
    norm += j_cur;
    j_cur / norm
}
