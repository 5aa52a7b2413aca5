//! Dense complex linear algebra on a finite-dimensional Hilbert space.
//!
//! Operators are `nalgebra::DMatrix<Complex64>`. Superoperators act on
//! column-stacked vectorizations: `vec(X)[i + j*d] = X[(i, j)]`, which is
//! exactly the column-major storage order of `DMatrix`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

pub const I: C64 = C64::new(0.0, 1.0);

/// Numerical tolerances shared by the operator layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub herm: f64,
    pub psd: f64,
    pub trace: f64,
    pub degeneracy: f64,
    pub zero: f64,
    pub jump: f64,
    pub clip: f64,
    pub support: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            herm: 1e-10,
            psd: 1e-10,
            trace: 1e-8,
            degeneracy: 1e-8,
            zero: 1e-12,
            jump: 1e-12,
            clip: 1e-6,
            support: 1e-10,
        }
    }
}

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn identity(d: usize) -> CMatrix {
    CMatrix::identity(d, d)
}

pub fn zeros(d: usize) -> CMatrix {
    CMatrix::zeros(d, d)
}

/// Builds a matrix from real row-major entries.
pub fn real_matrix(d: usize, rows: &[f64]) -> CMatrix {
    assert_eq!(rows.len(), d * d);
    CMatrix::from_fn(d, d, |i, j| c(rows[i * d + j], 0.0))
}

pub fn dagger(m: &CMatrix) -> CMatrix {
    m.adjoint()
}

pub fn trace(m: &CMatrix) -> C64 {
    m.diagonal().iter().copied().sum()
}

/// `<a, tau> = Tr{a tau}` without forming the product.
pub fn inner(a: &CMatrix, tau: &CMatrix) -> C64 {
    let d = a.nrows();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..d {
        for k in 0..d {
            acc += a[(i, k)] * tau[(k, i)];
        }
    }
    acc
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

pub fn anticommutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b + b * a
}

/// `max |M - M^dag|` entrywise.
pub fn hermiticity_error(m: &CMatrix) -> f64 {
    let d = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn check_hermitian(m: &CMatrix, tol: f64) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::BadShape(format!("{}x{} matrix", m.nrows(), m.ncols())));
    }
    if !is_finite(m) {
        return Err(Error::NonFinite);
    }
    let err = hermiticity_error(m);
    if err > tol {
        return Err(Error::NonHermitian(err));
    }
    Ok(())
}

pub fn hermitize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

pub fn is_finite(m: &CMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Operator norm of a Hermitian matrix (largest |eigenvalue|); Frobenius
/// norm for anything else.
pub fn norm(m: &CMatrix) -> f64 {
    if hermiticity_error(m) <= 1e-12 * (1.0 + m.norm()) {
        let (vals, _) = eigh(m);
        vals.iter().fold(0.0, |a: f64, v| a.max(v.abs()))
    } else {
        m.norm()
    }
}

/// Trace norm `Tr sqrt(M^dag M)`.
pub fn trace_norm(m: &CMatrix) -> f64 {
    if hermiticity_error(m) == 0.0 {
        let (vals, _) = eigh(m);
        vals.iter().map(|v| v.abs()).sum()
    } else {
        m.clone().singular_values().iter().sum()
    }
}

/// Hermitian eigendecomposition with eigenvalues in ascending order; the
/// eigenvectors are the columns of the returned matrix, in the same order.
pub fn eigh(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let d = m.nrows();
    if d == 1 {
        return (vec![m[(0, 0)].re], identity(1));
    }
    let eig = SymmetricEigen::new(hermitize(m));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vecs = CMatrix::from_fn(d, d, |i, j| eig.eigenvectors[(i, order[j])]);
    (vals, vecs)
}

/// One eigenspace: eigenvalue and orthogonal projector.
#[derive(Debug, Clone)]
pub struct SpectralComponent {
    pub eigenvalue: f64,
    pub projector: CMatrix,
    pub rank: usize,
}

/// Spectral decomposition `M = sum_k lambda_k P_k` with ascending,
/// pairwise distinct eigenvalues. Eigenvalues closer than `deg_tol` are
/// merged into one projector.
pub fn spectral_decompose(m: &CMatrix, tol: &Tolerances) -> Result<Vec<SpectralComponent>> {
    check_hermitian(m, tol.herm * (1.0 + m.norm()))?;
    let (vals, vecs) = eigh(m);
    let d = m.nrows();
    let mut out: Vec<SpectralComponent> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (k, &v) in vals.iter().enumerate() {
        match members.last_mut() {
            Some(group) if v - vals[*group.last().unwrap()] < tol.degeneracy => group.push(k),
            _ => members.push(vec![k]),
        }
    }
    for group in members {
        let mut proj = zeros(d);
        for &k in &group {
            let v = vecs.column(k);
            proj += v * v.adjoint();
        }
        let eigenvalue = group.iter().map(|&k| vals[k]).sum::<f64>() / group.len() as f64;
        out.push(SpectralComponent { eigenvalue, projector: proj, rank: group.len() });
    }
    Ok(out)
}

/// Applies `f` to the eigenvalues of a PSD matrix; eigenvalues below
/// `zero_tol` are sent to 0 (so `0 ln 0 = 0` downstream).
pub fn matrix_function_on_support<F>(m: &CMatrix, f: F, zero_tol: f64) -> Result<CMatrix>
where
    F: Fn(f64) -> f64,
{
    let tol = Tolerances::default();
    check_hermitian(m, tol.herm * (1.0 + m.norm()))?;
    let (vals, vecs) = eigh(m);
    if let Some(&min) = vals.first() {
        if min < -tol.psd {
            return Err(Error::NotPsd(min));
        }
    }
    Ok(from_eigen(&vals, &vecs, |x| if x < zero_tol { 0.0 } else { f(x) }))
}

/// `sum_k g(lambda_k) v_k v_k^dag`.
pub fn from_eigen<F: Fn(f64) -> f64>(vals: &[f64], vecs: &CMatrix, g: F) -> CMatrix {
    let d = vecs.nrows();
    let mut out = zeros(d);
    for (k, &v) in vals.iter().enumerate() {
        let w = g(v);
        if w == 0.0 {
            continue;
        }
        let col = vecs.column(k);
        out += (col * col.adjoint()).scale(w);
    }
    out
}

/// Matrix exponential by scaling and squaring with a Padé approximant.
pub fn expm_scaled(a: &CMatrix) -> Result<CMatrix> {
    if !is_finite(a) {
        return Err(Error::NonFinite);
    }
    if a.nrows() != a.ncols() {
        return Err(Error::BadShape(format!("{}x{} matrix", a.nrows(), a.ncols())));
    }
    if a.iter().all(|z| *z == C64::new(0.0, 0.0)) {
        return Ok(CMatrix::identity(a.nrows(), a.ncols()));
    }
    let e = a.exp();
    if !is_finite(&e) {
        return Err(Error::NonFinite);
    }
    Ok(e)
}

/// A linear map on operators, stored as a `d^2 x d^2` matrix acting on
/// column-stacked vectorizations.
#[derive(Debug, Clone, PartialEq)]
pub struct Superoperator {
    pub dim: usize,
    pub matrix: CMatrix,
}

impl Superoperator {
    pub fn zero(dim: usize) -> Self {
        Superoperator { dim, matrix: CMatrix::zeros(dim * dim, dim * dim) }
    }

    pub fn identity(dim: usize) -> Self {
        Superoperator { dim, matrix: CMatrix::identity(dim * dim, dim * dim) }
    }

    pub fn apply(&self, x: &CMatrix) -> CMatrix {
        unvec(&(&self.matrix * vec_op(x)), self.dim)
    }

    pub fn compose(&self, inner: &Superoperator) -> Superoperator {
        Superoperator { dim: self.dim, matrix: &self.matrix * &inner.matrix }
    }

    pub fn scaled(&self, t: f64) -> Superoperator {
        Superoperator { dim: self.dim, matrix: self.matrix.scale(t) }
    }

    /// `exp(t S)`.
    pub fn exp(&self, t: f64) -> Result<Superoperator> {
        Ok(Superoperator { dim: self.dim, matrix: expm_scaled(&self.matrix.scale(t))? })
    }
}

pub fn vec_op(x: &CMatrix) -> DVector<C64> {
    DVector::from_column_slice(x.as_slice())
}

pub fn unvec(v: &DVector<C64>, d: usize) -> CMatrix {
    CMatrix::from_column_slice(d, d, v.as_slice())
}

/// The matrix unit `|i><j|`.
pub fn matrix_unit(d: usize, i: usize, j: usize) -> CMatrix {
    let mut m = zeros(d);
    m[(i, j)] = C64::new(1.0, 0.0);
    m
}

/// Builds the matrix of a linear map by applying it to every matrix unit.
pub fn vectorize_superoperator<F>(action: F, dim: usize) -> Superoperator
where
    F: Fn(&CMatrix) -> CMatrix,
{
    let n = dim * dim;
    let mut matrix = CMatrix::zeros(n, n);
    for j in 0..dim {
        for i in 0..dim {
            let col = i + j * dim;
            let image = action(&matrix_unit(dim, i, j));
            matrix.column_mut(col).copy_from_slice(image.as_slice());
        }
    }
    Superoperator { dim, matrix }
}

/// A validated statistical operator.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(CMatrix);

impl DensityMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        Self::with_tolerances(m, &Tolerances::default())
    }

    pub fn with_tolerances(m: CMatrix, tol: &Tolerances) -> Result<Self> {
        check_hermitian(&m, tol.herm)?;
        let (vals, _) = eigh(&m);
        if vals[0] < -tol.psd {
            return Err(Error::NotPsd(vals[0]));
        }
        let tr = trace(&m).re;
        if (tr - 1.0).abs() > tol.trace {
            return Err(Error::TraceNotOne(tr));
        }
        Ok(DensityMatrix(m))
    }

    /// Wraps a matrix already known to be a state.
    pub(crate) fn new_unchecked(m: CMatrix) -> Self {
        DensityMatrix(m)
    }

    pub fn maximally_mixed(d: usize) -> Self {
        DensityMatrix(identity(d).scale(1.0 / d as f64))
    }

    /// `|i><i|`.
    pub fn basis(d: usize, i: usize) -> Self {
        DensityMatrix(matrix_unit(d, i, i))
    }

    /// `|psi><psi|` for a (not necessarily normalized) vector.
    pub fn pure(psi: &[C64]) -> Result<Self> {
        let v = DVector::from_column_slice(psi);
        let n = v.norm();
        if !(n > 0.0) {
            return Err(Error::ZeroTrace(0.0));
        }
        let v = v.unscale(n);
        Ok(DensityMatrix(&v * v.adjoint()))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn purity_defect(&self) -> f64 {
        1.0 - inner(&self.0, &self.0).re
    }
}

impl AsRef<CMatrix> for DensityMatrix {
    fn as_ref(&self) -> &CMatrix {
        &self.0
    }
}

/// Non-normalized a posteriori state: positive, trace not fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct NnapState(CMatrix);

impl NnapState {
    pub fn new(m: CMatrix) -> Result<Self> {
        let tol = Tolerances::default();
        let scale = trace(&m).re.abs().max(1.0);
        check_hermitian(&m, tol.herm * scale)?;
        let (vals, _) = eigh(&m);
        if vals[0] < -tol.psd * scale {
            return Err(Error::NotPsd(vals[0]));
        }
        Ok(NnapState(m))
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn trace(&self) -> f64 {
        trace(&self.0).re
    }

    /// `sigma / Tr sigma`, or `fallback` when the trace vanishes.
    pub fn normalized(&self, fallback: &DensityMatrix) -> DensityMatrix {
        let tr = self.trace();
        if tr > 0.0 {
            DensityMatrix(self.0.unscale(tr))
        } else {
            fallback.clone()
        }
    }
}

/// What a positivity repair had to do.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RepairInfo {
    pub min_eigenvalue: f64,
    pub clipped: bool,
    pub warned: bool,
}

/// Hermitize, clip negative eigenvalues and renormalize to unit trace.
pub fn project_to_density(m: &CMatrix, clip_tol: f64) -> Result<(DensityMatrix, RepairInfo)> {
    if !is_finite(m) {
        return Err(Error::NonFinite);
    }
    let h = hermitize(m);
    let tr = trace(&h).re;
    if !(tr > 0.0) {
        return Err(Error::ZeroTrace(tr));
    }
    let (vals, vecs) = eigh(&h);
    let min = vals[0];
    let mut info = RepairInfo { min_eigenvalue: min, clipped: false, warned: min < -clip_tol * tr };
    if min >= 0.0 {
        return Ok((DensityMatrix(h.unscale(tr)), info));
    }
    info.clipped = true;
    let clipped = from_eigen(&vals, &vecs, |x| x.max(0.0));
    let tr2 = trace(&clipped).re;
    if !(tr2 > 0.0) {
        return Err(Error::ZeroTrace(tr2));
    }
    Ok((DensityMatrix(hermitize(&clipped).unscale(tr2)), info))
}

/// JSON encoding of matrices: an array of rows, each entry `[re, im]`.
pub mod json {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub type Rows = Vec<Vec<[f64; 2]>>;

    pub fn to_rows(m: &CMatrix) -> Rows {
        (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
            .collect()
    }

    pub fn from_rows(rows: &Rows) -> Result<CMatrix> {
        let d = rows.len();
        if d == 0 {
            return Err(Error::BadShape("empty matrix".into()));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::BadShape(format!("row of length {} in {d}x{d} matrix", bad.len())));
        }
        Ok(CMatrix::from_fn(d, d, |i, j| c(rows[i][j][0], rows[i][j][1])))
    }

    pub fn serialize<S: Serializer>(m: &CMatrix, s: S) -> std::result::Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<CMatrix, D::Error> {
        let rows = Rows::deserialize(d)?;
        from_rows(&rows).map_err(serde::de::Error::custom)
    }

    pub mod list {
        use super::*;

        pub fn serialize<S: Serializer>(ms: &[CMatrix], s: S) -> std::result::Result<S::Ok, S::Error> {
            ms.iter().map(to_rows).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<CMatrix>, D::Error> {
            let all = Vec::<Rows>::deserialize(d)?;
            all.iter().map(|r| from_rows(r).map_err(serde::de::Error::custom)).collect()
        }
    }
}

/// Pauli and ladder operators for a qubit. Basis `|0>` is the excited state:
/// `sigma_z = diag(1, -1)` and `sigma_minus = |1><0|`.
pub mod qubit {
    use super::*;

    pub fn sigma_x() -> CMatrix {
        real_matrix(2, &[0.0, 1.0, 1.0, 0.0])
    }

    pub fn sigma_y() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0)])
    }

    pub fn sigma_z() -> CMatrix {
        real_matrix(2, &[1.0, 0.0, 0.0, -1.0])
    }

    pub fn sigma_minus() -> CMatrix {
        real_matrix(2, &[0.0, 0.0, 1.0, 0.0])
    }

    pub fn sigma_plus() -> CMatrix {
        real_matrix(2, &[0.0, 1.0, 0.0, 0.0])
    }

    pub fn excited() -> DensityMatrix {
        DensityMatrix::basis(2, 0)
    }

    pub fn ground() -> DensityMatrix {
        DensityMatrix::basis(2, 1)
    }

    /// `|+> = (|0> + |1>)/sqrt 2`.
    pub fn plus() -> DensityMatrix {
        DensityMatrix(real_matrix(2, &[0.5, 0.5, 0.5, 0.5]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::qubit::*;

    fn taylor_expm(a: &CMatrix) -> CMatrix {
        // Oracle: scale by 2^s until the norm is below 1/2, sum 40 Taylor
        // terms, square back.
        let mut s = 0;
        let mut norm = a.norm();
        while norm > 0.5 {
            norm /= 2.0;
            s += 1;
        }
        let b = a.unscale(2f64.powi(s));
        let n = a.nrows();
        let mut term = CMatrix::identity(n, n);
        let mut sum = term.clone();
        for k in 1..40 {
            term = &term * &b / C64::new(k as f64, 0.0);
            sum += &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn spectral_identity_and_pauli() {
        let tol = Tolerances::default();
        let parts = spectral_decompose(&identity(2), &tol).unwrap();
        assert_eq!(parts.len(), 1);
        assert!((parts[0].eigenvalue - 1.0).abs() < 1e-15);
        assert!(max_abs_diff(&parts[0].projector, &identity(2)) < 1e-15);

        let parts = spectral_decompose(&sigma_z(), &tol).unwrap();
        assert_eq!(parts.len(), 2);
        assert!((parts[0].eigenvalue + 1.0).abs() < 1e-15);
        assert!(max_abs_diff(&parts[0].projector, ground().matrix()) < 1e-15);
        assert!((parts[1].eigenvalue - 1.0).abs() < 1e-15);
        assert!(max_abs_diff(&parts[1].projector, excited().matrix()) < 1e-15);
    }

    #[test]
    fn spectral_rejects_non_hermitian() {
        let err = spectral_decompose(&sigma_minus(), &Tolerances::default()).unwrap_err();
        assert!(matches!(err, Error::NonHermitian(_)));
    }

    #[test]
    fn function_on_support_examples() {
        let z = 1e-12;
        let m = real_matrix(2, &[4.0, 0.0, 0.0, 0.0]);
        let s = matrix_function_on_support(&m, f64::sqrt, z).unwrap();
        assert!(max_abs_diff(&s, &real_matrix(2, &[2.0, 0.0, 0.0, 0.0])) < 1e-15);

        let m = real_matrix(2, &[1.0, 0.0, 0.0, 0.0]);
        let l = matrix_function_on_support(&m, f64::ln, z).unwrap();
        assert!(max_abs_diff(&l, &zeros(2)) < 1e-15);

        let m = real_matrix(2, &[0.75, 0.0, 0.0, 0.25]);
        let l = matrix_function_on_support(&m, f64::ln, z).unwrap();
        assert!((l[(0, 0)].re + 0.287682072451781).abs() < 1e-12);
        assert!((l[(1, 1)].re + 1.386294361119891).abs() < 1e-12);

        let bad = real_matrix(2, &[1.0, 0.0, 0.0, -0.5]);
        assert!(matches!(matrix_function_on_support(&bad, f64::sqrt, z), Err(Error::NotPsd(_))));
    }

    #[test]
    fn expm_examples() {
        assert_eq!(expm_scaled(&zeros(2)).unwrap(), identity(2));
        let e = expm_scaled(&real_matrix(2, &[1.0, 0.0, 0.0, 2.0])).unwrap();
        assert!((e[(0, 0)].re - 1f64.exp()).abs() < 1e-14);
        assert!((e[(1, 1)].re - 2f64.exp()).abs() < 1e-13);
        assert!(e[(0, 1)].norm() < 1e-15);

        let mut nan = zeros(2);
        nan[(0, 1)] = c(f64::NAN, 0.0);
        assert_eq!(expm_scaled(&nan).unwrap_err(), Error::NonFinite);
    }

    #[test]
    fn expm_matches_taylor_oracle() {
        let a = CMatrix::from_fn(4, 4, |i, j| c((i as f64 - j as f64) * 0.7, (i * j) as f64 * 0.3 - 0.5));
        let fast = expm_scaled(&a).unwrap();
        let slow = taylor_expm(&a);
        let rel = (&fast - &slow).norm() / slow.norm();
        assert!(rel < 1e-10, "rel error {rel}");
    }

    #[test]
    fn vectorize_examples() {
        let s = vectorize_superoperator(|x| x.clone(), 2);
        assert_eq!(s.matrix, CMatrix::identity(4, 4));

        let a = CMatrix::from_fn(2, 2, |i, j| c(i as f64 + 1.0, j as f64 - 0.5));
        let b = CMatrix::from_fn(2, 2, |i, j| c(j as f64 * 2.0 - i as f64, 0.25));
        let s = vectorize_superoperator(|x| &a * x * &b, 2);
        // column stacking: vec(AXB) = (B^T kron A) vec(X)
        let kron = b.transpose().kronecker(&a);
        assert!(max_abs_diff(&s.matrix, &kron) < 1e-14);
        for i in 0..2 {
            for j in 0..2 {
                let u = matrix_unit(2, i, j);
                assert!(max_abs_diff(&s.apply(&u), &(&a * &u * &b)) < 1e-12);
            }
        }
    }

    #[test]
    fn projection_examples() {
        let (d, info) = project_to_density(&real_matrix(2, &[0.5, 0.0, 0.0, 0.5]), 1e-6).unwrap();
        assert_eq!(d.matrix(), &real_matrix(2, &[0.5, 0.0, 0.0, 0.5]));
        assert!(!info.clipped);

        let (d, info) = project_to_density(&real_matrix(2, &[1.1, 0.0, 0.0, -0.1]), 1e-6).unwrap();
        assert!(max_abs_diff(d.matrix(), &real_matrix(2, &[1.0, 0.0, 0.0, 0.0])) < 1e-15);
        assert!(info.clipped && info.warned);

        let (d, _) = project_to_density(&real_matrix(2, &[3.0, 0.0, 0.0, 1.0]), 1e-6).unwrap();
        assert!(max_abs_diff(d.matrix(), &real_matrix(2, &[0.75, 0.0, 0.0, 0.25])) < 1e-15);

        assert!(matches!(project_to_density(&zeros(2), 1e-6), Err(Error::ZeroTrace(_))));
    }

    #[test]
    fn density_validation() {
        assert!(DensityMatrix::new(real_matrix(2, &[0.5, 0.0, 0.0, 0.5])).is_ok());
        assert!(DensityMatrix::new(real_matrix(2, &[1.2, 0.0, 0.0, -0.2])).is_err());
        assert!(DensityMatrix::new(real_matrix(2, &[0.5, 0.0, 0.0, 0.6])).is_err());
        assert!(DensityMatrix::new(sigma_minus()).is_err());
    }

    #[test]
    fn json_rows_roundtrip() {
        let m = CMatrix::from_fn(3, 3, |i, j| c(i as f64 * 0.1 + 1e-17, -(j as f64) / 3.0));
        let text = serde_json::to_string(&json::to_rows(&m)).unwrap();
        let back = json::from_rows(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(m, back);
        assert!(json::from_rows(&vec![vec![[1.0, 0.0]], vec![]]).is_err());
    }
}
