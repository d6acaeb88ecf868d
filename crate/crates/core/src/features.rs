//! Log-Euclidean geometry of covariance features.
//!
//! Each covariance is mapped once to its Hermitian matrix logarithm; the
//! dissimilarity between two samples is the Frobenius distance of their logs.
//! For the O(N²) pass the logs are packed into real vectors whose Euclidean
//! distance equals that Frobenius distance.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::channel::{CsiSample, C64};
use crate::error::{Error, Result};

/// Default eigenvalue floor relative to the mean eigenvalue.
pub const DEFAULT_EIG_FLOOR: f64 = 1e-10;

/// Hermitian logarithm of a covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LogFeature {
    pub matrix: DMatrix<C64>,
}

impl LogFeature {
    /// Real vector `v` with `‖v_a − v_b‖ = ‖log C_a − log C_b‖_F`: the diagonal, then
    /// √2 times the real and imaginary parts of the strict upper triangle.
    pub fn packed(&self) -> DVector<f64> {
        let n = self.matrix.nrows();
        let mut v = Vec::with_capacity(n * n);
        for i in 0..n {
            v.push(self.matrix[(i, i)].re);
        }
        let r2 = std::f64::consts::SQRT_2;
        for i in 0..n {
            for j in i + 1..n {
                let z = self.matrix[(i, j)];
                v.push(r2 * z.re);
                v.push(r2 * z.im);
            }
        }
        DVector::from_vec(v)
    }
}

/// `U log(max(Λ, ε tr(C)/n)) U^H` for Hermitian PSD `C = U Λ U^H`.
pub fn hermitian_log(c: &DMatrix<C64>, eig_floor: f64) -> Result<LogFeature> {
    if !c.is_square() || c.nrows() == 0 {
        return Err(Error::Domain("covariance must be a non-empty square matrix".into()));
    }
    let scale = c.norm();
    if !scale.is_finite() {
        return Err(Error::Domain("covariance has non-finite entries".into()));
    }
    if (c - c.adjoint()).norm() > 1e-9 * scale {
        return Err(Error::Domain("covariance is not Hermitian".into()));
    }
    let n = c.nrows();
    let trace = c.trace().re;
    if !(trace > 0.0) {
        return Err(Error::Domain("covariance has zero trace".into()));
    }
    let floor = eig_floor * trace / n as f64;
    let eig = c.clone().symmetric_eigen();
    let u = &eig.eigenvectors;
    let logs: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(floor).ln()).collect();
    let mut scaled = u.clone();
    for (j, l) in logs.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*l);
    }
    let mut m = scaled * u.adjoint();
    // Symmetrize away roundoff so the result is Hermitian to machine precision.
    for i in 0..n {
        m[(i, i)].im = 0.0;
        for j in i + 1..n {
            let z = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
        }
    }
    Ok(LogFeature { matrix: m })
}

/// `‖log C_m − log C_n‖_F`.
pub fn log_euclidean_distance(cm: &DMatrix<C64>, cn: &DMatrix<C64>, eig_floor: f64) -> Result<f64> {
    if cm.shape() != cn.shape() {
        return Err(Error::Domain("covariances differ in shape".into()));
    }
    let a = hermitian_log(cm, eig_floor)?;
    let b = hermitian_log(cn, eig_floor)?;
    Ok((a.matrix - b.matrix).norm())
}

/// Symmetric pairwise dissimilarities with zero diagonal, stored densely.
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DissimilarityMatrix {
    /// Builds from a full row-major matrix, checking the invariants.
    pub fn from_dense(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Domain(format!("expected {} entries, got {}", n * n, data.len())));
        }
        for i in 0..n {
            if data[i * n + i] != 0.0 {
                return Err(Error::Domain(format!("nonzero diagonal at {i}")));
            }
            for j in i + 1..n {
                let d = data[i * n + j];
                if d != data[j * n + i] || !(d >= 0.0) || !d.is_finite() {
                    return Err(Error::Domain(format!("entry ({i}, {j}) is asymmetric or invalid")));
                }
            }
        }
        Ok(Self { n, data })
    }

    /// Fills from a function of `i < j`, mirrored.
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> Self {
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| (i + 1..n).map(|j| f(i, j)).collect())
            .collect();
        let mut data = vec![0.0; n * n];
        for (i, row) in rows.iter().enumerate() {
            for (k, &d) in row.iter().enumerate() {
                let j = i + 1 + k;
                data[i * n + j] = d;
                data[j * n + i] = d;
            }
        }
        Self { n, data }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// Restriction to a subset of indices, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let m = idx.len();
        let mut data = vec![0.0; m * m];
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                data[a * m + b] = self.get(i, j);
            }
        }
        Self { n: m, data }
    }

    /// Binary layout: `N` as little-endian u64, then the strict upper triangle
    /// row by row as little-endian f64.
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(&(self.n as u64).to_le_bytes())?;
        for i in 0..self.n {
            for j in i + 1..self.n {
                out.write_all(&self.get(i, j).to_le_bytes())?;
            }
        }
        out.flush()
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let bad = |e: std::io::Error| Error::Data(format!("truncated dissimilarity matrix: {e}"));
        let mut word = [0u8; 8];
        input.read_exact(&mut word).map_err(bad)?;
        let n = u64::from_le_bytes(word) as usize;
        if n > 1 << 20 {
            return Err(Error::Data(format!("implausible matrix size {n}")));
        }
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                input.read_exact(&mut word).map_err(bad)?;
                let d = f64::from_le_bytes(word);
                data[i * n + j] = d;
                data[j * n + i] = d;
            }
        }
        Self::from_dense(n, data).map_err(|e| Error::Data(e.to_string()))
    }
}

/// All pairwise Log-Euclidean distances between covariance matrices.
pub fn dissimilarity_from_covariances(covs: &[DMatrix<C64>], eig_floor: f64) -> Result<DissimilarityMatrix> {
    if covs.len() < 2 {
        return Err(Error::Domain("need at least two samples".into()));
    }
    let shape = covs[0].shape();
    if covs.iter().any(|c| c.shape() != shape) {
        return Err(Error::Domain("covariances differ in shape".into()));
    }
    let packed: Vec<DVector<f64>> = covs
        .par_iter()
        .map(|c| hermitian_log(c, eig_floor).map(|l| l.packed()))
        .collect::<Result<_>>()?;
    Ok(DissimilarityMatrix::from_fn(covs.len(), |i, j| {
        packed[i]
            .iter()
            .zip(packed[j].iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }))
}

pub fn dissimilarity_matrix(samples: &[CsiSample], eig_floor: f64) -> Result<DissimilarityMatrix> {
    let covs: Vec<DMatrix<C64>> = samples.iter().map(|s| s.covariance.clone()).collect();
    dissimilarity_from_covariances(&covs, eig_floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_psd(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> DMatrix<C64> {
        let g = DMatrix::from_fn(n, rank, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        &g * g.adjoint()
    }

    fn random_unitary(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<C64> {
        let g = DMatrix::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        g.qr().q()
    }

    fn real_diag(values: &[f64]) -> DMatrix<C64> {
        DMatrix::from_diagonal(&DVector::from_iterator(values.len(), values.iter().map(|&v| C64::new(v, 0.0))))
    }

    #[test]
    fn log_of_identity_and_diagonal() {
        let l = hermitian_log(&DMatrix::identity(4, 4), DEFAULT_EIG_FLOOR).unwrap();
        assert!(l.matrix.norm() < 1e-14);
        let e = std::f64::consts::E;
        let l = hermitian_log(&real_diag(&[e, e * e]), DEFAULT_EIG_FLOOR).unwrap();
        assert!((l.matrix.clone() - real_diag(&[1.0, 2.0])).norm() < 1e-14);
    }

    #[test]
    fn exp_of_log_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let c = random_psd(&mut rng, 6, 8);
            let l = hermitian_log(&c, 1e-14).unwrap();
            let back = l.matrix.exp();
            assert!((back - &c).norm() / c.norm() < 1e-8);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut c = DMatrix::<C64>::identity(3, 3);
        c[(0, 1)] = C64::new(1.0, 0.0);
        assert!(matches!(hermitian_log(&c, 1e-10), Err(Error::Domain(_))));
        assert!(matches!(hermitian_log(&DMatrix::zeros(3, 3), 1e-10), Err(Error::Domain(_))));
    }

    #[test]
    fn distance_examples() {
        let i = DMatrix::<C64>::identity(32, 32);
        let e2 = &i * C64::new(std::f64::consts::E.powi(2), 0.0);
        let d = log_euclidean_distance(&i, &e2, DEFAULT_EIG_FLOOR).unwrap();
        assert!((d - 2.0 * 32f64.sqrt()).abs() < 1e-12);
        assert!((d - 11.3137).abs() < 1e-4);
        assert_eq!(log_euclidean_distance(&e2, &e2, DEFAULT_EIG_FLOOR).unwrap(), 0.0);
    }

    #[test]
    fn packed_distance_matches_frobenius() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = hermitian_log(&random_psd(&mut rng, 5, 5), 1e-10).unwrap();
        let b = hermitian_log(&random_psd(&mut rng, 5, 2), 1e-10).unwrap();
        let direct = (&a.matrix - &b.matrix).norm();
        assert!(((a.packed() - b.packed()).norm() - direct).abs() < 1e-12 * direct);
    }

    #[test]
    fn unitary_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let (a, b) = (random_psd(&mut rng, 6, 6), random_psd(&mut rng, 6, 6));
            let u = random_unitary(&mut rng, 6);
            let d0 = log_euclidean_distance(&a, &b, 1e-10).unwrap();
            let d1 = log_euclidean_distance(&(&u * &a * u.adjoint()), &(&u * &b * u.adjoint()), 1e-10).unwrap();
            assert!((d0 - d1).abs() < 1e-9);
        }
    }

    #[test]
    fn eigenvalues_below_floor_do_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = random_unitary(&mut rng, 4);
        let build = |tail: f64| {
            let d = real_diag(&[2.0, 1.0, tail, tail * 0.5]);
            &u * d * u.adjoint()
        };
        let other = random_psd(&mut rng, 4, 4);
        let d1 = log_euclidean_distance(&build(1e-14), &other, 1e-6).unwrap();
        let d2 = log_euclidean_distance(&build(1e-16), &other, 1e-6).unwrap();
        assert!((d1 - d2).abs() < 1e-9);
    }

    #[test]
    fn matrix_of_identical_samples_is_zero() {
        let c = DMatrix::<C64>::identity(3, 3);
        let d = dissimilarity_from_covariances(&[c.clone(), c], 1e-10).unwrap();
        assert_eq!(d.get(0, 1), 0.0);
        assert_eq!(d.get(1, 0), 0.0);
    }

    #[test]
    fn diagonal_inputs_match_scalar_formula() {
        let diags = [[1.0, 2.0, 3.0], [0.5, 4.0, 1.0], [2.0, 2.0, 9.0]];
        let covs: Vec<_> = diags.iter().map(|d| real_diag(d)).collect();
        let d = dissimilarity_from_covariances(&covs, 1e-10).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = (0..3).map(|k| (diags[i][k].ln() - diags[j][k].ln()).powi(2)).sum::<f64>().sqrt();
                assert!((d.get(i, j) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn triangle_inequality_on_random_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let covs: Vec<_> = (0..50).map(|k| random_psd(&mut rng, 4, 1 + k % 4)).collect();
        let d = dissimilarity_from_covariances(&covs, 1e-10).unwrap();
        for i in 0..50 {
            for j in 0..50 {
                assert_eq!(d.get(i, j), d.get(j, i));
                for k in 0..50 {
                    assert!(d.get(i, k) <= d.get(i, j) + d.get(j, k) + 1e-9);
                }
            }
        }
    }

    #[test]
    fn binary_round_trip() {
        let d = DissimilarityMatrix::from_fn(5, |i, j| (i * 10 + j) as f64 * 0.1);
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 10 * 8);
        assert_eq!(DissimilarityMatrix::read_from(&buf[..]).unwrap(), d);
        assert!(DissimilarityMatrix::read_from(&buf[..20]).is_err());
    }
}
