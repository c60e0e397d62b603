//! Eigen-spectrum of a correlation matrix and the spectral-gap detection test.
//!
//! With eigenvalues sorted descending, `λ₁ ≥ … ≥ λ_N`, and spacings
//! `Δᵢ = λᵢ − λᵢ₊₁`, the noise scale is the RMS of the interior spacings
//!
//! ```text
//! δ = sqrt( Σ_{1<i<N} Δᵢ² / (N − 2) )
//! ```
//!
//! and the leading eigenvalue counts as separated when `Δ₁ > Δ₂ + δ`.
//! Ties are not a detection.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};

const MAX_SWEEPS_PER_ROW: usize = 1000;

/// Eigenvalues in descending algebraic order with matching eigenvectors.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub eigenvalues: Vec<f64>,
    /// Column `i` is the unit eigenvector of `eigenvalues[i]`.
    pub eigenvectors: DMatrix<f64>,
}

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidParameter(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Err(Error::InsufficientData("empty matrix".into()));
    }
    Ok(())
}

fn diagnostics(m: &DMatrix<f64>) -> String {
    let non_finite = m.iter().filter(|v| !v.is_finite()).count();
    let max_abs = m
        .iter()
        .filter(|v| v.is_finite())
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    let asym = (0..m.nrows())
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .fold(0.0f64, |acc, (i, j)| acc.max((m[(i, j)] - m[(j, i)]).abs()));
    format!(
        "{}x{} matrix, {non_finite} non-finite entries, max |entry| {max_abs:e}, \
         max asymmetry {asym:e}, frobenius norm {:e}",
        m.nrows(),
        m.ncols(),
        m.norm()
    )
}

/// Full symmetric eigendecomposition, sorted by descending eigenvalue.
pub fn decompose(m: &DMatrix<f64>) -> Result<Decomposition> {
    check_square(m)?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite input to eigensolver: {}",
            diagnostics(m)
        )));
    }
    let n = m.nrows();
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, MAX_SWEEPS_PER_ROW * n).ok_or_else(
        || Error::Numerical(format!("eigensolver did not converge: {}", diagnostics(m))),
    )?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let eigenvectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(Decomposition {
        eigenvalues,
        eigenvectors,
    })
}

impl Decomposition {
    pub fn eigenvector(&self, i: usize) -> DVector<f64> {
        self.eigenvectors.column(i).into_owned()
    }
}

/// Real spectrum of a symmetric matrix in descending order.
pub fn eigen_spectrum(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    decompose(m).map(|d| d.eigenvalues)
}

/// `Δᵢ = λᵢ − λᵢ₊₁` for a descending spectrum; length `N − 1`.
pub fn spacings(eigenvalues: &[f64]) -> Vec<f64> {
    eigenvalues.windows(2).map(|w| w[0] - w[1]).collect()
}

/// RMS of the interior spacings `Δ₂ … Δ_{N−1}`.
///
/// Takes all `N − 1` spacings, so `spacings[0]` (the signal gap) is skipped.
pub fn noise_scale(spacings: &[f64]) -> Result<f64> {
    if spacings.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "noise scale needs N >= 4 eigenvalues, got {}",
            spacings.len() + 1
        )));
    }
    let interior = &spacings[1..];
    let ss: f64 = interior.iter().map(|d| d * d).sum();
    Ok((ss / interior.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumReport {
    pub eigenvalues: Vec<f64>,
    #[serde(skip)]
    pub spacings: Vec<f64>,
    pub delta1: f64,
    pub delta2: f64,
    pub noise_scale: f64,
    pub detected: bool,
    /// `Δ₁ − Δ₂ − δ`; detection iff strictly positive.
    pub margin: f64,
}

impl SpectrumReport {
    pub fn from_eigenvalues(eigenvalues: Vec<f64>) -> Result<Self> {
        let spacings = spacings(&eigenvalues);
        let noise_scale = noise_scale(&spacings)?;
        let delta1 = spacings[0];
        let delta2 = spacings[1];
        let margin = delta1 - delta2 - noise_scale;
        Ok(Self {
            eigenvalues,
            spacings,
            delta1,
            delta2,
            noise_scale,
            detected: delta1 > delta2 + noise_scale,
            margin,
        })
    }
}

/// Run the spectral-gap test on a symmetric matrix.
pub fn detect(m: &DMatrix<f64>) -> Result<SpectrumReport> {
    if m.nrows() < 4 {
        return Err(Error::InsufficientData(format!(
            "detection needs N >= 4, got {}",
            m.nrows()
        )));
    }
    SpectrumReport::from_eigenvalues(eigen_spectrum(m)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn planted_block() -> DMatrix<f64> {
        DMatrix::from_fn(
            6,
            6,
            |i, j| if i != j && i < 3 && j < 3 { 1.0 } else { 0.0 },
        )
    }

    fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..i {
                let v: f64 = rng.sample(StandardNormal);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    /// Characteristic polynomial coefficients by Faddeev-LeVerrier; roots by
    /// bisection on the sign changes of det(λI − M). Independent of nalgebra's
    /// eigensolver, only usable on small matrices.
    fn largest_root_by_bisection(m: &DMatrix<f64>) -> f64 {
        let n = m.nrows();
        let mut coeffs = vec![1.0];
        let mut mk = DMatrix::<f64>::zeros(n, n);
        let id = DMatrix::<f64>::identity(n, n);
        let mut c = 1.0;
        for k in 1..=n {
            mk = m * (&mk + &id * c);
            c = -mk.trace() / k as f64;
            coeffs.push(c);
        }
        let poly = |x: f64| coeffs.iter().fold(0.0, |acc, &a| acc * x + a);
        let bound = 1.0 + m.iter().map(|v| v.abs()).sum::<f64>();
        let (mut lo, mut hi) = (-bound, bound);
        // scan for the last sign change
        let steps = 20000;
        let mut last = None;
        let mut prev = poly(lo);
        for s in 1..=steps {
            let x = -bound + 2.0 * bound * s as f64 / steps as f64;
            let v = poly(x);
            if prev == 0.0 || prev.signum() != v.signum() {
                last = Some((x - 2.0 * bound / steps as f64, x));
            }
            prev = v;
        }
        if let Some((a, b)) = last {
            lo = a;
            hi = b;
        }
        let sign_lo = poly(lo).signum();
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if poly(mid).signum() == sign_lo {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn zero_matrix_spectrum() {
        let eigs = eigen_spectrum(&DMatrix::zeros(4, 4)).unwrap();
        assert_eq!(eigs, vec![0.0; 4]);
    }

    #[test]
    fn planted_block_spectrum() {
        let eigs = eigen_spectrum(&planted_block()).unwrap();
        let expected = [2.0, 0.0, 0.0, 0.0, -1.0, -1.0];
        for (got, want) in eigs.iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{eigs:?}");
        }
    }

    #[test]
    fn rank_one_largest_eigenvalue_matches_characteristic_polynomial() {
        for n in 2..=5 {
            let mut u = DVector::zeros(n);
            u[0] = 1.0 / 2f64.sqrt();
            u[1] = 1.0 / 2f64.sqrt();
            let mut m = &u * u.transpose();
            m.fill_diagonal(0.0);
            let top = eigen_spectrum(&m).unwrap()[0];
            assert!((top - largest_root_by_bisection(&m)).abs() < 1e-9);
            assert!((top - 0.5).abs() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 2..=5 {
            let m = random_symmetric(n, &mut rng);
            let top = eigen_spectrum(&m).unwrap()[0];
            assert!((top - largest_root_by_bisection(&m)).abs() < 1e-8);
        }
    }

    #[test]
    fn noise_scale_examples() {
        assert_eq!(noise_scale(&[3.0, 0.0, 0.0, 0.0]).unwrap(), 0.0);
        let eigs = [2.0, 0.0, 0.0, 0.0, -1.0, -1.0];
        assert_eq!(noise_scale(&spacings(&eigs)).unwrap(), 0.5);
        assert!((noise_scale(&[0.3; 7]).unwrap() - 0.3).abs() < 1e-15);
        assert!(matches!(
            noise_scale(&[1.0, 1.0]),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn detect_examples() {
        let zero = detect(&DMatrix::zeros(5, 5)).unwrap();
        assert_eq!(
            (zero.delta1, zero.delta2, zero.noise_scale),
            (0.0, 0.0, 0.0)
        );
        assert!(!zero.detected);

        let block = detect(&planted_block()).unwrap();
        assert!((block.delta1 - 2.0).abs() < 1e-12);
        assert!(block.delta2.abs() < 1e-12);
        assert!((block.noise_scale - 0.5).abs() < 1e-12);
        assert!(block.detected);
        assert!((block.margin - 1.5).abs() < 1e-12);

        assert!(matches!(
            detect(&DMatrix::zeros(3, 3)),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn ties_are_not_detections() {
        // Equally spaced spectrum: Δ₁ = Δ₂ = δ, margin = -δ.
        let r = SpectrumReport::from_eigenvalues(vec![3.0, 2.0, 1.0, 0.0]).unwrap();
        assert!(!r.detected);
        // Δ = [2, 1, 1, 1]: δ = 1, so Δ₁ = Δ₂ + δ exactly.
        let r = SpectrumReport::from_eigenvalues(vec![5.0, 3.0, 2.0, 1.0, 0.0]).unwrap();
        assert_eq!(r.noise_scale, 1.0);
        assert_eq!(r.margin, 0.0);
        assert!(!r.detected);
    }

    #[test]
    fn non_finite_input_is_numerical_error() {
        let mut m = DMatrix::zeros(4, 4);
        m[(0, 1)] = f64::NAN;
        m[(1, 0)] = f64::NAN;
        let err = eigen_spectrum(&m).unwrap_err();
        assert!(err.is_numerical());
        assert!(err.to_string().contains("non-finite"));
    }

    #[test]
    fn trace_and_ordering_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for n in [4usize, 9, 30] {
            let m = random_symmetric(n, &mut rng);
            let d = decompose(&m).unwrap();
            assert!(d.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
            assert!(d.eigenvalues.iter().sum::<f64>().abs() < 1e-8 * n as f64);
            for i in 0..n {
                let v = d.eigenvector(i);
                let residual = &m * &v - &v * d.eigenvalues[i];
                assert!(residual.norm() < 1e-9 * (1.0 + d.eigenvalues[i].abs()));
            }
        }
    }

    #[test]
    fn permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let m = random_symmetric(12, &mut rng);
        let perm = [5usize, 2, 11, 0, 7, 1, 9, 3, 10, 4, 8, 6];
        let p = DMatrix::from_fn(12, 12, |i, j| m[(perm[i], perm[j])]);
        let a = detect(&m).unwrap();
        let b = detect(&p).unwrap();
        for (x, y) in a.eigenvalues.iter().zip(&b.eigenvalues) {
            assert!((x - y).abs() < 1e-10);
        }
        assert_eq!(a.detected, b.detected);
    }

    #[test]
    fn margin_grows_with_signal_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let n = 40;
        let block = DMatrix::from_fn(
            n,
            n,
            |i, j| {
                if i != j && i < 8 && j < 8 {
                    0.8
                } else {
                    0.0
                }
            },
        );
        let noise = random_symmetric(n, &mut rng) * 0.05;
        let margins: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|&a| detect(&(&block * a + &noise * (1.0 - a))).unwrap().margin)
            .collect();
        assert!(margins.windows(2).all(|w| w[1] >= w[0]), "{margins:?}");
    }

    #[test]
    fn report_serializes_expected_fields() {
        let r = detect(&planted_block()).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            [
                "delta1",
                "delta2",
                "detected",
                "eigenvalues",
                "margin",
                "noise_scale"
            ]
        );
    }
}
