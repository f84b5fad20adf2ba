//! Kernel functions and Gram matrices.
//!
//! Two kernels cover every learner in this crate: the Gaussian RBF for raw
//! feature vectors and the linear kernel for score-space features (source
//! predictions, confidence vectors).

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which kernel to apply, with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `k(x, x') = exp(−γ‖x − x'‖²)`, `γ > 0`.
    Rbf { gamma: f64 },
    /// `k(x, x') = ⟨x, x'⟩`.
    Linear,
}

impl KernelSpec {
    /// RBF kernel with validated bandwidth.
    pub fn rbf(gamma: f64) -> Result<Self> {
        let spec = KernelSpec::Rbf { gamma };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks parameter ranges (`γ > 0` and finite).
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Rbf { gamma } if !(gamma > 0.0 && gamma.is_finite()) => Err(Error::Config(
                format!("RBF bandwidth gamma must be positive and finite, got {gamma}"),
            )),
            _ => Ok(()),
        }
    }
}

/// Evaluates the kernel on two vectors of equal dimension.
pub fn kernel_eval(spec: &KernelSpec, x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Domain(format!(
            "kernel arguments have mismatched dimensions {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(eval_unchecked(spec, x, y))
}

#[inline]
fn eval_unchecked(spec: &KernelSpec, x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    match *spec {
        KernelSpec::Rbf { gamma } => {
            let mut d2 = 0.0;
            for (a, b) in x.iter().zip(y.iter()) {
                let d = a - b;
                d2 += d * d;
            }
            (-gamma * d2).exp()
        }
        KernelSpec::Linear => {
            let mut dot = 0.0;
            for (a, b) in x.iter().zip(y.iter()) {
                dot += a * b;
            }
            dot
        }
    }
}

/// Gram matrix between the rows of `a` (n rows) and the rows of `b` (m rows):
/// result is `n × m` with entry `(i, j) = k(a_i, b_j)`.
pub fn gram_matrix(spec: &KernelSpec, a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    spec.validate()?;
    if a.ncols() != b.ncols() {
        return Err(Error::Domain(format!(
            "Gram matrix inputs have mismatched dimensions {} and {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let mut gram = Array2::zeros((a.nrows(), b.nrows()));
    for i in 0..a.nrows() {
        let ai = a.row(i);
        for j in 0..b.nrows() {
            gram[[i, j]] = eval_unchecked(spec, ai, b.row(j));
        }
    }
    Ok(gram)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    #[test]
    fn rbf_at_unit_squared_distance_is_inverse_e() {
        let k = kernel_eval(&KernelSpec::Rbf { gamma: 1.0 }, array![0.0].view(), array![1.0].view()).unwrap();
        assert_abs_diff_eq!(k, (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(k, 0.36787944117144233, epsilon = 1e-15);
    }

    #[test]
    fn linear_kernel_is_the_dot_product() {
        let k = kernel_eval(&KernelSpec::Linear, array![1.0, 2.0].view(), array![3.0, 4.0].view()).unwrap();
        assert_eq!(k, 11.0);
    }

    #[test]
    fn dimension_mismatch_is_a_domain_error() {
        let r = kernel_eval(&KernelSpec::Linear, array![1.0].view(), array![1.0, 2.0].view());
        assert!(matches!(r, Err(crate::Error::Domain(_))));
    }

    #[test]
    fn rbf_rejects_nonpositive_gamma() {
        assert!(KernelSpec::rbf(0.0).is_err());
        assert!(KernelSpec::rbf(-1.5).is_err());
        assert!(KernelSpec::rbf(f64::NAN).is_err());
        assert!(KernelSpec::rbf(0.5).is_ok());
    }

    #[test]
    fn rbf_gram_diagonal_is_exactly_one() {
        let x = array![[0.3, -1.2], [5.0, 2.0], [0.0, 0.0]];
        let g = gram_matrix(&KernelSpec::Rbf { gamma: 0.7 }, x.view(), x.view()).unwrap();
        for i in 0..3 {
            assert_eq!(g[[i, i]], 1.0);
        }
    }

    #[test]
    fn kernel_spec_serializes_round_trip() {
        for spec in [KernelSpec::Rbf { gamma: 2.5 }, KernelSpec::Linear] {
            let json = serde_json::to_string(&spec).unwrap();
            let back: KernelSpec = serde_json::from_str(&json).unwrap();
            assert_eq!(spec, back);
        }
    }

    /// Smallest eigenvalue via an independent symmetric eigensolver.
    fn min_eigenvalue(g: &Array2<f64>) -> f64 {
        let n = g.nrows();
        let m = nalgebra::DMatrix::from_fn(n, n, |i, j| g[[i, j]]);
        let eig = nalgebra::SymmetricEigen::new(m);
        eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        /// Both kernels are positive semidefinite: the Gram matrix of any
        /// point set has no eigenvalue meaningfully below zero.
        #[test]
        fn gram_matrices_are_positive_semidefinite(
            raw in proptest::collection::vec(-3.0f64..3.0, 3 * 20),
            gamma in 0.05f64..5.0,
            linear in proptest::bool::ANY,
        ) {
            let x = Array2::from_shape_vec((20, 3), raw).unwrap();
            let spec = if linear { KernelSpec::Linear } else { KernelSpec::Rbf { gamma } };
            let g = gram_matrix(&spec, x.view(), x.view()).unwrap();
            // Exact symmetry: both orders evaluate the same float expression.
            for i in 0..20 {
                for j in 0..20 {
                    prop_assert_eq!(g[[i, j]], g[[j, i]]);
                }
            }
            prop_assert!(min_eigenvalue(&g) >= -1e-8, "smallest eigenvalue {}", min_eigenvalue(&g));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// RBF values live in [0, 1] (exp(-gamma * d^2) is positive in exact
        /// arithmetic but underflows to +0.0 in f64 once the exponent passes
        /// ~745) and equal 1 exactly when the points coincide.
        #[test]
        fn rbf_range_is_unit_interval(
            a in proptest::collection::vec(-10.0f64..10.0, 4),
            b in proptest::collection::vec(-10.0f64..10.0, 4),
            gamma in 0.01f64..10.0,
        ) {
            let x = Array1::from_vec(a);
            let y = Array1::from_vec(b);
            let k = kernel_eval(&KernelSpec::Rbf { gamma }, x.view(), y.view()).unwrap();
            prop_assert!(k >= 0.0 && k <= 1.0);
            let exponent = gamma
                * x.iter()
                    .zip(y.iter())
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum::<f64>();
            if exponent < 700.0 {
                prop_assert!(k > 0.0);
            }
            if x == y {
                prop_assert_eq!(k, 1.0);
            }
        }
    }

    use ndarray::Array1;
}
