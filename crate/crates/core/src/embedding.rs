//! L2 normalization and cosine-similarity matrices with their exact backward pass.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Rows with a Euclidean norm at or below this are rejected as degenerate.
pub const NORM_FLOOR: f64 = 1e-12;

/// Dense `n × n` matrix of cosine similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix<T>(Array2<T>);

impl<T: Scalar> SimilarityMatrix<T> {
    /// Symmetry and unit-diagonal tolerance: `1e-6`, widened to `64 ε` for `f32`.
    pub fn tolerance() -> T {
        T::of(1e-6).max(T::epsilon() * T::of(64.0))
    }

    /// Wraps a square matrix after checking symmetry, unit diagonal and finiteness.
    pub fn from_array(sim: Array2<T>) -> Result<Self> {
        let (r, c) = sim.dim();
        if r != c {
            return Err(Error::ShapeMismatch(format!("similarity matrix is {r}x{c}")));
        }
        if sim.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("similarity matrix"));
        }
        let tol = Self::tolerance();
        for u in 0..r {
            if (sim[[u, u]] - T::one()).abs() > tol {
                return Err(Error::ShapeMismatch(format!(
                    "diagonal entry {u} is {}, expected 1",
                    sim[[u, u]]
                )));
            }
            for v in 0..u {
                if (sim[[u, v]] - sim[[v, u]]).abs() > tol {
                    return Err(Error::ShapeMismatch(format!("not symmetric at ({u}, {v})")));
                }
            }
        }
        Ok(Self(sim))
    }

    /// Wraps a square matrix without the symmetry/diagonal checks. Used to evaluate
    /// losses at entry-wise perturbations.
    pub fn from_array_unchecked(sim: Array2<T>) -> Self {
        assert_eq!(sim.nrows(), sim.ncols(), "similarity matrix must be square");
        Self(sim)
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn as_array(&self) -> &Array2<T> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<T> {
        self.0
    }
}

fn row_norms<T: Scalar>(vectors: ArrayView2<'_, T>) -> Result<Vec<T>> {
    if vectors.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("representations"));
    }
    let floor = T::of(NORM_FLOOR);
    vectors
        .axis_iter(Axis(0))
        .enumerate()
        .map(|(row, r)| {
            let norm = r.dot(&r).sqrt();
            if norm > floor {
                Ok(norm)
            } else {
                Err(Error::DegenerateRow { row, norm: norm.as_f64() })
            }
        })
        .collect()
}

/// Scales every row to unit Euclidean norm.
pub fn normalize<T: Scalar>(vectors: ArrayView2<'_, T>) -> Result<Array2<T>> {
    let norms = row_norms(vectors)?;
    let mut out = vectors.to_owned();
    for (mut row, n) in out.axis_iter_mut(Axis(0)).zip(norms) {
        row.mapv_inplace(|v| v / n);
    }
    Ok(out)
}

/// `sim[u][v] = ⟨r_u / ‖r_u‖, r_v / ‖r_v‖⟩`.
pub fn cosine_similarity_matrix<T: Scalar>(vectors: ArrayView2<'_, T>) -> Result<SimilarityMatrix<T>> {
    let unit = normalize(vectors)?;
    let mut sim = unit.dot(&unit.t());
    // Force exact symmetry and unit diagonal; matmul rounding differs per triangle.
    let n = sim.nrows();
    for u in 0..n {
        sim[[u, u]] = T::one();
        for v in 0..u {
            let avg = (sim[[u, v]] + sim[[v, u]]) / T::of(2.0);
            sim[[u, v]] = avg;
            sim[[v, u]] = avg;
        }
    }
    Ok(SimilarityMatrix(sim))
}

/// Gradient of `Σ_{u,v} grad_sim[u][v] · sim[u][v]` with respect to the raw rows.
///
/// With `G = (grad_sim + grad_simᵀ) r̂`, row `u` of the result is
/// `(G_u - ⟨G_u, r̂_u⟩ r̂_u) / ‖r_u‖`.
pub fn backprop_similarity<T: Scalar>(
    vectors: ArrayView2<'_, T>,
    grad_sim: ArrayView2<'_, T>,
) -> Result<Array2<T>> {
    let n = vectors.nrows();
    if grad_sim.dim() != (n, n) {
        return Err(Error::ShapeMismatch(format!(
            "grad_sim is {:?}, expected ({n}, {n})",
            grad_sim.dim()
        )));
    }
    let norms = row_norms(vectors)?;
    let mut unit = vectors.to_owned();
    for (mut row, &nrm) in unit.axis_iter_mut(Axis(0)).zip(&norms) {
        row.mapv_inplace(|v| v / nrm);
    }
    let sym = &grad_sim + &grad_sim.t();
    let mut g = sym.dot(&unit);
    for ((mut gu, ru), &nrm) in g.axis_iter_mut(Axis(0)).zip(unit.axis_iter(Axis(0))).zip(&norms) {
        let radial = gu.dot(&ru);
        gu.zip_mut_with(&ru, |a, &b| *a = (*a - radial * b) / nrm);
    }
    Ok(g)
}
