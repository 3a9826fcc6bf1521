use nalgebra::{DMatrix, DVector};

use crate::error::{Result, ShapeError};
use crate::geometry::{helmert_submatrix, sphere_log, PreShape, TangentVector};
use crate::shape_spaces::{optimal_lift, ShapeSpaceKind};

/// Candidates whose residual after orthogonalization falls below this are
/// treated as dependent.
const DEPENDENCE_TOL: f64 = 1e-6;

/// Orthonormal basis of the horizontal space at `p`, stored as the rows of
/// a `d x (m k)` matrix acting on column-major flattened tangent vectors.
#[derive(Clone, Debug)]
pub struct HorizontalBasis {
    base: PreShape,
    rows: DMatrix<f64>,
}

impl HorizontalBasis {
    /// Gram–Schmidt (two passes) of the centered coordinate directions
    /// against `p` and the vertical directions `E p`, with `E` running over
    /// the elementary skew-symmetric matrices. Finite group factors add no
    /// vertical directions, so the basis is the same for every kind.
    pub fn new(p: &PreShape, kind: ShapeSpaceKind) -> Result<Self> {
        let (m, k) = p.matrix().shape();
        let expected = kind.manifold_dim(m, k);
        let mut frame: Vec<DVector<f64>> = Vec::new();
        let push = |v: DVector<f64>, frame: &mut Vec<DVector<f64>>| -> bool {
            let mut r = v.clone();
            for _ in 0..2 {
                for f in frame.iter() {
                    let c = f.dot(&r);
                    r.axpy(-c, f, 1.0);
                }
            }
            let n = r.norm();
            if n > DEPENDENCE_TOL * v.norm().max(1.0) {
                frame.push(r / n);
                true
            } else {
                false
            }
        };
        let flat = |x: DMatrix<f64>| DVector::from_vec(x.as_slice().to_vec());
        push(flat(p.matrix().clone()), &mut frame);
        let mut vertical = 0;
        for i in 0..m {
            for j in i + 1..m {
                let mut e = DMatrix::zeros(m, m);
                e[(i, j)] = -1.0;
                e[(j, i)] = 1.0;
                if push(flat(e * p.matrix()), &mut frame) {
                    vertical += 1;
                }
            }
        }
        let fixed = frame.len();
        let h = helmert_submatrix(k)?;
        for c in 0..k - 1 {
            for r in 0..m {
                let mut x = DMatrix::zeros(m, k);
                for j in 0..k {
                    x[(r, j)] = h[(j, c)];
                }
                push(flat(x), &mut frame);
            }
        }
        let d = frame.len() - fixed;
        if d != expected || vertical != m * (m - 1) / 2 {
            return Err(ShapeError::DimensionMismatch { expected, found: d });
        }
        let rows = DMatrix::from_fn(d, m * k, |i, j| frame[fixed + i][j]);
        Ok(Self {
            base: p.clone(),
            rows,
        })
    }

    pub fn base(&self) -> &PreShape {
        &self.base
    }

    pub fn dim(&self) -> usize {
        self.rows.nrows()
    }

    /// `d x (m k)` matrix whose rows are the basis vectors.
    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn vectors(&self) -> Vec<TangentVector> {
        let (m, k) = self.base.matrix().shape();
        self.rows
            .row_iter()
            .map(|r| {
                TangentVector::from_raw(
                    self.base.clone(),
                    DMatrix::from_iterator(m, k, r.iter().copied()),
                )
            })
            .collect()
    }

    /// Coordinates of a tangent vector given as a raw `m x k` slice.
    pub fn coords_of(&self, v: &[f64]) -> DVector<f64> {
        &self.rows * DVector::from_column_slice(v)
    }
}

/// Orthonormal horizontal basis at `p`; `d = m(k-1) - 1 - m(m-1)/2`.
pub fn horizontal_basis(p: &PreShape, kind: ShapeSpaceKind) -> Result<Vec<TangentVector>> {
    Ok(HorizontalBasis::new(p, kind)?.vectors())
}

/// Samples lifted to a base point and expressed in its horizontal basis.
#[derive(Clone, Debug)]
pub struct TangentCoordinates {
    pub basis: HorizontalBasis,
    /// Row `j` holds the coordinates of sample `j`.
    pub coords: DMatrix<f64>,
    /// Number of samples whose optimal lift was not unique.
    pub non_unique: usize,
}

impl TangentCoordinates {
    pub fn base(&self) -> &PreShape {
        self.basis.base()
    }
}

/// Lifts every sample into optimal position to `base`, takes the sphere
/// logarithm and expands it in the horizontal basis.
pub fn lift_to_coords(
    base: &PreShape,
    samples: &[PreShape],
    kind: ShapeSpaceKind,
) -> Result<TangentCoordinates> {
    let basis = HorizontalBasis::new(base, kind)?;
    let mut coords = DMatrix::zeros(samples.len(), basis.dim());
    let mut non_unique = 0;
    for (j, s) in samples.iter().enumerate() {
        if s.matrix().shape() != base.matrix().shape() {
            return Err(ShapeError::DimensionMismatch {
                expected: base.matrix().len(),
                found: s.matrix().len(),
            });
        }
        let lift = optimal_lift(base, s, kind);
        if !lift.unique {
            non_unique += 1;
        }
        let log = sphere_log(base, &lift.aligned)?;
        coords
            .row_mut(j)
            .copy_from(&basis.coords_of(log.matrix().as_slice()).transpose());
    }
    Ok(TangentCoordinates {
        basis,
        coords,
        non_unique,
    })
}
