//! Quotients of the pre-shape sphere by rotations, by the full orthogonal
//! group, and by the orthogonal group together with reverse labeling.
//!
//! Every quotient distance is computed by optimal positioning: the group
//! element that brings one representative closest to the other is found by
//! an SVD, and the quotient distance is the sphere distance of the aligned
//! pair.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ShapeError};
use crate::geometry::{helmert_submatrix, Configuration, PreShape};

pub mod planar;
pub(crate) mod procrustes;

pub use planar::{hopf, hopf_fold, hopf_of_preshape, planar_distance};

/// Which group is quotiented out of the pre-shape sphere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeSpaceKind {
    /// `SO(m)`: Kendall's shape space.
    Rotation,
    /// `O(m)`: reflection shape space.
    Reflection,
    /// `O(m) x {I, L_k}`: reflection shape space modulo reversed labeling.
    #[serde(alias = "rr")]
    ReverseLabelingReflection,
}

impl ShapeSpaceKind {
    pub const ALL: [ShapeSpaceKind; 3] = [
        ShapeSpaceKind::Rotation,
        ShapeSpaceKind::Reflection,
        ShapeSpaceKind::ReverseLabelingReflection,
    ];

    pub fn allows_reflection(self) -> bool {
        self != ShapeSpaceKind::Rotation
    }

    pub fn allows_relabel(self) -> bool {
        self == ShapeSpaceKind::ReverseLabelingReflection
    }

    /// Dimension of the manifold part of the quotient for `m x k` data.
    pub fn manifold_dim(self, m: usize, k: usize) -> usize {
        m * (k - 1) - 1 - m * (m - 1) / 2
    }
}

impl fmt::Display for ShapeSpaceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShapeSpaceKind::Rotation => "rotation",
            ShapeSpaceKind::Reflection => "reflection",
            ShapeSpaceKind::ReverseLabelingReflection => "reverse_labeling_reflection",
        })
    }
}

impl FromStr for ShapeSpaceKind {
    type Err = ShapeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "rotation" | "shape" | "sigma" => Ok(ShapeSpaceKind::Rotation),
            "reflection" | "r" | "rsigma" => Ok(ShapeSpaceKind::Reflection),
            "reverse_labeling_reflection" | "rr" | "rrsigma" => {
                Ok(ShapeSpaceKind::ReverseLabelingReflection)
            }
            other => Err(ShapeError::InvalidArgument(format!(
                "unknown shape space kind '{other}' (expected rotation, reflection or rr)"
            ))),
        }
    }
}

/// Reversal of landmark order, `A -> A L_k`.
pub trait ReverseLabel {
    fn reverse_label(&self) -> Self;
}

fn reversed_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let k = m.ncols();
    DMatrix::from_fn(m.nrows(), k, |r, c| m[(r, k - 1 - c)])
}

impl ReverseLabel for PreShape {
    fn reverse_label(&self) -> Self {
        PreShape::from_raw(reversed_columns(self.matrix()))
    }
}

impl ReverseLabel for Configuration {
    fn reverse_label(&self) -> Self {
        Configuration::new(reversed_columns(self.matrix())).expect("same shape as input")
    }
}

pub fn reverse_label<T: ReverseLabel>(x: &T) -> T {
    x.reverse_label()
}

/// `H_k^T L_k H_k`, the action of reverse labeling on Helmertized
/// coordinates.
pub fn helmert_relabel_conjugate(k: usize) -> Result<DMatrix<f64>> {
    let h = helmert_submatrix(k)?;
    let lh = DMatrix::from_fn(k, k - 1, |r, c| h[(k - 1 - r, c)]);
    Ok(h.transpose() * lh)
}

/// An element of the acting group: an orthogonal matrix applied from the
/// left and an optional reversal of labels applied from the right.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupElement {
    rotation: DMatrix<f64>,
    relabel: bool,
}

impl GroupElement {
    pub fn identity(m: usize) -> Self {
        Self {
            rotation: DMatrix::identity(m, m),
            relabel: false,
        }
    }

    /// Checks orthogonality and that the element belongs to the group of
    /// `kind`.
    pub fn new(rotation: DMatrix<f64>, relabel: bool, kind: ShapeSpaceKind) -> Result<Self> {
        let m = rotation.nrows();
        if rotation.ncols() != m {
            return Err(ShapeError::DimensionMismatch {
                expected: m,
                found: rotation.ncols(),
            });
        }
        let gram = rotation.transpose() * &rotation;
        if (gram - DMatrix::identity(m, m)).amax() > 1e-10 {
            return Err(ShapeError::InvalidArgument("matrix is not orthogonal".into()));
        }
        if !kind.allows_reflection() && rotation.determinant() < 0.0 {
            return Err(ShapeError::InvalidArgument(
                "reflections are not in the rotation group".into(),
            ));
        }
        if relabel && !kind.allows_relabel() {
            return Err(ShapeError::InvalidArgument(
                "relabeling is only part of the reverse-labeling group".into(),
            ));
        }
        Ok(Self { rotation, relabel })
    }

    /// Haar-distributed element of the group of `kind`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, m: usize, kind: ShapeSpaceKind) -> Self {
        let gauss = DMatrix::from_fn(m, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let qr = gauss.qr();
        let mut q = qr.q();
        let r = qr.r();
        for j in 0..m {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        if !kind.allows_reflection() && q.determinant() < 0.0 {
            q.column_mut(0).neg_mut();
        }
        let relabel = kind.allows_relabel() && rng.random_bool(0.5);
        Self {
            rotation: q,
            relabel,
        }
    }

    pub fn rotation(&self) -> &DMatrix<f64> {
        &self.rotation
    }

    pub fn relabel(&self) -> bool {
        self.relabel
    }

    fn apply_matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let rotated = &self.rotation * x;
        if self.relabel {
            reversed_columns(&rotated)
        } else {
            rotated
        }
    }

    pub fn apply(&self, p: &PreShape) -> PreShape {
        PreShape::from_raw(self.apply_matrix(p.matrix()))
    }

    pub fn apply_configuration(&self, c: &Configuration) -> Configuration {
        Configuration::new(self.apply_matrix(c.matrix())).expect("same shape as input")
    }
}

/// Outcome of optimally positioning one pre-shape against another.
#[derive(Clone, Debug)]
pub struct AlignmentResult {
    pub element: GroupElement,
    /// `element` applied to the moving pre-shape.
    pub aligned: PreShape,
    /// Quotient distance in radians.
    pub distance: f64,
    /// False when the optimal element is not unique (rank deficiency, a
    /// determinant tie, or a tie between the relabeled and plain branches).
    pub unique: bool,
}

fn check_compatible(a: &PreShape, b: &PreShape) {
    assert_eq!(
        a.matrix().shape(),
        b.matrix().shape(),
        "pre-shapes must have equal dimensions"
    );
}

/// Positions `b` optimally with respect to `a`.
///
/// Let `B A^T = U S V^T`. Over `O(m)` the optimum is `V U^T`; over `SO(m)`
/// the last column of `V` is flipped when that product is a reflection. For
/// the reverse-labeling quotient both `B` and `B L_k` are fitted and the
/// closer one is kept.
pub fn optimal_align(a: &PreShape, b: &PreShape, kind: ShapeSpaceKind) -> AlignmentResult {
    check_compatible(a, b);
    let (m, k) = a.matrix().shape();
    let fit = procrustes::fit(a.matrix().as_slice(), b.matrix().as_slice(), m, k, kind);
    let mut aligned = DMatrix::zeros(m, k);
    procrustes::apply_into(
        &fit.rotation,
        fit.relabel,
        b.matrix().as_slice(),
        m,
        k,
        aligned.as_mut_slice(),
    );
    let rotation = DMatrix::from_row_slice(m, m, &fit.rotation);
    AlignmentResult {
        element: GroupElement {
            rotation,
            relabel: fit.relabel,
        },
        distance: procrustes::arc_from_chord(a.matrix().as_slice(), aligned.as_slice()),
        aligned: PreShape::from_raw(aligned),
        unique: fit.unique,
    }
}

/// Quotient distance between the orbits of `a` and `b`.
///
/// The arguments are put in a canonical order first so the result is
/// exactly symmetric.
pub fn shape_distance(a: &PreShape, b: &PreShape, kind: ShapeSpaceKind) -> f64 {
    check_compatible(a, b);
    let (m, k) = a.matrix().shape();
    let (x, y) = if canonical_le(a, b) { (a, b) } else { (b, a) };
    let fit = procrustes::fit(x.matrix().as_slice(), y.matrix().as_slice(), m, k, kind);
    let mut aligned = vec![0.0; m * k];
    procrustes::apply_into(&fit.rotation, fit.relabel, y.matrix().as_slice(), m, k, &mut aligned);
    procrustes::arc_from_chord(x.matrix().as_slice(), &aligned)
}

fn canonical_le(a: &PreShape, b: &PreShape) -> bool {
    for (x, y) in a.matrix().iter().zip(b.matrix().iter()) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    true
}

/// Representative of the orbit of `b` in optimal position to the reference
/// `p`. When the optimum is not unique the deterministic SVD branch is
/// returned and `unique` is false.
pub fn optimal_lift(p: &PreShape, b: &PreShape, kind: ShapeSpaceKind) -> AlignmentResult {
    optimal_align(p, b, kind)
}

/// Numerical rank of a pre-shape (number of singular values above `1e-9`).
pub fn preshape_rank(p: &PreShape) -> usize {
    let m = p.dim();
    let gram = p.matrix() * p.matrix().transpose();
    let svd = procrustes::svd_small(gram.transpose().as_slice(), m);
    svd.s.iter().filter(|s| s.sqrt() > procrustes::RANK_TOL).count()
}

/// True when no group element other than the identity fixes `p`, i.e. the
/// orbit lies in the manifold part of the quotient.
///
/// Rotations fix a configuration only if its rank is below `m - 1`;
/// reflections already fix rank `m - 1` configurations. For the
/// reverse-labeling quotient the configuration must additionally not be
/// mapped to itself by `R p L_k = p` for any orthogonal `R`.
pub fn isotropy_check(p: &PreShape, kind: ShapeSpaceKind) -> bool {
    let m = p.dim();
    let rank = preshape_rank(p);
    let full = match kind {
        ShapeSpaceKind::Rotation => rank + 1 >= m,
        _ => rank == m,
    };
    if !full {
        return false;
    }
    if kind.allows_relabel() {
        let k = p.landmarks();
        let reversed = p.reverse_label();
        let fit = procrustes::fit(
            p.matrix().as_slice(),
            reversed.matrix().as_slice(),
            m,
            k,
            ShapeSpaceKind::Reflection,
        );
        let mut moved = DMatrix::zeros(m, k);
        procrustes::apply_into(
            &fit.rotation,
            false,
            reversed.matrix().as_slice(),
            m,
            k,
            moved.as_mut_slice(),
        );
        if (moved - p.matrix()).amax() < 1e-10 {
            return false;
        }
    }
    true
}
