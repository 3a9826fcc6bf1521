//! Landmark configurations and the intrinsic geometry of the centered
//! pre-shape sphere.
//!
//! A configuration is an `m x k` matrix whose columns are the `k` landmarks in
//! `R^m`. Centering removes translation, dividing by the Frobenius norm removes
//! scale; the result lives on the unit sphere inside the linear space of
//! centered configurations. All geodesic operations here are the great-circle
//! formulas of that sphere.

use nalgebra::DMatrix;

use crate::error::{Result, ShapeError};

/// Tolerance on the pre-shape invariants (centering and unit norm).
pub const PRESHAPE_TOL: f64 = 1e-12;
/// Relative size below which a centered configuration counts as a single point.
pub const DEGENERACY_TOL: f64 = 1e-12;
/// Distance from the antipode below which the logarithm is refused.
pub const ANTIPODAL_TOL: f64 = 1e-8;

const TANGENT_TOL: f64 = 1e-10;

/// A raw `m x k` landmark configuration, `2 <= m < k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Configuration {
    entries: DMatrix<f64>,
}

impl Configuration {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let (m, k) = entries.shape();
        if m < 2 || k <= m {
            return Err(ShapeError::InvalidArgument(format!(
                "configuration must satisfy 2 <= m < k, got m = {m}, k = {k}"
            )));
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(ShapeError::InvalidArgument(
                "configuration has non-finite entries".into(),
            ));
        }
        Ok(Self { entries })
    }

    /// Builds a configuration from a list of landmarks, each of length `m`.
    pub fn from_landmarks(landmarks: &[Vec<f64>]) -> Result<Self> {
        let k = landmarks.len();
        let m = landmarks.first().map_or(0, Vec::len);
        if let Some(bad) = landmarks.iter().find(|l| l.len() != m) {
            return Err(ShapeError::DimensionMismatch {
                expected: m,
                found: bad.len(),
            });
        }
        let entries = DMatrix::from_fn(m, k, |r, c| landmarks[c][r]);
        Self::new(entries)
    }

    /// Ambient dimension `m`.
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Number of landmarks `k`.
    pub fn landmarks(&self) -> usize {
        self.entries.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn landmark(&self, j: usize) -> Vec<f64> {
        self.entries.column(j).iter().copied().collect()
    }

    pub fn to_landmarks(&self) -> Vec<Vec<f64>> {
        (0..self.landmarks()).map(|j| self.landmark(j)).collect()
    }
}

/// A point of the centered pre-shape sphere: rows sum to zero and the
/// Frobenius norm is one.
#[derive(Clone, Debug, PartialEq)]
pub struct PreShape {
    entries: DMatrix<f64>,
}

impl PreShape {
    /// Validates an `m x k` matrix against the pre-shape invariants.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let (m, k) = entries.shape();
        if m < 2 || k <= m {
            return Err(ShapeError::InvalidArgument(format!(
                "pre-shape must satisfy 2 <= m < k, got m = {m}, k = {k}"
            )));
        }
        let norm = entries.norm();
        if (norm - 1.0).abs() > PRESHAPE_TOL {
            return Err(ShapeError::InvalidArgument(format!(
                "pre-shape must have unit norm, found {norm}"
            )));
        }
        let worst = entries
            .row_iter()
            .map(|r| r.sum().abs())
            .fold(0.0, f64::max);
        if worst > PRESHAPE_TOL {
            return Err(ShapeError::InvalidArgument(format!(
                "pre-shape must be centered, row sum {worst:e}"
            )));
        }
        Ok(Self { entries })
    }

    /// Re-centers and re-normalizes a matrix that is a pre-shape up to
    /// rounding.
    pub(crate) fn project(mut entries: DMatrix<f64>) -> Self {
        center_in_place(&mut entries);
        let norm = entries.norm();
        entries /= norm;
        Self { entries }
    }

    pub(crate) fn from_raw(entries: DMatrix<f64>) -> Self {
        Self { entries }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn landmarks(&self) -> usize {
        self.entries.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    /// Frobenius inner product `tr(A^T B)`.
    pub fn inner(&self, other: &PreShape) -> f64 {
        self.entries.dot(&other.entries)
    }

    /// The configuration with the same entries (already centered and scaled).
    pub fn to_configuration(&self) -> Configuration {
        Configuration {
            entries: self.entries.clone(),
        }
    }

    /// Rescales and translates back to a configuration with the given
    /// centered size and centroid.
    pub fn to_configuration_with(&self, size: f64, centroid: &[f64]) -> Configuration {
        let mut entries = &self.entries * size;
        for mut col in entries.column_iter_mut() {
            for (x, c) in col.iter_mut().zip(centroid) {
                *x += c;
            }
        }
        Configuration { entries }
    }
}

/// A tangent vector to the pre-shape sphere, kept inside the centered
/// subspace.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    base: PreShape,
    entries: DMatrix<f64>,
}

impl TangentVector {
    pub fn new(base: PreShape, entries: DMatrix<f64>) -> Result<Self> {
        if entries.shape() != base.entries.shape() {
            return Err(ShapeError::DimensionMismatch {
                expected: base.entries.len(),
                found: entries.len(),
            });
        }
        let scale = entries.norm().max(1.0);
        let normal = base.entries.dot(&entries).abs();
        if normal > TANGENT_TOL * scale {
            return Err(ShapeError::InvalidArgument(format!(
                "vector is not tangent to the sphere (normal component {normal:e})"
            )));
        }
        let worst = entries
            .row_iter()
            .map(|r| r.sum().abs())
            .fold(0.0, f64::max);
        if worst > TANGENT_TOL * scale {
            return Err(ShapeError::InvalidArgument(format!(
                "vector leaves the centered subspace (row sum {worst:e})"
            )));
        }
        Ok(Self { base, entries })
    }

    /// Projects an arbitrary matrix onto the tangent space at `base`.
    pub fn project(base: PreShape, mut entries: DMatrix<f64>) -> Self {
        center_in_place(&mut entries);
        let normal = base.entries.dot(&entries);
        entries -= &base.entries * normal;
        Self { base, entries }
    }

    pub(crate) fn from_raw(base: PreShape, entries: DMatrix<f64>) -> Self {
        Self { base, entries }
    }

    pub fn zero(base: PreShape) -> Self {
        let entries = DMatrix::zeros(base.dim(), base.landmarks());
        Self { base, entries }
    }

    pub fn base(&self) -> &PreShape {
        &self.base
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn norm(&self) -> f64 {
        self.entries.norm()
    }

    pub fn inner(&self, other: &TangentVector) -> f64 {
        self.entries.dot(&other.entries)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            base: self.base.clone(),
            entries: &self.entries * factor,
        }
    }
}

fn center_in_place(entries: &mut DMatrix<f64>) {
    let k = entries.ncols() as f64;
    for mut row in entries.row_iter_mut() {
        let mean = row.sum() / k;
        row.add_scalar_mut(-mean);
    }
}

/// Subtracts the mean landmark: `C (I_k - 1 1^T / k)`.
pub fn center(c: &Configuration) -> Configuration {
    let mut entries = c.entries.clone();
    center_in_place(&mut entries);
    Configuration { entries }
}

/// Mean landmark of a configuration.
pub fn centroid(c: &Configuration) -> Vec<f64> {
    let k = c.landmarks() as f64;
    c.entries.row_iter().map(|r| r.sum() / k).collect()
}

/// The `k x (k-1)` sub-Helmert matrix. Column `j` (1-based) has `j` entries
/// `1/sqrt(j(j+1))` followed by `-j/sqrt(j(j+1))` and zeros.
pub fn helmert_submatrix(k: usize) -> Result<DMatrix<f64>> {
    if k < 2 {
        return Err(ShapeError::InvalidArgument(format!(
            "Helmert submatrix needs k >= 2, got {k}"
        )));
    }
    let mut h = DMatrix::zeros(k, k - 1);
    for col in 0..k - 1 {
        let j = (col + 1) as f64;
        let scale = (j * (j + 1.0)).sqrt();
        for row in 0..=col {
            h[(row, col)] = 1.0 / scale;
        }
        h[(col + 1, col)] = -j / scale;
    }
    Ok(h)
}

/// Removes translation by right-multiplying with the sub-Helmert matrix.
pub fn helmertize(c: &Configuration) -> DMatrix<f64> {
    let h = helmert_submatrix(c.landmarks()).expect("configurations have k >= 3");
    &c.entries * h
}

/// Centers and scales a configuration onto the pre-shape sphere.
pub fn to_preshape(c: &Configuration) -> Result<PreShape> {
    let raw_norm = c.entries.norm();
    let mut entries = c.entries.clone();
    center_in_place(&mut entries);
    let norm = entries.norm();
    if raw_norm == 0.0 || norm < DEGENERACY_TOL * raw_norm {
        return Err(ShapeError::DegenerateConfiguration);
    }
    entries /= norm;
    Ok(PreShape { entries })
}

/// Great-circle distance `arccos tr(A^T B)` in `[0, pi]`.
pub fn sphere_distance(a: &PreShape, b: &PreShape) -> f64 {
    let chord = (&a.entries - &b.entries).norm();
    2.0 * (0.5 * chord).min(1.0).asin()
}

/// Riemannian exponential of the sphere at the base point of `v`.
pub fn sphere_exp(v: &TangentVector) -> PreShape {
    let theta = v.norm();
    if theta == 0.0 {
        return v.base.clone();
    }
    let entries = &v.base.entries * theta.cos() + &v.entries * (theta.sin() / theta);
    PreShape::project(entries)
}

/// Inverse of [`sphere_exp`]: the tangent vector at `p` pointing to `q` with
/// length equal to their distance.
pub fn sphere_log(p: &PreShape, q: &PreShape) -> Result<TangentVector> {
    let cos = p.inner(q).clamp(-1.0, 1.0);
    let mut entries = &q.entries - &p.entries * cos;
    let len = entries.norm();
    let theta = len.atan2(cos);
    if theta > std::f64::consts::PI - ANTIPODAL_TOL {
        return Err(ShapeError::AntipodalPoints { distance: theta });
    }
    if len == 0.0 {
        return Ok(TangentVector::zero(p.clone()));
    }
    entries *= theta / len;
    Ok(TangentVector {
        base: p.clone(),
        entries,
    })
}

/// Transports `v` (tangent at its base `p`) along the minimizing great
/// circle to `q`.
pub fn parallel_transport(q: &PreShape, v: &TangentVector) -> Result<TangentVector> {
    let entries = transport_raw(v.base.matrix(), q.matrix(), v.matrix())?;
    Ok(TangentVector {
        base: q.clone(),
        entries,
    })
}

/// Great-circle transport on raw matrices: `v + <v,u> ((cos t - 1) u - sin t p)`
/// with `u` the unit initial direction from `p` to `q`.
pub(crate) fn transport_raw(
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
    v: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let cos = p.dot(q).clamp(-1.0, 1.0);
    let mut dir = q - p * cos;
    let len = dir.norm();
    let theta = len.atan2(cos);
    if theta > std::f64::consts::PI - ANTIPODAL_TOL {
        return Err(ShapeError::AntipodalPoints { distance: theta });
    }
    // Below this the direction is roundoff noise and the correction is O(theta).
    if len < 1e-14 {
        return Ok(v.clone());
    }
    dir /= len;
    let along = v.dot(&dir);
    Ok(v + (&dir * (theta.cos() - 1.0) - p * theta.sin()) * along)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::PI;

    fn random_matrix(rng: &mut ChaCha8Rng, m: usize, k: usize) -> DMatrix<f64> {
        DMatrix::from_fn(m, k, |_, _| rng.sample(StandardNormal))
    }

    fn random_preshape(rng: &mut ChaCha8Rng, m: usize, k: usize) -> PreShape {
        to_preshape(&Configuration::new(random_matrix(rng, m, k)).unwrap()).unwrap()
    }

    fn random_tangent(rng: &mut ChaCha8Rng, p: &PreShape, len: f64) -> TangentVector {
        let v = TangentVector::project(p.clone(), random_matrix(rng, p.dim(), p.landmarks()));
        let n = v.norm();
        v.scaled(len / n)
    }

    fn collinear() -> Configuration {
        Configuration::from_landmarks(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0]]).unwrap()
    }

    #[test]
    fn config_rejects_bad_dimensions() {
        assert!(Configuration::new(DMatrix::zeros(2, 2)).is_err());
        assert!(Configuration::new(DMatrix::zeros(1, 5)).is_err());
        assert!(Configuration::new(DMatrix::zeros(3, 3)).is_err());
        assert!(Configuration::new(DMatrix::zeros(3, 4)).is_ok());
    }

    #[test]
    fn center_collinear_example() {
        let c = center(&collinear());
        let expected = DMatrix::from_row_slice(2, 3, &[-1.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_abs_diff_eq!(c.matrix(), &expected, epsilon = 1e-15);
        assert_eq!(center(&c), c);
    }

    #[test]
    fn center_zeroes_column_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let c = Configuration::new(random_matrix(&mut rng, 2, 5)).unwrap();
            let centered = center(&c);
            for row in centered.matrix().row_iter() {
                assert!(row.sum().abs() < 1e-14);
            }
            assert_abs_diff_eq!(center(&centered).matrix(), centered.matrix(), epsilon = 1e-15);
        }
    }

    #[test]
    fn helmert_small_cases() {
        let h2 = helmert_submatrix(2).unwrap();
        assert_abs_diff_eq!(h2[(0, 0)], 1.0 / 2f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(h2[(1, 0)], -1.0 / 2f64.sqrt(), epsilon = 1e-15);
        let h3 = helmert_submatrix(3).unwrap();
        let s6 = 6f64.sqrt();
        assert_abs_diff_eq!(h3[(0, 1)], 1.0 / s6, epsilon = 1e-15);
        assert_abs_diff_eq!(h3[(1, 1)], 1.0 / s6, epsilon = 1e-15);
        assert_abs_diff_eq!(h3[(2, 1)], -2.0 / s6, epsilon = 1e-15);
        assert!(helmert_submatrix(1).is_err());
        assert!(helmert_submatrix(0).is_err());
    }

    #[test]
    fn helmert_orthonormal_and_annihilates_ones() {
        for k in 2..=20 {
            let h = helmert_submatrix(k).unwrap();
            let gram = h.transpose() * &h;
            assert_abs_diff_eq!(gram, DMatrix::identity(k - 1, k - 1), epsilon = 1e-14);
            let ones = DMatrix::from_element(1, k, 1.0);
            assert!((ones * &h).amax() < 1e-14);
        }
    }

    #[test]
    fn helmertize_properties() {
        let single = Configuration::from_landmarks(&vec![vec![3.0, -1.0]; 4]).unwrap();
        assert!(helmertize(&single).amax() < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let c = Configuration::new(random_matrix(&mut rng, 2, 6)).unwrap();
            let centered = center(&c);
            let hc = helmertize(&c);
            assert_abs_diff_eq!(hc.norm(), centered.matrix().norm(), epsilon = 1e-12);
            let h = helmert_submatrix(6).unwrap();
            assert_abs_diff_eq!(&hc * h.transpose(), centered.matrix().clone(), epsilon = 1e-12);
        }
    }

    #[test]
    fn preshape_of_collinear() {
        let p = to_preshape(&collinear()).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let expected = DMatrix::from_row_slice(2, 3, &[-s, 0.0, s, 0.0, 0.0, 0.0]);
        assert_abs_diff_eq!(p.matrix(), &expected, epsilon = 1e-15);
        let again = to_preshape(&p.to_configuration()).unwrap();
        assert_abs_diff_eq!(again.matrix(), p.matrix(), epsilon = 1e-15);
        assert!(PreShape::new(p.matrix().clone()).is_ok());
    }

    #[test]
    fn preshape_rejects_single_point() {
        let c = Configuration::from_landmarks(&vec![vec![1.5, 2.5]; 5]).unwrap();
        assert!(matches!(to_preshape(&c), Err(ShapeError::DegenerateConfiguration)));
        let zero = Configuration::new(DMatrix::zeros(2, 4)).unwrap();
        assert!(matches!(to_preshape(&zero), Err(ShapeError::DegenerateConfiguration)));
    }

    #[test]
    fn sphere_distance_special_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_preshape(&mut rng, 2, 5);
        assert_eq!(sphere_distance(&a, &a), 0.0);
        let neg = PreShape::new(-a.matrix()).unwrap();
        assert_abs_diff_eq!(sphere_distance(&a, &neg), PI, epsilon = 1e-12);
        let v = random_tangent(&mut rng, &a, 1.0);
        let b = PreShape::new(v.matrix().clone()).unwrap();
        assert_abs_diff_eq!(sphere_distance(&a, &b), PI / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn sphere_distance_is_a_metric() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let a = random_preshape(&mut rng, 2, 5);
            let b = random_preshape(&mut rng, 2, 5);
            let c = random_preshape(&mut rng, 2, 5);
            assert_eq!(sphere_distance(&a, &b), sphere_distance(&b, &a));
            assert!(
                sphere_distance(&a, &c) <= sphere_distance(&a, &b) + sphere_distance(&b, &c) + 1e-12
            );
        }
    }

    #[test]
    fn exp_special_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_preshape(&mut rng, 3, 6);
        assert_eq!(sphere_exp(&TangentVector::zero(p.clone())), p);
        let v = random_tangent(&mut rng, &p, PI);
        let q = sphere_exp(&v);
        assert_abs_diff_eq!(q.matrix(), &(-p.matrix()), epsilon = 1e-12);
    }

    #[test]
    fn exp_is_geodesic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let p = random_preshape(&mut rng, 2, 5);
            let len = rng.random_range(0.0..3.1);
            let q = sphere_exp(&random_tangent(&mut rng, &p, len));
            assert!(PreShape::new(q.matrix().clone()).is_ok());
            assert_abs_diff_eq!(sphere_distance(&p, &q), len, epsilon = 1e-10);
        }
    }

    #[test]
    fn log_special_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_preshape(&mut rng, 2, 4);
        assert_eq!(sphere_log(&p, &p).unwrap().norm(), 0.0);
        let neg = PreShape::new(-p.matrix()).unwrap();
        assert!(matches!(
            sphere_log(&p, &neg),
            Err(ShapeError::AntipodalPoints { .. })
        ));
    }

    #[test]
    fn exp_log_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut done = 0;
        while done < 1000 {
            let p = random_preshape(&mut rng, 2, 5);
            let q = random_preshape(&mut rng, 2, 5);
            if sphere_distance(&p, &q) >= 3.0 {
                continue;
            }
            let v = sphere_log(&p, &q).unwrap();
            assert_abs_diff_eq!(v.norm(), sphere_distance(&p, &q), epsilon = 1e-12);
            assert!(TangentVector::new(p.clone(), v.matrix().clone()).is_ok());
            let back = sphere_exp(&v);
            assert!((back.matrix() - q.matrix()).amax() < 1e-10);
            done += 1;
        }
    }

    #[test]
    fn log_inverts_exp() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let p = random_preshape(&mut rng, 3, 7);
            let len = rng.random_range(0.0..3.0);
            let v = random_tangent(&mut rng, &p, len);
            let w = sphere_log(&p, &sphere_exp(&v)).unwrap();
            assert!((w.matrix() - v.matrix()).amax() < 1e-9);
        }
    }

    #[test]
    fn transport_identity_and_isometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..200 {
            let p = random_preshape(&mut rng, 2, 5);
            let q = random_preshape(&mut rng, 2, 5);
            let v = random_tangent(&mut rng, &p, 0.7);
            let w = random_tangent(&mut rng, &p, 1.3);

            let same = parallel_transport(&p, &v).unwrap();
            assert!((same.matrix() - v.matrix()).amax() < 1e-15);

            let tv = parallel_transport(&q, &v).unwrap();
            let tw = parallel_transport(&q, &w).unwrap();
            assert_abs_diff_eq!(tv.norm(), v.norm(), epsilon = 1e-12);
            assert_abs_diff_eq!(tv.inner(&tw), v.inner(&w), epsilon = 1e-12);
            assert!(TangentVector::new(q.clone(), tv.matrix().clone()).is_ok());

            let back = parallel_transport(&p, &tv).unwrap();
            assert!((back.matrix() - v.matrix()).amax() < 1e-10);
        }
    }

    #[test]
    fn transport_refuses_antipodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = random_preshape(&mut rng, 2, 4);
        let neg = PreShape::new(-p.matrix()).unwrap();
        let v = random_tangent(&mut rng, &p, 1.0);
        assert!(parallel_transport(&neg, &v).is_err());
    }

    #[test]
    fn tangent_vector_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = random_preshape(&mut rng, 2, 4);
        assert!(TangentVector::new(p.clone(), p.matrix().clone()).is_err());
        let uncentered = DMatrix::from_element(2, 4, 1.0);
        assert!(TangentVector::new(p.clone(), uncentered).is_err());
    }
}
