//! Complex-number formulas for planar shapes and the Hopf chart of
//! triangle shape space.
//!
//! A planar configuration is read as the complex row vector
//! `z_j = x_j + i y_j`. Rotation is multiplication by a unit complex number,
//! reflection is conjugation, so the quotient distances reduce to moduli of
//! complex inner products.

use nalgebra::Complex;

use super::ShapeSpaceKind;
use crate::error::{Result, ShapeError};
use crate::geometry::{helmertize, PreShape};

type C64 = Complex<f64>;

/// Complex row vector of a planar pre-shape.
pub fn to_complex(p: &PreShape) -> Result<Vec<C64>> {
    if p.dim() != 2 {
        return Err(ShapeError::InvalidArgument(format!(
            "complex representation needs planar data, got m = {}",
            p.dim()
        )));
    }
    Ok(p.matrix()
        .column_iter()
        .map(|c| C64::new(c[0], c[1]))
        .collect())
}

fn bilinear(z: &[C64], w: &[C64]) -> C64 {
    z.iter().zip(w).map(|(a, b)| a * b).sum()
}

fn hermitian(z: &[C64], w: &[C64]) -> C64 {
    z.iter().zip(w).map(|(a, b)| a * b.conj()).sum()
}

fn arccos(x: f64) -> f64 {
    x.clamp(-1.0, 1.0).acos()
}

/// Quotient distance of two planar pre-shapes computed from complex inner
/// products, independently of the SVD route.
pub fn planar_distance(a: &PreShape, b: &PreShape, kind: ShapeSpaceKind) -> Result<f64> {
    let z = to_complex(a)?;
    let w = to_complex(b)?;
    let rotation = arccos(hermitian(&z, &w).norm());
    let reflection = arccos(bilinear(&z, &w).norm());
    Ok(match kind {
        ShapeSpaceKind::Rotation => rotation,
        ShapeSpaceKind::Reflection => rotation.min(reflection),
        ShapeSpaceKind::ReverseLabelingReflection => {
            let zr: Vec<C64> = z.iter().rev().copied().collect();
            let rotation_r = arccos(hermitian(&zr, &w).norm());
            let reflection_r = arccos(bilinear(&zr, &w).norm());
            rotation.min(reflection).min(rotation_r).min(reflection_r)
        }
    })
}

/// The Hopf map `(z1, z2) -> (2 Re(z1 conj z2), 2 Im(z1 conj z2), |z1|^2 - |z2|^2)`
/// from the unit 3-sphere in `C^2` to the unit 2-sphere.
pub fn hopf(w: [C64; 2]) -> Result<[f64; 3]> {
    let norm = (w[0].norm_sqr() + w[1].norm_sqr()).sqrt();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(ShapeError::InvalidArgument(format!(
            "Hopf map needs a unit vector, norm is {norm}"
        )));
    }
    let prod = w[0] * w[1].conj();
    Ok([
        2.0 * prod.re,
        2.0 * prod.im,
        w[0].norm_sqr() - w[1].norm_sqr(),
    ])
}

/// Hopf coordinates of a planar triangle: Helmertize, read the two columns
/// as complex numbers and apply [`hopf`].
pub fn hopf_of_preshape(p: &PreShape) -> Result<[f64; 3]> {
    if p.dim() != 2 || p.landmarks() != 3 {
        return Err(ShapeError::InvalidArgument(format!(
            "Hopf chart needs planar triangles, got m = {}, k = {}",
            p.dim(),
            p.landmarks()
        )));
    }
    let h = helmertize(&p.to_configuration());
    hopf([C64::new(h[(0, 0)], h[(1, 0)]), C64::new(h[(0, 1)], h[(1, 1)])])
}

/// Canonical representative of a Hopf point under the finite part of the
/// quotient. Reflection flips the second coordinate, so `RΣ_2^3` is the
/// hemisphere `y >= 0`; reverse labeling adds the half-turn about
/// `(sqrt3, 0, -1) / 2`, and together with the reflection it generates the
/// mirror in the plane through that axis and `e_y`, so `RRΣ_2^3` is the
/// quarter sphere that additionally has `x/2 + sqrt3 z/2 >= 0`.
pub fn hopf_fold(x: [f64; 3], kind: ShapeSpaceKind) -> [f64; 3] {
    let mut v = x;
    if kind.allows_reflection() {
        v[1] = v[1].abs();
    }
    if kind.allows_relabel() {
        let normal = [0.5, 0.0, 0.5 * 3f64.sqrt()];
        let side: f64 = (0..3).map(|i| normal[i] * v[i]).sum();
        if side < 0.0 {
            for i in 0..3 {
                v[i] -= 2.0 * side * normal[i];
            }
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{to_preshape, Configuration};
    use crate::shape_spaces::{reverse_label, shape_distance};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn random_preshape(rng: &mut ChaCha8Rng, k: usize) -> PreShape {
        let m = DMatrix::from_fn(2, k, |_, _| rng.sample(StandardNormal));
        to_preshape(&Configuration::new(m).unwrap()).unwrap()
    }

    #[test]
    fn hopf_formula_cases() {
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        assert_eq!(hopf([one, zero]).unwrap(), [0.0, 0.0, 1.0]);
        assert_eq!(hopf([zero, one]).unwrap(), [0.0, 0.0, -1.0]);
        let s = C64::new(1.0 / 2f64.sqrt(), 0.0);
        let x = hopf([s, s]).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(x[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(x[2], 0.0, epsilon = 1e-15);
        assert!(hopf([one, one]).is_err());
    }

    #[test]
    fn hopf_is_phase_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..1000 {
            let mut w = [
                C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)),
                C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)),
            ];
            let n = (w[0].norm_sqr() + w[1].norm_sqr()).sqrt();
            w[0] /= n;
            w[1] /= n;
            let phase = C64::from_polar(1.0, rng.random_range(0.0..2.0 * PI));
            let x = hopf(w).unwrap();
            let y = hopf([w[0] * phase, w[1] * phase]).unwrap();
            for i in 0..3 {
                assert_abs_diff_eq!(x[i], y[i], epsilon = 1e-12);
            }
            assert_abs_diff_eq!(x.iter().map(|v| v * v).sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    /// Reversing the labels of a triangle acts on Hopf coordinates as the
    /// half-turn `(1/2) [[1, 0, -sqrt3], [0, -2, 0], [-sqrt3, 0, -1]]`.
    #[test]
    fn reverse_labeling_is_a_half_turn_in_hopf_chart() {
        let s3 = 3f64.sqrt();
        let map = [[0.5, 0.0, -0.5 * s3], [0.0, -1.0, 0.0], [-0.5 * s3, 0.0, -0.5]];
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..1000 {
            let p = random_preshape(&mut rng, 3);
            let x = hopf_of_preshape(&p).unwrap();
            let y = hopf_of_preshape(&reverse_label(&p)).unwrap();
            for i in 0..3 {
                let mapped: f64 = (0..3).map(|j| map[i][j] * x[j]).sum();
                assert_abs_diff_eq!(y[i], mapped, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn folding_identifies_group_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        for _ in 0..500 {
            let p = random_preshape(&mut rng, 3);
            let mirrored = PreShape::new(DMatrix::from_fn(2, 3, |r, c| {
                if r == 1 { -p.matrix()[(r, c)] } else { p.matrix()[(r, c)] }
            }))
            .unwrap();
            let x = hopf_of_preshape(&p).unwrap();
            let rr = hopf_fold(x, ShapeSpaceKind::ReverseLabelingReflection);
            assert!(rr[1] >= 0.0 && 0.5 * rr[0] + 0.5 * 3f64.sqrt() * rr[2] >= -1e-15);
            for image in [&mirrored, &reverse_label(&p), &reverse_label(&mirrored)] {
                let y = hopf_of_preshape(image).unwrap();
                let folded = hopf_fold(y, ShapeSpaceKind::ReverseLabelingReflection);
                for i in 0..3 {
                    assert_abs_diff_eq!(folded[i], rr[i], epsilon = 1e-12);
                }
            }
            let r = hopf_fold(hopf_of_preshape(&mirrored).unwrap(), ShapeSpaceKind::Reflection);
            assert_abs_diff_eq!(r[1], hopf_fold(x, ShapeSpaceKind::Reflection)[1], epsilon = 1e-12);
            assert_eq!(hopf_fold(x, ShapeSpaceKind::Rotation), x);
        }
    }

    #[test]
    fn complex_path_matches_svd_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for k in 3..=7 {
            for _ in 0..200 {
                let a = random_preshape(&mut rng, k);
                let b = random_preshape(&mut rng, k);
                for kind in ShapeSpaceKind::ALL {
                    let svd = shape_distance(&a, &b, kind);
                    let cplx = planar_distance(&a, &b, kind).unwrap();
                    assert_abs_diff_eq!(svd, cplx, epsilon = 1e-9);
                }
            }
        }
    }

    /// Two collinear triangles, one anti-palindromic and one palindromic,
    /// are orthogonal to each other in every branch of the quotient, so the
    /// reverse-labeling reflection distance reaches pi/2.
    #[test]
    fn collinear_triangles_reach_quarter_turn() {
        let s2 = 1.0 / 2f64.sqrt();
        let s6 = 1.0 / 6f64.sqrt();
        let a = PreShape::new(DMatrix::from_row_slice(2, 3, &[-s2, 0.0, s2, 0.0, 0.0, 0.0])).unwrap();
        let b = PreShape::new(DMatrix::from_row_slice(
            2,
            3,
            &[s6, -2.0 * s6, s6, 0.0, 0.0, 0.0],
        ))
        .unwrap();
        let d = planar_distance(&a, &b, ShapeSpaceKind::ReverseLabelingReflection).unwrap();
        assert_abs_diff_eq!(d, FRAC_PI_2, epsilon = 1e-12);
        assert_abs_diff_eq!(
            shape_distance(&a, &b, ShapeSpaceKind::ReverseLabelingReflection),
            FRAC_PI_2,
            epsilon = 1e-12
        );
    }

    #[test]
    fn rejects_non_planar() {
        let m = DMatrix::from_fn(3, 5, |r, c| ((r * 5 + c) as f64).sin());
        let p = to_preshape(&Configuration::new(m).unwrap()).unwrap();
        assert!(planar_distance(&p, &p, ShapeSpaceKind::Rotation).is_err());
        assert!(hopf_of_preshape(&p).is_err());
    }
}
