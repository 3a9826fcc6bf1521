//! Orthogonal Procrustes kernel on raw column-major `m x k` slices.
//!
//! `fit` maximizes `tr(A^T g B)` over the group of the requested shape space
//! via the singular value decomposition of the cross product `B A^T`
//! (or `B L A^T` for the relabeled branch). The `m = 2` decomposition is in
//! closed form, `m = 3` uses a stack-allocated decomposition, larger `m`
//! falls back to a heap matrix. Nothing here allocates for `m <= 3`.

use nalgebra::{DMatrix, Matrix3};
use smallvec::SmallVec;

use super::ShapeSpaceKind;

/// Row-major `m x m` matrix, inline for `m <= 3`.
pub(crate) type SmallMat = SmallVec<[f64; 9]>;
type SmallVals = SmallVec<[f64; 3]>;

/// Singular values below this make the maximizer non-unique.
pub(crate) const RANK_TOL: f64 = 1e-9;
/// Ties between competing maximizers closer than this are flagged.
pub(crate) const TIE_TOL: f64 = 1e-9;

/// Optimal group element for aligning `b` to `a`.
#[derive(Clone, Debug)]
pub(crate) struct Fit {
    /// Row-major orthogonal `m x m` matrix.
    pub rotation: SmallMat,
    pub relabel: bool,
    pub unique: bool,
}

/// Great-circle distance between two unit vectors from their chord, which
/// stays accurate for nearby points where `acos` of the inner product does
/// not.
pub(crate) fn arc_from_chord(a: &[f64], b: &[f64]) -> f64 {
    let chord = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    2.0 * (0.5 * chord).min(1.0).asin()
}

/// Decomposition `M = U diag(s) V^T` with `s` descending and the first
/// nonzero entry of every column of `U` positive.
pub(crate) struct SmallSvd {
    pub u: SmallMat,
    pub s: SmallVals,
    pub vt: SmallMat,
}

/// Cross product `B A^T`, or `B L A^T` with `L` the reversal permutation.
///
/// The reversed branch sums mirrored landmark pairs together so that
/// swapping `a` and `b` yields the exact transpose.
pub(crate) fn cross(a: &[f64], b: &[f64], m: usize, k: usize, reversed: bool) -> SmallMat {
    let mut out: SmallMat = SmallVec::from_elem(0.0, m * m);
    for r in 0..m {
        for s in 0..m {
            let mut acc = 0.0;
            if reversed {
                for j in 0..k / 2 {
                    let jr = k - 1 - j;
                    acc += b[jr * m + r] * a[j * m + s] + b[j * m + r] * a[jr * m + s];
                }
                if k % 2 == 1 {
                    let mid = k / 2;
                    acc += b[mid * m + r] * a[mid * m + s];
                }
            } else {
                for j in 0..k {
                    acc += b[j * m + r] * a[j * m + s];
                }
            }
            out[r * m + s] = acc;
        }
    }
    out
}

fn rot2(angle: f64) -> [f64; 4] {
    let (s, c) = angle.sin_cos();
    [c, -s, s, c]
}

/// Closed-form decomposition of a row-major 2x2 matrix:
/// `M = R(phi) diag(sx, sy) R(theta)` with `sx >= |sy|`.
fn svd2(mat: &[f64]) -> SmallSvd {
    let (a, b, c, d) = (mat[0], mat[1], mat[2], mat[3]);
    let e = 0.5 * (a + d);
    let f = 0.5 * (a - d);
    let g = 0.5 * (c + b);
    let h = 0.5 * (c - b);
    let q = e.hypot(h);
    let r = f.hypot(g);
    let sx = q + r;
    let sy = q - r;
    let a1 = g.atan2(f);
    let a2 = h.atan2(e);
    let theta = 0.5 * (a2 - a1);
    let phi = 0.5 * (a2 + a1);
    let mut u = rot2(phi);
    if sy < 0.0 {
        u[1] = -u[1];
        u[3] = -u[3];
    }
    let vt = rot2(theta);
    SmallSvd {
        u: SmallVec::from_slice(&u),
        s: SmallVec::from_slice(&[sx, sy.abs()]),
        vt: SmallVec::from_slice(&vt),
    }
}

fn svd3(mat: &[f64]) -> SmallSvd {
    let m = Matrix3::from_row_slice(mat);
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut out = SmallSvd {
        u: SmallVec::from_elem(0.0, 9),
        s: SmallVec::from_slice(svd.singular_values.as_slice()),
        vt: SmallVec::from_elem(0.0, 9),
    };
    for i in 0..3 {
        for j in 0..3 {
            out.u[i * 3 + j] = u[(i, j)];
            out.vt[i * 3 + j] = vt[(i, j)];
        }
    }
    sort_descending(&mut out, 3);
    out
}

fn svd_dyn(mat: &[f64], m: usize) -> SmallSvd {
    let dm = DMatrix::from_row_slice(m, m, mat);
    let svd = dm.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut out = SmallSvd {
        u: SmallVec::from_elem(0.0, m * m),
        s: SmallVec::from_slice(svd.singular_values.as_slice()),
        vt: SmallVec::from_elem(0.0, m * m),
    };
    for i in 0..m {
        for j in 0..m {
            out.u[i * m + j] = u[(i, j)];
            out.vt[i * m + j] = vt[(i, j)];
        }
    }
    sort_descending(&mut out, m);
    out
}

fn sort_descending(svd: &mut SmallSvd, m: usize) {
    let mut order: SmallVec<[usize; 3]> = (0..m).collect();
    order.sort_by(|&i, &j| svd.s[j].total_cmp(&svd.s[i]));
    if order.iter().enumerate().all(|(i, &o)| i == o) {
        return;
    }
    let (u, s, vt) = (svd.u.clone(), svd.s.clone(), svd.vt.clone());
    for (new, &old) in order.iter().enumerate() {
        svd.s[new] = s[old];
        for i in 0..m {
            svd.u[i * m + new] = u[i * m + old];
            svd.vt[new * m + i] = vt[old * m + i];
        }
    }
}

/// Flips singular vector pairs so the first nonzero entry of each left
/// singular vector is positive.
fn normalize_signs(svd: &mut SmallSvd, m: usize) {
    for col in 0..m {
        let lead = (0..m)
            .map(|i| svd.u[i * m + col])
            .find(|x| x.abs() > 1e-14)
            .unwrap_or(0.0);
        if lead < 0.0 {
            for i in 0..m {
                svd.u[i * m + col] = -svd.u[i * m + col];
                svd.vt[col * m + i] = -svd.vt[col * m + i];
            }
        }
    }
}

pub(crate) fn svd_small(mat: &[f64], m: usize) -> SmallSvd {
    let mut svd = match m {
        2 => svd2(mat),
        3 => svd3(mat),
        _ => svd_dyn(mat, m),
    };
    normalize_signs(&mut svd, m);
    svd
}

fn det_small(mat: &[f64], m: usize) -> f64 {
    match m {
        2 => mat[0] * mat[3] - mat[1] * mat[2],
        3 => Matrix3::from_row_slice(mat).determinant(),
        _ => DMatrix::from_row_slice(m, m, mat).determinant(),
    }
}

struct Solved {
    rotation: SmallMat,
    trace: f64,
    unique: bool,
}

/// Planar case without a decomposition: over rotations
/// `tr(R M) = cos t (a + d) + sin t (b - c)`, over reflections
/// `cos t (a - d) + sin t (b + c)`, so each maximum is a hypotenuse.
/// `q` and `r` are the halves of those, i.e. `M` has singular values
/// `q + r` and `|q - r|`.
fn solve2(mat: &[f64], rotation_only: bool) -> Solved {
    let (a, b, c, d) = (mat[0], mat[1], mat[2], mat[3]);
    let (rc, rs) = (a + d, b - c);
    let (fc, fs) = (a - d, b + c);
    // Entries are bounded by 1 for pre-shapes, so plain square roots are safe.
    let q = 0.5 * (rc * rc + rs * rs).sqrt();
    let r = 0.5 * (fc * fc + fs * fs).sqrt();
    let unit = |x: f64, y: f64, n: f64| if n > 0.0 { (x / (2.0 * n), y / (2.0 * n)) } else { (1.0, 0.0) };
    if rotation_only || q >= r {
        let (cs, sn) = unit(rc, rs, q);
        let unique = if rotation_only {
            q + r >= RANK_TOL && !(q < r && 2.0 * q < RANK_TOL)
        } else {
            q - r >= RANK_TOL
        };
        Solved {
            rotation: SmallVec::from_slice(&[cs, -sn, sn, cs]),
            trace: 2.0 * q,
            unique,
        }
    } else {
        let (cs, sn) = unit(fc, fs, r);
        Solved {
            rotation: SmallVec::from_slice(&[cs, sn, sn, -cs]),
            trace: 2.0 * r,
            unique: r - q >= RANK_TOL,
        }
    }
}

/// Maximizer of `tr(R M)` over `O(m)`, or over `SO(m)` when `rotation_only`.
fn solve(mat: &[f64], m: usize, rotation_only: bool) -> Solved {
    if m == 2 {
        return solve2(mat, rotation_only);
    }
    let svd = svd_small(mat, m);
    // R = V D U^T
    let mut rotation: SmallMat = SmallVec::from_elem(0.0, m * m);
    let fill = |signs: &[f64], rotation: &mut SmallMat| {
        for i in 0..m {
            for j in 0..m {
                let mut acc = 0.0;
                for l in 0..m {
                    acc += svd.vt[l * m + i] * signs[l] * svd.u[j * m + l];
                }
                rotation[i * m + j] = acc;
            }
        }
    };
    let mut signs: SmallVals = SmallVec::from_elem(1.0, m);
    fill(&signs, &mut rotation);
    let mut corrected = false;
    if rotation_only && det_small(&rotation, m) < 0.0 {
        signs[m - 1] = -1.0;
        fill(&signs, &mut rotation);
        corrected = true;
    }
    let trace: f64 = svd.s.iter().zip(&signs).map(|(s, d)| s * d).sum();
    let smallest = svd.s[m - 1];
    // Over SO(m) one vanishing singular value still pins the maximizer down.
    let rank_floor = if rotation_only { svd.s[m - 2] } else { smallest };
    let mut unique = rank_floor >= RANK_TOL;
    if corrected && svd.s[m - 2] - smallest < RANK_TOL {
        unique = false;
    }
    Solved {
        rotation,
        trace,
        unique,
    }
}

/// Optimal alignment of `b` to `a` in the quotient of the given kind.
pub(crate) fn fit(a: &[f64], b: &[f64], m: usize, k: usize, kind: ShapeSpaceKind) -> Fit {
    match kind {
        ShapeSpaceKind::Rotation | ShapeSpaceKind::Reflection => {
            let solved = solve(&cross(a, b, m, k, false), m, kind == ShapeSpaceKind::Rotation);
            Fit {
                rotation: solved.rotation,
                relabel: false,
                unique: solved.unique,
            }
        }
        ShapeSpaceKind::ReverseLabelingReflection => {
            let plain = solve(&cross(a, b, m, k, false), m, false);
            let flipped = solve(&cross(a, b, m, k, true), m, false);
            // acos has slope at least 1, so distances can only be within
            // TIE_TOL when the traces are.
            let tie = (plain.trace - flipped.trace).abs() < TIE_TOL && {
                let d_plain = plain.trace.clamp(-1.0, 1.0).acos();
                let d_flipped = flipped.trace.clamp(-1.0, 1.0).acos();
                (d_plain - d_flipped).abs() < TIE_TOL
            };
            let (best, relabel) = if flipped.trace > plain.trace {
                (flipped, true)
            } else {
                (plain, false)
            };
            Fit {
                rotation: best.rotation,
                relabel,
                unique: best.unique && !tie,
            }
        }
    }
}

/// Writes `R B` (or `R B L`) into `out`.
pub(crate) fn apply_into(
    rotation: &[f64],
    relabel: bool,
    b: &[f64],
    m: usize,
    k: usize,
    out: &mut [f64],
) {
    for j in 0..k {
        let src = if relabel { k - 1 - j } else { j };
        let col = &b[src * m..src * m + m];
        for r in 0..m {
            let mut acc = 0.0;
            for s in 0..m {
                acc += rotation[r * m + s] * col[s];
            }
            out[j * m + r] = acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn reconstruct(svd: &SmallSvd, m: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                out[i * m + j] = (0..m)
                    .map(|l| svd.u[i * m + l] * svd.s[l] * svd.vt[l * m + j])
                    .sum();
            }
        }
        out
    }

    fn is_orthogonal(mat: &[f64], m: usize) -> bool {
        (0..m).all(|i| {
            (0..m).all(|j| {
                let dot: f64 = (0..m).map(|l| mat[l * m + i] * mat[l * m + j]).sum();
                (dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12
            })
        })
    }

    #[test]
    fn small_svd_reconstructs_and_matches_nalgebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for m in 2..=4 {
            for _ in 0..500 {
                let mat: Vec<f64> = (0..m * m).map(|_| rng.sample(StandardNormal)).collect();
                let svd = svd_small(&mat, m);
                let back = reconstruct(&svd, m);
                for (x, y) in back.iter().zip(&mat) {
                    assert!((x - y).abs() < 1e-12, "m = {m}");
                }
                assert!(is_orthogonal(&svd.u, m) && is_orthogonal(&svd.vt, m));
                let reference = DMatrix::from_row_slice(m, m, &mat).singular_values();
                let mut expected: Vec<f64> = reference.iter().copied().collect();
                expected.sort_by(|a, b| b.total_cmp(a));
                for (s, e) in svd.s.iter().zip(&expected) {
                    assert!((s - e).abs() < 1e-12);
                }
                assert!(svd.s.windows(2).all(|w| w[0] >= w[1]));
            }
        }
    }

    #[test]
    fn svd2_handles_degenerate_inputs() {
        for mat in [[0.0; 4], [1.0, 0.0, 0.0, 0.0], [1.0, 1.0, 1.0, 1.0], [0.0, -1.0, 1.0, 0.0]] {
            let svd = svd_small(&mat, 2);
            let back = reconstruct(&svd, 2);
            for (x, y) in back.iter().zip(&mat) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn reversed_cross_product_is_transpose_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for k in [4, 5] {
            let a: Vec<f64> = (0..2 * k).map(|_| rng.sample(StandardNormal)).collect();
            let b: Vec<f64> = (0..2 * k).map(|_| rng.sample(StandardNormal)).collect();
            let ab = cross(&a, &b, 2, k, true);
            let ba = cross(&b, &a, 2, k, true);
            assert_eq!(ab[1], ba[2]);
            assert_eq!(ab[2], ba[1]);
            assert_eq!(ab[0], ba[0]);
        }
    }

    #[test]
    fn rotation_fit_has_unit_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for m in 2..=3 {
            for _ in 0..200 {
                let k = 6;
                let a: Vec<f64> = (0..m * k).map(|_| rng.sample(StandardNormal)).collect();
                let b: Vec<f64> = (0..m * k).map(|_| rng.sample(StandardNormal)).collect();
                let f = fit(&a, &b, m, k, ShapeSpaceKind::Rotation);
                assert!((det_small(&f.rotation, m) - 1.0).abs() < 1e-12);
                assert!(is_orthogonal(&f.rotation, m));
                let r = fit(&a, &b, m, k, ShapeSpaceKind::Reflection);
                let trace = |g: &Fit| {
                    let mut out = vec![0.0; m * k];
                    apply_into(&g.rotation, g.relabel, &b, m, k, &mut out);
                    out.iter().zip(&a).map(|(x, y)| x * y).sum::<f64>()
                };
                assert!(trace(&r) >= trace(&f) - 1e-12);
            }
        }
    }
}
